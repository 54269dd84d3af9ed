//! Channel concatenation for dense connectivity.

use crate::error::{Error, Result};
use crate::tensor::{tape, Element, Tensor};

/// Concatenate NCHW tensors along the channel dimension, preserving input
/// order. The backward pass slices the upstream gradient back apart.
pub fn concat_channels<E: Element>(inputs: &[Tensor<E>]) -> Result<Tensor<E>> {
    if inputs.is_empty() {
        return Err(Error::InvalidShape("concat of zero tensors".into()));
    }
    let first = inputs[0].shape();
    if first.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "concat_channels needs NCHW inputs, got {first:?}"
        )));
    }
    let (n, h, w) = (first[0], first[2], first[3]);
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let s = t.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(Error::InvalidShape(format!(
                "concat_channels batch/spatial mismatch: {first:?} vs {s:?}"
            )));
        }
        channels.push(s[1]);
    }
    let c_out: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = vec![E::ZERO; n * c_out * plane];
    for i in 0..n {
        let mut ch_off = 0usize;
        for (t, &c) in inputs.iter().zip(&channels) {
            let src = &t.data()[i * c * plane..(i + 1) * c * plane];
            let dst = &mut out[(i * c_out + ch_off) * plane..(i * c_out + ch_off + c) * plane];
            dst.copy_from_slice(src);
            ch_off += c;
        }
    }
    let out = Tensor::from_vec(vec![n, c_out, h, w], out)?;

    let refs: Vec<&Tensor<E>> = inputs.iter().collect();
    if tape::should_record(&refs) {
        let sources: Vec<(Tensor<E>, bool)> = inputs
            .iter()
            .map(|t| (t.clone(), tape::grad_source(t)))
            .collect();
        let channels = channels.clone();
        tape::record(&out, move |g| {
            let mut ch_off = 0usize;
            for ((t, wants), &c) in sources.iter().zip(&channels) {
                if *wants {
                    let mut dt = vec![E::ZERO; n * c * plane];
                    for i in 0..n {
                        let src =
                            &g[(i * c_out + ch_off) * plane..(i * c_out + ch_off + c) * plane];
                        dt[i * c * plane..(i + 1) * c * plane].copy_from_slice(src);
                    }
                    t.accumulate_grad(&dt);
                }
                ch_off += c;
            }
        });
    }
    Ok(out)
}
