//! Spatial pooling: windowed max / average and global average.

use crate::error::{Error, Result};
use crate::tensor::{tape, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PoolMode {
    Max,
    Avg,
    GlobalAvg,
}

/// Windowed pooling over an NCHW batch. Windows never pad: the output size
/// is floor((in - window)/stride) + 1 per axis. `GlobalAvg` reduces each
/// channel plane to 1x1 regardless of `window`/`stride`.
///
/// Max pooling breaks ties by the first window position in row-major scan
/// order, and its backward routes the gradient to that winner only.
pub fn pool2d<E: Element>(
    input: &Tensor<E>,
    mode: PoolMode,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor<E>> {
    let xs = input.shape();
    if xs.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "pool2d input must be NCHW, got {xs:?}"
        )));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (wh, ww) = if mode == PoolMode::GlobalAvg {
        (h, w)
    } else {
        window
    };
    let (sh, sw) = if mode == PoolMode::GlobalAvg {
        (1, 1)
    } else {
        stride
    };
    if wh == 0 || ww == 0 || sh == 0 || sw == 0 || wh > h || ww > w {
        return Err(Error::InvalidShape(format!(
            "pool window {wh}x{ww} stride {sh}x{sw} does not fit input {h}x{w}"
        )));
    }
    let oh = (h - wh) / sh + 1;
    let ow = (w - ww) / sw + 1;
    let planes = n * c;
    let mut out = vec![E::ZERO; planes * oh * ow];
    // Flat input index of each max winner, for the backward pass.
    let mut argmax: Vec<u32> = if mode == PoolMode::Max {
        vec![0; planes * oh * ow]
    } else {
        Vec::new()
    };

    let x = input.data();
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * sh, ox * sw);
                let o = (p * oh + oy) * ow + ox;
                match mode {
                    PoolMode::Max => {
                        let mut best = plane[y0 * w + x0];
                        let mut best_idx = y0 * w + x0;
                        for ky in 0..wh {
                            for kx in 0..ww {
                                let idx = (y0 + ky) * w + (x0 + kx);
                                if plane[idx] > best {
                                    best = plane[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out[o] = best;
                        argmax[o] = (p * h * w + best_idx) as u32;
                    }
                    PoolMode::Avg | PoolMode::GlobalAvg => {
                        let mut acc = E::ZERO;
                        for ky in 0..wh {
                            for kx in 0..ww {
                                acc += plane[(y0 + ky) * w + (x0 + kx)];
                            }
                        }
                        out[o] = acc / E::from_f64((wh * ww) as f64);
                    }
                }
            }
        }
    }

    let out = Tensor::from_vec(vec![n, c, oh, ow], out)?;
    if tape::should_record(&[input]) {
        let xin = input.clone();
        let in_len = n * c * h * w;
        tape::record(&out, move |g| {
            let mut dx = vec![E::ZERO; in_len];
            match mode {
                PoolMode::Max => {
                    for (o, &gv) in g.iter().enumerate() {
                        dx[argmax[o] as usize] += gv;
                    }
                }
                PoolMode::Avg | PoolMode::GlobalAvg => {
                    let inv = E::ONE / E::from_f64((wh * ww) as f64);
                    for p in 0..planes {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(p * oh + oy) * ow + ox] * inv;
                                let (y0, x0) = (oy * sh, ox * sw);
                                for ky in 0..wh {
                                    for kx in 0..ww {
                                        dx[p * h * w + (y0 + ky) * w + (x0 + kx)] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            xin.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Global average pooling: each channel plane collapses to 1x1.
pub fn global_avg_pool<E: Element>(input: &Tensor<E>) -> Result<Tensor<E>> {
    pool2d(input, PoolMode::GlobalAvg, (0, 0), (0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{tape, Fill};

    #[test]
    fn constant_plane_all_modes() {
        let x = Tensor::<f64>::filled(vec![1, 2, 4, 4], crate::tensor::Fill::Constant(3.5)).unwrap();
        for mode in [PoolMode::Max, PoolMode::Avg, PoolMode::GlobalAvg] {
            let y = pool2d(&x, mode, (2, 2), (2, 2)).unwrap();
            assert!(y.data().iter().all(|&v| (v - 3.5).abs() < 1e-12));
        }
    }

    #[test]
    fn max_of_quad_and_gradient_routing() {
        tape::begin::<f64>();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .requires_grad(true);
        let y = pool2d(&x, PoolMode::Max, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.data(), &[4.0]);
        tape::backward(&y.sum()).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn max_tie_breaks_to_first_index() {
        tape::begin::<f64>();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0])
            .unwrap()
            .requires_grad(true);
        let y = pool2d(&x, PoolMode::Max, (2, 2), (2, 2)).unwrap();
        tape::backward(&y.sum()).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_avg_shape_and_value() {
        let x = Tensor::<f32>::filled(
            vec![2, 3, 5, 7],
            Fill::Uniform {
                lo: 0.0,
                hi: 1.0,
                seed: 4,
            },
        )
        .unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        let plane = 5 * 7;
        for p in 0..6 {
            let mean: f32 =
                x.data()[p * plane..(p + 1) * plane].iter().sum::<f32>() / plane as f32;
            assert!((y.data()[p] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn window_larger_than_input_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]).unwrap();
        assert!(pool2d(&x, PoolMode::Max, (3, 3), (1, 1)).is_err());
    }
}
