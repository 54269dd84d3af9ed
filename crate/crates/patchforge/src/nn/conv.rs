//! 2-D convolution with dilation ("atrous" convolution).
//!
//! Implemented as cross-correlation: kernel taps sample the input at
//! offsets 0, γ, 2γ, ... so a dilation rate γ > 1 inserts γ-1 holes
//! between taps and enlarges the receptive extent to γ·(k-1)+1 per axis
//! without adding parameters. γ = 1 is ordinary convolution.
//!
//! The forward/backward passes lower to im2col plus the gemm kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, tape, Element, Tensor};

/// Per-side zero padding in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(v: usize) -> Self {
        Padding {
            top: v,
            bottom: v,
            left: v,
            right: v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (kh, kw)
    pub kernel: (usize, usize),
    /// (sh, sw)
    pub stride: (usize, usize),
    /// Dilation rate γ; taps are spaced γ pixels apart.
    pub dilation: usize,
    pub padding: Padding,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" zero padding for odd kernels:
    /// pad = γ·(k-1)/2 per side, so spatial size is preserved.
    pub fn same(in_channels: usize, out_channels: usize, k: usize, dilation: usize) -> Self {
        debug_assert!(k % 2 == 1);
        let pad = dilation * (k - 1) / 2;
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            dilation,
            padding: Padding::symmetric(pad),
            bias: true,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel.0 == 0
            || self.kernel.1 == 0
            || self.stride.0 == 0
            || self.stride.1 == 0
            || self.dilation == 0
        {
            return Err(Error::InvalidShape(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    /// Weight tensor shape: (out_channels, in_channels, kh, kw).
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn weight_fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    /// Output spatial size for an (h, w) input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (eh, ew) = receptive_extent(self);
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < eh || pw < ew {
            return Err(Error::InvalidShape(format!(
                "padded input {ph}x{pw} smaller than effective kernel {eh}x{ew}"
            )));
        }
        Ok(((ph - eh) / self.stride.0 + 1, (pw - ew) / self.stride.1 + 1))
    }
}

/// Effective kernel extent e = γ·(k-1)+1 per axis.
pub fn receptive_extent(spec: &ConvSpec) -> (usize, usize) {
    (
        spec.dilation * (spec.kernel.0 - 1) + 1,
        spec.dilation * (spec.kernel.1 - 1) + 1,
    )
}

/// Gather one sample's patches into a column matrix of shape
/// (in_channels·kh·kw) x (oh·ow). Out-of-bounds taps read as zero.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    x: &[E],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    col: &mut [E],
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let g = spec.dilation;
    let (pt, pl) = (spec.padding.top as isize, spec.padding.left as isize);
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);

    let mut row = 0usize;
    for ic in 0..c {
        let plane = &x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dest_base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * sh) as isize - pt + (ky * g) as isize;
                    let dest = &mut col[dest_base + oy * ow..dest_base + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dest.fill(E::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let off = (kx * g) as isize - pl;
                    if sw == 1 {
                        // Contiguous middle segment; zero the out-of-range ends.
                        let lo = (-off).clamp(0, ow as isize) as usize;
                        let hi = ((w as isize - off).clamp(0, ow as isize)) as usize;
                        dest[..lo].fill(E::ZERO);
                        if hi > lo {
                            let s = (off + lo as isize) as usize;
                            dest[lo..hi].copy_from_slice(&src_row[s..s + (hi - lo)]);
                        }
                        dest[hi.max(lo)..].fill(E::ZERO);
                    } else {
                        for (ox, d) in dest.iter_mut().enumerate() {
                            let ix = (ox * sw) as isize + off;
                            *d = if ix >= 0 && ix < w as isize {
                                src_row[ix as usize]
                            } else {
                                E::ZERO
                            };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a column-matrix gradient back onto one sample's input.
#[allow(clippy::too_many_arguments)]
fn col2im<E: Element>(
    col: &[E],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    dx: &mut [E],
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let g = spec.dilation;
    let (pt, pl) = (spec.padding.top as isize, spec.padding.left as isize);

    let mut row = 0usize;
    for ic in 0..c {
        let plane = &mut dx[ic * h * w..(ic + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let src_base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * sh) as isize - pt + (ky * g) as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[src_base + oy * ow..src_base + (oy + 1) * ow];
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let off = (kx * g) as isize - pl;
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * sw) as isize + off;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Dilated 2-D convolution over an NCHW batch.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    spec.validate()?;
    let xs = input.shape();
    if xs.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "conv2d input must be NCHW, got {xs:?}"
        )));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if c != spec.in_channels {
        return Err(Error::InvalidShape(format!(
            "conv2d input has {c} channels, spec expects {}",
            spec.in_channels
        )));
    }
    if weights.shape() != spec.weight_shape().as_slice() {
        return Err(Error::InvalidShape(format!(
            "conv2d weights {:?} do not match spec {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    match (spec.bias, bias) {
        (true, Some(b)) if b.shape() == [spec.out_channels] => {}
        (false, None) => {}
        _ => {
            return Err(Error::InvalidShape(format!(
                "conv2d bias {:?} inconsistent with spec bias={}",
                bias.map(|b| b.shape().to_vec()),
                spec.bias
            )))
        }
    }
    let (oh, ow) = spec.output_size(h, w)?;
    let oc = spec.out_channels;
    let ckk = c * spec.kernel.0 * spec.kernel.1;
    let opix = oh * ow;

    let mut out = vec![E::ZERO; n * oc * opix];
    let mut cols: Vec<Vec<E>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut col = vec![E::ZERO; ckk * opix];
        im2col(&input.data()[i * c * h * w..], c, h, w, spec, oh, ow, &mut col);
        gemm::gemm_nn(
            oc,
            ckk,
            opix,
            weights.data(),
            &col,
            &mut out[i * oc * opix..(i + 1) * oc * opix],
        );
        cols.push(col);
    }
    if let Some(b) = bias {
        for i in 0..n {
            for ocs in 0..oc {
                let bv = b.data()[ocs];
                for v in &mut out[(i * oc + ocs) * opix..(i * oc + ocs + 1) * opix] {
                    *v += bv;
                }
            }
        }
    }

    let out = Tensor::from_vec(vec![n, oc, oh, ow], out)?;
    let mut record_inputs = vec![input, weights];
    if let Some(b) = bias {
        record_inputs.push(b);
    }
    if tape::should_record(&record_inputs) {
        let px = tape::grad_source(input);
        let pw = tape::grad_source(weights);
        let pb = bias.map(|b| tape::grad_source(b)).unwrap_or(false);
        let x = input.clone();
        let wt = weights.clone();
        let b = bias.cloned();
        let spec = *spec;
        tape::record(&out, move |g| {
            if pw {
                let mut dw = vec![E::ZERO; oc * ckk];
                for (i, col) in cols.iter().enumerate() {
                    gemm::gemm_nt(oc, opix, ckk, &g[i * oc * opix..(i + 1) * oc * opix], col, &mut dw);
                }
                wt.accumulate_grad(&dw);
            }
            if pb {
                let mut db = vec![E::ZERO; oc];
                for i in 0..n {
                    for (ocs, dbv) in db.iter_mut().enumerate() {
                        for &gv in &g[(i * oc + ocs) * opix..(i * oc + ocs + 1) * opix] {
                            *dbv += gv;
                        }
                    }
                }
                b.as_ref().unwrap().accumulate_grad(&db);
            }
            if px {
                let mut dx = vec![E::ZERO; n * c * h * w];
                let mut dcol = vec![E::ZERO; ckk * opix];
                for i in 0..n {
                    dcol.fill(E::ZERO);
                    gemm::gemm_tn(
                        ckk,
                        oc,
                        opix,
                        wt.data(),
                        &g[i * oc * opix..(i + 1) * oc * opix],
                        &mut dcol,
                    );
                    col2im(
                        &dcol,
                        c,
                        h,
                        w,
                        &spec,
                        oh,
                        ow,
                        &mut dx[i * c * h * w..(i + 1) * c * h * w],
                    );
                }
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}
