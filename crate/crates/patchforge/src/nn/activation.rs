//! PReLU activation with per-channel learnable negative slopes.

use crate::error::{Error, Result};
use crate::tensor::{tape, Element, Tensor};

/// Conventional initial negative slope.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// y = x for x >= 0, a_c * x for x < 0, with one learnable slope per
/// channel (dimension 1 of a 2-D or 4-D input).
///
/// Subgradient convention at exactly 0: the input gradient contribution
/// is 0 there (the slope gradient is x * upstream on the negative side,
/// which already vanishes at 0).
pub fn prelu<E: Element>(input: &Tensor<E>, slope: &Tensor<E>) -> Result<Tensor<E>> {
    let xs = input.shape();
    let (c, plane) = match xs.len() {
        2 => (xs[1], 1),
        4 => (xs[1], xs[2] * xs[3]),
        _ => {
            return Err(Error::InvalidShape(format!(
                "prelu input must be 2-D (N,C) or 4-D NCHW, got {xs:?}"
            )))
        }
    };
    if slope.shape() != [c] {
        return Err(Error::InvalidShape(format!(
            "prelu slope {:?} does not match {c} channels",
            slope.shape()
        )));
    }
    let n = xs[0];
    let x = input.data();
    let a = slope.data();
    let mut out = vec![E::ZERO; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let av = a[ch];
            for k in 0..plane {
                let v = x[base + k];
                out[base + k] = if v >= E::ZERO { v } else { av * v };
            }
        }
    }
    let out = Tensor::from_vec(xs.to_vec(), out)?;
    if tape::should_record(&[input, slope]) {
        let (px, pa) = (tape::grad_source(input), tape::grad_source(slope));
        let xin = input.clone();
        let sl = slope.clone();
        tape::record(&out, move |g| {
            let x = xin.data();
            let a = sl.data();
            let mut dx = if px { vec![E::ZERO; x.len()] } else { Vec::new() };
            let mut da = vec![E::ZERO; c];
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * plane;
                    for k in 0..plane {
                        let v = x[base + k];
                        let gv = g[base + k];
                        if v > E::ZERO {
                            if px {
                                dx[base + k] = gv;
                            }
                        } else if v < E::ZERO {
                            if px {
                                dx[base + k] = gv * a[ch];
                            }
                            da[ch] += gv * v;
                        }
                        // v == 0: zero contribution to both gradients.
                    }
                }
            }
            if px {
                xin.accumulate_grad(&dx);
            }
            if pa {
                sl.accumulate_grad(&da);
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{tape, Fill};

    #[test]
    fn positive_input_unchanged() {
        let x = Tensor::<f64>::filled(
            vec![2, 3, 2, 2],
            Fill::Uniform {
                lo: 0.1,
                hi: 2.0,
                seed: 1,
            },
        )
        .unwrap();
        let a = Tensor::filled(vec![3], Fill::Constant(0.25)).unwrap();
        let y = prelu(&x, &a).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_slope_is_relu() {
        let x = Tensor::from_vec(vec![1, 2], vec![-3.0, 4.0]).unwrap();
        let a = Tensor::filled(vec![2], Fill::Constant(0.0)).unwrap();
        let y = prelu(&x, &a).unwrap();
        assert_eq!(y.data(), &[0.0, 4.0]);
    }

    #[test]
    fn negative_side_scales_by_slope() {
        let x = Tensor::from_vec(vec![1, 1, 1, 3], vec![-2.0, 0.0, 2.0]).unwrap();
        let a = Tensor::from_vec(vec![1], vec![0.5]).unwrap();
        let y = prelu(&x, &a).unwrap();
        assert_eq!(y.data(), &[-1.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_like_gradient_is_positive_indicator() {
        tape::begin::<f64>();
        let x = Tensor::from_vec(vec![1, 1, 1, 4], vec![-1.0, 0.0, 2.0, -0.5])
            .unwrap()
            .requires_grad(true);
        let a = Tensor::filled(vec![1], Fill::Constant(0.0)).unwrap();
        let y = prelu(&x, &a).unwrap().sum();
        tape::backward(&y).unwrap();
        // Subgradient 0 at exactly 0.
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn slope_gradient_on_negative_inputs() {
        tape::begin::<f64>();
        let x = Tensor::from_vec(vec![1, 1, 1, 3], vec![-2.0, 1.0, -3.0]).unwrap();
        let a = Tensor::from_vec(vec![1], vec![0.25])
            .unwrap()
            .requires_grad(true);
        let y = prelu(&x, &a).unwrap().sum();
        tape::backward(&y).unwrap();
        // d/da sum = sum of negative inputs = -5.
        assert_eq!(a.grad().unwrap(), vec![-5.0]);
    }
}
