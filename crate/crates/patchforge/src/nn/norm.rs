//! Batch normalization over NCHW batches.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{tape, Element, Tensor};

/// Whether stateful operators run in training or evaluation behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct BnConfig {
    /// Fraction of the new batch statistic blended into the running value.
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

/// Running statistics, updated in train mode and read in eval mode.
/// Shared handles so checkpointing can address the buffers by name.
#[derive(Debug)]
pub struct BnRunning<E: Element> {
    pub mean: Rc<RefCell<Vec<E>>>,
    pub var: Rc<RefCell<Vec<E>>>,
}

impl<E: Element> Clone for BnRunning<E> {
    fn clone(&self) -> Self {
        BnRunning {
            mean: Rc::clone(&self.mean),
            var: Rc::clone(&self.var),
        }
    }
}

impl<E: Element> BnRunning<E> {
    pub fn new(channels: usize) -> Self {
        BnRunning {
            mean: Rc::new(RefCell::new(vec![E::ZERO; channels])),
            var: Rc::new(RefCell::new(vec![E::ONE; channels])),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.borrow().len()
    }

    pub fn reset(&self) {
        self.mean.borrow_mut().fill(E::ZERO);
        self.var.borrow_mut().fill(E::ONE);
    }
}

/// Train mode normalizes with the current batch's per-channel statistics
/// (biased variance) and folds them into the running statistics; eval mode
/// applies the stored affine map, a deterministic per-element function.
pub fn batch_norm<E: Element>(
    input: &Tensor<E>,
    scale: &Tensor<E>,
    shift: &Tensor<E>,
    running: &BnRunning<E>,
    cfg: BnConfig,
    mode: Mode,
) -> Result<Tensor<E>> {
    let xs = input.shape();
    if xs.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "batch_norm input must be NCHW, got {xs:?}"
        )));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if scale.shape() != [c] || shift.shape() != [c] || running.channels() != c {
        return Err(Error::InvalidShape(format!(
            "batch_norm channel mismatch: input {c}, scale {:?}, shift {:?}, running {}",
            scale.shape(),
            shift.shape(),
            running.channels()
        )));
    }
    let plane = h * w;
    let m = n * plane; // elements per channel
    let x = input.data();
    let eps = E::from_f64(cfg.epsilon);

    let per_channel = |f: &mut dyn FnMut(usize, &[E])| {
        for ch in 0..c {
            for i in 0..n {
                f(ch, &x[(i * c + ch) * plane..(i * c + ch + 1) * plane]);
            }
        }
    };

    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![E::ZERO; c];
            let mut var = vec![E::ZERO; c];
            per_channel(&mut |ch, row| {
                for &v in row {
                    mean[ch] += v;
                }
            });
            for v in &mut mean {
                *v = *v / E::from_f64(m as f64);
            }
            per_channel(&mut |ch, row| {
                for &v in row {
                    let d = v - mean[ch];
                    var[ch] += d * d;
                }
            });
            for v in &mut var {
                *v = *v / E::from_f64(m as f64);
            }
            // Fold into running statistics; the running variance uses the
            // unbiased estimate when the batch has more than one element.
            let unbias = if m > 1 {
                E::from_f64(m as f64 / (m as f64 - 1.0))
            } else {
                E::ONE
            };
            let mom = E::from_f64(cfg.momentum);
            let keep = E::ONE - mom;
            let mut rm = running.mean.borrow_mut();
            let mut rv = running.var.borrow_mut();
            for ch in 0..c {
                rm[ch] = keep * rm[ch] + mom * mean[ch];
                rv[ch] = keep * rv[ch] + mom * var[ch] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (running.mean.borrow().clone(), running.var.borrow().clone()),
    };

    let inv_std: Vec<E> = var.iter().map(|&v| E::ONE / (v + eps).sqrt()).collect();
    let mut out = vec![E::ZERO; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let (mu, istd) = (mean[ch], inv_std[ch]);
            let (g, b) = (scale.data()[ch], shift.data()[ch]);
            let base = (i * c + ch) * plane;
            for k in 0..plane {
                out[base + k] = g * (x[base + k] - mu) * istd + b;
            }
        }
    }

    let out = Tensor::from_vec(xs.to_vec(), out)?;
    if tape::should_record(&[input, scale, shift]) {
        let (px, pg, pb) = (
            tape::grad_source(input),
            tape::grad_source(scale),
            tape::grad_source(shift),
        );
        let xin = input.clone();
        let sc = scale.clone();
        let sh = shift.clone();
        tape::record(&out, move |g| {
            let x = xin.data();
            let mut dscale = vec![E::ZERO; c];
            let mut dshift = vec![E::ZERO; c];
            let mut dx = if px { vec![E::ZERO; x.len()] } else { Vec::new() };

            for ch in 0..c {
                let (mu, istd) = (mean[ch], inv_std[ch]);
                let gamma = sc.data()[ch];
                // Reductions over the channel's elements.
                let mut sum_g = E::ZERO;
                let mut sum_gx = E::ZERO; // sum of g * xhat
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    for k in 0..plane {
                        let gv = g[base + k];
                        sum_g += gv;
                        sum_gx += gv * (x[base + k] - mu) * istd;
                    }
                }
                dshift[ch] = sum_g;
                dscale[ch] = sum_gx;
                if px {
                    match mode {
                        Mode::Train => {
                            // Batch statistics participate in the graph.
                            let inv_m = E::ONE / E::from_f64(m as f64);
                            for i in 0..n {
                                let base = (i * c + ch) * plane;
                                for k in 0..plane {
                                    let xhat = (x[base + k] - mu) * istd;
                                    dx[base + k] = gamma
                                        * istd
                                        * (g[base + k] - inv_m * sum_g - inv_m * xhat * sum_gx);
                                }
                            }
                        }
                        Mode::Eval => {
                            // Plain affine map.
                            for i in 0..n {
                                let base = (i * c + ch) * plane;
                                for k in 0..plane {
                                    dx[base + k] = gamma * istd * g[base + k];
                                }
                            }
                        }
                    }
                }
            }
            if pg {
                sc.accumulate_grad(&dscale);
            }
            if pb {
                sh.accumulate_grad(&dshift);
            }
            if px {
                xin.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    fn unit_params(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (
            Tensor::filled(vec![c], Fill::Constant(1.0)).unwrap(),
            Tensor::filled(vec![c], Fill::Constant(0.0)).unwrap(),
        )
    }

    #[test]
    fn train_mode_normalizes() {
        let x = Tensor::<f64>::filled(
            vec![4, 3, 6, 6],
            Fill::Normal {
                mean: 2.0,
                std: 3.0,
                seed: 5,
            },
        )
        .unwrap();
        let (scale, shift) = unit_params(3);
        let running = BnRunning::new(3);
        let y = batch_norm(&x, &scale, &shift, &running, BnConfig::default(), Mode::Train).unwrap();
        let plane = 36;
        for ch in 0..3 {
            let mut vals = Vec::new();
            for i in 0..4 {
                vals.extend_from_slice(&y.data()[(i * 3 + ch) * plane..(i * 3 + ch + 1) * plane]);
            }
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "channel mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "channel var {v}");
        }
    }

    #[test]
    fn eval_mode_is_deterministic_affine() {
        let x = Tensor::<f64>::filled(
            vec![2, 2, 4, 4],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 6,
            },
        )
        .unwrap();
        let (scale, shift) = unit_params(2);
        let running = BnRunning::new(2);
        running.mean.borrow_mut().copy_from_slice(&[0.3, -0.2]);
        running.var.borrow_mut().copy_from_slice(&[1.5, 0.7]);
        let y1 = batch_norm(&x, &scale, &shift, &running, BnConfig::default(), Mode::Eval).unwrap();
        let y2 = batch_norm(&x, &scale, &shift, &running, BnConfig::default(), Mode::Eval).unwrap();
        assert_eq!(y1.data(), y2.data());
        // Eval mode must not touch running stats.
        assert_eq!(*running.mean.borrow(), vec![0.3, -0.2]);
    }

    #[test]
    fn batch_of_one_is_guarded_by_epsilon() {
        let x = Tensor::<f64>::filled(vec![1, 2, 1, 1], Fill::Constant(5.0)).unwrap();
        let (scale, shift) = unit_params(2);
        let running = BnRunning::new(2);
        let y = batch_norm(&x, &scale, &shift, &running, BnConfig::default(), Mode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 2, 2]).unwrap();
        let (scale, shift) = unit_params(2);
        let running = BnRunning::new(2);
        assert!(matches!(
            batch_norm(&x, &scale, &shift, &running, BnConfig::default(), Mode::Train).unwrap_err(),
            Error::InvalidShape(_)
        ));
    }
}
