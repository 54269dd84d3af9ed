//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable shaped buffer of `f32` or `f64` elements;
//! operations never mutate their inputs. Gradients accumulate in a separate
//! interior-mutable buffer when [`tape::backward`] runs over the active
//! [`tape::GradTape`].

pub mod element;
pub mod gemm;
pub mod rng;
pub mod tape;

pub use element::{Dtype, Element};

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};

/// How [`Tensor::filled`] populates a new tensor.
#[derive(Debug, Clone, Copy)]
pub enum Fill {
    Constant(f64),
    /// Uniform in [lo, hi), deterministic per seed.
    Uniform { lo: f64, hi: f64, seed: u64 },
    /// Normal(mean, std), deterministic per seed.
    Normal { mean: f64, std: f64, seed: u64 },
}

struct Inner<E: Element> {
    shape: Box<[usize]>,
    data: Box<[E]>,
    requires_grad: bool,
    grad: RefCell<Option<Box<[E]>>>,
    /// Generation of the tape this tensor was recorded on (0 = none).
    tape_mark: Cell<u64>,
}

/// Immutable dense N-dimensional array; cheap to clone (shared buffer).
pub struct Tensor<E: Element> {
    inner: Rc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.is_grad_leaf())
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "dimensions must all be >= 1, got {shape:?}"
        )));
    }
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::InvalidShape(format!("shape {shape:?} overflows")))
    })
}

impl<E: Element> Tensor<E> {
    fn new(shape: Vec<usize>, data: Vec<E>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "engine produced a non-finite tensor element"
        );
        Tensor {
            inner: Rc::new(Inner {
                shape: shape.into_boxed_slice(),
                data: data.into_boxed_slice(),
                requires_grad: false,
                grad: RefCell::new(None),
                tape_mark: Cell::new(0),
            }),
        }
    }

    /// Build from an explicit element buffer; the element count must match
    /// the shape product.
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor::new(shape, data))
    }

    /// Create a tensor of the requested shape and fill.
    /// Identical (seed, shape, fill) yield bit-identical buffers.
    pub fn filled(shape: Vec<usize>, fill: Fill) -> Result<Self> {
        let n = check_shape(&shape)?;
        let data: Vec<E> = match fill {
            Fill::Constant(c) => vec![E::from_f64(c); n],
            Fill::Uniform { lo, hi, seed } => {
                let mut rng = rng::seeded(seed);
                (0..n)
                    .map(|_| E::from_f64(rng::uniform_in(&mut rng, lo, hi)))
                    .collect()
            }
            Fill::Normal { mean, std, seed } => {
                let mut rng = rng::seeded(seed);
                (0..n)
                    .map(|_| E::from_f64(mean + std * rng::normal_f64(&mut rng)))
                    .collect()
            }
        };
        Ok(Tensor::new(shape, data))
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Tensor::filled(shape, Fill::Constant(0.0))
    }

    pub fn scalar(v: E) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    /// Mark (or unmark) this tensor as a gradient leaf. Consumes and
    /// returns the handle; the underlying buffer is shared, not copied.
    pub fn requires_grad(self, flag: bool) -> Self {
        if self.inner.requires_grad == flag {
            return self;
        }
        Tensor {
            inner: Rc::new(Inner {
                shape: self.inner.shape.clone(),
                data: self.inner.data.clone(),
                requires_grad: flag,
                grad: RefCell::new(None),
                tape_mark: Cell::new(0),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn is_grad_leaf(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn tape_mark(&self) -> u64 {
        self.inner.tape_mark.get()
    }

    pub(crate) fn set_tape_mark(&self, generation: u64) {
        self.inner.tape_mark.set(generation);
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data[0]
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().as_ref().map(|g| g.to_vec())
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[E]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gv, &dv) in g.iter_mut().zip(delta) {
                    *gv += dv;
                }
            }
            None => *slot = Some(delta.to_vec().into_boxed_slice()),
        }
    }

    fn same_shape(&self, other: &Tensor<E>, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::InvalidShape(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    // ---- elementwise operations -------------------------------------

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.same_shape(other, "add")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        let out = Tensor::new(self.shape().to_vec(), data);
        if tape::should_record(&[self, other]) {
            let (pa, pb) = (tape::grad_source(self), tape::grad_source(other));
            let (a, b) = (self.clone(), other.clone());
            tape::record(&out, move |g| {
                if pa {
                    a.accumulate_grad(g);
                }
                if pb {
                    b.accumulate_grad(g);
                }
            });
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.same_shape(other, "sub")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let out = Tensor::new(self.shape().to_vec(), data);
        if tape::should_record(&[self, other]) {
            let (pa, pb) = (tape::grad_source(self), tape::grad_source(other));
            let (a, b) = (self.clone(), other.clone());
            tape::record(&out, move |g| {
                if pa {
                    a.accumulate_grad(g);
                }
                if pb {
                    let neg: Vec<E> = g.iter().map(|&v| -v).collect();
                    b.accumulate_grad(&neg);
                }
            });
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.same_shape(other, "mul")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let out = Tensor::new(self.shape().to_vec(), data);
        if tape::should_record(&[self, other]) {
            let (pa, pb) = (tape::grad_source(self), tape::grad_source(other));
            let (a, b) = (self.clone(), other.clone());
            tape::record(&out, move |g| {
                if pa {
                    let da: Vec<E> = g.iter().zip(b.data()).map(|(&gv, &bv)| gv * bv).collect();
                    a.accumulate_grad(&da);
                }
                if pb {
                    let db: Vec<E> = g.iter().zip(a.data()).map(|(&gv, &av)| gv * av).collect();
                    b.accumulate_grad(&db);
                }
            });
        }
        Ok(out)
    }

    /// Multiply by a scalar.
    pub fn scale(&self, factor: E) -> Tensor<E> {
        let data = self.data().iter().map(|&v| v * factor).collect();
        let out = Tensor::new(self.shape().to_vec(), data);
        if tape::should_record(&[self]) {
            let a = self.clone();
            tape::record(&out, move |g| {
                let da: Vec<E> = g.iter().map(|&gv| gv * factor).collect();
                a.accumulate_grad(&da);
            });
        }
        out
    }

    // ---- reductions and structure -----------------------------------

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<E> {
        let mut acc = E::ZERO;
        for &v in self.data() {
            acc += v;
        }
        let out = Tensor::scalar(acc);
        if tape::should_record(&[self]) {
            let a = self.clone();
            tape::record(&out, move |g| {
                a.accumulate_grad(&vec![g[0]; a.numel()]);
            });
        }
        out
    }

    /// Same elements under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<E>> {
        let n = check_shape(&shape)?;
        if n != self.numel() {
            return Err(Error::InvalidShape(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.shape()
            )));
        }
        let out = Tensor::new(shape, self.data().to_vec());
        if tape::should_record(&[self]) {
            let a = self.clone();
            tape::record(&out, move |g| {
                a.accumulate_grad(g);
            });
        }
        Ok(out)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 {
            return Err(Error::InvalidShape(format!(
                "matmul needs 2-D operands, got {a_shape:?} x {b_shape:?}"
            )));
        }
        let (m, k) = (a_shape[0], a_shape[1]);
        let (k2, n) = (b_shape[0], b_shape[1]);
        if k != k2 {
            return Err(Error::InvalidShape(format!(
                "matmul inner dimensions disagree: {a_shape:?} x {b_shape:?}"
            )));
        }
        let mut data = vec![E::ZERO; m * n];
        gemm::gemm_nn(m, k, n, self.data(), other.data(), &mut data);
        let out = Tensor::new(vec![m, n], data);
        if tape::should_record(&[self, other]) {
            let (pa, pb) = (tape::grad_source(self), tape::grad_source(other));
            let (a, b) = (self.clone(), other.clone());
            tape::record(&out, move |g| {
                if pa {
                    // dA = g . B^T
                    let mut da = vec![E::ZERO; m * k];
                    gemm::gemm_nt(m, n, k, g, b.data(), &mut da);
                    a.accumulate_grad(&da);
                }
                if pb {
                    // dB = A^T . g
                    let mut db = vec![E::ZERO; k * n];
                    gemm::gemm_tn(k, m, n, a.data(), g, &mut db);
                    b.accumulate_grad(&db);
                }
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_zero_constant() {
        let t = Tensor::<f64>::filled(vec![2, 3], Fill::Constant(0.0)).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[0.0; 6]);
    }

    #[test]
    fn zero_dimension_rejected() {
        let err = Tensor::<f32>::zeros(vec![2, 0, 3]).unwrap_err();
        assert!(matches!(err, Error::InvalidShape(_)));
        let err = Tensor::<f32>::zeros(vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidShape(_)));
    }

    #[test]
    fn seeded_normal_is_reproducible() {
        let fill = Fill::Normal {
            mean: 0.0,
            std: 1.0,
            seed: 7,
        };
        let a = Tensor::<f32>::filled(vec![1, 1, 3, 3], fill).unwrap();
        let b = Tensor::<f32>::filled(vec![1, 1, 3, 3], fill).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn seeded_uniform_mean_within_three_sigma() {
        // Uniform on [0,1): mean 1/2, variance 1/12; the sample mean of n
        // draws has std sqrt(1/(12 n)).
        let n = 4 * 8 * 32 * 32;
        let t = Tensor::<f64>::filled(
            vec![4, 8, 32, 32],
            Fill::Uniform {
                lo: 0.0,
                hi: 1.0,
                seed: 123,
            },
        )
        .unwrap();
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let sigma = (1.0 / (12.0 * n as f64)).sqrt();
        assert!(
            (mean - 0.5).abs() <= 3.0 * sigma,
            "sample mean {mean} too far from 0.5 (3 sigma = {})",
            3.0 * sigma
        );
    }

    #[test]
    fn add_zero_is_identity() {
        let x = Tensor::<f64>::filled(
            vec![3, 4],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 2,
            },
        )
        .unwrap();
        let z = Tensor::<f64>::zeros(vec![3, 4]).unwrap();
        let y = x.add(&z).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn elementwise_shape_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(vec![2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(vec![4]).unwrap();
        assert!(matches!(
            a.add(&b).unwrap_err(),
            Error::InvalidShape(_)
        ));
    }

    #[test]
    fn square_gradient_is_two_x() {
        tape::begin::<f64>();
        let x = Tensor::<f64>::from_vec(vec![3], vec![1.0, -2.0, 0.5])
            .unwrap()
            .requires_grad(true);
        let y = x.mul(&x).unwrap().sum();
        tape::backward(&y).unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g, vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn add_backward_passes_upstream_to_both() {
        tape::begin::<f64>();
        let a = Tensor::<f64>::filled(
            vec![5],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 3,
            },
        )
        .unwrap()
        .requires_grad(true);
        let b = Tensor::<f64>::filled(
            vec![5],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 4,
            },
        )
        .unwrap()
        .requires_grad(true);
        let s = a.add(&b).unwrap().sum();
        tape::backward(&s).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 5]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::<f64>::filled(
            vec![3, 3],
            Fill::Uniform {
                lo: -2.0,
                hi: 2.0,
                seed: 5,
            },
        )
        .unwrap();
        let eye = Tensor::<f64>::from_vec(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let b = a.matmul(&eye).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn matmul_against_triple_loop() {
        let a = Tensor::<f64>::filled(
            vec![2, 3],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 6,
            },
        )
        .unwrap();
        let b = Tensor::<f64>::filled(
            vec![3, 4],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 7,
            },
        )
        .unwrap();
        let c = a.matmul(&b).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mut want = 0.0;
                for p in 0..3 {
                    want += a.data()[i * 3 + p] * b.data()[p * 4 + j];
                }
                assert!((c.data()[i * 4 + j] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sum_backward_is_ones() {
        tape::begin::<f64>();
        let x = Tensor::<f64>::filled(
            vec![2, 3],
            Fill::Normal {
                mean: 0.0,
                std: 1.0,
                seed: 8,
            },
        )
        .unwrap()
        .requires_grad(true);
        let s = x.sum();
        tape::backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn grad_accumulates_across_consumers() {
        // y = sum(x) + sum(2x) => dy/dx = 3 everywhere.
        tape::begin::<f64>();
        let x = Tensor::<f64>::from_vec(vec![2], vec![1.0, 2.0])
            .unwrap()
            .requires_grad(true);
        let y = x.sum().add(&x.scale(2.0).sum()).unwrap();
        tape::backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn ops_do_not_mutate_inputs() {
        let x = Tensor::<f64>::filled(
            vec![4],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 9,
            },
        )
        .unwrap();
        let before = x.data().to_vec();
        let _ = x.scale(3.0);
        let _ = x.mul(&x).unwrap();
        let _ = x.sum();
        assert_eq!(x.data(), &before[..]);
    }

    #[test]
    fn backward_linearity() {
        // grad(alpha*L1 + L2) == alpha*grad(L1) + grad(L2)
        let x0 = Tensor::<f64>::filled(
            vec![6],
            Fill::Normal {
                mean: 0.0,
                std: 1.0,
                seed: 10,
            },
        )
        .unwrap();
        let alpha = 2.5;

        let run = |combined: bool| -> Vec<f64> {
            tape::begin::<f64>();
            let x = x0.clone().requires_grad(true);
            let l1 = x.mul(&x).unwrap().sum();
            let l2 = x.scale(3.0).sum();
            if combined {
                let total = l1.scale(alpha).add(&l2).unwrap();
                tape::backward(&total).unwrap();
                x.grad().unwrap()
            } else {
                // Two separate passes on separate tapes.
                tape::backward(&l1).unwrap();
                let g1 = x.grad().unwrap();
                x.zero_grad();
                tape::begin::<f64>();
                let l2 = x.scale(3.0).sum();
                tape::backward(&l2).unwrap();
                let g2 = x.grad().unwrap();
                g1.iter().zip(&g2).map(|(a, b)| alpha * a + b).collect()
            }
        };

        let combined = run(true);
        let separate = run(false);
        for (a, b) in combined.iter().zip(&separate) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}
