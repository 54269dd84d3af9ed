//! Fully connected layer: y = x . w + bias.

use crate::error::{Error, Result};
use crate::tensor::{gemm, tape, Element, Tensor};

/// `input` is (N, in), `weight` is (in, out), `bias` is (out) and is added
/// to every row. Backward: dX = g . W^T, dW = X^T . g, db = column sums.
pub fn linear<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    let xs = input.shape();
    let ws = weight.shape();
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::InvalidShape(format!(
            "linear: input {xs:?} incompatible with weight {ws:?}"
        )));
    }
    let (n, d_in, d_out) = (xs[0], ws[0], ws[1]);
    if let Some(b) = bias {
        if b.shape() != [d_out] {
            return Err(Error::InvalidShape(format!(
                "linear bias {:?} does not match output width {d_out}",
                b.shape()
            )));
        }
    }
    let mut out = vec![E::ZERO; n * d_out];
    gemm::gemm_nn(n, d_in, d_out, input.data(), weight.data(), &mut out);
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(d_out) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    let out = Tensor::from_vec(vec![n, d_out], out)?;

    let mut inputs = vec![input, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    if tape::should_record(&inputs) {
        let px = tape::grad_source(input);
        let pw = tape::grad_source(weight);
        let pb = bias.map(tape::grad_source).unwrap_or(false);
        let x = input.clone();
        let w = weight.clone();
        let b = bias.cloned();
        tape::record(&out, move |g| {
            if px {
                let mut dx = vec![E::ZERO; n * d_in];
                gemm::gemm_nt(n, d_out, d_in, g, w.data(), &mut dx);
                x.accumulate_grad(&dx);
            }
            if pw {
                let mut dw = vec![E::ZERO; d_in * d_out];
                gemm::gemm_tn(d_in, n, d_out, x.data(), g, &mut dw);
                w.accumulate_grad(&dw);
            }
            if pb {
                let mut db = vec![E::ZERO; d_out];
                for row in g.chunks_exact(d_out) {
                    for (dv, &gv) in db.iter_mut().zip(row) {
                        *dv += gv;
                    }
                }
                b.as_ref().unwrap().accumulate_grad(&db);
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
    fn bias_broadcasts_over_rows() {
        let x = Tensor::<f64>::zeros(vec![3, 2]).unwrap();
        let w = Tensor::<f64>::zeros(vec![2, 4]).unwrap();
        let b = Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[3, 4]);
        for row in y.data().chunks_exact(4) {
            assert_eq!(row, &[1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn backward_shapes_and_bias_grad() {
        tape::begin::<f64>();
        let x = Tensor::<f64>::filled(
            vec![5, 3],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 1,
            },
        )
        .unwrap()
        .requires_grad(true);
        let w = Tensor::<f64>::filled(
            vec![3, 2],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 2,
            },
        )
        .unwrap()
        .requires_grad(true);
        let b = Tensor::<f64>::zeros(vec![2]).unwrap().requires_grad(true);
        let y = linear(&x, &w, Some(&b)).unwrap().sum();
        tape::backward(&y).unwrap();
        assert_eq!(x.grad().unwrap().len(), 15);
        assert_eq!(w.grad().unwrap().len(), 6);
        // db = column sums of an all-ones upstream = N per column.
        assert_eq!(b.grad().unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        let w = Tensor::<f32>::zeros(vec![4, 2]).unwrap();
        assert!(matches!(
            linear(&x, &w, None).unwrap_err(),
            Error::InvalidShape(_)
        ));
    }
}
