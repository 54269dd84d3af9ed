//! Small dense matrix kernels shared by matmul and im2col convolution.
//!
//! Row-major layout throughout. All kernels accumulate into `c`
//! (`c += op(a, b)`); callers that want a plain product pass a zeroed `c`.
//! The hot paths are register-tiled so LLVM keeps the accumulator block in
//! vector registers; every tile accumulates over `k` in ascending order,
//! which keeps results deterministic run-to-run.

use crate::tensor::Element;

const MR: usize = 8; // A-rows per tile
const NR: usize = 32; // C-columns per tile

/// c[m,n] += a[m,k] * b[k,n]
pub fn gemm_nn<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);

    let n_main = n - n % NR;
    let mut i0 = 0;
    while i0 < m {
        let mr = MR.min(m - i0);
        let mut j0 = 0;
        while j0 < n_main {
            let mut acc = [[E::ZERO; NR]; MR];
            for p in 0..k {
                let brow = &b[p * n + j0..p * n + j0 + NR];
                for ii in 0..mr {
                    let av = a[(i0 + ii) * k + p];
                    let row = &mut acc[ii];
                    for jj in 0..NR {
                        row[jj] += av * brow[jj];
                    }
                }
            }
            for ii in 0..mr {
                let crow = &mut c[(i0 + ii) * n + j0..(i0 + ii) * n + j0 + NR];
                for (cv, &av) in crow.iter_mut().zip(&acc[ii]) {
                    *cv += av;
                }
            }
            j0 += NR;
        }
        // Ragged right edge.
        if j0 < n {
            for ii in 0..mr {
                let arow = &a[(i0 + ii) * k..(i0 + ii + 1) * k];
                for (p, &av) in arow.iter().enumerate() {
                    let brow = &b[p * n + j0..(p + 1) * n];
                    let crow = &mut c[(i0 + ii) * n + j0..(i0 + ii + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
        i0 += mr;
    }
}

/// c[m,n] += a[k,m]^T * b[k,n]
pub fn gemm_tn<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);

    let n_main = n - n % NR;
    let mut i0 = 0;
    while i0 < m {
        let mr = MR.min(m - i0);
        let mut j0 = 0;
        while j0 < n_main {
            let mut acc = [[E::ZERO; NR]; MR];
            for p in 0..k {
                let brow = &b[p * n + j0..p * n + j0 + NR];
                for ii in 0..mr {
                    let av = a[p * m + i0 + ii];
                    let row = &mut acc[ii];
                    for jj in 0..NR {
                        row[jj] += av * brow[jj];
                    }
                }
            }
            for ii in 0..mr {
                let crow = &mut c[(i0 + ii) * n + j0..(i0 + ii) * n + j0 + NR];
                for (cv, &av) in crow.iter_mut().zip(&acc[ii]) {
                    *cv += av;
                }
            }
            j0 += NR;
        }
        if j0 < n {
            for p in 0..k {
                let brow = &b[p * n + j0..(p + 1) * n];
                for ii in 0..mr {
                    let av = a[p * m + i0 + ii];
                    let crow = &mut c[(i0 + ii) * n + j0..(i0 + ii + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
        i0 += mr;
    }
}

/// c[m,n] += a[m,k] * b[n,k]^T
pub fn gemm_nt<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);

    // Dot-product form: both operands walk k contiguously. Eight partial
    // lanes per (i, j) pair keep the reduction vectorizable.
    const LANES: usize = 8;
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut lanes = [E::ZERO; LANES];
            let chunks = k / LANES;
            for ch in 0..chunks {
                let av = &arow[ch * LANES..(ch + 1) * LANES];
                let bv = &brow[ch * LANES..(ch + 1) * LANES];
                for l in 0..LANES {
                    lanes[l] += av[l] * bv[l];
                }
            }
            let mut acc = E::ZERO;
            for l in lanes {
                acc += l;
            }
            for p in chunks * LANES..k {
                acc += arow[p] * brow[p];
            }
            c[i * n + j] += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn variants_agree_with_naive() {
        let mut rng = crate::tensor::rng::seeded(5);
        for &(m, k, n) in &[
            (1, 1, 1),
            (2, 3, 4),
            (5, 7, 3),
            (8, 8, 8),
            (4, 9, 33),
            (7, 20, 50),
            (13, 31, 17),
        ] {
            let a: Vec<f64> = (0..m * k)
                .map(|_| crate::tensor::rng::uniform_in(&mut rng, -1.0, 1.0))
                .collect();
            let b: Vec<f64> = (0..k * n)
                .map(|_| crate::tensor::rng::uniform_in(&mut rng, -1.0, 1.0))
                .collect();
            let want = naive(m, k, n, &a, &b);

            let mut c = vec![0.0; m * n];
            gemm_nn(m, k, n, &a, &b, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }

            let mut c = vec![0.0; m * n];
            gemm_tn(m, k, n, &transpose(m, k, &a), &b, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }

            let mut c = vec![0.0; m * n];
            gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulates_into_existing_c() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let mut c = [10.0];
        gemm_nn(1, 2, 1, &a, &b, &mut c);
        assert_eq!(c, [10.0 + 11.0]);
    }
}
