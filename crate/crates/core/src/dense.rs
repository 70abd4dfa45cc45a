//! Dense linear algebra kept deliberately independent of the tridiagonal
//! fast path: cyclic Jacobi eigenvalues (the cross-check oracle) and a
//! pivoted complex LU used for restricted inverses on small regions.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// `a` is row-major n x n and is destroyed. Off-diagonal mass is driven below
/// 1e-12 * ||A||_F, so returned values are accurate to ~1e-12 absolute.
pub fn jacobi_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let target = 1e-12 * frob;

    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if (2.0 * off).sqrt() <= target {
            break;
        }
        let thresh = (off / (n * n) as f64).sqrt() * 0.1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= thresh.min(target) {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Rows p and q.
                for k in 0..n {
                    let akp = a[p * n + k];
                    let akq = a[q * n + k];
                    a[p * n + k] = c * akp - s * akq;
                    a[q * n + k] = s * akp + c * akq;
                }
                // Columns p and q.
                for k in 0..n {
                    let apk = a[k * n + p];
                    let aqk = a[k * n + q];
                    a[k * n + p] = c * apk - s * aqk;
                    a[k * n + q] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    vals
}

/// Pivoted LU factorization of a dense complex matrix.
#[derive(Debug)]
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    piv: Vec<usize>,
    pub min_pivot: f64,
}

impl ComplexLu {
    /// Factor `a` (row-major n x n, consumed). Fails with the row index of
    /// the offending pivot when the matrix is numerically singular.
    pub fn factor(mut a: Vec<Complex64>, n: usize, pivot_floor: f64) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut piv: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let mut pmax = a[k * n + k].norm();
            let mut prow = k;
            for r in (k + 1)..n {
                let v = a[r * n + k].norm();
                if v > pmax {
                    pmax = v;
                    prow = r;
                }
            }
            if pmax < pivot_floor {
                return Err(Error::Numeric(format!(
                    "singular restriction: pivot {pmax:.3e} below floor at elimination step {k}"
                )));
            }
            min_pivot = min_pivot.min(pmax);
            if prow != k {
                for c in 0..n {
                    a.swap(k * n + c, prow * n + c);
                }
                piv.swap(k, prow);
            }
            let inv = Complex64::new(1.0, 0.0) / a[k * n + k];
            for r in (k + 1)..n {
                let f = a[r * n + k] * inv;
                a[r * n + k] = f;
                if f != Complex64::new(0.0, 0.0) {
                    let (head, tail) = a.split_at_mut((r * n) + k + 1);
                    let krow = &head[k * n + k + 1..k * n + n];
                    for (dst, src) in tail[..n - k - 1].iter_mut().zip(krow.iter()) {
                        *dst -= f * src;
                    }
                }
            }
        }
        Ok(ComplexLu { n, lu: a, piv, min_pivot })
    }

    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [Complex64]) {
        let n = self.n;
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for (i, &p) in self.piv.iter().enumerate() {
            x[i] = b[p];
        }
        for i in 0..n {
            for k in 0..i {
                let f = self.lu[i * n + k];
                x[i] = x[i] - f * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let f = self.lu[i * n + k];
                x[i] = x[i] - f * x[k];
            }
            x[i] /= self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    /// Solve A^H x = b in place (for singular-value power iteration).
    pub fn solve_adjoint(&self, b: &mut [Complex64]) {
        let n = self.n;
        let mut x = b.to_vec();
        // (PA)^H = U^H L^H, so solve U^H y = b, then L^H z = y, then undo P.
        for i in 0..n {
            for k in 0..i {
                let f = self.lu[k * n + i].conj();
                x[i] = x[i] - f * x[k];
            }
            x[i] /= self.lu[i * n + i].conj();
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let f = self.lu[k * n + i].conj();
                x[i] = x[i] - f * x[k];
            }
        }
        for (i, &p) in self.piv.iter().enumerate() {
            b[p] = x[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_two_by_two() {
        // Eigenvalues of [[2,1],[1,2]] are 1 and 3.
        let mut a = vec![2.0, 1.0, 1.0, 2.0];
        let vals = jacobi_eigenvalues(&mut a, 2);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn complex_lu_roundtrip() {
        let n = 17;
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        let mut s = 12345u64;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for v in a.iter_mut() {
            *v = Complex64::new(next(), next());
        }
        for i in 0..n {
            a[i * n + i] += Complex64::new(4.0, 0.0);
        }
        let a0 = a.clone();
        let lu = ComplexLu::factor(a, n, 1e-14).unwrap();
        let x0: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64 + 0.5, -(i as f64))).collect();
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                b[i] += a0[i * n + j] * x0[j];
            }
        }
        let mut bh = b.clone();
        lu.solve(&mut b);
        for (got, want) in b.iter().zip(x0.iter()) {
            assert!((got - want).norm() < 1e-10);
        }
        // Adjoint solve: A^H y = b  =>  y = A^{-H} b; verify by applying A^H.
        lu.solve_adjoint(&mut bh);
        let mut back = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                back[i] += a0[j * n + i].conj() * bh[j];
            }
        }
        for i in 0..n {
            let want = {
                let mut v = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    v += a0[i * n + j] * x0[j];
                }
                v
            };
            assert!((back[i] - want).norm() < 1e-9);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = vec![Complex64::new(0.0, 0.0); 4];
        let err = ComplexLu::factor(a, 2, 1e-14).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("singular"), "{msg}");
    }
}
