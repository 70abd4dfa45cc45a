//! The doubled finite operator T(theta) = D(theta) + delta * W' over a
//! region of (Z^b x labels) x {+, -}: diagonal +-(n.omega + theta) + mu_j,
//! off-diagonal the Jacobian kernel. Restricted inverses are computed by
//! direct factorization: a pivoted dense complex LU in general, and a
//! pivoted banded real LU on the frequency-ordered layout used by scans.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dense::ComplexLu;
use crate::error::{Error, Result};
use crate::spectral::{fit_line, DecayFit, EigenSystem};

use super::{JacobianKernel, NVec};

/// Region families over Z^{b+1} (frequency coordinates plus one label
/// coordinate, taken relative to the shift j0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    FullBox,
    /// Box minus the strict orthant selected by the sign pattern
    /// (-1 => coordinate < 0, +1 => coordinate > 0, 0 => unconstrained);
    /// at least two entries must be nonzero.
    OctantCut { signs: Vec<i8> },
    /// Rectangle minus its own translate by `shift` (membership tests only).
    RectMinusShift { center: Vec<i64>, half_widths: Vec<i64>, shift: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    /// Size N of the bounding box [-N, N]^{b+1}.
    pub size: i64,
    /// Label-coordinate shift of the region center.
    pub j0: i64,
}

impl Region {
    pub fn full_box(size: i64, j0: i64) -> Self {
        Region { kind: RegionKind::FullBox, size, j0 }
    }

    pub fn validate(&self, b: usize) -> Result<()> {
        match &self.kind {
            RegionKind::FullBox => Ok(()),
            RegionKind::OctantCut { signs } => {
                if signs.len() != b + 1 {
                    return Err(Error::Config("octant sign pattern must have b+1 entries".into()));
                }
                if signs.iter().filter(|&&s| s != 0).count() < 2 {
                    return Err(Error::Config(
                        "octant cut needs at least two constrained coordinates".into(),
                    ));
                }
                Ok(())
            }
            RegionKind::RectMinusShift { center, half_widths, shift } => {
                if center.len() != b + 1 || half_widths.len() != b + 1 || shift.len() != b + 1 {
                    return Err(Error::Config("rectangle data must have b+1 entries".into()));
                }
                Ok(())
            }
        }
    }

    /// Membership of the relative point (n_1..n_b, j - j0).
    pub fn contains(&self, rel: &[i64]) -> bool {
        match &self.kind {
            RegionKind::FullBox => rel.iter().all(|c| c.abs() <= self.size),
            RegionKind::OctantCut { signs } => {
                if !rel.iter().all(|c| c.abs() <= self.size) {
                    return false;
                }
                let removed = rel.iter().zip(signs).all(|(&c, &s)| match s {
                    0 => true,
                    1 => c > 0,
                    _ => c < 0,
                });
                !removed
            }
            RegionKind::RectMinusShift { center, half_widths, shift } => {
                let in_rect = |q: &[i64], off: &[i64]| {
                    q.iter()
                        .zip(center)
                        .zip(half_widths)
                        .zip(off)
                        .all(|(((&c, &o), &h), &z)| (c - o - z).abs() <= h)
                };
                let zero = vec![0i64; rel.len()];
                in_rect(rel, &zero) && !in_rect(rel, shift)
            }
        }
    }

    /// Absolute vertices (n, j) of the region for dimension b, lexicographic.
    pub fn vertices(&self, b: usize) -> Vec<(NVec, i64)> {
        let mut out = Vec::new();
        let width = 2 * self.size + 1;
        let total = (width as u128).pow(b as u32 + 1);
        assert!(total <= 1u128 << 40, "region too large to enumerate");
        let mut rel = vec![0i64; b + 1];
        for mut idx in 0..total as u64 {
            for slot in rel.iter_mut().rev() {
                *slot = (idx % width as u64) as i64 - self.size;
                idx /= width as u64;
            }
            if self.contains(&rel) {
                out.push((rel[..b].to_vec(), self.j0 + rel[b]));
            }
        }
        out
    }
}

/// Finite doubled operator context. The diagonal is exact by construction;
/// the off-diagonal block is delta times the Jacobian kernel.
#[derive(Debug)]
pub struct DoubledOperator<'a> {
    pub eig: &'a EigenSystem,
    pub omega: Vec<f64>,
    pub theta: f64,
    pub delta: f64,
    pub kernel: JacobianKernel,
    /// Bounding radius of the frequency axis this operator covers.
    pub n_radius: i64,
}

pub fn assemble_t<'a>(
    theta: f64,
    omega: &[f64],
    u: &super::LatticeCoeffs,
    eig: &'a EigenSystem,
    delta: f64,
    p: usize,
    n_radius: i64,
) -> Result<DoubledOperator<'a>> {
    let kernel = super::jacobian_kernel(u, eig, p, Some(2 * n_radius))?;
    Ok(DoubledOperator { eig, omega: omega.to_vec(), theta, delta, kernel, n_radius })
}

impl<'a> DoubledOperator<'a> {
    /// Diagonal entry at (n, j) in the given sector (0 = plus, 1 = minus).
    pub fn diagonal(&self, n: &[i64], j: i64, sector: usize) -> f64 {
        let base: f64 = n.iter().zip(&self.omega).map(|(&k, &w)| k as f64 * w).sum();
        let signed = if sector == 0 { base + self.theta } else { -(base + self.theta) };
        signed + self.eig.eigenvalue(j)
    }

    pub fn entry(
        &self,
        (n, j, s): (&[i64], i64, usize),
        (np, jp, sp): (&[i64], i64, usize),
    ) -> Complex64 {
        let mut val = Complex64::new(0.0, 0.0);
        if n == np && j == jp && s == sp {
            val += Complex64::new(self.diagonal(n, j, s), 0.0);
        }
        let offset: Vec<i64> = n.iter().zip(np).map(|(a, b)| a - b).collect();
        val + self.kernel.entry(self.eig, s, sp, &offset, j, jp) * self.delta
    }
}

/// Kernel blocks materialized over a region's label window, keyed by
/// frequency offset; shared by the dense and banded factorizations.
pub struct RegionBlocks {
    pub j_lo: i64,
    pub jdim: usize,
    pub gp: BTreeMap<NVec, Vec<Complex64>>,
    pub huv: BTreeMap<NVec, Vec<Complex64>>,
    pub hvu: BTreeMap<NVec, Vec<Complex64>>,
}

impl RegionBlocks {
    pub fn build(kernel: &JacobianKernel, eig: &EigenSystem, j_lo: i64, j_hi: i64) -> Result<Self> {
        if !eig.contains_label(j_lo) || !eig.contains_label(j_hi) {
            return Err(Error::Range(format!(
                "region labels [{j_lo}, {j_hi}] exceed available labels {:?}",
                eig.labels()
            )));
        }
        let jdim = (j_hi - j_lo + 1) as usize;
        let len = eig.box_.len();
        let project = |profile: &Vec<Complex64>| -> Vec<Complex64> {
            // B(j, j') = sum_x phi_j(x) K(x) phi_j'(x) over the window.
            let mut scaled = vec![Complex64::new(0.0, 0.0); jdim * len];
            for (row, j) in (j_lo..=j_hi).enumerate() {
                let phi = eig.eigenvector(j);
                for x in 0..len {
                    scaled[row * len + x] = profile[x] * phi[x];
                }
            }
            let mut out = vec![Complex64::new(0.0, 0.0); jdim * jdim];
            for (row, _) in (j_lo..=j_hi).enumerate() {
                for (col, jp) in (j_lo..=j_hi).enumerate() {
                    let phi = eig.eigenvector(jp);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for x in 0..len {
                        acc += scaled[row * len + x] * phi[x];
                    }
                    out[row * jdim + col] = acc;
                }
            }
            out
        };
        let mut blocks =
            RegionBlocks { j_lo, jdim, gp: BTreeMap::new(), huv: BTreeMap::new(), hvu: BTreeMap::new() };
        for (off, profile) in &kernel.gp {
            blocks.gp.insert(off.clone(), project(profile));
        }
        for (off, profile) in &kernel.huv {
            blocks.huv.insert(off.clone(), project(profile));
        }
        for (off, profile) in &kernel.hvu {
            blocks.hvu.insert(off.clone(), project(profile));
        }
        Ok(blocks)
    }

    pub fn entry(&self, s: usize, sp: usize, offset: &NVec, j: i64, jp: i64) -> Complex64 {
        let map = match (s, sp) {
            (0, 0) | (1, 1) => &self.gp,
            (0, 1) => &self.huv,
            (1, 0) => &self.hvu,
            _ => unreachable!(),
        };
        match map.get(offset) {
            Some(block) => {
                let r = (j - self.j_lo) as usize;
                let c = (jp - self.j_lo) as usize;
                block[r * self.jdim + c]
            }
            None => Complex64::new(0.0, 0.0),
        }
    }
}

/// Restricted inverse of T on a region: direct factorization, operator norm
/// by power iteration on the inverse, and an off-diagonal decay fit.
#[derive(Debug)]
pub struct RestrictedInverse {
    pub vertices: Vec<(NVec, i64)>,
    pub norm: f64,
    pub decay: Option<DecayFit>,
    pub min_pivot: f64,
    lu: ComplexLu,
}

/// Hard cap on region cardinality for the dense factorization.
pub const MAX_REGION_VERTICES: usize = 10_000;
const PIVOT_FLOOR: f64 = 1e-14;
pub const NORM_POWER_TOL: f64 = 1e-8;
pub const NORM_POWER_CAP: usize = 500;

impl RestrictedInverse {
    /// Solve T x = b over the region (vertex-major, sector-minor layout).
    pub fn solve(&self, rhs: &mut [Complex64]) {
        self.lu.solve(rhs);
    }
}

pub fn restricted_inverse(op: &DoubledOperator, region: &Region) -> Result<RestrictedInverse> {
    let b = op.omega.len();
    region.validate(b)?;
    if region.size > op.n_radius {
        return Err(Error::Range(format!(
            "region size {} exceeds operator frequency radius {}",
            region.size, op.n_radius
        )));
    }
    let vertices = region.vertices(b);
    if vertices.len() > MAX_REGION_VERTICES {
        return Err(Error::Resource(format!(
            "region has {} vertices, cap is {MAX_REGION_VERTICES}",
            vertices.len()
        )));
    }
    for (_, j) in &vertices {
        if !op.eig.contains_label(*j) {
            return Err(Error::Range(format!("region label {j} outside eigensystem")));
        }
    }
    let j_lo = vertices.iter().map(|(_, j)| *j).min().unwrap();
    let j_hi = vertices.iter().map(|(_, j)| *j).max().unwrap();
    let blocks = RegionBlocks::build(&op.kernel, op.eig, j_lo, j_hi)?;

    let m = vertices.len() * 2;
    let mut a = vec![Complex64::new(0.0, 0.0); m * m];
    for (vi, (n, j)) in vertices.iter().enumerate() {
        for s in 0..2 {
            let row = vi * 2 + s;
            a[row * m + row] += Complex64::new(op.diagonal(n, *j, s), 0.0);
            for (vk, (np, jp)) in vertices.iter().enumerate() {
                let offset: NVec = n.iter().zip(np).map(|(x, y)| x - y).collect();
                for sp in 0..2 {
                    let col = vk * 2 + sp;
                    let w = blocks.entry(s, sp, &offset, *j, *jp);
                    if w != Complex64::new(0.0, 0.0) {
                        a[row * m + col] += w * op.delta;
                    }
                }
            }
        }
    }
    let lu = match ComplexLu::factor(a, m, PIVOT_FLOOR) {
        Ok(lu) => lu,
        Err(Error::Numeric(msg)) => {
            // Recover the elimination step to name the near-null vertex.
            let step = msg
                .rsplit("step ")
                .next()
                .and_then(|s| s.trim().parse::<usize>().ok())
                .unwrap_or(0);
            let (n, j) = vertices[step / 2].clone();
            return Err(Error::ResonanceFailure {
                n,
                j,
                sector: (step % 2) as u8,
                detail: msg,
            });
        }
        Err(e) => return Err(e),
    };

    // ||T^{-1}||_2 via power iteration on (T^{-1} T^{-H}).
    let mut v: Vec<Complex64> = (0..m)
        .map(|i| {
            let mut s = (i as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ 0x5bd1;
            s ^= s >> 29;
            Complex64::new(((s % 1000) as f64) / 1000.0 + 0.1, ((s % 7) as f64) / 7.0)
        })
        .collect();
    let mut norm_est = 0.0f64;
    for _ in 0..NORM_POWER_CAP {
        let scale = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for c in v.iter_mut() {
            *c /= scale;
        }
        lu.solve_adjoint(&mut v);
        lu.solve(&mut v);
        let lam = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let next = lam.sqrt();
        if (next - norm_est).abs() <= NORM_POWER_TOL * next {
            norm_est = next;
            break;
        }
        norm_est = next;
    }

    // Decay fit of |T^{-1}(x, y)| against the max separation, from sampled
    // source columns, over separations >= size/10.
    let sep_min = (region.size as f64 / 10.0).max(1.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let sources: Vec<usize> = pick_spread(&vertices);
    for &src in &sources {
        let mut col = vec![Complex64::new(0.0, 0.0); m];
        col[src * 2] = Complex64::new(1.0, 0.0);
        lu.solve(&mut col);
        let (ns, js) = &vertices[src];
        for (vi, (n, j)) in vertices.iter().enumerate() {
            let sep = n
                .iter()
                .zip(ns)
                .map(|(a, b)| (a - b).abs())
                .max()
                .unwrap_or(0)
                .max((j - js).abs()) as f64;
            if sep >= sep_min {
                let mag = col[vi * 2].norm().max(col[vi * 2 + 1].norm());
                if mag > 1e-300 {
                    xs.push(-sep);
                    ys.push(mag.ln());
                }
            }
        }
    }
    let decay = fit_line(&xs, &ys)
        .ok()
        .map(|(slope, intercept, rmse)| DecayFit { gamma_hat: slope.max(0.0), c_hat: intercept, rmse });

    Ok(RestrictedInverse { vertices, norm: norm_est, decay, min_pivot: lu.min_pivot, lu })
}

/// A handful of well-separated source vertices for column sampling.
fn pick_spread(vertices: &[(NVec, i64)]) -> Vec<usize> {
    if vertices.is_empty() {
        return Vec::new();
    }
    let mut picks = vec![0usize, vertices.len() - 1, vertices.len() / 2];
    picks.push(vertices.len() / 4);
    picks.push(3 * vertices.len() / 4);
    picks.sort_unstable();
    picks.dedup();
    picks
}

/// Pivoted banded real LU in LAPACK-style column band storage; used for the
/// frequency-ordered scans where T is real symmetric.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    pub min_pivot: f64,
}

impl BandedLu {
    /// Factor a band matrix given by `entry(i, j)` for |i - j| <= band.
    pub fn factor(
        n: usize,
        band: usize,
        entry: impl Fn(usize, usize) -> f64,
        pivot_floor: f64,
    ) -> std::result::Result<Self, usize> {
        let kl = band;
        let ku = band;
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0f64; n * ldab];
        for col in 0..n {
            let lo = col.saturating_sub(ku);
            let hi = (col + kl).min(n - 1);
            for row in lo..=hi {
                ab[col * ldab + (kv + row - col)] = entry(row, col);
            }
        }
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0usize;
            let mut best = ab[j * ldab + kv].abs();
            for t in 1..=km {
                let v = ab[j * ldab + kv + t].abs();
                if v > best {
                    best = v;
                    jp = t;
                }
            }
            if best < pivot_floor {
                return Err(j);
            }
            min_pivot = min_pivot.min(best);
            ipiv[j] = j + jp;
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let s1 = c * ldab + (kv + j - c);
                    let s2 = c * ldab + (kv + j + jp - c);
                    ab.swap(s1, s2);
                }
            }
            let pivot = ab[j * ldab + kv];
            for t in 1..=km {
                ab[j * ldab + kv + t] /= pivot;
            }
            for c in (j + 1)..=ju {
                let f = ab[c * ldab + (kv + j - c)];
                if f != 0.0 {
                    for t in 1..=km {
                        ab[c * ldab + (kv + j + t - c)] -= ab[j * ldab + kv + t] * f;
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, ku, ldab, ab, ipiv, min_pivot })
    }

    pub fn solve(&self, x: &mut [f64]) {
        let kv = self.kl + self.ku;
        let n = self.n;
        for j in 0..n {
            if self.ipiv[j] != j {
                x.swap(j, self.ipiv[j]);
            }
            let km = self.kl.min(n - 1 - j);
            for t in 1..=km {
                x[j + t] -= self.ab[j * self.ldab + kv + t] * x[j];
            }
        }
        for j in (0..n).rev() {
            x[j] /= self.ab[j * self.ldab + kv];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                x[i] -= self.ab[j * self.ldab + (kv + i - j)] * x[j];
            }
        }
    }

    /// Smallest singular value of the (symmetric) factored matrix via power
    /// iteration on A^{-1} A^{-1}.
    pub fn sigma_min_symmetric(&self, iters: usize) -> f64 {
        let n = self.n;
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = (i as u64).wrapping_mul(0x2545f4914f6cdd1d) ^ 0x99;
                s ^= s >> 31;
                ((s % 2000) as f64) / 1000.0 - 1.0 + 0.01
            })
            .collect();
        let mut lam = 0.0f64;
        for _ in 0..iters {
            let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= scale);
            self.solve(&mut v);
            self.solve(&mut v);
            lam = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        if lam <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / lam.sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::fixture;
    use super::super::LatticeCoeffs;
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn region_families() {
        let full = Region::full_box(2, 0);
        assert!(full.contains(&[2, -2]));
        assert!(!full.contains(&[3, 0]));
        assert_eq!(full.vertices(1).len(), 25);

        let cut = Region { kind: RegionKind::OctantCut { signs: vec![1, -1] }, size: 2, j0: 0 };
        cut.validate(1).unwrap();
        assert!(!cut.contains(&[1, -1]), "strict orthant removed");
        assert!(cut.contains(&[1, 0]));
        assert!(cut.contains(&[0, -1]));
        assert_eq!(cut.vertices(1).len(), 25 - 4);

        let bad = Region { kind: RegionKind::OctantCut { signs: vec![1, 0] }, size: 2, j0: 0 };
        assert!(bad.validate(1).is_err());

        let rect = Region {
            kind: RegionKind::RectMinusShift {
                center: vec![0, 0],
                half_widths: vec![2, 1],
                shift: vec![1, 1],
            },
            size: 3,
            j0: 0,
        };
        rect.validate(1).unwrap();
        assert!(rect.contains(&[-2, -1]));
        assert!(!rect.contains(&[1, 1]), "translate removed");
    }

    #[test]
    fn diagonal_structure_and_theta_shift() {
        let eig = fixture(10, 3);
        let u = LatticeCoeffs::new(1, 3, vec![]);
        let t0 = assemble_t(0.0, &[0.3], &u, &eig, 0.0, 1, 3).unwrap();
        let t1 = assemble_t(0.7, &[0.3], &u, &eig, 0.0, 1, 3).unwrap();
        for n in [-2i64, 0, 2] {
            for j in [-5i64, 1, 4] {
                let d0p = t0.diagonal(&[n], j, 0);
                let d1p = t1.diagonal(&[n], j, 0);
                assert!((d1p - d0p - 0.7).abs() < 1e-15);
                let d0m = t0.diagonal(&[n], j, 1);
                let d1m = t1.diagonal(&[n], j, 1);
                assert!((d1m - d0m + 0.7).abs() < 1e-15);
                assert!((d0p - (n as f64 * 0.3 + eig.eigenvalue(j))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn diagonal_inverse_norm() {
        let eig = fixture(8, 5);
        let u = LatticeCoeffs::new(1, 3, vec![]);
        let op = assemble_t(0.05, &[0.21], &u, &eig, 0.0, 1, 3).unwrap();
        let region = Region::full_box(3, 0);
        let inv = restricted_inverse(&op, &region).unwrap();
        let mut min_diag = f64::INFINITY;
        for (n, j) in &inv.vertices {
            for s in 0..2 {
                min_diag = min_diag.min(op.diagonal(n, *j, s).abs());
            }
        }
        assert!((inv.norm - 1.0 / min_diag).abs() <= 1e-8 / min_diag, "{} vs {}", inv.norm, 1.0 / min_diag);
    }

    #[test]
    fn single_vertex_region() {
        let eig = fixture(8, 7);
        let u = LatticeCoeffs::new(1, 1, vec![]);
        let op = assemble_t(0.0, &[0.4], &u, &eig, 0.0, 1, 1);
        let op = op.unwrap();
        let region = Region::full_box(0, 2);
        let inv = restricted_inverse(&op, &region).unwrap();
        assert_eq!(inv.vertices.len(), 1);
        let d = op.diagonal(&[0], 2, 0).abs().min(op.diagonal(&[0], 2, 1).abs());
        assert!((inv.norm - 1.0 / d).abs() < 1e-9 / d);
    }

    #[test]
    fn restricted_inverse_matches_dense_oracle_and_banded_path() {
        let eig = fixture(12, 11);
        let mut u = LatticeCoeffs::new(1, 4, vec![]);
        u.set(vec![-1], 2, Complex64::new(1.2, 0.0)).unwrap();
        u.set(vec![0], -1, Complex64::new(0.4, 0.0)).unwrap();
        let delta = 1e-2;
        let op = assemble_t(0.11, &[0.37], &u, &eig, delta, 1, 4).unwrap();
        let region = Region::full_box(3, 0);
        let inv = restricted_inverse(&op, &region).unwrap();
        let m = inv.vertices.len() * 2;
        assert!(m <= 400, "oracle check region should stay small");

        // Oracle 1: the factorization inverts the entry-built matrix.
        let mut rhs = vec![Complex64::new(0.0, 0.0); m];
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = Complex64::new(1.0 / (i as f64 + 2.0), 0.3);
        }
        let mut x = rhs.clone();
        inv.solve(&mut x);
        let mut back = vec![Complex64::new(0.0, 0.0); m];
        for (vi, (n, j)) in inv.vertices.iter().enumerate() {
            for s in 0..2 {
                let row = vi * 2 + s;
                let mut acc = Complex64::new(0.0, 0.0);
                for (vk, (np, jp)) in inv.vertices.iter().enumerate() {
                    for sp in 0..2 {
                        let col = vk * 2 + sp;
                        acc += op.entry((n, *j, s), (np, *jp, sp)) * x[col];
                    }
                }
                back[row] = acc;
            }
        }
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).norm() < 1e-9, "dense residual {}", (a - b).norm());
        }

        // Oracle 2: the banded real path solves the same system.
        let flat: Vec<(NVec, i64, usize)> = inv
            .vertices
            .iter()
            .flat_map(|(n, j)| [(n.clone(), *j, 0usize), (n.clone(), *j, 1usize)])
            .collect();
        let band = m - 1; // generous band: exactness is what matters here
        let lu = BandedLu::factor(
            m,
            band,
            |r, c| {
                let (n, j, s) = &flat[r];
                let (np, jp, sp) = &flat[c];
                op.entry((n, *j, *s), (np, *jp, *sp)).re
            },
            1e-14,
        )
        .unwrap();
        let mut xr: Vec<f64> = rhs.iter().map(|c| c.re).collect();
        lu.solve(&mut xr);
        for (a, b) in xr.iter().zip(&x) {
            assert!((a - b.re).abs() < 1e-9, "banded vs dense: {a} vs {}", b.re);
        }
    }

    #[test]
    fn singular_restriction_names_vertex() {
        let eig = fixture(6, 13);
        let u = LatticeCoeffs::new(1, 2, vec![]);
        // theta tuned to put one diagonal entry at exactly zero.
        let target_j = 1i64;
        let omega = [0.29];
        let theta = -(2.0 * omega[0] + eig.eigenvalue(target_j));
        let op = assemble_t(theta, &omega, &u, &eig, 0.0, 1, 2).unwrap();
        let region = Region::full_box(2, 0);
        let err = restricted_inverse(&op, &region).unwrap_err();
        match err {
            Error::ResonanceFailure { n, j, sector, .. } => {
                assert_eq!(n, vec![2]);
                assert_eq!(j, target_j);
                assert_eq!(sector, 0);
            }
            other => panic!("expected resonance failure, got {other}"),
        }
    }

    #[test]
    fn banded_lu_random_band_system() {
        // Pseudo-random diagonally-dominant band matrix vs direct multiply.
        let n = 60;
        let band = 4;
        let ent = |i: usize, j: usize| -> f64 {
            if i.abs_diff(j) > band {
                return 0.0;
            }
            let mut s = ((i * 131 + j * 17) as u64).wrapping_mul(0x9e3779b97f4a7c15);
            s ^= s >> 30;
            let v = ((s % 2000) as f64) / 1000.0 - 1.0;
            if i == j {
                v + 6.0
            } else {
                v
            }
        };
        let lu = BandedLu::factor(n, band, ent, 1e-14).unwrap();
        let x0: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        for i in 0..n {
            for j in i.saturating_sub(band)..=(i + band).min(n - 1) {
                b[i] += ent(i, j) * x0[j];
            }
        }
        lu.solve(&mut b);
        for (a, w) in b.iter().zip(&x0) {
            assert!((a - w).abs() < 1e-10);
        }
    }
}
