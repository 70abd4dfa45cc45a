//! Random potentials on finite 1-D boxes, the tight-binding Hamiltonian
//! H = -Delta + V with Dirichlet truncation, its full eigensystem, and the
//! center-monotone relabelling of eigenfunctions.

mod eigensolve;

pub use eigensolve::{eigensolve, tridiag_eigenvalues, RawEigenPairs, TriDiag};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disorder distribution on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistributionSpec {
    Uniform01,
    /// Piecewise-linear density through `(value, density)` nodes with unit
    /// integral; sampled by inverse CDF.
    TabulatedDensity(Vec<(f64, f64)>),
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Uniform01 => Ok(()),
            DistributionSpec::TabulatedDensity(table) => {
                if table.len() < 2 {
                    return Err(Error::Config("density table needs at least 2 nodes".into()));
                }
                for w in table.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::Config("density nodes must be strictly increasing".into()));
                    }
                }
                for &(v, d) in table {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Config(format!("density node {v} outside [0,1]")));
                    }
                    if d < 0.0 || !d.is_finite() {
                        return Err(Error::Config(format!("negative or non-finite density {d}")));
                    }
                }
                let integral: f64 = table
                    .windows(2)
                    .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
                    .sum();
                if (integral - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "density integrates to {integral}, expected 1 within 1e-9"
                    )));
                }
                Ok(())
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha12Rng) -> f64 {
        match self {
            DistributionSpec::Uniform01 => rng.gen::<f64>(),
            DistributionSpec::TabulatedDensity(table) => {
                let u: f64 = rng.gen::<f64>();
                // Cumulative mass per cell (trapezoid); piecewise quadratic CDF.
                let mut acc = 0.0;
                for w in table.windows(2) {
                    let (v0, d0) = w[0];
                    let (v1, d1) = w[1];
                    let width = v1 - v0;
                    let mass = 0.5 * (d0 + d1) * width;
                    if u <= acc + mass || std::ptr::eq(w.as_ptr(), table[table.len() - 2..].as_ptr()) {
                        let c = (u - acc).clamp(0.0, mass);
                        let a = 0.5 * (d1 - d0) * width;
                        let b = d0 * width;
                        let s = if a.abs() < 1e-300 {
                            if b > 0.0 {
                                c / b
                            } else {
                                0.5
                            }
                        } else {
                            let disc = (b * b + 4.0 * a * c).max(0.0);
                            ((-b + disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0)
                        };
                        return v0 + s * width;
                    }
                    acc += mass;
                }
                table[table.len() - 1].0
            }
        }
    }
}

/// Closed integer interval of lattice sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Box1D {
    pub lo: i64,
    pub hi: i64,
}

impl Box1D {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::Config(format!("empty box [{lo}, {hi}]")));
        }
        Ok(Box1D { lo, hi })
    }

    /// Symmetric box [-radius, radius].
    pub fn symmetric(radius: i64) -> Self {
        Box1D { lo: -radius, hi: radius }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, site: i64) -> bool {
        site >= self.lo && site <= self.hi
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }

    pub fn index_of(&self, site: i64) -> usize {
        debug_assert!(self.contains(site));
        (site - self.lo) as usize
    }
}

/// One realization of the i.i.d. potential on a box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialSample {
    pub box_: Box1D,
    pub values: Vec<f64>,
    pub seed: u64,
    pub distribution: DistributionSpec,
}

impl PotentialSample {
    pub fn value(&self, site: i64) -> f64 {
        self.values[self.box_.index_of(site)]
    }

    /// Restriction to a sub-box, keeping the stored values.
    pub fn restrict(&self, sub: Box1D) -> Result<PotentialSample> {
        if sub.lo < self.box_.lo || sub.hi > self.box_.hi {
            return Err(Error::Range(format!(
                "restriction [{}, {}] leaves sample box [{}, {}]",
                sub.lo, sub.hi, self.box_.lo, self.box_.hi
            )));
        }
        let values = sub.sites().map(|s| self.value(s)).collect();
        Ok(PotentialSample { box_: sub, values, seed: self.seed, distribution: self.distribution.clone() })
    }
}

/// Draw i.i.d. potential values on `box_`. Deterministic in (dist, box, seed);
/// the stream is consumed site by site from `lo` to `hi`.
pub fn sample_potential(dist: &DistributionSpec, box_: Box1D, seed: u64) -> Result<PotentialSample> {
    dist.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values: Vec<f64> = box_.sites().map(|_| dist.draw(&mut rng)).collect();
    debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    Ok(PotentialSample { box_, values, seed, distribution: dist.clone() })
}

/// H = -Delta + V restricted to the sample box: V(x) on the diagonal, -1 on
/// the two off-diagonals, Dirichlet cut at the ends.
pub fn assemble_hamiltonian(v: &PotentialSample) -> TriDiag {
    let n = v.box_.len();
    TriDiag::new(v.values.clone(), vec![-1.0; n.saturating_sub(1)])
}

/// Site of maximal |phi|; ties resolve to the maximizer closest to the
/// origin, preferring the nonnegative one at equal distance.
pub fn localization_center(phi: &[f64], box_: Box1D) -> Result<i64> {
    let mut best: Option<(f64, i64)> = None;
    for (i, &x) in phi.iter().enumerate() {
        let site = box_.lo + i as i64;
        let a = x.abs();
        match best {
            None => best = Some((a, site)),
            Some((amax, smax)) => {
                if a > amax || (a == amax && tie_prefers(site, smax)) {
                    best = Some((a, site));
                }
            }
        }
    }
    match best {
        Some((a, site)) if a > 0.0 => Ok(site),
        _ => Err(Error::Domain("all-zero eigenvector has no localization center".into())),
    }
}

/// True when `cand` beats `cur` under the closest-to-origin, prefer-nonnegative rule.
fn tie_prefers(cand: i64, cur: i64) -> bool {
    let (ca, cu) = (cand.abs(), cur.abs());
    ca < cu || (ca == cu && cand >= 0 && cur < 0)
}

/// Relabelled eigensystem: label j runs over the box itself
/// (`j = label_offset + array index`), localization centers are
/// nondecreasing in j, ties ordered by ascending eigenvalue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenSystem {
    pub box_: Box1D,
    pub eigenvalues: Vec<f64>,
    /// Row-major: row k is the eigenvector of `eigenvalues[k]` over the box.
    pub eigenvectors: Vec<f64>,
    pub centers: Vec<i64>,
    pub label_offset: i64,
}

impl EigenSystem {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn labels(&self) -> std::ops::RangeInclusive<i64> {
        self.label_offset..=(self.label_offset + self.n() as i64 - 1)
    }

    pub fn contains_label(&self, j: i64) -> bool {
        self.labels().contains(&j)
    }

    pub fn idx(&self, j: i64) -> usize {
        debug_assert!(self.contains_label(j), "label {j} outside {:?}", self.labels());
        (j - self.label_offset) as usize
    }

    pub fn eigenvalue(&self, j: i64) -> f64 {
        self.eigenvalues[self.idx(j)]
    }

    pub fn center(&self, j: i64) -> i64 {
        self.centers[self.idx(j)]
    }

    pub fn eigenvector(&self, j: i64) -> &[f64] {
        let n = self.box_.len();
        let k = self.idx(j);
        &self.eigenvectors[k * n..(k + 1) * n]
    }

    fn row(&self, k: usize) -> &[f64] {
        let n = self.box_.len();
        &self.eigenvectors[k * n..(k + 1) * n]
    }

    /// Coefficients <phi_j, field> for every label, in array order.
    pub fn to_eigen(&self, field: &[Complex64]) -> Vec<Complex64> {
        let n = self.box_.len();
        assert_eq!(field.len(), n);
        (0..self.n())
            .map(|k| {
                let row = self.row(k);
                let mut acc = Complex64::new(0.0, 0.0);
                for (p, f) in row.iter().zip(field.iter()) {
                    acc += f * p;
                }
                acc
            })
            .collect()
    }

    /// Field sum_j c_j phi_j from coefficients in array order.
    pub fn from_eigen(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let n = self.box_.len();
        assert_eq!(coeffs.len(), self.n());
        let mut field = vec![Complex64::new(0.0, 0.0); n];
        for (k, c) in coeffs.iter().enumerate() {
            if c.norm_sqr() == 0.0 {
                continue;
            }
            for (f, p) in field.iter_mut().zip(self.row(k).iter()) {
                *f += c * p;
            }
        }
        field
    }

    /// Real-field variant of `to_eigen`.
    pub fn to_eigen_real(&self, field: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|k| self.row(k).iter().zip(field.iter()).map(|(p, f)| p * f).sum())
            .collect()
    }

    /// Max deviation of <phi_i, phi_j> from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            let ri = self.row(i);
            for j in i..n {
                let dot: f64 = ri.iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expect).abs());
            }
        }
        worst
    }

    /// Max deviation of the two completeness sums from 1: per eigenvector
    /// (sum over sites of phi^2) and per site (sum over eigenvectors).
    pub fn parseval_defects(&self) -> (f64, f64) {
        let n = self.n();
        let mut by_vector = 0.0f64;
        let mut site_sums = vec![0.0f64; self.box_.len()];
        for k in 0..n {
            let row = self.row(k);
            let mut s = 0.0;
            for (i, &x) in row.iter().enumerate() {
                s += x * x;
                site_sums[i] += x * x;
            }
            by_vector = by_vector.max((s - 1.0).abs());
        }
        let by_site = site_sums.iter().map(|s| (s - 1.0).abs()).fold(0.0f64, f64::max);
        (by_vector, by_site)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Relabel raw ascending-eigenvalue pairs so centers are nondecreasing in the
/// label; equal centers order by ascending eigenvalue. Labels run over the
/// box (`label_offset = box.lo`).
pub fn relabel(raw: RawEigenPairs, centers: Vec<i64>, box_: Box1D) -> Result<EigenSystem> {
    let n = raw.values.len();
    if centers.len() != n {
        return Err(Error::Domain(format!(
            "{} centers for {} eigenpairs",
            centers.len(),
            n
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Raw pairs are eigenvalue-sorted, so a stable sort by center alone
    // leaves equal-center groups in ascending eigenvalue order.
    order.sort_by_key(|&k| centers[k]);

    let width = box_.len();
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = vec![0.0; n * width];
    let mut sorted_centers = Vec::with_capacity(n);
    for (new_k, &old_k) in order.iter().enumerate() {
        eigenvalues.push(raw.values[old_k]);
        sorted_centers.push(centers[old_k]);
        eigenvectors[new_k * width..(new_k + 1) * width].copy_from_slice(&raw.vectors[old_k]);
    }
    Ok(EigenSystem {
        box_,
        eigenvalues,
        eigenvectors,
        centers: sorted_centers,
        label_offset: box_.lo,
    })
}

/// Sample, diagonalize and relabel in one step.
pub fn eigensystem_for(v: &PotentialSample) -> Result<EigenSystem> {
    let h = assemble_hamiltonian(v);
    let raw = eigensolve(&h)?;
    let centers = raw
        .vectors
        .iter()
        .map(|phi| localization_center(phi, v.box_))
        .collect::<Result<Vec<_>>>()?;
    relabel(raw, centers, v.box_)
}

/// Least-squares exponential profile of an eigenvector around its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Per-site log-decay rate (clamped at 0).
    pub gamma_hat: f64,
    /// Log-amplitude intercept.
    pub c_hat: f64,
    pub rmse: f64,
}

/// Amplitudes at or below this floor are excluded from decay fits to avoid
/// log underflow.
pub const DECAY_FLOOR: f64 = 1e-14;

/// Fit log|phi(l)| against -|l - center| over sites above the floor.
pub fn decay_profile(phi: &[f64], center: i64, box_: Box1D) -> Result<DecayFit> {
    if !box_.contains(center) {
        return Err(Error::Range(format!("center {center} outside box")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &p) in phi.iter().enumerate() {
        let a = p.abs();
        if a > DECAY_FLOOR {
            let site = box_.lo + i as i64;
            xs.push(-((site - center).abs() as f64));
            ys.push(a.ln());
        }
    }
    fit_line(&xs, &ys).map(|(slope, intercept, rmse)| DecayFit {
        gamma_hat: slope.max(0.0),
        c_hat: intercept,
        rmse,
    })
}

/// Ordinary least squares y = slope * x + intercept; needs >= 3 points.
pub(crate) fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let m = xs.len();
    if m < 3 {
        return Err(Error::FitUndefined(format!("only {m} usable points, need 3")));
    }
    let mf = m as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = mf * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::FitUndefined("degenerate abscissae".into()));
    }
    let slope = (mf * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / mf;
    let rmse = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum::<f64>()
        / mf)
        .sqrt();
    Ok((slope, intercept, rmse))
}

/// The tangential data: per mode k a window `boxes[k]` around `beta[k]`, the
/// chosen label `alphas[k]` with center inside the window, the prescribed
/// amplitude, and the linear frequency omega0[k] (the chosen eigenvalue).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSelection {
    pub b: usize,
    pub boxes: Vec<Box1D>,
    pub alphas: Vec<i64>,
    pub amplitudes: Vec<f64>,
    pub omega0: Vec<f64>,
}

/// Validate the mode-geometry constraints: 10L <= |beta_k| <= L^3 and
/// pairwise |beta_k - beta_k'| >= 10L. Returns the violated inequality.
pub fn validate_mode_geometry(beta: &[i64], big_l: i64) -> Result<()> {
    if big_l < 1 {
        return Err(Error::Config("window radius L must be >= 1".into()));
    }
    for (k, &bk) in beta.iter().enumerate() {
        if bk.abs() < 10 * big_l {
            return Err(Error::Config(format!(
                "mode geometry violated: |beta_{k}| = {} < 10 L = {}",
                bk.abs(),
                10 * big_l
            )));
        }
        if bk.abs() > big_l.pow(3) {
            return Err(Error::Config(format!(
                "mode geometry violated: |beta_{k}| = {} > L^3 = {}",
                bk.abs(),
                big_l.pow(3)
            )));
        }
    }
    for k in 0..beta.len() {
        for k2 in (k + 1)..beta.len() {
            if (beta[k] - beta[k2]).abs() < 10 * big_l {
                return Err(Error::Config(format!(
                    "mode geometry violated: |beta_{k} - beta_{k2}| = {} < 10 L = {}",
                    (beta[k] - beta[k2]).abs(),
                    10 * big_l
                )));
            }
        }
    }
    Ok(())
}

/// Pick one label per window: center inside `[beta_k - L, beta_k + L]`,
/// smallest |eigenvalue| among the candidates.
pub fn select_modes(
    eig: &EigenSystem,
    beta: &[i64],
    big_l: i64,
    amplitudes: &[f64],
) -> Result<ModeSelection> {
    validate_mode_geometry(beta, big_l)?;
    if amplitudes.len() != beta.len() {
        return Err(Error::Config("one amplitude per mode window required".into()));
    }
    for &a in amplitudes {
        if !(1.0..=2.0).contains(&a) {
            return Err(Error::Config(format!("amplitude {a} outside [1, 2]")));
        }
    }
    let mut alphas = Vec::with_capacity(beta.len());
    let mut boxes = Vec::with_capacity(beta.len());
    let mut omega0 = Vec::with_capacity(beta.len());
    let mut empty = Vec::new();
    for (k, &bk) in beta.iter().enumerate() {
        let window = Box1D { lo: bk - big_l, hi: bk + big_l };
        boxes.push(window);
        let mut best: Option<(f64, i64)> = None;
        for j in eig.labels() {
            if window.contains(eig.center(j)) {
                let mu = eig.eigenvalue(j).abs();
                if best.map_or(true, |(m, _)| mu < m) {
                    best = Some((mu, j));
                }
            }
        }
        match best {
            Some((_, j)) => {
                alphas.push(j);
                omega0.push(eig.eigenvalue(j));
            }
            None => empty.push(k),
        }
    }
    if !empty.is_empty() {
        return Err(Error::Domain(format!(
            "mode windows without any localization center: {empty:?}"
        )));
    }
    Ok(ModeSelection { b: beta.len(), boxes, alphas, amplitudes: amplitudes.to_vec(), omega0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_sample(radius: i64, seed: u64) -> PotentialSample {
        sample_potential(&DistributionSpec::Uniform01, Box1D::symmetric(radius), seed).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let a = sample_potential(&DistributionSpec::Uniform01, Box1D::new(0, 0).unwrap(), 7).unwrap();
        let b = sample_potential(&DistributionSpec::Uniform01, Box1D::new(0, 0).unwrap(), 7).unwrap();
        assert_eq!(a.values, b.values);
        assert!((0.0..=1.0).contains(&a.values[0]));

        let c = uniform_sample(2, 7);
        let d = uniform_sample(2, 8);
        assert_eq!(c.values.len(), 5);
        assert_ne!(c.values, d.values);
    }

    #[test]
    fn law_of_large_numbers_mean() {
        // Oracle: direct averaging of 10001 i.i.d. Uniform[0,1] draws.
        let v = uniform_sample(5000, 1);
        let mean = v.values.iter().sum::<f64>() / v.values.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn tabulated_density_validation() {
        let bad = DistributionSpec::TabulatedDensity(vec![(0.0, 1.0), (1.0, -1.0)]);
        assert!(bad.validate().is_err());
        let non_unit = DistributionSpec::TabulatedDensity(vec![(0.0, 1.0), (1.0, 3.0)]);
        assert!(non_unit.validate().is_err());
        let ok = DistributionSpec::TabulatedDensity(vec![(0.0, 0.0), (0.5, 2.0), (1.0, 0.0)]);
        ok.validate().unwrap();
        let s = sample_potential(&ok, Box1D::symmetric(2000), 3).unwrap();
        assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
        // Triangle density has mean 1/2.
        let mean = s.values.iter().sum::<f64>() / s.values.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn hamiltonian_shape() {
        let mut v = uniform_sample(1, 5);
        v.values = vec![0.0, 0.0, 0.0];
        let h = assemble_hamiltonian(&v);
        assert_eq!(h.diag, vec![0.0, 0.0, 0.0]);
        assert_eq!(h.off, vec![-1.0, -1.0]);

        let single = PotentialSample {
            box_: Box1D::new(0, 0).unwrap(),
            values: vec![0.7],
            seed: 0,
            distribution: DistributionSpec::Uniform01,
        };
        let h1 = assemble_hamiltonian(&single);
        assert_eq!(h1.diag, vec![0.7]);
        assert!(h1.off.is_empty());
    }

    #[test]
    fn center_rules() {
        let box_ = Box1D::symmetric(7);
        let mut phi = vec![0.0; box_.len()];
        phi[box_.index_of(5)] = 1.0;
        assert_eq!(localization_center(&phi, box_).unwrap(), 5);

        let mut tie = vec![0.0; box_.len()];
        tie[box_.index_of(-3)] = 0.5;
        tie[box_.index_of(3)] = -0.5;
        assert_eq!(localization_center(&tie, box_).unwrap(), 3);

        let mut neg = vec![0.0; box_.len()];
        neg[box_.index_of(-7)] = 0.5;
        neg[box_.index_of(-2)] = 0.5;
        assert_eq!(localization_center(&neg, box_).unwrap(), -2);

        assert!(localization_center(&vec![0.0; box_.len()], box_).is_err());
    }

    #[test]
    fn center_matches_exhaustive_scan() {
        // Oracle: exhaustive argmax with the same tie rule, written separately.
        let v = uniform_sample(40, 11);
        let eig = eigensystem_for(&v).unwrap();
        for j in eig.labels() {
            let phi = eig.eigenvector(j);
            let mut cands: Vec<i64> = Vec::new();
            let mut best = 0.0f64;
            for (i, &x) in phi.iter().enumerate() {
                if x.abs() > best {
                    best = x.abs();
                    cands.clear();
                }
                if x.abs() == best {
                    cands.push(v.box_.lo + i as i64);
                }
            }
            cands.sort_by_key(|&s| (s.abs(), s < 0));
            assert_eq!(eig.center(j), cands[0]);
        }
    }

    #[test]
    fn relabel_contract() {
        let raw = RawEigenPairs {
            values: vec![1.0, 2.0, 3.0],
            vectors: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        };
        let centers = vec![5, -3, 5];
        let eig = relabel(raw, centers, Box1D::symmetric(1)).unwrap();
        assert_eq!(eig.centers, vec![-3, 5, 5]);
        assert_eq!(eig.eigenvalues, vec![2.0, 1.0, 3.0]);
        assert_eq!(eig.label_offset, -1);
    }

    #[test]
    fn relabel_monotone_on_random_sample() {
        let v = uniform_sample(50, 23);
        let eig = eigensystem_for(&v).unwrap();
        for w in eig.centers.windows(2) {
            assert!(w[1] >= w[0], "centers must be nondecreasing");
        }
        // Bijection: eigenvalue multiset preserved.
        let h = assemble_hamiltonian(&v);
        let mut sorted = eig.eigenvalues.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let direct = tridiag_eigenvalues(&h).unwrap();
        for (a, b) in sorted.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn parseval_and_spectrum_range() {
        let v = uniform_sample(60, 31);
        let eig = eigensystem_for(&v).unwrap();
        let (by_vec, by_site) = eig.parseval_defects();
        assert!(by_vec <= 1e-10, "per-vector Parseval defect {by_vec}");
        assert!(by_site <= 1e-10, "per-site Parseval defect {by_site}");
        assert!(eig.orthonormality_defect() <= 1e-10);
        for &mu in &eig.eigenvalues {
            assert!((-2.0..=3.0).contains(&mu), "eigenvalue {mu} escapes [-2, 3]");
        }
    }

    #[test]
    fn decay_fit_exact_exponential() {
        let box_ = Box1D::symmetric(20);
        let mut phi: Vec<f64> = box_.sites().map(|s| (-0.5 * s.abs() as f64).exp()).collect();
        let norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
        phi.iter_mut().for_each(|x| *x /= norm);
        let fit = decay_profile(&phi, 0, box_).unwrap();
        assert!((fit.gamma_hat - 0.5).abs() < 1e-9, "gamma {}", fit.gamma_hat);
        assert!(fit.rmse < 1e-9);
    }

    #[test]
    fn decay_fit_flat_profile() {
        let box_ = Box1D::new(0, 4).unwrap();
        let phi = vec![0.3; 5];
        let fit = decay_profile(&phi, 2, box_).unwrap();
        assert!(fit.gamma_hat.abs() < 1e-9);
    }

    #[test]
    fn decay_fit_needs_three_sites() {
        let box_ = Box1D::new(0, 4).unwrap();
        let phi = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        assert!(matches!(decay_profile(&phi, 2, box_), Err(Error::FitUndefined(_))));
    }

    #[test]
    fn mode_selection_basics() {
        let v = uniform_sample(128, 41);
        let eig = eigensystem_for(&v).unwrap();
        let sel = select_modes(&eig, &[-100, 100], 8, &[1.5, 1.2]).unwrap();
        assert_ne!(sel.alphas[0], sel.alphas[1]);
        for k in 0..2 {
            assert!(sel.boxes[k].contains(eig.center(sel.alphas[k])));
            assert_eq!(sel.omega0[k], eig.eigenvalue(sel.alphas[k]));
        }
        // Chosen label minimizes |eigenvalue| among candidates in its window.
        for k in 0..2 {
            for j in eig.labels() {
                if sel.boxes[k].contains(eig.center(j)) {
                    assert!(eig.eigenvalue(sel.alphas[k]).abs() <= eig.eigenvalue(j).abs() + 1e-15);
                }
            }
        }
    }

    #[test]
    fn mode_geometry_errors_name_the_inequality() {
        let v = uniform_sample(128, 41);
        let eig = eigensystem_for(&v).unwrap();
        let err = select_modes(&eig, &[5], 8, &[1.0]).unwrap_err();
        assert!(format!("{err}").contains("10 L"), "{err}");
        let err = select_modes(&eig, &[600], 8, &[1.0]).unwrap_err();
        assert!(format!("{err}").contains("L^3"), "{err}");
        let err = select_modes(&eig, &[-100, -90], 8, &[1.0, 1.0]).unwrap_err();
        assert!(format!("{err}").contains("beta_0 - beta_1"), "{err}");
        let err = select_modes(&eig, &[-100], 8, &[2.5]).unwrap_err();
        assert!(format!("{err}").contains("[1, 2]"), "{err}");
    }

    #[test]
    fn eigensystem_json_roundtrip() {
        let v = uniform_sample(10, 3);
        let eig = eigensystem_for(&v).unwrap();
        let text = eig.to_json().unwrap();
        let back = EigenSystem::from_json(&text).unwrap();
        assert_eq!(eig.eigenvalues, back.eigenvalues);
        assert_eq!(eig.eigenvectors, back.eigenvectors);
        assert_eq!(eig.centers, back.centers);
        assert_eq!(text, back.to_json().unwrap());
    }
}
