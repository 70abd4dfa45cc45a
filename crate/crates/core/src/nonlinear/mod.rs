//! Eigenbasis nonlinearity for the doubled lattice system: sparse
//! coefficients on Z^b x labels, overlap tensors of eigenfunction products,
//! the multilinear forms W and W-tilde, and their analytic Jacobian.
//!
//! The multilinear sums are evaluated per frequency slab in site space:
//! a coefficient slab u(n, .) transforms to U_n(x) = sum_j u(n,j) phi_j(x),
//! products of slabs convolve over n pointwise in x, and one final
//! projection returns eigenbasis coefficients. This reorganizes the tuple
//! sum by associativity and keeps every overlap exact.

pub mod doubled;
pub mod ldt;

use std::collections::BTreeMap;
use std::sync::RwLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{decay_profile, EigenSystem};

pub type NVec = Vec<i64>;

/// Stored coefficients below this magnitude are dropped.
pub const COEFF_FLOOR: f64 = 1e-300;

/// Sparse complex coefficients on (n, j). The conjugate-sector coefficients
/// v(n, j) = conj(u(-n, j)) are always derived, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeCoeffs {
    pub b: usize,
    /// Max-metric support bound: stored entries satisfy
    /// max(|n|_inf, jdist(j)) <= support_radius.
    pub support_radius: i64,
    /// Label origins for the j-distance (the tangential labels); an empty
    /// list means distance to label 0.
    pub j_origins: Vec<i64>,
    entries: BTreeMap<(NVec, i64), Complex64>,
}

impl LatticeCoeffs {
    pub fn new(b: usize, support_radius: i64, j_origins: Vec<i64>) -> Self {
        LatticeCoeffs { b, support_radius, j_origins, entries: BTreeMap::new() }
    }

    pub fn jdist(&self, j: i64) -> i64 {
        if self.j_origins.is_empty() {
            j.abs()
        } else {
            self.j_origins.iter().map(|&o| (j - o).abs()).min().unwrap()
        }
    }

    fn reach(&self, n: &[i64], j: i64) -> i64 {
        n.iter().map(|k| k.abs()).max().unwrap_or(0).max(self.jdist(j))
    }

    pub fn set(&mut self, n: NVec, j: i64, value: Complex64) -> Result<()> {
        assert_eq!(n.len(), self.b);
        if value.norm() < COEFF_FLOOR {
            self.entries.remove(&(n, j));
            return Ok(());
        }
        let r = self.reach(&n, j);
        if r > self.support_radius {
            return Err(Error::Range(format!(
                "entry at (n={n:?}, j={j}) has reach {r} beyond support radius {}",
                self.support_radius
            )));
        }
        self.entries.insert((n, j), value);
        Ok(())
    }

    pub fn get(&self, n: &[i64], j: i64) -> Complex64 {
        self.entries.get(&(n.to_vec(), j)).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(NVec, i64), &Complex64)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_reach(&self) -> i64 {
        self.entries.keys().map(|(n, j)| self.reach(n, *j)).max().unwrap_or(0)
    }

    pub fn max_n_radius(&self) -> i64 {
        self.entries
            .keys()
            .map(|(n, _)| n.iter().map(|k| k.abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// JSON lines, one entry per line, in lexicographic (n, j) order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ((n, j), c) in &self.entries {
            out.push_str(&format!(
                "{}\n",
                serde_json::json!({"n": n, "j": j, "re": c.re, "im": c.im})
            ));
        }
        out
    }

    pub fn from_jsonl(
        b: usize,
        support_radius: i64,
        j_origins: Vec<i64>,
        text: &str,
    ) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            n: Vec<i64>,
            j: i64,
            re: f64,
            im: f64,
        }
        let mut out = LatticeCoeffs::new(b, support_radius, j_origins);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: Line = serde_json::from_str(line)?;
            if parsed.n.len() != b {
                return Err(Error::Config(format!(
                    "entry dimension {} does not match b = {b}",
                    parsed.n.len()
                )));
            }
            out.set(parsed.n, parsed.j, Complex64::new(parsed.re, parsed.im))?;
        }
        Ok(out)
    }
}

/// Memoized overlap tensor sum_x prod phi(x) over sorted index tuples, with
/// center-separation pruning backed by the fitted eigenfunction decay.
pub struct OverlapTensorCache<'a> {
    pub eig: &'a EigenSystem,
    pub p: usize,
    pub prune_tol: f64,
    memo: RwLock<BTreeMap<Vec<i64>, f64>>,
    gamma_min: f64,
}

impl<'a> OverlapTensorCache<'a> {
    pub fn new(eig: &'a EigenSystem, p: usize, prune_tol: f64) -> Self {
        // Smallest fitted decay rate over the box; a zero floor disables
        // pruning entirely, which is the safe direction.
        let gamma_min = eig
            .labels()
            .map(|j| {
                decay_profile(eig.eigenvector(j), eig.center(j), eig.box_)
                    .map(|f| f.gamma_hat)
                    .unwrap_or(0.0)
            })
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        OverlapTensorCache { eig, p, prune_tol, memo: RwLock::new(BTreeMap::new()), gamma_min }
    }

    /// Center spread beyond which a (2p+2)-tuple falls below the prune
    /// tolerance.
    pub fn prune_radius(&self) -> f64 {
        if self.gamma_min <= 0.0 || self.prune_tol <= 0.0 {
            f64::INFINITY
        } else {
            (2 * self.p + 2) as f64 * (1.0 / self.prune_tol).ln() / self.gamma_min
        }
    }

    pub fn overlap(&self, indices: &[i64]) -> f64 {
        debug_assert_eq!(indices.len(), 2 * self.p + 2);
        let mut key: Vec<i64> = indices.to_vec();
        key.sort_unstable();
        if let Some(&v) = self.memo.read().unwrap().get(&key) {
            return v;
        }
        let spread = {
            let centers: Vec<i64> = key.iter().map(|&j| self.eig.center(j)).collect();
            let lo = centers.iter().min().unwrap();
            let hi = centers.iter().max().unwrap();
            (hi - lo) as f64
        };
        let value = if spread > self.prune_radius() { 0.0 } else { overlap_direct(self.eig, &key) };
        self.memo.write().unwrap().insert(key, value);
        value
    }
}

/// Direct summation sum_x prod_i phi_{indices[i]}(x).
pub fn overlap_direct(eig: &EigenSystem, indices: &[i64]) -> f64 {
    let len = eig.box_.len();
    let rows: Vec<&[f64]> = indices.iter().map(|&j| eig.eigenvector(j)).collect();
    let mut total = 0.0;
    for x in 0..len {
        let mut prod = 1.0;
        for row in &rows {
            prod *= row[x];
        }
        total += prod;
    }
    total
}

/// Eigen-coordinate slabs: one dense vector over all labels per frequency n.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSlabs {
    pub b: usize,
    pub len: usize,
    pub slabs: BTreeMap<NVec, Vec<Complex64>>,
}

impl EigenSlabs {
    pub fn new(b: usize, len: usize) -> Self {
        EigenSlabs { b, len, slabs: BTreeMap::new() }
    }

    pub fn slab_mut(&mut self, n: &[i64]) -> &mut Vec<Complex64> {
        self.slabs.entry(n.to_vec()).or_insert_with(|| vec![Complex64::new(0.0, 0.0); self.len])
    }

    pub fn get(&self, n: &[i64], idx: usize) -> Complex64 {
        self.slabs.get(&n.to_vec()).map(|s| s[idx]).unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn norm(&self) -> f64 {
        self.slabs
            .values()
            .map(|s| s.iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.slabs.values().flat_map(|s| s.iter()).map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Site-space slabs U_n(x).
#[derive(Debug, Clone)]
pub struct XSlabs {
    pub b: usize,
    pub len: usize,
    pub slabs: BTreeMap<NVec, Vec<Complex64>>,
    peaks: BTreeMap<NVec, f64>,
}

impl XSlabs {
    fn new(b: usize, len: usize) -> Self {
        XSlabs { b, len, slabs: BTreeMap::new(), peaks: BTreeMap::new() }
    }

    fn insert(&mut self, n: NVec, data: Vec<Complex64>) {
        let peak = data.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if peak > 0.0 {
            self.peaks.insert(n.clone(), peak);
            self.slabs.insert(n, data);
        }
    }

    fn peak(&self, n: &NVec) -> f64 {
        self.peaks.get(n).copied().unwrap_or(0.0)
    }
}

/// Absolute amplitude floor for pruning slab products.
const PRODUCT_PRUNE: f64 = 1e-20;

/// Transform coefficients to site-space slabs.
pub fn coeffs_to_x(u: &LatticeCoeffs, eig: &EigenSystem) -> XSlabs {
    let len = eig.box_.len();
    let mut grouped: BTreeMap<NVec, Vec<(usize, Complex64)>> = BTreeMap::new();
    for ((n, j), &c) in u.iter() {
        grouped.entry(n.clone()).or_default().push((eig.idx(*j), c));
    }
    let mut out = XSlabs::new(u.b, len);
    for (n, terms) in grouped {
        let mut field = vec![Complex64::new(0.0, 0.0); len];
        for (idx, c) in terms {
            let row = &eig.eigenvectors[idx * len..(idx + 1) * len];
            for (f, &p) in field.iter_mut().zip(row) {
                *f += c * p;
            }
        }
        out.insert(n, field);
    }
    out
}

/// Site-space slabs of the conjugate sector v(n, j) = conj(u(-n, j)).
pub fn conj_coeffs_to_x(u: &LatticeCoeffs, eig: &EigenSystem) -> XSlabs {
    let len = eig.box_.len();
    let mut grouped: BTreeMap<NVec, Vec<(usize, Complex64)>> = BTreeMap::new();
    for ((n, j), &c) in u.iter() {
        let flipped: NVec = n.iter().map(|&k| -k).collect();
        grouped.entry(flipped).or_default().push((eig.idx(*j), c.conj()));
    }
    let mut out = XSlabs::new(u.b, len);
    for (n, terms) in grouped {
        let mut field = vec![Complex64::new(0.0, 0.0); len];
        for (idx, c) in terms {
            let row = &eig.eigenvectors[idx * len..(idx + 1) * len];
            for (f, &p) in field.iter_mut().zip(row) {
                *f += c * p;
            }
        }
        out.insert(n, field);
    }
    out
}

/// Pointwise product convolved over the frequency lattice:
/// out_k = sum_{a+b=k} A_a .* B_b, restricted to |k|_inf <= target_radius.
fn convolve(a: &XSlabs, b: &XSlabs, target_radius: Option<i64>, budget: &mut i64) -> Result<XSlabs> {
    let mut out = XSlabs::new(a.b, a.len);
    let mut acc: BTreeMap<NVec, Vec<Complex64>> = BTreeMap::new();
    for (na, slab_a) in &a.slabs {
        let peak_a = a.peak(na);
        for (nb, slab_b) in &b.slabs {
            if peak_a * b.peak(nb) <= PRODUCT_PRUNE {
                continue;
            }
            let k: NVec = na.iter().zip(nb).map(|(x, y)| x + y).collect();
            if let Some(r) = target_radius {
                if k.iter().any(|c| c.abs() > r) {
                    continue;
                }
            }
            *budget -= a.len as i64;
            if *budget < 0 {
                return Err(Error::Resource("support too large: slab-product budget exceeded".into()));
            }
            let dst = acc.entry(k).or_insert_with(|| vec![Complex64::new(0.0, 0.0); a.len]);
            for ((d, &x), &y) in dst.iter_mut().zip(slab_a).zip(slab_b) {
                *d += x * y;
            }
        }
    }
    for (k, data) in acc {
        out.insert(k, data);
    }
    Ok(out)
}

/// Project site-space slabs back to eigen coordinates.
fn x_to_eigen(w: &XSlabs, eig: &EigenSystem) -> EigenSlabs {
    let len = eig.box_.len();
    let mut out = EigenSlabs::new(w.b, len);
    for (n, field) in &w.slabs {
        out.slabs.insert(n.clone(), eig.to_eigen(field));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WSector {
    Plain,
    Tilde,
}

/// The degree-(2p+1) form: in the plain sector
/// W(n, j) = sum u(n', j') prod_m u(n_m, l_m) v(n'_m, l'_m) x overlap,
/// summed over n' + sum_m (n_m + n'_m) = n, evaluated as U * P^(*p) with
/// P = U * V; the tilde sector swaps the roles of U and V. Output is
/// restricted to |n|_inf <= target_radius when given.
pub fn assemble_w(
    u: &LatticeCoeffs,
    eig: &EigenSystem,
    p: usize,
    sector: WSector,
    target_radius: Option<i64>,
) -> Result<EigenSlabs> {
    assemble_w_budgeted(u, eig, p, sector, target_radius, DEFAULT_W_BUDGET)
}

/// `assemble_w` with an explicit slab-product budget.
pub fn assemble_w_budgeted(
    u: &LatticeCoeffs,
    eig: &EigenSystem,
    p: usize,
    sector: WSector,
    target_radius: Option<i64>,
    budget: i64,
) -> Result<EigenSlabs> {
    assert!(p >= 1);
    let mut budget = budget;
    let u_x = coeffs_to_x(u, eig);
    let v_x = conj_coeffs_to_x(u, eig);
    if u_x.slabs.is_empty() {
        return Ok(EigenSlabs::new(u.b, eig.box_.len()));
    }
    // Intermediates may exceed the output radius by the reach of the factors
    // still to come; pad generously and let magnitude pruning do the rest.
    let lead = u.max_n_radius();
    let inner = target_radius.map(|r| r + (2 * p as i64 + 1) * lead.max(1));
    let pair = convolve(&u_x, &v_x, inner, &mut budget)?;
    let mut power = pair.clone();
    for _ in 1..p {
        power = convolve(&power, &pair, inner, &mut budget)?;
    }
    let lead_slabs = match sector {
        WSector::Plain => &u_x,
        WSector::Tilde => &v_x,
    };
    let w_x = convolve(lead_slabs, &power, target_radius, &mut budget)?;
    Ok(x_to_eigen(&w_x, eig))
}

/// Evaluation budget: total slab-product element operations allowed per
/// assembly (resource guard against runaway supports).
pub const DEFAULT_W_BUDGET: i64 = 2_000_000_000;

/// Frequency-offset kernels of the linearization: each block of the doubled
/// Jacobian has entries sum_x phi_j(x) K_offset(x) phi_j'(x), Toeplitz in n
/// by construction.
#[derive(Debug, Clone)]
pub struct JacobianKernel {
    pub b: usize,
    pub len: usize,
    pub p: usize,
    /// dW/du and dWtilde/dv kernel: (p+1) P^(*p).
    pub gp: BTreeMap<NVec, Vec<Complex64>>,
    /// dW/dv kernel: p (U*U) * P^(*(p-1)).
    pub huv: BTreeMap<NVec, Vec<Complex64>>,
    /// dWtilde/du kernel: p (V*V) * P^(*(p-1)).
    pub hvu: BTreeMap<NVec, Vec<Complex64>>,
}

/// Build the Jacobian kernels at the current coefficients.
pub fn jacobian_kernel(
    u: &LatticeCoeffs,
    eig: &EigenSystem,
    p: usize,
    offset_radius: Option<i64>,
) -> Result<JacobianKernel> {
    assert!(p >= 1);
    let mut budget = DEFAULT_W_BUDGET;
    let len = eig.box_.len();
    let u_x = coeffs_to_x(u, eig);
    let v_x = conj_coeffs_to_x(u, eig);
    let mut kernel =
        JacobianKernel { b: u.b, len, p, gp: BTreeMap::new(), huv: BTreeMap::new(), hvu: BTreeMap::new() };
    if u_x.slabs.is_empty() {
        return Ok(kernel);
    }
    let pair = convolve(&u_x, &v_x, offset_radius, &mut budget)?;
    let mut power = pair.clone();
    for _ in 1..p {
        power = convolve(&power, &pair, offset_radius, &mut budget)?;
    }
    for (n, data) in &power.slabs {
        kernel.gp.insert(n.clone(), data.iter().map(|c| c * (p as f64 + 1.0)).collect());
    }
    let uu = convolve(&u_x, &u_x, offset_radius, &mut budget)?;
    let vv = convolve(&v_x, &v_x, offset_radius, &mut budget)?;
    let (uu_full, vv_full) = if p >= 2 {
        let mut pw = pair.clone();
        for _ in 2..p {
            pw = convolve(&pw, &pair, offset_radius, &mut budget)?;
        }
        (
            convolve(&uu, &pw, offset_radius, &mut budget)?,
            convolve(&vv, &pw, offset_radius, &mut budget)?,
        )
    } else {
        (uu, vv)
    };
    for (n, data) in &uu_full.slabs {
        kernel.huv.insert(n.clone(), data.iter().map(|c| c * p as f64).collect());
    }
    for (n, data) in &vv_full.slabs {
        kernel.hvu.insert(n.clone(), data.iter().map(|c| c * p as f64).collect());
    }
    Ok(kernel)
}

/// Doubled-sector coefficient pair (plus = u rows, minus = v rows).
#[derive(Debug, Clone, PartialEq)]
pub struct DoubledSlabs {
    pub plus: EigenSlabs,
    pub minus: EigenSlabs,
}

impl DoubledSlabs {
    pub fn new(b: usize, len: usize) -> Self {
        DoubledSlabs { plus: EigenSlabs::new(b, len), minus: EigenSlabs::new(b, len) }
    }

    pub fn norm(&self) -> f64 {
        (self.plus.norm().powi(2) + self.minus.norm().powi(2)).sqrt()
    }
}

impl JacobianKernel {
    /// Largest |offset| coordinate with a stored kernel slab.
    pub fn offset_radius(&self) -> i64 {
        self.gp
            .keys()
            .chain(self.huv.keys())
            .chain(self.hvu.keys())
            .map(|n| n.iter().map(|k| k.abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// One Jacobian block entry: block (r, r') at offset n - n' between
    /// labels j and j'.
    pub fn entry(
        &self,
        eig: &EigenSystem,
        r: usize,
        rp: usize,
        offset: &[i64],
        j: i64,
        jp: i64,
    ) -> Complex64 {
        let map = match (r, rp) {
            (0, 0) | (1, 1) => &self.gp,
            (0, 1) => &self.huv,
            (1, 0) => &self.hvu,
            _ => panic!("sector index out of range"),
        };
        let Some(profile) = map.get(&offset.to_vec()) else {
            return Complex64::new(0.0, 0.0);
        };
        let pj = eig.eigenvector(j);
        let pk = eig.eigenvector(jp);
        let mut acc = Complex64::new(0.0, 0.0);
        for ((&a, g), &c) in pj.iter().zip(profile).zip(pk) {
            acc += g * (a * c);
        }
        acc
    }

    /// Apply the doubled Jacobian to slab coefficients, restricted to output
    /// slabs with |n|_inf <= out_radius. Input slabs with norm below
    /// `skip_tol` are ignored.
    pub fn apply(
        &self,
        eig: &EigenSystem,
        z: &DoubledSlabs,
        out_radius: i64,
        skip_tol: f64,
    ) -> DoubledSlabs {
        let len = self.len;
        let mut out = DoubledSlabs::new(self.b, len);
        let mut zx_plus: BTreeMap<NVec, Vec<Complex64>> = BTreeMap::new();
        let mut zx_minus: BTreeMap<NVec, Vec<Complex64>> = BTreeMap::new();
        for (src, dst) in [(&z.plus, &mut zx_plus), (&z.minus, &mut zx_minus)] {
            for (n, coeffs) in &src.slabs {
                if coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() <= skip_tol {
                    continue;
                }
                dst.insert(n.clone(), eig.from_eigen(coeffs));
            }
        }
        let len_c = len;
        let add = |acc: &mut BTreeMap<NVec, Vec<Complex64>>,
                       kernel: &BTreeMap<NVec, Vec<Complex64>>,
                       zx: &BTreeMap<NVec, Vec<Complex64>>| {
            for (np, field) in zx {
                for (off, profile) in kernel {
                    let n: NVec = np.iter().zip(off).map(|(a, b)| a + b).collect();
                    if n.iter().any(|c| c.abs() > out_radius) {
                        continue;
                    }
                    let dst = acc.entry(n).or_insert_with(|| vec![Complex64::new(0.0, 0.0); len_c]);
                    for ((d, &g), &f) in dst.iter_mut().zip(profile).zip(field) {
                        *d += g * f;
                    }
                }
            }
        };
        let mut acc_plus: BTreeMap<NVec, Vec<Complex64>> = BTreeMap::new();
        let mut acc_minus: BTreeMap<NVec, Vec<Complex64>> = BTreeMap::new();
        add(&mut acc_plus, &self.gp, &zx_plus);
        add(&mut acc_plus, &self.huv, &zx_minus);
        add(&mut acc_minus, &self.hvu, &zx_plus);
        add(&mut acc_minus, &self.gp, &zx_minus);
        for (n, field) in acc_plus {
            out.plus.slabs.insert(n.clone(), eig.to_eigen(&field));
        }
        for (n, field) in acc_minus {
            out.minus.slabs.insert(n.clone(), eig.to_eigen(&field));
        }
        out
    }
}

#[cfg(test)]
mod tests;
