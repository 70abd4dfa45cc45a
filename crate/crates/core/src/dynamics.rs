//! Independent validation by direct time integration: the quasi-periodic
//! reconstruction u(t, x) = sum u(n,j) exp(i n.omega t) phi_j(x) is compared
//! against Strang split-step evolution of the lattice equation
//!   i du/dt = -Delta u + V u + delta |u|^{2p} u
//! with the linear half-steps applied exactly in the eigenbasis.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinear::LatticeCoeffs;
use crate::spectral::{Box1D, EigenSystem, PotentialSample};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeField {
    pub box_: Box1D,
    pub values: Vec<Complex64>,
    pub time: f64,
}

impl LatticeField {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Per-frequency site-space profiles of a coefficient set; reconstruction at
/// any time is then one phase rotation per slab.
pub struct Reconstructor {
    box_: Box1D,
    /// (n.omega, profile) pairs.
    parts: Vec<(f64, Vec<Complex64>)>,
}

impl Reconstructor {
    pub fn new(u: &LatticeCoeffs, omega: &[f64], eig: &EigenSystem) -> Result<Self> {
        for ((_, j), _) in u.iter() {
            if !eig.contains_label(*j) {
                return Err(Error::Range(format!("coefficient label {j} outside eigensystem")));
            }
        }
        let x = crate::nonlinear::coeffs_to_x(u, eig);
        let parts = x
            .slabs
            .into_iter()
            .map(|(n, profile)| {
                let freq: f64 = n.iter().zip(omega).map(|(&k, &w)| k as f64 * w).sum();
                (freq, profile)
            })
            .collect();
        Ok(Reconstructor { box_: eig.box_, parts })
    }

    pub fn at(&self, t: f64) -> LatticeField {
        let len = self.box_.len();
        let mut values = vec![Complex64::new(0.0, 0.0); len];
        for (freq, profile) in &self.parts {
            let phase = Complex64::new(0.0, freq * t).exp();
            for (v, p) in values.iter_mut().zip(profile) {
                *v += phase * p;
            }
        }
        LatticeField { box_: self.box_, values, time: t }
    }
}

/// One-shot reconstruction at time t.
pub fn reconstruct(
    u: &LatticeCoeffs,
    omega: &[f64],
    eig: &EigenSystem,
    t: f64,
) -> Result<LatticeField> {
    Ok(Reconstructor::new(u, omega, eig)?.at(t))
}

/// Lattice energy sum_x [-2 Re(u(x+1) conj(u(x))) + V |u|^2
/// + delta/(p+1) |u|^{2(p+1)}].
pub fn energy(field: &LatticeField, v: &PotentialSample, delta: f64, p: usize) -> f64 {
    let len = field.values.len();
    let mut total = 0.0;
    for x in 0..len {
        let ux = field.values[x];
        if x + 1 < len {
            total -= 2.0 * (field.values[x + 1] * ux.conj()).re;
        }
        let dens = ux.norm_sqr();
        total += v.values[x] * dens + delta / (p as f64 + 1.0) * dens.powi(p as i32 + 1);
    }
    total
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub norm_series: Vec<f64>,
    pub energy_series: Vec<f64>,
    #[serde(skip)]
    pub fields: Vec<LatticeField>,
}

impl Trajectory {
    pub fn csv(&self, mismatch: Option<&[f64]>) -> String {
        let mut out = String::from(if mismatch.is_some() {
            "t,norm,energy,mismatch\n"
        } else {
            "t,norm,energy\n"
        });
        for i in 0..self.times.len() {
            match mismatch {
                Some(ms) => out.push_str(&format!(
                    "{},{},{},{}\n",
                    self.times[i], self.norm_series[i], self.energy_series[i], ms[i]
                )),
                None => out.push_str(&format!(
                    "{},{},{}\n",
                    self.times[i], self.norm_series[i], self.energy_series[i]
                )),
            }
        }
        out
    }
}

/// Orthogonality-polished copy of the eigenbasis for the unitary
/// propagator: one Newton-Schulz pass drives the Gram defect of the
/// eigensolver output to rounding level.
struct Propagator {
    len: usize,
    rows: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl Propagator {
    fn new(eig: &EigenSystem) -> Self {
        let n = eig.n();
        let len = eig.box_.len();
        assert_eq!(n, len, "propagator needs the full eigenbasis");
        let phi = &eig.eigenvectors;
        // G = Phi Phi^T (rows are eigenvectors), then rows <- (3I - G)/2 Phi.
        let mut gram = vec![0.0f64; n * n];
        for i in 0..n {
            for k in i..n {
                let mut acc = 0.0;
                for x in 0..len {
                    acc += phi[i * len + x] * phi[k * len + x];
                }
                gram[i * n + k] = acc;
                gram[k * n + i] = acc;
            }
        }
        let mut rows = vec![0.0f64; n * len];
        for i in 0..n {
            for x in 0..len {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += gram[i * n + k] * phi[k * len + x];
                }
                rows[i * len + x] = 1.5 * phi[i * len + x] - 0.5 * acc;
            }
        }
        // Exact row normalization. The evolved state concentrates on a few
        // modes, so residual diagonal Gram defects do not phase-average and
        // drift the norm linearly. Scaling alone can only reach a defect of
        // ~1 ulp(1); nudging the largest entry tunes the compensated norm to
        // the 1e-18 level.
        for i in 0..n {
            let row = &mut rows[i * len..(i + 1) * len];
            let norm2 = |row: &[f64]| -> f64 {
                let (mut sum, mut comp) = (0.0f64, 0.0f64);
                for &r in row {
                    let sq = r * r;
                    let t = sum + sq;
                    comp += if sum.abs() >= sq { (sum - t) + sq } else { (sq - t) + sum };
                    sum = t;
                }
                sum + comp
            };
            let factor = 1.0 / norm2(row).sqrt();
            if factor != 1.0 {
                for r in row.iter_mut() {
                    *r *= factor;
                }
            }
            let lead = (0..len)
                .max_by(|&a, &b| row[a].abs().partial_cmp(&row[b].abs()).unwrap())
                .unwrap();
            for _ in 0..4 {
                let err = norm2(row) - 1.0;
                if err == 0.0 {
                    break;
                }
                let adjust = -err / (2.0 * row[lead]);
                let nudged = row[lead] + adjust;
                if nudged == row[lead] {
                    break;
                }
                row[lead] = nudged;
            }
        }
        Propagator { len, rows, eigenvalues: eig.eigenvalues.clone() }
    }

    fn to_coeffs(&self, field: &[Complex64], out: &mut [Complex64]) {
        // Compensated accumulation: the half-ulp bias of plain dots on the
        // quasi-stationary state compounds over 10^5 roundtrips.
        for (k, slot) in out.iter_mut().enumerate() {
            let row = &self.rows[k * self.len..(k + 1) * self.len];
            let (mut sr, mut cr, mut si, mut ci) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for (f, &p) in field.iter().zip(row) {
                let tr = f.re * p;
                let t = sr + tr;
                cr += if sr.abs() >= tr.abs() { (sr - t) + tr } else { (tr - t) + sr };
                sr = t;
                let ti = f.im * p;
                let t = si + ti;
                ci += if si.abs() >= ti.abs() { (si - t) + ti } else { (ti - t) + si };
                si = t;
            }
            *slot = Complex64::new(sr + cr, si + ci);
        }
    }

    fn from_coeffs(&self, coeffs: &[Complex64], out: &mut [Complex64]) {
        let n = coeffs.len();
        for (x, o) in out.iter_mut().enumerate() {
            let (mut sr, mut cr, mut si, mut ci) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for (k, c) in coeffs.iter().enumerate().take(n) {
                let p = self.rows[k * self.len + x];
                let tr = c.re * p;
                let t = sr + tr;
                cr += if sr.abs() >= tr.abs() { (sr - t) + tr } else { (tr - t) + sr };
                sr = t;
                let ti = c.im * p;
                let t = si + ti;
                ci += if si.abs() >= ti.abs() { (si - t) + ti } else { (ti - t) + si };
                si = t;
            }
            *o = Complex64::new(sr + cr, si + ci);
        }
    }

    /// Phase table for one step size, stored as a hi + lo pair per mode with
    /// the modulus corrected to second order: a bare exp() phase carries a
    /// fixed ~1 ulp modulus error per mode that compounds over 10^5 steps
    /// into a visible norm drift.
    fn phases(&self, dt: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut hi = Vec::with_capacity(self.eigenvalues.len());
        let mut lo = Vec::with_capacity(self.eigenvalues.len());
        for &mu in &self.eigenvalues {
            let w = Complex64::new(0.0, -mu * dt).exp();
            let e = 0.5 * (1.0 - w.norm_sqr());
            hi.push(w);
            lo.push(w * e);
        }
        (hi, lo)
    }

    /// Exact linear evolution by time dt, with an extra global phase
    /// (a frame rotation, removed exactly at recording time).
    fn linear_with(
        &self,
        field: &mut Vec<Complex64>,
        phases: &(Vec<Complex64>, Vec<Complex64>),
        global: Complex64,
        scratch: &mut Vec<Complex64>,
    ) {
        scratch.resize(self.eigenvalues.len(), Complex64::new(0.0, 0.0));
        self.to_coeffs(field, scratch);
        for (k, c) in scratch.iter_mut().enumerate() {
            let rotated = *c * phases.0[k] + *c * phases.1[k];
            *c = rotated * global;
        }
        self.from_coeffs(scratch, field);
    }
}

/// Gauge dither: the state is propagated in a rotating frame whose global
/// phase is a seeded multiple of 2 pi / 1024 per step, tracked as an exact
/// integer and unwound when states are recorded. The physical map is
/// unchanged; the representation decorrelates from the floating-point
/// rounding pattern, which otherwise locks onto the quasi-stationary state
/// and turns half-ulp biases into a linear norm drift.
struct FrameDither {
    table: Vec<Complex64>,
    rng: u64,
    accum: u64,
}

const DITHER_SLOTS: u64 = 1024;

impl FrameDither {
    fn new() -> Self {
        let table = (0..DITHER_SLOTS)
            .map(|m| {
                let w = Complex64::new(
                    0.0,
                    -2.0 * std::f64::consts::PI * m as f64 / DITHER_SLOTS as f64,
                )
                .exp();
                w * (1.0 + 0.5 * (1.0 - w.norm_sqr()))
            })
            .collect();
        FrameDither { table, rng: 0x853c_49e6_748f_ea9bu64, accum: 0 }
    }

    fn next(&mut self) -> Complex64 {
        self.rng ^= self.rng << 13;
        self.rng ^= self.rng >> 7;
        self.rng ^= self.rng << 17;
        let m = self.rng % DITHER_SLOTS;
        self.accum = self.accum.wrapping_add(m);
        self.table[m as usize]
    }

    /// Inverse of the accumulated frame rotation.
    fn unwind(&self) -> Complex64 {
        let m = (DITHER_SLOTS - self.accum % DITHER_SLOTS) % DITHER_SLOTS;
        self.table[m as usize]
    }
}

fn nonlinear_phase(field: &mut [Complex64], delta: f64, p: usize, dt: f64) {
    if delta == 0.0 {
        return;
    }
    for u in field.iter_mut() {
        let dens = u.norm_sqr().powi(p as i32);
        let w = Complex64::new(0.0, -delta * dens * dt).exp();
        // Modulus-corrected application (see Propagator::phases): the field
        // envelope is quasi-stationary, so a fixed per-site modulus bias in
        // the bare phase would compound linearly over the walk.
        let e = 0.5 * (1.0 - w.norm_sqr());
        *u = *u * w + *u * (w * e);
    }
}

/// Strang split-step evolution with the exact eigenbasis linear propagator:
/// L(h/2) N(h) L(h/2) per step, with consecutive linear half-steps fused.
/// States are recorded every `sample_every` steps (and at t_end).
pub fn split_step_evolve(
    u0: &LatticeField,
    v: &PotentialSample,
    eig: &EigenSystem,
    delta: f64,
    p: usize,
    t_end: f64,
    h: f64,
    sample_every: usize,
) -> Result<Trajectory> {
    if h <= 0.0 {
        return Err(Error::Config(format!("step size {h} must be positive")));
    }
    if t_end < 0.0 {
        return Err(Error::Config("t_end must be nonnegative".into()));
    }
    if u0.box_ != eig.box_ || v.box_ != eig.box_ {
        return Err(Error::Config("field, potential and eigensystem boxes must agree".into()));
    }
    if u0.values.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Numeric("non-finite initial data".into()));
    }
    let steps = (t_end / h).round() as usize;
    let prop = Propagator::new(eig);
    let sample_every = sample_every.max(1);

    let mut field = u0.values.clone();
    let mut scratch = Vec::new();
    let mut traj = Trajectory {
        times: Vec::new(),
        norm_series: Vec::new(),
        energy_series: Vec::new(),
        fields: Vec::new(),
    };
    let record = |field: &[Complex64], t: f64, traj: &mut Trajectory| -> Result<()> {
        let lf = LatticeField { box_: u0.box_, values: field.to_vec(), time: t };
        let norm = lf.norm();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("blow-up detected at t = {t}")));
        }
        traj.times.push(t);
        traj.norm_series.push(norm);
        traj.energy_series.push(energy(&lf, v, delta, p));
        traj.fields.push(lf);
        Ok(())
    };
    record(&field, 0.0, &mut traj)?;

    // Fused Strang walk: a half linear step, then per step the nonlinear
    // phase followed by a full linear step, splitting back to half steps at
    // sampling boundaries so recorded states sit at integer times.
    let half = prop.phases(0.5 * h);
    let full = prop.phases(h);
    let one = Complex64::new(1.0, 0.0);
    let mut dither = FrameDither::new();
    let mut step = 0usize;
    while step < steps {
        prop.linear_with(&mut field, &half, one, &mut scratch);
        loop {
            nonlinear_phase(&mut field, delta, p, h);
            step += 1;
            let boundary = step == steps || step % sample_every == 0;
            if boundary {
                prop.linear_with(&mut field, &half, one, &mut scratch);
                let unwind = dither.unwind();
                let physical: Vec<Complex64> = field.iter().map(|c| c * unwind).collect();
                record(&physical, step as f64 * h, &mut traj)?;
                break;
            }
            prop.linear_with(&mut field, &full, dither.next(), &mut scratch);
        }
    }
    Ok(traj)
}

/// Max lattice-equation residual of the reconstruction over the given
/// times, with the time derivative taken analytically:
/// || sum (n.omega + mu_j) u(n,j) e^{i n.omega t} phi_j + delta |u|^{2p} u ||_2.
pub fn residual_check(
    u: &LatticeCoeffs,
    omega: &[f64],
    eig: &EigenSystem,
    delta: f64,
    p: usize,
    times: &[f64],
) -> Result<f64> {
    let recon = Reconstructor::new(u, omega, eig)?;
    // D-weighted profiles: sum_j (n.omega + mu_j) u(n, j) phi_j per slab.
    let len = eig.box_.len();
    let mut weighted: Vec<(f64, Vec<Complex64>)> = Vec::new();
    {
        use std::collections::BTreeMap;
        let mut grouped: BTreeMap<Vec<i64>, Vec<Complex64>> = BTreeMap::new();
        for ((n, j), &c) in u.iter() {
            let freq: f64 = n.iter().zip(omega).map(|(&k, &w)| k as f64 * w).sum();
            let slab = grouped.entry(n.clone()).or_insert_with(|| vec![Complex64::new(0.0, 0.0); len]);
            let idx = eig.idx(*j);
            let row = eig.eigenvector(*j);
            let factor = c * (freq + eig.eigenvalue(*j));
            for (s, &phi) in slab.iter_mut().zip(row) {
                *s += factor * phi;
            }
            let _ = idx;
        }
        for (n, profile) in grouped {
            let freq: f64 = n.iter().zip(omega).map(|(&k, &w)| k as f64 * w).sum();
            weighted.push((freq, profile));
        }
    }
    let mut worst = 0.0f64;
    for &t in times {
        let field = recon.at(t);
        let mut res = vec![Complex64::new(0.0, 0.0); len];
        for (freq, profile) in &weighted {
            let phase = Complex64::new(0.0, freq * t).exp();
            for (r, p_) in res.iter_mut().zip(profile) {
                *r += phase * p_;
            }
        }
        for (r, uxy) in res.iter_mut().zip(&field.values) {
            *r += uxy * (delta * uxy.norm_sqr().powi(p as i32));
        }
        let norm = res.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(norm);
    }
    Ok(worst)
}

/// Max relative l2 mismatch between an evolved trajectory and the
/// quasi-periodic reconstruction at the recorded times, plus the series.
pub fn compare(
    traj: &Trajectory,
    u: &LatticeCoeffs,
    omega: &[f64],
    eig: &EigenSystem,
) -> Result<(f64, Vec<f64>)> {
    let recon = Reconstructor::new(u, omega, eig)?;
    let base = recon.at(0.0).norm().max(1e-300);
    let mut series = Vec::with_capacity(traj.fields.len());
    let mut worst = 0.0f64;
    for field in &traj.fields {
        let want = recon.at(field.time);
        let mut diff = 0.0;
        for (a, b) in field.values.iter().zip(&want.values) {
            diff += (a - b).norm_sqr();
        }
        let rel = diff.sqrt() / base;
        series.push(rel);
        worst = worst.max(rel);
    }
    Ok((worst, series))
}

#[cfg(test)]
#[path = "dynamics_tests.rs"]
mod tests;
