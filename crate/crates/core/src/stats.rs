//! Monte Carlo verification of the spectral-statistics inputs: spectrum
//! proximity scaling, minimal eigenvalue spacing scaling, the rank-one
//! eigenvalue derivative identity, localization-center density, and
//! finite-volume eigenpair convergence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{
    assemble_hamiltonian, decay_profile, eigensolve, eigensystem_for, sample_potential,
    tridiag_eigenvalues, Box1D, DecayFit, DistributionSpec, PotentialSample, TriDiag,
};

/// Deterministic trial plan: trial t draws with seed `base_seed ^ t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McPlan {
    pub trials: u64,
    pub base_seed: u64,
    pub box_: Box1D,
    pub distribution: DistributionSpec,
}

impl McPlan {
    pub fn seed_for(&self, trial: u64) -> u64 {
        self.base_seed ^ trial
    }

    fn sample(&self, trial: u64) -> Result<PotentialSample> {
        sample_potential(&self.distribution, self.box_, self.seed_for(trial))
    }
}

/// Empirical probabilities over a decreasing abscissa sweep with the fitted
/// log-log slope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFit {
    pub abscissae: Vec<f64>,
    pub hits: Vec<u64>,
    pub trials: u64,
    pub empirical_probs: Vec<f64>,
    pub log_log_slope: f64,
    pub r_squared: f64,
}

impl ScalingFit {
    pub fn csv(&self) -> String {
        let mut out = String::from("abscissa,hits,trials,probability\n");
        for i in 0..self.abscissae.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.abscissae[i], self.hits[i], self.trials, self.empirical_probs[i]
            ));
        }
        out
    }
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::Config("empty abscissa list".into()));
    }
    for w in eps_list.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Config("abscissae must be strictly decreasing".into()));
        }
    }
    if eps_list[eps_list.len() - 1] <= 0.0 {
        return Err(Error::Config("abscissae must be positive".into()));
    }
    Ok(())
}

/// OLS slope of ln(prob) against ln(abscissa) over positive-hit points.
/// Zero-hit abscissae are dropped; fewer than two surviving points is a
/// fit-undefined error carrying the raw counts.
fn fit_scaling(abscissae: &[f64], hits: &[u64], trials: u64) -> Result<(f64, f64)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&a, &h) in abscissae.iter().zip(hits) {
        if h > 0 {
            xs.push(a.ln());
            ys.push((h as f64 / trials as f64).ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::FitUndefined(format!(
            "scaling fit needs >= 2 abscissae with hits; raw counts {hits:?} over {trials} trials"
        )));
    }
    let m = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let denom = m * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::FitUndefined("degenerate abscissae".into()));
    }
    let slope = (m * sxy - sx * sy) / denom;
    let var_y = syy - sy * sy / m;
    let r2 = if var_y <= 0.0 { 1.0 } else { slope * slope * denom / m / var_y };
    Ok((slope, r2))
}

fn scaling_from_stat(
    plan: &McPlan,
    eps_list: &[f64],
    stat: impl Fn(u64) -> Result<f64> + Sync,
) -> Result<ScalingFit> {
    check_eps_list(eps_list)?;
    let stats: Vec<f64> = (0..plan.trials)
        .into_par_iter()
        .map(|t| stat(t))
        .collect::<Result<Vec<_>>>()?;
    let hits: Vec<u64> = eps_list
        .iter()
        .map(|&eps| stats.iter().filter(|&&d| d <= eps).count() as u64)
        .collect();
    let probs: Vec<f64> = hits.iter().map(|&h| h as f64 / plan.trials as f64).collect();
    let (slope, r2) = fit_scaling(eps_list, &hits, plan.trials)?;
    Ok(ScalingFit {
        abscissae: eps_list.to_vec(),
        hits,
        trials: plan.trials,
        empirical_probs: probs,
        log_log_slope: slope,
        r_squared: r2,
    })
}

/// Fraction of trials with dist(E, spectrum) <= eps, per eps, with the
/// fitted log-log slope (the proximity probability is linear in eps at
/// fixed volume, so the slope should sit near 1).
pub fn wegner_mc(plan: &McPlan, energy: f64, eps_list: &[f64]) -> Result<ScalingFit> {
    scaling_from_stat(plan, eps_list, |t| {
        let v = plan.sample(t)?;
        let vals = tridiag_eigenvalues(&assemble_hamiltonian(&v))?;
        Ok(vals.iter().map(|mu| (mu - energy).abs()).fold(f64::INFINITY, f64::min))
    })
}

/// Fraction of trials whose minimal eigenvalue spacing is <= eps, per eps.
pub fn minami_mc(plan: &McPlan, eps_list: &[f64]) -> Result<ScalingFit> {
    scaling_from_stat(plan, eps_list, |t| {
        let v = plan.sample(t)?;
        let vals = tridiag_eigenvalues(&assemble_hamiltonian(&v))?;
        Ok(vals.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min))
    })
}

/// Derivative check summary: central finite difference of the eigenvalue
/// under a rank-one diagonal bump at `site`, against |phi(site)|^2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub fd_derivative: f64,
    pub weight: f64,
    pub abs_error: f64,
}

fn max_overlap_index(reference: &[f64], vectors: &[Vec<f64>]) -> usize {
    let mut best = (0usize, -1.0f64);
    for (k, v) in vectors.iter().enumerate() {
        let dot: f64 = v.iter().zip(reference).map(|(a, b)| a * b).sum();
        if dot.abs() > best.1 {
            best = (k, dot.abs());
        }
    }
    best.0
}

/// Track eigenpair `k` of H under H + s I_{site} by maximal eigenvector
/// overlap and compare the central difference with |phi_k(site)|^2.
pub fn eig_derivative_check_pair(
    v: &PotentialSample,
    k: usize,
    site: i64,
    s: f64,
) -> Result<DerivativeCheck> {
    let h = assemble_hamiltonian(v);
    let base = eigensolve(&h)?;
    let n = base.values.len();
    if k >= n {
        return Err(Error::Range(format!("eigenpair index {k} out of range {n}")));
    }
    let mut spacing = f64::INFINITY;
    for w in base.values.windows(2) {
        spacing = spacing.min(w[1] - w[0]);
    }
    if n > 1 && (spacing <= 0.0 || s.abs() > spacing / 10.0) {
        return Err(Error::Domain(format!(
            "perturbation |s| = {} exceeds d/10 = {} (eigenvalues too close)",
            s.abs(),
            spacing / 10.0
        )));
    }
    let idx = v.box_.index_of(site);
    let shifted = |sign: f64| -> Result<f64> {
        let mut diag = h.diag.clone();
        diag[idx] += sign * s;
        let t = TriDiag::new(diag, h.off.clone());
        let pert = eigensolve(&t)?;
        let kk = max_overlap_index(&base.vectors[k], &pert.vectors);
        Ok(pert.values[kk])
    };
    let mu_plus = shifted(1.0)?;
    let mu_minus = shifted(-1.0)?;
    let fd = (mu_plus - mu_minus) / (2.0 * s);
    let weight = base.vectors[k][idx] * base.vectors[k][idx];
    Ok(DerivativeCheck { fd_derivative: fd, weight, abs_error: (fd - weight).abs() })
}

/// Convenience form: checks the eigenpair with the largest weight at `site`.
pub fn eig_derivative_check(v: &PotentialSample, site: i64, s: f64) -> Result<DerivativeCheck> {
    let h = assemble_hamiltonian(v);
    let base = eigensolve(&h)?;
    let idx = v.box_.index_of(site);
    let k = (0..base.values.len())
        .max_by(|&a, &b| {
            (base.vectors[a][idx] * base.vectors[a][idx])
                .partial_cmp(&(base.vectors[b][idx] * base.vectors[b][idx]))
                .unwrap()
        })
        .ok_or_else(|| Error::Domain("empty eigensystem".into()))?;
    eig_derivative_check_pair(v, k, site, s)
}

/// Localization-center counts per window, one row per trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CenterDensity {
    pub window_len: i64,
    pub window_starts: Vec<i64>,
    /// counts[trial][window]
    pub counts: Vec<Vec<u64>>,
}

/// Count centers in [k, k+L] for each window start k, across trials.
/// Windows must lie inside the box.
pub fn center_density_mc(
    plan: &McPlan,
    window_len: i64,
    window_starts: &[i64],
) -> Result<CenterDensity> {
    for &k in window_starts {
        if k < plan.box_.lo || k + window_len > plan.box_.hi {
            return Err(Error::Range(format!(
                "window [{k}, {}] outside box [{}, {}]",
                k + window_len,
                plan.box_.lo,
                plan.box_.hi
            )));
        }
    }
    let counts: Vec<Vec<u64>> = (0..plan.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<u64>> {
            let v = plan.sample(t)?;
            let eig = eigensystem_for(&v)?;
            Ok(window_starts
                .iter()
                .map(|&k| {
                    eig.centers.iter().filter(|&&c| c >= k && c <= k + window_len).count() as u64
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CenterDensity { window_len, window_starts: window_starts.to_vec(), counts })
}

/// Interior window starts with margin >= window_len to both box edges,
/// stepping by the window length.
pub fn interior_window_starts(box_: Box1D, window_len: i64) -> Vec<i64> {
    let lo = box_.lo + window_len;
    let hi = box_.hi - 2 * window_len;
    let mut starts = Vec::new();
    let mut k = lo;
    while k <= hi {
        starts.push(k);
        k += window_len;
    }
    starts
}

/// One inner eigenpair matched to its best partner in the doubled box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeMatch {
    pub inner_label: i64,
    pub outer_label: i64,
    pub eigenvalue_gap: f64,
    pub vector_gap: f64,
    pub inner_center: i64,
    pub decay: DecayFit,
    /// Largest |phi| over the three sites at each inner-box end.
    pub boundary_amplitude: f64,
}

/// Match every eigenpair of the restriction to [-N, N] against the
/// eigensystem on [-2N, 2N] (same potential), by maximal overlap with
/// distinct outer partners.
pub fn volume_convergence(v_outer: &PotentialSample, n_radius: i64) -> Result<Vec<VolumeMatch>> {
    let outer_box = Box1D::symmetric(2 * n_radius);
    if v_outer.box_ != outer_box {
        return Err(Error::Config(format!(
            "outer sample must live on [-2N, 2N] = [{}, {}]",
            outer_box.lo, outer_box.hi
        )));
    }
    let inner_box = Box1D::symmetric(n_radius);
    let v_inner = v_outer.restrict(inner_box)?;
    let inner = eigensystem_for(&v_inner)?;
    let outer = eigensystem_for(v_outer)?;

    let pad = |phi: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; outer_box.len()];
        let off = outer_box.index_of(inner_box.lo);
        full[off..off + phi.len()].copy_from_slice(phi);
        full
    };

    struct Cand {
        inner: i64,
        outer: i64,
        overlap: f64,
    }
    let mut cands: Vec<Cand> = Vec::new();
    for ji in inner.labels() {
        let padded = pad(inner.eigenvector(ji));
        for jo in outer.labels() {
            let dot: f64 = padded.iter().zip(outer.eigenvector(jo)).map(|(a, b)| a * b).sum();
            cands.push(Cand { inner: ji, outer: jo, overlap: dot });
        }
    }
    // Greedy assignment by descending |overlap| keeps partners distinct.
    cands.sort_by(|a, b| b.overlap.abs().partial_cmp(&a.overlap.abs()).unwrap());
    let mut taken_inner = std::collections::BTreeSet::new();
    let mut taken_outer = std::collections::BTreeSet::new();
    let mut matches = Vec::new();
    for c in cands {
        if taken_inner.contains(&c.inner) || taken_outer.contains(&c.outer) {
            continue;
        }
        taken_inner.insert(c.inner);
        taken_outer.insert(c.outer);
        let phi_in = pad(inner.eigenvector(c.inner));
        let phi_out = outer.eigenvector(c.outer);
        let sign = if c.overlap >= 0.0 { 1.0 } else { -1.0 };
        let vector_gap = phi_in
            .iter()
            .zip(phi_out)
            .map(|(a, b)| {
                let d = a - sign * b;
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let raw = inner.eigenvector(c.inner);
        let m = raw.len();
        let edge = raw[..3.min(m)]
            .iter()
            .chain(raw[m.saturating_sub(3)..].iter())
            .map(|x| x.abs())
            .fold(0.0f64, f64::max);
        let decay = decay_profile(raw, inner.center(c.inner), inner_box)
            .unwrap_or(DecayFit { gamma_hat: 0.0, c_hat: 0.0, rmse: f64::INFINITY });
        matches.push(VolumeMatch {
            inner_label: c.inner,
            outer_label: c.outer,
            eigenvalue_gap: (inner.eigenvalue(c.inner) - outer.eigenvalue(c.outer)).abs(),
            vector_gap,
            inner_center: inner.center(c.inner),
            decay,
            boundary_amplitude: edge,
        });
    }
    matches.sort_by_key(|m| m.inner_label);
    Ok(matches)
}


#[cfg(test)]
mod tail_tests {
    use super::*;

    #[test]
    fn derivative_vanishes_outside_the_support_tail() {
        // Hunt for a strongly localized state and a site where its weight is
        // below 1e-20; the tracked eigenvalue must then be flat in the bump.
        for seed in 0..40u64 {
            let v = sample_potential(&DistributionSpec::Uniform01, Box1D::symmetric(100), seed)
                .unwrap();
            let eig = eigensystem_for(&v).unwrap();
            for j in eig.labels() {
                let fit = decay_profile(eig.eigenvector(j), eig.center(j), eig.box_);
                let Ok(fit) = fit else { continue };
                if fit.gamma_hat < 0.45 {
                    continue;
                }
                let center = eig.center(j);
                let site = if center <= 0 { 95 } else { -95 };
                let idx = eig.box_.index_of(site);
                let weight = eig.eigenvector(j)[idx].powi(2);
                if weight >= 1e-20 {
                    continue;
                }
                let h = assemble_hamiltonian(&v);
                let vals = tridiag_eigenvalues(&h).unwrap();
                let mut d = f64::INFINITY;
                for w in vals.windows(2) {
                    d = d.min(w[1] - w[0]);
                }
                let k = eig
                    .eigenvalues
                    .iter()
                    .zip(eig.labels())
                    .find(|(_, jj)| *jj == j)
                    .map(|_| ())
                    .map(|_| {
                        // Raw index of this eigenvalue in ascending order.
                        vals.iter()
                            .position(|&x| (x - eig.eigenvalue(j)).abs() < 1e-14)
                            .unwrap()
                    })
                    .unwrap();
                let check = eig_derivative_check_pair(&v, k, site, 1e-3 * d).unwrap();
                assert!(
                    check.fd_derivative.abs() <= 1e-8,
                    "far-tail derivative {} with weight {weight}",
                    check.fd_derivative
                );
                return;
            }
        }
        panic!("no strongly localized state with a 1e-20 tail site found in 40 seeds");
    }
}
