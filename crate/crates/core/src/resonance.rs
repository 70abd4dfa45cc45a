//! Audits of the diagonal harmonics n.omega +/- mu_j on a concrete
//! eigensystem: pairwise spacing floors, small-scale non-resonance away from
//! the tangential sites, cluster separation of frequency combinations, and
//! near-resonant vertex counts along a theta sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{EigenSystem, ModeSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    Plus,
    Minus,
}

/// Threshold policy and scan geometry for the audits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditConfig {
    pub delta: f64,
    pub b: usize,
    /// Half-width of the frequency-lattice scan box.
    pub n_box_radius: i64,
    /// Half-width of the eigenvalue-label scan window.
    pub j_box_radius: i64,
    /// Spacing-floor exponent q1.
    pub q1: f64,
    /// Margins are measured against multiplier * delta^threshold_exponent.
    pub threshold_exponent: f64,
    pub multiplier_small: f64,
    pub multiplier_harmonic: f64,
    /// Exponent s in the |log delta|^s cluster-scan scale.
    pub s_exponent: f64,
}

/// Per-axis entry cap for the default scan radius.
const MAX_AXIS_ENTRIES: i64 = 10_000;

impl AuditConfig {
    /// Asymptotic-scale defaults for the given perturbation strength: scan radius
    /// 2 * floor(exp(|log delta|^(3/4))) capped at 10^4 entries per axis,
    /// exponent 1/8, multipliers 2 and 4.
    pub fn new(delta: f64, b: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta {delta} outside (0, 1)")));
        }
        if b == 0 {
            return Err(Error::Config("b must be >= 1".into()));
        }
        let log = delta.ln().abs();
        let radius = (2.0 * log.powf(0.75).exp().floor()) as i64;
        let radius = radius.clamp(1, (MAX_AXIS_ENTRIES - 1) / 2);
        Ok(AuditConfig {
            delta,
            b,
            n_box_radius: radius,
            j_box_radius: radius,
            q1: 6.0,
            threshold_exponent: 1.0 / 8.0,
            multiplier_small: 2.0,
            multiplier_harmonic: 4.0,
            s_exponent: 2.0,
        })
    }

    pub fn threshold_unit(&self) -> f64 {
        self.delta.powf(self.threshold_exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Frequency-lattice point n (or combination m for the cluster audit).
    pub n: Vec<i64>,
    pub j: i64,
    /// Second label for pairwise audits.
    pub j2: Option<i64>,
    pub sector: Sector,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub kind: String,
    pub threshold: f64,
    pub violations: Vec<Violation>,
    pub min_margin: f64,
    pub pass: bool,
}

impl AuditReport {
    fn finish(kind: &str, threshold: f64, mut violations: Vec<Violation>, min_margin: f64) -> Self {
        violations.sort_by(|a, b| {
            (a.sector, &a.n, a.j, a.j2)
                .partial_cmp(&(b.sector, &b.n, b.j, b.j2))
                .unwrap()
        });
        let pass = violations.is_empty();
        AuditReport { kind: kind.to_string(), threshold, violations, min_margin, pass }
    }
}

/// Lexicographic walk over [-radius, radius]^b.
pub(crate) fn n_box(b: usize, radius: i64) -> impl Iterator<Item = Vec<i64>> {
    let width = 2 * radius + 1;
    let total = (width as u128).pow(b as u32);
    debug_assert!(total <= u64::MAX as u128, "scan box too large");
    (0..total as u64).map(move |mut idx| {
        let mut n = vec![0i64; b];
        for slot in n.iter_mut().rev() {
            *slot = (idx % width as u64) as i64 - radius;
            idx /= width as u64;
        }
        n
    })
}

fn dot(n: &[i64], omega: &[f64]) -> f64 {
    n.iter().zip(omega).map(|(&k, &w)| k as f64 * w).sum()
}

/// Label window [-radius, radius], erroring when the requested window is not
/// fully available.
fn label_window(eig: &EigenSystem, radius: i64) -> Result<Vec<i64>> {
    let lo = -radius;
    let hi = radius;
    if !eig.contains_label(lo) || !eig.contains_label(hi) {
        return Err(Error::Range(format!(
            "label window [{lo}, {hi}] exceeds available labels {:?}",
            eig.labels()
        )));
    }
    Ok((lo..=hi).collect())
}

/// Pairwise eigenvalue spacing floor |mu_j - mu_j'| >= N^{-q1} over labels
/// [-N, N].
pub fn spacing_floor(eig: &EigenSystem, n_radius: i64, q1: f64) -> Result<AuditReport> {
    let labels = label_window(eig, n_radius)?;
    let threshold = (n_radius as f64).powf(-q1);
    let mut pairs: Vec<(f64, i64)> = labels.iter().map(|&j| (eig.eigenvalue(j), j)).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    for (i, &(mu, j)) in pairs.iter().enumerate() {
        for &(mu2, j2) in &pairs[i + 1..] {
            let gap = mu2 - mu;
            if gap >= threshold && gap > min_margin {
                break;
            }
            min_margin = min_margin.min(gap);
            if gap < threshold {
                let (ja, jb) = (j.min(j2), j.max(j2));
                violations.push(Violation {
                    n: Vec::new(),
                    j: ja,
                    j2: Some(jb),
                    sector: Sector::Plus,
                    value: gap,
                });
            }
        }
    }
    Ok(AuditReport::finish("spacing_floor", threshold, violations, min_margin))
}

/// Non-resonance of n.omega0 + mu_j (and the mirrored sector) away from the
/// tangential sites. For n = 0 the margin |mu_j| is additionally held to the
/// floor 1/(2 N^q1).
pub fn small_scale_nonresonance(
    eig: &EigenSystem,
    omega0: &[f64],
    selection: &ModeSelection,
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    if omega0.len() != cfg.b || selection.alphas.len() != cfg.b {
        return Err(Error::Config("omega/selection dimension mismatch with audit config".into()));
    }
    let labels = label_window(eig, cfg.j_box_radius)?;
    let threshold = cfg.multiplier_small * cfg.threshold_unit();
    let zero_floor = 0.5 * (cfg.j_box_radius as f64).powf(-cfg.q1);

    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    for n in n_box(cfg.b, cfg.n_box_radius) {
        let base = dot(&n, omega0);
        let is_zero = n.iter().all(|&k| k == 0);
        for (sector, sum) in [(Sector::Plus, base), (Sector::Minus, -base)] {
            // Tangential exceptions: (-e_k, alpha_k) in the plus sector and
            // (e_k, alpha_k) in the minus sector.
            let excluded = |j: i64| {
                (0..cfg.b).any(|k| {
                    selection.alphas[k] == j
                        && n.iter().enumerate().all(|(i, &ni)| {
                            ni == if i == k {
                                match sector {
                                    Sector::Plus => -1,
                                    Sector::Minus => 1,
                                }
                            } else {
                                0
                            }
                        })
                })
            };
            for &j in &labels {
                if excluded(j) {
                    continue;
                }
                let margin = (sum + eig.eigenvalue(j)).abs();
                min_margin = min_margin.min(margin);
                let bound = if is_zero { threshold.max(zero_floor) } else { threshold };
                if margin < bound {
                    violations.push(Violation { n: n.clone(), j, j2: None, sector, value: margin });
                }
            }
        }
    }
    Ok(AuditReport::finish("small_scale_nonresonance", threshold, violations, min_margin))
}

/// Frequency combination classes scanned by the cluster audit: either some
/// |m_k| >= 2 or support >= 3, or all |m_k| <= 1 with nonzero sum. The two
/// remaining patterns (m = 0 and the balanced support-2 combinations) are
/// exempt.
pub fn in_cluster_class(m: &[i64]) -> bool {
    let support = m.iter().filter(|&&k| k != 0).count();
    let large = m.iter().any(|&k| k.abs() >= 2);
    let sum: i64 = m.iter().sum();
    (large || support >= 3) || (!large && sum != 0)
}

/// Cluster separation |m.omega + mu_j - mu_j'| over the combination classes;
/// j = j' is allowed.
pub fn harmonic_cluster_audit(
    eig: &EigenSystem,
    omega: &[f64],
    m_radius: i64,
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    if omega.len() != cfg.b {
        return Err(Error::Config("omega dimension mismatch with audit config".into()));
    }
    let labels = label_window(eig, cfg.j_box_radius)?;
    let threshold = cfg.multiplier_harmonic * cfg.threshold_unit();

    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    for m in n_box(cfg.b, m_radius) {
        if !in_cluster_class(&m) {
            continue;
        }
        let base = dot(&m, omega);
        for &j in &labels {
            let mu_j = eig.eigenvalue(j);
            for &j2 in &labels {
                let margin = (base + mu_j - eig.eigenvalue(j2)).abs();
                min_margin = min_margin.min(margin);
                if margin <= threshold {
                    violations.push(Violation {
                        n: m.clone(),
                        j,
                        j2: Some(j2),
                        sector: Sector::Plus,
                        value: margin,
                    });
                }
            }
        }
    }
    Ok(AuditReport::finish("harmonic_cluster_audit", threshold, violations, min_margin))
}

/// Sorted diagonal-value tables for fast repeated near-resonance counting
/// along a theta sweep. The plus sector is singular at theta = -(n.omega +
/// mu_j), the minus sector at theta = mu_j - n.omega; negating the frequency
/// point maps one table onto the other bitwise, which keeps the sector
/// symmetry exact.
pub struct ThetaScanner {
    plus: Vec<f64>,
    minus: Vec<f64>,
    pub threshold: f64,
}

impl ThetaScanner {
    pub fn new(eig: &EigenSystem, omega0: &[f64], box_radius: i64, cfg: &AuditConfig) -> Self {
        let lo = (-box_radius).max(*eig.labels().start());
        let hi = box_radius.min(*eig.labels().end());
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for n in n_box(cfg.b, box_radius) {
            let base = dot(&n, omega0);
            for j in lo..=hi {
                let mu = eig.eigenvalue(j);
                plus.push(-(base + mu));
                minus.push(mu - base);
            }
        }
        plus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        minus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ThetaScanner { plus, minus, threshold: cfg.threshold_unit() }
    }

    fn count_in(values: &[f64], lo: f64, hi: f64) -> usize {
        let a = values.partition_point(|&v| v < lo);
        let b = values.partition_point(|&v| v <= hi);
        b - a
    }

    /// (plus, minus) vertex counts with |theta - singular value| <= threshold.
    pub fn count(&self, theta: f64) -> (usize, usize) {
        (
            Self::count_in(&self.plus, theta - self.threshold, theta + self.threshold),
            Self::count_in(&self.minus, theta - self.threshold, theta + self.threshold),
        )
    }

    /// Diagonal range covered by the singular values.
    pub fn range(&self) -> (f64, f64) {
        let lo = self.plus[0].min(self.minus[0]);
        let hi = self.plus[self.plus.len() - 1].max(self.minus[self.minus.len() - 1]);
        (lo, hi)
    }
}

/// Count vertices (n, j) in the box with |(n.omega0 + theta) + mu_j| below
/// delta^threshold_exponent, separately for the mirrored sector.
pub fn near_resonant_count(
    eig: &EigenSystem,
    omega0: &[f64],
    theta: f64,
    box_radius: i64,
    cfg: &AuditConfig,
) -> (usize, usize) {
    ThetaScanner::new(eig, omega0, box_radius, cfg).count(theta)
}
