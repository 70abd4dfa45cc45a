//! Experiment configuration: one TOML file holds every physical and scheme
//! constant, so nothing numerical is hard-coded in the pipeline.

use serde::{Deserialize, Serialize};

use nlrs_core::error::{Error, Result};
use nlrs_core::nonlinear::ldt::LdtConfig;
use nlrs_core::resonance::AuditConfig;
use nlrs_core::solver::{ScheduleParams, SolveSchedule};
use nlrs_core::spectral::{validate_mode_geometry, DistributionSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub box_radius: i64,
    pub b: usize,
    /// Mode window radius L.
    pub mode_window: i64,
    /// Window centers beta_k.
    pub beta: Vec<i64>,
    pub amplitudes: Vec<f64>,
    pub delta: f64,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default)]
    pub distribution: DistributionSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub ldt: LdtSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_p() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    #[serde(default)]
    pub kind: DistributionKind,
    #[serde(default)]
    pub table: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    #[default]
    Uniform01,
    Tabulated,
}

impl DistributionSection {
    pub fn spec(&self) -> Result<DistributionSpec> {
        let spec = match self.kind {
            DistributionKind::Uniform01 => DistributionSpec::Uniform01,
            DistributionKind::Tabulated => DistributionSpec::TabulatedDensity(self.table.clone()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub n_box_radius: i64,
    pub j_box_radius: i64,
    pub q1: f64,
    /// Desk-scale margin exponent; the asymptotic value is 1/8 but margins
    /// are measured against multiplier * delta^threshold_exponent.
    pub threshold_exponent: f64,
    pub multiplier_small: f64,
    pub multiplier_harmonic: f64,
    pub s_exponent: f64,
    pub m_radius: i64,
    pub near_resonant_radius: i64,
    pub theta_grid: usize,
    /// Label window of the pairwise spacing-floor audit.
    pub spacing_radius: i64,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            n_box_radius: 20,
            j_box_radius: 20,
            q1: 6.0,
            threshold_exponent: 2.25,
            multiplier_small: 2.0,
            multiplier_harmonic: 4.0,
            s_exponent: 2.0,
            m_radius: 10,
            near_resonant_radius: 20,
            theta_grid: 10_000,
            spacing_radius: 64,
        }
    }
}

impl AuditSection {
    pub fn to_audit_config(&self, delta: f64, b: usize) -> AuditConfig {
        AuditConfig {
            delta,
            b,
            n_box_radius: self.n_box_radius,
            j_box_radius: self.j_box_radius,
            q1: self.q1,
            threshold_exponent: self.threshold_exponent,
            multiplier_small: self.multiplier_small,
            multiplier_harmonic: self.multiplier_harmonic,
            s_exponent: self.s_exponent,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub n_radius: i64,
    pub tol: f64,
    pub max_iters: usize,
    pub halo_factor: f64,
    pub schur_factor: f64,
    pub schur_cap: usize,
    pub refine_cap: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolveSchedule::for_b(2);
        SolverSection {
            n_radius: s.n_radius,
            tol: s.tol,
            max_iters: s.max_iters,
            halo_factor: s.halo_factor,
            schur_factor: s.schur_factor,
            schur_cap: s.schur_cap,
            refine_cap: s.refine_cap,
        }
    }
}

impl SolverSection {
    pub fn schedule(&self, b: usize) -> SolveSchedule {
        let mut s = SolveSchedule::for_b(b);
        s.n_radius = self.n_radius;
        s.tol = self.tol;
        s.max_iters = self.max_iters;
        s.halo_factor = self.halo_factor;
        s.schur_factor = self.schur_factor;
        s.schur_cap = self.schur_cap;
        s.refine_cap = self.refine_cap;
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub enabled: bool,
    pub t_end: f64,
    pub h: f64,
    pub sample_every: usize,
    pub mismatch_tol: f64,
    pub residual_tol: f64,
    pub residual_times: Vec<f64>,
    /// Dump the full field as JSON lines every k-th sample (0 = never).
    pub field_dump_every: usize,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            enabled: true,
            t_end: 10.0,
            h: 1e-3,
            sample_every: 500,
            mismatch_tol: 1e-4,
            residual_tol: 1e-9,
            residual_times: vec![0.0, 1.0, 5.0],
            field_dump_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub trials: u64,
    pub box_radius: i64,
    pub wegner_energy: f64,
    pub wegner_eps: Vec<f64>,
    pub minami_eps: Vec<f64>,
    pub center_window: i64,
    pub center_box_radius: i64,
    pub center_trials: u64,
    pub derivative_box_radius: i64,
    pub derivative_pairs: usize,
    pub volume_radius: i64,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            trials: 10_000,
            box_radius: 32,
            wegner_energy: 0.5,
            wegner_eps: vec![1e-2, 3e-3, 1e-3, 3e-4],
            minami_eps: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            center_window: 64,
            center_box_radius: 2048,
            center_trials: 20,
            derivative_box_radius: 10,
            derivative_pairs: 50,
            volume_radius: 40,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdtSection {
    pub size: i64,
    pub grid_points: usize,
    pub j0_samples: Vec<i64>,
    pub window_pad: f64,
    pub decay_rate: f64,
    pub decay_sample_stride: usize,
}

impl Default for LdtSection {
    fn default() -> Self {
        let c = LdtConfig::new(12);
        LdtSection {
            size: c.size,
            grid_points: c.grid_points,
            j0_samples: c.j0_samples,
            window_pad: c.window_pad,
            decay_rate: c.decay_rate,
            decay_sample_stride: c.decay_sample_stride,
        }
    }
}

impl LdtSection {
    pub fn to_ldt_config(&self) -> LdtConfig {
        let mut c = LdtConfig::new(self.size);
        c.grid_points = self.grid_points;
        c.j0_samples = self.j0_samples.clone();
        c.window_pad = self.window_pad;
        c.decay_rate = self.decay_rate;
        c.decay_sample_stride = self.decay_sample_stride;
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Perturbation-strength grid (empty = use the top-level delta).
    pub deltas: Vec<f64>,
    /// Amplitude grid points per axis over [1, 2]^b (0 = no amplitude sweep).
    pub amplitudes_per_axis: usize,
}

/// Recursion-schedule parameters exposed on the command line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub nu: f64,
    pub growth_exponent: f64,
    pub smoothing_c: f64,
    pub r_max: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let p = ScheduleParams::default();
        ScheduleSection {
            nu: p.nu,
            growth_exponent: p.growth_exponent,
            smoothing_c: p.smoothing_c,
            r_max: p.r_max,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.b != self.beta.len() || self.b != self.amplitudes.len() {
            return Err(Error::Config(format!(
                "b = {} must match beta ({}) and amplitudes ({})",
                self.b,
                self.beta.len(),
                self.amplitudes.len()
            )));
        }
        validate_mode_geometry(&self.beta, self.mode_window)?;
        for (k, &beta) in self.beta.iter().enumerate() {
            if beta - self.mode_window < -self.box_radius || beta + self.mode_window > self.box_radius {
                return Err(Error::Config(format!(
                    "mode window {k} around beta = {beta} leaves the box [-{r}, {r}]",
                    r = self.box_radius
                )));
            }
        }
        for &a in &self.amplitudes {
            if !(1.0..=2.0).contains(&a) {
                return Err(Error::Config(format!("amplitude {a} outside [1, 2]")));
            }
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Config("delta must be nonnegative".into()));
        }
        if self.p == 0 {
            return Err(Error::Config("nonlinearity power p must be >= 1".into()));
        }
        self.distribution.spec().map(|_| ())
    }
}
