//! Experiment orchestration: deterministic pipelines from one TOML config,
//! machine-readable artifacts, and exit codes suitable for scripting
//! (0 ok, 1 usage/config, 2 audit failure, 3 solver non-convergence,
//! 4 numeric error).

mod config;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use nlrs_core::dynamics;
use nlrs_core::error::Error;
use nlrs_core::nonlinear::{ldt, LatticeCoeffs};
use nlrs_core::resonance;
use nlrs_core::solver;
use nlrs_core::spectral::{self, EigenSystem, ModeSelection, PotentialSample};
use nlrs_core::stats;

use config::{ExperimentConfig, ScheduleSection};

#[derive(Parser)]
#[command(name = "nlrs", version, about = "Quasi-periodic localized states on disordered lattices")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a potential and write its relabelled eigensystem.
    SampleSpectrum(CommonArgs),
    /// Run the non-resonance audits on the sampled spectrum.
    Audit(CommonArgs),
    /// Monte Carlo statistics: proximity and spacing scaling, derivative
    /// identity, center density, volume convergence.
    McStats(CommonArgs),
    /// Full pipeline: sample, diagonalize, audit, solve, validate.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Proceed past failed audits.
        #[arg(long)]
        force: bool,
        /// Skip the dynamical validation stage.
        #[arg(long)]
        no_dynamics: bool,
    },
    /// Re-validate solved coefficients dynamically from stored artifacts.
    Verify(CommonArgs),
    /// Theta-grid scan of the restricted-inverse bounds.
    LdtScan {
        #[command(flatten)]
        common: CommonArgs,
        /// Scan at the solved coefficients instead of the initial guess.
        #[arg(long)]
        use_solution: bool,
    },
    /// Grid sweep over delta and/or amplitudes with a success summary.
    Sweep(CommonArgs),
    /// Audit the recursion schedule relations for given delta and M.
    ScheduleCheck {
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 10.0)]
        m_scale: f64,
        #[arg(long, default_value_t = 0.125)]
        nu: f64,
        #[arg(long, default_value_t = -3.0)]
        growth_exponent: f64,
        #[arg(long, default_value_t = 1.0)]
        smoothing_c: f64,
        #[arg(long, default_value_t = 30)]
        r_max: usize,
    },
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct StageRecord {
    name: String,
    pass: bool,
    wall_ms: u128,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: String,
    config_hash: String,
    stages: Vec<StageRecord>,
}

struct Runner {
    out_dir: PathBuf,
    manifest: RunManifest,
    stage_start: Option<Instant>,
}

impl Runner {
    fn new(out_dir: PathBuf, config_text: &str) -> Result<Self, Error> {
        std::fs::create_dir_all(&out_dir)?;
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        let hash = hasher.finalize();
        let config_hash = hash.iter().map(|b| format!("{b:02x}")).collect::<String>();
        Ok(Runner {
            out_dir,
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash,
                stages: Vec::new(),
            },
            stage_start: None,
        })
    }

    fn begin(&mut self, name: &str) {
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            pass: false,
            wall_ms: 0,
            artifacts: Vec::new(),
        });
        self.stage_start = Some(Instant::now());
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Error> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes)?;
        if let Some(stage) = self.manifest.stages.last_mut() {
            stage.artifacts.push(name.to_string());
        }
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, Error> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, text.as_bytes())
    }

    fn finish(&mut self, pass: bool) {
        let elapsed = self.stage_start.take().map(|t| t.elapsed().as_millis()).unwrap_or(0);
        if let Some(stage) = self.manifest.stages.last_mut() {
            stage.pass = pass;
            stage.wall_ms = elapsed;
        }
    }

    fn store_manifest(&self) -> Result<(), Error> {
        self.store_manifest_as("manifest.json")
    }

    /// Single-stage commands store under their own name so they do not
    /// clobber a pipeline manifest living in the same directory.
    fn store_manifest_as(&self, name: &str) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(self.out_dir.join(name), text)?;
        Ok(())
    }
}

fn spectrum_stage(
    cfg: &ExperimentConfig,
    runner: &mut Runner,
) -> Result<(PotentialSample, EigenSystem), Error> {
    runner.begin("spectrum");
    let dist = cfg.distribution.spec()?;
    let box_ = spectral::Box1D::symmetric(cfg.box_radius);
    let v = spectral::sample_potential(&dist, box_, cfg.base_seed)?;
    let eig = spectral::eigensystem_for(&v)?;
    let (pv, ps) = eig.parseval_defects();
    runner.write_json("sample.json", &v)?;
    runner.write("spectrum.eig.json", eig.to_json()?.as_bytes())?;
    #[derive(Serialize)]
    struct Summary {
        states: usize,
        eigenvalue_min: f64,
        eigenvalue_max: f64,
        parseval_by_vector: f64,
        parseval_by_site: f64,
    }
    runner.write_json(
        "spectrum_summary.json",
        &Summary {
            states: eig.n(),
            eigenvalue_min: eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min),
            eigenvalue_max: eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            parseval_by_vector: pv,
            parseval_by_site: ps,
        },
    )?;
    runner.finish(true);
    Ok((v, eig))
}

#[derive(Serialize)]
struct AuditBundle {
    spacing: resonance::AuditReport,
    small_scale: resonance::AuditReport,
    harmonic: resonance::AuditReport,
    near_resonant_max: (usize, usize),
    pass: bool,
}

fn audit_stage(
    cfg: &ExperimentConfig,
    eig: &EigenSystem,
    sel: &ModeSelection,
    runner: &mut Runner,
) -> Result<AuditBundle, Error> {
    runner.begin("audit");
    let acfg = cfg.audit.to_audit_config(cfg.delta, cfg.b);
    let spacing = resonance::spacing_floor(eig, cfg.audit.spacing_radius, cfg.audit.q1)?;
    let small_scale = resonance::small_scale_nonresonance(eig, &sel.omega0, sel, &acfg)?;
    let harmonic = resonance::harmonic_cluster_audit(eig, &sel.omega0, cfg.audit.m_radius, &acfg)?;
    // Near-resonant vertex counts over the theta grid.
    let radius = cfg.audit.near_resonant_radius;
    let scanner = resonance::ThetaScanner::new(eig, &sel.omega0, radius, &acfg);
    let (range_lo, range_hi) = scanner.range();
    let pad = 0.05 * (range_hi - range_lo).max(1.0);
    let (lo, hi) = (range_lo - pad, range_hi + pad);
    let grid = cfg.audit.theta_grid.max(1);
    let mut worst = (0usize, 0usize);
    for i in 0..grid {
        let theta = lo + (i as f64 + 0.5) * ((hi - lo) / grid as f64);
        let (pl, mi) = scanner.count(theta);
        worst.0 = worst.0.max(pl);
        worst.1 = worst.1.max(mi);
    }
    let pass =
        spacing.pass && small_scale.pass && harmonic.pass && worst.0 <= cfg.b && worst.1 <= cfg.b;
    let bundle = AuditBundle { spacing, small_scale, harmonic, near_resonant_max: worst, pass };
    runner.write_json("audits.json", &bundle)?;
    runner.finish(pass);
    Ok(bundle)
}

fn selection_stage(
    cfg: &ExperimentConfig,
    eig: &EigenSystem,
    runner: &mut Runner,
) -> Result<ModeSelection, Error> {
    runner.begin("select-modes");
    let sel = spectral::select_modes(eig, &cfg.beta, cfg.mode_window, &cfg.amplitudes)?;
    runner.write_json("selection.json", &sel)?;
    runner.finish(true);
    Ok(sel)
}

fn cmd_sample_spectrum(cfg: &ExperimentConfig, text: &str, out: PathBuf) -> Result<i32, Error> {
    let mut runner = Runner::new(out, text)?;
    let result = spectrum_stage(cfg, &mut runner);
    runner.store_manifest()?;
    result.map(|_| 0)
}

fn cmd_audit(cfg: &ExperimentConfig, text: &str, out: PathBuf) -> Result<i32, Error> {
    let mut runner = Runner::new(out, text)?;
    let (_, eig) = spectrum_stage(cfg, &mut runner)?;
    let sel = selection_stage(cfg, &eig, &mut runner)?;
    let bundle = audit_stage(cfg, &eig, &sel, &mut runner)?;
    runner.store_manifest()?;
    Ok(if bundle.pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct VerifyReport {
    max_lattice_residual: f64,
    max_mismatch: f64,
    norm_drift: f64,
    energy_drift: f64,
    pass: bool,
}

fn dynamics_stage(
    cfg: &ExperimentConfig,
    v: &PotentialSample,
    eig: &EigenSystem,
    u: &LatticeCoeffs,
    omega: &[f64],
    runner: &mut Runner,
) -> Result<VerifyReport, Error> {
    runner.begin("dynamics");
    let d = &cfg.dynamics;
    let residual =
        dynamics::residual_check(u, omega, eig, cfg.delta, cfg.p, &d.residual_times)?;
    let u0 = dynamics::reconstruct(u, omega, eig, 0.0)?;
    let traj =
        dynamics::split_step_evolve(&u0, v, eig, cfg.delta, cfg.p, d.t_end, d.h, d.sample_every)?;
    let (mismatch, series) = dynamics::compare(&traj, u, omega, eig)?;
    let n0 = traj.norm_series[0].max(1e-300);
    let norm_drift = traj
        .norm_series
        .iter()
        .map(|n| (n - traj.norm_series[0]).abs() / n0)
        .fold(0.0, f64::max);
    let e0 = traj.energy_series[0];
    let energy_drift =
        traj.energy_series.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max);
    runner.write("trajectory.csv", traj.csv(Some(&series)).as_bytes())?;
    if d.field_dump_every > 0 {
        let mut dump = String::new();
        for (i, field) in traj.fields.iter().enumerate() {
            if i % d.field_dump_every == 0 {
                dump.push_str(&serde_json::to_string(field)?);
                dump.push('\n');
            }
        }
        runner.write("fields.jsonl", dump.as_bytes())?;
    }
    let pass = residual <= d.residual_tol && mismatch <= d.mismatch_tol;
    let report = VerifyReport {
        max_lattice_residual: residual,
        max_mismatch: mismatch,
        norm_drift,
        energy_drift,
        pass,
    };
    runner.write_json("verify.json", &report)?;
    runner.finish(pass);
    Ok(report)
}

fn cmd_solve(
    cfg: &ExperimentConfig,
    text: &str,
    out: PathBuf,
    force: bool,
    no_dynamics: bool,
) -> Result<i32, Error> {
    let mut runner = Runner::new(out, text)?;
    let result = solve_pipeline(cfg, force, no_dynamics, &mut runner);
    // The manifest is stored either way, so a failing stage leaves its name
    // and the artifacts of the last good state behind.
    runner.store_manifest()?;
    result.map_err(|e| {
        let stage = runner.manifest.stages.last().map(|s| s.name.clone()).unwrap_or_default();
        Error::Numeric(format!("stage '{stage}' failed: {e}"))
    })
}

fn solve_pipeline(
    cfg: &ExperimentConfig,
    force: bool,
    no_dynamics: bool,
    runner: &mut Runner,
) -> Result<i32, Error> {
    let (v, eig) = spectrum_stage(cfg, runner)?;
    let sel = selection_stage(cfg, &eig, runner)?;
    let audits = audit_stage(cfg, &eig, &sel, runner)?;
    if !audits.pass && !force {
        return Ok(2);
    }
    runner.begin("solve");
    let sched = cfg.solver.schedule(cfg.b);
    let (cert, state) = solver::solve(&eig, &sel, cfg.delta, cfg.p, &sched, Some(audits.pass))?;
    runner.write("coefficients.jsonl", state.u.to_jsonl().as_bytes())?;
    #[derive(Serialize)]
    struct CertificateArtifact<'a> {
        certificate: &'a solver::SolutionCertificate,
        config_echo: &'a ExperimentConfig,
        seed: u64,
    }
    runner.write_json(
        "certificate.json",
        &CertificateArtifact { certificate: &cert, config_echo: cfg, seed: cfg.base_seed },
    )?;
    runner.finish(cert.converged);
    if !cert.converged {
        return Ok(3);
    }
    let mut code = 0;
    if cfg.dynamics.enabled && !no_dynamics {
        let report = dynamics_stage(cfg, &v, &eig, &state.u, &state.omega, runner)?;
        if !report.pass {
            code = 4;
        }
    }
    Ok(code)
}

fn cmd_verify(cfg: &ExperimentConfig, text: &str, out: PathBuf) -> Result<i32, Error> {
    let eig_text = std::fs::read_to_string(out.join("spectrum.eig.json"))
        .map_err(|e| Error::Config(format!("missing spectrum artifact: {e}")))?;
    let eig = EigenSystem::from_json(&eig_text)?;
    let coeff_text = std::fs::read_to_string(out.join("coefficients.jsonl"))
        .map_err(|e| Error::Config(format!("missing coefficients artifact: {e}")))?;
    let cert_text = std::fs::read_to_string(out.join("certificate.json"))
        .map_err(|e| Error::Config(format!("missing certificate artifact: {e}")))?;
    let cert: serde_json::Value = serde_json::from_str(&cert_text)?;
    let omega: Vec<f64> = cert["certificate"]["omega"]
        .as_array()
        .ok_or_else(|| Error::Config("certificate lacks omega".into()))?
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    let sample_text = std::fs::read_to_string(out.join("sample.json"))
        .map_err(|e| Error::Config(format!("missing sample artifact: {e}")))?;
    let v: PotentialSample = serde_json::from_str(&sample_text)?;
    let sel_text = std::fs::read_to_string(out.join("selection.json"))
        .map_err(|e| Error::Config(format!("missing selection artifact: {e}")))?;
    let sel: ModeSelection = serde_json::from_str(&sel_text)?;
    let alphas: Vec<i64> = sel.alphas.clone();
    let max_jdist = eig
        .labels()
        .map(|j| alphas.iter().map(|&a| (j - a).abs()).min().unwrap_or(j.abs()))
        .max()
        .unwrap_or(0)
        .max(cfg.solver.n_radius)
        * 2;
    let u = LatticeCoeffs::from_jsonl(cfg.b, max_jdist, alphas, &coeff_text)?;
    let mut runner = Runner::new(out, text)?;
    let report = dynamics_stage(cfg, &v, &eig, &u, &omega, &mut runner)?;
    runner.store_manifest_as("manifest-verify.json")?;
    Ok(if report.pass { 0 } else { 4 })
}

fn cmd_mc_stats(cfg: &ExperimentConfig, text: &str, out: PathBuf) -> Result<i32, Error> {
    let mut runner = Runner::new(out, text)?;
    let dist = cfg.distribution.spec()?;
    let mc = &cfg.mc;

    runner.begin("wegner");
    let plan = stats::McPlan {
        trials: mc.trials,
        base_seed: cfg.base_seed,
        box_: spectral::Box1D::symmetric(mc.box_radius),
        distribution: dist.clone(),
    };
    let wegner = stats::wegner_mc(&plan, mc.wegner_energy, &mc.wegner_eps)?;
    runner.write("wegner.csv", wegner.csv().as_bytes())?;
    runner.write_json("wegner.json", &wegner)?;
    runner.finish(true);

    runner.begin("minami");
    let minami = stats::minami_mc(&plan, &mc.minami_eps)?;
    runner.write("minami.csv", minami.csv().as_bytes())?;
    runner.write_json("minami.json", &minami)?;
    runner.finish(true);

    runner.begin("center-density");
    let cplan = stats::McPlan {
        trials: mc.center_trials,
        base_seed: cfg.base_seed ^ 0x11,
        box_: spectral::Box1D::symmetric(mc.center_box_radius),
        distribution: dist.clone(),
    };
    let starts = stats::interior_window_starts(cplan.box_, mc.center_window);
    let density = stats::center_density_mc(&cplan, mc.center_window, &starts)?;
    let lo = (0.7 * mc.center_window as f64).floor() as u64;
    let hi = (1.3 * mc.center_window as f64).ceil() as u64;
    let total = density.counts.iter().map(|row| row.len()).sum::<usize>();
    let inside = density
        .counts
        .iter()
        .flat_map(|row| row.iter())
        .filter(|&&c| c >= lo && c <= hi)
        .count();
    #[derive(Serialize)]
    struct DensitySummary {
        window: i64,
        windows: usize,
        fraction_within: f64,
        detail: stats::CenterDensity,
    }
    runner.write_json(
        "center_density.json",
        &DensitySummary {
            window: mc.center_window,
            windows: total,
            fraction_within: inside as f64 / total.max(1) as f64,
            detail: density,
        },
    )?;
    runner.finish(true);

    runner.begin("derivative");
    let mut worst = 0.0f64;
    let mut checks = Vec::new();
    for t in 0..mc.derivative_pairs {
        let v = spectral::sample_potential(
            &dist,
            spectral::Box1D::symmetric(mc.derivative_box_radius),
            cfg.base_seed ^ (0x9000 + t as u64),
        )?;
        let h = spectral::assemble_hamiltonian(&v);
        let vals = spectral::tridiag_eigenvalues(&h)?;
        let mut d = f64::INFINITY;
        for w in vals.windows(2) {
            d = d.min(w[1] - w[0]);
        }
        let site = (t as i64 % (2 * mc.derivative_box_radius + 1)) - mc.derivative_box_radius;
        let check = stats::eig_derivative_check(&v, site, 1e-6 * d)?;
        worst = worst.max(check.abs_error);
        checks.push(check);
    }
    #[derive(Serialize)]
    struct DerivativeSummary {
        pairs: usize,
        max_abs_error: f64,
        checks: Vec<stats::DerivativeCheck>,
    }
    runner.write_json(
        "derivative.json",
        &DerivativeSummary { pairs: checks.len(), max_abs_error: worst, checks },
    )?;
    runner.finish(true);

    runner.begin("volume-convergence");
    let vv = spectral::sample_potential(
        &dist,
        spectral::Box1D::symmetric(2 * mc.volume_radius),
        cfg.base_seed ^ 0x77,
    )?;
    let matches = stats::volume_convergence(&vv, mc.volume_radius)?;
    runner.write_json("volume_convergence.json", &matches)?;
    runner.finish(true);

    runner.store_manifest()?;
    Ok(0)
}

fn cmd_ldt_scan(
    cfg: &ExperimentConfig,
    text: &str,
    out: PathBuf,
    use_solution: bool,
) -> Result<i32, Error> {
    let mut runner = Runner::new(out.clone(), text)?;
    let (_, eig) = spectrum_stage(cfg, &mut runner)?;
    let sel = selection_stage(cfg, &eig, &mut runner)?;
    runner.begin("ldt-scan");
    let sched = cfg.solver.schedule(cfg.b);
    let (u, omega) = if use_solution {
        let coeff_text = std::fs::read_to_string(out.join("coefficients.jsonl"))
            .map_err(|e| Error::Config(format!("missing coefficients artifact: {e}")))?;
        let state = solver::initial_guess(&eig, &sel, cfg.delta, cfg.p, &sched)?;
        let u = LatticeCoeffs::from_jsonl(
            cfg.b,
            state.u.support_radius.max(state.u.max_reach()) * 2,
            sel.alphas.clone(),
            &coeff_text,
        )?;
        (u, sel.omega0.clone())
    } else {
        let state = solver::initial_guess(&eig, &sel, cfg.delta, cfg.p, &sched)?;
        (state.u, state.omega)
    };
    let lcfg = cfg.ldt.to_ldt_config();
    let scan = ldt::ldt_scan(&eig, &omega, &u, cfg.delta, cfg.p, &lcfg)?;
    runner.write_json("ldt_scan.json", &scan)?;
    runner.finish(true);
    runner.store_manifest()?;
    Ok(0)
}

fn cmd_sweep(cfg: &ExperimentConfig, text: &str, out: PathBuf) -> Result<i32, Error> {
    let mut runner = Runner::new(out, text)?;
    let (_, eig) = spectrum_stage(cfg, &mut runner)?;
    runner.begin("sweep");

    // Build the grid: the cartesian product of the delta list (or the single
    // configured delta) and an amplitude lattice over [1, 2]^b.
    let deltas: Vec<f64> = if cfg.sweep.deltas.is_empty() && cfg.sweep.amplitudes_per_axis > 0 {
        vec![cfg.delta]
    } else {
        cfg.sweep.deltas.clone()
    };
    let per_axis = cfg.sweep.amplitudes_per_axis;
    let mut amp_grid: Vec<Vec<f64>> = Vec::new();
    if per_axis == 0 {
        if !deltas.is_empty() {
            amp_grid.push(cfg.amplitudes.clone());
        }
    } else {
        let total = (per_axis as u64).pow(cfg.b as u32);
        for mut flat in 0..total {
            let mut a = vec![0.0; cfg.b];
            for slot in a.iter_mut().rev() {
                let i = (flat % per_axis as u64) as f64;
                flat /= per_axis as u64;
                *slot = 1.0 + (i + 0.5) / per_axis as f64;
            }
            amp_grid.push(a);
        }
    }

    #[derive(Serialize, Clone)]
    struct SweepRow {
        index: usize,
        delta: f64,
        amplitudes: Vec<f64>,
        converged: bool,
        final_residual: f64,
        iterations: usize,
        omega_deviation_max: f64,
        failure: Option<String>,
    }
    let mut points = Vec::new();
    for (di, &d) in deltas.iter().enumerate() {
        for (ai, a) in amp_grid.iter().enumerate() {
            points.push((di * amp_grid.len() + ai, d, a.clone()));
        }
    }
    let sched = cfg.solver.schedule(cfg.b);
    use rayon::prelude::*;
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|(index, d, a)| {
            let run = || -> Result<SweepRow, Error> {
                let sel = spectral::select_modes(&eig, &cfg.beta, cfg.mode_window, a)?;
                let (cert, _) = solver::solve(&eig, &sel, *d, cfg.p, &sched, None)?;
                Ok(SweepRow {
                    index: *index,
                    delta: *d,
                    amplitudes: a.clone(),
                    converged: cert.converged,
                    final_residual: cert.final_residual,
                    iterations: cert.iterations,
                    omega_deviation_max: cert
                        .omega_deviation
                        .iter()
                        .map(|x| x.abs())
                        .fold(0.0, f64::max),
                    failure: cert.failure,
                })
            };
            run().unwrap_or_else(|e| SweepRow {
                index: *index,
                delta: *d,
                amplitudes: a.clone(),
                converged: false,
                final_residual: f64::NAN,
                iterations: 0,
                omega_deviation_max: f64::NAN,
                failure: Some(format!("{e}")),
            })
        })
        .collect();

    let mut csv = String::from("index,delta,amplitudes,converged,final_residual,iterations,omega_deviation_max\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.index,
            row.delta,
            row.amplitudes.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
            row.converged,
            row.final_residual,
            row.iterations,
            row.omega_deviation_max
        ));
    }
    runner.write("sweep.csv", csv.as_bytes())?;
    let success = rows.iter().filter(|r| r.converged).count();
    #[derive(Serialize)]
    struct SweepSummary {
        points: usize,
        converged: usize,
        success_fraction: f64,
        rows: Vec<SweepRow>,
    }
    runner.write_json(
        "sweep_summary.json",
        &SweepSummary {
            points: rows.len(),
            converged: success,
            success_fraction: if rows.is_empty() { 0.0 } else { success as f64 / rows.len() as f64 },
            rows: rows.clone(),
        },
    )?;
    runner.finish(true);
    runner.store_manifest()?;
    Ok(0)
}

fn cmd_schedule_check(
    delta: f64,
    m_scale: f64,
    section: ScheduleSection,
) -> Result<i32, Error> {
    let params = solver::ScheduleParams {
        nu: section.nu,
        growth_exponent: section.growth_exponent,
        smoothing_c: section.smoothing_c,
        r_max: section.r_max,
    };
    let report = solver::schedule_check(delta, m_scale, &params)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.holds { 0 } else { 3 })
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::AuditFailed(_) => 2,
        Error::NonConvergence(_) => 3,
        _ => 4,
    }
}

fn run() -> Result<i32, Error> {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's help/version paths exit 0; anything else is usage.
            let _ = e.print();
            return Ok(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Ok(threads) = std::env::var("NLRS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let load = |common: &CommonArgs| -> Result<(ExperimentConfig, String, PathBuf), Error> {
        let (cfg, text) = ExperimentConfig::load(&common.config)?;
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
        Ok((cfg, text, out))
    };
    match cli.cmd {
        Cmd::SampleSpectrum(c) => {
            let (cfg, text, out) = load(&c)?;
            cmd_sample_spectrum(&cfg, &text, out)
        }
        Cmd::Audit(c) => {
            let (cfg, text, out) = load(&c)?;
            cmd_audit(&cfg, &text, out)
        }
        Cmd::McStats(c) => {
            let (cfg, text, out) = load(&c)?;
            cmd_mc_stats(&cfg, &text, out)
        }
        Cmd::Solve { common, force, no_dynamics } => {
            let (cfg, text, out) = load(&common)?;
            cmd_solve(&cfg, &text, out, force, no_dynamics)
        }
        Cmd::Verify(c) => {
            let (cfg, text, out) = load(&c)?;
            cmd_verify(&cfg, &text, out)
        }
        Cmd::LdtScan { common, use_solution } => {
            let (cfg, text, out) = load(&common)?;
            cmd_ldt_scan(&cfg, &text, out, use_solution)
        }
        Cmd::Sweep(c) => {
            let (cfg, text, out) = load(&c)?;
            cmd_sweep(&cfg, &text, out)
        }
        Cmd::ScheduleCheck { delta, m_scale, nu, growth_exponent, smoothing_c, r_max } => {
            cmd_schedule_check(
                delta,
                m_scale,
                ScheduleSection { nu, growth_exponent, smoothing_c, r_max },
            )
        }
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code_for(&e));
        }
    }
}
