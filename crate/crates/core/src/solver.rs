//! The bifurcation-equation engine: Newton corrections of the doubled
//! system restricted away from the gauge sites, explicit frequency updates
//! from the gauge rows, convergence tracking, and solution certification.
//!
//! The linearization D + delta*W' is solved by block elimination: vertices
//! whose diagonal is comparable to their coupling row go into a small dense
//! Schur block, everything else is handled by diagonally preconditioned
//! refinement. The refinement loop verifies the true linear residual, so an
//! inaccurate block split can only slow convergence, never corrupt it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinear::{
    assemble_w, jacobian_kernel, DoubledSlabs, JacobianKernel, LatticeCoeffs, NVec, WSector,
};
use crate::spectral::{fit_line, DecayFit, EigenSystem, ModeSelection};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSchedule {
    /// Frequency-axis box radius of the corrections; the label axis is
    /// always the full eigensystem.
    pub n_radius: i64,
    /// Convergence tolerance on the doubled residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Halo factor for the certification residual.
    pub halo_factor: f64,
    /// Near-resonance factor: a vertex joins the dense block when
    /// |diagonal| < schur_factor * delta * (coupling row sum).
    pub schur_factor: f64,
    /// Cap on the dense block size.
    pub schur_cap: usize,
    /// Refinement passes per linear solve.
    pub refine_cap: usize,
}

impl SolveSchedule {
    pub fn for_b(b: usize) -> Self {
        SolveSchedule {
            n_radius: 2 * (b as i64 + 2),
            tol: 1e-11,
            max_iters: 20,
            halo_factor: 1.5,
            schur_factor: 4.0,
            schur_cap: 400,
            refine_cap: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub residual: f64,
    pub correction_norm: f64,
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NewtonState {
    pub u: LatticeCoeffs,
    pub omega: Vec<f64>,
    pub iteration: usize,
    pub residual_norm: f64,
    /// Max-metric extent of the stored support.
    pub support_radius: i64,
    pub history: Vec<HistoryEntry>,
}

/// Gauge vertices: (-e_k, alpha_k) in the plus sector, (e_k, alpha_k) in the
/// minus sector.
fn gauge_vertices(sel: &ModeSelection) -> Vec<(NVec, i64, usize)> {
    let b = sel.b;
    let mut out = Vec::with_capacity(2 * b);
    for k in 0..b {
        let mut n = vec![0i64; b];
        n[k] = -1;
        out.push((n.clone(), sel.alphas[k], 0));
        n[k] = 1;
        out.push((n, sel.alphas[k], 1));
    }
    out
}

fn slab_get(z: &DoubledSlabs, v: &(NVec, i64, usize), eig: &EigenSystem) -> Complex64 {
    let s = if v.2 == 0 { &z.plus } else { &z.minus };
    s.get(&v.0, eig.idx(v.1))
}

fn slab_add(z: &mut DoubledSlabs, v: &(NVec, i64, usize), eig: &EigenSystem, val: Complex64) {
    let s = if v.2 == 0 { &mut z.plus } else { &mut z.minus };
    s.slab_mut(&v.0)[eig.idx(v.1)] += val;
}

/// The doubled residual F(u) on |n|_inf <= radius: plus sector
/// (n.omega + mu_j) u + delta W, minus sector (-n.omega + mu_j) v + delta
/// W-tilde with v = conj flip of u.
pub fn residual_slabs(
    u: &LatticeCoeffs,
    omega: &[f64],
    eig: &EigenSystem,
    delta: f64,
    p: usize,
    radius: i64,
) -> Result<(DoubledSlabs, f64)> {
    let len = eig.box_.len();
    let mut f = DoubledSlabs::new(u.b, len);
    if delta != 0.0 {
        let w_plus = assemble_w(u, eig, p, WSector::Plain, Some(radius))?;
        let w_tilde = assemble_w(u, eig, p, WSector::Tilde, Some(radius))?;
        for (n, slab) in w_plus.slabs {
            let dst = f.plus.slabs.entry(n).or_insert_with(|| vec![Complex64::new(0.0, 0.0); len]);
            for (d, w) in dst.iter_mut().zip(slab) {
                *d += w * delta;
            }
        }
        for (n, slab) in w_tilde.slabs {
            let dst = f.minus.slabs.entry(n).or_insert_with(|| vec![Complex64::new(0.0, 0.0); len]);
            for (d, w) in dst.iter_mut().zip(slab) {
                *d += w * delta;
            }
        }
    }
    for ((n, j), &c) in u.iter() {
        let idx = eig.idx(*j);
        let base: f64 = n.iter().zip(omega).map(|(&k, &w)| k as f64 * w).sum();
        if n.iter().all(|k| k.abs() <= radius) {
            f.plus.slab_mut(n)[idx] += c * (base + eig.eigenvalue(*j));
        }
        // v(m, j) = conj(u(-m, j)) lives on the flipped slab.
        let flipped: NVec = n.iter().map(|&k| -k).collect();
        if flipped.iter().all(|k| k.abs() <= radius) {
            f.minus.slab_mut(&flipped)[idx] += c.conj() * (base + eig.eigenvalue(*j));
        }
    }
    let norm = f.norm();
    Ok((f, norm))
}

/// u^(0): amplitudes on the gauge sites, omega = the selected eigenvalues.
pub fn initial_guess(
    eig: &EigenSystem,
    sel: &ModeSelection,
    delta: f64,
    p: usize,
    sched: &SolveSchedule,
) -> Result<NewtonState> {
    let max_jdist = eig
        .labels()
        .map(|j| sel.alphas.iter().map(|&a| (j - a).abs()).min().unwrap_or(j.abs()))
        .max()
        .unwrap_or(0);
    let cap = sched.n_radius.max(max_jdist) * 2;
    let mut u = LatticeCoeffs::new(sel.b, cap, sel.alphas.clone());
    for k in 0..sel.b {
        let mut n = vec![0i64; sel.b];
        n[k] = -1;
        u.set(n, sel.alphas[k], Complex64::new(sel.amplitudes[k], 0.0))?;
    }
    let omega = sel.omega0.clone();
    let (_, norm) = residual_slabs(&u, &omega, eig, delta, p, sched.n_radius)?;
    let support_radius = u.max_reach();
    Ok(NewtonState {
        u,
        omega: omega.clone(),
        iteration: 0,
        residual_norm: norm,
        support_radius,
        history: vec![HistoryEntry {
            iteration: 0,
            residual: norm,
            correction_norm: 0.0,
            omega,
        }],
    })
}

/// Frequency update from the gauge rows:
/// omega_k = mu_{alpha_k} + delta * W(-e_k, alpha_k) / a_k.
/// The imaginary residue must stay below 1e-8 (reported up from 1e-10).
pub fn q_update(
    u: &LatticeCoeffs,
    eig: &EigenSystem,
    sel: &ModeSelection,
    delta: f64,
    p: usize,
) -> Result<(Vec<f64>, f64)> {
    let w = assemble_w(u, eig, p, WSector::Plain, Some(1))?;
    let mut omega = Vec::with_capacity(sel.b);
    let mut max_im = 0.0f64;
    for k in 0..sel.b {
        let mut n = vec![0i64; sel.b];
        n[k] = -1;
        let wk = w.get(&n, eig.idx(sel.alphas[k]));
        let ratio = wk / sel.amplitudes[k];
        max_im = max_im.max(ratio.im.abs());
        if ratio.im.abs() > 1e-8 {
            return Err(Error::Numeric(format!(
                "gauge violation: imaginary frequency residue {} at mode {k}",
                ratio.im
            )));
        }
        omega.push(eig.eigenvalue(sel.alphas[k]) + delta * ratio.re);
    }
    Ok((omega, max_im))
}

/// Linear context for one Newton step.
struct LinearSystem<'a> {
    eig: &'a EigenSystem,
    kernel: &'a JacobianKernel,
    omega: &'a [f64],
    delta: f64,
    radius: i64,
    gauge: Vec<(NVec, i64, usize)>,
}

impl<'a> LinearSystem<'a> {
    fn diag(&self, n: &[i64], j: i64, sector: usize) -> f64 {
        let base: f64 = n.iter().zip(self.omega).map(|(&k, &w)| k as f64 * w).sum();
        let signed = if sector == 0 { base } else { -base };
        signed + self.eig.eigenvalue(j)
    }

    fn project(&self, z: &mut DoubledSlabs) {
        z.plus.slabs.retain(|n, _| n.iter().all(|k| k.abs() <= self.radius));
        z.minus.slabs.retain(|n, _| n.iter().all(|k| k.abs() <= self.radius));
        for g in &self.gauge {
            let s = if g.2 == 0 { &mut z.plus } else { &mut z.minus };
            if let Some(slab) = s.slabs.get_mut(&g.0) {
                slab[self.eig.idx(g.1)] = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// (D + delta W') z restricted to the box minus the gauge set.
    fn apply(&self, z: &DoubledSlabs) -> DoubledSlabs {
        let mut out = self.kernel.apply(self.eig, z, self.radius, 0.0);
        for slabs in [&mut out.plus.slabs, &mut out.minus.slabs] {
            for slab in slabs.values_mut() {
                for c in slab.iter_mut() {
                    *c *= self.delta;
                }
            }
        }
        for (sector, (src, dst)) in
            [(&z.plus, &mut out.plus), (&z.minus, &mut out.minus)].into_iter().enumerate()
        {
            for (n, slab) in &src.slabs {
                let dstslab = dst.slab_mut(n);
                for (idx, j) in self.eig.labels().enumerate() {
                    dstslab[idx] += slab[idx] * self.diag(n, j, sector);
                }
            }
        }
        let mut projected = out;
        self.project(&mut projected);
        projected
    }
}

/// Heuristic candidate inflation over the Parseval l2 row estimate; an
/// undershoot is caught by the divergence escalation of the refinement.
const ROW_BOUND_MULT: f64 = 3.0;

/// Near-resonant vertex selection: Parseval l2 row estimates screen
/// candidates, exact coupling rows (via unit-vector applies) decide
/// membership. Returns the members together with their coupling columns.
fn near_resonant_set(
    sys: &LinearSystem,
    sched: &SolveSchedule,
    factor: f64,
) -> Result<(Vec<(NVec, i64, usize)>, Vec<DoubledSlabs>)> {
    let eig = sys.eig;
    let len = eig.box_.len();
    // Per-label l2 estimate of the coupling row, per sector; Parseval turns
    // the j'-sum of squared entries into a site-space norm.
    let mut bound = vec![[0.0f64; 2]; eig.n()];
    for (idx, j) in eig.labels().enumerate() {
        let phi = eig.eigenvector(j);
        for (maps, sector) in [
            ([&sys.kernel.gp, &sys.kernel.huv], 0usize),
            ([&sys.kernel.hvu, &sys.kernel.gp], 1usize),
        ] {
            let mut total = 0.0;
            for map in maps {
                for profile in map.values() {
                    let mut l2 = 0.0;
                    for x in 0..len {
                        l2 += (phi[x] * profile[x].norm()).powi(2);
                    }
                    total += ROW_BOUND_MULT * l2.sqrt();
                }
            }
            bound[idx][sector] = total;
        }
    }
    // Candidate pass.
    let mut candidates = Vec::new();
    let width = 2 * sys.radius + 1;
    let total = (width as u128).pow(sys.kernel.b as u32);
    let mut n = vec![0i64; sys.kernel.b];
    for mut flat in 0..total as u64 {
        for slot in n.iter_mut().rev() {
            *slot = (flat % width as u64) as i64 - sys.radius;
            flat /= width as u64;
        }
        for (idx, j) in eig.labels().enumerate() {
            for sector in 0..2 {
                let d = sys.diag(&n, j, sector).abs();
                if d < factor * sys.delta * bound[idx][sector] {
                    candidates.push((n.clone(), j, sector));
                }
            }
        }
    }
    // Exact row sums decide membership; keep the columns of the members.
    let mut out = Vec::new();
    let mut cols = Vec::new();
    for v in candidates {
        if sys.gauge.contains(&v) {
            continue;
        }
        let mut e = DoubledSlabs::new(sys.kernel.b, len);
        slab_add(&mut e, &v, eig, Complex64::new(1.0, 0.0));
        let mut col = sys.kernel.apply(eig, &e, sys.radius, 0.0);
        sys.project(&mut col);
        let mut row_sum = 0.0;
        for part in [&col.plus, &col.minus] {
            for slab in part.slabs.values() {
                for c in slab {
                    row_sum += c.norm();
                }
            }
        }
        let d = sys.diag(&v.0, v.1, v.2).abs();
        if d < factor * sys.delta * row_sum {
            out.push(v);
            cols.push(col);
        }
    }
    if out.len() > sched.schur_cap {
        return Err(Error::Resource(format!(
            "{} near-resonant vertices exceed the dense-block cap {}",
            out.len(),
            sched.schur_cap
        )));
    }
    Ok((out, cols))
}

/// Solve (D + delta W') x = rhs on the box minus the gauge set by block
/// elimination with verified refinement.
fn solve_linear(
    sys: &LinearSystem,
    rhs: &DoubledSlabs,
    sched: &SolveSchedule,
) -> Result<DoubledSlabs> {
    let eig = sys.eig;
    let len = eig.box_.len();
    let b = sys.kernel.b;
    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return Ok(DoubledSlabs::new(b, len));
    }
    let tol = 1e-13 * rhs_norm;

    let mut factor = sched.schur_factor;
    let mut attempt = 0;
    loop {
        attempt += 1;
        // The block members and their coupling columns; the Schur matrix is
        // S = A_BB - delta^2 (W' D^{-1} W')_BB (first-order elimination).
        let (block, cols) = near_resonant_set(sys, sched, factor)?;
        let m = block.len();
        let on_block = |n: &NVec, j: i64, sector: usize| {
            block.iter().any(|v| v.2 == sector && v.1 == j && v.0 == *n)
        };
        let mut schur = vec![Complex64::new(0.0, 0.0); m * m];
        for r in 0..m {
            for c in 0..m {
                let mut val = if r == c {
                    Complex64::new(sys.diag(&block[r].0, block[r].1, block[r].2), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                val += slab_get(&cols[c], &block[r], eig) * sys.delta;
                // First-order elimination of the off-block coupling.
                let mut corr = Complex64::new(0.0, 0.0);
                for (sector, (pr, pc)) in
                    [(&cols[r].plus, &cols[c].plus), (&cols[r].minus, &cols[c].minus)]
                        .into_iter()
                        .enumerate()
                {
                    for (n, slab_r) in &pr.slabs {
                        if let Some(slab_c) = pc.slabs.get(n) {
                            for (idx, j) in eig.labels().enumerate() {
                                if on_block(n, j, sector) {
                                    continue;
                                }
                                let d = sys.diag(n, j, sector);
                                if d.abs() > 1e-300 {
                                    corr += slab_r[idx] * slab_c[idx] / d;
                                }
                            }
                        }
                    }
                }
                val -= corr * sys.delta * sys.delta;
                schur[r * m + c] = val;
            }
        }
        let schur_lu = if m > 0 {
            match crate::dense::ComplexLu::factor(schur, m, 1e-12) {
                Ok(lu) => Some(lu),
                Err(Error::Numeric(msg)) => {
                    let step = msg
                        .rsplit("step ")
                        .next()
                        .and_then(|s| s.trim().parse::<usize>().ok())
                        .unwrap_or(0);
                    let v = &block[step];
                    return Err(Error::ResonanceFailure {
                        n: v.0.clone(),
                        j: v.1,
                        sector: v.2 as u8,
                        detail: "singular restricted linearization".into(),
                    });
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };

        // Verified block refinement.
        let mut x = DoubledSlabs::new(b, len);
        let mut converged = false;
        let mut prev_rnorm = f64::INFINITY;
        for _pass in 0..sched.refine_cap {
            let ax = sys.apply(&x);
            let mut res = rhs.clone();
            sys.project(&mut res);
            for (dst, src) in [(&mut res.plus, &ax.plus), (&mut res.minus, &ax.minus)] {
                for (n, slab) in &src.slabs {
                    let d = dst.slab_mut(n);
                    for (a, bb) in d.iter_mut().zip(slab) {
                        *a -= bb;
                    }
                }
            }
            let rnorm = res.norm();
            if rnorm <= tol {
                converged = true;
                break;
            }
            if rnorm > 10.0 * prev_rnorm.min(rhs_norm) {
                break; // diverging; escalate the block
            }
            prev_rnorm = rnorm.min(prev_rnorm);
            // y_G = D^{-1} res on the good set.
            let mut y = DoubledSlabs::new(b, len);
            for (sector, (src, dst)) in
                [(&res.plus, &mut y.plus), (&res.minus, &mut y.minus)].into_iter().enumerate()
            {
                for (n, slab) in &src.slabs {
                    let out = dst.slab_mut(n);
                    for (idx, j) in eig.labels().enumerate() {
                        if on_block(n, j, sector) {
                            continue;
                        }
                        let d = sys.diag(n, j, sector);
                        if d.abs() > 1e-300 {
                            out[idx] = slab[idx] / d;
                        }
                    }
                }
            }
            // Block correction: S dx_B = res_B - delta W'_BG y_G.
            if let Some(lu) = &schur_lu {
                let mut rhs_b = vec![Complex64::new(0.0, 0.0); m];
                for (r, v) in block.iter().enumerate() {
                    let mut coupling = Complex64::new(0.0, 0.0);
                    for (pr, py) in [(&cols[r].plus, &y.plus), (&cols[r].minus, &y.minus)] {
                        for (n, slab_r) in &pr.slabs {
                            if let Some(slab_y) = py.slabs.get(n) {
                                for (a, bb) in slab_r.iter().zip(slab_y) {
                                    coupling += a * bb;
                                }
                            }
                        }
                    }
                    rhs_b[r] = slab_get(&res, v, eig) - coupling * sys.delta;
                }
                lu.solve(&mut rhs_b);
                // x_B += dx_B; y_G -= D^{-1} delta W'_GB dx_B.
                for (r, v) in block.iter().enumerate() {
                    slab_add(&mut x, v, eig, rhs_b[r]);
                    for (sector, (pc, py)) in
                        [(&cols[r].plus, &mut y.plus), (&cols[r].minus, &mut y.minus)]
                            .into_iter()
                            .enumerate()
                    {
                        for (n, slab_c) in &pc.slabs {
                            let out = py.slab_mut(n);
                            for (idx, j) in eig.labels().enumerate() {
                                if on_block(n, j, sector) {
                                    continue;
                                }
                                let d = sys.diag(n, j, sector);
                                if d.abs() > 1e-300 {
                                    out[idx] -= slab_c[idx] * rhs_b[r] * sys.delta / d;
                                }
                            }
                        }
                    }
                }
            }
            for (dst, src) in [(&mut x.plus, &y.plus), (&mut x.minus, &y.minus)] {
                for (n, slab) in &src.slabs {
                    let d = dst.slab_mut(n);
                    for (a, bb) in d.iter_mut().zip(slab) {
                        *a += bb;
                    }
                }
            }
            sys.project(&mut x);
        }
        if converged {
            return Ok(x);
        }
        if attempt >= 3 {
            let worst = block.first().cloned().unwrap_or((vec![0; b], *eig.labels().start(), 0));
            return Err(Error::ResonanceFailure {
                n: worst.0,
                j: worst.1,
                sector: worst.2 as u8,
                detail: format!(
                    "linear refinement stalled after {} passes (block size {m})",
                    sched.refine_cap
                ),
            });
        }
        factor *= 4.0;
    }
}

/// One Newton correction on the complement of the gauge set followed by the
/// frequency update.
pub fn newton_step(
    state: &NewtonState,
    eig: &EigenSystem,
    sel: &ModeSelection,
    delta: f64,
    p: usize,
    sched: &SolveSchedule,
) -> Result<NewtonState> {
    let (f, _) = residual_slabs(&state.u, &state.omega, eig, delta, p, sched.n_radius)?;
    let kernel = jacobian_kernel(&state.u, eig, p, Some(2 * sched.n_radius))?;
    let sys = LinearSystem {
        eig,
        kernel: &kernel,
        omega: &state.omega,
        delta,
        radius: sched.n_radius,
        gauge: gauge_vertices(sel),
    };
    let mut rhs = DoubledSlabs::new(state.u.b, eig.box_.len());
    for (dst, src) in [(&mut rhs.plus, &f.plus), (&mut rhs.minus, &f.minus)] {
        for (n, slab) in &src.slabs {
            let d = dst.slab_mut(n);
            for (a, bb) in d.iter_mut().zip(slab) {
                *a = -bb;
            }
        }
    }
    sys.project(&mut rhs);
    let dx = solve_linear(&sys, &rhs, sched)?;

    // The minus-sector correction must be the conjugate flip of the plus
    // sector; apply the plus part and verify the symmetry.
    let mut sym_defect = 0.0f64;
    for (n, slab) in &dx.minus.slabs {
        let flipped: NVec = n.iter().map(|&k| -k).collect();
        for (idx, &c) in slab.iter().enumerate() {
            let mirror = dx.plus.get(&flipped, idx);
            sym_defect = sym_defect.max((c - mirror.conj()).norm());
        }
    }
    let dx_norm = dx.norm();
    if dx_norm > 0.0 && sym_defect > 1e-8 * dx_norm.max(1.0) {
        return Err(Error::Numeric(format!(
            "correction lost conjugation symmetry: defect {sym_defect}"
        )));
    }

    let mut u = state.u.clone();
    for (n, slab) in &dx.plus.slabs {
        for (idx, &c) in slab.iter().enumerate() {
            if c.norm() > 0.0 {
                let j = eig.label_offset + idx as i64;
                u.set(n.clone(), j, u.get(n, j) + c)?;
            }
        }
    }
    // Gauge rows stay untouched bitwise.
    for (k, &alpha) in sel.alphas.iter().enumerate() {
        let mut n = vec![0i64; sel.b];
        n[k] = -1;
        debug_assert_eq!(u.get(&n, alpha), Complex64::new(sel.amplitudes[k], 0.0));
    }

    let (omega, _max_im) = q_update(&u, eig, sel, delta, p)?;
    let (_, residual_norm) = residual_slabs(&u, &omega, eig, delta, p, sched.n_radius)?;
    let support_radius = u.max_reach();
    let mut history = state.history.clone();
    history.push(HistoryEntry {
        iteration: state.iteration + 1,
        residual: residual_norm,
        correction_norm: dx_norm,
        omega: omega.clone(),
    });
    Ok(NewtonState {
        u,
        omega,
        iteration: state.iteration + 1,
        residual_norm,
        support_radius,
        history,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionCertificate {
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    /// Residual re-evaluated on the halo box (halo_factor x the support).
    pub halo_residual: f64,
    pub omega: Vec<f64>,
    pub omega_deviation: Vec<f64>,
    /// Exponential fit of |u(n, j)| against max(|n|, label distance).
    pub coeff_decay: Option<DecayFit>,
    pub distance_to_guess: f64,
    /// Largest |omega_k - mu_{alpha_k}| seen on any iterate, in units of
    /// 2^{2p+1} delta (containment in the frequency window).
    pub omega_window_excess: f64,
    pub history: Vec<HistoryEntry>,
    pub failure: Option<String>,
    pub audits_pass: Option<bool>,
}

/// Alternate Newton corrections and frequency updates until the residual
/// drops below tolerance. Returns a certificate either way; hard failures of
/// the linearization are recorded in it, not propagated.
pub fn solve(
    eig: &EigenSystem,
    sel: &ModeSelection,
    delta: f64,
    p: usize,
    sched: &SolveSchedule,
    audits_pass: Option<bool>,
) -> Result<(SolutionCertificate, NewtonState)> {
    let mut state = initial_guess(eig, sel, delta, p, sched)?;
    let guess = state.u.clone();
    let mut failure = None;
    let window = (1u64 << (2 * p + 1)) as f64 * delta;
    let mut window_excess = 0.0f64;
    while state.residual_norm > sched.tol && state.iteration < sched.max_iters {
        match newton_step(&state, eig, sel, delta, p, sched) {
            Ok(next) => {
                for (k, w) in next.omega.iter().enumerate() {
                    let dev = (w - eig.eigenvalue(sel.alphas[k])).abs();
                    if window > 0.0 {
                        window_excess = window_excess.max(dev / window);
                    }
                }
                state = next;
            }
            Err(e) => {
                failure = Some(format!("{e}"));
                break;
            }
        }
    }
    let converged = failure.is_none() && state.residual_norm <= sched.tol;

    let halo_radius = (sched.n_radius as f64 * sched.halo_factor).ceil() as i64;
    let (_, halo_residual) = residual_slabs(&state.u, &state.omega, eig, delta, p, halo_radius)?;

    // Envelope fit: the decay statement bounds |u(n, j)| by an exponential
    // of max(|n|, label distance), so fit the per-shell maximum amplitude.
    let mut shell_max: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
    for ((n, j), c) in state.u.iter() {
        let mag = c.norm();
        if mag > 1e-14 {
            let reach = n.iter().map(|k| k.abs()).max().unwrap_or(0).max(state.u.jdist(*j));
            let slot = shell_max.entry(reach).or_insert(0.0);
            *slot = slot.max(mag);
        }
    }
    let xs: Vec<f64> = shell_max.keys().map(|&r| -(r as f64)).collect();
    let ys: Vec<f64> = shell_max.values().map(|m| m.ln()).collect();
    let coeff_decay = fit_line(&xs, &ys).ok().map(|(slope, intercept, rmse)| DecayFit {
        gamma_hat: slope.max(0.0),
        c_hat: intercept,
        rmse,
    });

    let mut dist = 0.0f64;
    for ((n, j), c) in state.u.iter() {
        dist += (c - guess.get(n, *j)).norm_sqr();
    }
    let omega_deviation: Vec<f64> = state
        .omega
        .iter()
        .zip(&sel.alphas)
        .map(|(w, &a)| w - eig.eigenvalue(a))
        .collect();

    let cert = SolutionCertificate {
        converged,
        iterations: state.iteration,
        final_residual: state.residual_norm,
        halo_residual,
        omega: state.omega.clone(),
        omega_deviation,
        coeff_decay,
        distance_to_guess: dist.sqrt(),
        omega_window_excess: window_excess,
        history: state.history.clone(),
        failure,
        audits_pass,
    };
    Ok((cert, state))
}

/// Parameters of the recursion-schedule audit. The growth factor is
/// G_r = M^{(r+1)^growth_exponent} and the smoothing factor
/// E_r = exp(-(c/3) M^{r+1}); neither constant has a canonical value, so
/// both are inputs with defaults calibrated for desk-scale use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub nu: f64,
    pub growth_exponent: f64,
    pub smoothing_c: f64,
    pub r_max: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { nu: 0.125, growth_exponent: -3.0, smoothing_c: 1.0, r_max: 30 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub holds: bool,
    /// (r, relation index 1..4) of the first violated relation.
    pub first_violation: Option<(usize, usize)>,
    /// Per-r log10 margins (lhs - rhs) of the four relations.
    pub margins: Vec<(usize, [f64; 4])>,
}

fn log10_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = terms.iter().map(|t| 10f64.powf(t - m)).sum();
    m + s.log10()
}

/// Verify the four step relations for the closed-form sequences
///   delta_r = delta^{1/2} M^{-(4/3)^r},   dbar_r = delta^{1/8} M^{-(4/3)^r / 2},
///   kappa_r = delta^{3/4} M^{-(4/3)^{r+2}}, kbar_r = delta^{3/8} M^{-(4/3)^{r+2} / 2}:
///   1. delta_{r+1} >= delta^{-nu} G_r kappa_r
///   2. dbar_{r+1}  >= delta^{-2nu} G_r^2 kbar_r + delta^{-nu} G_r delta_{r+1}
///   3. kappa_{r+1} >= delta^{1-nu} E_r kappa_r + delta_{r+1}^2
///   4. kbar_{r+1}  >= delta^{-2nu} G_r^2 kappa_r + delta^{1-nu} E_r kbar_r
///                     + delta_{r+1} dbar_{r+1}
/// for r = 1..=r_max, evaluated entirely in log space.
pub fn schedule_check(delta: f64, m_scale: f64, params: &ScheduleParams) -> Result<ScheduleReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta {delta} outside (0, 1)")));
    }
    if m_scale < 2.0 {
        return Err(Error::Config("scale factor M must be >= 2".into()));
    }
    if !(params.nu > 0.0 && params.nu < 1.0) {
        return Err(Error::Config("nu must lie in (0, 1)".into()));
    }
    let ld = delta.log10();
    let lm = m_scale.log10();
    let x = |r: usize| (4f64 / 3.0).powi(r as i32);
    let l_delta = |r: usize| 0.5 * ld - x(r) * lm;
    let l_dbar = |r: usize| 0.125 * ld - 0.5 * x(r) * lm;
    let l_kappa = |r: usize| 0.75 * ld - x(r + 2) * lm;
    let l_kbar = |r: usize| 0.375 * ld - 0.5 * x(r + 2) * lm;
    let growth = |r: usize| ((r + 1) as f64).powf(params.growth_exponent) * lm;
    let smooth = |r: usize| {
        let e = (r as f64 + 1.0) * lm;
        if e > 300.0 {
            f64::NEG_INFINITY
        } else {
            -(params.smoothing_c / 3.0) * 10f64.powf(e) * std::f64::consts::LOG10_E
        }
    };
    let nu = params.nu;

    let mut margins = Vec::new();
    let mut first = None;
    for r in 1..=params.r_max {
        let rhs1 = -nu * ld + growth(r) + l_kappa(r);
        let m1 = l_delta(r + 1) - rhs1;

        let rhs2 = log10_sum_exp(&[
            -2.0 * nu * ld + 2.0 * growth(r) + l_kbar(r),
            -nu * ld + growth(r) + l_delta(r + 1),
        ]);
        let m2 = l_dbar(r + 1) - rhs2;

        let rhs3 = log10_sum_exp(&[
            (1.0 - nu) * ld + smooth(r) + l_kappa(r),
            2.0 * l_delta(r + 1),
        ]);
        let m3 = l_kappa(r + 1) - rhs3;

        let rhs4 = log10_sum_exp(&[
            -2.0 * nu * ld + 2.0 * growth(r) + l_kappa(r),
            (1.0 - nu) * ld + smooth(r) + l_kbar(r),
            l_delta(r + 1) + l_dbar(r + 1),
        ]);
        let m4 = l_kbar(r + 1) - rhs4;

        let ms = [m1, m2, m3, m4];
        for (i, v) in ms.iter().enumerate() {
            if *v < 0.0 && first.is_none() {
                first = Some((r, i + 1));
            }
        }
        margins.push((r, ms));
    }
    Ok(ScheduleReport { holds: first.is_none(), first_violation: first, margins })
}

#[cfg(test)]
#[path = "solver_tests.rs"]
mod tests;
