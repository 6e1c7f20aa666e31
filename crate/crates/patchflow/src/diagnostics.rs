//! Executable checks of the model's provable bounds, plus independent
//! oracles for testing the projection.
//!
//! `check_run` turns each a-priori estimate (mass growth, support radius,
//! L1 equicontinuity, nutrient floor, monotone expansion, complementarity)
//! into a report entry; bounds with unspecified constants become
//! informational trend entries instead of pass/fail. `oracle_project_1d`
//! is a from-scratch 1-D projection via quantile functions and isotonic
//! regression, sharing no code with the 2-D solver.

use std::io::Write;

use thiserror::Error;

use crate::driver::{RunConfig, Trajectory};
use crate::field::{Lp, ScalarField};
use crate::geometry::{
    extract_boundary, extract_patch, hausdorff_distance, pressure_threshold, GeometryError,
    PatchMode,
};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("1-d oracle needs positive total mass")]
    ZeroMass,
    #[error("1-d oracle: projected support exits the grid")]
    SupportExitsGrid,
    #[error("trajectory has no snapshots")]
    EmptyTrajectory,
    #[error("convergence report needs a D = 0 reference run")]
    MissingReference,
    #[error("runs disagree in {0} (grid, tau and horizon must match)")]
    MismatchedRuns(&'static str),
    #[error("test function support touches the domain boundary")]
    SupportTouchesBoundary,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// Pass iff measured <= bound + tolerance.
    UpperBound,
    /// Pass iff |measured - bound| <= tolerance.
    Equality,
    /// Reported, never failed (bound has an unspecified constant).
    Info,
}

#[derive(Debug, Clone)]
pub struct InvariantEntry {
    pub name: &'static str,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub kind: EntryKind,
    pub anchor: &'static str,
}

impl InvariantEntry {
    pub fn pass(&self) -> bool {
        match self.kind {
            EntryKind::UpperBound => self.measured <= self.bound + self.tolerance,
            EntryKind::Equality => (self.measured - self.bound).abs() <= self.tolerance,
            EntryKind::Info => true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct InvariantReport {
    pub entries: Vec<InvariantEntry>,
}

impl InvariantReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(InvariantEntry::pass)
    }

    pub fn write_csv(&self, sink: &mut impl Write) -> Result<(), DiagnosticsError> {
        writeln!(sink, "name,measured,bound,tolerance,pass,anchor")?;
        for e in &self.entries {
            let pass = match e.kind {
                EntryKind::Info => "info",
                _ if e.pass() => "true",
                _ => "false",
            };
            writeln!(
                sink,
                "{},{:.16e},{:.16e},{:.16e},{},{}",
                e.name, e.measured, e.bound, e.tolerance, pass, e.anchor
            )?;
        }
        Ok(())
    }
}

/// Evaluate every a-priori bound on a complete trajectory. Pure: the same
/// trajectory yields the same report.
pub fn check_run(traj: &Trajectory, cfg: &RunConfig) -> Result<InvariantReport, DiagnosticsError> {
    if traj.snapshots.is_empty() {
        return Err(DiagnosticsError::EmptyTrajectory);
    }
    let initial = &traj.snapshots[0];
    let n_inf = initial.n.max_value();
    let lambda = initial.n.min_value();
    let m0 = initial.rho.integrate();
    let r0 = traj.series[0].support_radius;
    let h = cfg.grid.h;
    let mut entries = Vec::new();

    // Mass growth: ||rho(t)||_1 <= e^{t ||n0||} ||rho0||_1, 2% slack.
    let mass_ratio = traj
        .series
        .iter()
        .map(|r| r.mass / ((r.t * n_inf).exp() * m0))
        .fold(0.0_f64, f64::max);
    entries.push(InvariantEntry {
        name: "mass_growth_ratio",
        measured: mass_ratio,
        bound: 1.0,
        tolerance: 0.02,
        kind: EntryKind::UpperBound,
        anchor: "mass bound e^{t||n0||}||rho0||_1",
    });

    // Support radius: R(t) = R0 e^{t ||n0|| / 2} in two dimensions, + 2h.
    let support_excess = traj
        .series
        .iter()
        .map(|r| r.support_radius - (r0 * (r.t * n_inf / 2.0).exp() + 2.0 * h))
        .fold(f64::NEG_INFINITY, f64::max);
    entries.push(InvariantEntry {
        name: "support_radius_excess",
        measured: support_excess,
        bound: 0.0,
        tolerance: 0.0,
        kind: EntryKind::UpperBound,
        anchor: "support confined to B_{R0 e^{t||n0||/2}}",
    });

    // L1 equicontinuity across all retained snapshot pairs.
    let sup_mass = traj.series.iter().map(|r| r.mass).fold(0.0_f64, f64::max);
    let mut equi_ratio = 0.0_f64;
    for (i, a) in traj.snapshots.iter().enumerate() {
        for b in &traj.snapshots[i + 1..] {
            let s = b.t - a.t;
            let diff = b.rho.zip(&a.rho, |x, y| x - y).lp_norm(Lp::One);
            let bound = (s + 4.0 * cfg.tau) * n_inf * sup_mass;
            if bound > 0.0 {
                equi_ratio = equi_ratio.max(diff / bound);
            }
        }
    }
    entries.push(InvariantEntry {
        name: "l1_equicontinuity_ratio",
        measured: equi_ratio,
        bound: 1.0,
        tolerance: 0.0,
        kind: EntryKind::UpperBound,
        anchor: "||rho(t+s)-rho(t)||_1 <= (s+4tau)||n0||sup||rho||_1",
    });

    // Nutrient floor: the scheme guarantees min n >= lambda (1 - tau)^k
    // exactly, which is e^{-t} lambda up to O(tau); report the worst
    // deficiency against the exact discrete floor.
    let nutrient_deficiency = traj
        .series
        .iter()
        .map(|r| {
            let k = (r.t / cfg.tau).round();
            lambda * (1.0 - cfg.tau).powf(k) * (1.0 - 1e-9) - r.n_min
        })
        .fold(f64::NEG_INFINITY, f64::max);
    entries.push(InvariantEntry {
        name: "nutrient_floor_deficiency",
        measured: nutrient_deficiency,
        bound: 0.0,
        tolerance: 0.0,
        kind: EntryKind::UpperBound,
        anchor: "n(t) >= e^{-t} min n0",
    });

    // Monotone expansion of the saturated set between consecutive
    // snapshots, measured as defect mass relative to total mass.
    let h2 = h * h;
    let mut expansion_defect = 0.0_f64;
    for w in traj.snapshots.windows(2) {
        let mut defect = 0.0;
        for (a, b) in w[0].rho.values.iter().zip(&w[1].rho.values) {
            if *a >= 1.0 - 1e-6 && *b < 1.0 - 1e-6 {
                defect += h2 * (1.0 - b);
            }
        }
        expansion_defect = expansion_defect.max(defect / w[0].rho.integrate());
    }
    entries.push(InvariantEntry {
        name: "expansion_defect_fraction",
        measured: expansion_defect,
        bound: 0.0,
        tolerance: 1e-6,
        kind: EntryKind::UpperBound,
        anchor: "saturated set expands in time",
    });

    // Complementarity p (1 - rho) = 0 on every snapshot.
    let comp = traj
        .snapshots
        .iter()
        .map(|s| {
            s.p.values
                .iter()
                .zip(&s.rho.values)
                .map(|(p, r)| p * (1.0 - r))
                .fold(0.0_f64, f64::max)
        })
        .fold(0.0_f64, f64::max);
    entries.push(InvariantEntry {
        name: "complementarity_max",
        measured: comp,
        bound: 0.0,
        tolerance: cfg.projection.tol_orth,
        kind: EntryKind::UpperBound,
        anchor: "p(1-rho) = 0",
    });

    // Trend entries: the pressure estimates carry unspecified constants,
    // so report the worst ratio against B(t)^{(d+4)/(2d)} (d = 2).
    let trend = |vals: Vec<(f64, f64)>| {
        vals.iter()
            .map(|(t, v)| v / ((t * n_inf).exp() * m0).powf(1.5))
            .fold(0.0_f64, f64::max)
    };
    entries.push(InvariantEntry {
        name: "pressure_l2_trend",
        measured: trend(traj.series.iter().map(|r| (r.t, r.p_l2)).collect()),
        bound: f64::INFINITY,
        tolerance: 0.0,
        kind: EntryKind::Info,
        anchor: "||p||_2 <= C B(t)^{3/2} (C unspecified)",
    });
    entries.push(InvariantEntry {
        name: "pressure_gradient_l2_trend",
        measured: trend(traj.series.iter().map(|r| (r.t, r.grad_p_l2)).collect()),
        bound: f64::INFINITY,
        tolerance: 0.0,
        kind: EntryKind::Info,
        anchor: "||grad p||_2 <= C B(t)^{3/2} (C unspecified)",
    });
    let tv_max = traj
        .snapshots
        .iter()
        .map(|s| s.rho.total_variation())
        .fold(0.0_f64, f64::max);
    entries.push(InvariantEntry {
        name: "density_tv_max",
        measured: tv_max,
        bound: f64::INFINITY,
        tolerance: 0.0,
        kind: EntryKind::Info,
        anchor: "BV bound on rho (C unspecified)",
    });
    // Free-boundary gradient floor: min |grad p| over the boundary band.
    // The discrete gradient at a free boundary is not a faithful
    // estimator, so this is information only.
    let final_state = traj.final_state();
    if final_state.p.max_value() > 0.0 {
        let theta = pressure_threshold(&final_state.p, cfg.projection.tol_orth);
        let mask = extract_patch(&final_state.p, theta, PatchMode::Greater);
        let boundary = extract_boundary(&mask);
        let (gx, gy) = final_state.p.gradient();
        let g = cfg.grid;
        let mut kappa = f64::INFINITY;
        for &(x, y) in &boundary.points {
            let i = ((x - g.origin.0) / g.h).round() as usize % g.nx;
            let j = ((y - g.origin.1) / g.h).round() as usize % g.ny;
            let k = g.idx(i, j);
            kappa = kappa.min(gx.values[k].hypot(gy.values[k]));
        }
        entries.push(InvariantEntry {
            name: "boundary_pressure_gradient_min",
            measured: if kappa.is_finite() { kappa } else { 0.0 },
            bound: f64::INFINITY,
            tolerance: 0.0,
            kind: EntryKind::Info,
            anchor: "kappa_T = inf |grad p| on the free boundary (surrogate)",
        });
    }
    Ok(InvariantReport { entries })
}

/// Independent 1-D projection oracle. The 1-D Wasserstein projection onto
/// {0 <= rho <= 1} is an L2 projection of the quantile function: with
/// Q the quantile of mu, the constraint rho <= 1 is exactly "Q(m) - m
/// nondecreasing", so project g = Q - id onto the monotone cone by
/// pool-adjacent-violators and read the density back off the projected
/// quantile. Cells are [j h, (j+1) h).
pub fn oracle_project_1d(mu: &[f64], h: f64) -> Result<Vec<f64>, DiagnosticsError> {
    assert!(h > 0.0 && !mu.is_empty());
    assert!(mu.iter().all(|&v| v >= 0.0 && v.is_finite()));
    let n = mu.len();
    let mass: f64 = h * mu.iter().sum::<f64>();
    if mass <= 0.0 {
        return Err(DiagnosticsError::ZeroMass);
    }
    // Quantile at uniform mass nodes, by exact inversion of the piecewise
    // linear CDF.
    let k = (8 * n).max(4096);
    let dm = mass / k as f64;
    let mut g = Vec::with_capacity(k + 1);
    let mut cell = 0usize;
    let mut cdf_left = 0.0; // CDF at the left edge of `cell`
    for i in 0..=k {
        let m = (i as f64 / k as f64) * mass;
        while cell + 1 < n && cdf_left + h * mu[cell] < m - 1e-15 * mass {
            cdf_left += h * mu[cell];
            cell += 1;
        }
        // Skip zero-density cells: the quantile jumps to the next
        // positive-mass cell.
        while cell + 1 < n && mu[cell] == 0.0 {
            cell += 1;
        }
        let q = if mu[cell] > 0.0 {
            cell as f64 * h + (m - cdf_left) / mu[cell]
        } else {
            cell as f64 * h
        };
        g.push(q - m);
    }
    pava_nondecreasing(&mut g);
    // Projected quantile at node masses; monotone with slope >= 1 in m.
    // Deposit each mass segment dm uniformly over its position interval.
    let mut rho = vec![0.0; n];
    let x_max = n as f64 * h;
    for i in 0..k {
        let m0 = (i as f64 / k as f64) * mass;
        let m1 = ((i + 1) as f64 / k as f64) * mass;
        let a = g[i] + m0;
        let b = g[i + 1] + m1;
        if a < -1e-12 || b > x_max + 1e-12 {
            return Err(DiagnosticsError::SupportExitsGrid);
        }
        let width = (b - a).max(dm); // slope >= 1 makes width >= dm
        let density = dm / width;
        // Overlap of [a, b) with each cell.
        let j_lo = ((a / h).floor().max(0.0)) as usize;
        let j_hi = (((b / h).ceil()) as usize).min(n);
        for (j, r) in rho.iter_mut().enumerate().take(j_hi).skip(j_lo) {
            let lo = a.max(j as f64 * h);
            let hi = b.min((j + 1) as f64 * h);
            if hi > lo {
                *r += density * (hi - lo) / h;
            }
        }
    }
    Ok(rho)
}

/// Random smooth 1-D test profile: a few quadratic bumps with heights up
/// to 1.3 (so the constraint activates, but the transport displacement —
/// and with it the obstacle-problem linearization error — stays small),
/// supported in the middle half of the grid so the projected mass stays
/// inside. Cell-scale white noise is deliberately avoided: the continuum
/// quantile oracle and a grid solver only agree on profiles the grid
/// resolves.
pub fn random_bump_profile(rng: &mut impl rand::Rng, n: usize, h: f64) -> Vec<f64> {
    let length = n as f64 * h;
    let bumps = rng.gen_range(1..=3);
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            (
                rng.gen_range(0.35 * length..0.65 * length),
                rng.gen_range(0.05 * length..0.12 * length),
                rng.gen_range(0.5..1.3),
            )
        })
        .collect();
    (0..n)
        .map(|j| {
            let x = (j as f64 + 0.5) * h;
            params
                .iter()
                .map(|&(c, w, a)| a * (1.0 - ((x - c) / w).powi(2)).max(0.0))
                .fold(0.0_f64, f64::max)
                .min(1.3)
        })
        .collect()
}

/// In-place pool-adjacent-violators: L2 projection onto nondecreasing
/// sequences with uniform weights.
fn pava_nondecreasing(v: &mut [f64]) {
    let n = v.len();
    // Blocks of (mean, count) merged while out of order.
    let mut means: Vec<f64> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for &x in v.iter() {
        means.push(x);
        counts.push(1);
        while means.len() > 1 && means[means.len() - 2] > means[means.len() - 1] {
            let (m2, c2) = (means.pop().unwrap(), counts.pop().unwrap());
            let last = means.len() - 1;
            let c1 = counts[last];
            means[last] = (means[last] * c1 as f64 + m2 * c2 as f64) / (c1 + c2) as f64;
            counts[last] = c1 + c2;
        }
    }
    let mut out = 0;
    for (m, c) in means.iter().zip(&counts) {
        for _ in 0..*c {
            v[out] = *m;
            out += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct H1Row {
    pub d: f64,
    /// time integral of |grad p_D|^2 over space-time
    pub grad_sq: f64,
    /// time integral of |grad (p_D - p)|^2, p the D = 0 pressure
    pub grad_diff_sq: f64,
    /// time integral of |p_D - p|^2
    pub p_diff_sq: f64,
}

fn check_matching(runs: &[(f64, &Trajectory)]) -> Result<(), DiagnosticsError> {
    let first = runs.first().ok_or(DiagnosticsError::MissingReference)?.1;
    for (_, t) in runs {
        if t.snapshots.is_empty() || first.snapshots.is_empty() {
            return Err(DiagnosticsError::EmptyTrajectory);
        }
        if t.snapshots[0].rho.grid != first.snapshots[0].rho.grid {
            return Err(DiagnosticsError::MismatchedRuns("grid"));
        }
        if t.snapshots.len() != first.snapshots.len() {
            return Err(DiagnosticsError::MismatchedRuns("snapshot cadence"));
        }
        for (a, b) in t.snapshots.iter().zip(&first.snapshots) {
            if (a.t - b.t).abs() > 1e-12 {
                return Err(DiagnosticsError::MismatchedRuns("snapshot times"));
            }
        }
    }
    Ok(())
}

/// Space-time integrals of pressure gradients against the D = 0 reference,
/// one row per run. Time integrals use the right-continuous
/// piecewise-constant interpolant over retained snapshots.
pub fn h1_convergence_report(
    runs: &[(f64, &Trajectory)],
) -> Result<Vec<H1Row>, DiagnosticsError> {
    check_matching(runs)?;
    let reference = runs
        .iter()
        .find(|(d, _)| *d == 0.0)
        .ok_or(DiagnosticsError::MissingReference)?
        .1;
    let mut rows = Vec::new();
    for (d, traj) in runs {
        let mut row = H1Row { d: *d, grad_sq: 0.0, grad_diff_sq: 0.0, p_diff_sq: 0.0 };
        for (k, snap) in traj.snapshots.iter().enumerate() {
            let dt = if k + 1 < traj.snapshots.len() {
                traj.snapshots[k + 1].t - snap.t
            } else {
                0.0
            };
            if dt == 0.0 {
                continue;
            }
            let reference_p = &reference.snapshots[k].p;
            let (gx, gy) = snap.p.gradient();
            let (rx, ry) = reference_p.gradient();
            let h2 = snap.p.grid.h * snap.p.grid.h;
            let mut grad_sq = 0.0;
            let mut grad_diff_sq = 0.0;
            let mut p_diff_sq = 0.0;
            for i in 0..snap.p.values.len() {
                grad_sq += gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i];
                let dx = gx.values[i] - rx.values[i];
                let dy = gy.values[i] - ry.values[i];
                grad_diff_sq += dx * dx + dy * dy;
                let dp = snap.p.values[i] - reference_p.values[i];
                p_diff_sq += dp * dp;
            }
            row.grad_sq += dt * h2 * grad_sq;
            row.grad_diff_sq += dt * h2 * grad_diff_sq;
            row.p_diff_sq += dt * h2 * p_diff_sq;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_h1_csv(rows: &[H1Row], sink: &mut impl Write) -> Result<(), DiagnosticsError> {
    writeln!(sink, "D,grad_p_sq,grad_diff_sq,p_diff_sq")?;
    for r in rows {
        writeln!(
            sink,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            r.d, r.grad_sq, r.grad_diff_sq, r.p_diff_sq
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct HausdorffRow {
    pub d: f64,
    pub t: f64,
    pub d_h: f64,
}

/// Hausdorff distance between each run's pressure-patch boundary and the
/// D = 0 reference's, at the requested times.
pub fn hausdorff_convergence_report(
    runs: &[(f64, &Trajectory)],
    times: &[f64],
    tol_orth: f64,
) -> Result<Vec<HausdorffRow>, DiagnosticsError> {
    check_matching(runs)?;
    let reference = runs
        .iter()
        .find(|(d, _)| *d == 0.0)
        .ok_or(DiagnosticsError::MissingReference)?
        .1;
    let boundary_at = |traj: &Trajectory, t: f64| -> Result<_, DiagnosticsError> {
        let snap = traj
            .snapshots
            .iter()
            .rev()
            .find(|s| s.t <= t + 1e-12)
            .ok_or(DiagnosticsError::EmptyTrajectory)?;
        let theta = pressure_threshold(&snap.p, tol_orth);
        let mask = extract_patch(&snap.p, theta, PatchMode::Greater);
        let b = extract_boundary(&mask);
        if b.points.is_empty() {
            return Err(GeometryError::EmptyBoundary.into());
        }
        Ok(b)
    };
    let grid = reference.snapshots[0].rho.grid;
    let mut rows = Vec::new();
    for (d, traj) in runs {
        for &t in times {
            let a = boundary_at(traj, t)?;
            let b = boundary_at(reference, t)?;
            rows.push(HausdorffRow { d: *d, t, d_h: hausdorff_distance(&a, &b, grid)? });
        }
    }
    Ok(rows)
}

pub fn write_hausdorff_csv(
    rows: &[HausdorffRow],
    sink: &mut impl Write,
) -> Result<(), DiagnosticsError> {
    writeln!(sink, "D,t,hausdorff")?;
    for r in rows {
        writeln!(sink, "{:.16e},{:.16e},{:.16e}", r.d, r.t, r.d_h)?;
    }
    Ok(())
}

/// Smooth separable test function psi(x, y, t) =
/// amp (1-(x/a)^2)_+^2 (1-(y/a)^2)_+^2 cos(pi t / (2 T)): compactly
/// supported inside the box, vanishing at t = T.
#[derive(Debug, Clone, Copy)]
pub struct SmoothTestFunction {
    pub half_width: f64,
    pub t_final: f64,
    pub amplitude: f64,
}

impl SmoothTestFunction {
    fn bump(s: f64) -> f64 {
        let u = (1.0 - s * s).max(0.0);
        u * u
    }

    fn bump_prime(s: f64) -> f64 {
        let u = 1.0 - s * s;
        if u > 0.0 {
            -4.0 * s * u
        } else {
            0.0
        }
    }

    /// Spatial factor amp bx by.
    pub fn spatial(&self, x: f64, y: f64) -> f64 {
        let a = self.half_width;
        self.amplitude * Self::bump(x / a) * Self::bump(y / a)
    }

    /// Gradient of the spatial factor.
    pub fn spatial_grad(&self, x: f64, y: f64) -> (f64, f64) {
        let a = self.half_width;
        (
            self.amplitude * Self::bump_prime(x / a) / a * Self::bump(y / a),
            self.amplitude * Self::bump(x / a) * Self::bump_prime(y / a) / a,
        )
    }

    /// Time factor cos(pi t / (2 T)); vanishes at t = T.
    pub fn time_factor(&self, t: f64) -> f64 {
        (std::f64::consts::PI * t / (2.0 * self.t_final)).cos()
    }

    /// Exact integral of the time factor over [t0, t1].
    pub fn time_integral(&self, t0: f64, t1: f64) -> f64 {
        let w = std::f64::consts::PI / (2.0 * self.t_final);
        ((w * t1).sin() - (w * t0).sin()) / w
    }

    pub fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        self.spatial(x, y) * self.time_factor(t)
    }
}

/// Residuals of the two weak formulations:
/// r_rho = | iint (grad psi . grad p - rho dt psi) - int psi(0) rho0
///           - iint psi n rho |,
/// r_n   = | iint (D grad n . grad psi - n dt psi) - int psi(0) n0
///           + iint psi n rho |.
/// Space uses midpoint quadrature; time uses the piecewise-constant
/// interpolant with the separable time factor integrated exactly over
/// each interval (so a static trajectory cancels to round-off).
/// The trajectory should retain every step (snapshot_every = 1).
pub fn weak_form_residual(
    traj: &Trajectory,
    cfg: &RunConfig,
    psi: &SmoothTestFunction,
) -> Result<(f64, f64), DiagnosticsError> {
    if traj.snapshots.is_empty() {
        return Err(DiagnosticsError::EmptyTrajectory);
    }
    let g = cfg.grid;
    if psi.half_width >= g.len_x() / 2.0 {
        return Err(DiagnosticsError::SupportTouchesBoundary);
    }
    let h2 = g.h * g.h;
    let d = cfg.nutrient.diffusion;
    let mut lhs_rho = 0.0;
    let mut lhs_n = 0.0;
    let mut rhs_rho = 0.0;
    let mut rhs_n = 0.0;
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let t_next = if k + 1 < traj.snapshots.len() {
            traj.snapshots[k + 1].t
        } else {
            continue;
        };
        // Exact integrals of the time factor and its derivative over the
        // interval on which the fields are constant.
        let w_val = psi.time_integral(snap.t, t_next);
        let w_dt = psi.time_factor(t_next) - psi.time_factor(snap.t);
        let (px, py) = snap.p.gradient();
        let (nx, ny) = snap.n.gradient();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let idx = g.idx(i, j);
                let (x, y) = (g.x(i), g.y(j));
                let (gx, gy) = psi.spatial_grad(x, y);
                let s = psi.spatial(x, y);
                lhs_rho += h2
                    * (w_val * (gx * px.values[idx] + gy * py.values[idx])
                        - w_dt * s * snap.rho.values[idx]);
                rhs_rho += h2 * w_val * s * snap.n.values[idx] * snap.rho.values[idx];
                lhs_n += h2
                    * (w_val * d * (gx * nx.values[idx] + gy * ny.values[idx])
                        - w_dt * s * snap.n.values[idx]);
                rhs_n -= h2 * w_val * s * snap.n.values[idx] * snap.rho.values[idx];
            }
        }
    }
    let initial = &traj.snapshots[0];
    let psi0 = ScalarField::from_fn(g, |x, y| psi.value(x, y, 0.0));
    rhs_rho += h2
        * psi0
            .values
            .iter()
            .zip(&initial.rho.values)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    rhs_n += h2
        * psi0
            .values
            .iter()
            .zip(&initial.n.values)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    Ok(((lhs_rho - rhs_rho).abs(), (lhs_n - rhs_n).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{
        initial_state, run, InitialDensity, InitialNutrient, RunConfig, Scheme, SimState,
        Trajectory,
    };
    use crate::field::Grid2D;
    use crate::nutrient::NutrientConfig;
    use crate::projection::{project, ProjectionConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base_cfg(grid_n: usize, tau: f64, t_final: f64) -> RunConfig {
        RunConfig {
            grid: Grid2D::centered(grid_n, 1.0).unwrap(),
            tau,
            t_final,
            scheme: Scheme::I,
            projection: ProjectionConfig::new(tau),
            nutrient: NutrientConfig::new(0.0, 1.5).unwrap(),
            initial_density: InitialDensity::Disk { center: (0.0, 0.0), radius: 0.2 },
            initial_nutrient: InitialNutrient::Constant(1.5),
            snapshot_every: 4,
            seed: 0,
        }
    }

    #[test]
    fn oracle_identity_on_feasible_input() {
        let n = 1024;
        let h = 4.0 / n as f64;
        let mu: Vec<f64> = (0..n)
            .map(|j| {
                let x = (j as f64 + 0.5) * h;
                if (1.0..3.0).contains(&x) {
                    0.7
                } else {
                    0.0
                }
            })
            .collect();
        let out = oracle_project_1d(&mu, h).unwrap();
        let l1: f64 = h * mu.iter().zip(&out).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(l1 <= 1e-6, "feasible input moved by {l1}");
    }

    #[test]
    fn oracle_spreads_overloaded_indicator() {
        // 1.5 on [1.5, 2.5] in a [0,4] box -> 1 on [1.25, 2.75].
        let n = 1024;
        let h = 4.0 / n as f64;
        let mu: Vec<f64> = (0..n)
            .map(|j| {
                let x = (j as f64 + 0.5) * h;
                if (1.5..2.5).contains(&x) {
                    1.5
                } else {
                    0.0
                }
            })
            .collect();
        let out = oracle_project_1d(&mu, h).unwrap();
        let expected: Vec<f64> = (0..n)
            .map(|j| {
                let x = (j as f64 + 0.5) * h;
                if (1.25..2.75).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let l1: f64 = h * expected.iter().zip(&out).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(l1 <= 2e-2, "projection off by {l1} in L1");
        let mass_in: f64 = h * mu.iter().sum::<f64>();
        let mass_out: f64 = h * out.iter().sum::<f64>();
        assert!((mass_in - mass_out).abs() <= 1e-10);
        assert!(out.iter().all(|&v| v <= 1.0 + 1e-9));
    }

    #[test]
    fn oracle_double_density_half_interval() {
        // 2.0 on [1.5, 2.0] -> 1 on [1.25, 2.25].
        let n = 2048;
        let h = 4.0 / n as f64;
        let mu: Vec<f64> = (0..n)
            .map(|j| {
                let x = (j as f64 + 0.5) * h;
                if (1.5..2.0).contains(&x) {
                    2.0
                } else {
                    0.0
                }
            })
            .collect();
        let out = oracle_project_1d(&mu, h).unwrap();
        let expected: Vec<f64> = (0..n)
            .map(|j| {
                let x = (j as f64 + 0.5) * h;
                if (1.25..2.25).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let l1: f64 = h * expected.iter().zip(&out).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(l1 <= 2e-2, "projection off by {l1} in L1");
    }

    #[test]
    fn oracle_random_instances_feasible_and_mass_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = 256;
            let h = 2.0 / n as f64;
            let mu: Vec<f64> = (0..n)
                .map(|j| {
                    // Compact support away from the edges so the spread
                    // mass stays in the grid.
                    if (n / 4..3 * n / 4).contains(&j) {
                        rng.gen_range(0.0..1.8)
                    } else {
                        0.0
                    }
                })
                .collect();
            let out = oracle_project_1d(&mu, h).unwrap();
            assert!(out.iter().all(|&v| (0.0..=1.0 + 1e-9).contains(&v)));
            let mass_in: f64 = h * mu.iter().sum::<f64>();
            let mass_out: f64 = h * out.iter().sum::<f64>();
            assert!((mass_in - mass_out).abs() <= 1e-10 * mass_in.max(1.0));
        }
    }

    #[test]
    fn oracle_rejects_zero_mass() {
        assert!(matches!(
            oracle_project_1d(&[0.0; 32], 0.1),
            Err(DiagnosticsError::ZeroMass)
        ));
    }

    #[test]
    fn oracle_matches_2d_projection_on_striped_data() {
        // y-constant data makes the 2-D projection effectively 1-D along x.
        let g = Grid2D::centered(64, 1.0).unwrap();
        let tau = 1.0 / 128.0;
        let cfg = ProjectionConfig::new(tau);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let profile = random_bump_profile(&mut rng, g.nx, g.h);
            let mu = {
                let p = profile.clone();
                ScalarField::from_fn(g, move |x, _| {
                    let i = ((x - g.origin.0) / g.h).round() as usize;
                    p[i.min(g.nx - 1)]
                })
            };
            let res = project(&mu, &cfg).unwrap();
            let oracle = oracle_project_1d(&profile, g.h).unwrap();
            // Compare the middle row against the oracle in L1.
            let j = g.ny / 2;
            let l1: f64 = (0..g.nx)
                .map(|i| g.h * (res.rho_next.at(i, j) - oracle[i]).abs())
                .sum();
            assert!(l1 <= 1e-3, "2-D projection vs 1-D oracle: L1 gap {l1}");
        }
    }

    #[test]
    fn pava_matches_hand_examples() {
        let mut v = vec![1.0, 3.0, 2.0, 4.0];
        pava_nondecreasing(&mut v);
        assert_eq!(v, vec![1.0, 2.5, 2.5, 4.0]);
        let mut w = vec![3.0, 2.0, 1.0];
        pava_nondecreasing(&mut w);
        assert_eq!(w, vec![2.0, 2.0, 2.0]);
        let mut sorted = vec![1.0, 2.0, 3.0];
        pava_nondecreasing(&mut sorted);
        assert_eq!(sorted, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn check_run_passes_on_reference_run_and_is_deterministic() {
        let cfg = base_cfg(64, 1.0 / 64.0, 0.25);
        let traj = run(&cfg, None).unwrap();
        let report = check_run(&traj, &cfg).unwrap();
        assert!(report.all_pass(), "{:#?}", report.entries);
        let again = check_run(&traj, &cfg).unwrap();
        for (a, b) in report.entries.iter().zip(&again.entries) {
            assert_eq!(a.measured.to_bits(), b.measured.to_bits());
        }
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("name,measured,bound,tolerance,pass,anchor\n"));
        assert_eq!(text.lines().count(), report.entries.len() + 1);
    }

    #[test]
    fn check_run_flags_corrupted_trajectory() {
        let cfg = base_cfg(64, 1.0 / 64.0, 0.25);
        let mut traj = run(&cfg, None).unwrap();
        // Inflate the final density: breaks the mass bound.
        let last = traj.snapshots.len() - 1;
        traj.snapshots[last].rho = traj.snapshots[last].rho.map(|v| 3.0 * v);
        traj.series.last_mut().unwrap().mass *= 3.0;
        let report = check_run(&traj, &cfg).unwrap();
        assert!(!report.all_pass());
        let mass_entry = report
            .entries
            .iter()
            .find(|e| e.name == "mass_growth_ratio")
            .unwrap();
        assert!(!mass_entry.pass());
    }

    #[test]
    fn check_run_zero_nutrient_mass_constant() {
        let mut cfg = base_cfg(64, 1.0 / 64.0, 4.0 / 64.0);
        cfg.initial_nutrient = InitialNutrient::Constant(0.0);
        cfg.nutrient.boundary_guard_tol = 1.0;
        let traj = run(&cfg, None).unwrap();
        let report = check_run(&traj, &cfg).unwrap();
        assert!(report.all_pass());
        let mass_entry = report
            .entries
            .iter()
            .find(|e| e.name == "mass_growth_ratio")
            .unwrap();
        assert!((mass_entry.measured - 1.0).abs() < 1e-12, "mass must be constant");
    }

    fn sweep_pair() -> (RunConfig, Trajectory, Trajectory) {
        let mut cfg = base_cfg(64, 1.0 / 64.0, 0.125);
        cfg.snapshot_every = 2;
        let a = run(&cfg, None).unwrap();
        let mut cfg_d = cfg.clone();
        cfg_d.nutrient = NutrientConfig::new(2e-3, 1.5).unwrap();
        let b = run(&cfg_d, None).unwrap();
        (cfg, a, b)
    }

    #[test]
    fn h1_report_zero_against_itself_and_consistent() {
        let (_, reference, other) = sweep_pair();
        let runs = vec![(0.0, &reference), (0.0, &reference), (2e-3, &other)];
        let rows = h1_convergence_report(&runs).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].grad_diff_sq, 0.0);
        assert_eq!(rows[1].p_diff_sq, 0.0);
        assert!(rows[2].grad_diff_sq >= 0.0);
        // Algebraic self-consistency: |a-b|^2 = |a|^2 - 2 a.b + |b|^2,
        // recomputed here with an explicit cross term.
        let mut cross = 0.0;
        let mut ref_sq = 0.0;
        for (k, snap) in other.snapshots.iter().enumerate() {
            let dt = if k + 1 < other.snapshots.len() {
                other.snapshots[k + 1].t - snap.t
            } else {
                0.0
            };
            let (gx, gy) = snap.p.gradient();
            let (rx, ry) = reference.snapshots[k].p.gradient();
            let h2 = snap.p.grid.h * snap.p.grid.h;
            let mut c = 0.0;
            let mut r2 = 0.0;
            for i in 0..gx.values.len() {
                c += gx.values[i] * rx.values[i] + gy.values[i] * ry.values[i];
                r2 += rx.values[i] * rx.values[i] + ry.values[i] * ry.values[i];
            }
            cross += dt * h2 * c;
            ref_sq += dt * h2 * r2;
        }
        let reconstructed = rows[2].grad_sq - 2.0 * cross + ref_sq;
        assert!(
            (rows[2].grad_diff_sq - reconstructed).abs() <= 1e-10,
            "{} vs {}",
            rows[2].grad_diff_sq,
            reconstructed
        );
        let mut csv = Vec::new();
        write_h1_csv(&rows, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("D,grad_p_sq,"));
    }

    #[test]
    fn hausdorff_report_zero_against_itself() {
        let (cfg, reference, other) = sweep_pair();
        let runs = vec![(0.0, &reference), (2e-3, &other)];
        let t = 0.125;
        let rows =
            hausdorff_convergence_report(&runs, &[t], cfg.projection.tol_orth).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].d_h <= cfg.grid.h / 2.0, "self-distance {}", rows[0].d_h);
        assert!(rows[1].d_h.is_finite());
    }

    #[test]
    fn h1_report_requires_reference() {
        let (_, _, other) = sweep_pair();
        let runs = vec![(2e-3, &other)];
        assert!(matches!(
            h1_convergence_report(&runs),
            Err(DiagnosticsError::MissingReference)
        ));
    }

    #[test]
    fn weak_form_vanishes_on_static_run() {
        // rho = 0, n = c: every term is zero or cancels exactly.
        let g = Grid2D::centered(32, 1.0).unwrap();
        let tau = 1.0 / 32.0;
        let t_final = 4.0 * tau;
        let mut cfg = base_cfg(32, tau, t_final);
        cfg.snapshot_every = 1;
        let psi = SmoothTestFunction { half_width: 0.8, t_final, amplitude: 1.0 };
        let make = |t: f64, k: usize| SimState {
            t,
            rho: ScalarField::zeros(g),
            n: ScalarField::constant(g, 1.5),
            p: ScalarField::zeros(g),
            step_index: k,
        };
        let traj = Trajectory {
            snapshots: (0..5).map(|k| make(k as f64 * tau, k)).collect(),
            series: Vec::new(),
            failure: None,
        };
        let (r_rho, r_n) = weak_form_residual(&traj, &cfg, &psi).unwrap();
        assert!(r_rho <= 1e-10, "density residual {r_rho}");
        // n constant, rho = 0: the -n dt psi integral telescopes exactly
        // against the initial term because psi(T) = 0.
        assert!(r_n <= 1e-10, "nutrient residual {r_n}");
    }

    #[test]
    fn weak_form_matches_independent_quadrature() {
        // Hand-built two-snapshot trajectory with nontrivial fields; an
        // explicitly coded quadrature must agree to 1e-12.
        let g = Grid2D::centered(32, 1.0).unwrap();
        let tau = 0.25;
        let t_final = 2.0 * tau;
        let mut cfg = base_cfg(32, tau, t_final);
        cfg.snapshot_every = 1;
        cfg.nutrient = NutrientConfig::new(3e-3, 1.5).unwrap();
        let psi = SmoothTestFunction { half_width: 0.7, t_final, amplitude: 2.0 };
        let field = |a: f64| {
            ScalarField::from_fn(g, move |x, y| {
                ((std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).cos() * a)
                    .abs()
            })
        };
        let traj = Trajectory {
            snapshots: vec![
                SimState {
                    t: 0.0,
                    rho: field(0.5),
                    n: field(1.0),
                    p: field(0.2),
                    step_index: 0,
                },
                SimState {
                    t: tau,
                    rho: field(0.6),
                    n: field(0.9),
                    p: field(0.3),
                    step_index: 1,
                },
                SimState {
                    t: 2.0 * tau,
                    rho: field(0.7),
                    n: field(0.8),
                    p: field(0.4),
                    step_index: 2,
                },
            ],
            series: Vec::new(),
            failure: None,
        };
        let (r_rho, r_n) = weak_form_residual(&traj, &cfg, &psi).unwrap();
        // Independent quadrature, written from the weak forms directly:
        // psi = A bx(x) by(y) cos(w t), fields constant on [t_k, t_{k+1}).
        let h2 = g.h * g.h;
        let d = cfg.nutrient.diffusion;
        let w = std::f64::consts::PI / (2.0 * t_final);
        let mut lhs_rho = 0.0;
        let mut rhs_rho = 0.0;
        let mut lhs_n = 0.0;
        let mut rhs_n = 0.0;
        for (snap, t1) in traj.snapshots[..2].iter().zip([tau, 2.0 * tau]) {
            let int_cos = ((w * t1).sin() - (w * snap.t).sin()) / w;
            let int_dcos = (w * t1).cos() - (w * snap.t).cos();
            let (px, py) = snap.p.gradient();
            let (nx, ny) = snap.n.gradient();
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let k = g.idx(i, j);
                    let (x, y) = (g.x(i), g.y(j));
                    let a = psi.half_width;
                    let bump = |s: f64| (1.0_f64 - s * s).max(0.0).powi(2);
                    let bump_p = |s: f64| {
                        if s * s < 1.0 {
                            -4.0 * s * (1.0 - s * s)
                        } else {
                            0.0
                        }
                    };
                    let s_val = psi.amplitude * bump(x / a) * bump(y / a);
                    let gx = psi.amplitude * bump_p(x / a) / a * bump(y / a);
                    let gy = psi.amplitude * bump(x / a) * bump_p(y / a) / a;
                    lhs_rho += h2
                        * (int_cos * (gx * px.values[k] + gy * py.values[k])
                            - int_dcos * s_val * snap.rho.values[k]);
                    rhs_rho +=
                        h2 * int_cos * s_val * snap.n.values[k] * snap.rho.values[k];
                    lhs_n += h2
                        * (int_cos * d * (gx * nx.values[k] + gy * ny.values[k])
                            - int_dcos * s_val * snap.n.values[k]);
                    rhs_n -=
                        h2 * int_cos * s_val * snap.n.values[k] * snap.rho.values[k];
                }
            }
        }
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                let v = psi.value(g.x(i), g.y(j), 0.0);
                rhs_rho += h2 * v * traj.snapshots[0].rho.values[k];
                rhs_n += h2 * v * traj.snapshots[0].n.values[k];
            }
        }
        assert!((r_rho - (lhs_rho - rhs_rho).abs()).abs() <= 1e-12);
        assert!((r_n - (lhs_n - rhs_n).abs()).abs() <= 1e-12);
    }

    #[test]
    fn weak_form_rejects_wide_support() {
        let cfg = base_cfg(32, 1.0 / 32.0, 0.125);
        let traj = run(&cfg, None).unwrap();
        let psi =
            SmoothTestFunction { half_width: 1.5, t_final: 0.125, amplitude: 1.0 };
        assert!(matches!(
            weak_form_residual(&traj, &cfg, &psi),
            Err(DiagnosticsError::SupportTouchesBoundary)
        ));
    }

    #[test]
    fn initial_state_is_admissible_for_checks() {
        // Smoke test that check_run tolerates a single-snapshot run.
        let tau = 1.0 / 64.0;
        let cfg = base_cfg(64, tau, tau);
        let state = initial_state(&cfg).unwrap();
        let traj = run(&cfg, None).unwrap();
        assert_eq!(traj.snapshots[0].rho.values, state.rho.values);
        assert!(check_run(&traj, &cfg).unwrap().all_pass());
    }
}
