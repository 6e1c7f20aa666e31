//! Wasserstein projection onto densities bounded by one.
//!
//! Each time step needs
//!   rho+ = argmin { W2^2(rho, mu) / (2 tau) : 0 <= rho <= 1, mass fixed },
//! whose Kantorovich dual is max_{p >= 0} integral p^{c_tau} mu - integral p
//! with p^{c_tau}(x) = inf_y p(y) + |x - y|^2 / (2 tau). Those transforms
//! and the displacement pushforward under S = Id - tau grad p^{c_tau} are
//! implemented here as standalone operations.
//!
//! [`project`] itself solves the step through the equivalent-to-O(tau)
//! complementarity form of the same minimizing movement: expanding the
//! pushforward to first order in tau gives
//!   rho+ = mu + tau div(m grad p),  p >= 0,  rho+ <= 1,  p (1 - rho+) = 0,
//! a monotone linear complementarity problem that a primal-dual active
//! set method solves to machine precision. The mobility m = max(mu, rho+)
//! is iterated so mass can saturate regions beyond the support of mu.
//! Direct sup-norm ascent on the sampled dual cannot reach the required
//! tolerances: the exact lower envelope and the bilinear splat are two
//! different discretizations of the same transport, and their fixed
//! points disagree at grid-ripple scale.

use thiserror::Error;

use crate::field::ScalarField;
use crate::geometry::{envelope_eval, lower_envelope};
use crate::spectral::Spectral;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("non-finite input field")]
    NonFinite,
    #[error("infeasible mass {mass} exceeds domain area {area}")]
    Infeasible { mass: f64, area: f64 },
    #[error("displacement {disp} exceeds half the domain extent {half}")]
    DisplacementTooLarge { disp: f64, half: f64 },
    #[error("dual ascent stalled at residual {residual} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("test function violates cone membership: |xi (1 - rho)| = {defect}")]
    ConeMembership { defect: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionConfig {
    pub tau: f64,
    pub tol_mass: f64,
    pub tol_constraint: f64,
    pub tol_orth: f64,
    pub max_iterations: usize,
    pub step_size_initial: f64,
}

impl ProjectionConfig {
    /// Defaults for a given time step; the initial dual step scales like
    /// 1/tau because pressure does.
    pub fn new(tau: f64) -> Self {
        assert!(tau > 0.0, "tau must be positive");
        Self {
            tau,
            tol_mass: 1e-8,
            tol_constraint: 1e-6,
            tol_orth: 1e-6,
            max_iterations: 500,
            step_size_initial: 1.0 / tau,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub rho_next: ScalarField,
    pub pressure: ScalarField,
    pub pressure_ct: ScalarField,
    pub iterations: usize,
    pub residual: f64,
    pub duality_gap_estimate: f64,
}

/// One periodic 1-D envelope pass of `min_q v(q) + (s - q)^2 / (2 tau)`
/// over apexes `q = q0 + k h` (k = 0..n-1), evaluated at the same nodes.
/// Values are scaled by 2 tau so the unit-coefficient parabola envelope
/// applies; three period copies realize the wrap exactly.
fn envelope_pass(values: &[f64], n: usize, q0: f64, h: f64, period: f64, tau: f64, out: &mut [f64]) {
    let two_tau = 2.0 * tau;
    let mut parabolas = Vec::with_capacity(3 * n);
    for shift in [-period, 0.0, period] {
        for (k, &v) in values.iter().enumerate() {
            parabolas.push((q0 + k as f64 * h + shift, two_tau * v));
        }
    }
    let env = lower_envelope(&parabolas);
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = envelope_eval(&env, q0 + k as f64 * h) / two_tau;
    }
}

/// Exact discrete c_tau-transform over grid nodes, computed as two 1-D
/// lower-envelope passes (the quadratic cost separates per axis).
pub fn c_transform(p: &ScalarField, tau: f64) -> Result<ScalarField, ProjectionError> {
    p.check_finite().map_err(|_| ProjectionError::NonFinite)?;
    let g = p.grid;
    let mut stage = vec![0.0; g.len()];
    let mut row_in = vec![0.0; g.nx];
    let mut row_out = vec![0.0; g.nx];
    for j in 0..g.ny {
        for i in 0..g.nx {
            row_in[i] = p.values[g.idx(i, j)];
        }
        envelope_pass(&row_in, g.nx, g.origin.0, g.h, g.len_x(), tau, &mut row_out);
        for i in 0..g.nx {
            stage[g.idx(i, j)] = row_out[i];
        }
    }
    let mut out = vec![0.0; g.len()];
    let mut col_in = vec![0.0; g.ny];
    let mut col_out = vec![0.0; g.ny];
    for i in 0..g.nx {
        for j in 0..g.ny {
            col_in[j] = stage[g.idx(i, j)];
        }
        envelope_pass(&col_in, g.ny, g.origin.1, g.h, g.len_y(), tau, &mut col_out);
        for j in 0..g.ny {
            out[g.idx(i, j)] = col_out[j];
        }
    }
    Ok(ScalarField { grid: g, values: out })
}

/// Pushforward of `mu` under `S = Id - tau grad(pressure_ct)`, with the
/// gradient taken by centered differences. Each cell's mass splats
/// bilinearly onto the four cells around its image, in row-major order,
/// so total mass is conserved exactly.
pub fn pushforward_density(
    mu: &ScalarField,
    pressure_ct: &ScalarField,
    tau: f64,
) -> Result<ScalarField, ProjectionError> {
    let g = mu.grid;
    let (gx, gy) = pressure_ct.gradient();
    let half = 0.5 * g.len_x().min(g.len_y());
    let mut out = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            let m = mu.values[k];
            if m == 0.0 {
                continue;
            }
            let dx = -tau * gx.values[k];
            let dy = -tau * gy.values[k];
            let disp = (dx * dx + dy * dy).sqrt();
            if disp > half {
                return Err(ProjectionError::DisplacementTooLarge { disp, half });
            }
            // Image position in fractional index coordinates.
            let fi = i as f64 + dx / g.h;
            let fj = j as f64 + dy / g.h;
            let i0 = fi.floor();
            let j0 = fj.floor();
            let wx = fi - i0;
            let wy = fj - j0;
            let nx = g.nx as i64;
            let ny = g.ny as i64;
            let ia = (i0 as i64).rem_euclid(nx) as usize;
            let ib = (i0 as i64 + 1).rem_euclid(nx) as usize;
            let ja = (j0 as i64).rem_euclid(ny) as usize;
            let jb = (j0 as i64 + 1).rem_euclid(ny) as usize;
            out[g.idx(ia, ja)] += m * (1.0 - wx) * (1.0 - wy);
            out[g.idx(ib, ja)] += m * wx * (1.0 - wy);
            out[g.idx(ia, jb)] += m * (1.0 - wx) * wy;
            out[g.idx(ib, jb)] += m * wx * wy;
        }
    }
    Ok(ScalarField { grid: g, values: out })
}

/// Dual functional `integral p^{c_tau} mu - integral p`.
pub fn dual_objective(p: &ScalarField, mu: &ScalarField, tau: f64) -> Result<f64, ProjectionError> {
    let pct = c_transform(p, tau)?;
    Ok(pct.zip(mu, |a, b| a * b).integrate() - p.integrate())
}

/// Projection of `mu` onto `{0 <= rho <= 1}`, by the complementarity
/// formulation of the minimizing movement (see module docs).
pub fn project(mu: &ScalarField, cfg: &ProjectionConfig) -> Result<ProjectionResult, ProjectionError> {
    mu.check_finite().map_err(|_| ProjectionError::NonFinite)?;
    let g = mu.grid;
    let mass_mu = mu.integrate();
    if mass_mu > g.area() {
        return Err(ProjectionError::Infeasible { mass: mass_mu, area: g.area() });
    }
    if mu.max_value() <= 1.0 {
        return Ok(ProjectionResult {
            rho_next: mu.clone(),
            pressure: ScalarField::zeros(g),
            pressure_ct: ScalarField::zeros(g),
            iterations: 0,
            residual: 0.0,
            duality_gap_estimate: 0.0,
        });
    }

    let spectral = Spectral::new(g);
    let tau = cfg.tau;
    let mut p = ScalarField::zeros(g);
    let mut active: Vec<bool> = mu.values.iter().map(|&v| v > 1.0).collect();
    let mut rho = mu.clone();
    let iterations = solve_obstacle(mu, tau, cfg, &spectral, &mut p, &mut active, &mut rho)?;

    // Inactive cells only receive inflow, so negative values can come
    // solely from CG rounding.
    debug_assert!(rho.min_value() >= -1e-10);
    rho.values.iter_mut().for_each(|v| *v = v.max(0.0));

    let violation = (rho.max_value() - 1.0).max(0.0);
    let mass_err = (rho.integrate() - mass_mu).abs() / mass_mu;
    let residual = violation + mass_err;
    let comp = p
        .values
        .iter()
        .zip(&rho.values)
        .map(|(&pv, &rv)| pv * (1.0 - rv))
        .fold(0.0_f64, f64::max);
    if residual > cfg.tol_constraint || comp > cfg.tol_orth {
        return Err(ProjectionError::NonConvergence { residual: residual.max(comp), iterations });
    }
    let pct = c_transform(&p, tau)?;
    let obj = dual_objective(&p, mu, tau)?;
    let gap = duality_gap(&pct, mu, tau, obj);
    Ok(ProjectionResult {
        rho_next: rho,
        pressure: p,
        pressure_ct: pct,
        iterations,
        residual,
        duality_gap_estimate: gap,
    })
}

/// `tau * div(m grad p)` with arithmetic-mean face mobilities, the
/// discrete transport increment of one projection step.
fn transport_increment(p: &ScalarField, mobility: &ScalarField, tau: f64) -> ScalarField {
    let g = p.grid;
    let scale = tau / (g.h * g.h);
    let mut out = vec![0.0; g.len()];
    for j in 0..g.ny {
        let jp = (j + 1) % g.ny;
        let jm = (j + g.ny - 1) % g.ny;
        for i in 0..g.nx {
            let ip = (i + 1) % g.nx;
            let im = (i + g.nx - 1) % g.nx;
            let c = g.idx(i, j);
            let mut acc = 0.0;
            for nb in [g.idx(ip, j), g.idx(im, j), g.idx(i, jp), g.idx(i, jm)] {
                let a = 0.5 * (mobility.values[c] + mobility.values[nb]);
                acc += a * (p.values[nb] - p.values[c]);
            }
            out[c] = scale * acc;
        }
    }
    ScalarField { grid: g, values: out }
}

/// Primal-dual active-set solve of the complementarity system
///   p >= 0,  w = 1 - mu - tau div(m grad p) >= 0,  p w = 0,
/// where the mobility m = max(mu, 1 on the active set) lets saturated
/// cells conduct mass outward even past the support of mu. Updates `p`,
/// `active` and `rho` in place and returns the number of active-set
/// iterations consumed.
fn solve_obstacle(
    mu: &ScalarField,
    tau: f64,
    cfg: &ProjectionConfig,
    spectral: &Spectral,
    p: &mut ScalarField,
    active: &mut Vec<bool>,
    rho: &mut ScalarField,
) -> Result<usize, ProjectionError> {
    let g = mu.grid;
    let mut iters = 0;
    loop {
        iters += 1;
        if iters > cfg.max_iterations {
            return Err(ProjectionError::NonConvergence {
                residual: rho.max_value() - 1.0,
                iterations: iters,
            });
        }
        if active.iter().all(|&a| a) {
            // A fully saturated torus leaves the pressure defined only up
            // to a constant and cannot happen for mass < area.
            return Err(ProjectionError::NonConvergence { residual: 0.0, iterations: iters });
        }
        let mobility = ScalarField {
            grid: g,
            values: mu
                .values
                .iter()
                .zip(active.iter())
                .map(|(&m, &a)| if a { m.max(1.0) } else { m })
                .collect(),
        };
        if active.iter().any(|&a| a) {
            solve_active_system(mu, &mobility, tau, active, spectral, p);
        } else {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
        *rho = mu.zip(&transport_increment(p, &mobility, tau), |a, b| a + b);
        // PDAS set update with unit coupling: activate where the
        // constraint is violated, release where the pressure went
        // negative.
        let mut changed = false;
        for k in 0..g.len() {
            let w = 1.0 - rho.values[k];
            let next = p.values[k] - w > 0.0;
            if next != active[k] {
                changed = true;
                active[k] = next;
            }
        }
        if !changed {
            // Clean the inactive side exactly.
            for k in 0..g.len() {
                if !active[k] {
                    p.values[k] = 0.0;
                }
            }
            return Ok(iters);
        }
    }
}

/// CG solve of `(-tau div(m grad .)) p = mu - 1` on the active set with
/// p = 0 elsewhere, preconditioned by the spectral inverse Laplacian
/// (plus a diagonal floor to keep it positive definite).
fn solve_active_system(
    mu: &ScalarField,
    mobility: &ScalarField,
    tau: f64,
    active: &[bool],
    spectral: &Spectral,
    p: &mut ScalarField,
) {
    let g = mu.grid;
    let n = g.len();
    let mask = |v: &mut ScalarField| {
        for k in 0..n {
            if !active[k] {
                v.values[k] = 0.0;
            }
        }
    };
    let apply = |x: &ScalarField| {
        let mut y = transport_increment(x, mobility, tau).map(|v| -v);
        mask(&mut y);
        y
    };
    let precond = |r: &ScalarField| {
        let mut z = spectral
            .inv_neg_laplacian(r)
            .zip(r, |a, b| (a + g.h * g.h * b) / tau);
        mask(&mut z);
        z
    };
    let dot = |a: &ScalarField, b: &ScalarField| {
        a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>()
    };

    let mut b = mu.map(|v| v - 1.0);
    mask(&mut b);
    // Warm start from the incoming p (masked to the current set).
    mask(p);
    let mut r = b.zip(&apply(p), |bv, av| bv - av);
    mask(&mut r);
    let b_norm = dot(&b, &b).sqrt().max(f64::MIN_POSITIVE);
    let mut z = precond(&r);
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..2000 {
        if dot(&r, &r).sqrt() <= 1e-13 * b_norm {
            break;
        }
        let ad = apply(&d);
        let dad = dot(&d, &ad);
        if dad <= 0.0 {
            break;
        }
        let alpha = rz / dad;
        for k in 0..n {
            p.values[k] += alpha * d.values[k];
            r.values[k] -= alpha * ad.values[k];
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            d.values[k] = z.values[k] + beta * d.values[k];
        }
    }
}

/// Primal value estimated from the displacement field, minus the dual
/// objective: (tau/2) integral |grad p^{c_tau}|^2 mu - F(p).
fn duality_gap(pct: &ScalarField, mu: &ScalarField, tau: f64, dual: f64) -> f64 {
    let (gx, gy) = pct.gradient();
    let mut primal = 0.0;
    for k in 0..mu.values.len() {
        primal += (gx.values[k] * gx.values[k] + gy.values[k] * gy.values[k]) * mu.values[k];
    }
    primal *= 0.5 * tau * mu.grid.h * mu.grid.h;
    (primal - dual).abs()
}

/// Discrete analogue of the variational inequality
/// `integral grad xi . grad p <= integral xi n_prev rho_prev mu`
/// for xi in the cone (xi >= 0 and xi = 0 off the saturated set).
pub fn check_variational_inequality(
    result: &ProjectionResult,
    mu: &ScalarField,
    rho_prev: &ScalarField,
    n_prev: &ScalarField,
    xi: &ScalarField,
    tol_orth: f64,
) -> Result<(f64, f64), ProjectionError> {
    let defect = xi
        .values
        .iter()
        .zip(&result.rho_next.values)
        .map(|(&x, &r)| (x * (1.0 - r)).abs())
        .fold(0.0_f64, f64::max);
    let negative = xi.min_value() < -tol_orth;
    if defect > tol_orth || negative {
        return Err(ProjectionError::ConeMembership { defect });
    }
    let (xix, xiy) = xi.gradient();
    let (px, py) = result.pressure.gradient();
    let h2 = mu.grid.h * mu.grid.h;
    let lhs: f64 = (0..mu.values.len())
        .map(|k| xix.values[k] * px.values[k] + xiy.values[k] * py.values[k])
        .sum::<f64>()
        * h2;
    let rhs: f64 = (0..mu.values.len())
        .map(|k| xi.values[k] * n_prev.values[k] * rho_prev.values[k] * mu.values[k])
        .sum::<f64>()
        * h2;
    Ok((lhs, rhs))
}

/// Grid for most projection tests: 128 cells over [-1, 1]^2.
#[cfg(test)]
fn test_grid() -> crate::field::Grid2D {
    crate::field::Grid2D::centered(128, 1.0).unwrap()
}
