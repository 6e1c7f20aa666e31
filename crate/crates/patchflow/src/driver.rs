//! Time-stepping driver: alternates a Wasserstein projection with a
//! nutrient update per Scheme I or Scheme II, producing the
//! piecewise-constant-in-time (right-continuous) trajectory and optional
//! on-disk snapshots.
//!
//! Scheme I grows by `mu = rho (1 + tau n)` then diffuses the absorbed
//! nutrient in one semigroup step. Scheme II solves the reaction-diffusion
//! equation over each interval with the density frozen one step behind
//! (the first interval is driven by the initial density).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::field::{write_snapshot, FieldError, FieldRole, Grid2D, ScalarField};
use crate::geometry::support_radius;
use crate::nutrient::{
    far_field_guard, scheme1_nutrient_step, scheme2_interval_solve, NutrientConfig, NutrientError,
};
use crate::projection::{project, ProjectionConfig, ProjectionError};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Nutrient(#[from] NutrientError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("time {t} outside [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    I,
    II,
}

/// Initial density shapes; all rasterize to {0, 1} cell values.
#[derive(Debug, Clone)]
pub enum InitialDensity {
    Disk { center: (f64, f64), radius: f64 },
    Annulus { center: (f64, f64), r_inner: f64, r_outer: f64 },
    UnionOfDisks(Vec<((f64, f64), f64)>),
    Snapshot(PathBuf),
}

#[derive(Debug, Clone)]
pub enum InitialNutrient {
    Constant(f64),
    Snapshot(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: Grid2D,
    pub tau: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    pub projection: ProjectionConfig,
    pub nutrient: NutrientConfig,
    pub initial_density: InitialDensity,
    pub initial_nutrient: InitialNutrient,
    pub snapshot_every: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        if !(self.tau > 0.0) {
            return Err(DriverError::InvalidConfig(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.t_final >= self.tau) {
            return Err(DriverError::InvalidConfig(format!(
                "T = {} must be >= tau = {}",
                self.t_final, self.tau
            )));
        }
        if self.snapshot_every == 0 {
            return Err(DriverError::InvalidConfig(
                "snapshot_every must be >= 1".into(),
            ));
        }
        self.nutrient
            .validate()
            .map_err(|e| DriverError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.tau).ceil() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub rho: ScalarField,
    pub n: ScalarField,
    pub p: ScalarField,
    pub step_index: usize,
}

#[derive(Debug, Clone)]
pub struct SeriesRow {
    pub t: f64,
    pub mass: f64,
    pub max_rho: f64,
    pub p_l2: f64,
    pub grad_p_l2: f64,
    pub support_radius: f64,
    pub n_min: f64,
}

/// Retained states (initial, every `snapshot_every`-th, final), the
/// per-step series, and a validity flag: a failed step leaves the partial
/// trajectory with `failure` set.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<SimState>,
    pub series: Vec<SeriesRow>,
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn is_valid(&self) -> bool {
        self.failure.is_none()
    }

    pub fn final_state(&self) -> &SimState {
        self.snapshots.last().expect("trajectory holds >= 1 state")
    }
}

pub fn build_initial_density(cfg: &RunConfig) -> Result<ScalarField, DriverError> {
    let g = cfg.grid;
    let rho = match &cfg.initial_density {
        InitialDensity::Disk { center, radius } => {
            if !(*radius > 0.0) {
                return Err(DriverError::InvalidConfig("disk radius must be > 0".into()));
            }
            ScalarField::disk(g, *center, *radius)
        }
        InitialDensity::Annulus { center, r_inner, r_outer } => {
            if !(0.0 < *r_inner && r_inner < r_outer) {
                return Err(DriverError::InvalidConfig(
                    "annulus needs 0 < r_inner < r_outer".into(),
                ));
            }
            let outer = ScalarField::disk(g, *center, *r_outer);
            let inner = ScalarField::disk(g, *center, *r_inner);
            outer.zip(&inner, |a, b| a - b)
        }
        InitialDensity::UnionOfDisks(disks) => {
            if disks.is_empty() {
                return Err(DriverError::InvalidConfig("union of zero disks".into()));
            }
            let mut acc = ScalarField::zeros(g);
            for (center, radius) in disks {
                acc = acc.zip(&ScalarField::disk(g, *center, *radius), f64::max);
            }
            acc
        }
        InitialDensity::Snapshot(path) => {
            let (f, _, _) = crate::field::read_snapshot(&mut File::open(path)?)?;
            if f.grid != g {
                return Err(DriverError::InvalidConfig(format!(
                    "density snapshot grid {}x{} does not match run grid {}x{}",
                    f.grid.nx, f.grid.ny, g.nx, g.ny
                )));
            }
            if f.min_value() < 0.0 || f.max_value() > 1.0 {
                return Err(DriverError::InvalidConfig(
                    "density snapshot values must lie in [0, 1]".into(),
                ));
            }
            f
        }
    };
    Ok(rho)
}

pub fn build_initial_nutrient(cfg: &RunConfig) -> Result<ScalarField, DriverError> {
    match &cfg.initial_nutrient {
        InitialNutrient::Constant(c) => {
            if !(*c >= 0.0) {
                return Err(DriverError::InvalidConfig(
                    "initial nutrient constant must be >= 0".into(),
                ));
            }
            Ok(ScalarField::constant(cfg.grid, *c))
        }
        InitialNutrient::Snapshot(path) => {
            let (f, _, _) = crate::field::read_snapshot(&mut File::open(path)?)?;
            if f.grid != cfg.grid {
                return Err(DriverError::InvalidConfig(
                    "nutrient snapshot grid does not match run grid".into(),
                ));
            }
            if f.min_value() < 0.0 {
                return Err(DriverError::InvalidConfig(
                    "nutrient snapshot must be non-negative".into(),
                ));
            }
            Ok(f)
        }
    }
}

pub fn initial_state(cfg: &RunConfig) -> Result<SimState, DriverError> {
    cfg.validate()?;
    let rho = build_initial_density(cfg)?;
    let n = build_initial_nutrient(cfg)?;
    check_box_margin(cfg, &rho, &n)?;
    Ok(SimState {
        t: 0.0,
        rho,
        n,
        p: ScalarField::zeros(cfg.grid),
        step_index: 0,
    })
}

/// The support stays inside B_{R0 exp(t ||n0|| / 2)} in two dimensions;
/// the periodic box is only a valid far-field surrogate if its half-width
/// exceeds that radius at the horizon.
fn check_box_margin(cfg: &RunConfig, rho0: &ScalarField, n0: &ScalarField) -> Result<(), DriverError> {
    let r0 = support_radius(rho0, (0.0, 0.0), 0.5);
    let r_final = r0 * (cfg.t_final * n0.max_value() / 2.0).exp();
    let half_width = cfg.grid.len_x() / 2.0;
    if r_final >= half_width {
        return Err(DriverError::InvalidConfig(format!(
            "projected support radius {r_final:.3} reaches the box half-width {half_width:.3}; \
             enlarge the box or shorten the horizon"
        )));
    }
    Ok(())
}

/// One step of the selected scheme. `rho_lag` is the density driving
/// Scheme II's absorption over this interval (the previous step's density;
/// the initial density for the first two intervals). Scheme I ignores it.
pub fn step(state: &SimState, rho_lag: &ScalarField, cfg: &RunConfig) -> Result<SimState, DriverError> {
    let tau = cfg.tau;
    let mu = state.rho.zip(&state.n, |r, n| r * (1.0 + tau * n));
    let proj = project(&mu, &cfg.projection)?;
    let n_next = match cfg.scheme {
        Scheme::I => scheme1_nutrient_step(&state.n, &proj.rho_next, tau, &cfg.nutrient)?,
        Scheme::II => scheme2_interval_solve(&state.n, rho_lag, tau, &cfg.nutrient)?,
    };
    far_field_guard(&n_next, &cfg.nutrient)?;
    Ok(SimState {
        t: state.t + tau,
        rho: proj.rho_next,
        n: n_next,
        p: proj.pressure,
        step_index: state.step_index + 1,
    })
}

fn series_row(state: &SimState, theta: f64) -> SeriesRow {
    use crate::field::Lp;
    let (gx, gy) = state.p.gradient();
    let grad_sq = gx.zip(&gy, |a, b| (a * a + b * b).sqrt());
    SeriesRow {
        t: state.t,
        mass: state.rho.integrate(),
        max_rho: state.rho.max_value(),
        p_l2: state.p.lp_norm(Lp::Two),
        grad_p_l2: grad_sq.lp_norm(Lp::Two),
        support_radius: support_radius(&state.rho, (0.0, 0.0), theta),
        n_min: state.n.min_value(),
    }
}

/// Run the full horizon. Snapshots are retained in memory at step 0, every
/// `snapshot_every`-th step, and the final step; the same cadence goes to
/// disk when `out_dir` is given, alongside the per-step `series.csv`.
/// A step failure stops the run and flags the partial trajectory.
pub fn run(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Trajectory, DriverError> {
    let state = initial_state(cfg)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let theta = 0.5; // support threshold: the patch is {0,1}-valued up to smearing
    let mut traj = Trajectory {
        snapshots: Vec::new(),
        series: vec![series_row(&state, theta)],
        failure: None,
    };
    write_state(out_dir, &state)?;
    traj.snapshots.push(state);
    let steps = cfg.steps();
    let mut rho_lag = traj.snapshots[0].rho.clone();
    let mut current = traj.snapshots[0].clone();
    for k in 1..=steps {
        let prev_rho = current.rho.clone();
        match step(&current, &rho_lag, cfg) {
            Ok(next) => {
                rho_lag = prev_rho;
                current = next;
            }
            Err(e) => {
                traj.failure = Some(format!("step {k}: {e}"));
                break;
            }
        }
        traj.series.push(series_row(&current, theta));
        if k % cfg.snapshot_every == 0 || k == steps {
            write_state(out_dir, &current)?;
            traj.snapshots.push(current.clone());
        }
    }
    if let Some(dir) = out_dir {
        let mut csv = BufWriter::new(File::create(dir.join("series.csv"))?);
        writeln!(csv, "t,mass,max_rho,p_l2,grad_p_l2,support_radius,n_min")?;
        for r in &traj.series {
            writeln!(
                csv,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.mass, r.max_rho, r.p_l2, r.grad_p_l2, r.support_radius, r.n_min
            )?;
        }
    }
    Ok(traj)
}

fn write_state(out_dir: Option<&Path>, state: &SimState) -> Result<(), DriverError> {
    let Some(dir) = out_dir else { return Ok(()) };
    for (field, role, tag) in [
        (&state.rho, FieldRole::Density, "rho"),
        (&state.n, FieldRole::Nutrient, "n"),
        (&state.p, FieldRole::Pressure, "p"),
    ] {
        let path = dir.join(format!("snap_{:05}_{}.tpf", state.step_index, tag));
        let mut sink = BufWriter::new(File::create(path)?);
        write_snapshot(field, role, state.t, &mut sink)?;
    }
    Ok(())
}

/// Right-continuous piecewise-constant interpolant: the retained snapshot
/// with the largest step time <= t.
pub fn interpolant(traj: &Trajectory, t: f64) -> Result<&SimState, DriverError> {
    let t_max = traj.final_state().t;
    if !(0.0..=t_max + 1e-12).contains(&t) {
        return Err(DriverError::TimeOutOfRange { t, t_max });
    }
    traj.snapshots
        .iter()
        .rev()
        .find(|s| s.t <= t + 1e-12)
        .ok_or(DriverError::TimeOutOfRange { t, t_max })
}
