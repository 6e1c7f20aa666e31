//! Nutrient updates: the Scheme I semigroup step, Scheme II's frozen-density
//! reaction-diffusion interval solve, and the exact zero-diffusion formula.
//!
//! All updates are pure absorption (no sources), so they preserve
//! non-negativity and never increase the max norm. The periodic box stands
//! in for the far field; `far_field_guard` checks that depletion has not
//! reached the boundary ring, which is the condition for that surrogate to
//! be valid.

use thiserror::Error;

use crate::field::ScalarField;
use crate::spectral::Spectral;

#[derive(Debug, Error)]
pub enum NutrientError {
    #[error("diffusion time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("tau = {0} >= 1 breaks positivity of the absorption factor")]
    TauTooLarge(f64),
    #[error("duration must be non-negative, got {0}")]
    NegativeDuration(f64),
    #[error("invalid nutrient config: {0}")]
    InvalidConfig(String),
    #[error(
        "far-field drift: boundary minimum {min:.6e} below threshold {threshold:.6e} \
         (box too small or horizon too long)"
    )]
    FarFieldDrift { min: f64, threshold: f64 },
    #[error("non-finite value in nutrient field")]
    NonFinite,
}

/// Diffusion coefficient, Scheme II sub-stepping, and the far-field value
/// the periodic box is supposed to hold at its edges.
#[derive(Debug, Clone, Copy)]
pub struct NutrientConfig {
    pub diffusion: f64,
    pub substeps: usize,
    pub far_field: f64,
    pub boundary_guard_tol: f64,
}

impl NutrientConfig {
    pub fn new(diffusion: f64, far_field: f64) -> Result<Self, NutrientError> {
        let cfg = Self {
            diffusion,
            substeps: 4,
            far_field,
            boundary_guard_tol: 1e-2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NutrientError> {
        if !(self.diffusion >= 0.0) {
            return Err(NutrientError::InvalidConfig(format!(
                "diffusion must be >= 0, got {}",
                self.diffusion
            )));
        }
        if self.substeps == 0 {
            return Err(NutrientError::InvalidConfig(
                "substeps must be >= 1".into(),
            ));
        }
        if !(self.far_field > 0.0) {
            return Err(NutrientError::InvalidConfig(format!(
                "far_field must be > 0, got {}",
                self.far_field
            )));
        }
        if !(self.boundary_guard_tol >= 0.0) {
            return Err(NutrientError::InvalidConfig(format!(
                "boundary_guard_tol must be >= 0, got {}",
                self.boundary_guard_tol
            )));
        }
        Ok(())
    }
}

/// Zero out transform round-off in (-1e-12, 0) without touching genuinely
/// negative data.
fn clip_fft_noise(f: ScalarField) -> ScalarField {
    f.map(|v| if v < 0.0 && v > -1e-12 { 0.0 } else { v })
}

/// e^{s Delta} f on the periodic grid: Fourier multiplication by
/// exp(-s |k|^2). Preserves the mean exactly and constants exactly;
/// s = 0 is the identity.
pub fn heat_semigroup(f: &ScalarField, s: f64) -> Result<ScalarField, NutrientError> {
    if !s.is_finite() || s < 0.0 {
        return Err(NutrientError::NegativeTime(s));
    }
    f.check_finite().map_err(|_| NutrientError::NonFinite)?;
    if s == 0.0 {
        return Ok(f.clone());
    }
    let spectral = Spectral::new(f.grid);
    Ok(clip_fft_noise(spectral.heat(f, s)))
}

/// Scheme I update: n_next = e^{tau D Delta} ( n (1 - tau rho_next) ).
pub fn scheme1_nutrient_step(
    n: &ScalarField,
    rho_next: &ScalarField,
    tau: f64,
    cfg: &NutrientConfig,
) -> Result<ScalarField, NutrientError> {
    cfg.validate()?;
    if tau >= 1.0 {
        return Err(NutrientError::TauTooLarge(tau));
    }
    let absorbed = n.zip(rho_next, |nv, rv| nv * (1.0 - tau * rv));
    let diffused = heat_semigroup(&absorbed, tau * cfg.diffusion)?;
    // The exact semigroup obeys the maximum principle; the spectral
    // approximation can ring by O(s) on sharp data, so clamp back into
    // the input range.
    let (lo, hi) = (absorbed.min_value(), absorbed.max_value());
    Ok(diffused.map(|v| v.clamp(lo, hi)))
}

/// Scheme II interval solve: d/dt n - D Delta n = -n rho_frozen over one
/// interval of length tau, by `substeps` Lie-split sub-steps of size
/// delta = tau / substeps: exact reaction n <- n e^{-delta rho}, then one
/// implicit spectral diffusion solve (I + delta D (-Delta))^{-1}.
pub fn scheme2_interval_solve(
    n_start: &ScalarField,
    rho_frozen: &ScalarField,
    tau: f64,
    cfg: &NutrientConfig,
) -> Result<ScalarField, NutrientError> {
    cfg.validate()?;
    if !(tau > 0.0) {
        return Err(NutrientError::NegativeTime(tau));
    }
    n_start.check_finite().map_err(|_| NutrientError::NonFinite)?;
    if cfg.diffusion == 0.0 {
        // The splitting collapses: pure reaction has the exact solution.
        return Ok(n_start.zip(rho_frozen, |nv, rv| nv * (-tau * rv).exp()));
    }
    let delta = tau / cfg.substeps as f64;
    let decay = rho_frozen.map(|r| (-delta * r).exp());
    let spectral = Spectral::new(n_start.grid);
    let mut u = n_start.clone();
    for _ in 0..cfg.substeps {
        u = u.zip(&decay, |uv, dv| uv * dv);
        // The resolvent obeys the maximum principle; clamp spectral
        // ringing back into the pre-diffusion range.
        let (lo, hi) = (u.min_value(), u.max_value());
        u = spectral
            .helmholtz_inverse(&u, delta * cfg.diffusion)
            .map(|v| v.clamp(lo, hi));
    }
    Ok(u)
}

/// Zero-diffusion closed form: n0 exp(-sum_i duration_i rho_i). The caller
/// supplies the lagged history (the density acting on [k tau, (k+1) tau)
/// is the previous step's).
pub fn nutrient_exact_d0(
    n0: &ScalarField,
    rho_history: &[(ScalarField, f64)],
) -> Result<ScalarField, NutrientError> {
    let mut exponent = ScalarField::zeros(n0.grid);
    for (rho, duration) in rho_history {
        if !(*duration >= 0.0) {
            return Err(NutrientError::NegativeDuration(*duration));
        }
        exponent = exponent.zip(rho, |e, r| e + duration * r);
    }
    Ok(n0.zip(&exponent, |nv, e| nv * (-e).exp()))
}

/// Passes iff the minimum of n over the boundary ring of cells stays above
/// (1 - boundary_guard_tol) * far_field; returns that minimum.
pub fn far_field_guard(n: &ScalarField, cfg: &NutrientConfig) -> Result<f64, NutrientError> {
    cfg.validate()?;
    let g = n.grid;
    let mut min = f64::INFINITY;
    for j in 0..g.ny {
        for i in 0..g.nx {
            if i == 0 || j == 0 || i == g.nx - 1 || j == g.ny - 1 {
                min = min.min(n.values[g.idx(i, j)]);
            }
        }
    }
    let threshold = (1.0 - cfg.boundary_guard_tol) * cfg.far_field;
    if min >= threshold {
        Ok(min)
    } else {
        Err(NutrientError::FarFieldDrift { min, threshold })
    }
}
