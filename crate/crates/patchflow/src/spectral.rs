//! Fourier-multiplier solves on the periodic grid.
//!
//! All periodic constant-coefficient operators used by the crate (heat
//! semigroup, inverse Laplacian, implicit diffusion) reduce to a
//! multiplier in `|k|^2`. Plans are cached per grid size.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::field::{Grid2D, ScalarField};

pub struct Spectral {
    grid: Grid2D,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    /// Squared wavenumber per mode, row-major like the fields.
    k2: Vec<f64>,
}

impl Spectral {
    pub fn new(grid: Grid2D) -> Self {
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(grid.nx);
        let inv_x = planner.plan_fft_inverse(grid.nx);
        let fwd_y = planner.plan_fft_forward(grid.ny);
        let inv_y = planner.plan_fft_inverse(grid.ny);
        let two_pi = 2.0 * std::f64::consts::PI;
        let kx: Vec<f64> = (0..grid.nx)
            .map(|m| {
                let m = if m <= grid.nx / 2 { m as f64 } else { m as f64 - grid.nx as f64 };
                two_pi * m / grid.len_x()
            })
            .collect();
        let ky: Vec<f64> = (0..grid.ny)
            .map(|m| {
                let m = if m <= grid.ny / 2 { m as f64 } else { m as f64 - grid.ny as f64 };
                two_pi * m / grid.len_y()
            })
            .collect();
        let mut k2 = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                k2.push(kx[i] * kx[i] + ky[j] * ky[j]);
            }
        }
        Spectral { grid, fwd_x, inv_x, fwd_y, inv_y, k2 }
    }

    /// Applies the Fourier multiplier `m(|k|^2)` to `f`.
    pub fn apply_multiplier(&self, f: &ScalarField, m: impl Fn(f64) -> f64) -> ScalarField {
        assert_eq!(f.grid, self.grid, "spectral plan grid mismatch");
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut buf: Vec<Complex<f64>> =
            f.values.iter().map(|&v| Complex::new(v, 0.0)).collect();

        for row in buf.chunks_exact_mut(nx) {
            self.fwd_x.process(row);
        }
        self.transform_columns(&mut buf, &self.fwd_y);

        for (c, &k2) in buf.iter_mut().zip(&self.k2) {
            *c *= m(k2);
        }

        for row in buf.chunks_exact_mut(nx) {
            self.inv_x.process(row);
        }
        self.transform_columns(&mut buf, &self.inv_y);

        let scale = 1.0 / (nx * ny) as f64;
        ScalarField {
            grid: self.grid,
            values: buf.iter().map(|c| c.re * scale).collect(),
        }
    }

    fn transform_columns(&self, buf: &mut [Complex<f64>], fft: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut col = vec![Complex::new(0.0, 0.0); ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = buf[j * nx + i];
            }
            fft.process(&mut col);
            for j in 0..ny {
                buf[j * nx + i] = col[j];
            }
        }
    }

    /// Heat semigroup `exp(s * Laplacian)`: multiplier `exp(-s|k|^2)`.
    /// The mean mode is untouched, so the mean is preserved.
    pub fn heat(&self, f: &ScalarField, s: f64) -> ScalarField {
        if s == 0.0 {
            return f.clone();
        }
        self.apply_multiplier(f, |k2| (-s * k2).exp())
    }

    /// Zero-mean solution of `-Laplacian u = f - mean(f)`.
    pub fn inv_neg_laplacian(&self, f: &ScalarField) -> ScalarField {
        self.apply_multiplier(f, |k2| if k2 == 0.0 { 0.0 } else { 1.0 / k2 })
    }

    /// Solves `(I + a * (-Laplacian)) u = f`.
    pub fn helmholtz_inverse(&self, f: &ScalarField, a: f64) -> ScalarField {
        self.apply_multiplier(f, |k2| 1.0 / (1.0 + a * k2))
    }
}
