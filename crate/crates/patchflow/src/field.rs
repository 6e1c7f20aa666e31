//! Uniform periodic 2-D grids and scalar fields.
//!
//! Every quantity in the model (density, nutrient, pressure, distance
//! fields) is a `ScalarField`: a row-major array of cell-center samples on
//! a periodic square-cell grid. Fields are immutable value types; all
//! operations allocate fresh outputs.

use std::io::{Read, Write};

use thiserror::Error;

/// Slack allowed on density values before they count as out of range.
pub const EPS_CLIP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid must have nx, ny >= 8 and h > 0 (got {nx}x{ny}, h = {h})")]
    BadGrid { nx: usize, ny: usize, h: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),
    #[error("non-finite value at cell {index}")]
    NonFinite { index: usize },
    #[error("bad snapshot magic (expected \"TPF1\")")]
    BadMagic,
    #[error("snapshot truncated: expected {expected} payload bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("snapshot payload contains a non-finite value at cell {index}")]
    NonFinitePayload { index: usize },
    #[error("unknown field-role tag {0}")]
    BadRole(u8),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform periodic grid of square cells. Cell `(i, j)` has center
/// `origin + (i*h, j*h)`; index `i` varies fastest in storage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: (f64, f64),
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, h: f64, origin: (f64, f64)) -> Result<Self, FieldError> {
        if nx < 8 || ny < 8 || !(h > 0.0) || !h.is_finite() {
            return Err(FieldError::BadGrid { nx, ny, h });
        }
        Ok(Grid2D { nx, ny, h, origin })
    }

    /// Square grid covering the box `[-half_width, half_width]^2`.
    pub fn centered(n: usize, half_width: f64) -> Result<Self, FieldError> {
        let h = 2.0 * half_width / n as f64;
        Grid2D::new(n, n, h, (-half_width + 0.5 * h, -half_width + 0.5 * h))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin.0 + i as f64 * self.h
    }

    pub fn y(&self, j: usize) -> f64 {
        self.origin.1 + j as f64 * self.h
    }

    pub fn len_x(&self) -> f64 {
        self.nx as f64 * self.h
    }

    pub fn len_y(&self) -> f64 {
        self.ny as f64 * self.h
    }

    pub fn area(&self) -> f64 {
        self.len_x() * self.len_y()
    }

    /// Minimum-image displacement along x: `dx` reduced to `[-Lx/2, Lx/2]`.
    pub fn wrap_dx(&self, dx: f64) -> f64 {
        let l = self.len_x();
        dx - l * (dx / l).round()
    }

    pub fn wrap_dy(&self, dy: f64) -> f64 {
        let l = self.len_y();
        dy - l * (dy / l).round()
    }

    /// Wrapped Euclidean distance between two points.
    pub fn dist(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let dx = self.wrap_dx(a.0 - b.0);
        let dy = self.wrap_dy(a.1 - b.1);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Role tag stored in snapshot headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRole {
    Density = 0,
    Nutrient = 1,
    Pressure = 2,
}

impl FieldRole {
    fn from_tag(tag: u8) -> Result<Self, FieldError> {
        match tag {
            0 => Ok(FieldRole::Density),
            1 => Ok(FieldRole::Nutrient),
            2 => Ok(FieldRole::Pressure),
            t => Err(FieldError::BadRole(t)),
        }
    }
}

/// Real-valued function sampled at cell centers, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

/// Exponent for [`ScalarField::lp_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lp {
    One,
    Two,
    Inf,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        ScalarField { grid, values }
    }

    /// Indicator of the (wrapped) disk of radius `r` around `center`.
    pub fn disk(grid: Grid2D, center: (f64, f64), r: f64) -> Self {
        Self::from_fn(grid, |x, y| {
            if grid.dist((x, y), center) <= r {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn check_finite(&self) -> Result<(), FieldError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(FieldError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "zip requires identical grids");
        ScalarField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Midpoint-rule integral `h^2 * sum(values)`.
    pub fn integrate(&self) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        h2 * self.values.iter().sum::<f64>()
    }

    /// Discrete Lp norm with cell weight `h^2` (`max` for p = infinity).
    pub fn lp_norm(&self, p: Lp) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        match p {
            Lp::One => h2 * self.values.iter().map(|v| v.abs()).sum::<f64>(),
            Lp::Two => (h2 * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt(),
            Lp::Inf => self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        }
    }

    /// Centered differences with periodic wrap; exact for linear fields
    /// away from the wrap seam.
    pub fn gradient(&self) -> (ScalarField, ScalarField) {
        let g = self.grid;
        let inv2h = 1.0 / (2.0 * g.h);
        let mut dx = vec![0.0; g.len()];
        let mut dy = vec![0.0; g.len()];
        for j in 0..g.ny {
            let jm = (j + g.ny - 1) % g.ny;
            let jp = (j + 1) % g.ny;
            for i in 0..g.nx {
                let im = (i + g.nx - 1) % g.nx;
                let ip = (i + 1) % g.nx;
                let k = g.idx(i, j);
                dx[k] = (self.values[g.idx(ip, j)] - self.values[g.idx(im, j)]) * inv2h;
                dy[k] = (self.values[g.idx(i, jp)] - self.values[g.idx(i, jm)]) * inv2h;
            }
        }
        (ScalarField { grid: g, values: dx }, ScalarField { grid: g, values: dy })
    }

    /// Anisotropic discrete total variation `h * sum |forward differences|`
    /// over both axes, with periodic wrap.
    pub fn total_variation(&self) -> f64 {
        let g = self.grid;
        let mut tv = 0.0;
        for j in 0..g.ny {
            let jp = (j + 1) % g.ny;
            for i in 0..g.nx {
                let ip = (i + 1) % g.nx;
                let v = self.values[g.idx(i, j)];
                tv += (self.values[g.idx(ip, j)] - v).abs();
                tv += (self.values[g.idx(i, jp)] - v).abs();
            }
        }
        g.h * tv
    }
}

const MAGIC: &[u8; 4] = b"TPF1";

/// Writes the bit-exact TPF1 snapshot: magic, nx/ny (u32 LE), h and t
/// (f64 LE), one role byte, then `nx*ny` f64 LE values row-major.
pub fn write_snapshot(
    f: &ScalarField,
    role: FieldRole,
    t: f64,
    sink: &mut impl Write,
) -> Result<(), FieldError> {
    f.check_finite()?;
    sink.write_all(MAGIC)?;
    sink.write_all(&(f.grid.nx as u32).to_le_bytes())?;
    sink.write_all(&(f.grid.ny as u32).to_le_bytes())?;
    sink.write_all(&f.grid.h.to_le_bytes())?;
    sink.write_all(&t.to_le_bytes())?;
    sink.write_all(&[role as u8])?;
    for v in &f.values {
        sink.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a TPF1 snapshot. The grid origin is not stored in the format;
/// the returned grid is centered on the origin like [`Grid2D::centered`].
pub fn read_snapshot(source: &mut impl Read) -> Result<(ScalarField, FieldRole, f64), FieldError> {
    let mut head = [0u8; 29];
    read_exact_or_truncated(source, &mut head, 29)?;
    if &head[0..4] != MAGIC {
        return Err(FieldError::BadMagic);
    }
    let nx = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let h = f64::from_le_bytes(head[12..20].try_into().unwrap());
    let t = f64::from_le_bytes(head[20..28].try_into().unwrap());
    let role = FieldRole::from_tag(head[28])?;
    let origin_x = -0.5 * (nx as f64) * h + 0.5 * h;
    let origin_y = -0.5 * (ny as f64) * h + 0.5 * h;
    let grid = Grid2D::new(nx, ny, h, (origin_x, origin_y))?;
    let n_bytes = grid.len() * 8;
    let mut payload = vec![0u8; n_bytes];
    read_exact_or_truncated(source, &mut payload, n_bytes)?;
    let mut values = Vec::with_capacity(grid.len());
    for (index, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FieldError::NonFinitePayload { index });
        }
        values.push(v);
    }
    Ok((ScalarField { grid, values }, role, t))
}

fn read_exact_or_truncated(
    source: &mut impl Read,
    buf: &mut [u8],
    expected: usize,
) -> Result<(), FieldError> {
    let mut got = 0;
    while got < buf.len() {
        let k = source.read(&mut buf[got..])?;
        if k == 0 {
            return Err(FieldError::Truncated { expected, got });
        }
        got += k;
    }
    Ok(())
}
