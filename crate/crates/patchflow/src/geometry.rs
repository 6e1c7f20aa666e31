//! Patch masks, boundaries, exact distance transforms and Hausdorff
//! distance on the periodic grid.
//!
//! Boundaries are represented as edge midpoints between in/out cells, so
//! every derived distance carries at most one cell of sampling error.

use std::io::Write;

use thiserror::Error;

use crate::field::{Grid2D, ScalarField};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("distance transform needs at least one seed")]
    EmptySeeds,
    #[error("hausdorff distance needs two non-empty boundaries")]
    EmptyBoundary,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Thresholding rule for [`extract_patch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatchMode {
    /// Cell is in the patch iff `f > threshold` (pressure positivity).
    Greater,
    /// Cell is in the patch iff `f >= 1 - threshold` (density saturation).
    GeqOneMinus,
}

/// Boolean per-cell patch membership.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    pub grid: Grid2D,
    pub bits: Vec<bool>,
    pub threshold: f64,
    pub mode: PatchMode,
}

impl PatchMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }
}

/// Finite point set approximating the patch boundary: midpoints of
/// in/out cell edges, in row-major scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBoundary {
    pub points: Vec<(f64, f64)>,
    pub threshold: f64,
}

impl PatchBoundary {
    /// CSV rows `x,y` with 17 significant digits.
    pub fn write_csv(&self, sink: &mut impl Write) -> Result<(), GeometryError> {
        writeln!(sink, "x,y")?;
        for (x, y) in &self.points {
            writeln!(sink, "{:.16e},{:.16e}", x, y)?;
        }
        Ok(())
    }
}

/// Exact Euclidean distance (with periodic wrap) to a seed point set,
/// sampled at cell centers.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub field: ScalarField,
}

impl DistanceField {
    /// Distance at the cell whose center is nearest to `(x, y)`.
    pub fn sample_nearest(&self, x: f64, y: f64) -> f64 {
        let g = self.field.grid;
        let fi = (x - g.origin.0) / g.h;
        let fj = (y - g.origin.1) / g.h;
        let i = (fi.round() as i64).rem_euclid(g.nx as i64) as usize;
        let j = (fj.round() as i64).rem_euclid(g.ny as i64) as usize;
        self.field.at(i, j)
    }
}

/// The numerical realization of `{p > 0}` / `{rho = 1}`.
pub fn extract_patch(f: &ScalarField, threshold: f64, mode: PatchMode) -> PatchMask {
    let bits = f
        .values
        .iter()
        .map(|&v| match mode {
            PatchMode::Greater => v > threshold,
            PatchMode::GeqOneMinus => v >= 1.0 - threshold,
        })
        .collect();
    PatchMask { grid: f.grid, bits, threshold, mode }
}

/// Pressure-positivity threshold: `max(1e-7, 10 * tol_orth * |p|_inf)`,
/// separating solver noise from genuine positivity.
pub fn pressure_threshold(p: &ScalarField, tol_orth: f64) -> f64 {
    (10.0 * tol_orth * p.max_value()).max(1e-7)
}

/// Midpoints of all in/out cell edges (4-neighborhood, periodic wrap).
/// A full or empty mask has no boundary.
pub fn extract_boundary(mask: &PatchMask) -> PatchBoundary {
    let g = mask.grid;
    let mut points = Vec::new();
    for j in 0..g.ny {
        let jp = (j + 1) % g.ny;
        for i in 0..g.nx {
            let ip = (i + 1) % g.nx;
            let here = mask.bits[g.idx(i, j)];
            if here != mask.bits[g.idx(ip, j)] {
                points.push((g.x(i) + 0.5 * g.h, g.y(j)));
            }
            if here != mask.bits[g.idx(i, jp)] {
                points.push((g.x(i), g.y(j) + 0.5 * g.h));
            }
        }
    }
    PatchBoundary { points, threshold: mask.threshold }
}

/// Seed set for [`distance_transform`].
pub enum Seeds<'a> {
    Boundary(&'a PatchBoundary),
    Mask(&'a PatchMask),
}

/// Exact (up to floating point) wrapped Euclidean distance to the seeds
/// at every cell center. Per output column, the squared distance is the
/// lower envelope of one parabola per seed (replicated across the wrap),
/// computed in linear time after sorting seeds by y.
pub fn distance_transform(seeds: Seeds, grid: Grid2D) -> Result<DistanceField, GeometryError> {
    let points: Vec<(f64, f64)> = match seeds {
        Seeds::Boundary(b) => b.points.clone(),
        Seeds::Mask(m) => {
            let g = m.grid;
            let mut pts = Vec::new();
            for j in 0..g.ny {
                for i in 0..g.nx {
                    if m.bits[g.idx(i, j)] {
                        pts.push((g.x(i), g.y(j)));
                    }
                }
            }
            pts
        }
    };
    if points.is_empty() {
        return Err(GeometryError::EmptySeeds);
    }

    let mut sorted = points;
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.partial_cmp(&b.0).unwrap()));

    let ly = grid.len_y();
    let mut out = vec![0.0; grid.len()];
    let mut parabolas: Vec<(f64, f64)> = Vec::with_capacity(3 * sorted.len());
    for i in 0..grid.nx {
        let xi = grid.x(i);
        // One parabola (apex, height) per seed and wrap copy; seeds are
        // sorted by y so the three blocks stay sorted by apex.
        parabolas.clear();
        for shift in [-ly, 0.0, ly] {
            for &(px, py) in &sorted {
                let dx = grid.wrap_dx(xi - px);
                parabolas.push((py + shift, dx * dx));
            }
        }
        let env = lower_envelope(&parabolas);
        for j in 0..grid.ny {
            out[grid.idx(i, j)] = envelope_eval(&env, grid.y(j)).sqrt();
        }
    }
    Ok(DistanceField { field: ScalarField { grid, values: out } })
}

/// Lower envelope of `f_q(y) = (y - q)^2 + c` for parabolas sorted by
/// apex `q`. Returns (apex, height, left end of active interval).
pub(crate) fn lower_envelope(parabolas: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    let mut env: Vec<(f64, f64, f64)> = Vec::with_capacity(parabolas.len());
    for &(q, c) in parabolas {
        loop {
            match env.last() {
                None => {
                    env.push((q, c, f64::NEG_INFINITY));
                    break;
                }
                Some(&(q0, c0, z0)) => {
                    if q == q0 {
                        // Same apex: the lower parabola wins everywhere;
                        // earlier seed kept on exact ties.
                        if c < c0 {
                            env.pop();
                            continue;
                        }
                        break;
                    }
                    let s = ((c + q * q) - (c0 + q0 * q0)) / (2.0 * (q - q0));
                    if s <= z0 {
                        env.pop();
                        continue;
                    }
                    env.push((q, c, s));
                    break;
                }
            }
        }
    }
    env
}

pub(crate) fn envelope_eval(env: &[(f64, f64, f64)], y: f64) -> f64 {
    // Binary search for the active interval.
    let mut lo = 0;
    let mut hi = env.len();
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if env[mid].2 <= y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (q, c, _) = env[lo];
    (y - q) * (y - q) + c
}

/// Hausdorff distance between two boundary point sets, evaluated via the
/// two distance transforms sampled at boundary points.
pub fn hausdorff_distance(
    a: &PatchBoundary,
    b: &PatchBoundary,
    grid: Grid2D,
) -> Result<f64, GeometryError> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(GeometryError::EmptyBoundary);
    }
    let dist_to_b = distance_transform(Seeds::Boundary(b), grid)?;
    let dist_to_a = distance_transform(Seeds::Boundary(a), grid)?;
    let sup_a = a
        .points
        .iter()
        .map(|&(x, y)| dist_to_b.sample_nearest(x, y))
        .fold(0.0_f64, f64::max);
    let sup_b = b
        .points
        .iter()
        .map(|&(x, y)| dist_to_a.sample_nearest(x, y))
        .fold(0.0_f64, f64::max);
    Ok(sup_a.max(sup_b))
}

/// Max wrapped distance from `center` to any cell with `rho > theta`;
/// zero for empty support.
pub fn support_radius(rho: &ScalarField, center: (f64, f64), theta: f64) -> f64 {
    let g = rho.grid;
    let mut r = 0.0_f64;
    for j in 0..g.ny {
        for i in 0..g.nx {
            if rho.values[g.idx(i, j)] > theta {
                r = r.max(g.dist((g.x(i), g.y(j)), center));
            }
        }
    }
    r
}

/// Cells of `mask` whose distance to the mask's own boundary is `>= s`.
/// A mask without boundary (empty or full domain) is returned unchanged.
pub fn inner_offset(mask: &PatchMask, s: f64) -> PatchMask {
    assert!(s >= 0.0, "offset must be non-negative");
    let boundary = extract_boundary(mask);
    if boundary.points.is_empty() {
        return mask.clone();
    }
    let dist = distance_transform(Seeds::Boundary(&boundary), mask.grid)
        .expect("non-empty boundary");
    let bits = mask
        .bits
        .iter()
        .zip(&dist.field.values)
        .map(|(&inside, &d)| inside && d >= s)
        .collect();
    PatchMask { grid: mask.grid, bits, threshold: mask.threshold, mode: mask.mode }
}

/// True iff every mask cell inside the ball `B_{r2}(x0)` lies at wrapped
/// distance `>= r1` from `x0` (annulus containment of Prop-style checks).
pub fn annulus_containment(mask: &PatchMask, x0: (f64, f64), r1: f64, r2: f64) -> bool {
    assert!(0.0 < r1 && r1 < r2, "need 0 < r1 < r2");
    let g = mask.grid;
    for j in 0..g.ny {
        for i in 0..g.nx {
            if mask.bits[g.idx(i, j)] {
                let d = g.dist((g.x(i), g.y(j)), x0);
                if d <= r2 && d < r1 {
                    return false;
                }
            }
        }
    }
    true
}
