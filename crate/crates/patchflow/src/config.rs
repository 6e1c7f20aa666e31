//! Plain key=value run configuration.
//!
//! Lines are `key = value` with `#` comments; keys are namespaced by
//! prefix (grid., run., projection., nutrient., sweep.). Unknown keys are
//! errors, parsing is order-independent, and serialize emits every
//! effective key (defaults included) in sorted order, so
//! parse -> serialize -> parse is stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::driver::{InitialDensity, InitialNutrient, RunConfig, Scheme};
use crate::field::Grid2D;
use crate::nutrient::NutrientConfig;
use crate::projection::ProjectionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected key=value, got {1:?}")]
    BadLine(usize, String),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("key {key}: {message}")]
    BadValue { key: String, message: String },
    #[error("death term b must be 0 (the model has no death term)")]
    NonZeroDeathTerm,
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

const KNOWN_KEYS: &[&str] = &[
    "grid.n",
    "grid.half_width",
    "run.tau",
    "run.t_final",
    "run.scheme",
    "run.snapshot_every",
    "run.seed",
    "run.b",
    "run.output",
    "run.shape",
    "run.disk_center_x",
    "run.disk_center_y",
    "run.disk_radius",
    "run.annulus_r_inner",
    "run.annulus_r_outer",
    "run.union_disks",
    "run.density_snapshot",
    "run.n0",
    "run.nutrient_snapshot",
    "projection.tol_mass",
    "projection.tol_constraint",
    "projection.tol_orth",
    "projection.max_iterations",
    "nutrient.d",
    "nutrient.substeps",
    "nutrient.far_field",
    "nutrient.boundary_guard_tol",
    "sweep.d_values",
    "sweep.times",
    "sweep.workers",
];

/// A parsed run plus the harness-level settings that do not belong to the
/// simulation itself.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub run: RunConfig,
    pub output: PathBuf,
    pub sweep_d_values: Vec<f64>,
    pub sweep_times: Vec<f64>,
    pub sweep_workers: usize,
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine(lineno + 1, raw.to_string()));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(ConfigError::DuplicateKey(key));
        }
    }
    Ok(map)
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                message: format!("not a number: {v:?}"),
            }),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                message: format!("not a count: {v:?}"),
            }),
        }
    }

    fn str(&self, key: &str, default: &str) -> String {
        self.map.get(key).cloned().unwrap_or_else(|| default.into())
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let Some(v) = self.map.get(key) else { return Ok(Vec::new()) };
        v.split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    message: format!("not a number: {s:?}"),
                })
            })
            .collect()
    }
}

pub fn parse(text: &str) -> Result<ParsedConfig, ConfigError> {
    let map = parse_pairs(text)?;
    let r = Reader { map: &map };

    if r.f64("run.b", 0.0)? != 0.0 {
        return Err(ConfigError::NonZeroDeathTerm);
    }

    let n = r.usize("grid.n", 128)?;
    let half_width = r.f64("grid.half_width", 1.0)?;
    let grid = Grid2D::centered(n, half_width)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let tau = r.f64("run.tau", 1.0 / 256.0)?;
    if !(tau > 0.0) {
        return Err(ConfigError::BadValue {
            key: "run.tau".into(),
            message: "must be > 0".into(),
        });
    }
    let scheme = match r.str("run.scheme", "I").as_str() {
        "I" | "i" | "1" => Scheme::I,
        "II" | "ii" | "2" => Scheme::II,
        other => {
            return Err(ConfigError::BadValue {
                key: "run.scheme".into(),
                message: format!("expected I or II, got {other:?}"),
            })
        }
    };

    let shape = r.str("run.shape", "disk");
    let center = (r.f64("run.disk_center_x", 0.0)?, r.f64("run.disk_center_y", 0.0)?);
    let initial_density = match shape.as_str() {
        "disk" => InitialDensity::Disk { center, radius: r.f64("run.disk_radius", 0.2)? },
        "annulus" => InitialDensity::Annulus {
            center,
            r_inner: r.f64("run.annulus_r_inner", 0.1)?,
            r_outer: r.f64("run.annulus_r_outer", 0.3)?,
        },
        "union_of_disks" => {
            let spec = r.str("run.union_disks", "");
            let mut disks = Vec::new();
            for part in spec.split(';').filter(|s| !s.trim().is_empty()) {
                let nums: Vec<f64> = part
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| ConfigError::BadValue {
                        key: "run.union_disks".into(),
                        message: format!("expected x,y,r triples, got {part:?}"),
                    })?;
                if nums.len() != 3 {
                    return Err(ConfigError::BadValue {
                        key: "run.union_disks".into(),
                        message: format!("expected x,y,r triples, got {part:?}"),
                    });
                }
                disks.push(((nums[0], nums[1]), nums[2]));
            }
            if disks.is_empty() {
                return Err(ConfigError::BadValue {
                    key: "run.union_disks".into(),
                    message: "no disks given".into(),
                });
            }
            InitialDensity::UnionOfDisks(disks)
        }
        "snapshot" => {
            InitialDensity::Snapshot(PathBuf::from(r.str("run.density_snapshot", "")))
        }
        other => {
            return Err(ConfigError::BadValue {
                key: "run.shape".into(),
                message: format!(
                    "expected disk | annulus | union_of_disks | snapshot, got {other:?}"
                ),
            })
        }
    };

    let n0 = r.f64("run.n0", 1.5)?;
    let initial_nutrient = if map.contains_key("run.nutrient_snapshot") {
        InitialNutrient::Snapshot(PathBuf::from(r.str("run.nutrient_snapshot", "")))
    } else {
        InitialNutrient::Constant(n0)
    };

    let mut projection = ProjectionConfig::new(tau);
    projection.tol_mass = r.f64("projection.tol_mass", projection.tol_mass)?;
    projection.tol_constraint =
        r.f64("projection.tol_constraint", projection.tol_constraint)?;
    projection.tol_orth = r.f64("projection.tol_orth", projection.tol_orth)?;
    projection.max_iterations =
        r.usize("projection.max_iterations", projection.max_iterations)?;

    let mut nutrient = NutrientConfig::new(
        r.f64("nutrient.d", 0.0)?,
        r.f64("nutrient.far_field", n0.max(f64::MIN_POSITIVE))?,
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    nutrient.substeps = r.usize("nutrient.substeps", nutrient.substeps)?;
    nutrient.boundary_guard_tol =
        r.f64("nutrient.boundary_guard_tol", nutrient.boundary_guard_tol)?;
    if n0 == 0.0 {
        // No far field to protect.
        nutrient.boundary_guard_tol = 1.0;
    }

    let run = RunConfig {
        grid,
        tau,
        t_final: r.f64("run.t_final", 0.5)?,
        scheme,
        projection,
        nutrient,
        initial_density,
        initial_nutrient,
        snapshot_every: r.usize("run.snapshot_every", 16)?,
        seed: r.usize("run.seed", 0)? as u64,
    };
    run.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let sweep_d_values = r.f64_list("sweep.d_values")?;
    let mut sweep_times = r.f64_list("sweep.times")?;
    if sweep_times.is_empty() {
        sweep_times.push(run.t_final);
    }
    Ok(ParsedConfig {
        output: PathBuf::from(r.str("run.output", "out")),
        run,
        sweep_d_values,
        sweep_times,
        sweep_workers: r.usize("sweep.workers", 4)?,
    })
}

/// Serialize every effective key (defaults filled in) in sorted order.
pub fn serialize(cfg: &ParsedConfig) -> String {
    let run = &cfg.run;
    let mut pairs: Vec<(String, String)> = vec![
        ("grid.n".into(), run.grid.nx.to_string()),
        ("grid.half_width".into(), fmt_f64(run.grid.len_x() / 2.0)),
        ("run.tau".into(), fmt_f64(run.tau)),
        ("run.t_final".into(), fmt_f64(run.t_final)),
        (
            "run.scheme".into(),
            match run.scheme {
                Scheme::I => "I".into(),
                Scheme::II => "II".into(),
            },
        ),
        ("run.snapshot_every".into(), run.snapshot_every.to_string()),
        ("run.seed".into(), run.seed.to_string()),
        ("run.b".into(), "0".into()),
        ("run.output".into(), cfg.output.display().to_string()),
        ("projection.tol_mass".into(), fmt_f64(run.projection.tol_mass)),
        (
            "projection.tol_constraint".into(),
            fmt_f64(run.projection.tol_constraint),
        ),
        ("projection.tol_orth".into(), fmt_f64(run.projection.tol_orth)),
        (
            "projection.max_iterations".into(),
            run.projection.max_iterations.to_string(),
        ),
        ("nutrient.d".into(), fmt_f64(run.nutrient.diffusion)),
        ("nutrient.substeps".into(), run.nutrient.substeps.to_string()),
        ("nutrient.far_field".into(), fmt_f64(run.nutrient.far_field)),
        (
            "nutrient.boundary_guard_tol".into(),
            fmt_f64(run.nutrient.boundary_guard_tol),
        ),
    ];
    match &run.initial_density {
        InitialDensity::Disk { center, radius } => {
            pairs.push(("run.shape".into(), "disk".into()));
            pairs.push(("run.disk_center_x".into(), fmt_f64(center.0)));
            pairs.push(("run.disk_center_y".into(), fmt_f64(center.1)));
            pairs.push(("run.disk_radius".into(), fmt_f64(*radius)));
        }
        InitialDensity::Annulus { center, r_inner, r_outer } => {
            pairs.push(("run.shape".into(), "annulus".into()));
            pairs.push(("run.disk_center_x".into(), fmt_f64(center.0)));
            pairs.push(("run.disk_center_y".into(), fmt_f64(center.1)));
            pairs.push(("run.annulus_r_inner".into(), fmt_f64(*r_inner)));
            pairs.push(("run.annulus_r_outer".into(), fmt_f64(*r_outer)));
        }
        InitialDensity::UnionOfDisks(disks) => {
            pairs.push(("run.shape".into(), "union_of_disks".into()));
            let spec = disks
                .iter()
                .map(|((x, y), r)| format!("{},{},{}", fmt_f64(*x), fmt_f64(*y), fmt_f64(*r)))
                .collect::<Vec<_>>()
                .join(";");
            pairs.push(("run.union_disks".into(), spec));
        }
        InitialDensity::Snapshot(path) => {
            pairs.push(("run.shape".into(), "snapshot".into()));
            pairs.push(("run.density_snapshot".into(), path.display().to_string()));
        }
    }
    match &run.initial_nutrient {
        InitialNutrient::Constant(c) => pairs.push(("run.n0".into(), fmt_f64(*c))),
        InitialNutrient::Snapshot(path) => {
            pairs.push(("run.nutrient_snapshot".into(), path.display().to_string()))
        }
    }
    if !cfg.sweep_d_values.is_empty() {
        pairs.push((
            "sweep.d_values".into(),
            cfg.sweep_d_values.iter().map(|d| fmt_f64(*d)).collect::<Vec<_>>().join(","),
        ));
    }
    pairs.push((
        "sweep.times".into(),
        cfg.sweep_times.iter().map(|t| fmt_f64(*t)).collect::<Vec<_>>().join(","),
    ));
    pairs.push(("sweep.workers".into(), cfg.sweep_workers.to_string()));
    pairs.sort();
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().unwrap(), v);
    s
}
