//! Command-line harness: single runs, diffusion sweeps, invariant checks
//! on stored trajectories, and randomized oracle self-tests.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 configuration
//! error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patchflow::config::{self, ParsedConfig};
use patchflow::diagnostics::{
    check_run, h1_convergence_report, hausdorff_convergence_report, oracle_project_1d,
    random_bump_profile, write_h1_csv, write_hausdorff_csv,
};
use patchflow::driver::{self, DriverError, SimState, Trajectory};
use patchflow::field::{read_snapshot, Grid2D, ScalarField};
use patchflow::projection::{c_transform, project, ProjectionConfig};

#[derive(Parser)]
#[command(name = "patchflow", about = "Congested tumor-growth simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single simulation from a config file.
    Simulate { config: PathBuf },
    /// Run the configured diffusion sweep plus the D = 0 reference, then
    /// write both convergence reports.
    Sweep { config: PathBuf },
    /// Check the stored invariants of a finished trajectory directory.
    Invariants { dir: PathBuf },
    /// Randomized self-tests of the 1-D projection oracle and the
    /// c-transform against brute force.
    OracleTest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Deliberately mis-scale the c-transform to verify the test
        /// detects it.
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate { config } => cmd_simulate(&config),
        Command::Sweep { config } => cmd_sweep(&config),
        Command::Invariants { dir } => cmd_invariants(&dir),
        Command::OracleTest { seed, count, inject_bug } => {
            cmd_oracle_test(seed, count, inject_bug)
        }
    };
    ExitCode::from(code)
}

fn load_config(path: &Path) -> Result<ParsedConfig, u8> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read config {}: {e}", path.display());
        EXIT_CONFIG
    })?;
    config::parse(&text).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    })
}

fn run_to_dir(cfg: &ParsedConfig, dir: &Path) -> Result<Trajectory, u8> {
    let traj = match driver::run(&cfg.run, Some(dir)) {
        Ok(t) => t,
        Err(DriverError::InvalidConfig(msg)) => {
            eprintln!("error: {msg}");
            return Err(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return Err(EXIT_RUNTIME);
        }
    };
    // Persist the effective config so `invariants` can reload the run.
    let written = std::fs::write(dir.join("config.txt"), config::serialize(cfg));
    if let Err(e) = written {
        eprintln!("error: cannot write config.txt: {e}");
        return Err(EXIT_RUNTIME);
    }
    if let Some(msg) = &traj.failure {
        eprintln!("error: run aborted: {msg}");
        return Err(EXIT_RUNTIME);
    }
    Ok(traj)
}

fn cmd_simulate(config: &Path) -> u8 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run_to_dir(&cfg, &cfg.output.clone()) {
        Ok(traj) => {
            println!(
                "simulate: {} steps, final mass {:.6}, output {}",
                traj.series.len() - 1,
                traj.final_state().rho.integrate(),
                cfg.output.display()
            );
            0
        }
        Err(code) => code,
    }
}

fn cmd_sweep(config: &Path) -> u8 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if cfg.sweep_d_values.is_empty() {
        eprintln!("error: sweep.d_values is empty");
        return EXIT_CONFIG;
    }
    // The D = 0 reference always runs; listed values follow config order.
    let mut d_values = vec![0.0];
    for &d in &cfg.sweep_d_values {
        if d != 0.0 {
            d_values.push(d);
        }
    }
    let workers = std::env::var("PATCHFLOW_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(cfg.sweep_workers)
        .max(1);
    let dir_for = |d: f64| cfg.output.join(format!("D_{d}"));
    let results: Vec<Mutex<Option<Result<Trajectory, u8>>>> =
        d_values.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(d_values.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= d_values.len() {
                    break;
                }
                let d = d_values[i];
                let mut run_cfg = cfg.clone();
                run_cfg.run.nutrient.diffusion = d;
                let result = run_to_dir(&run_cfg, &dir_for(d));
                *results[i].lock().unwrap() = Some(result);
            });
        }
    });
    let mut trajectories = Vec::new();
    for (d, cell) in d_values.iter().zip(&results) {
        match cell.lock().unwrap().take() {
            Some(Ok(t)) => trajectories.push((*d, t)),
            Some(Err(code)) => {
                eprintln!("error: sweep run D = {d} failed; partial results kept");
                return code;
            }
            None => unreachable!("worker pool covered every index"),
        }
    }
    let runs: Vec<(f64, &Trajectory)> =
        trajectories.iter().map(|(d, t)| (*d, t)).collect();
    let reported: Vec<f64> = cfg.sweep_d_values.clone();
    let write_reports = || -> Result<(), Box<dyn std::error::Error>> {
        let h1_rows = h1_convergence_report(&runs)?;
        let h1_out: Vec<_> = h1_rows
            .iter()
            .filter(|r| reported.contains(&r.d))
            .cloned()
            .collect();
        let mut f = BufWriter::new(File::create(cfg.output.join("h1.csv"))?);
        write_h1_csv(&h1_out, &mut f)?;
        let rows = hausdorff_convergence_report(
            &runs,
            &cfg.sweep_times,
            cfg.run.projection.tol_orth,
        )?;
        let rows_out: Vec<_> =
            rows.iter().filter(|r| reported.contains(&r.d)).cloned().collect();
        let mut f = BufWriter::new(File::create(cfg.output.join("hausdorff.csv"))?);
        write_hausdorff_csv(&rows_out, &mut f)?;
        Ok(())
    };
    if let Err(e) = write_reports() {
        eprintln!("error: {e}");
        return EXIT_RUNTIME;
    }
    println!(
        "sweep: {} runs, reports in {}",
        d_values.len(),
        cfg.output.display()
    );
    0
}

fn read_series(path: &Path) -> Result<Vec<driver::SeriesRow>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.parse().map_err(|_| format!("bad series value {s:?}")))
            .collect::<Result<_, _>>()?;
        if v.len() != 7 {
            return Err(format!("series row has {} fields, expected 7", v.len()));
        }
        rows.push(driver::SeriesRow {
            t: v[0],
            mass: v[1],
            max_rho: v[2],
            p_l2: v[3],
            grad_p_l2: v[4],
            support_radius: v[5],
            n_min: v[6],
        });
    }
    Ok(rows)
}

fn load_trajectory(dir: &Path) -> Result<Trajectory, String> {
    let mut steps: Vec<usize> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let name = name.to_string_lossy();
        if let Some(rest) = name.strip_prefix("snap_") {
            if let Some(step) = rest.strip_suffix("_rho.tpf") {
                steps.push(step.parse().map_err(|_| format!("bad snapshot name {name}"))?);
            }
        }
    }
    steps.sort_unstable();
    if steps.is_empty() {
        return Err(format!("no snapshots in {}", dir.display()));
    }
    let mut snapshots = Vec::new();
    for step in steps {
        let mut fields = Vec::new();
        for tag in ["rho", "n", "p"] {
            let path = dir.join(format!("snap_{step:05}_{tag}.tpf"));
            let mut file = File::open(&path)
                .map_err(|_| format!("missing snapshot for step {step}: {}", path.display()))?;
            let (f, _, t) = read_snapshot(&mut file).map_err(|e| e.to_string())?;
            fields.push((f, t));
        }
        let t = fields[0].1;
        let mut it = fields.into_iter();
        snapshots.push(SimState {
            t,
            rho: it.next().unwrap().0,
            n: it.next().unwrap().0,
            p: it.next().unwrap().0,
            step_index: step,
        });
    }
    let series = read_series(&dir.join("series.csv"))?;
    Ok(Trajectory { snapshots, series, failure: None })
}

fn cmd_invariants(dir: &Path) -> u8 {
    let cfg = match load_config(&dir.join("config.txt")) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let traj = match load_trajectory(dir) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    let report = match check_run(&traj, &cfg.run) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    let write = || -> std::io::Result<()> {
        let mut f = BufWriter::new(File::create(dir.join("invariants.csv"))?);
        report.write_csv(&mut f).map_err(std::io::Error::other)?;
        f.flush()
    };
    if let Err(e) = write() {
        eprintln!("error: cannot write invariants.csv: {e}");
        return EXIT_RUNTIME;
    }
    for entry in &report.entries {
        println!(
            "{}: measured {:.6e} bound {:.6e} -> {}",
            entry.name,
            entry.measured,
            entry.bound,
            if entry.pass() { "pass" } else { "FAIL" }
        );
    }
    if report.all_pass() {
        0
    } else {
        eprintln!("error: invariant check failed");
        EXIT_RUNTIME
    }
}

fn cmd_oracle_test(seed: u64, count: usize, inject_bug: bool) -> u8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grid2D::centered(128, 1.0).expect("static grid is valid");
    let tau = 1.0 / 256.0;
    let proj_cfg = ProjectionConfig::new(tau);
    let mut worst_oracle = 0.0_f64;
    let mut worst_ct = 0.0_f64;
    for i in 0..count {
        // 1-D oracle equivalence on y-constant data.
        let profile = random_bump_profile(&mut rng, g.nx, g.h);
        let p = profile.clone();
        let mu = ScalarField::from_fn(g, move |x, _| {
            let idx = ((x - g.origin.0) / g.h).round() as usize;
            p[idx.min(g.nx - 1)]
        });
        let res = match project(&mu, &proj_cfg) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: projection failed on instance {i}: {e}");
                return EXIT_RUNTIME;
            }
        };
        let oracle = match oracle_project_1d(&profile, g.h) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: oracle failed on instance {i}: {e}");
                return EXIT_RUNTIME;
            }
        };
        let j = g.ny / 2;
        let l1: f64 =
            (0..g.nx).map(|i| g.h * (res.rho_next.at(i, j) - oracle[i]).abs()).sum();
        worst_oracle = worst_oracle.max(l1);

        // c-transform vs O(N^2) brute force on a 64-node section.
        let gs = Grid2D::centered(64, 1.0).expect("static grid is valid");
        let (a, b, c) = (
            rng.gen_range(0.1..2.0),
            rng.gen_range(1.0..4.0),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let p = ScalarField::from_fn(gs, |x, y| {
            a * (1.0 + (b * x + c).sin() * (b * y - c).cos())
        });
        let mut ct = c_transform(&p, tau).expect("finite input");
        if inject_bug {
            ct = ct.map(|v| 1.01 * v);
        }
        let mut err = 0.0_f64;
        for j in 0..gs.ny {
            for i in 0..gs.nx {
                let (x, y) = (gs.x(i), gs.y(j));
                let mut inf = f64::INFINITY;
                for jj in 0..gs.ny {
                    for ii in 0..gs.nx {
                        let dx = gs.wrap_dx(gs.x(ii) - x);
                        let dy = gs.wrap_dy(gs.y(jj) - y);
                        inf = inf.min(p.at(ii, jj) + (dx * dx + dy * dy) / (2.0 * tau));
                    }
                }
                err = err.max((ct.at(i, j) - inf).abs());
            }
        }
        worst_ct = worst_ct.max(err);
    }
    println!(
        "oracle-test: {count} instances, worst 1-d oracle L1 gap {worst_oracle:.3e}, \
         worst c-transform error {worst_ct:.3e}"
    );
    if worst_oracle <= 1e-3 && worst_ct <= 1e-12 {
        0
    } else {
        eprintln!("error: oracle tolerances exceeded");
        EXIT_RUNTIME
    }
}
