//! End-to-end acceptance gate: one pass/fail line per criterion, all on
//! the golden configuration (box [-1,1]^2, 128^2 grid, disk radius 0.2,
//! n0 = 1.5, tau = 1/256, T = 0.5, Scheme I) unless a criterion says
//! otherwise.

use patchflow::diagnostics::{
    h1_convergence_report, hausdorff_convergence_report, oracle_project_1d,
    random_bump_profile, weak_form_residual, SmoothTestFunction,
};
use patchflow::driver::{
    run, InitialDensity, InitialNutrient, RunConfig, Scheme, Trajectory,
};
use patchflow::field::{Grid2D, Lp, ScalarField};
use patchflow::nutrient::{heat_semigroup, scheme1_nutrient_step, NutrientConfig};
use patchflow::projection::{
    c_transform, check_variational_inequality, project, ProjectionConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAU: f64 = 1.0 / 256.0;
const T_FINAL: f64 = 0.5;
const N0: f64 = 1.5;
const R0: f64 = 0.2;

fn golden_cfg() -> RunConfig {
    RunConfig {
        grid: Grid2D::centered(128, 1.0).unwrap(),
        tau: TAU,
        t_final: T_FINAL,
        scheme: Scheme::I,
        projection: ProjectionConfig::new(TAU),
        nutrient: NutrientConfig::new(0.0, N0).unwrap(),
        initial_density: InitialDensity::Disk { center: (0.0, 0.0), radius: R0 },
        initial_nutrient: InitialNutrient::Constant(N0),
        snapshot_every: 16,
        seed: 0,
    }
}

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn report(&mut self, idx: usize, name: &str, pass: bool, detail: String) {
        println!(
            "criterion {idx:2} {name}: {} ({detail})",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failures.push(format!("criterion {idx} {name}: {detail}"));
        }
    }
}

#[test]
fn acceptance_criteria() {
    let mut gate = Gate { failures: Vec::new() };
    let cfg = golden_cfg();
    let h = cfg.grid.h;

    // 1. Radial projection: 1.2 * disk(0.2) projects to disk(0.2 sqrt(1.2)).
    {
        let mu = ScalarField::disk(cfg.grid, (0.0, 0.0), R0).map(|v| 1.2 * v);
        let res = project(&mu, &cfg.projection).unwrap();
        let r_target = R0 * 1.2_f64.sqrt();
        let target = ScalarField::disk(cfg.grid, (0.0, 0.0), r_target);
        let sym_diff = res.rho_next.zip(&target, |a, b| (a - b).abs()).integrate();
        let bound = 6.0 * h * std::f64::consts::TAU * r_target;
        gate.report(
            1,
            "radial_projection",
            sym_diff <= bound,
            format!("sym-diff {sym_diff:.3e} <= {bound:.3e}"),
        );
    }

    let golden = run(&cfg, None).unwrap();
    assert!(golden.is_valid(), "golden run failed: {:?}", golden.failure);

    // 2. Support radius bound at every snapshot.
    {
        let worst = golden
            .series
            .iter()
            .map(|r| r.support_radius - (R0 * (r.t * N0 / 2.0).exp() + 2.0 * h))
            .fold(f64::NEG_INFINITY, f64::max);
        gate.report(2, "support_bound", worst <= 0.0, format!("max excess {worst:.3e}"));
    }

    // 3. Mass bound with 2% slack.
    {
        let m0 = golden.series[0].mass;
        let worst = golden
            .series
            .iter()
            .map(|r| r.mass / ((N0 * r.t).exp() * m0 * 1.02))
            .fold(0.0_f64, f64::max);
        gate.report(3, "mass_bound", worst <= 1.0, format!("max ratio {worst:.6}"));
    }

    // 4. L1 equicontinuity across all snapshot pairs.
    {
        let sup_mass = golden.series.iter().map(|r| r.mass).fold(0.0_f64, f64::max);
        let mut worst = 0.0_f64;
        for (i, a) in golden.snapshots.iter().enumerate() {
            for b in &golden.snapshots[i + 1..] {
                let s = b.t - a.t;
                let diff = b.rho.zip(&a.rho, |x, y| x - y).lp_norm(Lp::One);
                worst = worst.max(diff / ((s + 4.0 * TAU) * N0 * sup_mass));
            }
        }
        gate.report(4, "l1_equicontinuity", worst <= 1.0, format!("max ratio {worst:.4}"));
    }

    // 5. Comparison principle for nested initial disks.
    {
        let mut small = cfg.clone();
        small.initial_density = InitialDensity::Disk { center: (0.0, 0.0), radius: 0.15 };
        let mut large = cfg.clone();
        large.initial_density = InitialDensity::Disk { center: (0.0, 0.0), radius: 0.25 };
        let ts = run(&small, None).unwrap();
        let tl = run(&large, None).unwrap();
        let h2 = h * h;
        let mut worst = 0.0_f64;
        for (a, b) in ts.snapshots.iter().zip(&tl.snapshots) {
            let overshoot: f64 = a
                .rho
                .values
                .iter()
                .zip(&b.rho.values)
                .map(|(s, l)| h2 * (s - l).max(0.0))
                .sum();
            worst = worst.max(overshoot / a.rho.integrate());
        }
        gate.report(
            5,
            "comparison_principle",
            worst <= 1e-5,
            format!("max overshoot fraction {worst:.3e}"),
        );
    }

    // 6. Monotone expansion of the saturated set.
    {
        let h2 = h * h;
        let mut worst = 0.0_f64;
        for w in golden.snapshots.windows(2) {
            let mut defect = 0.0;
            for (a, b) in w[0].rho.values.iter().zip(&w[1].rho.values) {
                if *a >= 1.0 - 1e-6 && *b < 1.0 - 1e-6 {
                    defect += h2 * (1.0 - b);
                }
            }
            worst = worst.max(defect / w[0].rho.integrate());
        }
        gate.report(
            6,
            "monotone_expansion",
            worst <= 1e-6,
            format!("max defect fraction {worst:.3e}"),
        );
    }

    // 7. Nutrient lower bound e^{-t} lambda (1 - 1e-3).
    {
        let worst = golden
            .series
            .iter()
            .map(|r| (-r.t).exp() * N0 * (1.0 - 1e-3) - r.n_min)
            .fold(f64::NEG_INFINITY, f64::max);
        gate.report(7, "nutrient_floor", worst <= 0.0, format!("max deficiency {worst:.3e}"));
    }

    // 8. Variational inequality with xi = p at 8 sampled times.
    {
        let sampled: Vec<usize> = (1..=8).map(|k| k * 16).collect();
        let mut rho = ScalarField::disk(cfg.grid, (0.0, 0.0), R0);
        let mut n = ScalarField::constant(cfg.grid, N0);
        let mut worst = f64::NEG_INFINITY;
        for k in 1..=128usize {
            let mu = rho.zip(&n, |r, nv| r * (1.0 + TAU * nv));
            let res = project(&mu, &cfg.projection).unwrap();
            if sampled.contains(&k) {
                let (lhs, rhs) = check_variational_inequality(
                    &res,
                    &mu,
                    &rho,
                    &n,
                    &res.pressure,
                    cfg.projection.tol_orth,
                )
                .unwrap();
                let (px, py) = res.pressure.gradient();
                let grad_sq = px.zip(&py, |a, b| a * a + b * b).integrate();
                worst = worst.max(lhs - rhs - 1e-3 * grad_sq);
            }
            n = scheme1_nutrient_step(&n, &res.rho_next, TAU, &cfg.nutrient).unwrap();
            rho = res.rho_next;
        }
        gate.report(
            8,
            "variational_inequality",
            worst <= 0.0,
            format!("max lhs - rhs - tol {worst:.3e}"),
        );
    }

    // 9 & 10. Diffusion sweep: Hausdorff and H1 convergence.
    {
        let d_values = [4e-3, 2e-3, 1e-3, 5e-4];
        let mut runs_owned: Vec<(f64, Trajectory)> = vec![(0.0, golden.clone())];
        for &d in &d_values {
            let mut c = cfg.clone();
            c.nutrient = NutrientConfig::new(d, N0).unwrap();
            let t = run(&c, None).unwrap();
            assert!(t.is_valid(), "sweep run D={d} failed: {:?}", t.failure);
            runs_owned.push((d, t));
        }
        let runs: Vec<(f64, &Trajectory)> =
            runs_owned.iter().map(|(d, t)| (*d, t)).collect();

        let rows =
            hausdorff_convergence_report(&runs, &[T_FINAL], cfg.projection.tol_orth)
                .unwrap();
        let dh: Vec<f64> = d_values
            .iter()
            .map(|d| rows.iter().find(|r| r.d == *d).unwrap().d_h)
            .collect();
        let mut inversions = 0;
        let mut inversion_ok = true;
        for w in dh.windows(2) {
            if w[1] > w[0] {
                inversions += 1;
                inversion_ok &= w[1] - w[0] <= h;
            }
        }
        let pass9 = inversions <= 1 && inversion_ok && dh[3] <= 3.0 * h;
        let dh_str: Vec<String> = dh.iter().map(|v| format!("{v:.3e}")).collect();
        gate.report(
            9,
            "hausdorff_convergence",
            pass9,
            format!(
                "d_H = [{}], {inversions} inversion(s), final <= {:.3e}",
                dh_str.join(", "),
                3.0 * h
            ),
        );

        let h1 = h1_convergence_report(&runs).unwrap();
        let grad_diff: Vec<f64> = d_values
            .iter()
            .map(|d| h1.iter().find(|r| r.d == *d).unwrap().grad_diff_sq)
            .collect();
        let monotone = grad_diff.windows(2).all(|w| w[1] <= w[0]);
        let ref_grad = h1.iter().find(|r| r.d == 0.0).unwrap().grad_sq;
        let smallest = h1.iter().find(|r| r.d == 5e-4).unwrap().grad_sq;
        let within = (smallest - ref_grad).abs() <= 0.05 * ref_grad;
        let gd_str: Vec<String> = grad_diff.iter().map(|v| format!("{v:.3e}")).collect();
        gate.report(
            10,
            "h1_convergence",
            monotone && within,
            format!(
                "grad-diff [{}], |grad|^2 {smallest:.4e} vs reference {ref_grad:.4e}",
                gd_str.join(", ")
            ),
        );
    }

    // 11. Oracle equivalence: 50 seeded random 1-D instances, plus
    // c-transform vs brute force on 64-node sections.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = cfg.grid;
        let mut worst_l1 = 0.0_f64;
        for _ in 0..50 {
            let profile = random_bump_profile(&mut rng, g.nx, g.h);
            let p = profile.clone();
            let mu = ScalarField::from_fn(g, move |x, _| {
                let i = ((x - g.origin.0) / g.h).round() as usize;
                p[i.min(g.nx - 1)]
            });
            let res = project(&mu, &cfg.projection).unwrap();
            let oracle = oracle_project_1d(&profile, g.h).unwrap();
            let j = g.ny / 2;
            let l1: f64 =
                (0..g.nx).map(|i| g.h * (res.rho_next.at(i, j) - oracle[i]).abs()).sum();
            worst_l1 = worst_l1.max(l1);
        }
        let gs = Grid2D::centered(64, 1.0).unwrap();
        let mut worst_ct = 0.0_f64;
        for _ in 0..50 {
            let (a, b, c) = (
                rng.gen_range(0.1..2.0),
                rng.gen_range(1.0..4.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            );
            let p = ScalarField::from_fn(gs, |x, y| {
                a * (1.0 + (b * x + c).sin() * (b * y - c).cos())
            });
            let ct = c_transform(&p, TAU).unwrap();
            for j in 0..gs.ny {
                for i in 0..gs.nx {
                    let (x, y) = (gs.x(i), gs.y(j));
                    let mut inf = f64::INFINITY;
                    for jj in 0..gs.ny {
                        for ii in 0..gs.nx {
                            let dx = gs.wrap_dx(gs.x(ii) - x);
                            let dy = gs.wrap_dy(gs.y(jj) - y);
                            inf = inf
                                .min(p.at(ii, jj) + (dx * dx + dy * dy) / (2.0 * TAU));
                        }
                    }
                    worst_ct = worst_ct.max((ct.at(i, j) - inf).abs());
                }
            }
        }
        gate.report(
            11,
            "oracle_equivalence",
            worst_l1 <= 1e-3 && worst_ct <= 1e-12,
            format!("worst 1-d L1 {worst_l1:.3e}, worst c-transform {worst_ct:.3e}"),
        );
    }

    // 12. Heat semigroup doubles the variance of a periodic Gaussian.
    {
        let g = Grid2D::centered(256, 1.0).unwrap();
        let gaussian = |var: f64| {
            let wrapped = move |x: f64| {
                let mut s = 0.0;
                for k in -3..=3 {
                    let d = x + 2.0 * k as f64;
                    s += (-d * d / (2.0 * var)).exp();
                }
                s / (std::f64::consts::TAU * var).sqrt()
            };
            ScalarField::from_fn(g, move |x, y| wrapped(x) * wrapped(y))
        };
        let out = heat_semigroup(&gaussian(0.01), 0.005).unwrap();
        let reference = gaussian(0.02);
        let rel = out.zip(&reference, |a, b| a - b).lp_norm(Lp::Two)
            / reference.lp_norm(Lp::Two);
        gate.report(12, "heat_semigroup", rel <= 1e-6, format!("relative L2 {rel:.3e}"));
    }

    // 13. Scheme I vs II agree to O(tau) with stable constant under
    // tau halving.
    {
        let gap_at = |tau: f64| {
            let mut c1 = cfg.clone();
            c1.tau = tau;
            c1.projection = ProjectionConfig::new(tau);
            let mut c2 = c1.clone();
            c2.scheme = Scheme::II;
            let a = run(&c1, None).unwrap();
            let b = run(&c2, None).unwrap();
            assert!(a.is_valid() && b.is_valid());
            a.final_state()
                .rho
                .zip(&b.final_state().rho, |x, y| x - y)
                .lp_norm(Lp::One)
        };
        let c_coarse = gap_at(TAU) / TAU;
        let c_fine = gap_at(TAU / 2.0) / (TAU / 2.0);
        let ratio = c_coarse.max(c_fine) / c_coarse.min(c_fine).max(1e-300);
        gate.report(
            13,
            "scheme_agreement",
            ratio <= 2.0,
            format!("C(tau) = {c_coarse:.4e}, C(tau/2) = {c_fine:.4e}, ratio {ratio:.2}"),
        );
    }

    // 14. Weak-form residuals shrink by >= 1.5x when tau and h^2 halve.
    {
        let psi = SmoothTestFunction { half_width: 0.8, t_final: T_FINAL, amplitude: 1.0 };
        let residuals = |nx: usize, tau: f64| {
            let mut c = cfg.clone();
            c.grid = Grid2D::centered(nx, 1.0).unwrap();
            c.tau = tau;
            c.projection = ProjectionConfig::new(tau);
            c.snapshot_every = 1;
            let traj = run(&c, None).unwrap();
            assert!(traj.is_valid());
            weak_form_residual(&traj, &c, &psi).unwrap()
        };
        let (r_rho, r_n) = residuals(64, 2.0 * TAU);
        let (f_rho, f_n) = residuals(128, TAU);
        let pass = f_rho * 1.5 <= r_rho && f_n * 1.5 <= r_n;
        gate.report(
            14,
            "weak_form_convergence",
            pass,
            format!("rho residual {r_rho:.3e} -> {f_rho:.3e}, n residual {r_n:.3e} -> {f_n:.3e}"),
        );
    }

    assert!(
        gate.failures.is_empty(),
        "acceptance failures:\n{}",
        gate.failures.join("\n")
    );
}
