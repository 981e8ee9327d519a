//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines reach stdout uncaptured.
//! Failing criteria are reported, not asserted, so the rest of the suite
//! still runs; set `DCONE_ACCEPTANCE_STRICT=1` to exit non-zero on any FAIL.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use dcone::folds::{g_alpha, g_tilde_alpha, plot_g, pole_and_branch_counts, solve_single_fold, Branch, SINGLE_FOLD_OPENING_DEG};
use dcone::obstacle::{check_necessary_conditions, minimize_restarts, ConditionTolerances, SolverConfig, STATIONARITY_TOL};
use dcone::recovery::{bending_energy, gamma_check, mollify_admissible, Curve3, V3, DEFAULT_H};
use dcone::{constraint, el_residual, energy, gradients, make_grid, PeriodicField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn field(n: usize, f: impl Fn(f64) -> f64) -> PeriodicField {
    PeriodicField::from_fn(make_grid(n).unwrap(), f)
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a / b - 1.0).abs()
    }
}

fn closed_forms() -> Outcome {
    let t = Instant::now();
    let e = energy(&field(2048, |t| 1.0 + (2.0 * t).cos()));
    let c = constraint(&field(2048, |_| 1.0));
    let g = g_alpha(2.5, PI).unwrap().value();
    let gt = g_tilde_alpha(2.5, PI).unwrap().value();
    let n = 1024;
    let mut eq = Curve3::from_fn(n, 0.0, true, |t| V3::new(t.cos(), t.sin(), 0.0));
    eq.tangents = Some((0..=n).map(|j| {
        let t = TAU * j as f64 / n as f64;
        V3::new(-t.sin(), t.cos(), 0.0)
    }).collect());
    let b = bending_energy(&eq).energy;
    let errs = [rel(e, 11.0 * PI), rel(c, TAU), rel(g, -1.0), rel(gt, -1.0), b.abs()];
    let secs = t.elapsed().as_secs_f64();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 1e-8 && secs < 1.0,
        format!("energy {e:.12}, constraint {c:.12}, g {g}, g~ {gt}, equator {b:.1e}; worst rel {worst:.1e}; {secs:.3} s"),
    )
}

fn random_trig(n: usize, rng: &mut ChaCha8Rng) -> PeriodicField {
    let c: Vec<(f64, f64)> = (0..6).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    field(n, |t| c.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * t).cos() + b * (k as f64 * t).sin()).sum())
}

fn gradient_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for n in [512, 2048] {
        let w = random_trig(n, &mut rng);
        let (ge, gc) = gradients(&w);
        for _ in 0..20 {
            let d = random_trig(n, &mut rng);
            let eps = 1e-5;
            let (wp, wm) = (&w + &(eps * &d), &w - &(eps * &d));
            let fd_e = (energy(&wp) - energy(&wm)) / (2.0 * eps);
            let fd_c = (constraint(&wp) - constraint(&wm)) / (2.0 * eps);
            worst = worst.max(rel(fd_e, ge.dot(&d).unwrap())).max(rel(fd_c, gc.dot(&d).unwrap()));
        }
    }
    outcome(worst <= 1e-6, format!("max rel err {worst:.2e} over 2 x 20 directions at n = 512, 2048"))
}

fn solver_restarts() -> Outcome {
    let cfg = SolverConfig { n: 1024, restarts: 8, include_bump: false, ..Default::default() };
    let t = Instant::now();
    let summary = match minimize_restarts(&cfg) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("solver error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let mut bad = Vec::new();
    let (mut worst_c, mut worst_res, mut worst_active): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut min_w = f64::INFINITY;
    for run in &summary.runs {
        let r = match &run.result {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("{}: {e}", run.label));
                continue;
            }
        };
        let w = &r.w;
        min_w = min_w.min(w.min());
        worst_c = worst_c.max(constraint(w).abs());
        let res = el_residual(w, r.lambda);
        let scale = 1.0 + w.deriv(4).unwrap().max_abs();
        for j in 0..w.len() {
            let s = res[j] / scale;
            if w[j] - 1.0 > cfg.active_tol {
                worst_res = worst_res.max(s.abs());
            } else {
                worst_active = worst_active.min(s);
            }
        }
        if !r.residuals.stationary(STATIONARITY_TOL) {
            bad.push(format!("{}: not stationary", run.label));
        }
    }
    let pass = bad.is_empty()
        && summary.runs.len() == 8
        && min_w >= 1.0 - 1e-10
        && worst_c <= 1e-8 * TAU
        && worst_res <= 1e-4
        && worst_active >= -1e-4
        && secs <= 300.0;
    outcome(
        pass,
        format!(
            "8 starts: min w {min_w:.12}, max |c| {worst_c:.1e}, lifted EL {worst_res:.1e}, min contact EL {worst_active:.1e}, {secs:.1} s{}",
            if bad.is_empty() { String::new() } else { format!("; {bad:?}") }
        ),
    )
}

fn cross_validation() -> Outcome {
    let n = 2048;
    let sf = solve_single_fold(make_grid(n).unwrap()).unwrap();
    let cfg = SolverConfig { n, ..Default::default() };
    let best = match minimize_restarts(&cfg) {
        Ok(s) => s.best,
        Err(e) => return outcome(false, format!("solver error: {e}")),
    };
    let h = TAU / n as f64;
    let e_rel = rel(best.energy, sf.candidate.energy);
    let one_fold = best.intervals.len() == 1;
    let cells = best.intervals.first().map_or(f64::INFINITY, |iv| (iv.half_width - sf.z).abs() / h);
    let root = check_necessary_conditions(&best, &ConditionTolerances::default())
        .map(|r| r.intervals.iter().map(|c| c.root_distance).fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY);
    outcome(
        e_rel <= 1e-3 && one_fold && cells <= 2.0 && root <= 1e-3,
        format!(
            "energy {:.8} vs {:.8} (rel {e_rel:.1e}); {} fold(s); endpoint offset {cells:.2} cells; root distance {root:.1e}",
            best.energy,
            sf.candidate.energy,
            best.intervals.len()
        ),
    )
}

fn fold_angle() -> Outcome {
    let sf = solve_single_fold(make_grid(2048).unwrap()).unwrap();
    let deg = sf.opening_angle_deg();
    outcome(
        (130.0..=150.0).contains(&deg) && (deg - SINGLE_FOLD_OPENING_DEG).abs() <= 1e-6,
        format!("2z* = {deg:.6} deg (reference constant {SINGLE_FOLD_OPENING_DEG})"),
    )
}

fn mollification() -> Outcome {
    let sf = solve_single_fold(make_grid(4096).unwrap()).unwrap();
    let mut lambdas = Vec::new();
    let mut ok = true;
    let mut worst_c: f64 = 0.0;
    let mut min_w = f64::INFINITY;
    for eps in [0.1, 0.05, 0.025] {
        match mollify_admissible(&sf.candidate.w, eps) {
            Ok(m) => {
                let c = constraint(&m.w).abs();
                worst_c = worst_c.max(c);
                min_w = min_w.min(m.w.min());
                lambdas.push(m.lambda.abs());
            }
            Err(e) => {
                ok = false;
                lambdas.push(f64::NAN);
                eprintln!("mollify eps={eps}: {e}");
            }
        }
    }
    let decreasing = lambdas.windows(2).all(|p| p[1] < p[0]);
    outcome(
        ok && min_w >= 1.0 && worst_c <= 1e-10 && decreasing,
        format!("|lambda_eps| = [{}]; min w {min_w}; max |c| {worst_c:.1e}", sci(&lambdas)),
    )
}

fn figures() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for branch in [Branch::Trig, Branch::Hyperbolic] {
        let a = pole_and_branch_counts(&plot_g(7.0, branch, 4000).unwrap());
        let b = pole_and_branch_counts(&plot_g(7.0, branch, 8000).unwrap());
        pass &= a == b;
        parts.push(format!("{branch}: (poles, branches) {a:?} at 4000, {b:?} at 8000"));
    }
    outcome(pass, parts.join("; "))
}

fn line(id: usize, name: &str, o: &Outcome) -> bool {
    println!("criterion {id:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    let mut results = vec![
        (1, "closed-form evaluations", closed_forms()),
        (2, "gradient consistency", gradient_consistency()),
        (3, "solver feasibility and stationarity", solver_restarts()),
        (4, "theory/numerics cross-validation", cross_validation()),
        (5, "fold-angle anchor", fold_angle()),
    ];

    let sf = solve_single_fold(make_grid(4096).unwrap()).unwrap();
    let t = Instant::now();
    let table = gamma_check(&sf.candidate.w, &DEFAULT_H);
    let secs = t.elapsed().as_secs_f64();
    match table {
        Ok(table) => {
            let rows = &table.rows;
            let s = &table.summary;
            let rel: Vec<f64> = rows.iter().map(|r| r.rel_err).collect();
            let last = *rel.last().unwrap();
            results.push((
                6,
                "Gamma-limit convergence",
                outcome(
                    s.rel_err_decreasing && last <= 0.10 && secs <= 600.0,
                    format!("rel_err [{}] at h = {DEFAULT_H:?}; n = 4096; {secs:.2} s", sci(&rel)),
                ),
            ));
            let within = |x: Option<f64>, c: f64, tol: f64| x.is_some_and(|x| (x - c).abs() <= tol);
            let show = |x: Option<f64>| x.map_or("n/a".to_string(), |x| format!("{x:.3}"));
            let checks = [
                ("gap", within(s.gap_slope, 4.0, 0.5), show(s.gap_slope), "4.0 +- 0.5"),
                ("|a|", within(s.a_slope, 3.0, 0.5), show(s.a_slope), "3.0 +- 0.5"),
                ("det", within(s.det_slope, 1.0, 0.3), show(s.det_slope), "1.0 +- 0.3"),
            ];
            results.push((
                7,
                "scaling exponents",
                outcome(
                    checks.iter().all(|c| c.1),
                    checks
                        .iter()
                        .map(|(n, ok, v, want)| format!("{n} slope {v} (want {want}) {}", if *ok { "ok" } else { "out" }))
                        .collect::<Vec<_>>()
                        .join("; "),
                ),
            ));
            let radius = rows.iter().map(|r| r.radius_defect).fold(0.0, f64::max);
            let speed = rows.iter().map(|r| r.speed_defect).fold(0.0, f64::max);
            let low: Vec<f64> = rows.iter().filter(|r| r.min_gz < r.h).map(|r| r.h).collect();
            let gz_ok = low.is_empty();
            let pass = s.max_frame_drift <= 1e-9 && radius <= 1e-9 && speed <= 1e-6 && gz_ok && s.max_jac_fd_rel_err <= 1e-5;
            results.push((
                8,
                "structural integrity",
                outcome(
                    pass,
                    format!(
                        "frame drift {:.1e}; ||gamma|-1| {radius:.1e}; ||gamma'|-1| {speed:.1e}; gamma.e_z >= h {}; Jacobian FD rel err {:.1e}",
                        s.max_frame_drift,
                        if gz_ok {
                            "at every h".to_string()
                        } else {
                            format!(
                                "fails at h = {low:?} (min {})",
                                rows.iter().filter(|r| r.min_gz < r.h).map(|r| format!("{:.4}", r.min_gz)).collect::<Vec<_>>().join(", ")
                            )
                        },
                        s.max_jac_fd_rel_err
                    ),
                ),
            ));
        }
        Err(e) => {
            for (id, name) in [(6, "Gamma-limit convergence"), (7, "scaling exponents"), (8, "structural integrity")] {
                results.push((id, name, outcome(false, format!("gamma_check failed: {e}"))));
            }
        }
    }
    results.push((9, "mollification", mollification()));
    results.push((10, "figure reproduction", figures()));

    println!("acceptance report");
    let passed = results.iter().filter(|(id, name, o)| line(*id, name, o)).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    let strict = std::env::var("DCONE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
