use std::f64::consts::PI;

use dcone::folds::{
    assemble_candidate, fold_profile, g_alpha, g_branch, g_tilde_alpha, invert_g, invert_g_with,
    plot_g, pole_and_branch_counts, solve_single_fold, sweep, Branch, Fold, FoldSpec, RowStatus,
    SINGLE_FOLD_OPENING_DEG,
};
use dcone::{el_residual, make_grid};
use proptest::prelude::*;

/// Direct `g` from the textbook formula, no special handling.
fn g_direct(alpha: f64, z: f64, branch: Branch) -> (f64, f64) {
    match branch {
        Branch::Trig => {
            let n = alpha * alpha * z.sin() * (alpha * z).cos() - alpha * (alpha * z).sin() * z.cos();
            let d = z.sin() * (alpha * z).cos() - alpha * (alpha * z).sin() * z.cos();
            (-n / d, d)
        }
        Branch::Hyperbolic => {
            let n = alpha * alpha * z.sin() * (alpha * z).cosh() - alpha * (alpha * z).sinh() * z.cos();
            let d = z.sin() * (alpha * z).cosh() + alpha * (alpha * z).sinh() * z.cos();
            (n / d, d)
        }
    }
}

/// Dense-scan oracle: midpoints of sign changes of `g − k` where the
/// denominator keeps its sign.
fn scan_oracle(alpha: f64, k: f64, branch: Branch, m: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut prev = None;
    for i in 1..=m {
        let z = PI * i as f64 / m as f64;
        let (g, d) = g_direct(alpha, z, branch);
        let cur = (z, g - k, d);
        if let Some((zp, fp, dp)) = prev {
            let (fp, dp): (f64, f64) = (fp, dp);
            if fp.signum() != cur.1.signum() && dp.signum() == d.signum() && fp.is_finite() && cur.1.is_finite() {
                out.push(0.5 * (zp + z));
            }
        }
        prev = Some(cur);
    }
    out
}

fn assert_matches_oracle(roots: &[f64], oracle: &[f64], tol: f64) {
    assert_eq!(roots.len(), oracle.len(), "{roots:?} vs {oracle:?}");
    for (r, o) in roots.iter().zip(oracle) {
        assert!((r - o).abs() <= tol, "{r} vs {o}");
    }
}

#[test]
fn alpha_seven_trig_roots_match_dense_scan() {
    let roots = invert_g(7.0, 0.0, Branch::Trig).unwrap();
    let oracle = scan_oracle(7.0, 0.0, Branch::Trig, 10_000_000);
    // The direct formula loses all digits next to the removable point at π,
    // which shifts the scan's last sign change by ~1e-6.
    assert_matches_oracle(&roots, &oracle, 2e-6);
    // Frozen values from a 40-digit scan.
    let frozen = [0.646471, 1.111932, 2.029661, 2.495121, 3.141591];
    assert_matches_oracle(&roots, &frozen, 2e-6);
    for &z in &roots {
        let lhs = 7.0 * z.tan();
        let rhs = (7.0 * z).tan();
        assert!((lhs - rhs).abs() <= 1e-7 * (1.0 + lhs.abs()), "z={z}: {lhs} vs {rhs}");
    }
}

#[test]
fn hyperbolic_small_alpha() {
    for k in [0.0, 0.1, 0.3, -0.2, 0.45] {
        let roots = invert_g(0.5, k, Branch::Hyperbolic).unwrap();
        let oracle = scan_oracle(0.5, k, Branch::Hyperbolic, 1_000_000);
        assert_matches_oracle(&roots, &oracle, 1e-5);
        for &z in &roots {
            let g = g_tilde_alpha(0.5, z).unwrap().value();
            assert!((g - k).abs() <= 1e-12, "k={k} z={z}: {g}");
        }
    }
}

#[test]
fn nonzero_curvature_roots() {
    for &(alpha, k, branch) in &[
        (7.0, 3.0, Branch::Trig),
        (3.3, 1.5, Branch::Trig),
        (0.4, 0.2, Branch::Trig),
        (7.0, 10.0, Branch::Hyperbolic),
        (2.0, 40.0, Branch::Hyperbolic),
    ] {
        let roots = invert_g(alpha, k, branch).unwrap();
        let oracle = scan_oracle(alpha, k, branch, 2_000_000);
        assert_matches_oracle(&roots, &oracle, 1e-5);
        for &z in &roots {
            let g = match branch {
                Branch::Trig => g_alpha(alpha, z),
                Branch::Hyperbolic => g_tilde_alpha(alpha, z),
            }
            .unwrap()
            .value();
            assert!((g - k).abs() <= 1e-10 * (1.0 + k.abs()), "α={alpha} k={k} z={z}: {g}");
        }
    }
}

#[test]
fn single_fold_reference() {
    let sf = solve_single_fold(make_grid(2048).unwrap()).unwrap();
    assert_eq!(sf.branch, Branch::Trig);
    assert!((sf.alpha - 3.804509488253403).abs() < 1e-9, "{}", sf.alpha);
    assert!((sf.z - 1.2128740801159923).abs() < 1e-9, "{}", sf.z);
    let deg = sf.opening_angle_deg();
    assert!((130.0..=150.0).contains(&deg));
    assert!((deg - SINGLE_FOLD_OPENING_DEG).abs() < 1e-6, "{deg}");
    let c = &sf.candidate;
    assert!(c.feasible);
    assert!(c.constraint_residual.abs() <= 1e-10, "{}", c.constraint_residual);
    assert!((c.energy - 133.22956578394462).abs() < 1e-7, "{}", c.energy);
    assert!(c.c2_jumps.iter().all(|&j| j <= 1e-8), "{:?}", c.c2_jumps);
}

#[test]
fn plot_tables_are_stable_under_refinement() {
    for (branch, poles) in [(Branch::Trig, 5), (Branch::Hyperbolic, 1)] {
        let coarse = plot_g(7.0, branch, 4000).unwrap();
        let fine = plot_g(7.0, branch, 8000).unwrap();
        let (p1, b1) = pole_and_branch_counts(&coarse);
        let (p2, b2) = pole_and_branch_counts(&fine);
        assert_eq!((p1, b1), (p2, b2), "{branch}");
        assert_eq!(p1, poles, "{branch}");
    }
}

#[test]
fn collapse_at_pi_is_a_root() {
    let roots = invert_g(2.5, -1.0, Branch::Trig).unwrap();
    assert_eq!(*roots.last().unwrap(), PI, "{roots:?}");
}

#[test]
fn grid_second_difference_at_endpoint_is_g() {
    let n = 4096;
    let grid = make_grid(n).unwrap();
    let h = grid.spacing();
    for &(lambda, z) in &[(13.474, 1.2128), (5.0, 0.9), (-3.0, 0.7), (30.0, 0.3)] {
        // Put the left end exactly on node 100.
        let center = 100.0 * h + z - 1e-13;
        let p = fold_profile(lambda, center, z, grid).unwrap();
        assert_eq!(p.indices[0], 100);
        let y = &p.values;
        // Fourth-order one-sided second difference.
        let c = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
        let d2: f64 = c.iter().zip(y).map(|(c, y)| c * y).sum::<f64>() / (12.0 * h * h);
        let alpha = (1.0f64 + lambda).abs().sqrt();
        let g = g_branch(alpha, z, Branch::of_lambda(lambda)).unwrap().finite().unwrap();
        assert!((d2 - g).abs() <= 1e-4, "λ={lambda} z={z}: {d2} vs {g}");
        // First derivative vanishes; fourth-order one-sided difference.
        let d1 = (-25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2] + 16.0 * y[3] - 3.0 * y[4]) / (12.0 * h);
        assert!(d1.abs() <= h * h, "{d1}");
    }
}

#[test]
fn grid_profile_solves_the_ode_inside() {
    let sf = solve_single_fold(make_grid(1024).unwrap()).unwrap();
    let w = &sf.candidate.w;
    let r = el_residual(w, sf.lambda);
    let grid = w.grid();
    let h = grid.spacing();
    let mut checked = 0;
    for j in 0..grid.n() {
        let t = grid.node(j);
        let s = if t > PI { t - 2.0 * PI } else { t };
        // Full nine-point stencil inside the fold.
        if s.abs() + 4.0 * h < sf.z {
            assert!(r[j].abs() <= 1e-4, "node {j}: {}", r[j]);
            checked += 1;
        }
    }
    assert!(checked > 300);
}

#[test]
fn two_opposite_copies_do_not_close() {
    let sf = solve_single_fold(make_grid(2048).unwrap()).unwrap();
    let spec = FoldSpec {
        lambda: sf.lambda,
        folds: vec![
            Fold { center: 0.0, half_width: sf.z },
            Fold { center: PI, half_width: sf.z },
        ],
        k: 0.0,
    };
    let c = assemble_candidate(&spec, make_grid(2048).unwrap()).unwrap();
    // Each fold contributes 2z − 2π, so the total is −2π.
    assert!((c.constraint_residual + 2.0 * PI).abs() <= 1e-8, "{}", c.constraint_residual);
    assert!(!c.feasible);
}

#[test]
fn root_counts_stable_under_scan_doubling() {
    for &(alpha, k, branch) in &[
        (7.0, 0.0, Branch::Trig),
        (7.0, 2.0, Branch::Trig),
        (12.3, 0.5, Branch::Trig),
        (3.80451, 0.0, Branch::Trig),
        (7.0, 10.0, Branch::Hyperbolic),
        (0.5, 0.1, Branch::Hyperbolic),
    ] {
        let a = invert_g_with(alpha, k, branch, 100_000).unwrap();
        let b = invert_g_with(alpha, k, branch, 200_000).unwrap();
        assert_eq!(a.len(), b.len(), "α={alpha} k={k}");
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10);
        }
    }
}

#[test]
fn sweep_flags_excluded_alpha() {
    let rows = sweep(&[1.0, 3.8], &[0.0], Branch::Trig);
    assert_eq!(rows[0].alpha, 1.0);
    assert_eq!(rows[0].status, RowStatus::AlphaExcluded);
    assert!(rows[1..].iter().all(|r| r.alpha == 3.8 && r.status != RowStatus::AlphaExcluded));
    assert!(rows.iter().any(|r| r.status == RowStatus::Feasible));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]
    #[test]
    fn every_returned_root_solves(
        alpha in 0.2..9.0f64, k in -3.0..30.0f64, hyp in proptest::bool::ANY,
    ) {
        prop_assume!((alpha - 1.0).abs() > 1e-3);
        let branch = if hyp { Branch::Hyperbolic } else { Branch::Trig };
        let roots = invert_g(alpha, k, branch).unwrap();
        for w in roots.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for &z in &roots {
            prop_assert!(z > 0.0 && z <= PI);
            let g = match branch {
                Branch::Trig => g_alpha(alpha, z),
                Branch::Hyperbolic => g_tilde_alpha(alpha, z),
            }
            .unwrap()
            .value();
            prop_assert!((g - k).abs() <= 1e-10 * (1.0 + k.abs()), "z={} g={}", z, g);
        }
    }
}
