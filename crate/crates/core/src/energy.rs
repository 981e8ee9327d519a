//! The limit functional `∫(w″ + w)²`, the isometry constraint `∫(w² − w′²)`,
//! their gradients and the Euler–Lagrange residual.
//!
//! Both functionals are evaluated as discrete quadratic forms built from the
//! grid's second-difference operator `D2`:
//!
//! * energy `= h Σ ((D2 + I) w)²`
//! * constraint `= h Σ w · (D2 + I) w`, the summation-by-parts form of
//!   `∫ w² − w′²`
//!
//! so the gradients below are exact for the discrete functionals and the
//! Euler–Lagrange residual `w⁗ + (2 + λ) w″ + (1 + λ) w` is exactly half the
//! gradient of the Lagrangian `energy + λ · constraint`.

use serde::Serialize;

use crate::grid::{apply_d2, apply_d4, dot, PeriodicField};

/// Energy, constraint value and obstacle violation of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub energy: f64,
    pub constraint: f64,
    /// `max(0, 1 − min w)`.
    pub obstacle_violation: f64,
}

impl EnergyReport {
    pub fn of(w: &PeriodicField) -> Self {
        Self {
            energy: energy(w),
            constraint: constraint(w),
            obstacle_violation: (1.0 - w.min()).max(0.0),
        }
    }

    pub fn is_feasible(&self, constraint_tol: f64, obstacle_tol: f64) -> bool {
        self.constraint.abs() <= constraint_tol && self.obstacle_violation <= obstacle_tol
    }
}

/// `∫(w″ + w)²`. Feasibility is not enforced here.
pub fn energy(w: &PeriodicField) -> f64 {
    energy_slice(w.values(), w.grid().spacing())
}

/// `∫(w² − w′²)` in summation-by-parts form.
pub fn constraint(w: &PeriodicField) -> f64 {
    constraint_slice(w.values(), w.grid().spacing())
}

/// L²-gradients `(∇energy, ∇constraint) = (2(w⁗ + 2w″ + w), 2(w + w″))`.
pub fn gradients(w: &PeriodicField) -> (PeriodicField, PeriodicField) {
    let h = w.grid().spacing();
    let n = w.len();
    let mut d2 = vec![0.0; n];
    let mut d4 = vec![0.0; n];
    apply_d2(w.values(), h, &mut d2);
    apply_d4(w.values(), h, &mut d4);
    let ge = (0..n).map(|j| 2.0 * (d4[j] + 2.0 * d2[j] + w[j])).collect();
    let gc = (0..n).map(|j| 2.0 * (w[j] + d2[j])).collect();
    (
        PeriodicField::from_raw(w.grid(), ge),
        PeriodicField::from_raw(w.grid(), gc),
    )
}

/// Pointwise `w⁗ + (2 + λ) w″ + (1 + λ) w`.
pub fn el_residual(w: &PeriodicField, lambda: f64) -> PeriodicField {
    let h = w.grid().spacing();
    let mut out = vec![0.0; w.len()];
    el_residual_slice(w.values(), h, lambda, &mut out);
    PeriodicField::from_raw(w.grid(), out)
}

pub(crate) fn energy_slice(w: &[f64], h: f64) -> f64 {
    let mut d2 = vec![0.0; w.len()];
    apply_d2(w, h, &mut d2);
    h * d2.iter().zip(w).map(|(a, b)| (a + b) * (a + b)).sum::<f64>()
}

/// `h Σ w·(w + D2 w)`, summed by parts into squared first differences,
/// which keeps rounding near `ε/h` instead of `ε/h²`.
pub(crate) fn constraint_slice(w: &[f64], h: f64) -> f64 {
    let n = w.len();
    let (mut s1, mut s2) = (0.0, 0.0);
    for j in 0..n {
        let a = w[(j + 1) % n] - w[j];
        let b = w[(j + 2) % n] - w[j];
        s1 += a * a;
        s2 += b * b;
    }
    h * dot(w, w) - (4.0 * s1 - 0.25 * s2) / (3.0 * h)
}

pub(crate) fn el_residual_slice(w: &[f64], h: f64, lambda: f64, out: &mut [f64]) {
    let n = w.len();
    let mut d2 = vec![0.0; n];
    apply_d2(w, h, &mut d2);
    apply_d4(w, h, out);
    for j in 0..n {
        out[j] += (2.0 + lambda) * d2[j] + (1.0 + lambda) * w[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn field(n: usize, f: impl Fn(f64) -> f64) -> PeriodicField {
        PeriodicField::from_fn(make_grid(n).unwrap(), f)
    }

    #[test]
    fn energy_examples() {
        assert!(energy(&field(2048, f64::cos)) <= 1e-12);
        let one = energy(&field(2048, |_| 1.0));
        assert!((one - 2.0 * PI).abs() <= 1e-12);
        let e = energy(&field(2048, |t| 1.0 + (2.0 * t).cos()));
        assert!((e / (11.0 * PI) - 1.0).abs() <= 1e-8, "{e}");
    }

    #[test]
    fn constraint_examples() {
        assert!((constraint(&field(2048, |_| 1.0)) - 2.0 * PI).abs() <= 1e-12);
        // Truncation is π·h⁴/90, about 3e-12 at n = 2048.
        assert!(constraint(&field(4096, f64::cos)).abs() <= 1e-12);
        let c = constraint(&field(2048, |t| 1.0 + 0.5 * t.sin()));
        assert!((c - 2.0 * PI).abs() <= 1e-10);
    }

    #[test]
    fn gradient_examples() {
        let (ge, gc) = gradients(&field(512, f64::cos));
        assert!(ge.max_abs() <= 1e-6 && gc.max_abs() <= 1e-6);
        // At n = 2048 the fourth difference sits on a rounding floor near ε/h⁴.
        let (ge, gc) = gradients(&field(2048, f64::cos));
        assert!(ge.max_abs() <= 2e-4 && gc.max_abs() <= 1e-6);
        let (ge, gc) = gradients(&field(64, |_| 1.0));
        assert!(ge.values().iter().all(|&v| v == 2.0));
        assert!(gc.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn residual_examples() {
        for lambda in [-7.0, 0.3, 13.5] {
            let r = el_residual(&field(512, f64::cos), lambda);
            assert!(r.max_abs() <= 1e-6, "λ={lambda}: {}", r.max_abs());
            let r = el_residual(&field(2048, f64::cos), lambda);
            assert!(r.max_abs() <= 2e-4, "λ={lambda}: {}", r.max_abs());
        }
        let r = el_residual(&field(256, |_| 1.0), -1.0);
        assert!(r.max_abs() == 0.0);
    }

    fn random_trig(n: usize, degree: usize, rng: &mut ChaCha8Rng) -> PeriodicField {
        let c: Vec<(f64, f64)> = (0..=degree)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        field(n, |t| {
            c.iter()
                .enumerate()
                .map(|(k, (a, b))| a * (k as f64 * t).cos() + b * (k as f64 * t).sin())
                .sum()
        })
    }

    #[test]
    fn gradients_match_directional_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [512, 2048] {
            let w = random_trig(n, 5, &mut rng);
            let (ge, gc) = gradients(&w);
            for _ in 0..20 {
                let d = random_trig(n, 5, &mut rng);
                let eps = 1e-5;
                let wp = &w + &(eps * &d);
                let wm = &w - &(eps * &d);
                let fd_e = (energy(&wp) - energy(&wm)) / (2.0 * eps);
                let fd_c = (constraint(&wp) - constraint(&wm)) / (2.0 * eps);
                let an_e = ge.dot(&d).unwrap();
                let an_c = gc.dot(&d).unwrap();
                assert!((an_e - fd_e).abs() <= 1e-6 * an_e.abs().max(1e-300), "{an_e} vs {fd_e}");
                assert!((an_c - fd_c).abs() <= 1e-6 * an_c.abs().max(1e-300), "{an_c} vs {fd_c}");
            }
        }
    }

    #[test]
    fn residual_is_half_lagrangian_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_trig(128, 4, &mut rng);
        let lambda = 3.7;
        let (ge, gc) = gradients(&w);
        let r = el_residual(&w, lambda);
        let half = ge.zip_with(&gc, |a, b| 0.5 * (a + lambda * b)).unwrap();
        assert!((&r - &half).max_abs() <= 1e-9 * (1.0 + r.max_abs()));
    }

    proptest! {
        #[test]
        fn rotation_invariance(
            vals in prop::collection::vec(0.5..3.0f64, 32), m in -64isize..64,
        ) {
            let w = PeriodicField::from_values(make_grid(32).unwrap(), vals).unwrap();
            let s = w.shift(m);
            let (e0, e1) = (energy(&w), energy(&s));
            let (c0, c1) = (constraint(&w), constraint(&s));
            prop_assert!((e0 - e1).abs() <= 1e-12 * (1.0 + e0.abs()));
            prop_assert!((c0 - c1).abs() <= 1e-12 * (1.0 + c0.abs()));
        }

        #[test]
        fn energy_is_nonnegative(vals in prop::collection::vec(-3.0..3.0f64, 32)) {
            let w = PeriodicField::from_values(make_grid(32).unwrap(), vals).unwrap();
            prop_assert!(energy(&w) >= 0.0);
        }

        #[test]
        fn zero_energy_iff_zero_constraint_gradient(
            a in -2.0..2.0f64, b in -2.0..2.0f64, bump in prop::bool::ANY,
        ) {
            let extra = if bump { 0.3 } else { 0.0 };
            let w = field(64, |t| a * t.cos() + b * t.sin() + extra * (2.0 * t).cos());
            let e = energy(&w);
            let (_, gc) = gradients(&w);
            // e = h/4 · |∇constraint|² exactly.
            let norm2 = gc.dot(&gc).unwrap();
            prop_assert!((e - norm2 / 4.0).abs() <= 1e-10 * (1.0 + e));
        }
    }
}
