//! Uniform periodic grids on `[0, 2π)`, finite-difference derivatives and
//! quadrature.
//!
//! Every other module works with [`PeriodicField`] samples. Derivatives are
//! centered and fourth-order accurate: five-point stencils for the first and
//! second derivative, a seven-point stencil for the third, and the composed
//! second-difference operator (nine points) for the fourth. Composing keeps
//! `D4 = D2 ∘ D2` exactly, so the discrete energy `∫(w″ + w)²` has the
//! gradient `2(w⁗ + 2w″ + w)` on the nose.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest supported node count.
pub const MIN_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid size {0} is odd; an even node count is required")]
    OddN(usize),
    #[error("grid size {0} is below the minimum of {MIN_NODES}")]
    TooSmall(usize),
    #[error("derivative order {0} is not supported (expected 1..=4)")]
    InvalidOrder(u32),
    #[error("sample {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids ({0} vs {1} nodes)")]
    GridMismatch(usize, usize),
}

/// Uniform grid `t_j = 2πj/n`, `j = 0..n`, on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodicGrid {
    n: usize,
}

impl PeriodicGrid {
    pub fn new(n: usize) -> Result<Self, GridError> {
        if n % 2 == 1 {
            return Err(GridError::OddN(n));
        }
        if n < MIN_NODES {
            return Err(GridError::TooSmall(n));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.node(j))
    }

    /// Index of the node nearest to `t` (taken modulo 2π).
    pub fn nearest_node(&self, t: f64) -> usize {
        let x = t.rem_euclid(2.0 * PI) / self.spacing();
        (x.round() as usize) % self.n
    }
}

/// Builds a grid, rejecting odd or too-small node counts.
pub fn make_grid(n: usize) -> Result<PeriodicGrid, GridError> {
    PeriodicGrid::new(n)
}

/// Samples of a scalar function on a [`PeriodicGrid`].
#[derive(Clone, PartialEq, Serialize)]
pub struct PeriodicField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl fmt::Debug for PeriodicField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicField")
            .field("n", &self.grid.n)
            .field("min", &self.min())
            .field("max", &self.max())
            .finish()
    }
}

impl PeriodicField {
    pub fn from_values(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n {
            return Err(GridError::LengthMismatch {
                expected: grid.n,
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every node. Panics if `f` produces a non-finite value.
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self::from_values(grid, values).expect("sampled function must be finite")
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n],
        }
    }

    /// Wraps values produced internally; callers guarantee finiteness.
    pub(crate) fn from_raw(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        Self::from_values(self.grid, values).expect("mapped field must be finite")
    }

    pub fn zip_with(
        &self,
        other: &PeriodicField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch(self.grid.n, other.grid.n));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_values(self.grid, values)
    }

    /// Rotates the samples by `m` nodes: `result[j] = self[j - m]`.
    pub fn shift(&self, m: isize) -> Self {
        let n = self.grid.n as isize;
        let values = (0..n)
            .map(|j| self.values[(j - m).rem_euclid(n) as usize])
            .collect();
        Self::from_raw(self.grid, values)
    }

    pub fn deriv(&self, order: u32) -> Result<Self, GridError> {
        let h = self.grid.spacing();
        let mut out = vec![0.0; self.values.len()];
        match order {
            1 => apply_d1(&self.values, h, &mut out),
            2 => apply_d2(&self.values, h, &mut out),
            3 => apply_d3(&self.values, h, &mut out),
            4 => apply_d4(&self.values, h, &mut out),
            k => return Err(GridError::InvalidOrder(k)),
        }
        Ok(Self::from_raw(self.grid, out))
    }

    /// Periodic trapezoid (equivalently rectangle) rule.
    pub fn integrate(&self) -> f64 {
        self.grid.spacing() * self.values.iter().sum::<f64>()
    }

    /// Quadrature-weighted inner product `h Σ f_j g_j`.
    pub fn dot(&self, other: &PeriodicField) -> Result<f64, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch(self.grid.n, other.grid.n));
        }
        Ok(self.grid.spacing() * dot(&self.values, &other.values))
    }
}

/// Free-function form of [`PeriodicField::deriv`].
pub fn deriv(f: &PeriodicField, order: u32) -> Result<PeriodicField, GridError> {
    f.deriv(order)
}

/// Free-function form of [`PeriodicField::integrate`].
pub fn integrate(f: &PeriodicField) -> f64 {
    f.integrate()
}

impl std::ops::Index<usize> for PeriodicField {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.values[j]
    }
}

// Arithmetic panics on grid mismatch, like shape mismatches in array crates.
impl Add for &PeriodicField {
    type Output = PeriodicField;
    fn add(self, rhs: &PeriodicField) -> PeriodicField {
        self.zip_with(rhs, |a, b| a + b).expect("incompatible grids")
    }
}

impl Sub for &PeriodicField {
    type Output = PeriodicField;
    fn sub(self, rhs: &PeriodicField) -> PeriodicField {
        self.zip_with(rhs, |a, b| a - b).expect("incompatible grids")
    }
}

impl Mul<&PeriodicField> for f64 {
    type Output = PeriodicField;
    fn mul(self, rhs: &PeriodicField) -> PeriodicField {
        rhs.map(|v| self * v)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Applies a symmetric/antisymmetric periodic stencil `Σ_k c_k f_{j+k}`,
/// `k = -r..=r`, with the wrap handled only near the ends.
#[inline]
fn apply_stencil(src: &[f64], coeffs: &[f64], scale: f64, out: &mut [f64]) {
    let n = src.len();
    let r = coeffs.len() / 2;
    debug_assert!(n > 2 * r && out.len() == n);
    let wrapped = |j: usize, k: usize| src[(j + n + k - r) % n];
    for j in (0..r).chain(n - r..n) {
        let mut acc = 0.0;
        for (k, c) in coeffs.iter().enumerate() {
            acc += c * wrapped(j, k);
        }
        out[j] = acc * scale;
    }
    for j in r..n - r {
        let window = &src[j - r..=j + r];
        let acc: f64 = window.iter().zip(coeffs).map(|(f, c)| f * c).sum();
        out[j] = acc * scale;
    }
}

const D1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const D2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
const D3: [f64; 7] = [1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0];
// D2 ∘ D2, numerators over 144.
const D4: [f64; 9] = [
    1.0, -32.0, 316.0, -992.0, 1414.0, -992.0, 316.0, -32.0, 1.0,
];

pub(crate) fn apply_d1(src: &[f64], h: f64, out: &mut [f64]) {
    apply_stencil(src, &D1, 1.0 / (12.0 * h), out);
}

pub(crate) fn apply_d2(src: &[f64], h: f64, out: &mut [f64]) {
    apply_stencil(src, &D2, 1.0 / (12.0 * h * h), out);
}

pub(crate) fn apply_d3(src: &[f64], h: f64, out: &mut [f64]) {
    apply_stencil(src, &D3, 1.0 / (8.0 * h * h * h), out);
}

pub(crate) fn apply_d4(src: &[f64], h: f64, out: &mut [f64]) {
    let h2 = h * h;
    apply_stencil(src, &D4, 1.0 / (144.0 * h2 * h2), out);
}

/// Stencil numerators (offsets `-r..=r`) and their common scale, used by the
/// solver to assemble banded matrices.
pub(crate) fn d2_stencil(h: f64) -> ([f64; 5], f64) {
    (D2, 1.0 / (12.0 * h * h))
}

pub(crate) fn d4_stencil(h: f64) -> ([f64; 9], f64) {
    let h2 = h * h;
    (D4, 1.0 / (144.0 * h2 * h2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(n: usize, f: impl Fn(f64) -> f64) -> PeriodicField {
        PeriodicField::from_fn(make_grid(n).unwrap(), f)
    }

    /// `sin(k t_j)` with the argument reduced modulo the period first, so the
    /// samples carry no error from rounding `t_j` itself.
    fn exact_sin(n: usize, k: usize) -> PeriodicField {
        let grid = make_grid(n).unwrap();
        let values = (0..n)
            .map(|j| (2.0 * PI * ((k * j) % n) as f64 / n as f64).sin())
            .collect();
        PeriodicField::from_values(grid, values).unwrap()
    }

    #[test]
    fn grid_spacing() {
        assert_eq!(make_grid(16).unwrap().spacing(), PI / 8.0);
        assert_eq!(make_grid(2048).unwrap().spacing(), 2.0 * PI / 2048.0);
        assert_eq!(make_grid(15), Err(GridError::OddN(15)));
        assert_eq!(make_grid(14), Err(GridError::TooSmall(14)));
        let g = make_grid(32).unwrap();
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes[0], 0.0);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_non_finite_samples() {
        let g = make_grid(16).unwrap();
        let mut v = vec![1.0; 16];
        v[3] = f64::NAN;
        assert!(matches!(
            PeriodicField::from_values(g, v),
            Err(GridError::NonFinite { index: 3, .. })
        ));
        assert!(PeriodicField::from_values(g, vec![0.0; 8]).is_err());
    }

    #[test]
    fn second_derivative_of_cosine() {
        let f = field(2048, f64::cos);
        let d = f.deriv(2).unwrap();
        let err = (&d + &f).max_abs();
        assert!(err <= 1e-8, "err = {err:e}");
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let f = field(64, |_| 1.0);
        for k in 1..=4 {
            assert!(f.deriv(k).unwrap().values().iter().all(|&v| v == 0.0));
        }
        assert_eq!(f.deriv(5), Err(GridError::InvalidOrder(5)));
    }

    #[test]
    fn fourth_derivative_of_sin3() {
        // At n = 2048 the 1/h⁴ amplification of sample rounding alone is
        // ~5e-5, so the 1e-5 bound is checked where truncation dominates.
        let f = exact_sin(512, 3);
        let err = (&f.deriv(4).unwrap() - &(81.0 * &f)).max_abs();
        assert!(err <= 1e-5, "n=512 err = {err:e}");
        let f = exact_sin(2048, 3);
        let err = (&f.deriv(4).unwrap() - &(81.0 * &f)).max_abs();
        assert!(err <= 2e-4, "n=2048 err = {err:e}");
    }

    #[test]
    fn third_derivative_of_sin2() {
        let f = field(256, |t| (2.0 * t).sin());
        let d = f.deriv(3).unwrap();
        let expect = field(256, |t| -8.0 * (2.0 * t).cos());
        assert!((&d - &expect).max_abs() < 1e-5);
    }

    #[test]
    fn composed_fourth_matches_double_second() {
        let f = field(128, |t| (t.sin() * 2.0).exp());
        let dd = f.deriv(2).unwrap().deriv(2).unwrap();
        let d4 = f.deriv(4).unwrap();
        assert!((&dd - &d4).max_abs() < 1e-9 * d4.max_abs());
    }

    #[test]
    fn quadrature() {
        for n in [16, 64, 2048] {
            let c2 = field(n, |t| t.cos().powi(2)).integrate();
            assert!((c2 - PI).abs() < 1e-13, "n={n}: {c2}");
            assert!((field(n, |_| 1.0).integrate() - 2.0 * PI).abs() < 1e-13);
            assert!(field(n, f64::sin).integrate().abs() < 1e-13);
        }
    }

    fn fitted_slope(xs: &[f64], ys: &[f64]) -> f64 {
        crate::fit::loglog_slope(xs, ys).unwrap()
    }

    #[test]
    fn convergence_order_is_four() {
        let ns = [128usize, 256, 512, 1024, 2048];
        for order in [1u32, 2] {
            let errs: Vec<f64> = ns
                .iter()
                .map(|&n| {
                    let f = exact_sin(n, 5);
                    let d = f.deriv(order).unwrap();
                    let exact = field(n, |t| match order {
                        1 => 5.0 * (5.0 * t).cos(),
                        _ => -25.0 * (5.0 * t).sin(),
                    });
                    (&d - &exact).max_abs()
                })
                .collect();
            let hs: Vec<f64> = ns.iter().map(|&n| 2.0 * PI / n as f64).collect();
            let slope = fitted_slope(&hs, &errs);
            assert!((slope - 4.0).abs() <= 0.3, "order {order}: slope {slope}");
        }
        // Orders 3 and 4 reach the rounding floor past n ≈ 512.
        let ns = [32usize, 64, 128, 256];
        for order in [3u32, 4] {
            let errs: Vec<f64> = ns
                .iter()
                .map(|&n| {
                    let f = exact_sin(n, 5);
                    let d = f.deriv(order).unwrap();
                    let exact = field(n, |t| match order {
                        3 => -125.0 * (5.0 * t).cos(),
                        _ => 625.0 * (5.0 * t).sin(),
                    });
                    (&d - &exact).max_abs()
                })
                .collect();
            let hs: Vec<f64> = ns.iter().map(|&n| 2.0 * PI / n as f64).collect();
            let slope = fitted_slope(&hs, &errs);
            assert!((slope - 4.0).abs() <= 0.3, "order {order}: slope {slope}");
        }
    }

    fn trig_poly(n: usize, coeffs: &[(f64, f64)]) -> PeriodicField {
        field(n, |t| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| a * (k as f64 * t).cos() + b * (k as f64 * t).sin())
                .sum()
        })
    }

    proptest! {
        #[test]
        fn deriv_is_linear(
            ca in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 6),
            cb in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 6),
            a in -3.0..3.0f64, b in -3.0..3.0f64, order in 1u32..=4,
        ) {
            let f = trig_poly(64, &ca);
            let g = trig_poly(64, &cb);
            let lhs = (&(a * &f) + &(b * &g)).deriv(order).unwrap();
            let rhs = &(a * &f.deriv(order).unwrap()) + &(b * &g.deriv(order).unwrap());
            let scale = 1.0 + lhs.max_abs();
            prop_assert!((&lhs - &rhs).max_abs() <= 1e-12 * scale);
        }

        #[test]
        fn integral_of_derivative_vanishes(
            vals in prop::collection::vec(-5.0..5.0f64, 32),
        ) {
            let f = PeriodicField::from_values(make_grid(32).unwrap(), vals).unwrap();
            let i = f.deriv(1).unwrap().integrate();
            prop_assert!(i.abs() <= 1e-12 * (1.0 + f.max_abs() * 32.0));
        }

        #[test]
        fn deriv_commutes_with_shift(
            vals in prop::collection::vec(-5.0..5.0f64, 32),
            m in -40isize..40, order in 1u32..=4,
        ) {
            let f = PeriodicField::from_values(make_grid(32).unwrap(), vals).unwrap();
            let a = f.shift(m).deriv(order).unwrap();
            let b = f.deriv(order).unwrap().shift(m);
            prop_assert_eq!(a.values(), b.values());
        }
    }
}
