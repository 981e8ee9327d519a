//! Closed-form fold profiles.
//!
//! On a lift-off interval `(t_i - z_i, t_i + z_i)` a stationary point solves
//! `w⁗ + (2 + λ) w″ + (1 + λ) w = 0` with `w = 1`, `w′ = 0` at both ends. With
//! `α = √|1 + λ|` the solution is an explicit combination of `cos(αs)`
//! (λ ≥ −1) or `cosh(αs)` (λ < −1) and `cos s`, and the value of `w″` at the
//! endpoints is [`g_alpha`] / [`g_tilde_alpha`] of the half-width. Matching
//! that value to the curvature `k` of the contact set gives the admissible
//! half-widths, found by [`invert_g`].

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy;
use crate::grid::{PeriodicField, PeriodicGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoldError {
    #[error("alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("half-width {0} outside (0, π]")]
    ZOutOfRange(f64),
    #[error("alpha = {0} is excluded on the trigonometric branch")]
    AlphaExcluded(f64),
    #[error("lambda = {0} is degenerate (0 and -1 are excluded)")]
    DegenerateLambda(f64),
    #[error("profile denominator vanishes at z = {z} (|D| = {denominator:e})")]
    DegenerateDenominator { z: f64, denominator: f64 },
    #[error("folds {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("fold {index} dips below the obstacle (min w = {min})")]
    ObstacleViolated { index: usize, min: f64 },
    #[error("no admissible single-fold root on the {0} branch")]
    NoRoot(Branch),
}

/// Which closed form applies: `λ ≥ −1` is trigonometric, `λ < −1`
/// hyperbolic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Trig,
    Hyperbolic,
}

impl Branch {
    pub fn of_lambda(lambda: f64) -> Self {
        if lambda >= -1.0 {
            Branch::Trig
        } else {
            Branch::Hyperbolic
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Trig => "trig",
            Branch::Hyperbolic => "hyperbolic",
        })
    }
}

impl std::str::FromStr for Branch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trig" => Ok(Branch::Trig),
            "hyperbolic" | "hyp" => Ok(Branch::Hyperbolic),
            other => Err(format!("unknown branch '{other}' (expected trig|hyperbolic)")),
        }
    }
}

/// `α = √|1 + λ|`.
pub fn alpha_of(lambda: f64) -> f64 {
    (1.0 + lambda).abs().sqrt()
}

/// Inverse of [`alpha_of`] on a given branch.
pub fn lambda_of(alpha: f64, branch: Branch) -> f64 {
    match branch {
        Branch::Trig => alpha * alpha - 1.0,
        Branch::Hyperbolic => -1.0 - alpha * alpha,
    }
}

/// Value of `g_α` / `g̃_α`: finite, or a pole with the sign of the blow-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GValue {
    Finite(f64),
    Pole { sign: f64 },
}

impl GValue {
    /// Poles map to signed infinity.
    pub fn value(self) -> f64 {
        match self {
            GValue::Finite(v) => v,
            GValue::Pole { sign } => sign * f64::INFINITY,
        }
    }

    pub fn is_pole(self) -> bool {
        matches!(self, GValue::Pole { .. })
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            GValue::Finite(v) => Some(v),
            GValue::Pole { .. } => None,
        }
    }
}

/// `cosh(x)` and `sinh(x)` with a common factor `e^{x}` removed once
/// `x > 30`; the closed forms are ratios so the factor cancels.
#[inline]
fn scaled_cosh_sinh(x: f64, factor_out: f64) -> (f64, f64) {
    if factor_out > 30.0 {
        let e = (x - factor_out).exp();
        let f = (-x - factor_out).exp();
        ((e + f) / 2.0, (e - f) / 2.0)
    } else {
        (x.cosh(), x.sinh())
    }
}

/// Numerator `N` and denominator `D` with `g = −N/D` (trig) or `g̃ = N/D`
/// (hyperbolic), together with the magnitudes used for the pole test.
#[derive(Debug, Clone, Copy)]
struct Parts {
    num: f64,
    den: f64,
    num_scale: f64,
    den_scale: f64,
}

fn parts(alpha: f64, z: f64, branch: Branch) -> Parts {
    let (sz, cz) = z.sin_cos();
    match branch {
        Branch::Trig => {
            let (saz, caz) = (alpha * z).sin_cos();
            let a = sz * caz;
            let b = alpha * saz * cz;
            Parts {
                num: alpha * alpha * a - b,
                den: a - b,
                num_scale: alpha * alpha * a.abs() + b.abs(),
                den_scale: a.abs() + b.abs(),
            }
        }
        Branch::Hyperbolic => {
            let (ch, sh) = scaled_cosh_sinh(alpha * z, alpha * z);
            let a = sz * ch;
            let b = alpha * sh * cz;
            Parts {
                num: alpha * alpha * a - b,
                den: a + b,
                num_scale: alpha * alpha * a.abs() + b.abs(),
                den_scale: a.abs() + b.abs(),
            }
        }
    }
}

fn check_domain(alpha: f64, z: f64) -> Result<(), FoldError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(FoldError::InvalidAlpha(alpha));
    }
    if !(z > 0.0 && z <= PI) {
        return Err(FoldError::ZOutOfRange(z));
    }
    Ok(())
}

fn g_raw(alpha: f64, z: f64, branch: Branch) -> GValue {
    let p = parts(alpha, z, branch);
    let sign = match branch {
        Branch::Trig => -1.0,
        Branch::Hyperbolic => 1.0,
    };
    let removable = p.den.abs() <= 1e-8 * p.den_scale.max(f64::MIN_POSITIVE)
        && p.num.abs() <= 1e-8 * p.num_scale.max(f64::MIN_POSITIVE);
    if removable && branch == Branch::Trig && PI - z <= 1e-6 {
        // 0/0 at z = π for integer α: one-sided limit by quadratic
        // extrapolation from the left. (Odd α also gives 0/0 at π/2, but
        // there the denominator vanishes to third order: a genuine pole.)
        let d = 1e-3;
        let at = |s: f64| {
            let q = parts(alpha, s, branch);
            sign * q.num / q.den
        };
        return GValue::Finite(3.0 * at(z - d) - 3.0 * at(z - 2.0 * d) + at(z - 3.0 * d));
    }
    if p.den.abs() <= 1e-14 * p.num_scale {
        let s = if p.den != 0.0 {
            (sign * p.num / p.den).signum()
        } else {
            (sign * p.num).signum()
        };
        return GValue::Pole { sign: s };
    }
    GValue::Finite(sign * p.num / p.den)
}

/// `g_α(z) = −(α² sin z cos αz − α sin αz cos z) / (sin z cos αz − α sin αz cos z)`
/// for `z ∈ (0, π]`.
pub fn g_alpha(alpha: f64, z: f64) -> Result<GValue, FoldError> {
    check_domain(alpha, z)?;
    Ok(g_raw(alpha, z, Branch::Trig))
}

/// `g̃_α(z) = (α² sin z cosh αz − α sinh αz cos z) / (sin z cosh αz + α sinh αz cos z)`
/// for `z ∈ (0, π]`.
pub fn g_tilde_alpha(alpha: f64, z: f64) -> Result<GValue, FoldError> {
    check_domain(alpha, z)?;
    Ok(g_raw(alpha, z, Branch::Hyperbolic))
}

pub fn g_branch(alpha: f64, z: f64, branch: Branch) -> Result<GValue, FoldError> {
    match branch {
        Branch::Trig => g_alpha(alpha, z),
        Branch::Hyperbolic => g_tilde_alpha(alpha, z),
    }
}

/// Default number of bracketing intervals for [`invert_g`].
pub const DEFAULT_SCAN_POINTS: usize = 100_000;

/// All `z ∈ (0, π]` with `g(z) = k` on the given branch, ascending.
///
/// Roots of `g − k` are the sign changes of the smooth function
/// `N + kD` (trig) / `N − kD` (hyperbolic) that are not also zeros of `D`,
/// so poles never produce spurious brackets. Negative `k` is accepted even
/// though stationary folds always have `k ≥ 0`.
pub fn invert_g(alpha: f64, k: f64, branch: Branch) -> Result<Vec<f64>, FoldError> {
    invert_g_with(alpha, k, branch, DEFAULT_SCAN_POINTS)
}

pub fn invert_g_with(
    alpha: f64,
    k: f64,
    branch: Branch,
    scan_points: usize,
) -> Result<Vec<f64>, FoldError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(FoldError::InvalidAlpha(alpha));
    }
    if branch == Branch::Trig && (alpha - 1.0).abs() < 1e-12 {
        return Err(FoldError::AlphaExcluded(alpha));
    }
    // g − k = sign · (N − sign·k·D) / D
    let sign = match branch {
        Branch::Trig => -1.0,
        Branch::Hyperbolic => 1.0,
    };
    let f = |z: f64| {
        let p = parts(alpha, z, branch);
        p.num - sign * k * p.den
    };
    let m = scan_points.max(16);
    let zs: Vec<f64> = (1..=m).map(|i| PI * i as f64 / m as f64).collect();
    let fs: Vec<f64> = zs.iter().map(|&z| f(z)).collect();
    let accept = |z: f64| match g_raw(alpha, z, branch) {
        GValue::Finite(v) => (v - k).abs() <= 1e-10 * (1.0 + k.abs()),
        GValue::Pole { .. } => false,
    };
    let mut roots = Vec::new();
    for i in 0..m - 1 {
        let (a, b) = (zs[i], zs[i + 1]);
        let (fa, fb) = (fs[i], fs[i + 1]);
        if fa == 0.0 {
            if accept(a) {
                roots.push(a);
            }
            continue;
        }
        if fa.signum() == fb.signum() || fb == 0.0 {
            continue;
        }
        let z = polish_root(&f, a, b, fa, fb);
        if accept(z) {
            roots.push(z);
        }
    }
    // The closed end z = π, where N + kD may vanish together with D.
    if accept(PI) {
        let last = *zs.last().unwrap();
        let near_last = roots.last().is_some_and(|&r| (r - last).abs() < PI / m as f64);
        if near_last {
            roots.pop();
        }
        roots.push(PI);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    Ok(roots)
}

/// Bracketed root refinement: Illinois-modified secant with a bisection
/// fallback, run to full precision.
pub(crate) fn polish_root(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> f64 {
    let mut side = 0i32;
    for _ in 0..200 {
        if (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        if fc == 0.0 {
            return c;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}

/// Closed-form fold of half-width `z` centered at 0, for a given `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldShape {
    pub lambda: f64,
    pub alpha: f64,
    pub branch: Branch,
    pub z: f64,
    /// Profile denominator (scaled by `e^{-αz}` on the hyperbolic branch
    /// when `αz > 30`).
    denominator: f64,
}

impl FoldShape {
    pub fn new(lambda: f64, z: f64) -> Result<Self, FoldError> {
        if lambda.abs() < 1e-12 || (lambda + 1.0).abs() < 1e-12 || !lambda.is_finite() {
            return Err(FoldError::DegenerateLambda(lambda));
        }
        if !(z > 0.0 && z <= PI) {
            return Err(FoldError::ZOutOfRange(z));
        }
        let branch = Branch::of_lambda(lambda);
        let alpha = alpha_of(lambda);
        let p = parts(alpha, z, branch);
        if p.den.abs() <= 1e-12 * p.den_scale.max(1e-300) {
            return Err(FoldError::DegenerateDenominator {
                z,
                denominator: p.den,
            });
        }
        Ok(Self {
            lambda,
            alpha,
            branch,
            z,
            denominator: p.den,
        })
    }

    /// Profile derivative of order `order ∈ 0..=4` at offset `s` from the
    /// fold center.
    pub fn eval(&self, s: f64, order: u32) -> f64 {
        let a = self.alpha;
        let z = self.z;
        let (ss, cs) = s.sin_cos();
        // d^k/ds^k cos s
        let cos_d = match order % 4 {
            0 => cs,
            1 => -ss,
            2 => -cs,
            _ => ss,
        };
        match self.branch {
            Branch::Trig => {
                let (sas, cas) = (a * s).sin_cos();
                let cos_a_d = a.powi(order as i32)
                    * match order % 4 {
                        0 => cas,
                        1 => -sas,
                        2 => -cas,
                        _ => sas,
                    };
                let saz = (a * z).sin();
                (z.sin() * cos_a_d - a * saz * cos_d) / self.denominator
            }
            Branch::Hyperbolic => {
                let scale = a * z;
                let (chs, shs) = scaled_cosh_sinh(a * s, scale);
                let (_, shz) = scaled_cosh_sinh(a * z, scale);
                let cosh_a_d = a.powi(order as i32) * if order % 2 == 0 { chs } else { shs };
                (z.sin() * cosh_a_d + a * shz * cos_d) / self.denominator
            }
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        self.eval(s, 0)
    }

    /// `w″` at the endpoints, which equals `g_α(z)` / `g̃_α(z)`.
    pub fn endpoint_curvature(&self) -> f64 {
        self.eval(self.z, 2)
    }

    /// Minimum of the profile over a dense sampling of `[−z, z]`.
    pub fn min_value(&self) -> f64 {
        let m = 2000;
        (0..=m)
            .map(|i| self.value(-self.z + 2.0 * self.z * i as f64 / m as f64))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_admissible(&self) -> bool {
        self.min_value() >= 1.0 - 1e-12
    }

    /// `(∫(w″ + w)², ∫(w² − w′²))` over the fold, by Gauss–Legendre
    /// quadrature.
    pub fn integrals(&self) -> (f64, f64) {
        let panels = 64;
        let (xs, ws) = gauss_legendre(16);
        let width = 2.0 * self.z / panels as f64;
        let mut e = 0.0;
        let mut c = 0.0;
        for p in 0..panels {
            let mid = -self.z + (p as f64 + 0.5) * width;
            for (x, wgt) in xs.iter().zip(&ws) {
                let s = mid + 0.5 * width * x;
                let w0 = self.eval(s, 0);
                let w1 = self.eval(s, 1);
                let w2 = self.eval(s, 2);
                let q = 0.5 * width * wgt;
                e += q * (w2 + w0) * (w2 + w0);
                c += q * (w0 * w0 - w1 * w1);
            }
        }
        (e, c)
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub(crate) fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; m];
    let mut ws = vec![0.0; m];
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

/// One lift-off interval `(center − half_width, center + half_width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub center: f64,
    pub half_width: f64,
}

/// `λ`, the folds sharing it, and the expected contact-set curvature `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub lambda: f64,
    pub folds: Vec<Fold>,
    pub k: f64,
}

/// Circular distance between two angles.
pub(crate) fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Signed offset `t − c` wrapped into `[−π, π)`.
pub(crate) fn wrap_offset(t: f64, c: f64) -> f64 {
    (t - c + PI).rem_euclid(2.0 * PI) - PI
}

impl FoldSpec {
    pub fn alpha(&self) -> f64 {
        alpha_of(self.lambda)
    }

    pub fn branch(&self) -> Branch {
        Branch::of_lambda(self.lambda)
    }

    pub fn validate(&self) -> Result<(), FoldError> {
        if self.lambda.abs() < 1e-12 || (self.lambda + 1.0).abs() < 1e-12 {
            return Err(FoldError::DegenerateLambda(self.lambda));
        }
        for f in &self.folds {
            if !(f.half_width > 0.0 && f.half_width <= PI) {
                return Err(FoldError::ZOutOfRange(f.half_width));
            }
        }
        for i in 0..self.folds.len() {
            for j in i + 1..self.folds.len() {
                let (a, b) = (self.folds[i], self.folds[j]);
                if circ_dist(a.center, b.center) < a.half_width + b.half_width - 1e-12 {
                    return Err(FoldError::Overlap(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn shapes(&self) -> Result<Vec<FoldShape>, FoldError> {
        self.folds
            .iter()
            .map(|f| FoldShape::new(self.lambda, f.half_width))
            .collect()
    }
}

/// Samples of one closed-form fold on the grid nodes inside its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSamples {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Samples the fold `(λ, t_i, z_i)` on the nodes of `grid` lying in
/// `[t_i − z_i, t_i + z_i]`.
pub fn fold_profile(
    lambda: f64,
    center: f64,
    half_width: f64,
    grid: PeriodicGrid,
) -> Result<ProfileSamples, FoldError> {
    let shape = FoldShape::new(lambda, half_width)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for j in 0..grid.n() {
        let s = wrap_offset(grid.node(j), center);
        if s.abs() <= half_width {
            indices.push(j);
            values.push(shape.value(s));
        }
    }
    Ok(ProfileSamples { indices, values })
}

/// A piecewise closed-form field: profiles on the folds, `1` elsewhere.
#[derive(Debug, Clone, Serialize)]
pub struct FoldCandidate {
    pub spec: FoldSpec,
    #[serde(skip)]
    pub w: PeriodicField,
    /// `∫(w″ + w)²` of the closed form.
    pub energy: f64,
    /// `∫(w² − w′²)` of the closed form.
    pub constraint_residual: f64,
    /// The same functionals evaluated on the grid samples.
    pub grid_energy: f64,
    pub grid_constraint: f64,
    /// `|w″ − k|` at each fold endpoint, two per fold.
    pub c2_jumps: Vec<f64>,
    pub min_w: f64,
    pub feasible: bool,
}

/// Constraint tolerance used to label candidates feasible.
pub const CANDIDATE_CONSTRAINT_TOL: f64 = 1e-8 * 2.0 * PI;

pub fn assemble_candidate(spec: &FoldSpec, grid: PeriodicGrid) -> Result<FoldCandidate, FoldError> {
    spec.validate()?;
    let shapes = spec.shapes()?;
    for (index, shape) in shapes.iter().enumerate() {
        let min = shape.min_value();
        if min < 1.0 - 1e-12 {
            return Err(FoldError::ObstacleViolated { index, min });
        }
    }
    let mut values = vec![1.0; grid.n()];
    for (fold, shape) in spec.folds.iter().zip(&shapes) {
        for (j, v) in values.iter_mut().enumerate() {
            let s = wrap_offset(grid.node(j), fold.center);
            if s.abs() < fold.half_width {
                *v = shape.value(s);
            }
        }
    }
    let w = PeriodicField::from_values(grid, values).map_err(|_| FoldError::DegenerateDenominator {
        z: f64::NAN,
        denominator: 0.0,
    })?;
    let mut e = 2.0 * PI;
    let mut c = 2.0 * PI;
    let mut c2_jumps = Vec::with_capacity(2 * shapes.len());
    for shape in &shapes {
        let (fe, fc) = shape.integrals();
        e += fe - 2.0 * shape.z;
        c += fc - 2.0 * shape.z;
        let jump = (shape.endpoint_curvature() - spec.k).abs();
        c2_jumps.push(jump);
        c2_jumps.push(jump);
    }
    let min_w = w.min();
    Ok(FoldCandidate {
        grid_energy: energy::energy(&w),
        grid_constraint: energy::constraint(&w),
        spec: spec.clone(),
        w,
        energy: e,
        constraint_residual: c,
        c2_jumps,
        min_w,
        feasible: c.abs() <= CANDIDATE_CONSTRAINT_TOL && min_w >= 1.0 - 1e-12,
    })
}

/// Opening angle `2z*` of the single-fold stationary point, in degrees.
///
/// Derived, not an input: this is the value [`solve_single_fold`] produces
/// (λ* ≈ 13.4743, z* ≈ 1.212874); the test suite re-solves and compares.
pub const SINGLE_FOLD_OPENING_DEG: f64 = 138.985_131_742_9;

/// Result of [`solve_single_fold`].
#[derive(Debug, Clone, Serialize)]
pub struct SingleFold {
    pub lambda: f64,
    pub alpha: f64,
    pub z: f64,
    pub branch: Branch,
    pub candidate: FoldCandidate,
}

impl SingleFold {
    pub fn opening_angle_deg(&self) -> f64 {
        2.0 * self.z.to_degrees()
    }
}

/// Smallest admissible root of `g = 0` for a given α.
fn first_admissible_zero(alpha: f64, branch: Branch, scan: usize) -> Option<FoldShape> {
    let lambda = lambda_of(alpha, branch);
    invert_g_with(alpha, 0.0, branch, scan)
        .ok()?
        .into_iter()
        .filter_map(|z| FoldShape::new(lambda, z).ok())
        .find(FoldShape::is_admissible)
}

fn single_fold_constraint(shape: &FoldShape) -> f64 {
    2.0 * PI - 2.0 * shape.z + shape.integrals().1
}

/// Finds `(λ, z)` with `g(z) = 0` (flat contact set, `k = 0`) and a
/// vanishing total constraint for one fold centered at 0.
///
/// α is scanned upward; along the branch of the smallest admissible zero of
/// `g_α`, the first sign change of the constraint is refined by bisection.
/// The trigonometric branch is searched first.
pub fn solve_single_fold(grid: PeriodicGrid) -> Result<SingleFold, FoldError> {
    match solve_single_fold_on(Branch::Trig, grid) {
        Err(FoldError::NoRoot(_)) => solve_single_fold_on(Branch::Hyperbolic, grid),
        other => other,
    }
}

pub fn solve_single_fold_on(branch: Branch, grid: PeriodicGrid) -> Result<SingleFold, FoldError> {
    const SCAN: usize = 4000;
    let (lo, hi, step): (f64, f64, f64) = match branch {
        Branch::Trig => (1.0, 12.0, 0.01),
        Branch::Hyperbolic => (0.0, 12.0, 0.01),
    };
    let mut prev: Option<(f64, FoldShape, f64)> = None;
    let mut bracket = None;
    let steps = ((hi - lo) / step).round() as usize;
    for i in 1..=steps {
        let alpha = lo + step * i as f64;
        let Some(shape) = first_admissible_zero(alpha, branch, SCAN) else {
            prev = None;
            continue;
        };
        let r = single_fold_constraint(&shape);
        if let Some((pa, ps, pr)) = prev {
            let same_branch = (ps.z - shape.z).abs() < 0.05;
            if same_branch && pr.signum() != r.signum() {
                bracket = Some((pa, alpha, pr));
                break;
            }
        }
        prev = Some((alpha, shape, r));
    }
    let (mut a, mut b, ra) = bracket.ok_or(FoldError::NoRoot(branch))?;
    let eval = |alpha: f64| {
        first_admissible_zero(alpha, branch, SCAN).map(|s| (single_fold_constraint(&s), s))
    };
    let sa = ra.signum();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let (rm, _) = eval(m).ok_or(FoldError::NoRoot(branch))?;
        if rm == 0.0 {
            a = m;
            b = m;
            break;
        }
        if rm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    let alpha = 0.5 * (a + b);
    let (_, shape) = eval(alpha).ok_or(FoldError::NoRoot(branch))?;
    let spec = FoldSpec {
        lambda: shape.lambda,
        folds: vec![Fold {
            center: 0.0,
            half_width: shape.z,
        }],
        k: 0.0,
    };
    let candidate = assemble_candidate(&spec, grid)?;
    Ok(SingleFold {
        lambda: shape.lambda,
        alpha,
        z: shape.z,
        branch,
        candidate,
    })
}

/// One row of a root/energy sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub k: f64,
    pub branch: Branch,
    pub root_index: Option<usize>,
    pub z: Option<f64>,
    /// Closed-form energy of a single fold of half-width `z`, when the
    /// profile clears the obstacle.
    pub energy: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    /// The single-fold profile stays above the obstacle.
    Feasible,
    /// The profile dips below 1 or its denominator degenerates.
    Infeasible,
    AlphaExcluded,
    NoRoots,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Feasible => "true",
            RowStatus::Infeasible => "false",
            RowStatus::AlphaExcluded => "alpha_excluded",
            RowStatus::NoRoots => "no_roots",
        }
    }
}

/// Roots of `g = k` and single-fold energies over a grid of `(α, k)`.
/// Rows are independent and produced in `(α, k, root)` order.
pub fn sweep(alphas: &[f64], ks: &[f64], branch: Branch) -> Vec<SweepRow> {
    use rayon::prelude::*;
    let pairs: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| ks.iter().map(move |&k| (a, k)))
        .collect();
    pairs
        .par_iter()
        .map(|&(alpha, k)| sweep_cell(alpha, k, branch))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn sweep_cell(alpha: f64, k: f64, branch: Branch) -> Vec<SweepRow> {
    let row = |root_index, z, energy, status| SweepRow {
        alpha,
        k,
        branch,
        root_index,
        z,
        energy,
        status,
    };
    let roots = match invert_g(alpha, k, branch) {
        Ok(r) => r,
        Err(FoldError::AlphaExcluded(_)) => {
            return vec![row(None, None, None, RowStatus::AlphaExcluded)]
        }
        Err(_) => return vec![row(None, None, None, RowStatus::Infeasible)],
    };
    if roots.is_empty() {
        return vec![row(None, None, None, RowStatus::NoRoots)];
    }
    let lambda = lambda_of(alpha, branch);
    roots
        .into_iter()
        .enumerate()
        .map(|(i, z)| match FoldShape::new(lambda, z) {
            Ok(shape) if shape.is_admissible() => {
                let e = 2.0 * PI - 2.0 * z + shape.integrals().0;
                row(Some(i), Some(z), Some(e), RowStatus::Feasible)
            }
            _ => row(Some(i), Some(z), None, RowStatus::Infeasible),
        })
        .collect()
}

/// `(z, g(z))` samples for plotting, with poles flagged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub z: f64,
    /// `±∞` at exact poles.
    pub g_value: f64,
    /// A pole lies at this sample or between it and the next one.
    pub is_pole: bool,
}

/// Samples `g` (or `g̃`) at `samples` equally spaced points of `(0, π]`.
pub fn plot_g(alpha: f64, branch: Branch, samples: usize) -> Result<Vec<PlotRow>, FoldError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(FoldError::InvalidAlpha(alpha));
    }
    if branch == Branch::Trig && (alpha - 1.0).abs() < 1e-12 {
        return Err(FoldError::AlphaExcluded(alpha));
    }
    let m = samples.max(2);
    let zs: Vec<f64> = (1..=m).map(|i| PI * i as f64 / m as f64).collect();
    let dens: Vec<f64> = zs.iter().map(|&z| parts(alpha, z, branch).den).collect();
    let gs: Vec<GValue> = zs.iter().map(|&z| g_raw(alpha, z, branch)).collect();
    Ok((0..m)
        .map(|i| {
            let crossing = i + 1 < m
                && dens[i].signum() != dens[i + 1].signum()
                && !gs[i + 1].is_pole()
                && !is_removable(alpha, zs[i + 1], branch);
            PlotRow {
                z: zs[i],
                g_value: gs[i].value(),
                is_pole: gs[i].is_pole() || crossing,
            }
        })
        .collect())
}

fn is_removable(alpha: f64, z: f64, branch: Branch) -> bool {
    if branch != Branch::Trig || PI - z > 1e-6 {
        return false;
    }
    let p = parts(alpha, z, branch);
    p.den.abs() <= 1e-8 * p.den_scale && p.num.abs() <= 1e-8 * p.num_scale
}

/// Number of poles and continuous branches in a plot table.
///
/// Adjacent flagged rows count as one pole.
pub fn pole_and_branch_counts(rows: &[PlotRow]) -> (usize, usize) {
    let poles = rows
        .iter()
        .enumerate()
        .filter(|(i, r)| r.is_pole && (*i == 0 || !rows[i - 1].is_pole))
        .count();
    (poles, poles + 1)
}
