//! Curves on the unit sphere whose rescaled bending energy approaches the
//! limit functional.
//!
//! A limit field `w` becomes a triple `(u, v, w)` with `u = −w²/2` and
//! `u + v′ = −w′²/2`. For a scale `h` the curve is built in four stages:
//!
//! 1. `(1 + h²u) e_r + h²v e_φ + h w e_z`
//! 2. lift by `h^{5/2} e_z`
//! 3. project onto the sphere
//! 4. reparametrize by arclength on `[0, 2π]`
//!
//! Stage 4 misses closing by a small gap. Its geodesic curvature `κ` is
//! extracted, perturbed by `a · ψ̄` with three fixed bumps, and the frame
//! ODE for `(T, N, U)` is integrated again; Newton on `a` closes the curve.
//!
//! Curves are sampled on `t_j = 2πj/n`, `j = 0..=n`, so both endpoints are
//! stored even for closed curves.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::energy::{constraint, energy};
use crate::fit::loglog_slope;
use crate::grid::{GridError, PeriodicField};

pub type V3 = Vector3<f64>;

/// Rows `(T, N, U)`: tangent, conormal `T ∧ U`, position.
pub type Frame = Matrix3<f64>;

/// `|constraint(w)|` above which `v` cannot close.
pub const CONSTRAINT_TOL: f64 = 1e-8 * TAU;
/// Newton target for the closure mismatch.
pub const CLOSE_TOL: f64 = 1e-11;
/// Jacobians with `|det|` below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-14;
/// Radius of the ball in which `a` is searched.
pub const R0: f64 = 1.0;
/// Default scales for [`gamma_check`].
pub const DEFAULT_H: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("obstacle violated: min w = {min}")]
    ObstacleViolated { min: f64 },
    #[error("v does not close: v(0) − v(2π) = {defect}")]
    NonPeriodicV { defect: f64 },
    #[error("lift-off region too small to hold the correction bump")]
    NoInteriorSupport,
    #[error("constraint restoration failed: {0}")]
    NewtonStall(String),
    #[error("endpoint data outside the chart domain")]
    ChartDegenerate,
    #[error("closure Jacobian is singular (det = {det:e})")]
    SingularJacobian { det: f64 },
    #[error("closure Newton diverged after {iterations} iterations (|f| = {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

// ---------------------------------------------------------------------------
// Triples

/// `(u, v, w)` on a common periodic grid.
#[derive(Debug, Clone)]
pub struct AdmissibleTriple {
    pub u: PeriodicField,
    pub v: PeriodicField,
    pub w: PeriodicField,
    /// `v(0) − v(2π)` before the linear drift was removed.
    pub closure_defect: f64,
}

/// Invariant residuals of a triple.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TripleCheck {
    pub min_w: f64,
    /// `max |u + w²/2|`.
    pub u_residual: f64,
    /// `max |u + v′ + w′²/2|` with finite-difference derivatives.
    pub v_residual: f64,
    pub closure_defect: f64,
}

impl TripleCheck {
    pub fn passes(&self) -> bool {
        self.min_w >= 1.0 - 1e-10
            && self.u_residual <= 1e-8
            && self.v_residual <= 1e-6
            && self.closure_defect.abs() <= 1e-8
    }
}

impl AdmissibleTriple {
    pub fn check(&self) -> Result<TripleCheck, RecoveryError> {
        let w1 = self.w.deriv(1)?;
        let v1 = self.v.deriv(1)?;
        let mut u_res: f64 = 0.0;
        let mut v_res: f64 = 0.0;
        for j in 0..self.w.len() {
            let (u, w) = (self.u[j], self.w[j]);
            u_res = u_res.max((u + 0.5 * w * w).abs());
            v_res = v_res.max((u + v1[j] + 0.5 * w1[j] * w1[j]).abs());
        }
        Ok(TripleCheck {
            min_w: self.w.min(),
            u_residual: u_res,
            v_residual: v_res,
            closure_defect: self.closure_defect,
        })
    }
}

/// Builds `u = −w²/2` and `v = v0 + ∫₀ᵗ (w² − w′²)/2`.
pub fn triple_from_w(w: &PeriodicField, v0: f64) -> Result<AdmissibleTriple, RecoveryError> {
    if w.min() < 1.0 - 1e-10 {
        return Err(RecoveryError::ObstacleViolated { min: w.min() });
    }
    let t = triple_unchecked(w, v0)?;
    if constraint(w).abs() > CONSTRAINT_TOL {
        return Err(RecoveryError::NonPeriodicV { defect: t.closure_defect });
    }
    Ok(t)
}

/// [`triple_from_w`] without the obstacle and closure checks. Used for
/// inadmissible comparison fields such as `A cos t`.
pub fn triple_unchecked(w: &PeriodicField, v0: f64) -> Result<AdmissibleTriple, RecoveryError> {
    let grid = w.grid();
    let n = grid.n();
    let h = grid.spacing();
    let w1 = w.deriv(1)?;
    let f: Vec<f64> = (0..n).map(|j| 0.5 * (w[j] * w[j] - w1[j] * w1[j])).collect();
    let cum = cumulative_periodic(&f, h);
    let total = cum[n];
    let v: Vec<f64> = (0..n).map(|j| v0 + cum[j] - total * j as f64 / n as f64).collect();
    let u = w.map(|x| -0.5 * x * x);
    Ok(AdmissibleTriple {
        u,
        v: PeriodicField::from_values(grid, v)?,
        w: w.clone(),
        closure_defect: -total,
    })
}

/// Running integral `∫₀^{t_j} f` for `j = 0..=n` of periodic samples, cell by
/// cell with the four-point rule `(−1, 13, 13, −1)/24`.
fn cumulative_periodic(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let at = |j: isize| f[j.rem_euclid(n as isize) as usize];
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for j in 0..n as isize {
        acc += h / 24.0 * (-at(j - 1) + 13.0 * at(j) + 13.0 * at(j + 1) - at(j + 2));
        out.push(acc);
    }
    out
}

// ---------------------------------------------------------------------------
// Mollification

#[derive(Debug, Clone)]
pub struct Mollified {
    pub w: PeriodicField,
    pub lambda: f64,
    pub psi: PeriodicField,
    pub constraint: f64,
    pub eps: f64,
}

/// Discrete bump-kernel mollification of width `eps`, followed by the
/// correction `λ ψ` that restores the constraint.
pub fn mollify_admissible(w: &PeriodicField, eps: f64) -> Result<Mollified, RecoveryError> {
    let grid = w.grid();
    let h = grid.spacing();
    if w.min() < 1.0 - 1e-10 {
        return Err(RecoveryError::ObstacleViolated { min: w.min() });
    }
    if constraint(w).abs() > CONSTRAINT_TOL {
        return Err(RecoveryError::InvalidInput(format!(
            "constraint(w) = {:e} exceeds the tolerance",
            constraint(w)
        )));
    }
    if !(eps >= 2.0 * h && eps < PI) {
        return Err(RecoveryError::InvalidInput(format!(
            "mollifier width {eps} must lie in [2h, π) with h = {h}"
        )));
    }
    let psi = lift_bump(w)?;
    let wbar = mollify(w, eps);

    let c0 = constraint(&wbar);
    let c2 = constraint(&psi);
    let b = 0.25 * (constraint(&(&wbar + &psi)) - constraint(&(&wbar - &psi)));
    let disc = b * b - c0 * c2;
    if disc < 0.0 || b == 0.0 {
        return Err(RecoveryError::NewtonStall(format!(
            "no real root: b = {b:e}, discriminant = {disc:e}"
        )));
    }
    // Root of c2 λ² + 2bλ + c0 nearest zero.
    let mut lambda = -c0 / (b + b.signum() * disc.sqrt());
    let g = |l: f64| constraint(&(&wbar + &(l * &psi)));
    let mut gl = g(lambda);
    for _ in 0..4 {
        if gl.abs() <= 1e-13 {
            break;
        }
        let slope = 2.0 * (b + c2 * lambda);
        if slope == 0.0 {
            break;
        }
        lambda -= gl / slope;
        gl = g(lambda);
    }
    if gl.abs() > 1e-10 {
        return Err(RecoveryError::NewtonStall(format!("|G(λ)| = {:e}", gl.abs())));
    }
    let out = &wbar + &(lambda * &psi);
    if out.min() < 1.0 {
        return Err(RecoveryError::ObstacleViolated { min: out.min() });
    }
    Ok(Mollified { w: out, lambda, psi, constraint: gl, eps })
}

/// `1 + Σ η_k (w_{j+k} − 1)` with normalized weights, so the result never dips
/// below one when `w` does not.
fn mollify(w: &PeriodicField, eps: f64) -> PeriodicField {
    let h = w.grid().spacing();
    let m = (eps / h).ceil() as isize;
    let eta: Vec<f64> = (-m..=m)
        .map(|k| {
            let x = k as f64 * h / eps;
            if x.abs() < 1.0 {
                (-1.0 / (1.0 - x * x)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = eta.iter().sum();
    let n = w.len() as isize;
    let vals = (0..n)
        .map(|j| {
            let s: f64 = (-m..=m)
                .zip(&eta)
                .map(|(k, e)| e * (w[(j + k).rem_euclid(n) as usize] - 1.0))
                .sum();
            1.0 + s / total
        })
        .collect();
    PeriodicField::from_values(w.grid(), vals).expect("same grid")
}

/// `C³` bump `(1 − x²)⁴` centred in the lift-off run around `argmax w`,
/// inside `{w > 1 + 2δ₁}` with `δ₁ = (max w − 1)/4`. A `C^∞` bump is too steep
/// near its edge for the grid.
fn lift_bump(w: &PeriodicField) -> Result<PeriodicField, RecoveryError> {
    let n = w.len();
    let peak = w.max() - 1.0;
    if peak <= 1e-6 {
        return Err(RecoveryError::NoInteriorSupport);
    }
    let level = 1.0 + 0.5 * peak;
    let top = (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    let above = |j: isize| w[j.rem_euclid(n as isize) as usize] > level;
    let (mut lo, mut hi) = (top as isize, top as isize);
    while above(lo - 1) && hi - lo < n as isize {
        lo -= 1;
    }
    while above(hi + 1) && hi - lo < n as isize {
        hi += 1;
    }
    if hi - lo < 8 {
        return Err(RecoveryError::NoInteriorSupport);
    }
    let h = w.grid().spacing();
    let centre = 0.5 * (lo + hi) as f64 * h;
    let radius = 0.4 * (hi - lo) as f64 * h;
    Ok(PeriodicField::from_fn(w.grid(), |t| {
        let d = (t - centre + PI).rem_euclid(TAU) - PI;
        let x = d / radius;
        if x.abs() < 1.0 {
            (1.0 - x * x).powi(4)
        } else {
            0.0
        }
    }))
}

// ---------------------------------------------------------------------------
// Curves

/// Samples of a curve on `t_j = 2πj/n`, `j = 0..=n`.
#[derive(Debug, Clone)]
pub struct Curve3 {
    /// Scale parameter; zero for curves not built from a triple.
    pub h: f64,
    /// Whether the samples are periodic (`points[n] = points[0]`).
    pub closed: bool,
    pub points: Vec<V3>,
    /// Exact tangents where the construction provides them.
    pub tangents: Option<Vec<V3>>,
}

impl Curve3 {
    pub fn from_fn(n: usize, h: f64, closed: bool, f: impl Fn(f64) -> V3) -> Self {
        let points = (0..=n).map(|j| f(TAU * j as f64 / n as f64)).collect();
        Self { h, closed, points, tangents: None }
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.points.len() - 1
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n() as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        TAU * j as f64 / self.n() as f64
    }

    /// Given tangents, or fourth-order differences of the points.
    pub fn tangent_samples(&self) -> Vec<V3> {
        match &self.tangents {
            Some(t) => t.clone(),
            None => diff1(&self.points, self.closed, self.spacing()),
        }
    }

    /// Frame `(T, T ∧ U, U)` at node `j`, with `T` made orthogonal to `U`.
    pub fn frame_at(&self, j: usize) -> Frame {
        let u = self.points[j].normalize();
        let t = self.tangent_samples()[j];
        frame_from(t, u)
    }

    pub fn max_radius_defect(&self) -> f64 {
        self.points.iter().map(|p| (p.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max ||γ′| − 1|` from fourth-order differences of the points.
    pub fn max_speed_defect_fd(&self) -> f64 {
        diff1(&self.points, self.closed, self.spacing())
            .iter()
            .map(|d| (d.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min)
    }

    pub fn endpoint_gaps(&self) -> (f64, f64) {
        let n = self.n();
        let t = self.tangent_samples();
        ((self.points[n] - self.points[0]).norm(), (t[n] - t[0]).norm())
    }
}

fn frame_from(t: V3, u: V3) -> Frame {
    let t = (t - u * t.dot(&u)).normalize();
    let nn = t.cross(&u);
    Frame::from_rows(&[t.transpose(), nn.transpose(), u.transpose()])
}

const C1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const C2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
// One-sided fourth-order stencils for the first two nodes.
const C1_EDGE: [[f64; 6]; 2] = [
    [-25.0, 48.0, -36.0, 16.0, -3.0, 0.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0, 0.0],
];
const C2_EDGE: [[f64; 6]; 2] = [
    [45.0, -154.0, 214.0, -156.0, 61.0, -10.0],
    [10.0, -15.0, -4.0, 14.0, -6.0, 1.0],
];

/// Fourth-order differences of node samples `j = 0..=n`. `order` is 1 or 2.
fn diff(p: &[V3], closed: bool, h: f64, order: u32) -> Vec<V3> {
    let n = p.len() - 1;
    let (centred, edge, scale, sign) = match order {
        1 => (&C1, &C1_EDGE, 1.0 / (12.0 * h), -1.0),
        _ => (&C2, &C2_EDGE, 1.0 / (12.0 * h * h), 1.0),
    };
    let mut out = vec![V3::zeros(); n + 1];
    for (j, o) in out.iter_mut().enumerate() {
        let interior = j >= 2 && j + 2 <= n;
        if closed || interior {
            let mut acc = V3::zeros();
            for (k, c) in centred.iter().enumerate() {
                let raw = j as isize + k as isize - 2;
                let idx = if closed { raw.rem_euclid(n as isize) } else { raw } as usize;
                acc += *c * p[idx];
            }
            *o = acc * scale;
        } else if j < 2 {
            let mut acc = V3::zeros();
            for (k, c) in edge[j].iter().enumerate() {
                acc += *c * p[k];
            }
            *o = acc * scale;
        } else {
            // Mirror image of the left edge; odd derivatives flip sign.
            let m = n - j;
            let mut acc = V3::zeros();
            for (k, c) in edge[m].iter().enumerate() {
                acc += *c * p[n - k];
            }
            *o = acc * (scale * sign);
        }
    }
    out
}

fn diff1(p: &[V3], closed: bool, h: f64) -> Vec<V3> {
    diff(p, closed, h, 1)
}

fn diff2(p: &[V3], closed: bool, h: f64) -> Vec<V3> {
    diff(p, closed, h, 2)
}

// ---------------------------------------------------------------------------
// Stages

/// Per-node values and derivatives of the stage-3 curve, plus `|γ³′| − 1`
/// computed without cancellation.
struct StageNode {
    g1: V3,
    g2: V3,
    g3: [V3; 3],
    speed_defect: f64,
}

fn stage_node(t: f64, h: f64, w: [f64; 3], v: f64) -> StageNode {
    let (s, c) = t.sin_cos();
    let er = V3::new(c, s, 0.0);
    let ep = V3::new(-s, c, 0.0);
    let ez = V3::z();
    let [w0, w1, w2] = w;
    let (u0, u1, u2) = (-0.5 * w0 * w0, -w0 * w1, -w1 * w1 - w0 * w2);
    let (v1, v2) = (0.5 * (w0 * w0 - w1 * w1), w0 * w1 - w1 * w2);
    let h2 = h * h;
    let lift = h * h.sqrt() * h;
    let (a0, a1, a2) = (1.0 + h2 * u0, h2 * u1, h2 * u2);
    let (b0, b1, b2) = (h2 * v, h2 * v1, h2 * v2);
    let (c0, c1, c2) = (h * w0, h * w1, h * w2);

    let g1 = a0 * er + b0 * ep + c0 * ez;
    let g2 = g1 + lift * ez;
    let g2p = (a1 - b0) * er + (a0 + b1) * ep + c1 * ez;
    let g2pp = (a2 - 2.0 * b1 - a0) * er + (2.0 * a1 + b2 - b0) * ep + c2 * ez;

    let h4 = h2 * h2;
    // |γ²|² − 1 and |γ²′|² − 1 in closed form.
    let r2m1 = h4 * (u0 * u0 + v * v) + 2.0 * h * lift * w0 + h4 * h;
    let q2m1 = h4 * ((u0 + v1).powi(2) + (u1 - v).powi(2));
    let r = (1.0 + r2m1).sqrt();
    let rp = g2.dot(&g2p) / r;
    let rpp = (g2p.norm_squared() + g2.dot(&g2pp) - rp * rp) / r;
    let g3 = g2 / r;
    let g3p = g2p / r - g2 * (rp / (r * r));
    let g3pp = g2pp / r - g2p * (2.0 * rp / (r * r)) - g2 * (rpp / (r * r) - 2.0 * rp * rp / (r * r * r));
    let s2m1 = (q2m1 - rp * rp - r2m1) / (r * r);
    StageNode {
        g1,
        g2,
        g3: [g3, g3p, g3pp],
        speed_defect: s2m1 / (1.0 + (1.0 + s2m1).sqrt()),
    }
}

/// Stage-3 arclength `S(t) = t + ε(t)`, with `ε` known at the nodes together
/// with its derivative `|γ³′| − 1`.
struct Arclength<'a> {
    excess: &'a [f64],
    speed: &'a [f64],
    hg: f64,
}

impl Arclength<'_> {
    /// `(ε(t), ε′(t))` by cubic Hermite interpolation, extended periodically
    /// in the derivative.
    fn eval(&self, t: f64) -> (f64, f64) {
        let n = self.speed.len();
        let total = self.excess[n];
        let turns = (t / TAU).floor();
        let local = t - turns * TAU;
        let k = ((local / self.hg).floor() as usize).min(n - 1);
        let x = local / self.hg - k as f64;
        let (y0, y1) = (self.excess[k], self.excess[k + 1]);
        let (m0, m1) = (self.speed[k] * self.hg, self.speed[(k + 1) % n] * self.hg);
        let (x2, x3) = (x * x, x * x * x);
        let y = (2.0 * x3 - 3.0 * x2 + 1.0) * y0
            + (x3 - 2.0 * x2 + x) * m0
            + (-2.0 * x3 + 3.0 * x2) * y1
            + (x3 - x2) * m1;
        let dy = (6.0 * x2 - 6.0 * x) * (y0 - y1) + (3.0 * x2 - 4.0 * x + 1.0) * m0 + (3.0 * x2 - 2.0 * x) * m1;
        (y + turns * total, dy / self.hg)
    }

    /// `τ` with `S(τ) = s`, by Newton from `s − ε(s)`.
    fn invert(&self, s: f64) -> f64 {
        let mut tau = s - self.eval(s).0;
        for _ in 0..20 {
            let (y, dy) = self.eval(tau);
            let step = (tau + y - s) / (1.0 + dy);
            tau -= step;
            if step.abs() <= 1e-15 * (1.0 + s) {
                break;
            }
        }
        tau
    }
}

/// Quintic Hermite interpolant of the stage-3 curve and its derivative at
/// any `t`, from values and first two derivatives at the bracketing nodes.
fn hermite5(nodes: &[StageNode], t: f64, hg: f64) -> (V3, V3) {
    let n = nodes.len();
    let local = t.rem_euclid(TAU);
    let k = ((local / hg).floor() as usize).min(n - 1);
    let x = local / hg - k as f64;
    let [p0, d0, a0] = nodes[k].g3;
    let [p1, d1, a1] = nodes[(k + 1) % n].g3;
    let (x2, x3, x4, x5) = (x * x, x.powi(3), x.powi(4), x.powi(5));
    let h0 = 1.0 - 10.0 * x3 + 15.0 * x4 - 6.0 * x5;
    let h1 = x - 6.0 * x3 + 8.0 * x4 - 3.0 * x5;
    let h2 = 0.5 * x2 - 1.5 * x3 + 1.5 * x4 - 0.5 * x5;
    let h3 = 0.5 * x3 - x4 + 0.5 * x5;
    let h4 = -4.0 * x3 + 7.0 * x4 - 3.0 * x5;
    let h5 = 10.0 * x3 - 15.0 * x4 + 6.0 * x5;
    let g0 = -30.0 * x2 + 60.0 * x3 - 30.0 * x4;
    let g1 = 1.0 - 18.0 * x2 + 32.0 * x3 - 15.0 * x4;
    let g2 = x - 4.5 * x2 + 6.0 * x3 - 2.5 * x4;
    let g3 = 1.5 * x2 - 4.0 * x3 + 2.5 * x4;
    let g4 = -12.0 * x2 + 28.0 * x3 - 15.0 * x4;
    let (m0, m1) = (d0 * hg, d1 * hg);
    let (b0, b1) = (a0 * (hg * hg), a1 * (hg * hg));
    let p = p0 * h0 + m0 * h1 + b0 * h2 + b1 * h3 + m1 * h4 + p1 * h5;
    let d = (p0 * g0 + m0 * g1 + b0 * g2 + b1 * g3 + m1 * g4 - p1 * g0) / hg;
    (p, d)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StageDiagnostics {
    pub h: f64,
    pub n: usize,
    /// `min γ⁴ · e_z`.
    pub min_gz: f64,
    /// `h + ½ h^{5/2}`.
    pub gz_floor: f64,
    pub gap_position: f64,
    pub gap_tangent: f64,
    /// Stage-3 length minus `2π`.
    pub length_defect: f64,
    pub max_norm_defect3: f64,
    /// `max ||γ⁴′| − 1|` over the constructed tangents.
    pub max_speed_defect4: f64,
    /// The same from differences of the stage-4 points.
    pub max_speed_defect4_fd: f64,
}

#[derive(Debug, Clone)]
pub struct Stages {
    pub stage1: Curve3,
    pub stage2: Curve3,
    pub stage3: Curve3,
    pub stage4: Curve3,
    pub diagnostics: StageDiagnostics,
}

/// Four-stage construction at scale `h`.
///
/// Stage 4 samples `γ³(τ(s_j))` with `τ` the inverse of the stage-3 arclength,
/// resampled by quintic Hermite interpolation from the closed-form
/// derivatives of stage 3.
pub fn build_stages(tr: &AdmissibleTriple, h: f64) -> Result<Stages, RecoveryError> {
    if !(h > 0.0 && h <= 0.5) {
        return Err(RecoveryError::InvalidInput(format!("h = {h} outside (0, 0.5]")));
    }
    let grid = tr.w.grid();
    let n = grid.n();
    let hg = grid.spacing();
    let w1 = tr.w.deriv(1)?;
    let w2 = tr.w.deriv(2)?;
    let nodes: Vec<StageNode> = (0..n)
        .map(|j| stage_node(grid.node(j), h, [tr.w[j], w1[j], w2[j]], tr.v[j]))
        .collect();

    let closed = |f: &dyn Fn(&StageNode) -> V3| {
        let mut p: Vec<V3> = nodes.iter().map(f).collect();
        p.push(p[0]);
        p
    };
    let stage1 = Curve3 { h, closed: true, points: closed(&|s| s.g1), tangents: None };
    let stage2 = Curve3 { h, closed: true, points: closed(&|s| s.g2), tangents: None };
    let stage3 = Curve3 {
        h,
        closed: true,
        points: closed(&|s| s.g3[0]),
        tangents: Some(closed(&|s| s.g3[1])),
    };

    let e: Vec<f64> = nodes.iter().map(|s| s.speed_defect).collect();
    let excess = cumulative_periodic(&e, hg);
    let arc = Arclength { excess: &excess, speed: &e, hg };
    let mut pts = Vec::with_capacity(n + 1);
    let mut tan = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let tau = arc.invert(hg * j as f64);
        let (p, d) = hermite5(&nodes, tau, hg);
        let p = p.normalize();
        pts.push(p);
        tan.push((d - p * d.dot(&p)).normalize());
    }
    let stage4 = Curve3 { h, closed: false, points: pts, tangents: Some(tan) };

    let (gap_position, gap_tangent) = stage4.endpoint_gaps();
    let diagnostics = StageDiagnostics {
        h,
        n,
        min_gz: stage4.min_height(),
        gz_floor: h + 0.5 * h * h * h.sqrt(),
        gap_position,
        gap_tangent,
        length_defect: excess[n],
        max_norm_defect3: stage3.max_radius_defect(),
        max_speed_defect4: stage4
            .tangents
            .as_ref()
            .unwrap()
            .iter()
            .map(|t| (t.norm() - 1.0).abs())
            .fold(0.0, f64::max),
        max_speed_defect4_fd: stage4.max_speed_defect_fd(),
    };
    Ok(Stages { stage1, stage2, stage3, stage4, diagnostics })
}

// ---------------------------------------------------------------------------
// Curvature and the frame ODE

/// Geodesic curvature `κ = N · γ″` at every node, `N = T ∧ γ`.
pub fn curvature(curve: &Curve3) -> Vec<f64> {
    let acc = diff2(&curve.points, curve.closed, curve.spacing());
    let tan = curve.tangent_samples();
    (0..curve.points.len())
        .map(|j| {
            let f = frame_from(tan[j], curve.points[j].normalize());
            f.row(1).transpose().dot(&acc[j])
        })
        .collect()
}

/// Result of integrating the frame ODE.
#[derive(Debug, Clone)]
pub struct FrameRun {
    pub frames: Vec<Frame>,
    /// `max ‖F Fᵀ − I‖` after re-orthonormalization.
    pub max_drift: f64,
    /// The same before each correction.
    pub max_step_defect: f64,
    /// `U` rows as points, `T` rows as tangents.
    pub curve: Curve3,
}

/// Integrates `F′ = A(κ + ψ) F` over `[0, 2π]` from `f0`, one RK4 step per
/// cell. `rate` holds `κ + ψ` at the `n + 1` nodes; cell midpoints are cubic
/// interpolants (periodic when `closed`).
pub fn frame_integrate(rate: &[f64], f0: &Frame, closed: bool) -> FrameRun {
    let mid = midpoints(rate, closed);
    integrate_frames(rate, &mid, f0)
}

fn midpoints(r: &[f64], closed: bool) -> Vec<f64> {
    let n = r.len() - 1;
    let at = |j: isize| -> f64 {
        if closed {
            r[j.rem_euclid(n as isize) as usize]
        } else {
            r[j as usize]
        }
    };
    (0..n as isize)
        .map(|j| {
            if closed || (j >= 1 && j + 2 <= n as isize) {
                (-at(j - 1) + 9.0 * at(j) + 9.0 * at(j + 1) - at(j + 2)) / 16.0
            } else if j == 0 {
                (5.0 * at(0) + 15.0 * at(1) - 5.0 * at(2) + at(3)) / 16.0
            } else {
                (5.0 * at(j + 1) + 15.0 * at(j) - 5.0 * at(j - 1) + at(j - 2)) / 16.0
            }
        })
        .collect()
}

fn generator(k: f64) -> Frame {
    Frame::new(0.0, k, -1.0, -k, 0.0, 0.0, 1.0, 0.0, 0.0)
}

fn integrate_frames(node: &[f64], mid: &[f64], f0: &Frame) -> FrameRun {
    let n = node.len() - 1;
    let dt = TAU / n as f64;
    let mut frames = Vec::with_capacity(n + 1);
    let mut f = *f0;
    let mut max_step: f64 = 0.0;
    frames.push(f);
    for j in 0..n {
        let (a0, am, a1) = (generator(node[j]), generator(mid[j]), generator(node[j + 1]));
        let k1 = a0 * f;
        let k2 = am * (f + k1 * (0.5 * dt));
        let k3 = am * (f + k2 * (0.5 * dt));
        let k4 = a1 * (f + k3 * dt);
        f += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
        max_step = max_step.max(orthonormality_defect(&f));
        f = reorthonormalize(&f);
        frames.push(f);
    }
    let max_drift = frames.iter().map(orthonormality_defect).fold(0.0, f64::max);
    let curve = Curve3 {
        h: 0.0,
        closed: false,
        points: frames.iter().map(|f| f.row(2).transpose()).collect(),
        tangents: Some(frames.iter().map(|f| f.row(0).transpose()).collect()),
    };
    FrameRun { frames, max_drift, max_step_defect: max_step, curve }
}

/// Gram–Schmidt from `U`, then `T`, with `N = T ∧ U`.
fn reorthonormalize(f: &Frame) -> Frame {
    frame_from(f.row(0).transpose(), f.row(2).transpose().normalize())
}

pub fn orthonormality_defect(f: &Frame) -> f64 {
    (f * f.transpose() - Frame::identity()).norm()
}

// ---------------------------------------------------------------------------
// Closure

/// Three raised-cosine bumps `max(0, cos(t − c_i))²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiBar {
    pub centers: [f64; 3],
}

impl Default for PsiBar {
    fn default() -> Self {
        Self { centers: [0.5 * PI, PI, 1.5 * PI] }
    }
}

impl PsiBar {
    pub fn eval(&self, t: f64) -> V3 {
        V3::from_fn(|i, _| {
            let c = (t - self.centers[i]).cos();
            if c > 0.0 {
                c * c
            } else {
                0.0
            }
        })
    }

    /// Bumps with random centers in `[π/2, 3π/2]`, so supports stay inside
    /// `(0, 2π)`.
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut c = [0.0; 3];
        for x in &mut c {
            *x = rng.random_range(0.5 * PI..=1.5 * PI);
        }
        c.sort_by(f64::total_cmp);
        Self { centers: c }
    }
}

/// Closure map for a fixed open curve and bump triple.
///
/// The chart is based at the curve's end `(x, T)` with `N = T ∧ x`:
/// `ζ(x̄, T̄) = (T·x̄, N·x̄, N·T̄)`.
#[derive(Debug, Clone)]
pub struct ClosureProblem {
    pub h: f64,
    kappa: Vec<f64>,
    kappa_mid: Vec<f64>,
    pub psibar: PsiBar,
    start: Frame,
    base: Frame,
    target: V3,
}

impl ClosureProblem {
    pub fn new(curve: &Curve3, psibar: PsiBar) -> Result<Self, RecoveryError> {
        let n = curve.n();
        if n < 8 {
            return Err(RecoveryError::InvalidInput(format!("{n} cells is too few")));
        }
        let kappa = curvature(curve);
        let kappa_mid = midpoints(&kappa, curve.closed);
        let start = curve.frame_at(0);
        let base = curve.frame_at(n);
        let mut p = Self {
            h: curve.h,
            kappa,
            kappa_mid,
            psibar,
            start,
            base,
            target: V3::zeros(),
        };
        p.target = p.chart(&start)?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.kappa.len() - 1
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    fn chart(&self, f: &Frame) -> Result<V3, RecoveryError> {
        let (t, nn, x) = (self.base.row(0), self.base.row(1), self.base.row(2));
        let (tb, xb) = (f.row(0), f.row(2));
        if x.dot(&xb) <= 0.5 || t.dot(&tb) <= 0.0 {
            return Err(RecoveryError::ChartDegenerate);
        }
        Ok(V3::new(t.dot(&xb), nn.dot(&xb), nn.dot(&tb)))
    }

    /// Frame trajectory for `κ + a · ψ̄`.
    pub fn run(&self, a: &V3) -> FrameRun {
        let n = self.n();
        let dt = TAU / n as f64;
        let node: Vec<f64> = (0..=n)
            .map(|j| self.kappa[j] + a.dot(&self.psibar.eval(j as f64 * dt)))
            .collect();
        let mid: Vec<f64> = (0..n)
            .map(|j| self.kappa_mid[j] + a.dot(&self.psibar.eval((j as f64 + 0.5) * dt)))
            .collect();
        let mut r = integrate_frames(&node, &mid, &self.start);
        r.curve.h = self.h;
        r
    }

    fn mismatch(&self, run: &FrameRun) -> Result<V3, RecoveryError> {
        Ok(self.chart(run.frames.last().unwrap())? - self.target)
    }

    pub fn map(&self, a: &V3) -> Result<V3, RecoveryError> {
        if a.norm() > R0 {
            return Err(RecoveryError::InvalidInput(format!("|a| = {} exceeds {R0}", a.norm())));
        }
        self.mismatch(&self.run(a))
    }

    /// First variations `∫ X(2π) ∧ U(s) ψ_i(s) ds` for `X = U, T`, pushed
    /// through the chart.
    fn jacobian_of(&self, run: &FrameRun) -> Matrix3<f64> {
        let n = self.n();
        let dt = TAU / n as f64;
        let end = run.frames[n];
        let (xe, te) = (end.row(2).transpose(), end.row(0).transpose());
        let mut dx = Matrix3::zeros();
        let mut dtan = Matrix3::zeros();
        for (j, f) in run.frames.iter().enumerate() {
            let wgt = if j == 0 || j == n { 0.5 * dt } else { dt };
            let psi = self.psibar.eval(j as f64 * dt) * wgt;
            let u = f.row(2).transpose();
            let (cx, ct) = (xe.cross(&u), te.cross(&u));
            for i in 0..3 {
                if psi[i] != 0.0 {
                    dx.set_column(i, &(dx.column(i) + cx * psi[i]));
                    dtan.set_column(i, &(dtan.column(i) + ct * psi[i]));
                }
            }
        }
        let (t, nn) = (self.base.row(0), self.base.row(1));
        Matrix3::from_rows(&[t * dx, nn * dx, nn * dtan])
    }

    pub fn jacobian(&self, a: &V3) -> Matrix3<f64> {
        self.jacobian_of(&self.run(a))
    }

    /// Central differences of [`Self::map`].
    pub fn jacobian_fd(&self, a: &V3, step: f64) -> Result<Matrix3<f64>, RecoveryError> {
        let mut j = Matrix3::zeros();
        for i in 0..3 {
            let mut e = V3::zeros();
            e[i] = step;
            let col = (self.map(&(a + e))? - self.map(&(a - e))?) / (2.0 * step);
            j.set_column(i, &col);
        }
        Ok(j)
    }
}

/// `ζ(γ̄[a·ψ̄](2π), γ̄′[a·ψ̄](2π)) − ζ(γ̄(0), γ̄′(0))`.
pub fn closure_map(curve: &Curve3, a: &V3, psibar: &PsiBar) -> Result<V3, RecoveryError> {
    ClosureProblem::new(curve, *psibar)?.map(a)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct JacobianReport {
    #[serde(skip)]
    pub jacobian: Matrix3<f64>,
    pub det: f64,
    /// `σ_max / σ_min`.
    pub condition: f64,
    /// `‖J_analytic − J_fd‖ / ‖J_analytic‖` with step `1e-6`.
    pub fd_rel_err: f64,
    /// `|det| ≤ NEAR_SINGULAR_RATIO · h · σ_max²`: the scaling that holds
    /// for lifted fields fails.
    pub near_singular: bool,
}

/// Ratio below which `|det| / (h σ_max²)` counts as near-singular.
pub const NEAR_SINGULAR_RATIO: f64 = 0.25;

/// Closure Jacobian at `a = 0`.
pub fn closure_jacobian(curve: &Curve3, psibar: &PsiBar) -> Result<JacobianReport, RecoveryError> {
    let p = ClosureProblem::new(curve, *psibar)?;
    jacobian_report(&p)
}

fn jacobian_report(p: &ClosureProblem) -> Result<JacobianReport, RecoveryError> {
    let rep = jacobian_summary(p)?;
    if rep.det.abs() < SINGULAR_DET {
        return Err(RecoveryError::SingularJacobian { det: rep.det });
    }
    Ok(rep)
}

fn jacobian_summary(p: &ClosureProblem) -> Result<JacobianReport, RecoveryError> {
    let zero = V3::zeros();
    let jac = p.jacobian(&zero);
    let det = jac.determinant();
    let sv = jac.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let fd = p.jacobian_fd(&zero, 1e-6)?;
    let h = if p.h > 0.0 { p.h } else { 1.0 };
    Ok(JacobianReport {
        jacobian: jac,
        det,
        condition: smax / smin,
        fd_rel_err: (jac - fd).norm() / jac.norm(),
        near_singular: det.abs() <= NEAR_SINGULAR_RATIO * h * smax * smax,
    })
}

/// Empirical Kantorovich constants at `a = 0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Certificate {
    /// `|Df(0)⁻¹ f(0)|`.
    pub alpha: f64,
    /// `‖Df(0)⁻¹‖₂`.
    pub beta: f64,
    /// `‖Df(a) − Df(0)‖₂ / |a|` at the solution.
    pub k: f64,
    pub two_alpha_beta_k: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct Closure {
    pub curve: Curve3,
    pub a: V3,
    pub psibar: PsiBar,
    pub iterations: usize,
    pub residual: f64,
    /// `|f(0)|`.
    pub initial_mismatch: f64,
    pub jacobian: JacobianReport,
    pub certificate: Certificate,
    pub max_drift: f64,
}

/// Damped Newton on the closure map. Falls back to random bump centers when
/// the default bumps give a singular Jacobian.
pub fn newton_close(curve: &Curve3, psibar: &PsiBar) -> Result<Closure, RecoveryError> {
    let p = ClosureProblem::new(curve, *psibar)?;
    let run = p.run(&V3::zeros());
    if p.mismatch(&run)?.norm() <= CLOSE_TOL {
        return already_closed(&p, run);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut psi = *psibar;
    let mut last = None;
    for _ in 0..8 {
        let p = ClosureProblem::new(curve, psi)?;
        match jacobian_report(&p) {
            Ok(rep) => return close_with(&p, rep),
            Err(e @ RecoveryError::SingularJacobian { .. }) => {
                last = Some(e);
                psi = PsiBar::random(&mut rng);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

fn already_closed(p: &ClosureProblem, run: FrameRun) -> Result<Closure, RecoveryError> {
    let jacobian = jacobian_summary(p)?;
    let residual = p.mismatch(&run)?.norm();
    let beta = 1.0 / jacobian.jacobian.singular_values().min();
    let mut curve = run.curve;
    curve.closed = true;
    Ok(Closure {
        curve,
        a: V3::zeros(),
        psibar: p.psibar,
        iterations: 0,
        residual,
        initial_mismatch: residual,
        jacobian,
        certificate: Certificate { alpha: 0.0, beta, k: 0.0, two_alpha_beta_k: 0.0, holds: true },
        max_drift: run.max_drift,
    })
}

fn close_with(p: &ClosureProblem, jrep: JacobianReport) -> Result<Closure, RecoveryError> {
    let mut a = V3::zeros();
    let mut run = p.run(&a);
    let mut f = p.mismatch(&run)?;
    let f0 = f;
    let j0 = jrep.jacobian;
    let j0_inv = j0.try_inverse().ok_or(RecoveryError::SingularJacobian { det: jrep.det })?;
    let mut iterations = 0;
    let mut max_drift = run.max_drift;
    while f.norm() > CLOSE_TOL {
        if iterations == 50 {
            return Err(RecoveryError::NewtonDiverged { iterations, residual: f.norm() });
        }
        let jac = p.jacobian_of(&run);
        let step = jac
            .try_inverse()
            .ok_or(RecoveryError::SingularJacobian { det: jac.determinant() })?
            * f;
        let mut t = 1.0;
        loop {
            let trial = a - step * t;
            if trial.norm() <= R0 {
                let r = p.run(&trial);
                if let Ok(ft) = p.mismatch(&r) {
                    if ft.norm() < f.norm() {
                        a = trial;
                        f = ft;
                        max_drift = max_drift.max(r.max_drift);
                        run = r;
                        break;
                    }
                }
            }
            t *= 0.5;
            if t < 1e-6 {
                return Err(RecoveryError::NewtonDiverged { iterations, residual: f.norm() });
            }
        }
        iterations += 1;
    }
    let alpha = (j0_inv * f0).norm();
    let beta = 1.0 / j0.singular_values().min();
    let k = if a.norm() > 0.0 {
        let diff = p.jacobian_of(&run) - j0;
        diff.singular_values().max() / a.norm()
    } else {
        0.0
    };
    let tabk = 2.0 * alpha * beta * k;
    let mut curve = run.curve;
    curve.closed = true;
    Ok(Closure {
        curve,
        a,
        psibar: p.psibar,
        iterations,
        residual: f.norm(),
        initial_mismatch: f0.norm(),
        jacobian: jrep,
        certificate: Certificate { alpha, beta, k, two_alpha_beta_k: tabk, holds: tabk < 1.0 && 2.0 * alpha < R0 },
        max_drift,
    })
}

// ---------------------------------------------------------------------------
// Energies and projections

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BendingReport {
    /// `∫ |γ″ + γ|²`.
    pub energy: f64,
    pub radius_defect: f64,
    pub speed_defect: f64,
    /// Set when either defect exceeds `1e-6`.
    pub flagged: bool,
}

pub fn bending_energy(curve: &Curve3) -> BendingReport {
    let n = curve.n();
    let dt = curve.spacing();
    let acc = diff2(&curve.points, curve.closed, dt);
    let integrand: Vec<f64> = (0..=n).map(|j| (acc[j] + curve.points[j]).norm_squared()).collect();
    let energy = trapezoid(&integrand, dt, curve.closed);
    let radius_defect = curve.max_radius_defect();
    let speed_defect = curve.max_speed_defect_fd();
    BendingReport {
        energy,
        radius_defect,
        speed_defect,
        flagged: radius_defect > 1e-6 || speed_defect > 1e-6,
    }
}

fn trapezoid(f: &[f64], dt: f64, periodic: bool) -> f64 {
    let n = f.len() - 1;
    let inner: f64 = f[1..n].iter().sum();
    if periodic {
        dt * (inner + f[0])
    } else {
        dt * (inner + 0.5 * (f[0] + f[n]))
    }
}

/// `u_h = γ·e_r − 1`, `v_h = γ·e_φ`, `w_h = γ·e_z` at every node.
#[derive(Debug, Clone)]
pub struct Uvw {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

pub fn extract_uvw(curve: &Curve3) -> Uvw {
    let mut out = Uvw { u: vec![], v: vec![], w: vec![] };
    for (j, p) in curve.points.iter().enumerate() {
        let (s, c) = curve.node(j).sin_cos();
        out.u.push(c * p.x + s * p.y - 1.0);
        out.v.push(-s * p.x + c * p.y);
        out.w.push(p.z);
    }
    out
}

/// The three squared terms `∫(2v′ − u″)²`, `∫(2u′ + v″)²`, `∫(w″ + w)²` of a
/// closed curve, whose sum is its bending energy.
pub fn energy_split(curve: &Curve3) -> [f64; 3] {
    let n = curve.n();
    let dt = curve.spacing();
    let uvw = extract_uvw(curve);
    let field = |x: &[f64]| -> Vec<V3> { x.iter().map(|&v| V3::new(v, 0.0, 0.0)).collect() };
    let d = |x: &[f64], k: u32| -> Vec<f64> {
        diff(&field(x), curve.closed, dt, k).iter().map(|v| v.x).collect()
    };
    let (u1, u2, v1, v2, w2) = (d(&uvw.u, 1), d(&uvw.u, 2), d(&uvw.v, 1), d(&uvw.v, 2), d(&uvw.w, 2));
    let term = |f: &dyn Fn(usize) -> f64| {
        let vals: Vec<f64> = (0..=n).map(|j| f(j).powi(2)).collect();
        trapezoid(&vals, dt, curve.closed)
    };
    [
        term(&|j| 2.0 * v1[j] - u2[j]),
        term(&|j| 2.0 * u1[j] + v2[j]),
        term(&|j| w2[j] + uvw.w[j]),
    ]
}

// ---------------------------------------------------------------------------
// Convergence table

#[derive(Debug, Clone, Serialize)]
pub struct GammaRow {
    pub h: f64,
    pub n: usize,
    pub e_scaled: f64,
    pub e0: f64,
    pub rel_err: f64,
    pub gap_pre_close: f64,
    pub tangent_gap_pre_close: f64,
    pub a_norm: f64,
    pub det_jac: f64,
    pub jac_condition: f64,
    pub jac_fd_rel_err: f64,
    pub min_gz: f64,
    /// `max ||T| − 1|` over the integrated tangents.
    pub speed_defect: f64,
    /// The same from differences of the points; larger next to kinks of `w‴`.
    pub speed_defect_fd: f64,
    pub radius_defect: f64,
    pub frame_drift: f64,
    pub closed_gap: f64,
    pub closed_tangent_gap: f64,
    pub newton_iterations: usize,
    pub certificate: Certificate,
    /// Split terms divided by `h²`.
    pub split_scaled: [f64; 3],
    /// `max |h⁻¹ w_h − w − h^{3/2}|`.
    pub w_profile_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaSummary {
    pub gap_slope: Option<f64>,
    pub a_slope: Option<f64>,
    pub det_slope: Option<f64>,
    pub rel_err_slope: Option<f64>,
    /// Slope of `(split_u + split_v) / E0` against `h`.
    pub uv_exponent: Option<f64>,
    pub rel_err_decreasing: bool,
    pub min_gz_ok: bool,
    pub max_frame_drift: f64,
    pub max_jac_fd_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaTable {
    pub rows: Vec<GammaRow>,
    pub summary: GammaSummary,
}

pub const GAMMA_CSV_HEADER: &str =
    "h,n,E_scaled,E0,rel_err,gap_pre_close,a_norm,det_jac,min_gz,speed_defect";

impl GammaTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(GAMMA_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.12e},{:.12e},{:.6e},{:.6e},{:.6e},{:.6e},{:.12e},{:.6e}\n",
                r.h, r.n, r.e_scaled, r.e0, r.rel_err, r.gap_pre_close, r.a_norm, r.det_jac, r.min_gz,
                r.speed_defect
            ));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("plain data")
    }
}

/// Stage construction, closure and energy comparison for each `h`.
/// Rows are independent and run in parallel; output order follows `h_list`.
pub fn gamma_check(w: &PeriodicField, h_list: &[f64]) -> Result<GammaTable, RecoveryError> {
    let triple = triple_from_w(w, 0.0)?;
    let e0 = energy(w);
    let rows = h_list
        .par_iter()
        .map(|&h| gamma_row(&triple, h, e0))
        .collect::<Result<Vec<_>, _>>()?;
    let col = |f: fn(&GammaRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let hs = col(|r| r.h);
    let summary = GammaSummary {
        gap_slope: loglog_slope(&hs, &col(|r| r.gap_pre_close)),
        a_slope: loglog_slope(&hs, &col(|r| r.a_norm)),
        det_slope: loglog_slope(&hs, &col(|r| r.det_jac.abs())),
        rel_err_slope: loglog_slope(&hs, &col(|r| r.rel_err)),
        uv_exponent: loglog_slope(&hs, &col(|r| (r.split_scaled[0] + r.split_scaled[1]) / r.e0)),
        rel_err_decreasing: strictly_decreasing_in_h(&rows),
        min_gz_ok: rows.iter().all(|r| r.min_gz >= r.h),
        max_frame_drift: col(|r| r.frame_drift).into_iter().fold(0.0, f64::max),
        max_jac_fd_rel_err: col(|r| r.jac_fd_rel_err).into_iter().fold(0.0, f64::max),
    };
    Ok(GammaTable { rows, summary })
}

/// Error shrinks as `h` shrinks, whatever order the rows are in.
fn strictly_decreasing_in_h(rows: &[GammaRow]) -> bool {
    let mut r: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.rel_err)).collect();
    r.sort_by(|a, b| b.0.total_cmp(&a.0));
    r.windows(2).all(|p| p[1].1 < p[0].1)
}

fn gamma_row(tr: &AdmissibleTriple, h: f64, e0: f64) -> Result<GammaRow, RecoveryError> {
    let st = build_stages(tr, h)?;
    let cl = newton_close(&st.stage4, &PsiBar::default())?;
    let b = bending_energy(&cl.curve);
    let split = energy_split(&cl.curve);
    let e_scaled = b.energy / (h * h);
    let uvw = extract_uvw(&cl.curve);
    let lift = h * h.sqrt();
    let n = tr.w.len();
    let w_profile_err = (0..=n)
        .map(|j| (uvw.w[j] / h - tr.w[j % n] - lift).abs())
        .fold(0.0, f64::max);
    let (closed_gap, closed_tangent_gap) = cl.curve.endpoint_gaps();
    let tangents = cl.curve.tangents.as_ref().unwrap();
    let speed_defect = tangents.iter().map(|t| (t.norm() - 1.0).abs()).fold(0.0, f64::max);
    Ok(GammaRow {
        h,
        n,
        e_scaled,
        e0,
        rel_err: (e_scaled - e0).abs() / e0,
        gap_pre_close: st.diagnostics.gap_position,
        tangent_gap_pre_close: st.diagnostics.gap_tangent,
        a_norm: cl.a.norm(),
        det_jac: cl.jacobian.det,
        jac_condition: cl.jacobian.condition,
        jac_fd_rel_err: cl.jacobian.fd_rel_err,
        min_gz: cl.curve.min_height(),
        speed_defect,
        speed_defect_fd: b.speed_defect,
        radius_defect: b.radius_defect,
        frame_drift: cl.max_drift,
        closed_gap,
        closed_tangent_gap,
        newton_iterations: cl.iterations,
        certificate: cl.certificate,
        split_scaled: split.map(|x| x / (h * h)),
        w_profile_err,
    })
}
