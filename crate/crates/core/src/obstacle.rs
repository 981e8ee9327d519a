//! Minimization of `∫(w″ + w)²` over periodic `w ≥ 1` with `∫(w² − w′²) = 0`.
//!
//! The solver runs in two phases.
//!
//! 1. Augmented Lagrangian on a coarse grid (64 to 128 nodes): the
//!    multiplier update is `λ ← λ + ρ c(w)`, and each subproblem is solved by
//!    projected gradient descent with Barzilai–Borwein steps, a monotone
//!    Armijo test and the projection `w ← max(w, 1)`.
//! 2. Primal-dual active-set Newton on the KKT system
//!    `A_λ w = μ ≥ 0` on the contact set, `A_λ w = 0` off it, `c(w) = 0`,
//!    where `A_λ = D4 + (2 + λ) D2 + (1 + λ)`. The coarse solution is
//!    polished, prolonged by 4-point interpolation, and polished again on
//!    each finer grid. If Newton fails on a level, phase 1 is rerun there.
//!
//! The input is rotated so that its maximum sits on node 0 before solving
//! and rotated back afterwards, which makes the solver exactly equivariant
//! under node shifts.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::banded::{solve_bordered, BandedMatrix};
use crate::energy::{self, el_residual_slice};
use crate::folds::{self, alpha_of, invert_g, wrap_offset, Branch, FoldShape};
use crate::grid::{apply_d2, apply_d4, dot, make_grid, PeriodicField, PeriodicGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("initial field must be finite and live on an n = {expected} grid")]
    BadInit { expected: usize },
    #[error("no convergence after {outer} outer iterations (|constraint| = {constraint:e}, stationarity = {stationarity:e})")]
    NoConvergence {
        outer: usize,
        constraint: f64,
        stationarity: f64,
    },
    #[error("no active nodes: w > 1 on the whole circle")]
    EmptyActiveSet,
    #[error("report is infeasible (|constraint| = {constraint:e}, min w = {min_w})")]
    Infeasible { constraint: f64, min_w: f64 },
    #[error("lambda = {0} is within 1e-6 of 0 or -1")]
    DegenerateLambda(f64),
    #[error("interval {interval}: nearest root of g on the {branch} branch is {distance:e} away")]
    BranchMismatch {
        interval: usize,
        branch: Branch,
        distance: f64,
    },
}

/// Solver settings. Tolerances follow the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n: usize,
    /// Initial augmented-Lagrangian penalty.
    pub rho: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Projected-gradient norm at which a subproblem counts as solved.
    pub inner_tol: f64,
    /// Feasibility tolerance on `|constraint|`.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Projected-gradient steps per subproblem.
    pub max_inner: usize,
    /// `w − 1 ≤ active_tol` marks a node as in contact.
    pub active_tol: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Also start from the bump preset in [`minimize_restarts`].
    pub include_bump: bool,
    /// Record augmented-Lagrangian values along phase 1.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            rho: 10.0,
            rho_growth: 10.0,
            rho_max: 1e8,
            inner_tol: 1e-8,
            outer_tol: 1e-8 * 2.0 * PI,
            max_outer: 30,
            max_inner: 20_000,
            active_tol: 1e-7,
            seed: 0,
            restarts: 8,
            include_bump: true,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if self.n < 16 || self.n % 2 != 0 {
            return bad("n must be even and at least 16");
        }
        for (name, v) in [
            ("rho", self.rho),
            ("rho_max", self.rho_max),
            ("inner_tol", self.inner_tol),
            ("outer_tol", self.outer_tol),
            ("active_tol", self.active_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be positive and finite"));
            }
        }
        if !(self.rho_growth >= 1.0) {
            return bad("rho_growth must be at least 1");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

/// Starting point for [`minimize`].
#[derive(Debug, Clone)]
pub enum Init {
    /// Raised-cosine bump scaled so the constraint vanishes.
    Bump,
    /// `1 + s·max(0, p)` for a random trig polynomial `p`, scaled likewise.
    Random(u64),
    Field(PeriodicField),
}

impl Init {
    pub fn label(&self) -> String {
        match self {
            Init::Bump => "bump".into(),
            Init::Random(s) => format!("random:{s}"),
            Init::Field(_) => "field".into(),
        }
    }
}

/// Smallest positive `s` with `c(1 + s q) = 0`, if any.
fn feasible_scale(q: &[f64], h: f64) -> Option<f64> {
    let ones = vec![1.0; q.len()];
    let mut d2 = vec![0.0; q.len()];
    apply_d2(q, h, &mut d2);
    let cq: Vec<f64> = q.iter().zip(&d2).map(|(a, b)| a + b).collect();
    let a = h * dot(q, &cq);
    let b = 2.0 * h * dot(&ones, &cq);
    let c = 2.0 * PI;
    let disc = b * b - 4.0 * a * c;
    if a >= 0.0 || disc < 0.0 {
        return None;
    }
    // a < 0: one positive root.
    let s = (-b - disc.sqrt()) / (2.0 * a);
    (s > 0.0).then_some(s)
}

pub fn preset_bump(grid: PeriodicGrid) -> PeriodicField {
    let z0 = 1.2;
    let q: Vec<f64> = grid
        .nodes()
        .map(|t| {
            let s = wrap_offset(t, 0.0);
            if s.abs() < z0 {
                (PI * s / (2.0 * z0)).cos().powi(2)
            } else {
                0.0
            }
        })
        .collect();
    let s = feasible_scale(&q, grid.spacing()).unwrap_or(3.5);
    PeriodicField::from_raw(grid, q.iter().map(|v| 1.0 + s * v).collect())
}

pub fn preset_random(grid: PeriodicGrid, seed: u64) -> PeriodicField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..64 {
        let degree = rng.random_range(2..=5usize);
        let coeffs: Vec<(f64, f64)> = (1..=degree)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let offset = rng.random_range(-0.5..0.5);
        let p: Vec<f64> = grid
            .nodes()
            .map(|t| {
                let v: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, (a, b))| {
                        let m = (k + 1) as f64;
                        a * (m * t).cos() + b * (m * t).sin()
                    })
                    .sum();
                (v + offset).max(0.0)
            })
            .collect();
        if p.iter().all(|&v| v == 0.0) {
            continue;
        }
        if let Some(s) = feasible_scale(&p, grid.spacing()) {
            return PeriodicField::from_raw(grid, p.iter().map(|v| 1.0 + s * v).collect());
        }
    }
    preset_bump(grid)
}

/// One accepted projected-gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceStep {
    pub n: usize,
    pub outer: usize,
    pub al_value: f64,
    pub min_w: f64,
}

/// A maximal lift-off interval `(center − half_width, center + half_width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
    /// Contact-set curvature next to this interval.
    pub k: f64,
    /// First and last lifted node.
    #[serde(skip)]
    pub first: usize,
    #[serde(skip)]
    pub last: usize,
    /// `w″` just inside the fold at the left and right ends.
    #[serde(skip)]
    pub inner_curvature: (f64, f64),
}

/// Scalar KKT diagnostics. Stationarity is scaled by `1 + ‖w⁗‖∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    /// `max |el_residual|` over lifted nodes.
    pub stationarity: f64,
    /// `min el_residual` over contact nodes (should be ≥ 0).
    pub active_min: f64,
    /// `constraint(w)`.
    pub feasibility: f64,
    /// `max(0, 1 − min w)`.
    pub obstacle_violation: f64,
    /// `Σ (w − 1)·max(0, h·el_residual)`, same scaling as stationarity.
    pub complementarity: f64,
    pub lambda_degenerate: bool,
    pub outer_iterations: usize,
}

impl Residuals {
    pub fn stationary(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.active_min >= -tol
    }
}

#[derive(Debug, Clone)]
pub struct MinimizerReport {
    pub w: PeriodicField,
    pub lambda: f64,
    pub k: f64,
    pub active: Vec<usize>,
    pub intervals: Vec<Interval>,
    pub energy: f64,
    pub residuals: Residuals,
    pub init: String,
    /// Started from `w ≡ 1` and fell back to the bump preset.
    pub escaped_degenerate_start: bool,
    pub trace: Vec<TraceStep>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    w: &'a [f64],
    lambda: f64,
    k: f64,
    intervals: &'a [Interval],
    energy: f64,
    residuals: &'a Residuals,
}

impl MinimizerReport {
    /// Builds a report for a given field, estimating `λ` by least squares on
    /// lifted nodes when not supplied.
    pub fn from_field(w: PeriodicField, lambda: Option<f64>, active_tol: f64) -> Self {
        let active = active_nodes(w.values(), active_tol);
        let lambda = lambda.unwrap_or_else(|| lambda_least_squares(&w, &active));
        let (intervals, k) = structure(&w, &active, active_tol);
        let residuals = residuals(&w, lambda, &active, 0);
        Self {
            energy: energy::energy(&w),
            w,
            lambda,
            k,
            active,
            intervals,
            residuals,
            init: "field".into(),
            escaped_degenerate_start: false,
            trace: Vec::new(),
        }
    }

    /// Report for a closed-form candidate, with its exact `λ` and `k`.
    pub fn from_candidate(c: &folds::FoldCandidate, active_tol: f64) -> Self {
        let mut r = Self::from_field(c.w.clone(), Some(c.spec.lambda), active_tol);
        r.k = c.spec.k;
        r.init = "candidate".into();
        r
    }

    pub fn alpha(&self) -> f64 {
        alpha_of(self.lambda)
    }

    pub fn branch(&self) -> Branch {
        Branch::of_lambda(self.lambda)
    }

    pub fn is_feasible(&self, outer_tol: f64) -> bool {
        self.residuals.feasibility.abs() <= outer_tol && self.w.min() >= 1.0 - 1e-10
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ReportJson {
            w: self.w.values(),
            lambda: self.lambda,
            k: self.k,
            intervals: &self.intervals,
            energy: self.energy,
            residuals: &self.residuals,
        })
        .expect("report serializes")
    }

    pub fn json_value(&self) -> impl Serialize + '_ {
        ReportJson {
            w: self.w.values(),
            lambda: self.lambda,
            k: self.k,
            intervals: &self.intervals,
            energy: self.energy,
            residuals: &self.residuals,
        }
    }

    /// `t,w` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,w\n");
        for (j, t) in self.w.grid().nodes().enumerate() {
            s.push_str(&format!("{t:.17e},{:.17e}\n", self.w[j]));
        }
        s
    }
}


pub(crate) fn active_nodes(w: &[f64], tol: f64) -> Vec<usize> {
    (0..w.len()).filter(|&j| w[j] - 1.0 <= tol).collect()
}

/// `(D2 + I) w`.
fn c_apply(w: &[f64], h: f64) -> Vec<f64> {
    let mut d2 = vec![0.0; w.len()];
    apply_d2(w, h, &mut d2);
    d2.iter().zip(w).map(|(a, b)| a + b).collect()
}

/// `(D2 + I)² w = (D4 + 2 D2 + I) w`.
fn b_apply(w: &[f64], h: f64) -> Vec<f64> {
    c_apply(&c_apply(w, h), h)
}

fn d4_max(w: &[f64], h: f64) -> f64 {
    let mut d4 = vec![0.0; w.len()];
    apply_d4(w, h, &mut d4);
    d4.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `λ` minimizing `Σ_I (Bw + λ Cw)²` over lifted nodes.
pub fn lambda_least_squares(w: &PeriodicField, active: &[usize]) -> f64 {
    let h = w.grid().spacing();
    let v = w.values();
    let bw = b_apply(v, h);
    let cw = c_apply(v, h);
    let mut mask = vec![true; v.len()];
    for &j in active {
        mask[j] = false;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..v.len() {
        if mask[j] {
            num += bw[j] * cw[j];
            den += cw[j] * cw[j];
        }
    }
    if den > 0.0 {
        -num / den
    } else {
        0.0
    }
}

fn residuals(w: &PeriodicField, lambda: f64, active: &[usize], outer: usize) -> Residuals {
    let h = w.grid().spacing();
    let v = w.values();
    let mut el = vec![0.0; v.len()];
    el_residual_slice(v, h, lambda, &mut el);
    let scale = 1.0 + d4_max(v, h);
    let mut is_active = vec![false; v.len()];
    for &j in active {
        is_active[j] = true;
    }
    let mut stat: f64 = 0.0;
    let mut amin = f64::INFINITY;
    let mut comp = 0.0;
    for j in 0..v.len() {
        if is_active[j] {
            amin = amin.min(el[j] / scale);
        } else {
            stat = stat.max(el[j].abs() / scale);
        }
        comp += (v[j] - 1.0) * (h * el[j] / scale).max(0.0);
    }
    Residuals {
        stationarity: stat,
        active_min: if amin.is_finite() { amin } else { 0.0 },
        feasibility: energy::constraint(w),
        obstacle_violation: (1.0 - w.min()).max(0.0),
        complementarity: comp,
        lambda_degenerate: lambda.abs() < 1e-6 || (lambda + 1.0).abs() < 1e-6,
        outer_iterations: outer,
    }
}

/// Distance `d` from the contact/fold boundary to the first lifted node and
/// the one-sided `w″` there, from `w − 1 ≈ Aσ² + Bσ³` through the first
/// three lifted values.
fn endpoint_fit(y: [f64; 3], h: f64) -> (f64, f64) {
    let ab = |d: f64| {
        let (s0, s1) = (d, d + h);
        let det = s0 * s0 * s1 * s1 * h;
        let a = (y[0] * s1.powi(3) - y[1] * s0.powi(3)) / det;
        let b = (s0 * s0 * y[1] - s1 * s1 * y[0]) / det;
        (a, b)
    };
    let r = |d: f64| {
        let (a, b) = ab(d);
        let s2 = d + 2.0 * h;
        a * s2 * s2 + b * s2.powi(3) - y[2]
    };
    let m = 200;
    let ds: Vec<f64> = (1..=m).map(|i| 2.0 * h * i as f64 / m as f64).collect();
    let rs: Vec<f64> = ds.iter().map(|&d| r(d)).collect();
    let mut best: Option<f64> = None;
    for i in 0..m - 1 {
        if rs[i].is_finite() && rs[i + 1].is_finite() && rs[i].signum() != rs[i + 1].signum() {
            let d = folds::polish_root(&r, ds[i], ds[i + 1], rs[i], rs[i + 1]);
            if best.is_none_or(|b| (d - 0.5 * h).abs() < (b - 0.5 * h).abs()) {
                best = Some(d);
            }
        }
    }
    let d = best.unwrap_or_else(|| {
        let i = (0..m)
            .filter(|&i| rs[i].is_finite())
            .min_by(|&a, &b| rs[a].abs().total_cmp(&rs[b].abs()))
            .unwrap_or(m / 4);
        ds[i]
    });
    (d, 2.0 * ab(d).0)
}

/// Peak lift, relative to the largest, below which a lifted run counts as
/// contact.
pub const RIPPLE_RATIO: f64 = 1e-6;

/// Marks as contact every lifted run whose peak is below `RIPPLE_RATIO`
/// times the largest peak. The discrete contact problem leaves such ripples
/// (amplitude ~1e-7 at n = 1024) just outside fold ends.
fn absorb_ripples(v: &[f64], is_active: &mut [bool]) {
    let n = v.len();
    let Some(start) = (0..n).find(|&j| is_active[j]) else {
        return;
    };
    let mut runs = Vec::new();
    let mut k = 1;
    while k <= n {
        let j = (start + k) % n;
        if is_active[j] {
            k += 1;
            continue;
        }
        let mut len = 0;
        let mut peak: f64 = 0.0;
        while !is_active[(j + len) % n] {
            peak = peak.max(v[(j + len) % n] - 1.0);
            len += 1;
        }
        runs.push((j, len, peak));
        k += len;
    }
    let top = runs.iter().fold(0.0f64, |m, r| m.max(r.2));
    for (j, len, peak) in runs {
        if peak <= RIPPLE_RATIO * top {
            for o in 0..len {
                is_active[(j + o) % n] = true;
            }
        }
    }
}

/// Lift-off intervals and the global contact curvature.
fn structure(w: &PeriodicField, active: &[usize], _active_tol: f64) -> (Vec<Interval>, f64) {
    let n = w.len();
    let h = w.grid().spacing();
    let v = w.values();
    if active.is_empty() || active.len() == n {
        return (Vec::new(), 0.0);
    }
    let mut is_active = vec![false; n];
    for &j in active {
        is_active[j] = true;
    }
    absorb_ripples(v, &mut is_active);
    let mut d2 = vec![0.0; n];
    apply_d2(v, h, &mut d2);
    let at = |j: isize| ((j % n as isize) + n as isize) as usize % n;
    let stencil_active = |j: isize| (-2..=2).all(|o| is_active[at(j + o)]);

    let start = (0..n).find(|&j| is_active[j]).unwrap_or(0);
    let mut intervals = Vec::new();
    let mut j = 1;
    while j <= n {
        let idx = (start + j) % n;
        if is_active[idx] {
            j += 1;
            continue;
        }
        let first = idx;
        let mut len = 0;
        while !is_active[(first + len) % n] {
            len += 1;
        }
        let last = (first + len - 1) % n;
        j += len;

        let lifted = |k: usize| v[(first + k) % n] - 1.0;
        let lifted_r = |k: usize| v[(last + n - k) % n] - 1.0;
        let (dl, cl, dr, cr) = if len >= 3 {
            let (dl, cl) = endpoint_fit([lifted(0), lifted(1), lifted(2)], h);
            let (dr, cr) = endpoint_fit([lifted_r(0), lifted_r(1), lifted_r(2)], h);
            (dl, cl, dr, cr)
        } else {
            (0.5 * h, 0.0, 0.5 * h, 0.0)
        };
        let t_left = first as f64 * h - dl;
        let length = (len - 1) as f64 * h + dl + dr;
        let center = (t_left + 0.5 * length).rem_euclid(2.0 * PI);

        let fi = first as isize;
        let la = last as isize;
        let contact: Vec<f64> = [fi - 3, la + 3]
            .into_iter()
            .filter(|&c| stencil_active(c))
            .map(|c| d2[at(c)])
            .collect();
        let k = if contact.is_empty() {
            0.5 * (cl + cr)
        } else {
            contact.iter().sum::<f64>() / contact.len() as f64
        };
        intervals.push(Interval {
            center,
            half_width: 0.5 * length,
            k,
            first,
            last,
            inner_curvature: (cl, cr),
        });
    }
    let interior: Vec<f64> = (0..n)
        .filter(|&j| is_active[j] && stencil_active(j as isize))
        .map(|j| d2[j])
        .collect();
    let k = if !interior.is_empty() {
        interior.iter().sum::<f64>() / interior.len() as f64
    } else if !intervals.is_empty() {
        intervals.iter().map(|i| i.k).sum::<f64>() / intervals.len() as f64
    } else {
        0.0
    };
    (intervals, k)
}

// ---------------------------------------------------------------------------
// Phase 1: augmented Lagrangian with projected BB inner solves.

struct AlEval {
    value: f64,
    constraint: f64,
    /// `(D2 + I) w`
    cw: Vec<f64>,
}

fn al_eval(w: &[f64], h: f64, lambda: f64, rho: f64) -> AlEval {
    let cw = c_apply(w, h);
    let e = h * dot(&cw, &cw);
    let c = h * dot(w, &cw);
    AlEval {
        value: e + lambda * c + 0.5 * rho * c * c,
        constraint: c,
        cw,
    }
}

fn al_grad(ev: &AlEval, h: f64, lambda: f64, rho: f64) -> Vec<f64> {
    let ccw = c_apply(&ev.cw, h);
    let m = lambda + rho * ev.constraint;
    ccw.iter()
        .zip(&ev.cw)
        .map(|(a, b)| 2.0 * a + 2.0 * m * b)
        .collect()
}

/// Projected Barzilai–Borwein descent on one augmented-Lagrangian
/// subproblem. Returns the final projected-gradient norm.
fn pg_solve(
    w: &mut [f64],
    h: f64,
    lambda: f64,
    rho: f64,
    max_iter: usize,
    tol: f64,
    mut trace: Option<(&mut Vec<TraceStep>, usize)>,
) -> f64 {
    let n = w.len();
    let mut ev = al_eval(w, h, lambda, rho);
    let mut g = al_grad(&ev, h, lambda, rho);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = 1e-2 / gmax.max(1e-12);
    let mut trial = vec![0.0; n];
    let mut pg_norm = f64::INFINITY;
    for _ in 0..max_iter {
        pg_norm = (h * (0..n)
            .map(|j| {
                let p = w[j] - (w[j] - g[j]).max(1.0);
                p * p
            })
            .sum::<f64>())
        .sqrt();
        if pg_norm <= tol {
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            for j in 0..n {
                trial[j] = (w[j] - step * g[j]).max(1.0);
            }
            let slope: f64 = h * (0..n).map(|j| g[j] * (trial[j] - w[j])).sum::<f64>();
            if slope >= 0.0 {
                break;
            }
            let tv = al_eval(&trial, h, lambda, rho);
            if tv.value <= ev.value + 1e-4 * slope {
                accepted = Some(tv);
                break;
            }
            step *= 0.5;
        }
        let Some(tv) = accepted else { break };
        let gt = al_grad(&tv, h, lambda, rho);
        let (mut ss, mut sy) = (0.0, 0.0);
        for j in 0..n {
            let s = trial[j] - w[j];
            ss += s * s;
            sy += s * (gt[j] - g[j]);
        }
        w.copy_from_slice(&trial);
        ev = tv;
        g = gt;
        if let Some((t, outer)) = trace.as_mut() {
            t.push(TraceStep {
                n,
                outer: *outer,
                al_value: ev.value,
                min_w: w.iter().cloned().fold(f64::INFINITY, f64::min),
            });
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-30, 1e30) } else { step * 4.0 };
    }
    pg_norm
}

struct AlOutcome {
    w: Vec<f64>,
    lambda: f64,
    outer: usize,
}

fn al_phase(
    mut w: Vec<f64>,
    h: f64,
    mut lambda: f64,
    mut rho: f64,
    cfg: &SolverConfig,
    trace: &mut Option<Vec<TraceStep>>,
) -> AlOutcome {
    let mut c_prev = f64::INFINITY;
    let mut outer = 0;
    while outer < cfg.max_outer {
        let tr = trace.as_mut().map(|t| (t, outer));
        pg_solve(&mut w, h, lambda, rho, cfg.max_inner, cfg.inner_tol, tr);
        outer += 1;
        let c = energy::constraint_slice(&w, h);
        lambda += rho * c;
        if c.abs() <= cfg.outer_tol {
            break;
        }
        if c.abs() > 0.25 * c_prev {
            rho = (rho * cfg.rho_growth).min(cfg.rho_max);
        }
        c_prev = c.abs();
    }
    AlOutcome { w, lambda, outer }
}

// ---------------------------------------------------------------------------
// Phase 2: primal-dual active-set Newton.

/// Operator coefficients of `A_λ` at offsets `-4..=4`.
fn operator_coeffs(h: f64, lambda: f64) -> [f64; 9] {
    let (d4, s4) = crate::grid::d4_stencil(h);
    let (d2, s2) = crate::grid::d2_stencil(h);
    let mut a = [0.0; 9];
    for k in 0..9 {
        a[k] = d4[k] * s4;
    }
    for k in 0..5 {
        a[k + 2] += (2.0 + lambda) * d2[k] * s2;
    }
    a[4] += 1.0 + lambda;
    a
}

/// Solves `[M b; bᵀ 0][x; y] = [f; g]` with `M = A_λ` restricted to the
/// lifted nodes.
fn kkt_solve(
    order: &[usize],
    pos: &[usize],
    banded: bool,
    coeffs: &[f64; 9],
    b: &[f64],
    f: &[f64],
    g: f64,
) -> Option<(Vec<f64>, f64)> {
    let m = order.len();
    let n = pos.len();
    let neighbours = |a: usize| {
        let i = order[a];
        (0..9).filter_map(move |k| {
            let j = (i + n + k - 4) % n;
            (pos[j] != usize::MAX).then_some((pos[j], coeffs[k]))
        })
    };
    if banded {
        let mut mat = BandedMatrix::zeros(m, 4, 4);
        for a in 0..m {
            for (bi, c) in neighbours(a) {
                mat.add(a, bi, c);
            }
        }
        let lu = mat.factor().ok()?;
        solve_bordered(&lu, b, b, f, g).ok()
    } else {
        let mut mat = DMatrix::<f64>::zeros(m + 1, m + 1);
        for a in 0..m {
            for (bi, c) in neighbours(a) {
                mat[(a, bi)] += c;
            }
            mat[(a, m)] = b[a];
            mat[(m, a)] = b[a];
        }
        let mut rhs = DVector::<f64>::zeros(m + 1);
        for a in 0..m {
            rhs[a] = f[a];
        }
        rhs[m] = g;
        let x = mat.lu().solve(&rhs)?;
        Some((x.rows(0, m).iter().cloned().collect(), x[m]))
    }
}

/// Newton on `(A_λ w)_I = 0`, `c(w) = 0` with `w = 1` on the contact set.
fn newton_fixed(w: &mut [f64], lambda: &mut f64, active: &[bool], h: f64) -> bool {
    let n = w.len();
    // Order lifted nodes starting just after the longest contact run so the
    // restricted operator is banded.
    let mut best = (0usize, 0usize);
    let mut run = 0usize;
    for j in 0..2 * n {
        if active[j % n] {
            run += 1;
            if run > best.0 && run <= n {
                best = (run, j % n);
            }
        } else {
            run = 0;
        }
    }
    if best.0 == 0 || best.0 == n {
        return false;
    }
    let start = (best.1 + 1) % n;
    let order: Vec<usize> = (0..n).map(|k| (start + k) % n).filter(|&j| !active[j]).collect();
    let mut pos = vec![usize::MAX; n];
    for (a, &j) in order.iter().enumerate() {
        pos[j] = a;
    }
    let banded = best.0 >= 4;

    let merit = |w: &[f64], lambda: f64| {
        let mut r = vec![0.0; n];
        el_residual_slice(w, h, lambda, &mut r);
        let scale = 1.0 + d4_max(w, h);
        let rmax = order.iter().fold(0.0f64, |m, &j| m.max(r[j].abs())) / scale;
        let c = energy::constraint_slice(w, h).abs();
        (rmax.max(c), rmax, c, r)
    };
    let (mut phi, mut rmax, mut cabs, mut r) = merit(w, *lambda);
    let mut best_phi = phi;
    let mut stagnant = 0;
    for _ in 0..40 {
        let cw = c_apply(w, h);
        let c = h * dot(w, &cw);
        let b: Vec<f64> = order.iter().map(|&j| cw[j]).collect();
        let f: Vec<f64> = order.iter().map(|&j| -r[j]).collect();
        let coeffs = operator_coeffs(h, *lambda);
        let Some((dw, dl)) = kkt_solve(&order, &pos, banded, &coeffs, &b, &f, -c / (2.0 * h)) else {
            return false;
        };
        if !dl.is_finite() || dw.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let mut t = 1.0;
        let mut trial = w.to_vec();
        let mut accepted = false;
        for _ in 0..12 {
            for (a, &j) in order.iter().enumerate() {
                trial[j] = w[j] + t * dw[a];
            }
            let (p, pr, pc, rr) = merit(&trial, *lambda + t * dl);
            if p < phi || p <= 1e-13 {
                w.copy_from_slice(&trial);
                *lambda += t * dl;
                phi = p;
                rmax = pr;
                cabs = pc;
                r = rr;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let step = dw.iter().fold(0.0f64, |m, v| m.max(v.abs())) * t;
        if !accepted || step <= 1e-13 * (1.0 + dl.abs()) {
            break;
        }
        if phi < 0.5 * best_phi {
            best_phi = phi;
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= 3 {
                break;
            }
        }
    }
    // The residual carries rounding noise of order ε‖w‖/h⁴; once it is at
    // that floor, correct the constraint alone with the noise left out.
    for _ in 0..4 {
        if cabs <= 1e-12 {
            break;
        }
        let cw = c_apply(w, h);
        let c = h * dot(w, &cw);
        let b: Vec<f64> = order.iter().map(|&j| cw[j]).collect();
        let f = vec![0.0; order.len()];
        let coeffs = operator_coeffs(h, *lambda);
        let Some((dw, dl)) = kkt_solve(&order, &pos, banded, &coeffs, &b, &f, -c / (2.0 * h)) else {
            break;
        };
        let mut trial = w.to_vec();
        for (a, &j) in order.iter().enumerate() {
            trial[j] = w[j] + dw[a];
        }
        let (_, pr, pc, _) = merit(&trial, *lambda + dl);
        if pc >= cabs {
            break;
        }
        w.copy_from_slice(&trial);
        *lambda += dl;
        rmax = pr;
        cabs = pc;
    }
    // Rounding floors at n = 2048: relative residual ~2e-8 (growing like
    // n⁴), |c| ~1e-10.
    let floor = 1e-7 * (n as f64 / 2048.0).powi(4).max(1.0);
    rmax <= floor && cabs <= 1e-9
}

struct Kkt {
    w: Vec<f64>,
    lambda: f64,
    outer: usize,
}

fn pdas(w0: &[f64], h: f64, lambda0: Option<f64>, active_tol: f64, max_outer: usize) -> Option<Kkt> {
    let n = w0.len();
    let mut w = w0.to_vec();
    let mut active: Vec<bool> = w.iter().map(|v| v - 1.0 <= active_tol).collect();
    for j in 0..n {
        if active[j] {
            w[j] = 1.0;
        }
    }
    let mut lambda = match lambda0 {
        Some(l) => l,
        None => {
            let f = PeriodicField::from_raw(make_grid(n).ok()?, w.clone());
            let act: Vec<usize> = (0..n).filter(|&j| active[j]).collect();
            lambda_least_squares(&f, &act)
        }
    };
    // Lift-off dips below this are solve noise; it grows like n⁴.
    let dip = 1e-13 * (n as f64 / 1024.0).powi(4).max(1.0);
    let mut seen: Vec<Vec<bool>> = Vec::new();
    for outer in 1..=max_outer {
        if !newton_fixed(&mut w, &mut lambda, &active, h) {
            return None;
        }
        let mut mu = vec![0.0; n];
        el_residual_slice(&w, h, lambda, &mut mu);
        let scale = 1.0 + d4_max(&w, h);
        let next: Vec<bool> = (0..n)
            .map(|j| {
                if active[j] {
                    mu[j] > -1e-9 * scale
                } else {
                    w[j] < 1.0 - dip
                }
            })
            .collect();
        if next == active {
            return Some(Kkt { w, lambda, outer });
        }
        if seen.contains(&next) {
            return None;
        }
        seen.push(active.clone());
        for j in 0..n {
            if next[j] {
                w[j] = 1.0;
            }
        }
        active = next;
    }
    None
}

/// Fourth-order periodic interpolation to the midpoints, clamped at 1.
fn prolong(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut out = vec![0.0; 2 * n];
    for j in 0..n {
        out[2 * j] = w[j];
        let m = (-w[(j + n - 1) % n] + 9.0 * w[j] + 9.0 * w[(j + 1) % n] - w[(j + 2) % n]) / 16.0;
        out[2 * j + 1] = m.max(1.0);
    }
    out
}

fn levels(n: usize) -> Vec<usize> {
    let mut ns = vec![n];
    let mut m = n;
    while m > 128 && m % 4 == 0 {
        m /= 2;
        ns.push(m);
    }
    ns.reverse();
    ns
}

fn verified(w: &[f64], lambda: f64, cfg: &SolverConfig, outer: usize) -> Option<Residuals> {
    let f = PeriodicField::from_raw(make_grid(w.len()).ok()?, w.to_vec());
    let act = active_nodes(w, cfg.active_tol);
    let r = residuals(&f, lambda, &act, outer);
    let ok = r.stationary(STATIONARITY_TOL)
        && r.feasibility.abs() <= cfg.outer_tol
        && f.min() >= 1.0 - 1e-10;
    ok.then_some(r)
}

/// Scaled stationarity tolerance used to accept a KKT point.
pub const STATIONARITY_TOL: f64 = 1e-4;

fn solve_multilevel(
    init: &[f64],
    cfg: &SolverConfig,
    trace: &mut Option<Vec<TraceStep>>,
) -> Result<(Vec<f64>, f64, usize), SolverError> {
    let n = init.len();
    let ns = levels(n);
    let r = n / ns[0];
    let mut w: Vec<f64> = (0..ns[0]).map(|j| init[j * r]).collect();
    let mut h = 2.0 * PI / ns[0] as f64;
    let al = al_phase(w, h, 0.0, cfg.rho, cfg, trace);
    let mut outer = al.outer;
    let mut lambda = al.lambda;
    w = al.w;
    let stall = |outer: usize, w: &[f64], lambda: f64, h: f64| {
        let mut el = vec![0.0; w.len()];
        el_residual_slice(w, h, lambda, &mut el);
        SolverError::NoConvergence {
            outer,
            constraint: energy::constraint_slice(w, h),
            stationarity: el.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    };
    for (li, &m) in ns.iter().enumerate() {
        if li > 0 {
            w = prolong(&w);
            h = 2.0 * PI / m as f64;
        }
        // The active set edge moves about one node per step.
        let budget = cfg.max_outer.max(m / 64);
        let mut kkt = pdas(&w, h, Some(lambda), cfg.active_tol, budget);
        if kkt.is_none() {
            // More phase 1 on this level, then retry.
            let al = al_phase(w.clone(), h, lambda, cfg.rho_max.min(1e4), cfg, trace);
            outer += al.outer;
            kkt = pdas(&al.w, h, Some(al.lambda), cfg.active_tol, budget)
                .or_else(|| pdas(&al.w, h, None, cfg.active_tol, budget));
            if kkt.is_none() {
                return Err(stall(outer, &al.w, al.lambda, h));
            }
        }
        let k = kkt.unwrap();
        outer += k.outer;
        w = k.w;
        lambda = k.lambda;
    }
    Ok((w, lambda, outer))
}

/// Runs the solver from one starting point.
pub fn minimize(cfg: &SolverConfig, init: &Init) -> Result<MinimizerReport, SolverError> {
    cfg.validate()?;
    let grid = make_grid(cfg.n).map_err(|e| SolverError::InvalidConfig(e.to_string()))?;
    let mut w0 = match init {
        Init::Bump => preset_bump(grid),
        Init::Random(seed) => preset_random(grid, *seed),
        Init::Field(f) => {
            if f.len() != cfg.n || f.values().iter().any(|v| !v.is_finite()) {
                return Err(SolverError::BadInit { expected: cfg.n });
            }
            f.clone()
        }
    };
    // From w ≡ 1 every subproblem is stationary: the gradient
    // 2 + 2(λ + ρc) is constant, and a constant lift keeps c > 0.
    let mut escaped = false;
    if w0.max() - 1.0 <= cfg.active_tol {
        escaped = true;
        w0 = preset_bump(grid);
    }
    let m0 = w0
        .values()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
        .0;
    let canon = w0.shift(-(m0 as isize));
    let h = grid.spacing();
    let mut trace = cfg.record_trace.then(Vec::new);

    let direct = match init {
        Init::Field(_) if !escaped => pdas(canon.values(), h, None, cfg.active_tol, cfg.max_outer.max(cfg.n / 64))
            .and_then(|k| verified(&k.w, k.lambda, cfg, k.outer).map(|_| (k.w, k.lambda, k.outer))),
        _ => None,
    };
    let (w, lambda, outer) = match direct {
        Some(x) => x,
        None => solve_multilevel(canon.values(), cfg, &mut trace)?,
    };
    let Some(_) = verified(&w, lambda, cfg, outer) else {
        let f = PeriodicField::from_raw(grid, w.clone());
        let act = active_nodes(&w, cfg.active_tol);
        let r = residuals(&f, lambda, &act, outer);
        return Err(SolverError::NoConvergence {
            outer,
            constraint: r.feasibility,
            stationarity: r.stationarity.max(-r.active_min),
        });
    };
    let w = PeriodicField::from_raw(grid, w).shift(m0 as isize);
    let mut report = MinimizerReport::from_field(w, Some(lambda), cfg.active_tol);
    report.residuals.outer_iterations = outer;
    report.init = init.label();
    report.escaped_degenerate_start = escaped;
    report.trace = trace.unwrap_or_default();
    Ok(report)
}

/// Outcome of one start in [`minimize_restarts`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub result: Result<MinimizerReport, SolverError>,
}

#[derive(Debug, Clone)]
pub struct RestartSummary {
    pub best: MinimizerReport,
    pub runs: Vec<RunOutcome>,
}

/// Random starts with seeds `seed .. seed + restarts` (plus the bump preset
/// when enabled), run in parallel; the lowest energy wins, ties going to the
/// earlier start.
pub fn minimize_restarts(cfg: &SolverConfig) -> Result<RestartSummary, SolverError> {
    cfg.validate()?;
    let mut inits: Vec<Init> = (0..cfg.restarts as u64).map(|i| Init::Random(cfg.seed + i)).collect();
    if cfg.include_bump {
        inits.push(Init::Bump);
    }
    if inits.is_empty() {
        return Err(SolverError::InvalidConfig("no starts requested".into()));
    }
    let runs: Vec<RunOutcome> = inits
        .par_iter()
        .map(|init| RunOutcome {
            label: init.label(),
            result: minimize(cfg, init),
        })
        .collect();
    let best = runs
        .iter()
        .filter_map(|r| r.result.as_ref().ok())
        .fold(None::<&MinimizerReport>, |b, r| match b {
            Some(b) if b.energy <= r.energy => Some(b),
            _ => Some(r),
        })
        .cloned();
    match best {
        Some(best) => Ok(RestartSummary { best, runs }),
        None => Err(runs[0].result.clone().unwrap_err()),
    }
}

/// Lift-off intervals `(t_i, z_i, k_i)` and the global contact curvature.
pub fn extract_structure(report: &MinimizerReport) -> Result<(Vec<Interval>, f64), SolverError> {
    if report.active.is_empty() {
        return Err(SolverError::EmptyActiveSet);
    }
    Ok((report.intervals.clone(), report.k))
}

/// Tolerances for [`check_necessary_conditions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionTolerances {
    pub constraint: f64,
    /// Distance from `z_i` to the nearest root of `g − k`.
    pub root: f64,
    /// Max-norm gap between `w` and the closed-form profile.
    pub profile: f64,
    /// Jump of `w″` across an endpoint.
    pub c2_jump: f64,
    /// `k` above this with a contact set of positive length is flagged.
    pub k_anomaly: f64,
}

impl Default for ConditionTolerances {
    fn default() -> Self {
        Self {
            constraint: 1e-8 * 2.0 * PI,
            root: 1e-3,
            profile: 1e-3,
            c2_jump: 1e-2,
            k_anomaly: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalCheck {
    pub center: f64,
    pub half_width: f64,
    pub nearest_root: f64,
    pub root_distance: f64,
    pub profile_gap: f64,
    /// `|w″(fold side) − k|` at the left and right endpoints.
    pub c2_jumps: (f64, f64),
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub lambda: f64,
    pub alpha: f64,
    pub branch: Branch,
    pub k: f64,
    pub intervals: Vec<IntervalCheck>,
    /// `k` is clearly positive although some contact run has interior.
    pub k_anomaly: bool,
    pub passed: bool,
}

/// Max-norm gap between `w` on an interval's lifted nodes and `shape`, after
/// refining the center by Gauss–Newton on the squared residual.
fn profile_gap(w: &PeriodicField, iv: &Interval, shape: &FoldShape) -> f64 {
    let grid = w.grid();
    let n = grid.n();
    let z = shape.z;
    let nodes: Vec<usize> = {
        let mut v = vec![iv.first];
        let mut j = iv.first;
        while j != iv.last {
            j = (j + 1) % n;
            v.push(j);
        }
        v
    };
    let eval = |c: f64, j: usize| {
        let s = wrap_offset(grid.node(j), c);
        if s.abs() <= z {
            (shape.value(s), shape.eval(s, 1))
        } else {
            (1.0, 0.0)
        }
    };
    let mut center = iv.center;
    for _ in 0..3 {
        let (mut num, mut den) = (0.0, 0.0);
        for &j in &nodes {
            // d/dc p(t − c) = −p′.
            let (p, dp) = eval(center, j);
            num += (w[j] - p) * dp;
            den += dp * dp;
        }
        if den == 0.0 {
            break;
        }
        let step = -num / den;
        if !step.is_finite() || step.abs() > grid.spacing() {
            break;
        }
        center += step;
    }
    nodes.iter().fold(0.0f64, |g, &j| g.max((w[j] - eval(center, j).0).abs()))
}

/// Compares each lift-off interval with the closed-form structure: the
/// half-width must be a root of `g = k` on the branch selected by `λ`, the
/// field must match the profile, and `w″` must be continuous at the ends.
pub fn check_necessary_conditions(
    report: &MinimizerReport,
    tol: &ConditionTolerances,
) -> Result<ConditionReport, SolverError> {
    let c = energy::constraint(&report.w);
    let min_w = report.w.min();
    if c.abs() > tol.constraint || min_w < 1.0 - 1e-10 {
        return Err(SolverError::Infeasible { constraint: c, min_w });
    }
    let lambda = report.lambda;
    if lambda.abs() < 1e-6 || (lambda + 1.0).abs() < 1e-6 {
        return Err(SolverError::DegenerateLambda(lambda));
    }
    let (intervals, k) = extract_structure(report)?;
    let alpha = report.alpha();
    let branch = report.branch();
    let roots = invert_g(alpha, k, branch).unwrap_or_default();
    let mut checks = Vec::with_capacity(intervals.len());
    for (i, iv) in intervals.iter().enumerate() {
        let nearest = roots
            .iter()
            .cloned()
            .min_by(|a, b| (a - iv.half_width).abs().total_cmp(&(b - iv.half_width).abs()));
        let Some(z) = nearest.filter(|z| (z - iv.half_width).abs() <= tol.root) else {
            return Err(SolverError::BranchMismatch {
                interval: i,
                branch,
                distance: nearest.map_or(f64::INFINITY, |z| (z - iv.half_width).abs()),
            });
        };
        let gap = match FoldShape::new(lambda, z) {
            Ok(shape) => profile_gap(&report.w, iv, &shape),
            Err(_) => f64::INFINITY,
        };
        let jumps = ((iv.inner_curvature.0 - iv.k).abs(), (iv.inner_curvature.1 - iv.k).abs());
        let passed = gap <= tol.profile && jumps.0 <= tol.c2_jump && jumps.1 <= tol.c2_jump;
        checks.push(IntervalCheck {
            center: iv.center,
            half_width: iv.half_width,
            nearest_root: z,
            root_distance: (z - iv.half_width).abs(),
            profile_gap: gap,
            c2_jumps: jumps,
            passed,
        });
    }
    let n = report.w.len();
    let contact_with_interior = {
        let mut act = vec![false; n];
        for &j in &report.active {
            act[j] = true;
        }
        (0..n).any(|j| act[j] && act[(j + 1) % n] && act[(j + n - 1) % n])
    };
    let k_anomaly = k > tol.k_anomaly && contact_with_interior;
    let passed = checks.iter().all(|c| c.passed);
    Ok(ConditionReport {
        lambda,
        alpha,
        branch,
        k,
        intervals: checks,
        k_anomaly,
        passed,
    })
}
