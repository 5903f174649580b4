//! Backward Riccati integration for both models.
//!
//! All equations are integrated with classical fourth-order Runge-Kutta on a
//! uniform grid: the Riccati and linear equations backward from their
//! terminal data, the mean equation forward from the initial mean. Known
//! coefficient curves are needed at cell midpoints by the RK4 stages; they
//! are reconstructed by cubic interpolation through the four nearest nodes,
//! which keeps the scheme fourth-order.
//!
//! Two variants of the `B` equation are available. [`Variant::PaperLiteral`]
//! is the system as usually displayed for these models.
//! [`Variant::FbsdeConsistent`] is obtained by substituting the ansatz
//! `Y = A X + B Xbar + C` into the forward-backward system and matching the
//! `Xbar` coefficients; it carries the forcing `b_mu (2 - lambda) A` in the
//! MI model and the extra `M6 A` term in the MP model. Only the latter
//! satisfies the drift identities checked in [`crate::equilibrium`].

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::RiccatiError;
use crate::grid::TimeGrid;
use crate::linalg::{Mat2, Vec2};
use crate::model::{MiParams, MpMatrices, MpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    FbsdeConsistent,
    PaperLiteral,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::FbsdeConsistent => "fbsde_consistent",
            Variant::PaperLiteral => "paper_literal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolutionMi {
    pub grid: TimeGrid,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub xbar: Vec<f64>,
    pub variant: Variant,
}

impl RiccatiSolutionMi {
    pub fn max_abs_c(&self) -> f64 {
        self.c.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolutionMp {
    pub grid: TimeGrid,
    pub a: Vec<Mat2>,
    pub b: Vec<Mat2>,
    pub c: Vec<Vec2>,
    /// `(Xbar^NC, Xbar^C)` at every node.
    pub xbar: Vec<Vec2>,
    pub variant: Variant,
}

impl RiccatiSolutionMp {
    pub fn max_abs_offdiag_a(&self) -> f64 {
        self.a.iter().fold(0.0, |m, a| m.max(a.max_abs_offdiag()))
    }

    pub fn max_abs_c(&self) -> f64 {
        self.c.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }
}

/// State types the integrator can advance.
pub trait OdeState: Copy + Add<Output = Self> {
    fn scaled(self, s: f64) -> Self;
    fn finite(&self) -> bool;
}

impl OdeState for f64 {
    fn scaled(self, s: f64) -> Self {
        self * s
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl OdeState for Mat2 {
    fn scaled(self, s: f64) -> Self {
        self.scale(s)
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl OdeState for Vec2 {
    fn scaled(self, s: f64) -> Self {
        self.scale(s)
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

/// Position inside a grid cell `[t_k, t_{k+1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Left,
    Mid,
    Right,
}

fn rk4_step<S: OdeState>(y: S, h: f64, f: &impl Fn(Stage, S) -> S, forward: bool) -> S {
    let (first, last) = if forward {
        (Stage::Left, Stage::Right)
    } else {
        (Stage::Right, Stage::Left)
    };
    let k1 = f(first, y);
    let k2 = f(Stage::Mid, y + k1.scaled(0.5 * h));
    let k3 = f(Stage::Mid, y + k2.scaled(0.5 * h));
    let k4 = f(last, y + k3.scaled(h));
    y + (k1 + k2.scaled(2.0) + k3.scaled(2.0) + k4).scaled(h / 6.0)
}

/// Integrates `y' = f(k, stage, y)` backward from `y(T) = terminal`, where
/// `k` is the index of the cell being crossed.
pub fn integrate_backward<S: OdeState>(
    grid: &TimeGrid,
    terminal: S,
    equation: &'static str,
    f: impl Fn(usize, Stage, S) -> S,
) -> Result<Vec<S>, RiccatiError> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut out = vec![terminal; n + 1];
    let mut y = terminal;
    for k in (0..n).rev() {
        y = rk4_step(y, -dt, &|stage, s| f(k, stage, s), false);
        if !y.finite() {
            return Err(RiccatiError::BlowUp {
                equation,
                node: k,
                time: grid.time(k),
            });
        }
        out[k] = y;
    }
    Ok(out)
}

/// Integrates `y' = f(k, stage, y)` forward from `y(0) = initial`.
pub fn integrate_forward<S: OdeState>(
    grid: &TimeGrid,
    initial: S,
    equation: &'static str,
    f: impl Fn(usize, Stage, S) -> S,
) -> Result<Vec<S>, RiccatiError> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut out = vec![initial; n + 1];
    let mut y = initial;
    for k in 0..n {
        y = rk4_step(y, dt, &|stage, s| f(k, stage, s), true);
        if !y.finite() {
            return Err(RiccatiError::BlowUp {
                equation,
                node: k + 1,
                time: grid.time(k + 1),
            });
        }
        out[k + 1] = y;
    }
    Ok(out)
}

/// Cell-midpoint values of a node-sampled curve, by cubic interpolation
/// through the four nearest nodes (one-sided at the ends).
pub fn midpoints<S: OdeState>(values: &[S]) -> Vec<S> {
    let n = values.len() - 1;
    if n < 3 {
        return values
            .windows(2)
            .map(|w| (w[0] + w[1]).scaled(0.5))
            .collect();
    }
    let combo = |idx: [usize; 4], w: [f64; 4]| {
        values[idx[0]].scaled(w[0])
            + values[idx[1]].scaled(w[1])
            + values[idx[2]].scaled(w[2])
            + values[idx[3]].scaled(w[3])
    };
    const INTERIOR: [f64; 4] = [-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0];
    const FIRST: [f64; 4] = [5.0 / 16.0, 15.0 / 16.0, -5.0 / 16.0, 1.0 / 16.0];
    const LAST: [f64; 4] = [1.0 / 16.0, -5.0 / 16.0, 15.0 / 16.0, 5.0 / 16.0];
    (0..n)
        .map(|k| {
            if k == 0 {
                combo([0, 1, 2, 3], FIRST)
            } else if k == n - 1 {
                combo([n - 3, n - 2, n - 1, n], LAST)
            } else {
                combo([k - 1, k, k + 1, k + 2], INTERIOR)
            }
        })
        .collect()
}

/// Node/midpoint lookup for a known coefficient curve.
pub struct Sampled<'a, S> {
    nodes: &'a [S],
    mids: Vec<S>,
}

impl<'a, S: OdeState> Sampled<'a, S> {
    pub fn new(nodes: &'a [S]) -> Self {
        Self {
            nodes,
            mids: midpoints(nodes),
        }
    }

    pub fn at(&self, k: usize, stage: Stage) -> S {
        match stage {
            Stage::Left => self.nodes[k],
            Stage::Mid => self.mids[k],
            Stage::Right => self.nodes[k + 1],
        }
    }
}

// ---------------------------------------------------------------------------
// Mixed individual model
// ---------------------------------------------------------------------------

/// Characteristic roots of the `A` equation and its explicit solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormA {
    pub delta_plus: f64,
    pub delta_minus: f64,
    authority: f64,
    c_x: f64,
    c_t: f64,
    horizon: f64,
}

impl ClosedFormA {
    pub fn new(params: &MiParams) -> Self {
        Self::from_coefficients(
            params.b_x,
            params.control_authority(),
            params.c_x,
            params.c_t,
            params.horizon,
        )
    }

    /// `authority` is `b_alpha^2 / c_alpha`.
    pub fn from_coefficients(b_x: f64, authority: f64, c_x: f64, c_t: f64, horizon: f64) -> Self {
        let root = (b_x * b_x + c_x * authority).sqrt();
        Self {
            delta_plus: b_x + root,
            delta_minus: b_x - root,
            authority,
            c_x,
            c_t,
            horizon,
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64, RiccatiError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(RiccatiError::OutOfDomain {
                t,
                horizon: self.horizon,
            });
        }
        if t == self.horizon {
            return Ok(self.c_t);
        }
        let (dp, dm) = (self.delta_plus, self.delta_minus);
        let r = (dp - dm) * (self.horizon - t);
        let (num, den) = if r > 30.0 {
            // scaled by exp(-r)
            let e = (-r).exp();
            (
                -self.c_x * (1.0 - e) - self.c_t * (dp - dm * e),
                (dm - dp * e) - self.c_t * self.authority * (1.0 - e),
            )
        } else {
            let em1 = r.exp_m1();
            let big = em1 + 1.0;
            (
                -self.c_x * em1 - self.c_t * (dp * big - dm),
                (dm * big - dp) - self.c_t * self.authority * em1,
            )
        };
        Ok(num / den)
    }
}

pub fn closed_form_a(params: &MiParams, t: f64) -> Result<f64, RiccatiError> {
    ClosedFormA::new(params).eval(t)
}

/// Right-hand side of the `A` equation: `A' = k A^2 - 2 b_X A - c_X`.
pub fn mi_a_rate(params: &MiParams, a: f64) -> f64 {
    params.control_authority() * a * a - 2.0 * params.b_x * a - params.c_x
}

/// Right-hand side of the `B` equation.
pub fn mi_b_rate(params: &MiParams, variant: Variant, a: f64, b: f64) -> f64 {
    let k = params.control_authority();
    let lambda = params.lambda;
    let linear = 2.0 * params.b_x + 2.0 * params.b_mu - lambda * params.b_mu;
    let forcing = match variant {
        Variant::PaperLiteral => params.b_mu * (1.0 - lambda),
        Variant::FbsdeConsistent => params.b_mu * (2.0 - lambda),
    };
    k * b * b + 2.0 * k * a * b - linear * b - forcing * a - params.c_mu * (1.0 - lambda)
}

pub fn mi_c_rate(params: &MiParams, a: f64, b: f64, c: f64) -> f64 {
    let k = params.control_authority();
    (k * (a + b) - params.b_x - params.b_mu * (1.0 - params.lambda)) * c
}

pub fn mi_mean_rate(params: &MiParams, a: f64, b: f64, c: f64, xbar: f64) -> f64 {
    let k = params.control_authority();
    (-k * (a + b) + params.b_x + params.b_mu) * xbar - k * c
}

pub fn integrate_a_mi(params: &MiParams, grid: &TimeGrid) -> Result<Vec<f64>, RiccatiError> {
    integrate_backward(grid, params.c_t, "A", |_, _, a| mi_a_rate(params, a))
}

pub fn integrate_b_mi(
    params: &MiParams,
    grid: &TimeGrid,
    a: &[f64],
    variant: Variant,
) -> Result<Vec<f64>, RiccatiError> {
    let a = Sampled::new(a);
    integrate_backward(grid, 0.0, "B", |k, s, b| {
        mi_b_rate(params, variant, a.at(k, s), b)
    })
}

pub fn integrate_c_mi(
    params: &MiParams,
    grid: &TimeGrid,
    a: &[f64],
    b: &[f64],
) -> Result<Vec<f64>, RiccatiError> {
    integrate_c_mi_from(params, grid, a, b, 0.0)
}

/// The `C` equation from an arbitrary terminal value. The equilibrium
/// always uses `C_T = 0`, which makes `C` vanish identically.
pub fn integrate_c_mi_from(
    params: &MiParams,
    grid: &TimeGrid,
    a: &[f64],
    b: &[f64],
    terminal: f64,
) -> Result<Vec<f64>, RiccatiError> {
    let (a, b) = (Sampled::new(a), Sampled::new(b));
    integrate_backward(grid, terminal, "C", |k, s, c| {
        mi_c_rate(params, a.at(k, s), b.at(k, s), c)
    })
}

pub fn integrate_mean_mi(
    params: &MiParams,
    grid: &TimeGrid,
    a: &[f64],
    b: &[f64],
    c: &[f64],
) -> Result<Vec<f64>, RiccatiError> {
    let (a, b, c) = (Sampled::new(a), Sampled::new(b), Sampled::new(c));
    integrate_forward(grid, params.mu0_mean, "mean", |k, s, x| {
        mi_mean_rate(params, a.at(k, s), b.at(k, s), c.at(k, s), x)
    })
}

/// Runs the full MI chain `A -> B -> C -> Xbar`.
pub fn solve_riccati_mi(
    params: &MiParams,
    grid: &TimeGrid,
    variant: Variant,
) -> Result<RiccatiSolutionMi, RiccatiError> {
    let a = integrate_a_mi(params, grid)?;
    let b = integrate_b_mi(params, grid, &a, variant)?;
    let c = integrate_c_mi(params, grid, &a, &b)?;
    let xbar = integrate_mean_mi(params, grid, &a, &b, &c)?;
    Ok(RiccatiSolutionMi {
        grid: grid.clone(),
        a,
        b,
        c,
        xbar,
        variant,
    })
}

// ---------------------------------------------------------------------------
// Mixed population model
// ---------------------------------------------------------------------------

pub fn mp_a_rate(m: &MpMatrices, a: Mat2) -> Mat2 {
    -(a * m.m2 * a) - m.m1 * a - a * m.m1 + m.m4
}

pub fn mp_b_rate(m: &MpMatrices, variant: Variant, a: Mat2, b: Mat2) -> Mat2 {
    let quadratic = b * m.m2 * b + a * m.m2 * b + b * m.m2 * a;
    let bracket = match variant {
        Variant::PaperLiteral => {
            quadratic + (m.m1 - m.m6) * b + b * (m.m1 + m.m3) + a * m.m3 - m.m5
        }
        Variant::FbsdeConsistent => {
            quadratic + (m.m1 + m.m6) * b + b * (m.m1 + m.m3) + a * m.m3 + m.m6 * a + m.m5
        }
    };
    -bracket
}

pub fn mp_c_rate(m: &MpMatrices, variant: Variant, a: Mat2, b: Mat2, c: Vec2) -> Vec2 {
    let coupling = match variant {
        Variant::PaperLiteral => -m.m6,
        Variant::FbsdeConsistent => m.m6,
    };
    let coeff = (a + b) * m.m2 + m.m1 + coupling;
    (coeff * c).scale(-1.0)
}

pub fn mp_mean_rate(m: &MpMatrices, a: Mat2, b: Mat2, c: Vec2, xbar: Vec2) -> Vec2 {
    (m.m1 + m.m2 * a + m.m2 * b + m.m3) * xbar + m.m2 * c
}

/// Integrates the full matrix system of the mixed-population model.
pub fn integrate_mp_system(
    params: &MpParams,
    matrices: &MpMatrices,
    grid: &TimeGrid,
    variant: Variant,
) -> Result<RiccatiSolutionMp, RiccatiError> {
    let m = matrices;
    let terminal = Mat2::diag(params.nc.c_t, params.c.c_t);
    let a = integrate_backward(grid, terminal, "A", |_, _, a| mp_a_rate(m, a))?;
    let sa = Sampled::new(&a);
    let b = integrate_backward(grid, Mat2::ZERO, "B", |k, s, b| {
        mp_b_rate(m, variant, sa.at(k, s), b)
    })?;
    let sb = Sampled::new(&b);
    let c = integrate_backward(grid, Vec2::ZERO, "C", |k, s, c| {
        mp_c_rate(m, variant, sa.at(k, s), sb.at(k, s), c)
    })?;
    let sc = Sampled::new(&c);
    let xbar = integrate_forward(grid, params.initial_means(), "mean", |k, s, x| {
        mp_mean_rate(m, sa.at(k, s), sb.at(k, s), sc.at(k, s), x)
    })?;
    Ok(RiccatiSolutionMp {
        grid: grid.clone(),
        a,
        b,
        c,
        xbar,
        variant,
    })
}
