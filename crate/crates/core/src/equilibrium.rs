//! Equilibrium policies, drift-identity verification, Hamiltonian checks, and
//! the pure-game / pure-control reduction oracles.
//!
//! The verifiers compare coefficient curves rather than simulated paths:
//! with the affine ansatz the backward drift identity is affine in
//! `(x, xbar)`, so matching the `x`, `xbar` and constant coefficients at every
//! node is an exact check. Time derivatives are taken by fourth-order finite
//! differences of the node values.

use serde::{Deserialize, Serialize};

use crate::error::RiccatiError;
use crate::grid::TimeGrid;
use crate::linalg::{Mat2, Vec2};
use crate::model::{build_mp_matrices, GroupParams, MiParams, MpParams};
use crate::riccati::{
    integrate_mp_system, solve_riccati_mi, OdeState, RiccatiSolutionMi, RiccatiSolutionMp, Variant,
};

/// Affine feedback `alpha(t, x, xbar) = gain_self x + gain_mean xbar + intercept`
/// sampled on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPolicy {
    pub grid: TimeGrid,
    pub gain_self: Vec<f64>,
    pub gain_mean: Vec<f64>,
    pub intercept: Vec<f64>,
}

impl FeedbackPolicy {
    pub fn control(&self, k: usize, x: f64, xbar: f64) -> f64 {
        self.gain_self[k] * x + self.gain_mean[k] * xbar + self.intercept[k]
    }

    /// Coefficients at an arbitrary time, linearly interpolated.
    pub fn coefficients_at(&self, t: f64) -> [f64; 3] {
        [
            self.grid.interpolate(&self.gain_self, t),
            self.grid.interpolate(&self.gain_mean, t),
            self.grid.interpolate(&self.intercept, t),
        ]
    }

    /// Copy with the feedback gains scaled; used to build deviation families.
    pub fn scaled(&self, self_factor: f64, mean_factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            gain_self: self.gain_self.iter().map(|g| g * self_factor).collect(),
            gain_mean: self.gain_mean.iter().map(|g| g * mean_factor).collect(),
            intercept: self.intercept.clone(),
        }
    }
}

/// Two-group feedback. For group `g`,
/// `alpha_g = gain_self[g] x + gain_mean.row(g) . (xbar_NC, xbar_C) + intercept[g]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpFeedbackPolicy {
    pub grid: TimeGrid,
    pub gain_self: Vec<Vec2>,
    pub gain_mean: Vec<Mat2>,
    pub intercept: Vec<Vec2>,
}

impl MpFeedbackPolicy {
    /// Row `g` as a scalar policy against a fixed weighting of the two means
    /// is not meaningful in general, so rows are exposed coefficient-wise.
    pub fn row(&self, g: usize, k: usize) -> (f64, [f64; 2], f64) {
        (
            self.gain_self[k].0[g],
            self.gain_mean[k].0[g],
            self.intercept[k].0[g],
        )
    }

    pub fn scaled(&self, group: usize, self_factor: f64, mean_factor: f64) -> Self {
        let mut out = self.clone();
        for k in 0..out.grid.len() {
            out.gain_self[k].0[group] *= self_factor;
            out.gain_mean[k].0[group][0] *= mean_factor;
            out.gain_mean[k].0[group][1] *= mean_factor;
        }
        out
    }
}

pub fn assemble_policy_mi(params: &MiParams, sol: &RiccatiSolutionMi) -> FeedbackPolicy {
    let g = -params.gain_factor();
    FeedbackPolicy {
        grid: sol.grid.clone(),
        gain_self: sol.a.iter().map(|a| g * a).collect(),
        gain_mean: sol.b.iter().map(|b| g * b).collect(),
        intercept: sol.c.iter().map(|c| g * c).collect(),
    }
}

/// MI equilibrium: Riccati chain plus the assembled feedback.
pub fn solve_mi(
    params: &MiParams,
    grid: &TimeGrid,
    variant: Variant,
) -> Result<(RiccatiSolutionMi, FeedbackPolicy), RiccatiError> {
    let sol = solve_riccati_mi(params, grid, variant)?;
    let policy = assemble_policy_mi(params, &sol);
    Ok((sol, policy))
}

pub fn assemble_policy_mp(params: &MpParams, sol: &RiccatiSolutionMp) -> MpFeedbackPolicy {
    let neg_k = -build_mp_matrices(params).k;
    MpFeedbackPolicy {
        grid: sol.grid.clone(),
        gain_self: sol
            .a
            .iter()
            .map(|a| {
                let ka = neg_k * *a;
                Vec2::new(ka.0[0][0], ka.0[1][1])
            })
            .collect(),
        gain_mean: sol.b.iter().map(|b| neg_k * *b).collect(),
        intercept: sol.c.iter().map(|c| neg_k * *c).collect(),
    }
}

pub fn solve_mp(
    params: &MpParams,
    grid: &TimeGrid,
    variant: Variant,
) -> Result<(RiccatiSolutionMp, MpFeedbackPolicy), RiccatiError> {
    let matrices = build_mp_matrices(params);
    let sol = integrate_mp_system(params, &matrices, grid, variant)?;
    let policy = assemble_policy_mp(params, &sol);
    Ok((sol, policy))
}

// ---------------------------------------------------------------------------
// Drift identities
// ---------------------------------------------------------------------------

/// Maximum absolute mismatch of each coefficient curve in the drift
/// identities, over all nodes (and matrix entries for the MP model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub variant: Variant,
    pub max_coefficient_residual: f64,
    /// Backward identity, coefficient of the agent's own state.
    pub backward_x: f64,
    /// Backward identity, coefficient of the mean.
    pub backward_xbar: f64,
    pub backward_constant: f64,
    /// Mean of the forward equation against the mean curve.
    pub forward_mean: f64,
}

impl ResidualReport {
    fn new(variant: Variant, x: f64, xbar: f64, constant: f64, forward: f64) -> Self {
        Self {
            variant,
            max_coefficient_residual: x.max(xbar).max(constant).max(forward),
            backward_x: x,
            backward_xbar: xbar,
            backward_constant: constant,
            forward_mean: forward,
        }
    }
}

/// Points in the differentiation stencil. Nine points give eighth order,
/// which keeps the verifier's own truncation error well below the
/// integrator's on stiff parameter sets.
const STENCIL: usize = 9;

/// First-derivative weights at `x0` for the given abscissae (Fornberg's
/// recursion, truncated to orders 0 and 1).
fn derivative_weights(x0: f64, xs: &[f64]) -> Vec<f64> {
    let m = xs.len();
    let mut c = vec![[0.0_f64; 2]; m];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..m {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|w| w[1]).collect()
}

/// Finite-difference time derivative of node values on a uniform grid.
/// Uses a centered stencil where it fits and a shifted one near the ends.
pub fn time_derivative<S: OdeState>(values: &[S], dt: f64) -> Vec<S> {
    let len = values.len();
    let width = STENCIL.min(len);
    let offsets: Vec<f64> = (0..width).map(|j| j as f64).collect();
    // Weights depend only on where the target sits inside the window.
    let table: Vec<Vec<f64>> = (0..width).map(|pos| derivative_weights(pos as f64, &offsets)).collect();
    (0..len)
        .map(|i| {
            let lo = i.saturating_sub(width / 2).min(len - width);
            let w = &table[i - lo];
            let mut acc = values[lo].scaled(w[0]);
            for j in 1..width {
                acc = acc + values[lo + j].scaled(w[j]);
            }
            acc.scaled(1.0 / dt)
        })
        .collect()
}

/// Substitutes the ansatz `Y = A X + B Xbar + C` into
///
/// ```text
/// dX = (-k Y + b_X X + b_mu Xbar) dt + sigma dW
/// dY = -(b_X Y + c_X X + b_mu (1 - lambda) Ybar + c_mu (1 - lambda) Xbar) dt + Z dW
/// ```
///
/// and reports how far the stored curves are from satisfying it.
pub fn verify_drift_identity_mi(params: &MiParams, sol: &RiccatiSolutionMi) -> ResidualReport {
    let dt = sol.grid.dt();
    let (da, db, dc, dx) = (
        time_derivative(&sol.a, dt),
        time_derivative(&sol.b, dt),
        time_derivative(&sol.c, dt),
        time_derivative(&sol.xbar, dt),
    );
    let k = params.control_authority();
    let (bx, bmu, cx, cmu) = (params.b_x, params.b_mu, params.c_x, params.c_mu);
    let w = 1.0 - params.lambda;
    let (mut rx, mut rxbar, mut rc, mut rf) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..sol.grid.len() {
        let (a, b, c, xbar) = (sol.a[i], sol.b[i], sol.c[i], sol.xbar[i]);
        // Ito drift of A X + B Xbar + C along the forward dynamics
        let lhs_x = da[i] + a * (-k * a + bx);
        let lhs_xbar = a * (-k * b + bmu) + db[i] + b * (-k * (a + b) + bx + bmu);
        let lhs_c = -k * a * c + dc[i] - k * b * c;
        // prescribed backward drift
        let rhs_x = -(bx * a + cx);
        let rhs_xbar = -(bx * b + bmu * w * (a + b) + cmu * w);
        let rhs_c = -(bx * c + bmu * w * c);
        rx = rx.max((lhs_x - rhs_x).abs());
        rxbar = rxbar.max((lhs_xbar - rhs_xbar).abs());
        rc = rc.max((lhs_c - rhs_c).abs());
        let ybar = (a + b) * xbar + c;
        rf = rf.max((dx[i] - (-k * ybar + (bx + bmu) * xbar)).abs());
    }
    ResidualReport::new(sol.variant, rx, rxbar, rc, rf)
}

/// Coefficients of the two-group forward-backward system, written directly
/// from the per-group adjoint equations:
///
/// ```text
/// dY^NC = -(b_X^NC Y^NC + c_X^NC X^NC) dt
/// dY^C  = -(b_X^C Y^C + c_X^C X^C + b_mu^C (1-p) Ybar^C
///           + 2 c_mu^C (1-p) (p Xbar^NC + (1-p) Xbar^C)) dt
/// ```
struct TwoGroupDrifts {
    fwd_x: Mat2,
    fwd_y: Mat2,
    fwd_xbar: Mat2,
    bwd_y: Mat2,
    bwd_x: Mat2,
    bwd_xbar: Mat2,
    bwd_ybar: Mat2,
}

impl TwoGroupDrifts {
    fn new(params: &MpParams) -> Self {
        let (nc, c, p) = (&params.nc, &params.c, params.p);
        let q = 1.0 - p;
        let auth = |g: &GroupParams| g.b_alpha * g.b_alpha / g.c_alpha;
        Self {
            fwd_x: Mat2::diag(nc.b_x, c.b_x),
            fwd_y: Mat2::diag(-auth(nc), -auth(c)),
            fwd_xbar: Mat2::new(nc.b_mu * p, nc.b_mu * q, c.b_mu * p, c.b_mu * q),
            bwd_y: Mat2::diag(-nc.b_x, -c.b_x),
            bwd_x: Mat2::diag(-nc.c_x, -c.c_x),
            bwd_xbar: Mat2::new(0.0, 0.0, -2.0 * c.c_mu * q * p, -2.0 * c.c_mu * q * q),
            bwd_ybar: Mat2::new(0.0, 0.0, 0.0, -c.b_mu * q),
        }
    }
}

/// Matrix analogue of [`verify_drift_identity_mi`].
pub fn verify_drift_identity_mp(params: &MpParams, sol: &RiccatiSolutionMp) -> ResidualReport {
    let d = TwoGroupDrifts::new(params);
    let dt = sol.grid.dt();
    let (da, db, dc, dx) = (
        time_derivative(&sol.a, dt),
        time_derivative(&sol.b, dt),
        time_derivative(&sol.c, dt),
        time_derivative(&sol.xbar, dt),
    );
    let (mut rx, mut rxbar, mut rc, mut rf) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..sol.grid.len() {
        let (a, b, c, xbar) = (sol.a[i], sol.b[i], sol.c[i], sol.xbar[i]);
        // dX = (Fx X + Fy Y + Fm Xbar) dt, Y = A X + B Xbar + C
        let lhs_x = da[i] + a * (d.fwd_x + d.fwd_y * a);
        let lhs_xbar =
            a * (d.fwd_y * b + d.fwd_xbar) + db[i] + b * (d.fwd_x + d.fwd_xbar + d.fwd_y * (a + b));
        let lhs_c = a * d.fwd_y * c + dc[i] + b * d.fwd_y * c;
        // dY = (Gy Y + Gx X + Gm Xbar + Gn Ybar) dt
        let rhs_x = d.bwd_y * a + d.bwd_x;
        let rhs_xbar = d.bwd_y * b + d.bwd_xbar + d.bwd_ybar * (a + b);
        let rhs_c = d.bwd_y * c + d.bwd_ybar * c;
        rx = rx.max((lhs_x - rhs_x).max_abs());
        rxbar = rxbar.max((lhs_xbar - rhs_xbar).max_abs());
        rc = rc.max((lhs_c - rhs_c).max_abs());
        let ybar = (a + b) * xbar + c;
        let fwd = (d.fwd_x + d.fwd_xbar) * xbar + d.fwd_y * ybar;
        rf = rf.max((dx[i] - fwd).max_abs());
    }
    ResidualReport::new(sol.variant, rx, rxbar, rc, rf)
}

// ---------------------------------------------------------------------------
// Hamiltonian minimizer
// ---------------------------------------------------------------------------

/// Which representative agent's Hamiltonian to probe.
#[derive(Debug, Clone, Copy)]
pub enum HamiltonianModel<'a> {
    Mi(&'a MiParams),
    MpNonCooperative(&'a MpParams),
    MpCooperative(&'a MpParams),
}

/// Point at which the Hamiltonian is probed. `means` is `(xbar, xbar^alpha)`
/// for the MI model and `(xbar^NC, xbar^C)` for the MP model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianPoint {
    pub x: f64,
    pub y: f64,
    pub means: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianCheck {
    pub alpha_hat: f64,
    /// `|dH/dalpha|` at `alpha_hat`, by centered differences.
    pub gradient_residual: f64,
    /// Second difference quotient at `alpha_hat`; positive means convex.
    pub curvature: f64,
}

impl HamiltonianModel<'_> {
    fn hamiltonian(&self, pt: &HamiltonianPoint, alpha: f64) -> f64 {
        let HamiltonianPoint { x, y, means } = *pt;
        match *self {
            HamiltonianModel::Mi(p) => {
                let l = p.lambda;
                let mixed = l * means[0] + (1.0 - l) * means[1];
                (p.b_alpha * alpha + p.b_x * x + p.b_mu * mixed) * y
                    + 0.5 * p.c_alpha * alpha * alpha
                    + 0.5 * p.c_x * x * x
                    + 0.5 * p.c_mu * (l * means[0] * means[0] + (1.0 - l) * means[1] * means[1])
            }
            HamiltonianModel::MpNonCooperative(p) | HamiltonianModel::MpCooperative(p) => {
                let g = match self {
                    HamiltonianModel::MpNonCooperative(_) => &p.nc,
                    _ => &p.c,
                };
                let mixed = p.p * means[0] + (1.0 - p.p) * means[1];
                (g.b_alpha * alpha + g.b_x * x + g.b_mu * mixed) * y
                    + 0.5 * g.c_alpha * alpha * alpha
                    + 0.5 * g.c_x * x * x
                    + 0.5 * g.c_mu * mixed * mixed
            }
        }
    }

    fn gain_factor(&self) -> f64 {
        match *self {
            HamiltonianModel::Mi(p) => p.gain_factor(),
            HamiltonianModel::MpNonCooperative(p) => p.nc.gain_factor(),
            HamiltonianModel::MpCooperative(p) => p.c.gain_factor(),
        }
    }
}

/// Probes `alpha_hat = -(b_alpha / c_alpha) y` for stationarity and convexity
/// of the Hamiltonian with finite differences of step `h`.
pub fn hamiltonian_minimizer_check(
    model: HamiltonianModel<'_>,
    point: &HamiltonianPoint,
    h: f64,
) -> HamiltonianCheck {
    let alpha_hat = -model.gain_factor() * point.y;
    let up = model.hamiltonian(point, alpha_hat + h);
    let mid = model.hamiltonian(point, alpha_hat);
    let down = model.hamiltonian(point, alpha_hat - h);
    HamiltonianCheck {
        alpha_hat,
        gradient_residual: ((up - down) / (2.0 * h)).abs(),
        curvature: (up - 2.0 * mid + down) / (h * h),
    }
}

// ---------------------------------------------------------------------------
// Reduction oracles
// ---------------------------------------------------------------------------

/// Curves of a scalar linear-quadratic mean-field equilibrium `Y = A X + B Xbar`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEquilibrium {
    pub grid: TimeGrid,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub xbar: Vec<f64>,
    pub gain_self: Vec<f64>,
    pub gain_mean: Vec<f64>,
}

/// Pure mean-field game for one group with drift coupling `b_mu Xbar`.
///
/// The agent takes the mean as given, so its adjoint is
/// `dY = -(b_X Y + c_X X) dt`. Matching `Y = A X + B Xbar` against the
/// forward drift `-k Y + b_X X + b_mu Xbar` gives
/// `B' = k B^2 + 2k A B - (2 b_X + b_mu) B - b_mu A`.
pub fn mfg_reduction(group: &GroupParams, horizon: f64, n_steps: usize) -> ScalarEquilibrium {
    let k = group.b_alpha * group.b_alpha / group.c_alpha;
    let (bx, bmu) = (group.b_x, group.b_mu);
    scalar_equilibrium(group, horizon, n_steps, move |a, b| {
        k * b * b + 2.0 * k * a * b - (2.0 * bx + bmu) * b - bmu * a
    })
}

/// Pure mean-field control for one group whose cost on the mean is
/// `mean_cost_weight * c_mu / 2 * Xbar^2`.
///
/// The planner internalizes the mean, so the adjoint is
/// `dY = -(b_X Y + c_X X + b_mu Ybar + w c_mu Xbar) dt`, and matching gives
/// `B' = k B^2 + 2k A B - 2 (b_X + b_mu) B - 2 b_mu A - w c_mu`.
pub fn mfc_reduction(
    group: &GroupParams,
    horizon: f64,
    n_steps: usize,
    mean_cost_weight: f64,
) -> ScalarEquilibrium {
    let k = group.b_alpha * group.b_alpha / group.c_alpha;
    let (bx, bmu, cmu) = (group.b_x, group.b_mu, group.c_mu * mean_cost_weight);
    scalar_equilibrium(group, horizon, n_steps, move |a, b| {
        k * b * b + 2.0 * k * a * b - 2.0 * (bx + bmu) * b - 2.0 * bmu * a - cmu
    })
}

// (A, B) backward on a grid twice as fine as the output, so that the forward
// mean step finds its RK4 midpoints on actual nodes.
fn scalar_equilibrium(
    group: &GroupParams,
    horizon: f64,
    n_steps: usize,
    b_rate: impl Fn(f64, f64) -> f64,
) -> ScalarEquilibrium {
    let k = group.b_alpha * group.b_alpha / group.c_alpha;
    let fine = 2 * n_steps;
    let h = horizon / fine as f64;
    let rate = |(a, b): (f64, f64)| (k * a * a - 2.0 * group.b_x * a - group.c_x, b_rate(a, b));
    let mut ab = vec![(0.0, 0.0); fine + 1];
    ab[fine] = (group.c_t, 0.0);
    for j in (0..fine).rev() {
        let y = ab[j + 1];
        let k1 = rate(y);
        let k2 = rate((y.0 - 0.5 * h * k1.0, y.1 - 0.5 * h * k1.1));
        let k3 = rate((y.0 - 0.5 * h * k2.0, y.1 - 0.5 * h * k2.1));
        let k4 = rate((y.0 - h * k3.0, y.1 - h * k3.1));
        ab[j] = (
            y.0 - h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            y.1 - h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
    }
    let mean_rate = |j: usize, x: f64| (-k * (ab[j].0 + ab[j].1) + group.b_x + group.b_mu) * x;
    let big = 2.0 * h;
    let mut xbar = vec![group.mu0_mean; n_steps + 1];
    for i in 0..n_steps {
        let x = xbar[i];
        let k1 = mean_rate(2 * i, x);
        let k2 = mean_rate(2 * i + 1, x + 0.5 * big * k1);
        let k3 = mean_rate(2 * i + 1, x + 0.5 * big * k2);
        let k4 = mean_rate(2 * i + 2, x + big * k3);
        xbar[i + 1] = x + big / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let g = -group.b_alpha / group.c_alpha;
    let a: Vec<f64> = (0..=n_steps).map(|i| ab[2 * i].0).collect();
    let b: Vec<f64> = (0..=n_steps).map(|i| ab[2 * i].1).collect();
    ScalarEquilibrium {
        grid: TimeGrid::new(horizon, n_steps).expect("valid grid"),
        gain_self: a.iter().map(|v| g * v).collect(),
        gain_mean: b.iter().map(|v| g * v).collect(),
        a,
        b,
        xbar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn generic_mi() -> MiParams {
        MiParams {
            b_alpha: 0.8,
            b_x: -0.3,
            b_mu: 0.6,
            c_alpha: 1.2,
            c_x: 0.7,
            c_mu: 1.1,
            c_t: 0.9,
            lambda: 0.35,
            mu0_mean: 1.4,
            ..MiParams::unit(0.35)
        }
    }

    #[test]
    fn zero_state_costs_give_zero_policy() {
        let p = MiParams {
            c_x: 0.0,
            c_mu: 0.0,
            c_t: 0.0,
            ..MiParams::unit(0.5)
        };
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let (sol, policy) = solve_mi(&p, &grid, Variant::FbsdeConsistent).unwrap();
        assert!(policy.gain_self.iter().chain(&policy.gain_mean).chain(&policy.intercept).all(|&g| g == 0.0));
        for (t, x) in grid.nodes().zip(&sol.xbar) {
            assert!((x - (2.0 * t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn stationary_gain() {
        let p = MiParams {
            b_x: 0.0,
            ..MiParams::unit(1.0)
        };
        let (_, policy) = solve_mi(&p, &TimeGrid::new(1.0, 500).unwrap(), Variant::FbsdeConsistent).unwrap();
        assert!(policy.gain_self.iter().all(|g| (g + 1.0).abs() < 1e-13));
    }

    #[test]
    fn consistent_variant_satisfies_the_drift_identity() {
        let p = generic_mi();
        let grid = TimeGrid::new(1.0, 4000).unwrap();
        let (sol, _) = solve_mi(&p, &grid, Variant::FbsdeConsistent).unwrap();
        let r = verify_drift_identity_mi(&p, &sol);
        assert!(r.max_coefficient_residual <= 1e-8, "{r:?}");
        assert_eq!(r.variant, Variant::FbsdeConsistent);
    }

    #[test]
    fn literal_variant_misses_the_mean_coefficient() {
        let p = MiParams::unit(1.0);
        let grid = TimeGrid::new(1.0, 4000).unwrap();
        let (sol, _) = solve_mi(&p, &grid, Variant::PaperLiteral).unwrap();
        let r = verify_drift_identity_mi(&p, &sol);
        // B = 0 here, so the mismatch is exactly the dropped b_mu A forcing
        let expected = sol.a.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        assert!((r.backward_xbar - expected).abs() < 1e-8, "{r:?}");
        assert!(r.backward_xbar > 0.1);
        assert!(r.backward_x <= 1e-8);
    }

    #[test]
    fn variants_both_pass_without_drift_coupling() {
        let p = MiParams {
            b_mu: 0.0,
            ..generic_mi()
        };
        let grid = TimeGrid::new(1.0, 4000).unwrap();
        for v in [Variant::FbsdeConsistent, Variant::PaperLiteral] {
            let (sol, _) = solve_mi(&p, &grid, v).unwrap();
            assert!(verify_drift_identity_mi(&p, &sol).max_coefficient_residual <= 1e-8);
        }
    }

    fn generic_mp(p: f64) -> MpParams {
        let mut params = MpParams::symmetric(p);
        params.nc.b_x = -0.4;
        params.nc.c_alpha = 1.5;
        params.c.b_mu = 0.7;
        params.c.c_mu = 0.8;
        params.c.b_alpha = 1.2;
        params.c.mu0_mean = -0.5;
        params
    }

    #[test]
    fn mp_consistent_variant_satisfies_the_drift_identity() {
        let params = generic_mp(0.4);
        let grid = TimeGrid::new(1.0, 4000).unwrap();
        let (sol, _) = solve_mp(&params, &grid, Variant::FbsdeConsistent).unwrap();
        let r = verify_drift_identity_mp(&params, &sol);
        assert!(r.max_coefficient_residual <= 1e-8, "{r:?}");
    }

    #[test]
    fn mp_literal_variant_fails_with_cooperative_coupling() {
        let mut params = MpParams::symmetric(0.5);
        params.c.b_mu = 2.0;
        let grid = TimeGrid::new(1.0, 4000).unwrap();
        let (sol, _) = solve_mp(&params, &grid, Variant::PaperLiteral).unwrap();
        let r = verify_drift_identity_mp(&params, &sol);
        assert!(r.backward_xbar > 0.05, "{r:?}");
        assert!(r.backward_x <= 1e-8);
    }

    #[test]
    fn mp_variants_both_pass_without_cooperators() {
        let params = generic_mp(1.0);
        let grid = TimeGrid::new(1.0, 4000).unwrap();
        for v in [Variant::FbsdeConsistent, Variant::PaperLiteral] {
            let (sol, _) = solve_mp(&params, &grid, v).unwrap();
            assert!(verify_drift_identity_mp(&params, &sol).max_coefficient_residual <= 1e-8);
        }
    }

    #[test]
    fn hamiltonian_at_origin() {
        let p = MiParams::unit(0.5);
        let c = hamiltonian_minimizer_check(
            HamiltonianModel::Mi(&p),
            &HamiltonianPoint { x: 0.0, y: 0.0, means: [0.0, 0.0] },
            1e-5,
        );
        assert_eq!(c.alpha_hat, 0.0);
        assert!(c.gradient_residual <= 1e-10);
        assert!(c.curvature > 0.0);
    }

    #[test]
    fn hamiltonian_minimizers_for_each_agent_type() {
        let mi = MiParams::unit(0.5);
        let pt = HamiltonianPoint { x: 0.3, y: 2.0, means: [0.1, -0.2] };
        let c = hamiltonian_minimizer_check(HamiltonianModel::Mi(&mi), &pt, 1e-5);
        assert_eq!(c.alpha_hat, -2.0);
        assert!(c.gradient_residual <= 1e-8);
        // analytic derivative c_alpha a + b_alpha y vanishes at alpha_hat
        assert_eq!(mi.c_alpha * c.alpha_hat + mi.b_alpha * pt.y, 0.0);

        let mp = MpParams::symmetric(0.5);
        let pt = HamiltonianPoint { x: -0.4, y: -1.0, means: [0.5, 0.2] };
        let c = hamiltonian_minimizer_check(HamiltonianModel::MpCooperative(&mp), &pt, 1e-5);
        assert_eq!(c.alpha_hat, 1.0);
        assert!(c.gradient_residual <= 1e-8);
        assert!(c.curvature > 0.0);
    }

    #[test]
    fn full_non_cooperation_reduces_to_the_game() {
        let mut params = generic_mp(1.0);
        params.c.b_mu = 0.0;
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let (sol, policy) = solve_mp(&params, &grid, Variant::FbsdeConsistent).unwrap();
        let oracle = mfg_reduction(&params.nc, 1.0, 2000);
        let gs: Vec<f64> = policy.gain_self.iter().map(|g| g.0[0]).collect();
        let gm: Vec<f64> = policy.gain_mean.iter().map(|g| g.0[0][0]).collect();
        let x: Vec<f64> = sol.xbar.iter().map(|x| x.0[0]).collect();
        assert!(max_diff(&gs, &oracle.gain_self) < 1e-9);
        assert!(max_diff(&gm, &oracle.gain_mean) < 1e-9);
        assert!(max_diff(&x, &oracle.xbar) < 1e-9);
    }

    #[test]
    fn full_cooperation_reduces_to_the_control_problem() {
        let mut params = generic_mp(0.0);
        params.nc.b_mu = 0.0;
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let (sol, policy) = solve_mp(&params, &grid, Variant::FbsdeConsistent).unwrap();
        let oracle = mfc_reduction(&params.c, 1.0, 2000, 2.0);
        let gs: Vec<f64> = policy.gain_self.iter().map(|g| g.0[1]).collect();
        let gm: Vec<f64> = policy.gain_mean.iter().map(|g| g.0[1][1]).collect();
        let x: Vec<f64> = sol.xbar.iter().map(|x| x.0[1]).collect();
        assert!(max_diff(&gs, &oracle.gain_self) < 1e-9);
        assert!(max_diff(&gm, &oracle.gain_mean) < 1e-9);
        assert!(max_diff(&x, &oracle.xbar) < 1e-9);
    }

    #[test]
    fn mi_endpoints_match_the_reductions() {
        let group = GroupParams {
            b_mu: 0.6,
            b_x: -0.2,
            ..GroupParams::unit()
        };
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let game = mfg_reduction(&group, 1.0, 2000);
        let (sol, _) = solve_mi(&MiParams::from_group(&group, 1.0, 1.0), &grid, Variant::FbsdeConsistent).unwrap();
        assert!(max_diff(&sol.b, &game.b) < 1e-9);
        let control = mfc_reduction(&group, 1.0, 2000, 1.0);
        let (sol, _) = solve_mi(&MiParams::from_group(&group, 0.0, 1.0), &grid, Variant::FbsdeConsistent).unwrap();
        assert!(max_diff(&sol.b, &control.b) < 1e-9);
        assert!(max_diff(&sol.xbar, &control.xbar) < 1e-9);
    }

    #[test]
    fn fixed_point_mean_reproduced_by_policy() {
        let p = generic_mi();
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let (sol, policy) = solve_mi(&p, &grid, Variant::FbsdeConsistent).unwrap();
        // mean of the controlled state: m' = b_alpha alpha(m, m) + (b_X + b_mu) m
        let gs = crate::riccati::Sampled::new(&policy.gain_self);
        let gm = crate::riccati::Sampled::new(&policy.gain_mean);
        let ic = crate::riccati::Sampled::new(&policy.intercept);
        let m = crate::riccati::integrate_forward(&grid, p.mu0_mean, "mean", |k, s, m| {
            p.b_alpha * ((gs.at(k, s) + gm.at(k, s)) * m + ic.at(k, s)) + (p.b_x + p.b_mu) * m
        })
        .unwrap();
        assert!(max_diff(&m, &sol.xbar) <= 1e-10);
    }

    #[test]
    fn mean_and_policy_scale_with_initial_mean() {
        let p = generic_mi();
        let q = MiParams {
            mu0_mean: 3.0 * p.mu0_mean,
            ..p.clone()
        };
        let grid = TimeGrid::new(1.0, 500).unwrap();
        let (s1, pol1) = solve_mi(&p, &grid, Variant::FbsdeConsistent).unwrap();
        let (s2, pol2) = solve_mi(&q, &grid, Variant::FbsdeConsistent).unwrap();
        for k in 0..grid.len() {
            assert!((s2.xbar[k] - 3.0 * s1.xbar[k]).abs() < 1e-12);
            let u1 = pol1.control(k, s1.xbar[k], s1.xbar[k]);
            let u2 = pol2.control(k, s2.xbar[k], s2.xbar[k]);
            assert!((u2 - 3.0 * u1).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_is_lipschitz_in_lambda() {
        // bound measured once on this grid (observed ~1.23 near lambda = 0) and frozen
        const LIPSCHITZ: f64 = 1.5;
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let dl = 1e-3;
        for l in [0.0, 0.25, 0.5, 0.75, 0.999] {
            let (_, p1) = solve_mi(&MiParams::unit(l), &grid, Variant::FbsdeConsistent).unwrap();
            let (_, p2) = solve_mi(&MiParams::unit(l + dl), &grid, Variant::FbsdeConsistent).unwrap();
            let change = max_diff(&p1.gain_self, &p2.gain_self).max(max_diff(&p1.gain_mean, &p2.gain_mean));
            assert!(change <= LIPSCHITZ * dl, "lambda {l}: {}", change / dl);
        }
    }

    #[test]
    fn derivative_stencils_are_exact_on_polynomials() {
        let grid = TimeGrid::new(2.0, 20).unwrap();
        let f = |t: f64| t.powi(8) - 3.0 * t.powi(3) + t;
        let df = |t: f64| 8.0 * t.powi(7) - 9.0 * t * t + 1.0;
        let v: Vec<f64> = grid.nodes().map(f).collect();
        for (t, d) in grid.nodes().zip(time_derivative(&v, grid.dt())) {
            assert!((d - df(t)).abs() < 1e-9, "{t}: {d} vs {}", df(t));
        }
        // Short series fall back to every available node.
        let v = [1.0, 3.0, 5.0];
        assert_eq!(time_derivative(&v, 0.5), vec![4.0; 3]);
    }
}
