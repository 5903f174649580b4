//! Finite-population Monte Carlo for both models.
//!
//! Every agent plays the decentralized feedback: its own state plus the
//! deterministic mean-field path, never the realized empirical mean. The
//! population coupling in the drift and in the costs does use empirical
//! means. Agents advance by Euler–Maruyama, and running costs are
//! accumulated at the left endpoint of each step.
//!
//! ε-Nash studies run several "arms" in lockstep inside each replication.
//! Arm 0 is the equilibrium. In every other arm agent 0 switches to a
//! deviation. All arms consume the same Gaussian increments, so their
//! per-run cost differences are paired.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{FeedbackPolicy, MpFeedbackPolicy};
use crate::error::{Error, RiccatiError, SimError};
use crate::exec::{try_map_indexed, ExecMode};
use crate::grid::TimeGrid;
use crate::linalg::Vec2;
use crate::model::{Group, GroupParams, MiParams, MpParams};
use crate::riccati::{
    integrate_a_mi, integrate_backward, integrate_forward, RiccatiSolutionMi, RiccatiSolutionMp,
    Sampled,
};
use crate::rng::{stream, Normals};

/// Two-sided 95% normal quantile used for all confidence half-widths.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_agents: usize,
    pub n_runs: usize,
    pub n_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpSimConfig {
    pub n_nc: usize,
    pub n_c: usize,
    pub n_runs: usize,
    pub n_steps: usize,
    pub seed: u64,
}

fn positive(name: &str, v: usize) -> Result<(), SimError> {
    if v == 0 {
        Err(SimError::Config(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        positive("n_agents", self.n_agents)?;
        positive("n_runs", self.n_runs)?;
        positive("n_steps", self.n_steps)
    }
}

impl MpSimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        positive("n_nc", self.n_nc)?;
        positive("n_c", self.n_c)?;
        positive("n_runs", self.n_runs)?;
        positive("n_steps", self.n_steps)
    }

    pub fn empirical_proportion(&self) -> f64 {
        self.n_nc as f64 / (self.n_nc + self.n_c) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub role: String,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub times: Vec<f64>,
    /// `[group][node]`, averaged over runs. One group for the MI model.
    pub empirical_mean_path: Vec<Vec<f64>>,
    /// Deterministic mean-field path on the same nodes.
    pub reference_mean_path: Vec<Vec<f64>>,
    /// Per run, the largest node-wise gap between empirical and reference
    /// means (over groups), averaged over runs.
    pub mean_consistency_error: f64,
    pub mean_consistency_std_error: f64,
    pub cost_estimates: Vec<CostEstimate>,
    /// `[run][role]`, roles ordered as in `cost_estimates`.
    pub run_costs: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Deviations tried by agent 0 (a non-cooperative agent in the MP model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationFamily {
    /// Each factor yields two members: `gain_self` scaled, and `gain_mean` scaled.
    pub factors: Vec<f64>,
    /// Adds the best response to the frozen deterministic mean path.
    pub best_response: bool,
}

impl Default for DeviationFamily {
    fn default() -> Self {
        Self {
            factors: vec![0.8, 0.9, 1.1, 1.2],
            best_response: true,
        }
    }
}

impl DeviationFamily {
    pub fn best_response_only() -> Self {
        Self {
            factors: Vec::new(),
            best_response: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationOutcome {
    pub label: String,
    /// Mean of (equilibrium cost - deviated cost) for agent 0.
    pub gain: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    /// Largest mean gain over the family, before clipping.
    pub epsilon_hat: f64,
    pub epsilon_clipped: f64,
    /// Paired 95% half-width of the maximizing member.
    pub half_width: f64,
    pub argmax: String,
    pub family: Vec<DeviationOutcome>,
    pub n_runs: usize,
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Feedback coefficients on the simulation grid. `own` is the mean of the
/// agent's own law, used by the MI coupling only.
#[derive(Debug, Clone)]
struct AgentPolicy {
    gs: Vec<f64>,
    gm: Vec<[f64; 2]>,
    ic: Vec<f64>,
    own: Vec<f64>,
}

struct GroupSpec {
    n: usize,
    coeffs: GroupParams,
    policy: AgentPolicy,
}

#[derive(Clone, Copy)]
enum Coupling {
    Individual { lambda: f64 },
    Population { p: f64 },
}

impl Coupling {
    /// (drift mean term, cost mean term) for an agent with own-law mean `own`.
    #[inline]
    fn terms(self, emp: [f64; 2], own: f64) -> (f64, f64) {
        match self {
            Coupling::Individual { lambda } => (
                lambda * emp[0] + (1.0 - lambda) * own,
                lambda * emp[0] * emp[0] + (1.0 - lambda) * own * own,
            ),
            Coupling::Population { p } => {
                let z = p * emp[0] + (1.0 - p) * emp[1];
                (z, z * z)
            }
        }
    }
}

struct Engine {
    groups: Vec<GroupSpec>,
    coupling: Coupling,
    horizon: f64,
    n_steps: usize,
    /// Deterministic group means per simulation node.
    xdet: Vec<[f64; 2]>,
    /// Agent-0 policies of group `dev_group`, one per arm. Empty means a
    /// plain simulation where agent 0 follows its group's policy.
    arms: Vec<AgentPolicy>,
    dev_group: usize,
}

struct RunOutput {
    mean_path: Vec<[f64; 2]>,
    max_error: f64,
    role_costs: Vec<f64>,
    dev_costs: Vec<f64>,
}

impl Engine {
    fn n_arms(&self) -> usize {
        self.arms.len().max(1)
    }

    fn run(&self, seed: u64, run: usize) -> Result<RunOutput, SimError> {
        let dt = self.horizon / self.n_steps as f64;
        let sqrt_dt = dt.sqrt();
        let n_arms = self.n_arms();
        let n_groups = self.groups.len();
        let group_of: Vec<usize> = self
            .groups
            .iter()
            .enumerate()
            .flat_map(|(g, spec)| std::iter::repeat_n(g, spec.n))
            .collect();
        let dev_index: usize = self.groups[..self.dev_group].iter().map(|g| g.n).sum();
        let n_total = group_of.len();

        let mut normals = Normals::new(stream(seed, run as u64));
        let mut x = vec![vec![0.0; n_total]; n_arms];
        for (i, &g) in group_of.iter().enumerate() {
            let c = &self.groups[g].coeffs;
            let x0 = c.mu0_mean + c.mu0_var.sqrt() * normals.sample();
            for arm in x.iter_mut() {
                arm[i] = x0;
            }
        }

        let mut group_cost = vec![[0.0; 2]; n_arms];
        let mut dev_cost = vec![0.0; n_arms];
        let mut mean_path = Vec::with_capacity(self.n_steps + 1);
        let mut max_error = 0.0_f64;
        let mut emp = vec![[0.0; 2]; n_arms];

        for j in 0..=self.n_steps {
            for (a, xa) in x.iter().enumerate() {
                let mut sums = [0.0; 2];
                for (i, &g) in group_of.iter().enumerate() {
                    sums[g] += xa[i];
                }
                for g in 0..n_groups {
                    emp[a][g] = sums[g] / self.groups[g].n as f64;
                }
            }
            mean_path.push(emp[0]);
            for g in 0..n_groups {
                max_error = max_error.max((emp[0][g] - self.xdet[j][g]).abs());
            }
            if j == self.n_steps {
                break;
            }
            let xd = self.xdet[j];
            for i in 0..n_total {
                let g = group_of[i];
                let GroupSpec { coeffs: c, policy, .. } = &self.groups[g];
                let shock = c.sigma * sqrt_dt * normals.sample();
                for a in 0..n_arms {
                    let pol = if i == dev_index && !self.arms.is_empty() {
                        &self.arms[a]
                    } else {
                        policy
                    };
                    let xi = x[a][i];
                    let alpha = pol.gs[j] * xi + pol.gm[j][0] * xd[0] + pol.gm[j][1] * xd[1] + pol.ic[j];
                    let (drift_mean, cost_mean) = self.coupling.terms(emp[a], pol.own[j]);
                    let running =
                        0.5 * (c.c_alpha * alpha * alpha + c.c_x * xi * xi + c.c_mu * cost_mean) * dt;
                    group_cost[a][g] += running;
                    if i == dev_index {
                        dev_cost[a] += running;
                    }
                    let next = xi + (c.b_alpha * alpha + c.b_x * xi + c.b_mu * drift_mean) * dt + shock;
                    if !next.is_finite() {
                        return Err(SimError::NonFinite { run, agent: i, step: j + 1 });
                    }
                    x[a][i] = next;
                }
            }
        }
        for (a, xa) in x.iter().enumerate() {
            for (i, &g) in group_of.iter().enumerate() {
                let term = 0.5 * self.groups[g].coeffs.c_t * xa[i] * xa[i];
                group_cost[a][g] += term;
                if i == dev_index {
                    dev_cost[a] += term;
                }
            }
        }
        Ok(RunOutput {
            mean_path,
            max_error,
            role_costs: (0..n_groups)
                .map(|g| group_cost[0][g] / self.groups[g].n as f64)
                .collect(),
            dev_costs: dev_cost,
        })
    }

    fn run_all(&self, seed: u64, n_runs: usize, mode: ExecMode) -> Result<Vec<RunOutput>, SimError> {
        try_map_indexed(n_runs, mode, |r| self.run(seed, r))
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(engine: &Engine, runs: &[RunOutput], roles: &[&str], warnings: Vec<String>) -> SimulationResult {
    let n_groups = engine.groups.len();
    let nodes = engine.n_steps + 1;
    let n_runs = runs.len() as f64;
    let mut mean_path = vec![vec![0.0; nodes]; n_groups];
    for r in runs {
        for (k, m) in r.mean_path.iter().enumerate() {
            for g in 0..n_groups {
                mean_path[g][k] += m[g];
            }
        }
    }
    for path in &mut mean_path {
        for v in path.iter_mut() {
            *v /= n_runs;
        }
    }
    let errors: Vec<f64> = runs.iter().map(|r| r.max_error).collect();
    let (err, err_se) = mean_and_se(&errors);
    let cost_estimates = roles
        .iter()
        .enumerate()
        .map(|(g, role)| {
            let v: Vec<f64> = runs.iter().map(|r| r.role_costs[g]).collect();
            let (mean, std_error) = mean_and_se(&v);
            CostEstimate {
                role: role.to_string(),
                mean,
                std_error,
            }
        })
        .collect();
    let dt = engine.horizon / engine.n_steps as f64;
    SimulationResult {
        times: (0..nodes)
            .map(|k| if k == engine.n_steps { engine.horizon } else { k as f64 * dt })
            .collect(),
        empirical_mean_path: mean_path,
        reference_mean_path: (0..n_groups)
            .map(|g| engine.xdet.iter().map(|x| x[g]).collect())
            .collect(),
        mean_consistency_error: err,
        mean_consistency_std_error: err_se,
        cost_estimates,
        run_costs: runs.iter().map(|r| r.role_costs.clone()).collect(),
        warnings,
    }
}

fn check_horizon(policy: f64, model: f64) -> Result<(), SimError> {
    if (policy - model).abs() > 1e-12 * model.abs().max(1.0) {
        return Err(SimError::HorizonMismatch { policy, model });
    }
    Ok(())
}

fn sim_times(horizon: f64, n_steps: usize) -> Vec<f64> {
    let grid = TimeGrid::new(horizon, n_steps).expect("validated sizes");
    grid.nodes().collect()
}

// ---------------------------------------------------------------------------
// Mixed individual
// ---------------------------------------------------------------------------

/// Mean path of a population in which everyone plays `policy`.
pub fn policy_mean_path_mi(params: &MiParams, policy: &FeedbackPolicy) -> Result<Vec<f64>, RiccatiError> {
    let (gs, gm, ic) = (
        Sampled::new(&policy.gain_self),
        Sampled::new(&policy.gain_mean),
        Sampled::new(&policy.intercept),
    );
    integrate_forward(&policy.grid, params.mu0_mean, "mean", |k, s, m| {
        params.b_alpha * ((gs.at(k, s) + gm.at(k, s)) * m + ic.at(k, s)) + (params.b_x + params.b_mu) * m
    })
}

/// Own-law mean of a single agent playing `policy` while the population
/// follows `xbar_det`.
pub fn own_mean_path_mi(
    params: &MiParams,
    policy: &FeedbackPolicy,
    xbar_det: &[f64],
) -> Result<Vec<f64>, RiccatiError> {
    let (gs, gm, ic, xd) = (
        Sampled::new(&policy.gain_self),
        Sampled::new(&policy.gain_mean),
        Sampled::new(&policy.intercept),
        Sampled::new(xbar_det),
    );
    let l = params.lambda;
    integrate_forward(&policy.grid, params.mu0_mean, "own_mean", |k, s, m| {
        let x = xd.at(k, s);
        params.b_alpha * (gs.at(k, s) * m + gm.at(k, s) * x + ic.at(k, s))
            + params.b_x * m
            + params.b_mu * (l * x + (1.0 - l) * m)
    })
}

/// Best response to a frozen population mean path, with the own-law mean it
/// induces.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub policy: FeedbackPolicy,
    pub own_mean: Vec<f64>,
}

/// Optimal control of one agent facing a frozen population mean `xbar_det`.
///
/// The agent still feels its own law through the `(1 - lambda)` terms, so the
/// adjoint is `Y = A X + D m + h` with `m` the agent's own mean:
///
/// ```text
/// D' = k D^2 + 2k A D - 2 (b_X + b_mu (1-l)) D - 2 b_mu (1-l) A - c_mu (1-l),  D_T = 0
/// h' = (k (A + D) - b_X - b_mu (1-l)) h - b_mu l (A + D) xbar_det,            h_T = 0
/// ```
pub fn best_response_mi(
    params: &MiParams,
    grid: &TimeGrid,
    xbar_det: &[f64],
) -> Result<BestResponse, RiccatiError> {
    let k = params.control_authority();
    let (bx, bmu, cmu) = (params.b_x, params.b_mu, params.c_mu);
    let w = 1.0 - params.lambda;
    let a = integrate_a_mi(params, grid)?;
    let sa = Sampled::new(&a);
    let d = integrate_backward(grid, 0.0, "D", |n, s, d| {
        let a = sa.at(n, s);
        k * d * d + 2.0 * k * a * d - 2.0 * (bx + bmu * w) * d - 2.0 * bmu * w * a - cmu * w
    })?;
    let sd = Sampled::new(&d);
    let sx = Sampled::new(xbar_det);
    let h = integrate_backward(grid, 0.0, "h", |n, s, h| {
        let ad = sa.at(n, s) + sd.at(n, s);
        (k * ad - bx - bmu * w) * h - bmu * params.lambda * ad * sx.at(n, s)
    })?;
    let sh = Sampled::new(&h);
    let m = integrate_forward(grid, params.mu0_mean, "own_mean", |n, s, m| {
        let (a, d, x) = (sa.at(n, s), sd.at(n, s), sx.at(n, s));
        -k * ((a + d) * m + sh.at(n, s)) + bx * m + bmu * (params.lambda * x + w * m)
    })?;
    let g = -params.gain_factor();
    Ok(BestResponse {
        policy: FeedbackPolicy {
            grid: grid.clone(),
            gain_self: a.iter().map(|a| g * a).collect(),
            gain_mean: vec![0.0; grid.len()],
            intercept: (0..grid.len()).map(|i| g * (d[i] * m[i] + h[i])).collect(),
        },
        own_mean: m,
    })
}

fn resample(grid: &TimeGrid, values: &[f64], times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| grid.interpolate(values, t)).collect()
}

fn sample_mi(policy: &FeedbackPolicy, own: &[f64], times: &[f64]) -> AgentPolicy {
    let g = &policy.grid;
    AgentPolicy {
        gs: resample(g, &policy.gain_self, times),
        gm: resample(g, &policy.gain_mean, times).into_iter().map(|v| [v, 0.0]).collect(),
        ic: resample(g, &policy.intercept, times),
        own: resample(g, own, times),
    }
}

fn mi_engine(
    params: &MiParams,
    policy: &FeedbackPolicy,
    config: &SimConfig,
) -> Result<(Engine, Vec<f64>), Error> {
    config.validate()?;
    check_horizon(policy.grid.horizon(), params.horizon)?;
    let xbar = policy_mean_path_mi(params, policy)?;
    let times = sim_times(params.horizon, config.n_steps);
    let engine = Engine {
        groups: vec![GroupSpec {
            n: config.n_agents,
            coeffs: mi_group(params),
            policy: sample_mi(policy, &xbar, &times),
        }],
        coupling: Coupling::Individual { lambda: params.lambda },
        horizon: params.horizon,
        n_steps: config.n_steps,
        xdet: resample(&policy.grid, &xbar, &times).into_iter().map(|v| [v, 0.0]).collect(),
        arms: Vec::new(),
        dev_group: 0,
    };
    Ok((engine, xbar))
}

fn mi_group(p: &MiParams) -> GroupParams {
    GroupParams {
        b_alpha: p.b_alpha,
        b_x: p.b_x,
        b_mu: p.b_mu,
        sigma: p.sigma,
        c_alpha: p.c_alpha,
        c_x: p.c_x,
        c_mu: p.c_mu,
        c_t: p.c_t,
        mu0_mean: p.mu0_mean,
        mu0_var: p.mu0_var,
    }
}

pub fn simulate_mi(params: &MiParams, policy: &FeedbackPolicy, config: &SimConfig) -> Result<SimulationResult, Error> {
    simulate_mi_with(params, policy, config, ExecMode::default())
}

pub fn simulate_mi_with(
    params: &MiParams,
    policy: &FeedbackPolicy,
    config: &SimConfig,
    mode: ExecMode,
) -> Result<SimulationResult, Error> {
    let (engine, _) = mi_engine(params, policy, config)?;
    let runs = engine.run_all(config.seed, config.n_runs, mode)?;
    Ok(summarize(&engine, &runs, &["agent"], Vec::new()))
}

fn epsilon_from_runs(labels: Vec<String>, runs: &[RunOutput]) -> EpsilonEstimate {
    let family: Vec<DeviationOutcome> = labels
        .into_iter()
        .enumerate()
        .map(|(m, label)| {
            let diffs: Vec<f64> = runs.iter().map(|r| r.dev_costs[0] - r.dev_costs[m + 1]).collect();
            let (gain, se) = mean_and_se(&diffs);
            DeviationOutcome {
                label,
                gain,
                half_width: Z95 * se,
            }
        })
        .collect();
    let best = family
        .iter()
        .max_by(|a, b| a.gain.total_cmp(&b.gain))
        .cloned()
        .unwrap_or(DeviationOutcome {
            label: String::new(),
            gain: 0.0,
            half_width: 0.0,
        });
    EpsilonEstimate {
        epsilon_hat: best.gain,
        epsilon_clipped: best.gain.max(0.0),
        half_width: best.half_width,
        argmax: best.label,
        family,
        n_runs: runs.len(),
    }
}

pub fn estimate_epsilon_nash_mi(
    params: &MiParams,
    policy: &FeedbackPolicy,
    config: &SimConfig,
    family: &DeviationFamily,
) -> Result<EpsilonEstimate, Error> {
    estimate_epsilon_nash_mi_with(params, policy, config, family, ExecMode::default())
}

/// Agent 0 tries each member of `family` while everyone else keeps `policy`.
pub fn estimate_epsilon_nash_mi_with(
    params: &MiParams,
    policy: &FeedbackPolicy,
    config: &SimConfig,
    family: &DeviationFamily,
    mode: ExecMode,
) -> Result<EpsilonEstimate, Error> {
    let (mut engine, xbar) = mi_engine(params, policy, config)?;
    let times = sim_times(params.horizon, config.n_steps);
    let arm = |pol: &FeedbackPolicy| -> Result<AgentPolicy, Error> {
        let own = own_mean_path_mi(params, pol, &xbar)?;
        Ok(sample_mi(pol, &own, &times))
    };
    let mut labels = Vec::new();
    let mut arms = vec![arm(policy)?];
    for &f in &family.factors {
        labels.push(format!("gain_self x {f}"));
        arms.push(arm(&policy.scaled(f, 1.0))?);
        labels.push(format!("gain_mean x {f}"));
        arms.push(arm(&policy.scaled(1.0, f))?);
    }
    if family.best_response {
        let br = best_response_mi(params, &policy.grid, &xbar)?;
        labels.push("best_response".into());
        arms.push(sample_mi(&br.policy, &br.own_mean, &times));
    }
    engine.arms = arms;
    let runs = engine.run_all(config.seed, config.n_runs, mode)?;
    Ok(epsilon_from_runs(labels, &runs))
}

// ---------------------------------------------------------------------------
// Mixed population
// ---------------------------------------------------------------------------

/// Group means when both groups play `policy`.
pub fn policy_mean_path_mp(params: &MpParams, policy: &MpFeedbackPolicy) -> Result<Vec<Vec2>, RiccatiError> {
    let (gs, gm, ic) = (
        Sampled::new(&policy.gain_self),
        Sampled::new(&policy.gain_mean),
        Sampled::new(&policy.intercept),
    );
    let groups = [&params.nc, &params.c];
    let p = params.p;
    integrate_forward(&policy.grid, params.initial_means(), "mean", |k, s, m| {
        let (gs, gm, ic) = (gs.at(k, s), gm.at(k, s), ic.at(k, s));
        let feedback = gm * m + ic;
        let z = p * m.0[0] + (1.0 - p) * m.0[1];
        let mut out = Vec2::ZERO;
        for g in 0..2 {
            let c = groups[g];
            let alpha = gs.0[g] * m.0[g] + feedback.0[g];
            out.0[g] = c.b_alpha * alpha + c.b_x * m.0[g] + c.b_mu * z;
        }
        out
    })
}

fn sample_mp(policy: &MpFeedbackPolicy, g: usize, times: &[f64]) -> AgentPolicy {
    let grid = &policy.grid;
    let col = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let v: Vec<f64> = (0..grid.len()).map(f).collect();
        resample(grid, &v, times)
    };
    let gs = col(&|k| policy.gain_self[k].0[g]);
    let gm0 = col(&|k| policy.gain_mean[k].0[g][0]);
    let gm1 = col(&|k| policy.gain_mean[k].0[g][1]);
    AgentPolicy {
        gs,
        gm: gm0.into_iter().zip(gm1).map(|(a, b)| [a, b]).collect(),
        ic: col(&|k| policy.intercept[k].0[g]),
        own: vec![0.0; times.len()],
    }
}

fn mp_engine(
    params: &MpParams,
    policy: &MpFeedbackPolicy,
    config: &MpSimConfig,
) -> Result<(Engine, Vec<Vec2>, Vec<String>), Error> {
    config.validate()?;
    check_horizon(policy.grid.horizon(), params.horizon)?;
    let mut warnings = Vec::new();
    let total = (config.n_nc + config.n_c) as f64;
    if (config.empirical_proportion() - params.p).abs() > 1.0 / total {
        warnings.push(format!(
            "agent counts imply p = {:.6} but the model uses p = {}",
            config.empirical_proportion(),
            params.p
        ));
    }
    let xbar = policy_mean_path_mp(params, policy)?;
    let times = sim_times(params.horizon, config.n_steps);
    let xdet = (0..2)
        .map(|g| {
            let v: Vec<f64> = xbar.iter().map(|x| x.0[g]).collect();
            resample(&policy.grid, &v, &times)
        })
        .collect::<Vec<_>>();
    let engine = Engine {
        groups: vec![
            GroupSpec {
                n: config.n_nc,
                coeffs: params.nc.clone(),
                policy: sample_mp(policy, 0, &times),
            },
            GroupSpec {
                n: config.n_c,
                coeffs: params.c.clone(),
                policy: sample_mp(policy, 1, &times),
            },
        ],
        coupling: Coupling::Population { p: params.p },
        horizon: params.horizon,
        n_steps: config.n_steps,
        xdet: (0..times.len()).map(|k| [xdet[0][k], xdet[1][k]]).collect(),
        arms: Vec::new(),
        dev_group: Group::NonCooperative.index(),
    };
    Ok((engine, xbar, warnings))
}

pub fn simulate_mp(params: &MpParams, policy: &MpFeedbackPolicy, config: &MpSimConfig) -> Result<SimulationResult, Error> {
    simulate_mp_with(params, policy, config, ExecMode::default())
}

/// Cooperative cost is the social average over cooperative agents; the
/// non-cooperative figure is the average individual cost.
pub fn simulate_mp_with(
    params: &MpParams,
    policy: &MpFeedbackPolicy,
    config: &MpSimConfig,
    mode: ExecMode,
) -> Result<SimulationResult, Error> {
    let (engine, _, warnings) = mp_engine(params, policy, config)?;
    let runs = engine.run_all(config.seed, config.n_runs, mode)?;
    Ok(summarize(&engine, &runs, &["non_cooperative", "cooperative"], warnings))
}

pub fn estimate_epsilon_nash_mp(
    params: &MpParams,
    policy: &MpFeedbackPolicy,
    config: &MpSimConfig,
    family: &DeviationFamily,
) -> Result<EpsilonEstimate, Error> {
    estimate_epsilon_nash_mp_with(params, policy, config, family, ExecMode::default())
}

/// Deviation by one non-cooperative agent. Its best response treats the
/// blended mean `p xbar_NC + (1 - p) xbar_C` as exogenous, which is the
/// `lambda = 1` case of [`best_response_mi`].
pub fn estimate_epsilon_nash_mp_with(
    params: &MpParams,
    policy: &MpFeedbackPolicy,
    config: &MpSimConfig,
    family: &DeviationFamily,
    mode: ExecMode,
) -> Result<EpsilonEstimate, Error> {
    let (mut engine, xbar, warnings) = mp_engine(params, policy, config)?;
    let _ = warnings;
    let times = sim_times(params.horizon, config.n_steps);
    let nc = Group::NonCooperative.index();
    let mut labels = Vec::new();
    let mut arms = vec![sample_mp(policy, nc, &times)];
    for &f in &family.factors {
        labels.push(format!("gain_self x {f}"));
        arms.push(sample_mp(&policy.scaled(nc, f, 1.0), nc, &times));
        labels.push(format!("gain_mean x {f}"));
        arms.push(sample_mp(&policy.scaled(nc, 1.0, f), nc, &times));
    }
    if family.best_response {
        let blended: Vec<f64> = xbar.iter().map(|x| params.p * x.0[0] + (1.0 - params.p) * x.0[1]).collect();
        let mi = MiParams::from_group(&params.nc, 1.0, params.horizon);
        let br = best_response_mi(&mi, &policy.grid, &blended)?;
        labels.push("best_response".into());
        let mut arm = sample_mi(&br.policy, &br.own_mean, &times);
        arm.gm = vec![[0.0, 0.0]; times.len()];
        arms.push(arm);
    }
    engine.arms = arms;
    let runs = engine.run_all(config.seed, config.n_runs, mode)?;
    Ok(epsilon_from_runs(labels, &runs))
}

// ---------------------------------------------------------------------------
// Deterministic costs
// ---------------------------------------------------------------------------

/// Which representative cost to evaluate along the mean-field solution.
#[derive(Debug, Clone, Copy)]
pub enum CostModel<'a> {
    Mi {
        params: &'a MiParams,
        policy: &'a FeedbackPolicy,
        solution: &'a RiccatiSolutionMi,
    },
    Mp {
        params: &'a MpParams,
        policy: &'a MpFeedbackPolicy,
        solution: &'a RiccatiSolutionMp,
        group: Group,
    },
}

/// Variance of a state with feedback `gs` on itself: `v' = 2 (b_X + b_alpha gs) v + sigma^2`,
/// trapezoid rule (exact for the linear right-hand side's implicit part).
fn variance_path(grid: &TimeGrid, gs: &[f64], b_x: f64, b_alpha: f64, sigma: f64, v0: f64) -> Vec<f64> {
    let h = grid.dt();
    let rate = |k: usize| 2.0 * (b_x + b_alpha * gs[k]);
    let mut v = vec![v0; grid.len()];
    for k in 0..grid.n_steps() {
        v[k + 1] = (v[k] * (1.0 + 0.5 * h * rate(k)) + h * sigma * sigma) / (1.0 - 0.5 * h * rate(k + 1));
    }
    v
}

fn trapezoid(grid: &TimeGrid, f: &[f64]) -> f64 {
    let h = grid.dt();
    let n = f.len() - 1;
    h * (0.5 * (f[0] + f[n]) + f[1..n].iter().sum::<f64>())
}

/// Mean-field cost of the representative agent from first and second moments.
pub fn evaluate_cost_deterministic(model: CostModel<'_>) -> f64 {
    match model {
        CostModel::Mi { params, policy, solution } => {
            let grid = &policy.grid;
            let v = variance_path(grid, &policy.gain_self, params.b_x, params.b_alpha, params.sigma, params.mu0_var);
            let running: Vec<f64> = (0..grid.len())
                .map(|k| {
                    let (m, gs) = (solution.xbar[k], policy.gain_self[k]);
                    let mean_alpha = gs * m + policy.gain_mean[k] * m + policy.intercept[k];
                    let alpha2 = gs * gs * v[k] + mean_alpha * mean_alpha;
                    // own-law and population means coincide at equilibrium
                    0.5 * (params.c_alpha * alpha2 + params.c_x * (v[k] + m * m) + params.c_mu * m * m)
                })
                .collect();
            let n = grid.n_steps();
            trapezoid(grid, &running) + 0.5 * params.c_t * (v[n] + solution.xbar[n].powi(2))
        }
        CostModel::Mp { params, policy, solution, group } => {
            let grid = &policy.grid;
            let g = group.index();
            let c = params.group(group);
            let gs: Vec<f64> = policy.gain_self.iter().map(|v| v.0[g]).collect();
            let v = variance_path(grid, &gs, c.b_x, c.b_alpha, c.sigma, c.mu0_var);
            let p = params.p;
            let running: Vec<f64> = (0..grid.len())
                .map(|k| {
                    let m = solution.xbar[k];
                    let mean_alpha = gs[k] * m.0[g] + (policy.gain_mean[k] * m + policy.intercept[k]).0[g];
                    let alpha2 = gs[k] * gs[k] * v[k] + mean_alpha * mean_alpha;
                    let z = p * m.0[0] + (1.0 - p) * m.0[1];
                    0.5 * (c.c_alpha * alpha2 + c.c_x * (v[k] + m.0[g] * m.0[g]) + c.c_mu * z * z)
                })
                .collect();
            let n = grid.n_steps();
            trapezoid(grid, &running) + 0.5 * c.c_t * (v[n] + solution.xbar[n].0[g].powi(2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_mi, solve_mp};
    use crate::riccati::Variant;

    fn unit_mi() -> (MiParams, RiccatiSolutionMi, FeedbackPolicy) {
        let p = MiParams::unit(0.5);
        let (s, pol) = solve_mi(&p, &TimeGrid::new(1.0, 1000).unwrap(), Variant::FbsdeConsistent).unwrap();
        (p, s, pol)
    }

    #[test]
    fn noiseless_single_agent_follows_the_mean_ode() {
        let p = MiParams {
            mu0_var: 0.0,
            sigma: 0.0,
            ..MiParams::unit(0.3)
        };
        let (sol, pol) = solve_mi(&p, &TimeGrid::new(1.0, 2000).unwrap(), Variant::FbsdeConsistent).unwrap();
        // explicit Euler: the gap is ~1e-6 per 1e6 steps
        let cfg = SimConfig { n_agents: 1, n_runs: 1, n_steps: 2_000_000, seed: 1 };
        let r = simulate_mi(&p, &pol, &cfg).unwrap();
        let stride = 2_000_000 / 2000;
        for (k, x) in sol.xbar.iter().enumerate() {
            assert!((r.empirical_mean_path[0][k * stride] - x).abs() <= 1e-6);
        }
        assert!(r.mean_consistency_error <= 1e-6, "{}", r.mean_consistency_error);
    }

    #[test]
    fn noiseless_two_group_agents_follow_the_mean_ode() {
        let mut params = MpParams::symmetric(0.5);
        params.nc.sigma = 0.0;
        params.c.sigma = 0.0;
        params.nc.mu0_var = 0.0;
        params.c.mu0_var = 0.0;
        params.c.mu0_mean = -0.5;
        let (sol, pol) = solve_mp(&params, &TimeGrid::new(1.0, 2000).unwrap(), Variant::FbsdeConsistent).unwrap();
        let cfg = MpSimConfig { n_nc: 1, n_c: 1, n_runs: 1, n_steps: 1_000_000, seed: 3 };
        let r = simulate_mp(&params, &pol, &cfg).unwrap();
        let stride = 1_000_000 / 2000;
        for (k, x) in sol.xbar.iter().enumerate() {
            for g in 0..2 {
                assert!((r.empirical_mean_path[g][k * stride] - x.0[g]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn best_response_to_equilibrium_is_the_equilibrium() {
        let p = MiParams {
            b_mu: 0.6,
            b_x: -0.2,
            ..MiParams::unit(0.4)
        };
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let (sol, pol) = solve_mi(&p, &grid, Variant::FbsdeConsistent).unwrap();
        let br = best_response_mi(&p, &grid, &sol.xbar).unwrap();
        for k in 0..grid.len() {
            assert_eq!(br.policy.gain_self[k], pol.gain_self[k]);
            let eq = pol.gain_mean[k] * sol.xbar[k] + pol.intercept[k];
            assert!((br.policy.intercept[k] - eq).abs() < 1e-9, "{k}");
            assert!((br.own_mean[k] - sol.xbar[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn runs_are_bit_reproducible_across_schedules() {
        let (p, _, pol) = unit_mi();
        let cfg = SimConfig { n_agents: 20, n_runs: 16, n_steps: 50, seed: 99 };
        let a = simulate_mi_with(&p, &pol, &cfg, ExecMode::Parallel).unwrap();
        let b = simulate_mi_with(&p, &pol, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(a, b);
        let c = simulate_mi(&p, &pol, &SimConfig { seed: 100, ..cfg.clone() }).unwrap();
        assert_ne!(a.run_costs, c.run_costs);
    }

    #[test]
    fn identical_arm_has_exactly_zero_gain() {
        let (p, _, pol) = unit_mi();
        let cfg = SimConfig { n_agents: 10, n_runs: 20, n_steps: 50, seed: 5 };
        let fam = DeviationFamily { factors: vec![1.0], best_response: false };
        let e = estimate_epsilon_nash_mi(&p, &pol, &cfg, &fam).unwrap();
        for m in &e.family {
            assert_eq!(m.gain, 0.0);
            assert_eq!(m.half_width, 0.0);
        }
    }

    #[test]
    fn noiseless_fixed_point_has_no_profitable_deviation() {
        let p = MiParams {
            sigma: 0.0,
            mu0_var: 0.0,
            ..MiParams::unit(0.5)
        };
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let (_, pol) = solve_mi(&p, &grid, Variant::FbsdeConsistent).unwrap();
        let cfg = SimConfig { n_agents: 1, n_runs: 1, n_steps: 20_000, seed: 0 };
        let e = estimate_epsilon_nash_mi(&p, &pol, &cfg, &DeviationFamily::best_response_only()).unwrap();
        assert!(e.epsilon_hat.abs() <= 1e-6, "{e:?}");
    }

    #[test]
    fn paired_differences_have_smaller_variance() {
        let (p, _, pol) = unit_mi();
        let cfg = SimConfig { n_agents: 10, n_runs: 200, n_steps: 50, seed: 17 };
        let fam = DeviationFamily { factors: vec![0.9], best_response: false };
        let e = estimate_epsilon_nash_mi(&p, &pol, &cfg, &fam).unwrap();
        // unpaired: equilibrium arm against an independent replication
        let (engine, _) = mi_engine(&p, &pol, &cfg).unwrap();
        let a: Vec<f64> = engine.run_all(17, 200, ExecMode::Sequential).unwrap().iter().map(|r| r.dev_costs[0]).collect();
        let b: Vec<f64> = engine.run_all(18, 200, ExecMode::Sequential).unwrap().iter().map(|r| r.dev_costs[0]).collect();
        let unpaired: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (_, se_unpaired) = mean_and_se(&unpaired);
        for m in &e.family {
            assert!(m.half_width < Z95 * se_unpaired, "{} vs {}", m.half_width, Z95 * se_unpaired);
        }
    }

    #[test]
    fn standard_error_scales_with_runs() {
        let (p, _, pol) = unit_mi();
        let se = |n_runs| {
            let cfg = SimConfig { n_agents: 5, n_runs, n_steps: 40, seed: 7 };
            simulate_mi(&p, &pol, &cfg).unwrap().cost_estimates[0].std_error
        };
        let ratio = se(100) / se(400);
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn zero_policy_without_state_costs_is_free() {
        let p = MiParams {
            sigma: 0.0,
            c_x: 0.0,
            c_mu: 0.0,
            c_t: 0.0,
            ..MiParams::unit(0.5)
        };
        let (sol, pol) = solve_mi(&p, &TimeGrid::new(1.0, 100).unwrap(), Variant::FbsdeConsistent).unwrap();
        let cost = evaluate_cost_deterministic(CostModel::Mi { params: &p, policy: &pol, solution: &sol });
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn noise_enters_cost_through_the_variance_only() {
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let (p, sol, pol) = unit_mi();
        let cost = |sigma: f64| {
            let q = MiParams { sigma, ..p.clone() };
            evaluate_cost_deterministic(CostModel::Mi { params: &q, policy: &pol, solution: &sol })
        };
        // w' = 2 (b_X + b_alpha gs) w + 1, w(0) = 0: the unit-noise variance
        let w = variance_path(&grid, &pol.gain_self, p.b_x, p.b_alpha, 1.0, 0.0);
        let weight: Vec<f64> = (0..grid.len())
            .map(|k| 0.5 * (p.c_alpha * pol.gain_self[k].powi(2) + p.c_x) * w[k])
            .collect();
        let unit = trapezoid(&grid, &weight) + 0.5 * p.c_t * w[grid.n_steps()];
        let (s1, s2) = (0.7, 1.4);
        let predicted = (s2 * s2 - s1 * s1) * unit;
        assert!((cost(s2) - cost(s1) - predicted).abs() <= 1e-8);
    }

    #[test]
    fn large_population_cost_matches_the_mean_field_cost() {
        let (p, sol, pol) = unit_mi();
        let det = evaluate_cost_deterministic(CostModel::Mi { params: &p, policy: &pol, solution: &sol });
        let cfg = SimConfig { n_agents: 1000, n_runs: 40, n_steps: 1000, seed: 11 };
        let r = simulate_mi(&p, &pol, &cfg).unwrap();
        let est = &r.cost_estimates[0];
        assert!((est.mean - det).abs() <= 3.0 * est.std_error + 2e-3, "{} vs {det} (se {})", est.mean, est.std_error);
    }

    #[test]
    fn euler_bias_shrinks_linearly() {
        let (p, sol, pol) = unit_mi();
        let det = evaluate_cost_deterministic(CostModel::Mi { params: &p, policy: &pol, solution: &sol });
        let bias = |n_steps| {
            let cfg = SimConfig { n_agents: 2000, n_runs: 100, n_steps, seed: 23 };
            simulate_mi(&p, &pol, &cfg).unwrap().cost_estimates[0].mean - det
        };
        let (b1, b2, b3) = (bias(25), bias(50), bias(100));
        let (r1, r2) = (b1 / b2, b2 / b3);
        assert!((1.5..2.6).contains(&r1) && (1.4..2.8).contains(&r2), "{b1} {b2} {b3}");
    }

    #[test]
    fn symmetric_groups_swap_cleanly() {
        let params = MpParams::symmetric(0.5);
        let (_, pol) = solve_mp(&params, &TimeGrid::new(1.0, 200).unwrap(), Variant::FbsdeConsistent).unwrap();
        let cfg = MpSimConfig { n_nc: 100, n_c: 100, n_runs: 60, n_steps: 100, seed: 8 };
        let r = simulate_mp(&params, &pol, &cfg).unwrap();
        let swapped = MpParams { nc: params.c.clone(), c: params.nc.clone(), ..params.clone() };
        let (_, pol2) = solve_mp(&swapped, &TimeGrid::new(1.0, 200).unwrap(), Variant::FbsdeConsistent).unwrap();
        let r2 = simulate_mp(&swapped, &pol2, &cfg).unwrap();
        for g in 0..2 {
            let (a, b) = (&r.cost_estimates[g], &r2.cost_estimates[g]);
            assert!((a.mean - b.mean).abs() <= 2.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt());
        }
    }

    #[test]
    fn proportion_mismatch_warns() {
        let params = MpParams::symmetric(0.5);
        let (_, pol) = solve_mp(&params, &TimeGrid::new(1.0, 50).unwrap(), Variant::FbsdeConsistent).unwrap();
        let cfg = MpSimConfig { n_nc: 9, n_c: 1, n_runs: 1, n_steps: 10, seed: 0 };
        assert_eq!(simulate_mp(&params, &pol, &cfg).unwrap().warnings.len(), 1);
        let cfg = MpSimConfig { n_nc: 5, n_c: 5, ..cfg };
        assert!(simulate_mp(&params, &pol, &cfg).unwrap().warnings.is_empty());
    }

    #[test]
    fn mp_noiseless_nc_best_response_is_not_profitable() {
        let mut params = MpParams::symmetric(0.5);
        for g in [&mut params.nc, &mut params.c] {
            g.sigma = 0.0;
            g.mu0_var = 0.0;
        }
        let (_, pol) = solve_mp(&params, &TimeGrid::new(1.0, 2000).unwrap(), Variant::FbsdeConsistent).unwrap();
        let cfg = MpSimConfig { n_nc: 1, n_c: 1, n_runs: 1, n_steps: 20_000, seed: 0 };
        let e = estimate_epsilon_nash_mp(&params, &pol, &cfg, &DeviationFamily::default()).unwrap();
        assert_eq!(e.family.len(), 9);
        assert!(e.family.last().unwrap().gain.abs() < 1e-4, "{e:?}");
    }

    #[test]
    fn errors_are_reported() {
        let (p, _, pol) = unit_mi();
        let bad = SimConfig { n_agents: 0, n_runs: 1, n_steps: 1, seed: 0 };
        assert!(matches!(simulate_mi(&p, &pol, &bad), Err(Error::Sim(SimError::Config(_)))));
        let q = MiParams { horizon: 2.0, ..p.clone() };
        let cfg = SimConfig { n_agents: 1, n_runs: 1, n_steps: 1, seed: 0 };
        assert!(matches!(simulate_mi(&q, &pol, &cfg), Err(Error::Sim(SimError::HorizonMismatch { .. }))));
        // zero mean keeps the mean ODE trivial; the noise then explodes
        let p = MiParams { mu0_mean: 0.0, ..p };
        let explosive = FeedbackPolicy {
            gain_self: vec![1e200; pol.grid.len()],
            intercept: vec![0.0; pol.grid.len()],
            gain_mean: vec![0.0; pol.grid.len()],
            ..pol.clone()
        };
        let cfg = SimConfig { n_agents: 3, n_runs: 2, n_steps: 10, seed: 0 };
        match simulate_mi(&p, &explosive, &cfg) {
            Err(Error::Sim(SimError::NonFinite { run: 0, .. })) => {}
            other => panic!("{other:?}"),
        }
    }
}
