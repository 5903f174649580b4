//! The four verbs. Each writes its artifacts into an output directory and
//! returns a summary used by the sweep table.

use std::path::Path;

use mfmix::conditions::{check_mi_condition, check_mp_assumption, Candidate, ConditionReport, Verdict};
use mfmix::equilibrium::{
    solve_mi, solve_mp, verify_drift_identity_mi, verify_drift_identity_mp, FeedbackPolicy,
    MpFeedbackPolicy, ResidualReport,
};
use mfmix::exec::{map_indexed, ExecMode};
use mfmix::model::build_mp_matrices;
use mfmix::sim::{
    estimate_epsilon_nash_mi, estimate_epsilon_nash_mp, simulate_mi, simulate_mp, EpsilonEstimate,
    SimulationResult,
};
use mfmix::{MiParams, MpParams, RiccatiSolutionMi, RiccatiSolutionMp};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ModelKind, Params, RunConfig};
use crate::error::{CliError, EXIT_SWEEP};
use crate::io::{
    fmt_f64, write_json, write_policy_mi, write_policy_mp, write_solution_mi, write_solution_mp,
    write_table,
};

pub enum Solved {
    Mi {
        params: MiParams,
        solution: RiccatiSolutionMi,
        policy: FeedbackPolicy,
    },
    Mp {
        params: MpParams,
        solution: RiccatiSolutionMp,
        policy: MpFeedbackPolicy,
    },
}

/// Numbers gathered for the sweep summary. `None` means not applicable.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub condition: Option<Verdict>,
    pub condition_margin: Option<f64>,
    pub max_residual: Option<f64>,
    pub m5_norm: Option<f64>,
    pub m6_norm: Option<f64>,
    /// `(role, mean, std_error)`
    pub costs: Vec<(String, f64, f64)>,
    pub mean_consistency_error: Option<f64>,
    pub epsilon: Option<EpsilonEstimate>,
}

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))
}

fn candidates(cfg: &RunConfig) -> Vec<Candidate> {
    cfg.candidates.iter().map(|c| c.to_candidate()).collect()
}

/// Solves without writing anything.
pub fn solve(cfg: &RunConfig) -> Result<Solved, CliError> {
    let grid = cfg.time_grid();
    match &cfg.params {
        Params::Mi(p) => {
            let (solution, policy) = solve_mi(p, &grid, cfg.variant).map_err(|e| CliError::solve(e.into()))?;
            Ok(Solved::Mi {
                params: p.clone(),
                solution,
                policy,
            })
        }
        Params::Mp(p) => {
            let (solution, policy) = solve_mp(p, &grid, cfg.variant).map_err(|e| CliError::solve(e.into()))?;
            Ok(Solved::Mp {
                params: p.clone(),
                solution,
                policy,
            })
        }
    }
}

fn conditions(cfg: &RunConfig, solved: &Solved) -> Result<ConditionReport, CliError> {
    match solved {
        Solved::Mi { params, .. } => Ok(check_mi_condition(params, &cfg.time_grid())),
        Solved::Mp { params, solution, .. } => check_mp_assumption(params, solution, &candidates(cfg))
            .map_err(|e| CliError::validation(Some("candidates".into()), e.to_string())),
    }
}

/// Writes `solution.csv`, `policy.csv` and `report.json`.
pub fn run_solve(cfg: &RunConfig, out: &Path) -> Result<(Solved, Summary), CliError> {
    ensure_dir(out)?;
    let solved = solve(cfg)?;
    let cond = conditions(cfg, &solved)?;
    let mut summary = Summary {
        condition: Some(cond.holds),
        condition_margin: Some(cond.min_margin),
        ..Summary::default()
    };
    let residuals: ResidualReport;
    let mut report = json!({});
    match &solved {
        Solved::Mi { params, solution, policy } => {
            write_solution_mi(&out.join("solution.csv"), solution)?;
            write_policy_mi(&out.join("policy.csv"), policy)?;
            residuals = verify_drift_identity_mi(params, solution);
            report["max_abs_C"] = solution.max_abs_c().into();
        }
        Solved::Mp { params, solution, policy } => {
            write_solution_mp(&out.join("solution.csv"), solution)?;
            write_policy_mp(&out.join("policy.csv"), policy)?;
            residuals = verify_drift_identity_mp(params, solution);
            let m = build_mp_matrices(params);
            summary.m5_norm = Some(m.m5.norm());
            summary.m6_norm = Some(m.m6.norm());
            report["max_abs_C"] = solution.max_abs_c().into();
            report["A_diagonal_max_offdiag"] = solution.max_abs_offdiag_a().into();
            report["M5_norm"] = m.m5.norm().into();
            report["M6_norm"] = m.m6.norm().into();
        }
    }
    summary.max_residual = Some(residuals.max_coefficient_residual);
    report["variant"] = json!(cfg.variant);
    report["conditions"] = json!(cond);
    report["residuals"] = json!(residuals);
    report["config"] = json!(cfg);
    write_json(&out.join("report.json"), &report)?;
    Ok((solved, summary))
}

fn write_sim(out: &Path, sim: &SimulationResult, roles: &[&str]) -> Result<(), CliError> {
    let groups = sim.empirical_mean_path.len();
    let mut header = vec!["t".to_string()];
    if groups == 1 {
        header.extend(["empirical_mean".into(), "reference_mean".into()]);
    } else {
        header.extend(["empirical_NC", "empirical_C", "reference_NC", "reference_C"].map(String::from));
    }
    let rows: Vec<Vec<Option<f64>>> = (0..sim.times.len())
        .map(|k| {
            let mut row = vec![Some(sim.times[k])];
            row.extend((0..groups).map(|g| Some(sim.empirical_mean_path[g][k])));
            row.extend((0..groups).map(|g| Some(sim.reference_mean_path[g][k])));
            row
        })
        .collect();
    write_table(&out.join("sim_means.csv"), &header, &rows)?;

    // run indices are exact in the float format
    let mut header = vec!["run".to_string()];
    header.extend(roles.iter().map(|r| r.to_string()));
    let rows: Vec<Vec<Option<f64>>> = sim
        .run_costs
        .iter()
        .enumerate()
        .map(|(r, costs)| std::iter::once(Some(r as f64)).chain(costs.iter().map(|c| Some(*c))).collect())
        .collect();
    write_table(&out.join("costs.csv"), &header, &rows)?;

    write_json(
        &out.join("simulation.json"),
        &json!({
            "mean_consistency_error": sim.mean_consistency_error,
            "mean_consistency_std_error": sim.mean_consistency_std_error,
            "cost_estimates": sim.cost_estimates,
            "warnings": sim.warnings,
        }),
    )
}

/// Solves, then simulates the finite population. Writes the solve artifacts
/// plus `sim_means.csv`, `costs.csv`, `simulation.json` and, when enabled,
/// `epsilon.json`.
pub fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<Summary, CliError> {
    let settings = cfg
        .sim
        .clone()
        .ok_or_else(|| CliError::validation(Some("sim".into()), "simulate needs a sim section"))?;
    let (solved, mut summary) = run_solve(cfg, out)?;
    let (sim, eps, roles) = match &solved {
        Solved::Mi { params, policy, .. } => {
            let sc = cfg.mi_sim().expect("validated");
            let sim = simulate_mi(params, policy, &sc).map_err(CliError::simulation)?;
            let eps = settings
                .epsilon
                .then(|| estimate_epsilon_nash_mi(params, policy, &sc, &settings.family))
                .transpose()
                .map_err(CliError::simulation)?;
            (sim, eps, vec!["agent"])
        }
        Solved::Mp { params, policy, .. } => {
            let sc = cfg.mp_sim().expect("validated");
            let sim = simulate_mp(params, policy, &sc).map_err(CliError::simulation)?;
            let eps = settings
                .epsilon
                .then(|| estimate_epsilon_nash_mp(params, policy, &sc, &settings.family))
                .transpose()
                .map_err(CliError::simulation)?;
            (sim, eps, vec!["non_cooperative", "cooperative"])
        }
    };
    write_sim(out, &sim, &roles)?;
    if let Some(e) = &eps {
        let deviator = match cfg.model {
            ModelKind::Mi => "agent 0",
            ModelKind::Mp => "non-cooperative agent 0",
        };
        write_json(
            &out.join("epsilon.json"),
            &json!({
                "deviator": deviator,
                "family": settings.family,
                "estimate": e,
            }),
        )?;
    }
    summary.costs = sim
        .cost_estimates
        .iter()
        .map(|c| (c.role.clone(), c.mean, c.std_error))
        .collect();
    summary.mean_consistency_error = Some(sim.mean_consistency_error);
    summary.epsilon = eps;
    Ok(summary)
}

/// Condition check only. Writes `conditions.json` and returns the report.
pub fn run_check(cfg: &RunConfig, out: &Path) -> Result<ConditionReport, CliError> {
    ensure_dir(out)?;
    let report = match &cfg.params {
        // the MI condition needs no solve
        Params::Mi(p) => check_mi_condition(p, &cfg.time_grid()),
        Params::Mp(_) => conditions(cfg, &solve(cfg)?)?,
    };
    write_json(
        &out.join("conditions.json"),
        &json!({ "conditions": report, "config": cfg }),
    )?;
    Ok(report)
}

/// Outcome of one sweep value.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub exit_code: i32,
    pub summary: Summary,
    pub error: Option<CliError>,
}

/// Runs every sweep value into its own subdirectory, then writes
/// `sweep_summary.csv`. Fails with exit code 5 only if no value succeeded.
pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    let spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::validation(Some("sweep".into()), "sweep needs a sweep section"))?;
    ensure_dir(out)?;
    let name = spec.parameter.name();
    let rows: Vec<SweepRow> = map_indexed(spec.values.len(), ExecMode::default(), |i| {
        let value = spec.values[i];
        let dir = out.join(format!("{name}_{i:03}"));
        let result = cfg.with_sweep_value(spec.parameter, value).and_then(|c| {
            if c.sim.is_some() {
                run_simulate(&c, &dir)
            } else {
                run_solve(&c, &dir).map(|(_, s)| s)
            }
        });
        match result {
            Ok(summary) => SweepRow {
                value,
                exit_code: 0,
                summary,
                error: None,
            },
            Err(e) => {
                // keep the failure next to its would-be artifacts
                let _ = std::fs::create_dir_all(&dir)
                    .and_then(|_| std::fs::write(dir.join("error.json"), e.to_json() + "\n"));
                SweepRow {
                    value,
                    exit_code: e.code,
                    summary: Summary::default(),
                    error: Some(e),
                }
            }
        }
    });
    write_sweep_summary(cfg, &out.join("sweep_summary.csv"), name, &rows)?;
    if rows.iter().all(|r| r.exit_code != 0) {
        return Err(CliError {
            code: EXIT_SWEEP,
            error: "sweep",
            field: None,
            message: "every sweep value failed".into(),
        });
    }
    Ok(rows)
}

fn write_sweep_summary(cfg: &RunConfig, path: &Path, name: &str, rows: &[SweepRow]) -> Result<(), CliError> {
    let roles: Vec<&str> = match cfg.model {
        ModelKind::Mi => vec!["agent"],
        ModelKind::Mp => vec!["non_cooperative", "cooperative"],
    };
    let mut header: Vec<String> = [name, "exit_code", "condition", "condition_margin", "max_residual", "M5_norm", "M6_norm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for r in &roles {
        header.push(format!("cost_{r}"));
        header.push(format!("cost_{r}_se"));
    }
    header.extend(
        ["mean_consistency_error", "epsilon_hat", "epsilon_clipped", "epsilon_half_width"].map(String::from),
    );
    let num = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    w.write_record(&header)?;
    for row in rows {
        let s = &row.summary;
        let mut rec = vec![
            fmt_f64(row.value),
            row.exit_code.to_string(),
            s.condition
                .map(|v| serde_json::to_value(v).unwrap().as_str().unwrap().to_string())
                .unwrap_or_default(),
            num(s.condition_margin),
            num(s.max_residual),
            num(s.m5_norm),
            num(s.m6_norm),
        ];
        for r in &roles {
            let c = s.costs.iter().find(|c| c.0 == *r);
            rec.push(num(c.map(|c| c.1)));
            rec.push(num(c.map(|c| c.2)));
        }
        let e = s.epsilon.as_ref();
        rec.extend([
            num(s.mean_consistency_error),
            num(e.map(|e| e.epsilon_hat)),
            num(e.map(|e| e.epsilon_clipped)),
            num(e.map(|e| e.half_width)),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Re-reads a report's residual block, for round-trip checks.
pub fn report_residuals(report: &Value) -> Option<ResidualReport> {
    serde_json::from_value(report.get("residuals")?.clone()).ok()
}
