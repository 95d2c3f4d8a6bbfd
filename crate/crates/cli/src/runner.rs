//! `wienervar run`: one experiment, its artifacts and a summary table.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use serde_json::{json, Value};
use wienervar::functionals::FunctionalSpec;
use wienervar::girsanov::{importance_estimate, DriftPolicy, Feature, MarkovFeedback, ParametricBasis};
use wienervar::sde::{conditioned_interval_experiment, invertibility_probe, left_inverse_residual};
use wienervar::solvers::{foellmer_for, grad_descent_optimize, htransform_interval_drift, picard_solve, PolicyRecord, RegressionSpec};
use wienervar::stats::EstimateReport;
use wienervar::variational::{
    entropy_energy_report, finite_fenchel_bruteforce, finite_log_laplace, gap_diagnostic, mc_neg_log_laplace, FiniteSpace,
};
use wienervar::wiener::{BrownianBatch, CMElement, TimeGrid};

use crate::config::{ExperimentConfig, Method};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One line of report.csv and of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub diagnostic: String,
    pub value: f64,
    pub std_error: Option<f64>,
}

impl Row {
    pub fn plain(name: impl Into<String>, value: f64) -> Self {
        Self {
            diagnostic: name.into(),
            value,
            std_error: None,
        }
    }
    pub fn estimate(name: impl Into<String>, e: &EstimateReport) -> Self {
        Self {
            diagnostic: name.into(),
            value: e.value,
            std_error: Some(e.std_error),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub results: Value,
    pub rows: Vec<Row>,
    pub policy: Option<PolicyRecord>,
    pub grid_hash: Option<String>,
    /// Some estimate could not be formed (e.g. every weight was zero).
    pub degenerate: bool,
    /// Extra line printed under the table.
    pub headline: Option<String>,
}

/// Inline policies: `zero`, `foellmer`, `shift:c=C`, `feedback:slope=S,intercept=C`,
/// `htransform:a=A`.
pub fn parse_inline_policy(spec: &str, grid: TimeGrid, f: Option<&FunctionalSpec>, quad_order: usize) -> anyhow::Result<DriftPolicy> {
    let (head, tail) = spec.split_once(':').unwrap_or((spec, ""));
    let params = || -> anyhow::Result<Vec<(String, f64)>> {
        tail.split(',')
            .filter(|s| !s.is_empty())
            .map(|kv| {
                let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("policy parameter `{kv}` is not key=value"))?;
                Ok((k.trim().to_string(), v.trim().parse::<f64>().with_context(|| format!("policy parameter `{kv}`"))?))
            })
            .collect()
    };
    let param = |name: &str, default: Option<f64>| -> anyhow::Result<f64> {
        params()?
            .into_iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v)
            .or(default)
            .ok_or_else(|| anyhow!("policy `{spec}` needs `{name}`"))
    };
    Ok(match head {
        "zero" => DriftPolicy::zero(grid, 1),
        "foellmer" => {
            let f = f.ok_or_else(|| anyhow!("policy `foellmer` needs a functional"))?;
            foellmer_for(f, grid, quad_order)?.negated()
        }
        "shift" => DriftPolicy::Deterministic(CMElement::constant(grid, 1, param("c", None)?)),
        "feedback" => DriftPolicy::MarkovFeedback(MarkovFeedback::linear(param("slope", None)?, param("intercept", Some(0.0))?)),
        "htransform" => htransform_interval_drift(param("a", None)?, grid)?,
        other => bail!("unknown inline policy `{other}`"),
    })
}

fn load_policy(path: &Path, grid: TimeGrid) -> anyhow::Result<DriftPolicy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rec: PolicyRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(rec.to_policy(grid)?)
}

fn configured_policy(cfg: &ExperimentConfig, grid: TimeGrid, f: Option<&FunctionalSpec>) -> anyhow::Result<Option<DriftPolicy>> {
    if let Some(p) = &cfg.policy_file {
        return Ok(Some(load_policy(p, grid)?));
    }
    cfg.policy
        .as_deref()
        .map(|s| parse_inline_policy(s, grid, f, cfg.solver.quad_order))
        .transpose()
}

/// `1,x` gives one global coefficient per feature; `step:1,x` one per step.
pub fn parse_basis(spec: &str) -> anyhow::Result<(Vec<Feature>, bool)> {
    let (per_step, list) = match spec.strip_prefix("step:") {
        Some(rest) => (true, rest),
        None => (false, spec),
    };
    Ok((Feature::parse_list(list)?, per_step))
}

fn any_degenerate(reports: &[&EstimateReport]) -> bool {
    reports.iter().any(|r| r.degenerate)
}

pub fn execute(cfg: &ExperimentConfig) -> anyhow::Result<RunOutput> {
    if cfg.solver.method == Method::Fenchel {
        return run_fenchel(cfg);
    }
    let grid = TimeGrid::new(cfg.grid.n_steps)?;
    let batch = BrownianBatch::streaming(grid, cfg.mc.m_paths, 1, cfg.mc.seed)?;
    let f = cfg.functional.as_deref().map(|s| FunctionalSpec::from_catalog(s, grid)).transpose()?;
    let mut out = match cfg.solver.method {
        Method::Laplace => run_laplace(cfg, grid, &batch, f.as_ref().expect("validated"))?,
        Method::Optimize => run_optimize(cfg, grid, &batch, f.as_ref().expect("validated"))?,
        Method::Picard => run_picard(cfg, grid, &batch, f.as_ref().expect("validated"))?,
        Method::Foellmer => run_foellmer(cfg, grid, &batch, f.as_ref().expect("validated"))?,
        Method::Probe => run_probe(cfg, grid, &batch, f.as_ref().expect("validated"))?,
        Method::Interval => run_interval(cfg, grid)?,
        Method::Fenchel => unreachable!(),
    };
    out.grid_hash = Some(grid.hash());
    Ok(out)
}

fn run_fenchel(cfg: &ExperimentConfig) -> anyhow::Result<RunOutput> {
    let fs = FiniteSpace::new(cfg.gamma.clone().expect("validated"), cfg.f.clone().expect("validated"))?;
    let (value, nu) = finite_log_laplace(&fs);
    let brute = finite_fenchel_bruteforce(&fs, 1000)?;
    let plug_in = fs.fenchel_objective(&nu);
    let mut rows = vec![
        Row::plain("log_laplace", value),
        Row::plain("fenchel_plug_in", plug_in),
        Row::plain("fenchel_bruteforce", brute),
    ];
    rows.extend(nu.iter().enumerate().map(|(i, v)| Row::plain(format!("nu_star[{i}]"), *v)));
    Ok(RunOutput {
        results: json!({
            "log_laplace": value,
            "nu_star": nu,
            "fenchel_plug_in": plug_in,
            "fenchel_bruteforce": brute,
            "bruteforce_resolution": 1000,
        }),
        rows,
        policy: None,
        grid_hash: None,
        headline: Some(format!(
            "log E[e^f] = {value:.4}, nu* = ({})",
            nu.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
        )),
        degenerate: false,
    })
}

fn run_laplace(cfg: &ExperimentConfig, grid: TimeGrid, batch: &BrownianBatch, f: &FunctionalSpec) -> anyhow::Result<RunOutput> {
    let nll = mc_neg_log_laplace(f, batch)?;
    let exact = f.exact_neg_log_laplace();
    let mut rows = vec![Row::estimate("neg_log_laplace", &nll)];
    if let Some(e) = exact {
        rows.push(Row::plain("neg_log_laplace_exact", e));
    }
    let mut results = json!({
        "functional": f.name(),
        "neg_log_laplace": nll,
        "neg_log_laplace_exact": exact,
        "within_3_se": exact.map(|e| nll.within_se(e, 3.0)),
    });
    let mut degenerate = nll.degenerate;
    let mut record = None;
    if let Some(policy) = configured_policy(cfg, grid, Some(f))? {
        let is = importance_estimate(f, &policy, batch)?;
        let gap = gap_diagnostic(f, &policy, batch)?;
        rows.push(Row::estimate("importance_mean", &is));
        rows.push(Row::estimate("j", &gap.j_value));
        rows.push(Row::plain("gap", gap.gap));
        degenerate |= is.degenerate;
        results["policy_kind"] = json!(policy.kind_name());
        results["importance"] = serde_json::to_value(&is)?;
        results["gap"] = serde_json::to_value(&gap)?;
        record = PolicyRecord::from_policy(&policy, grid).ok();
    }
    Ok(RunOutput {
        results,
        rows,
        policy: record,
        grid_hash: None,
        headline: None,
        degenerate,
    })
}

fn run_optimize(cfg: &ExperimentConfig, grid: TimeGrid, batch: &BrownianBatch, f: &FunctionalSpec) -> anyhow::Result<RunOutput> {
    let (features, per_step) = parse_basis(cfg.solver.basis.as_deref().unwrap_or("1,x"))?;
    let init = ParametricBasis::zeros(features, per_step, grid);
    let out = grad_descent_optimize(f, init, batch, cfg.solver.steps, cfg.solver.step_size)?;
    let policy = DriftPolicy::ParametricBasis(out.basis.clone());
    let gap = gap_diagnostic(f, &policy, batch)?;
    let rows = vec![
        Row::plain("j_initial", out.trace[0]),
        Row::estimate("j_final", &gap.j_value),
        Row::estimate("neg_log_laplace", &gap.neg_log_laplace),
        Row::plain("gap", gap.gap),
        Row::plain("halvings", out.halvings as f64),
        Row::plain("final_step_size", out.step_size),
    ];
    Ok(RunOutput {
        results: json!({
            "functional": f.name(),
            "trace": out.trace,
            "theta": out.basis.theta,
            "halvings": out.halvings,
            "aborted": out.aborted,
            "final_step_size": out.step_size,
            "gap": gap,
        }),
        rows,
        degenerate: any_degenerate(&[&gap.neg_log_laplace]),
        policy: Some(PolicyRecord::from_policy(&policy, grid)?),
        grid_hash: None,
        headline: None,
    })
}

fn run_picard(cfg: &ExperimentConfig, grid: TimeGrid, batch: &BrownianBatch, f: &FunctionalSpec) -> anyhow::Result<RunOutput> {
    let reg = match cfg.solver.basis.as_deref() {
        Some(b) => RegressionSpec::with_features(Feature::parse_list(b)?),
        None => RegressionSpec::default(),
    };
    let (policy, state) = picard_solve(f, batch, &reg, cfg.solver.tol, cfg.solver.max_iter)?;
    let gap = gap_diagnostic(f, &policy, batch)?;
    let mut rows = vec![
        Row::plain("iterations", state.iteration as f64),
        Row::plain("converged", if state.converged { 1.0 } else { 0.0 }),
    ];
    rows.extend(state.residuals.iter().enumerate().map(|(n, r)| Row::plain(format!("residual[{n}]"), *r)));
    rows.push(Row::estimate("j", &gap.j_value));
    rows.push(Row::plain("gap", gap.gap));
    Ok(RunOutput {
        results: json!({
            "functional": f.name(),
            "features": reg.features.iter().map(|x| x.name()).collect::<Vec<_>>(),
            "ridge": reg.ridge,
            "residuals": state.residuals,
            "iterations": state.iteration,
            "converged": state.converged,
            "best_index": state.best_index,
            "gap": gap,
        }),
        rows,
        degenerate: any_degenerate(&[&gap.neg_log_laplace]),
        policy: Some(PolicyRecord::from_policy(&policy, grid)?),
        grid_hash: None,
        headline: None,
    })
}

fn run_foellmer(cfg: &ExperimentConfig, grid: TimeGrid, batch: &BrownianBatch, f: &FunctionalSpec) -> anyhow::Result<RunOutput> {
    let v = foellmer_for(f, grid, cfg.solver.quad_order)?;
    let u = v.negated();
    let gap = gap_diagnostic(f, &u, batch)?;
    let is = importance_estimate(f, &u, batch)?;
    let crude = importance_estimate(f, &DriftPolicy::zero(grid, 1), batch)?;
    let residual = left_inverse_residual(&u, &v, batch)?;
    let ee = match f.analytic_log_target() {
        Some(t) => Some(entropy_energy_report(&t, &u, batch)?),
        None => None,
    };
    let mut rows = vec![
        Row::estimate("j", &gap.j_value),
        Row::estimate("neg_log_laplace", &gap.neg_log_laplace),
        Row::plain("gap", gap.gap),
        Row::estimate("importance_mean", &is),
        Row::plain("importance_relative_sd", is.relative_sd()),
        Row::plain("crude_relative_sd", crude.relative_sd()),
        Row::estimate("left_inverse_residual", &residual),
    ];
    if let Some(e) = &ee {
        rows.push(Row::estimate("entropy_proxy", &e.entropy_proxy));
        rows.push(Row::estimate("energy", &e.energy));
    }
    Ok(RunOutput {
        results: json!({
            "functional": f.name(),
            "quad_order": cfg.solver.quad_order,
            "gap": gap,
            "importance": is,
            "importance_relative_sd": is.relative_sd(),
            "crude_relative_sd": crude.relative_sd(),
            "left_inverse_residual": residual,
            "entropy_energy": ee,
        }),
        rows,
        degenerate: any_degenerate(&[&gap.neg_log_laplace, &is]),
        policy: Some(PolicyRecord::from_policy(&u, grid)?),
        grid_hash: None,
        headline: None,
    })
}

fn run_probe(cfg: &ExperimentConfig, grid: TimeGrid, batch: &BrownianBatch, f: &FunctionalSpec) -> anyhow::Result<RunOutput> {
    let policy = configured_policy(cfg, grid, Some(f))?.expect("validated");
    let inverse = cfg.inverse_file.as_deref().map(|p| load_policy(p, grid)).transpose()?;
    let rep = invertibility_probe(f, &policy, batch, None, inverse.as_ref())?;
    let mut rows = vec![
        Row::estimate("energy", &rep.energy),
        Row::estimate("j", &rep.gap.j_value),
        Row::plain("gap", rep.gap.gap),
        Row::plain("terminal_membership", rep.terminal_membership),
    ];
    if let Some(e) = &rep.entropy_proxy {
        rows.push(Row::estimate("entropy_proxy", e));
    }
    if let Some(r) = &rep.left_inverse_residual {
        rows.push(Row::estimate("left_inverse_residual", r));
    }
    Ok(RunOutput {
        results: json!({ "functional": f.name(), "policy_kind": policy.kind_name(), "probe": rep }),
        rows,
        degenerate: any_degenerate(&[&rep.gap.neg_log_laplace]),
        policy: PolicyRecord::from_policy(&policy, grid).ok(),
        grid_hash: None,
        headline: None,
    })
}

fn run_interval(cfg: &ExperimentConfig, grid: TimeGrid) -> anyhow::Result<RunOutput> {
    let ex = conditioned_interval_experiment(cfg.solver.a, grid, cfg.mc.m_paths, cfg.mc.seed)?;
    let mut rows = vec![
        Row::plain("neg_log_mass", ex.neg_log_mass),
        Row::plain("terminal_membership", ex.report.terminal_membership),
        Row::plain("ks_statistic", ex.ks_statistic),
        Row::plain("clamped", ex.report.clamped as f64),
    ];
    for c in &ex.by_cap {
        rows.push(Row::estimate(format!("energy[t_max={:.6}]", c.t_max), &c.energy));
        rows.push(Row::plain(format!("membership[t_max={:.6}]", c.t_max), c.terminal_membership));
    }
    Ok(RunOutput {
        results: serde_json::to_value(&ex)?,
        rows,
        policy: PolicyRecord::from_policy(&htransform_interval_drift(cfg.solver.a, grid)?, grid).ok(),
        grid_hash: None,
        headline: None,
        degenerate: false,
    })
}

/// The report.json document. Holds no wall-clock data, so identical
/// configurations give identical bytes.
pub fn report_document(cfg: &ExperimentConfig, out: &RunOutput) -> Value {
    json!({
        "version": VERSION,
        "config": cfg,
        "grid_hash": out.grid_hash,
        "degenerate": out.degenerate,
        "results": out.results,
    })
}

fn csv_field(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

pub fn write_artifacts(cfg: &ExperimentConfig, out: &RunOutput, wall_clock_seconds: f64) -> anyhow::Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut report = serde_json::to_string_pretty(&report_document(cfg, out))?;
    report.push('\n');
    fs::write(dir.join("report.json"), report)?;

    let mut csv = String::from("diagnostic,value,std_error\n");
    for r in &out.rows {
        csv.push_str(&format!("{},{},{}\n", r.diagnostic, r.value, csv_field(r.std_error)));
    }
    fs::write(dir.join("report.csv"), csv)?;

    if let Some(p) = &out.policy {
        let mut text = serde_json::to_string_pretty(p)?;
        text.push('\n');
        fs::write(dir.join("policy.json"), text)?;
    }
    let timing = json!({ "wall_clock_seconds": wall_clock_seconds });
    fs::write(dir.join("timing.json"), format!("{}\n", serde_json::to_string_pretty(&timing)?))?;
    Ok(())
}

pub fn format_table(rows: &[Row]) -> String {
    let width = rows.iter().map(|r| r.diagnostic.len()).max().unwrap_or(10).max(10);
    let mut s = format!("{:<width$}  {:>14}  {:>12}\n", "diagnostic", "value", "std_error");
    for r in rows {
        let se = r.std_error.map_or_else(String::new, |v| format!("{v:.3e}"));
        s.push_str(&format!("{:<width$}  {:>14.6}  {:>12}\n", r.diagnostic, r.value, se));
    }
    s
}
