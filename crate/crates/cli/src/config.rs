//! Experiment configuration: a `key = value` file with flag overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Laplace,
    Optimize,
    Picard,
    Foellmer,
    Fenchel,
    Probe,
    Interval,
}

impl FromStr for Method {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "laplace" => Self::Laplace,
            "optimize" => Self::Optimize,
            "picard" => Self::Picard,
            "foellmer" => Self::Foellmer,
            "fenchel" => Self::Fenchel,
            "probe" => Self::Probe,
            "interval" => Self::Interval,
            other => return Err(ConfigError(format!("unknown method `{other}`"))),
        })
    }
}

/// A configuration problem; reported with usage text and exit code 64.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Flags of `wienervar run`. Every flag can also be given as a key in the
/// `--config` file (dashes become underscores); flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// laplace | optimize | picard | foellmer | fenchel | probe | interval
    #[arg(long)]
    pub method: Option<String>,
    /// Catalog functional, e.g. `linear:unit` or `terminal:quadratic:beta=1`.
    #[arg(long)]
    pub functional: Option<String>,
    /// Inline policy: zero | foellmer | shift:c=C | feedback:slope=S,intercept=C | htransform:a=A
    #[arg(long)]
    pub policy: Option<String>,
    /// Saved policy (policy.json from an earlier run).
    #[arg(long)]
    pub policy_file: Option<PathBuf>,
    /// Candidate left inverse for `probe`, as a saved policy.
    #[arg(long)]
    pub inverse_file: Option<PathBuf>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub quad_order: Option<usize>,
    /// Features, e.g. `1,x` (global) or `step:1` (one set per step).
    #[arg(long)]
    pub basis: Option<String>,
    /// Interval half-width for `interval`.
    #[arg(long)]
    pub a: Option<f64>,
    /// Reference weights for `fenchel`, comma separated.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Function values for `fenchel`, comma separated.
    #[arg(long = "f")]
    pub f: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McConfig {
    pub m_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    pub steps: usize,
    pub step_size: f64,
    pub quad_order: usize,
    pub basis: Option<String>,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub functional: Option<String>,
    pub policy: Option<String>,
    pub policy_file: Option<PathBuf>,
    pub inverse_file: Option<PathBuf>,
    pub grid: GridConfig,
    pub mc: McConfig,
    pub solver: SolverConfig,
    pub gamma: Option<Vec<f64>>,
    pub f: Option<Vec<f64>>,
    pub out_dir: PathBuf,
}

const KEYS: [&str; 19] = [
    "method",
    "functional",
    "policy",
    "policy_file",
    "inverse_file",
    "n_steps",
    "m",
    "seed",
    "tol",
    "max_iter",
    "steps",
    "step_size",
    "quad_order",
    "basis",
    "a",
    "gamma",
    "f",
    "out_dir",
    "m_paths",
];

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError(format!("line {}: unknown key `{key}`", lineno + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    Ok(out)
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| ConfigError(format!("`{key}`: cannot parse `{x}` as a number"))))
        .collect()
}

fn parse_value<T: FromStr>(key: &str, s: &str) -> Result<T, ConfigError> {
    s.parse().map_err(|_| ConfigError(format!("`{key}`: cannot parse `{s}`")))
}

impl ExperimentConfig {
    /// Resolve file values, flag overrides and defaults.
    pub fn resolve(args: &RunArgs) -> Result<Self, ConfigError> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
                parse_kv(&text)?
            }
            None => BTreeMap::new(),
        };
        Self::from_sources(args, &file, args.config.as_deref().and_then(Path::parent))
    }

    fn from_sources(args: &RunArgs, file: &BTreeMap<String, String>, base: Option<&Path>) -> Result<Self, ConfigError> {
        if file.contains_key("m") && file.contains_key("m_paths") {
            return Err(ConfigError("give either `m` or `m_paths`, not both".into()));
        }
        let get = |k: &str| file.get(k).map(String::as_str);
        let path_from_file = |k: &str| get(k).map(|p| base.map_or_else(|| PathBuf::from(p), |b| b.join(p)));
        let pick_num = |flag: Option<String>, key: &str| flag.or_else(|| get(key).map(str::to_string));

        let method_s = args
            .method
            .clone()
            .or_else(|| get("method").map(str::to_string))
            .ok_or_else(|| ConfigError("missing `method`".into()))?;
        let method: Method = method_s.parse()?;
        let functional = args.functional.clone().or_else(|| get("functional").map(str::to_string));
        let policy = args.policy.clone().or_else(|| get("policy").map(str::to_string));
        let policy_file = args.policy_file.clone().or_else(|| path_from_file("policy_file"));
        let inverse_file = args.inverse_file.clone().or_else(|| path_from_file("inverse_file"));

        let num = |flag: Option<String>, key: &str, default: &str| -> String { pick_num(flag, key).unwrap_or_else(|| default.to_string()) };
        let n_steps: usize = parse_value("n_steps", &num(args.n_steps.map(|v| v.to_string()), "n_steps", "64"))?;
        let m_file = get("m").or_else(|| get("m_paths")).map(str::to_string);
        let m_paths: usize = parse_value("m", &args.m.map(|v| v.to_string()).or(m_file).unwrap_or_else(|| "10000".into()))?;
        let seed: u64 = parse_value("seed", &num(args.seed.map(|v| v.to_string()), "seed", "1"))?;
        let tol: f64 = parse_value("tol", &num(args.tol.map(|v| v.to_string()), "tol", "0.001"))?;
        let max_iter: usize = parse_value("max_iter", &num(args.max_iter.map(|v| v.to_string()), "max_iter", "20"))?;
        let steps: usize = parse_value("steps", &num(args.steps.map(|v| v.to_string()), "steps", "50"))?;
        let step_size: f64 = parse_value("step_size", &num(args.step_size.map(|v| v.to_string()), "step_size", "0.5"))?;
        let quad_order: usize = parse_value("quad_order", &num(args.quad_order.map(|v| v.to_string()), "quad_order", "20"))?;
        let a: f64 = parse_value("a", &num(args.a.map(|v| v.to_string()), "a", "0.5"))?;
        let basis = args.basis.clone().or_else(|| get("basis").map(str::to_string));
        let gamma = args.gamma.clone().or_else(|| get("gamma").map(str::to_string)).map(|s| parse_list("gamma", &s)).transpose()?;
        let f = args.f.clone().or_else(|| get("f").map(str::to_string)).map(|s| parse_list("f", &s)).transpose()?;
        let out_dir = args
            .out_dir
            .clone()
            .or_else(|| path_from_file("out_dir"))
            .unwrap_or_else(|| PathBuf::from("out"));

        if n_steps < 2 {
            return Err(ConfigError("`n_steps` must be at least 2".into()));
        }
        if m_paths == 0 {
            return Err(ConfigError("`m` must be positive".into()));
        }
        if policy.is_some() && policy_file.is_some() {
            return Err(ConfigError("give either `policy` or `policy_file`, not both".into()));
        }
        let needs_functional = matches!(method, Method::Laplace | Method::Optimize | Method::Picard | Method::Foellmer | Method::Probe);
        if needs_functional && functional.is_none() {
            return Err(ConfigError(format!("method `{method_s}` needs a `functional`")));
        }
        if method == Method::Probe && policy.is_none() && policy_file.is_none() {
            return Err(ConfigError("method `probe` needs a `policy` or `policy_file`".into()));
        }
        if method == Method::Fenchel && (gamma.is_none() || f.is_none()) {
            return Err(ConfigError("method `fenchel` needs `gamma` and `f`".into()));
        }

        Ok(Self {
            functional,
            policy,
            policy_file,
            inverse_file,
            grid: GridConfig { n_steps },
            mc: McConfig { m_paths, seed },
            solver: SolverConfig {
                method,
                tol,
                max_iter,
                steps,
                step_size,
                quad_order,
                basis,
                a,
            },
            gamma,
            f,
            out_dir,
        })
    }
}
