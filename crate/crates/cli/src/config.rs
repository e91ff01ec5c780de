//! Run configuration merged from a flat `key = value` file and command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use hkbary::cost::DEFAULT_REFINE_LEVELS;
use hkbary::{ArgminMode, GroundCostKind, Interval, SolverConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CostArg {
    Hk,
    Quadratic,
}

impl From<CostArg> for GroundCostKind {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::Hk => GroundCostKind::Hk,
            CostArg::Quadratic => GroundCostKind::Quadratic,
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config file,
/// then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// Ground cost.
    #[arg(long, value_enum)]
    pub cost: Option<CostArg>,
    /// Points per axis of the candidate grid.
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Grid box as `lo,hi` (1D) or `xlo,xhi,ylo,yhi` (2D).
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Barycenter weight; repeat once per input.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Vec<f64>,
    #[arg(long)]
    pub eps_start: Option<f64>,
    #[arg(long)]
    pub eps_final: Option<f64>,
    #[arg(long)]
    pub eps_factor: Option<f64>,
    /// Stopping threshold on the potential change per sweep.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap per epsilon stage.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Refine the argmin map off the grid.
    #[arg(long)]
    pub continuous_argmin: bool,
    /// Also compute the extended, coupled and conic values.
    #[arg(long)]
    pub verify: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Flat `key = value` file with keys named like the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cost: Option<GroundCostKind>,
    pub grid_n: Option<usize>,
    pub bounds: Option<Vec<Interval>>,
    pub lambdas: Vec<f64>,
    pub solver: SolverConfig,
    pub argmin: ArgminMode,
    pub verify: bool,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn cost_or(&self, default: GroundCostKind) -> GroundCostKind {
        self.cost.unwrap_or(default)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| usage(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(usage(format!("{key}: expected true or false, got {v:?}"))),
    }
}

pub fn parse_bounds(v: &str) -> Result<Vec<Interval>, CliError> {
    let nums: Vec<f64> = v
        .split(',')
        .map(|s| parse_num::<f64>("bounds", s))
        .collect::<Result<_, _>>()?;
    if !(nums.len() == 2 || nums.len() == 4) {
        return Err(usage(format!("bounds: expected 2 or 4 numbers, got {}", nums.len())));
    }
    if nums.chunks(2).any(|c| !(c[0].is_finite() && c[1].is_finite() && c[0] < c[1])) {
        return Err(usage(format!("bounds: need lo < hi on every axis, got {v:?}")));
    }
    Ok(nums.chunks(2).map(|c| Interval::new(c[0], c[1])).collect())
}

/// Applies `key = value` lines to `args` wherever the flag was not given.
fn apply_file(args: &mut SharedArgs, path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let mut file_lambdas = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "cost" => {
                let c = match value {
                    "hk" => CostArg::Hk,
                    "quadratic" => CostArg::Quadratic,
                    _ => return Err(usage(format!("cost: unknown kind {value:?}"))),
                };
                args.cost.get_or_insert(c);
            }
            "grid-n" => {
                let v = parse_num("grid-n", value)?;
                args.grid_n.get_or_insert(v);
            }
            "bounds" => {
                args.bounds.get_or_insert_with(|| value.to_string());
            }
            "lambda" => {
                for part in value.split(',') {
                    file_lambdas.push(parse_num::<f64>("lambda", part)?);
                }
            }
            "eps-start" => {
                let v = parse_num("eps-start", value)?;
                args.eps_start.get_or_insert(v);
            }
            "eps-final" => {
                let v = parse_num("eps-final", value)?;
                args.eps_final.get_or_insert(v);
            }
            "eps-factor" => {
                let v = parse_num("eps-factor", value)?;
                args.eps_factor.get_or_insert(v);
            }
            "tol" => {
                let v = parse_num("tol", value)?;
                args.tol.get_or_insert(v);
            }
            "max-iter" => {
                let v = parse_num("max-iter", value)?;
                args.max_iter.get_or_insert(v);
            }
            "continuous-argmin" => args.continuous_argmin |= parse_bool(&key, value)?,
            "verify" => args.verify |= parse_bool(&key, value)?,
            "out-dir" => {
                args.out_dir.get_or_insert_with(|| PathBuf::from(value));
            }
            _ => return Err(usage(format!("config line {}: unknown key {key:?}", lineno + 1))),
        }
    }
    if args.lambda.is_empty() {
        args.lambda = file_lambdas;
    }
    Ok(())
}

pub fn resolve(mut args: SharedArgs) -> Result<RunConfig, CliError> {
    if let Some(path) = args.config.clone() {
        apply_file(&mut args, &path)?;
    }
    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        epsilon_start: args.eps_start.unwrap_or(defaults.epsilon_start),
        epsilon_final: args.eps_final.unwrap_or(defaults.epsilon_final),
        epsilon_factor: args.eps_factor.unwrap_or(defaults.epsilon_factor),
        max_iter: args.max_iter.unwrap_or(defaults.max_iter),
        tol: args.tol.unwrap_or(defaults.tol),
        ..defaults
    };
    let solver = if solver.epsilon_final > solver.epsilon_start && args.eps_start.is_none() {
        SolverConfig {
            epsilon_start: solver.epsilon_final,
            ..solver
        }
    } else {
        solver
    };
    solver.validate().map_err(|e| usage(e.to_string()))?;
    if args.grid_n == Some(0) {
        return Err(usage("grid-n must be positive"));
    }
    let bounds = args.bounds.as_deref().map(parse_bounds).transpose()?;
    let argmin = if args.continuous_argmin {
        ArgminMode::Continuous {
            levels: DEFAULT_REFINE_LEVELS,
        }
    } else {
        ArgminMode::GridRestricted
    };
    Ok(RunConfig {
        cost: args.cost.map(GroundCostKind::from),
        grid_n: args.grid_n,
        bounds,
        lambdas: args.lambda,
        solver,
        argmin,
        verify: args.verify,
        out_dir: args.out_dir.unwrap_or_else(|| PathBuf::from(".")),
    })
}
