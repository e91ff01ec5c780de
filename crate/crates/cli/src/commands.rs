use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hkbary::barycenter::{dirac_barycenter, solve_smm, verify_equalities, EqualityReport};
use hkbary::demo::{gaussians_demo, DEMO_GRID_POINTS, DEMO_LAMBDAS};
use hkbary::measure::read_atoms;
use hkbary::{BarycenterProblem, DiscreteMeasure, GroundCostKind, GroundGrid, Interval, Point, SolverReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

const DEFAULT_GRID_1D: usize = 201;
const DEFAULT_GRID_2D: usize = 41;

#[derive(Debug, Serialize)]
pub struct Values {
    pub smm: f64,
    pub extended: Option<f64>,
    pub cc2m: Option<f64>,
    pub conic: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Gaps {
    pub smm_extended: f64,
    pub smm_cc2m: f64,
    pub smm_conic: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub values: Values,
    pub gaps: Option<Gaps>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub epsilon_final: f64,
    pub converged: bool,
}

impl Report {
    fn from_solver(value: f64, r: &SolverReport) -> Self {
        Report {
            values: Values {
                smm: value,
                extended: None,
                cc2m: None,
                conic: None,
            },
            gaps: None,
            residuals: r.marginal_residuals.clone(),
            iterations: r.iterations,
            epsilon_final: r.epsilon,
            converged: r.converged,
        }
    }

    fn with_equalities(mut self, eq: &EqualityReport) -> Self {
        self.values.extended = Some(eq.extended);
        self.values.cc2m = Some(eq.cc2m);
        self.values.conic = Some(eq.conic);
        self.gaps = Some(Gaps {
            smm_extended: eq.gaps.smm_extended,
            smm_cc2m: eq.gaps.smm_cc2m,
            smm_conic: eq.gaps.smm_conic,
            tolerance: eq.tolerance,
            passed: eq.passed,
        });
        self
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Box spanned by the atoms, widened where it is flat.
fn data_bounds(dim: usize, atoms: &[(Point, f64)]) -> Vec<Interval> {
    (0..dim)
        .map(|a| {
            let lo = atoms.iter().map(|(p, _)| p.0[a]).fold(f64::INFINITY, f64::min);
            let hi = atoms.iter().map(|(p, _)| p.0[a]).fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                Interval::new(lo, hi)
            } else {
                Interval::new(lo - 0.5, lo + 0.5)
            }
        })
        .collect()
}

/// Reads the input CSVs and snaps them onto the configured grid.
pub fn load_problem(inputs: &[PathBuf], cfg: &RunConfig) -> Result<BarycenterProblem, CliError> {
    if inputs.len() < 2 {
        return Err(CliError::Usage(format!("need at least two input csv files, got {}", inputs.len())));
    }
    let mut parsed = Vec::with_capacity(inputs.len());
    for path in inputs {
        let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let atoms = read_atoms(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        parsed.push(atoms);
    }
    let dim = parsed[0].dim;
    if parsed.iter().any(|p| p.dim != dim) {
        return Err(CliError::Data("input csv files mix 1D and 2D points".into()));
    }
    let all: Vec<(Point, f64)> = parsed.iter().flat_map(|p| p.atoms.iter().copied()).collect();
    if all.is_empty() {
        return Err(CliError::Data("input csv files contain no atoms".into()));
    }
    let bounds = match &cfg.bounds {
        Some(b) if b.len() != dim => {
            return Err(CliError::Usage(format!("{} bounds for {dim}-dimensional inputs", b.len())))
        }
        Some(b) => b.clone(),
        None => data_bounds(dim, &all),
    };
    let n = cfg
        .grid_n
        .unwrap_or(if dim == 1 { DEFAULT_GRID_1D } else { DEFAULT_GRID_2D });
    let grid = Arc::new(GroundGrid::new(dim, &bounds, n).map_err(|e| CliError::Usage(e.to_string()))?);
    let measures = parsed
        .iter()
        .zip(inputs)
        .map(|(p, path)| {
            DiscreteMeasure::from_points(grid.clone(), &p.atoms)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let lambdas = if cfg.lambdas.is_empty() {
        vec![1.0 / inputs.len() as f64; inputs.len()]
    } else {
        cfg.lambdas.clone()
    };
    Ok(BarycenterProblem::new(measures, lambdas, cfg.cost_or(GroundCostKind::Hk), grid)?
        .with_config(cfg.solver)
        .with_argmin(cfg.argmin))
}

pub fn barycenter(inputs: &[PathBuf], cfg: &RunConfig) -> Result<String, CliError> {
    let p = load_problem(inputs, cfg)?;
    let sol = solve_smm(&p)?;
    fs::create_dir_all(&cfg.out_dir)?;
    sol.barycenter.write_csv(create(&cfg.out_dir.join("barycenter.csv"))?)?;
    for i in 0..p.measures.len() {
        let mut marg = vec![0.0; p.candidates.len()];
        for (v, &k) in sol.plan.marginal(i).iter().zip(&sol.plan.axes[i]) {
            marg[k] = *v;
        }
        let m = DiscreteMeasure::from_dense(p.candidates.clone(), marg)?;
        m.write_csv(create(&cfg.out_dir.join(format!("plan_marginal_{}.csv", i + 1)))?)?;
    }
    let mut report = Report::from_solver(sol.value, &sol.report);
    let mut verified = true;
    if cfg.verify {
        let eq = verify_equalities(&p)?;
        verified = eq.passed;
        report = report.with_equalities(&eq);
    }
    write_json(&cfg.out_dir.join("report.json"), &report)?;
    let summary = format!(
        "value {:.10} barycenter mass {:.10} iterations {} converged {}",
        sol.value,
        sol.barycenter.total_mass(),
        sol.report.iterations,
        sol.report.converged
    );
    if !sol.report.converged {
        return Err(CliError::NotConverged(summary));
    }
    if !verified {
        return Err(CliError::VerifyFailed(summary));
    }
    Ok(summary)
}

pub fn verify(inputs: &[PathBuf], cfg: &RunConfig) -> Result<String, CliError> {
    let p = load_problem(inputs, cfg)?;
    let eq = verify_equalities(&p)?;
    let report = Report::from_solver(eq.smm, &eq.smm_report).with_equalities(&eq);
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    if eq.passed {
        Ok(text)
    } else {
        Err(CliError::VerifyFailed(text))
    }
}

#[derive(Debug, Serialize)]
struct DemoSummary {
    cost: &'static str,
    lambda1: f64,
    file: String,
    mass: f64,
    mode: Option<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

pub fn demo(cfg: &RunConfig) -> Result<String, CliError> {
    if cfg.bounds.is_some() {
        return Err(CliError::Usage("gaussians-demo always uses the unit interval; drop --bounds".into()));
    }
    let n = cfg.grid_n.unwrap_or(DEMO_GRID_POINTS);
    let lambdas = if cfg.lambdas.is_empty() {
        DEMO_LAMBDAS.to_vec()
    } else {
        cfg.lambdas.clone()
    };
    let costs = match cfg.cost {
        Some(c) => vec![c],
        None => vec![GroundCostKind::Quadratic, GroundCostKind::Hk],
    };
    let cases = gaussians_demo(n, &lambdas, &costs, cfg.solver)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut summary = Vec::with_capacity(cases.len());
    for case in &cases {
        let file = format!("demo_{}_{}.csv", case.cost, case.lambda1);
        case.write_csv(create(&cfg.out_dir.join(&file))?)?;
        summary.push(DemoSummary {
            cost: case.cost,
            lambda1: case.lambda1,
            file,
            mass: case.mass,
            mode: case.mode,
            value: case.value,
            iterations: case.iterations,
            converged: case.converged,
        });
    }
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    let lines: Vec<String> = summary
        .iter()
        .map(|s| {
            format!(
                "{} lambda1={} mass={:.6} mode={} converged={}",
                s.cost,
                s.lambda1,
                s.mass,
                s.mode.map_or("none".to_string(), |m| format!("{m:.4}")),
                s.converged
            )
        })
        .collect();
    let text = lines.join("\n");
    if summary.iter().any(|s| !s.converged) {
        return Err(CliError::NotConverged(text));
    }
    Ok(text)
}

fn parse_point(v: &str) -> Result<Point, CliError> {
    let nums: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("cannot parse point {v:?}")))?;
    match nums.as_slice() {
        [x] => Ok(Point::d1(*x)),
        [x, y] => Ok(Point::d2(*x, *y)),
        _ => Err(CliError::Usage(format!("point {v:?} must have one or two coordinates"))),
    }
}

pub fn dirac(points: &[String], masses: &[f64], cfg: &RunConfig) -> Result<String, CliError> {
    if points.len() != masses.len() {
        return Err(CliError::Usage(format!("{} points and {} masses", points.len(), masses.len())));
    }
    if points.is_empty() {
        return Err(CliError::Usage("need at least one --point".into()));
    }
    let dim = if points.iter().any(|p| p.contains(',')) { 2 } else { 1 };
    let pts = points.iter().map(|p| parse_point(p)).collect::<Result<Vec<_>, _>>()?;
    let lambdas = if cfg.lambdas.is_empty() {
        vec![1.0 / pts.len() as f64; pts.len()]
    } else {
        cfg.lambdas.clone()
    };
    let out = dirac_barycenter(&pts, masses, &lambdas, cfg.cost_or(GroundCostKind::Hk), dim)?;
    serde_json::to_string_pretty(&out).map_err(|e| CliError::Data(e.to_string()))
}
