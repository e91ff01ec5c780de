//! Truncated-Gaussian barycenter demo on a uniform grid of `[0, 1]`.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::barycenter::{solve_smm, BarycenterProblem};
use crate::cost::GroundCostKind;
use crate::error::{Error, Result};
use crate::exec;
use crate::measure::{DiscreteMeasure, GroundGrid, Point};
use crate::solver::SolverConfig;

pub const DEMO_GRID_POINTS: usize = 200;
pub const DEMO_LAMBDAS: [f64; 3] = [0.25, 0.5, 0.75];

/// `mu_1 = N(0.2, 0.05)` with mass 1 and `mu_2 = N(0.8, 0.08)` with mass 2.
pub fn gaussian_inputs(n: usize) -> Result<(Arc<GroundGrid>, DiscreteMeasure, DiscreteMeasure)> {
    let grid = Arc::new(GroundGrid::line(0.0, 1.0, n)?);
    let mu1 = DiscreteMeasure::gaussian(grid.clone(), Point::d1(0.2), 0.05, 1.0)?;
    let mu2 = DiscreteMeasure::gaussian(grid.clone(), Point::d1(0.8), 0.08, 2.0)?;
    Ok((grid, mu1, mu2))
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoCase {
    pub cost: &'static str,
    pub lambda1: f64,
    pub x: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub gamma_marg1: Vec<f64>,
    pub gamma_marg2: Vec<f64>,
    pub barycenter: Vec<f64>,
    pub mass: f64,
    /// Location of the largest barycenter atom.
    pub mode: Option<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn cost_name(kind: GroundCostKind) -> &'static str {
    match kind {
        GroundCostKind::Hk => "hk",
        GroundCostKind::Quadratic => "quadratic",
    }
}

fn spread(values: &[f64], axis: &[usize], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (v, &k) in values.iter().zip(axis) {
        out[k] = *v;
    }
    out
}

/// Solves one demo case with weights `(lambda1, 1 - lambda1)`.
pub fn run_case(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    lambda1: f64,
    cost: GroundCostKind,
    config: SolverConfig,
) -> Result<DemoCase> {
    if !(0.0..=1.0).contains(&lambda1) {
        return Err(Error::InvalidWeights(format!("lambda1 = {lambda1} outside [0, 1]")));
    }
    let grid = mu1.grid().clone();
    let p = BarycenterProblem::new(vec![mu1.clone(), mu2.clone()], vec![lambda1, 1.0 - lambda1], cost, grid.clone())?
        .with_config(config);
    let sol = solve_smm(&p)?;
    let n = grid.len();
    let mode = sol.barycenter.mode().map(|k| grid.point(k).x());
    Ok(DemoCase {
        cost: cost_name(cost),
        lambda1,
        x: grid.points().iter().map(Point::x).collect(),
        mu1: mu1.masses().to_vec(),
        mu2: mu2.masses().to_vec(),
        gamma_marg1: spread(&sol.plan.marginal(0), &sol.plan.axes[0], n),
        gamma_marg2: spread(&sol.plan.marginal(1), &sol.plan.axes[1], n),
        mass: sol.barycenter.total_mass(),
        barycenter: sol.barycenter.masses().to_vec(),
        mode,
        value: sol.value,
        converged: sol.report.converged,
        iterations: sol.report.iterations,
    })
}

/// Runs every `(cost, lambda1)` combination on the `n`-point grid.
pub fn gaussians_demo(
    n: usize,
    lambdas: &[f64],
    costs: &[GroundCostKind],
    config: SolverConfig,
) -> Result<Vec<DemoCase>> {
    let (_, mu1, mu2) = gaussian_inputs(n)?;
    let jobs: Vec<(GroundCostKind, f64)> = costs
        .iter()
        .flat_map(|&c| lambdas.iter().map(move |&l| (c, l)))
        .collect();
    exec::map_range(config.exec, jobs.len(), |k| run_case(&mu1, &mu2, jobs[k].1, jobs[k].0, config))
        .into_iter()
        .collect()
}

impl DemoCase {
    /// One row per grid point: `x,mu1,mu2,gamma_marg1,gamma_marg2,barycenter`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Csv(e.to_string());
        w.write_record(["x", "mu1", "mu2", "gamma_marg1", "gamma_marg2", "barycenter"])
            .map_err(err)?;
        for k in 0..self.x.len() {
            w.write_record(
                [
                    self.x[k],
                    self.mu1[k],
                    self.mu2[k],
                    self.gamma_marg1[k],
                    self.gamma_marg2[k],
                    self.barycenter[k],
                ]
                .iter()
                .map(f64::to_string),
            )
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_have_requested_masses() {
        let (g, mu1, mu2) = gaussian_inputs(DEMO_GRID_POINTS).unwrap();
        assert_eq!(g.len(), 200);
        assert!((mu1.total_mass() - 1.0).abs() < 1e-12);
        assert!((mu2.total_mass() - 2.0).abs() < 1e-12);
        assert!((g.point(mu1.mode().unwrap()).x() - 0.2).abs() < 1.0 / 199.0);
    }

    #[test]
    fn small_case_writes_csv() {
        let (_, mu1, mu2) = gaussian_inputs(40).unwrap();
        let case = run_case(&mu1, &mu2, 0.5, GroundCostKind::Hk, SolverConfig::default()).unwrap();
        let mode = case.mode.unwrap();
        assert!(mode > 0.2 && mode < 0.8);
        let mut buf = Vec::new();
        case.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 41);
        assert!(text.starts_with("x,mu1,mu2,gamma_marg1,gamma_marg2,barycenter\n"));
    }
}
