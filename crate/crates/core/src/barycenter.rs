//! Barycenter pipelines: the soft multi-marginal solve with pushforward
//! extraction, the extended-space and coupled two-marginal evaluations, the
//! conic lift, the analytic Dirac barycenter and the equality verifier.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use serde::Serialize;

use crate::cost::{
    check_weights, ground_cost, least_cost_at, least_cost_table, perspective_mm_value, weighted_sum,
    ArgminMode, GroundCostKind, LeastCostTable,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::measure::{DiscreteMeasure, GroundGrid, Point};
use crate::search::window_refine;
use crate::solver::{anneal, MarginalPenalty, ScalingProblem, SolverConfig, SolverReport, TransportPlan};
use crate::tensor::Tensor;

/// Plans with total mass below this fraction of the input mass count as zero.
pub const ZERO_PLAN_THRESHOLD: f64 = 1e-10;

/// Default cap on the number of entries in a dense plan tensor.
pub const DEFAULT_MEMORY_BUDGET: usize = 20_000_000;

/// Largest tensor the equality verifier accepts.
pub const VERIFY_MAX_ENTRIES: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct BarycenterProblem {
    pub measures: Vec<DiscreteMeasure>,
    pub lambdas: Vec<f64>,
    pub cost: GroundCostKind,
    pub candidates: Arc<GroundGrid>,
    pub config: SolverConfig,
    pub argmin: ArgminMode,
    pub memory_budget: usize,
}

impl BarycenterProblem {
    pub fn new(
        measures: Vec<DiscreteMeasure>,
        lambdas: Vec<f64>,
        cost: GroundCostKind,
        candidates: Arc<GroundGrid>,
    ) -> Result<Self> {
        let p = BarycenterProblem {
            measures,
            lambdas,
            cost,
            candidates,
            config: SolverConfig::default(),
            argmin: ArgminMode::GridRestricted,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_config(mut self, config: SolverConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_argmin(mut self, argmin: ArgminMode) -> Self {
        self.argmin = argmin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.measures.len() < 2 {
            return Err(Error::InvalidProblem(format!(
                "need at least two measures, got {}",
                self.measures.len()
            )));
        }
        if self.lambdas.len() != self.measures.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} measures",
                self.lambdas.len(),
                self.measures.len()
            )));
        }
        check_weights(&self.lambdas)?;
        for m in &self.measures {
            if m.grid().dim() != self.candidates.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.candidates.dim(),
                    got: m.grid().dim(),
                });
            }
        }
        self.config.validate()
    }

    /// `sum_i lambda_i mu_i(X)`, the value of the zero plan.
    pub fn zero_plan_value(&self) -> f64 {
        weighted_sum(&self.lambdas, self.measures.iter().map(DiscreteMeasure::total_mass))
    }

    /// Scales every input measure by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        let mut p = self.clone();
        p.measures = self
            .measures
            .iter()
            .map(|m| m.scaled(k))
            .collect::<Result<_>>()?;
        Ok(p)
    }

    fn penalties(&self) -> Vec<MarginalPenalty> {
        self.lambdas
            .iter()
            .map(|&l| if l > 0.0 { MarginalPenalty::Soft(l) } else { MarginalPenalty::Free })
            .collect()
    }

    fn total_input_mass(&self) -> f64 {
        self.measures.iter().map(DiscreteMeasure::total_mass).sum()
    }
}

/// Support indices, points and masses of one measure.
#[derive(Debug, Clone)]
struct Support {
    indices: Vec<usize>,
    points: Vec<Point>,
    masses: Vec<f64>,
}

fn support_of(m: &DiscreteMeasure) -> Support {
    let indices = m.support();
    let points = indices.iter().map(|&k| m.grid().point(k)).collect();
    let masses = indices.iter().map(|&k| m.mass_at(k)).collect();
    Support {
        indices,
        points,
        masses,
    }
}

fn check_budget(shape: &[usize], budget: usize) -> Result<()> {
    let entries = shape.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX);
    if entries > budget {
        return Err(Error::MemoryBudget { entries, budget });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BarycenterSolution {
    /// Plan over the input supports; `plan.axes` holds grid indices.
    pub plan: TransportPlan,
    /// Pushforward of the plan under the argmin map, on the candidate grid.
    pub barycenter: DiscreteMeasure,
    /// Unregularized soft multi-marginal objective of the plan.
    pub value: f64,
    pub report: SolverReport,
    pub table: LeastCostTable,
}

/// Solves the soft multi-marginal problem over the least cost and pushes the
/// plan forward to the candidate grid.
pub fn solve_smm(p: &BarycenterProblem) -> Result<BarycenterSolution> {
    p.validate()?;
    let supports: Vec<Support> = p.measures.iter().map(support_of).collect();
    let shape: Vec<usize> = supports.iter().map(|s| s.indices.len()).collect();
    check_budget(&shape, p.memory_budget)?;
    let inputs: Vec<Vec<Point>> = supports.iter().map(|s| s.points.clone()).collect();
    let table = least_cost_table(&inputs, p.candidates.clone(), &p.lambdas, p.cost, p.argmin, p.config.exec)?;
    let targets: Vec<Vec<f64>> = supports.iter().map(|s| s.masses.clone()).collect();
    let penalties = p.penalties();
    let problem = ScalingProblem::new(table.values().clone(), targets, penalties)?;
    let (mut plan, mut report) = anneal(&problem, &p.config)?;
    plan.axes = supports.iter().map(|s| s.indices.clone()).collect();

    if plan.total_mass() < ZERO_PLAN_THRESHOLD * p.total_input_mass() {
        plan.values = Tensor::zeros(plan.values.shape());
        report.objective = p.zero_plan_value();
        report.marginal_residuals = crate::solver::marginal_residuals(&plan.values, &problem.targets, &problem.penalties);
    }

    let mut nu = vec![0.0; p.candidates.len()];
    for (k, &mass) in plan.values.data().iter().enumerate() {
        if mass > 0.0 {
            let c = table.argmin_index(k).expect("positive plan mass only on feasible tuples");
            nu[c] += mass;
        }
    }
    let barycenter = DiscreteMeasure::from_dense(p.candidates.clone(), nu)?;
    Ok(BarycenterSolution {
        value: report.objective,
        plan,
        barycenter,
        report,
        table,
    })
}

/// Solves the formulation with an extra free candidate axis and cost
/// `sum_i lambda_i c(x_i, y)`; returns the value and the `N + 1`-way plan.
pub fn solve_extended_smm(p: &BarycenterProblem) -> Result<(f64, TransportPlan, SolverReport)> {
    p.validate()?;
    let supports: Vec<Support> = p.measures.iter().map(support_of).collect();
    let mut shape: Vec<usize> = supports.iter().map(|s| s.indices.len()).collect();
    shape.push(p.candidates.len());
    check_budget(&shape, p.memory_budget)?;
    let n = supports.len();
    let rows: Vec<Vec<f64>> = supports
        .iter()
        .map(|s| {
            s.points
                .iter()
                .flat_map(|x| p.candidates.points().iter().map(move |y| ground_cost(*x, *y, p.cost)))
                .collect()
        })
        .collect();
    let n_cand = p.candidates.len();
    let mut cost = Tensor::zeros(&shape);
    let strides = cost.strides().to_vec();
    let lambdas = &p.lambdas;
    exec::fill(p.config.exec, cost.data_mut(), |k| {
        let y = (k / strides[n]) % n_cand;
        weighted_sum(
            lambdas,
            (0..n).map(|i| rows[i][((k / strides[i]) % shape[i]) * n_cand + y]),
        )
    });
    let mut targets: Vec<Vec<f64>> = supports.iter().map(|s| s.masses.clone()).collect();
    targets.push(vec![1.0; n_cand]);
    let mut penalties = p.penalties();
    penalties.push(MarginalPenalty::Free);
    let problem = ScalingProblem::new(cost, targets, penalties)?;
    let (mut plan, report) = anneal(&problem, &p.config)?;
    let mut axes: Vec<Vec<usize>> = supports.into_iter().map(|s| s.indices).collect();
    axes.push((0..n_cand).collect());
    plan.axes = axes;
    Ok((report.objective, plan, report))
}

fn coupled_two_marginal(nu: &DiscreteMeasure, p: &BarycenterProblem, second: MarginalPenalty) -> Result<f64> {
    p.validate()?;
    if nu.grid().as_ref() != p.candidates.as_ref() {
        return Err(Error::GridMismatch);
    }
    let nu_support = support_of(nu);
    let values = exec::map_range(p.config.exec, p.measures.len(), |i| -> Result<f64> {
        if p.lambdas[i] == 0.0 {
            return Ok(0.0);
        }
        let mu = support_of(&p.measures[i]);
        let shape = [mu.points.len(), nu_support.points.len()];
        check_budget(&shape, p.memory_budget)?;
        let cost = Tensor::from_fn(&shape, |k| ground_cost(mu.points[k[0]], nu_support.points[k[1]], p.cost));
        let problem = ScalingProblem::new(
            cost,
            vec![mu.masses.clone(), nu_support.masses.clone()],
            vec![MarginalPenalty::Soft(1.0), second],
        )?;
        let (_, report) = anneal(&problem, &p.config)?;
        Ok(report.objective)
    });
    let mut total = 0.0;
    for (l, v) in p.lambdas.iter().zip(values) {
        let v = v?;
        if *l > 0.0 {
            total += l * v;
        }
    }
    Ok(total)
}

/// `sum_i lambda_i` of the two-marginal problem between `mu_i` and `nu` with a
/// unit-weight soft penalty on `mu_i` and the second marginal fixed to `nu`.
pub fn evaluate_cc2m(nu: &DiscreteMeasure, p: &BarycenterProblem) -> Result<f64> {
    coupled_two_marginal(nu, p, MarginalPenalty::Hard)
}

/// As [`evaluate_cc2m`] with a unit-weight soft penalty on `nu` instead.
pub fn evaluate_c2m(nu: &DiscreteMeasure, p: &BarycenterProblem) -> Result<f64> {
    coupled_two_marginal(nu, p, MarginalPenalty::Soft(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicAtom {
    /// Grid index of `x_i` for each input.
    pub grid: Vec<usize>,
    pub points: Vec<Point>,
    /// Mass coordinates `s_i`.
    pub s: Vec<f64>,
    pub mass: f64,
}

/// Discrete plan on the product cone with its homogeneous marginals.
#[derive(Debug, Clone)]
pub struct ConicPlan {
    pub atoms: Vec<ConicAtom>,
    pub grids: Vec<Arc<GroundGrid>>,
    pub lambdas: Vec<f64>,
}

impl ConicPlan {
    /// Pushforward of `s_i * mass` to axis `i`.
    pub fn homogeneous_marginal(&self, i: usize) -> Result<DiscreteMeasure> {
        let mut masses = vec![0.0; self.grids[i].len()];
        for a in &self.atoms {
            masses[a.grid[i]] += a.s[i] * a.mass;
        }
        DiscreteMeasure::from_dense(self.grids[i].clone(), masses)
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Lifts a plan to the cone with `s_i = d mu_i / d plan_i` at each atom.
pub fn lift_to_cone(plan: &TransportPlan, p: &BarycenterProblem) -> Result<ConicPlan> {
    let n = plan.values.ndim();
    if n != p.measures.len() {
        return Err(Error::InvalidProblem(format!("{n}-way plan for {} measures", p.measures.len())));
    }
    let marginals: Vec<Vec<f64>> = (0..n).map(|i| plan.marginal(i)).collect();
    let mut rho: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = Vec::with_capacity(marginals[i].len());
        for (local, &g) in marginals[i].iter().enumerate() {
            let m = p.measures[i].mass_at(plan.axes[i][local]);
            if g > 0.0 && m <= 0.0 {
                return Err(Error::NotAbsolutelyContinuous { axis: i });
            }
            r.push(if g > 0.0 { m / g } else { 0.0 });
        }
        rho.push(r);
    }
    let mut atoms = Vec::new();
    let mut idx = vec![0; n];
    for (k, &mass) in plan.values.data().iter().enumerate() {
        if mass <= 0.0 {
            continue;
        }
        plan.values.unravel_into(k, &mut idx);
        let grid: Vec<usize> = (0..n).map(|i| plan.axes[i][idx[i]]).collect();
        atoms.push(ConicAtom {
            points: (0..n).map(|i| p.measures[i].grid().point(grid[i])).collect(),
            s: (0..n).map(|i| rho[i][idx[i]]).collect(),
            grid,
            mass,
        });
    }
    Ok(ConicPlan {
        atoms,
        grids: p.measures.iter().map(|m| m.grid().clone()).collect(),
        lambdas: p.lambdas.clone(),
    })
}

/// Sum over atoms of `mass * (sum_i lambda_i s_i - prod_i s_i^lambda_i exp(-c~))`.
pub fn conic_atom_cost(alpha: &ConicPlan, p: &BarycenterProblem) -> f64 {
    let per_atom = exec::map_range(p.config.exec, alpha.atoms.len(), |k| {
        let a = &alpha.atoms[k];
        let c = least_cost_at(&a.points, &p.candidates, &p.lambdas, p.cost, p.argmin)
            .map_or(f64::INFINITY, |(_, _, v)| v);
        a.mass * perspective_mm_value(&p.lambdas, &a.s, c)
    });
    per_atom.iter().sum()
}

/// Conic objective of `alpha` completed to homogeneous marginals `mu_i`: input
/// mass not reached by `alpha` is annihilated at cost `lambda_i` per unit.
pub fn conic_objective(alpha: &ConicPlan, p: &BarycenterProblem) -> Result<f64> {
    let mut total = conic_atom_cost(alpha, p);
    for (i, mu) in p.measures.iter().enumerate() {
        if p.lambdas[i] == 0.0 {
            continue;
        }
        let h = alpha.homogeneous_marginal(i)?;
        let remainder: f64 = mu
            .masses()
            .iter()
            .zip(h.masses())
            .map(|(m, hm)| (m - hm).max(0.0))
            .sum();
        total += p.lambdas[i] * remainder;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DiracBarycenter {
    Zero,
    Atom { point: [f64; 2], mass: f64, least_cost: f64 },
}

/// Radius of the smallest disc containing all points (exact for the small
/// point sets used here, by checking all two- and three-point circles).
fn enclosing_radius(points: &[Point], dim: usize) -> f64 {
    if dim == 1 {
        let lo = points.iter().map(Point::x).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(Point::x).fold(f64::NEG_INFINITY, f64::max);
        return 0.5 * (hi - lo);
    }
    let covers = |c: [f64; 2], r: f64| {
        points
            .iter()
            .all(|p| (p.x() - c[0]).hypot(p.y() - c[1]) <= r * (1.0 + 1e-12) + 1e-15)
    };
    let mut best = f64::INFINITY;
    if points.len() == 1 {
        return 0.0;
    }
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            let (pa, pb) = (points[a], points[b]);
            let c = [0.5 * (pa.x() + pb.x()), 0.5 * (pa.y() + pb.y())];
            let r = 0.5 * pa.dist(&pb);
            if r < best && covers(c, r) {
                best = r;
            }
            for q in points.iter().skip(b + 1) {
                let (ax, ay, bx, by, cx, cy) = (pa.x(), pa.y(), pb.x(), pb.y(), q.x(), q.y());
                let d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
                if d.abs() < 1e-300 {
                    continue;
                }
                let a2 = ax * ax + ay * ay;
                let b2 = bx * bx + by * by;
                let c2 = cx * cx + cy * cy;
                let ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
                let uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
                let r = (ax - ux).hypot(ay - uy);
                if r < best && covers([ux, uy], r) {
                    best = r;
                }
            }
        }
    }
    best
}

/// Barycenter of weighted Dirac masses `m_i delta_{z_i}`: a single atom at
/// `T(z)` with mass `prod m_i^lambda_i exp(-c~(z))`, or zero when no point is
/// within reach of every input.
pub fn dirac_barycenter(
    points: &[Point],
    masses: &[f64],
    lambdas: &[f64],
    kind: GroundCostKind,
    dim: usize,
) -> Result<DiracBarycenter> {
    check_weights(lambdas)?;
    if points.len() != lambdas.len() || masses.len() != lambdas.len() {
        return Err(Error::InvalidProblem("points, masses and weights differ in length".into()));
    }
    if !(dim == 1 || dim == 2) {
        return Err(Error::InvalidGrid(format!("dimension {dim} not supported")));
    }
    if let Some(&m) = masses.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
        return Err(Error::InvalidMass(m));
    }
    let active: Vec<usize> = (0..lambdas.len()).filter(|&i| lambdas[i] > 0.0).collect();
    let pts: Vec<Point> = active.iter().map(|&i| points[i]).collect();
    let lam: Vec<f64> = active.iter().map(|&i| lambdas[i]).collect();
    let log_geo: f64 = active.iter().map(|&i| lambdas[i] * masses[i].ln()).sum();
    if log_geo == f64::NEG_INFINITY {
        return Ok(DiracBarycenter::Zero);
    }

    let (t, c) = match kind {
        GroundCostKind::Quadratic => {
            let mut t = [0.0; 2];
            for (p, l) in pts.iter().zip(&lam) {
                t[0] += l * p.x();
                t[1] += l * p.y();
            }
            let c = weighted_sum(&lam, pts.iter().map(|p| ground_cost(*p, Point(t), kind)));
            (Point(t), c)
        }
        GroundCostKind::Hk => {
            if enclosing_radius(&pts, dim) >= FRAC_PI_2 {
                return Ok(DiracBarycenter::Zero);
            }
            hk_pivot(&pts, &lam, dim)
        }
    };
    if !c.is_finite() {
        return Ok(DiracBarycenter::Zero);
    }
    Ok(DiracBarycenter::Atom {
        point: t.0,
        mass: (log_geo - c).exp(),
        least_cost: c,
    })
}

fn hk_pivot(pts: &[Point], lam: &[f64], dim: usize) -> (Point, f64) {
    let f = |q: [f64; 2]| weighted_sum(lam, pts.iter().map(|p| ground_cost(*p, Point(q), GroundCostKind::Hk)));
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in pts {
        for a in 0..dim {
            lo[a] = lo[a].min(p.0[a]);
            hi[a] = hi[a].max(p.0[a]);
        }
    }
    if dim == 1 {
        lo[1] = 0.0;
        hi[1] = 0.0;
    }
    if (0..dim).all(|a| hi[a] == lo[a]) {
        return (Point(lo), 0.0);
    }
    let seeds = if dim == 1 { 2001 } else { 201 };
    let coord = |a: usize, k: usize| {
        if hi[a] == lo[a] {
            lo[a]
        } else {
            lo[a] + (hi[a] - lo[a]) * k as f64 / (seeds - 1) as f64
        }
    };
    let mut best = ([lo[0], lo[1]], f64::INFINITY);
    for i in 0..seeds {
        for j in 0..if dim == 2 { seeds } else { 1 } {
            let q = [coord(0, i), if dim == 2 { coord(1, j) } else { 0.0 }];
            let v = f(q);
            if v < best.1 {
                best = (q, v);
            }
        }
    }
    let half = [
        (hi[0] - lo[0]) / (seeds - 1) as f64,
        if dim == 2 { (hi[1] - lo[1]) / (seeds - 1) as f64 } else { 0.0 },
    ];
    let (q, v) = window_refine(f, dim, best.0, half, lo, hi, 40);
    if v <= best.1 {
        (Point(q), v)
    } else {
        (Point(best.0), best.1)
    }
}

/// True when some point lies strictly within distance pi/2 of every input;
/// the complement makes every HK tuple infeasible.
pub fn balls_intersect(points: &[Point], dim: usize) -> bool {
    enclosing_radius(points, dim) < FRAC_PI_2
}

/// Separation beyond which two HK supports cannot share a pivot.
pub const HK_DISJOINT_SEPARATION: f64 = PI;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualityGaps {
    pub smm_extended: f64,
    pub smm_cc2m: f64,
    pub smm_conic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualityReport {
    pub smm: f64,
    pub extended: f64,
    pub cc2m: f64,
    pub conic: f64,
    pub gaps: EqualityGaps,
    pub tolerance: f64,
    pub passed: bool,
    pub smm_report: SolverReport,
}

/// Pass threshold for the equality gaps at value `v`.
pub fn equality_tolerance(v: f64) -> f64 {
    1e-3_f64.max(1e-2 * v.abs())
}

fn gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Computes the soft multi-marginal value, the extended-space value, the
/// coupled two-marginal value at the pushforward barycenter and the conic value
/// of the lifted plan, with their gaps to the first.
pub fn verify_equalities(p: &BarycenterProblem) -> Result<EqualityReport> {
    let mut shape: Vec<usize> = p.measures.iter().map(|m| m.support().len()).collect();
    shape.push(p.candidates.len());
    check_budget(&shape, VERIFY_MAX_ENTRIES)?;
    let sol = solve_smm(p)?;
    let (extended, _, _) = solve_extended_smm(p)?;
    let cc2m = evaluate_cc2m(&sol.barycenter, p)?;
    let lift = lift_to_cone(&sol.plan, p)?;
    let conic = conic_objective(&lift, p)?;
    let smm = sol.value;
    let gaps = EqualityGaps {
        smm_extended: gap(smm, extended),
        smm_cc2m: gap(smm, cc2m),
        smm_conic: gap(smm, conic),
    };
    let tolerance = equality_tolerance(smm);
    let passed = gaps.smm_extended <= tolerance && gaps.smm_cc2m <= tolerance && gaps.smm_conic <= tolerance;
    Ok(EqualityReport {
        smm,
        extended,
        cc2m,
        conic,
        gaps,
        tolerance,
        passed,
        smm_report: sol.report,
    })
}
