//! Ground costs, the least-cost reduction over a candidate grid with its argmin
//! map, and the two- and multi-marginal perspective costs with brute-force oracles.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::entropy::r_unchecked;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::measure::{GroundGrid, Point};
use crate::search::{minimize_log_grid, window_refine};
use crate::tensor::Tensor;

/// Tolerance on `sum(lambda) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundCostKind {
    /// `-log cos^2 |x - y|` below distance pi/2, `+inf` beyond.
    Hk,
    /// `|x - y|^2`.
    Quadratic,
}

pub fn ground_cost(x: Point, y: Point, kind: GroundCostKind) -> f64 {
    let d = x.dist(&y);
    match kind {
        GroundCostKind::Hk => {
            if d < FRAC_PI_2 {
                let c = d.cos();
                -(c * c).ln()
            } else {
                f64::INFINITY
            }
        }
        GroundCostKind::Quadratic => d * d,
    }
}

/// `sum_i lambda_i c_i` with `0 * inf = 0`.
#[inline]
pub(crate) fn weighted_sum(lambdas: &[f64], costs: impl Iterator<Item = f64>) -> f64 {
    lambdas
        .iter()
        .zip(costs)
        .filter(|(l, _)| **l != 0.0)
        .map(|(l, c)| l * c)
        .sum()
}

pub fn check_weights(lambdas: &[f64]) -> Result<()> {
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidWeights(format!("negative or non-finite weight in {lambdas:?}")));
    }
    let sum: f64 = lambdas.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Dense matrix of ground costs between two point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.rows, self.cols], self.values.clone()).expect("shape matches")
    }
}

pub fn cost_matrix_points(a: &[Point], b: &[Point], kind: GroundCostKind) -> CostMatrix {
    let values = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| ground_cost(*x, *y, kind)))
        .collect();
    CostMatrix {
        rows: a.len(),
        cols: b.len(),
        values,
    }
}

pub fn cost_matrix(a: &GroundGrid, b: &GroundGrid, kind: GroundCostKind) -> Result<CostMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(cost_matrix_points(a.points(), b.points(), kind))
}

/// How the argmin map `T` is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArgminMode {
    /// Minimize over the candidate grid only.
    #[default]
    GridRestricted,
    /// Refine the grid argmin off-grid with `levels` window-halving rounds.
    Continuous { levels: usize },
}

/// Default number of refinement rounds in continuous mode.
pub const DEFAULT_REFINE_LEVELS: usize = 10;

/// Least cost `c~(x_1..x_N) = min_x sum_i lambda_i c(x_i, x)` over every tuple of
/// input support points, with the minimizing candidate (the map `T`).
#[derive(Debug, Clone)]
pub struct LeastCostTable {
    inputs: Vec<Vec<Point>>,
    candidates: Arc<GroundGrid>,
    lambdas: Vec<f64>,
    kind: GroundCostKind,
    mode: ArgminMode,
    values: Tensor,
    argmin_index: Vec<Option<usize>>,
    argmin_point: Vec<Option<Point>>,
}

impl LeastCostTable {
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn kind(&self) -> GroundCostKind {
        self.kind
    }

    pub fn mode(&self) -> ArgminMode {
        self.mode
    }

    pub fn candidates(&self) -> &Arc<GroundGrid> {
        &self.candidates
    }

    pub fn inputs(&self) -> &[Vec<Point>] {
        &self.inputs
    }

    pub fn value(&self, tuple: &[usize]) -> f64 {
        self.values.get(tuple)
    }

    /// Candidate-grid index of `T(x)` for the flat tuple offset `k`.
    pub fn argmin_index(&self, k: usize) -> Option<usize> {
        self.argmin_index[k]
    }

    /// `T(x)` for the flat tuple offset `k` (off-grid in continuous mode).
    pub fn argmin_point(&self, k: usize) -> Option<Point> {
        self.argmin_point[k]
    }

    pub fn is_feasible(&self, k: usize) -> bool {
        self.argmin_index[k].is_some()
    }

    pub fn feasible_mask(&self) -> Vec<bool> {
        self.argmin_index.iter().map(Option::is_some).collect()
    }

    pub fn tuple_points(&self, tuple: &[usize]) -> Vec<Point> {
        tuple
            .iter()
            .zip(&self.inputs)
            .map(|(&a, pts)| pts[a])
            .collect()
    }

    /// `sum_i lambda_i c(x_i, x)` for an arbitrary pivot `x`.
    pub fn objective_at(&self, tuple: &[usize], x: Point) -> f64 {
        weighted_sum(
            &self.lambdas,
            tuple
                .iter()
                .zip(&self.inputs)
                .map(|(&a, pts)| ground_cost(pts[a], x, self.kind)),
        )
    }
}

fn refine_window(
    points: &[Point],
    lambdas: &[f64],
    kind: GroundCostKind,
    candidates: &GroundGrid,
    start: Point,
    levels: usize,
) -> (Point, f64) {
    let dim = candidates.dim();
    let h = candidates.spacing();
    let b = candidates.bounds();
    let lo = [b[0].lo, if dim == 2 { b[1].lo } else { 0.0 }];
    let hi = [b[0].hi, if dim == 2 { b[1].hi } else { 0.0 }];
    let half = [h[0], if dim == 2 { h[1] } else { 0.0 }];
    let f = |p: [f64; 2]| {
        let x = Point(p);
        weighted_sum(lambdas, points.iter().map(|xi| ground_cost(*xi, x, kind)))
    };
    let (p, v) = window_refine(f, dim, start.0, half, lo, hi, levels);
    (Point(p), v)
}

/// Least cost and argmin for one tuple of points.
pub fn least_cost_at(
    points: &[Point],
    candidates: &GroundGrid,
    lambdas: &[f64],
    kind: GroundCostKind,
    mode: ArgminMode,
) -> Option<(usize, Point, f64)> {
    if kind == GroundCostKind::Quadratic {
        let mut t = [0.0; 2];
        for (p, l) in points.iter().zip(lambdas) {
            t[0] += l * p.x();
            t[1] += l * p.y();
        }
        let (idx, _) = candidates.nearest(Point(t));
        let pivot = match mode {
            ArgminMode::GridRestricted => candidates.point(idx),
            ArgminMode::Continuous { .. } => Point(t),
        };
        let v = weighted_sum(lambdas, points.iter().map(|p| ground_cost(*p, pivot, kind)));
        return Some((idx, pivot, v));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, x) in candidates.points().iter().enumerate() {
        let v = weighted_sum(lambdas, points.iter().map(|p| ground_cost(*p, *x, kind)));
        if v.is_finite() && best.is_none_or(|(_, bv)| v < bv) {
            best = Some((k, v));
        }
    }
    let (k, v) = best?;
    match mode {
        ArgminMode::GridRestricted => Some((k, candidates.point(k), v)),
        ArgminMode::Continuous { levels } => {
            let (p, rv) = refine_window(points, lambdas, kind, candidates, candidates.point(k), levels);
            if rv < v {
                Some((candidates.nearest(p).0, p, rv))
            } else {
                Some((k, candidates.point(k), v))
            }
        }
    }
}

/// Builds the least-cost table over all tuples of the given input point sets.
/// Tuples are independent, so the result does not depend on `exec`.
pub fn least_cost_table(
    inputs: &[Vec<Point>],
    candidates: Arc<GroundGrid>,
    lambdas: &[f64],
    kind: GroundCostKind,
    mode: ArgminMode,
    exec: Exec,
) -> Result<LeastCostTable> {
    check_weights(lambdas)?;
    if inputs.len() != lambdas.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} inputs",
            lambdas.len(),
            inputs.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let shape: Vec<usize> = inputs.iter().map(Vec::len).collect();
    let mut values = Tensor::zeros(&shape);
    let strides = values.strides().to_vec();
    let n_cand = candidates.len();

    // Per-input cost rows against every candidate; grid-restricted HK tuples then
    // reduce to sums of table lookups.
    let rows: Vec<CostMatrix> = match kind {
        GroundCostKind::Hk => inputs
            .iter()
            .map(|pts| cost_matrix_points(pts, candidates.points(), kind))
            .collect(),
        GroundCostKind::Quadratic => Vec::new(),
    };

    let solve = |k: usize| -> Option<(usize, Point, f64)> {
        let mut rem = k;
        let mut tuple = Vec::with_capacity(shape.len());
        for s in &strides {
            tuple.push(rem / s);
            rem %= s;
        }
        let points: Vec<Point> = tuple.iter().zip(inputs).map(|(&a, pts)| pts[a]).collect();
        if kind == GroundCostKind::Quadratic {
            return least_cost_at(&points, &candidates, lambdas, kind, mode);
        }
        let mut best: Option<(usize, f64)> = None;
        for c in 0..n_cand {
            let v = weighted_sum(lambdas, tuple.iter().zip(&rows).map(|(&a, m)| m.get(a, c)));
            if v.is_finite() && best.is_none_or(|(_, bv)| v < bv) {
                best = Some((c, v));
            }
        }
        let (c, v) = best?;
        match mode {
            ArgminMode::GridRestricted => Some((c, candidates.point(c), v)),
            ArgminMode::Continuous { levels } => {
                let (p, rv) =
                    refine_window(&points, lambdas, kind, &candidates, candidates.point(c), levels);
                if rv < v {
                    Some((candidates.nearest(p).0, p, rv))
                } else {
                    Some((c, candidates.point(c), v))
                }
            }
        }
    };
    let results = exec::map_range(exec, values.len(), solve);
    let mut argmin_index = Vec::with_capacity(results.len());
    let mut argmin_point = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Some((c, p, v)) => {
                values.data_mut()[k] = v;
                argmin_index.push(Some(c));
                argmin_point.push(Some(p));
            }
            None => {
                values.data_mut()[k] = f64::INFINITY;
                argmin_index.push(None);
                argmin_point.push(None);
            }
        }
    }
    Ok(LeastCostTable {
        inputs: inputs.to_vec(),
        candidates,
        lambdas: lambdas.to_vec(),
        kind,
        mode,
        values,
        argmin_index,
        argmin_point,
    })
}

/// Refines `T(x)` for one tuple off the candidate grid. The returned value is
/// never above the table's grid value.
pub fn refine_argmin(table: &LeastCostTable, tuple: &[usize], levels: usize) -> Result<(Point, f64)> {
    let k = table.values.offset(tuple);
    let start = table.argmin_point[k].ok_or_else(|| Error::InfeasibleTuple(tuple.to_vec()))?;
    let points = table.tuple_points(tuple);
    let grid_value = table.values.data()[k];
    if table.kind == GroundCostKind::Quadratic {
        let mut t = [0.0; 2];
        for (p, l) in points.iter().zip(&table.lambdas) {
            t[0] += l * p.x();
            t[1] += l * p.y();
        }
        let v = table.objective_at(tuple, Point(t));
        return Ok((Point(t), v.min(grid_value)));
    }
    let (p, v) = refine_window(&points, &table.lambdas, table.kind, &table.candidates, start, levels);
    if v <= grid_value {
        Ok((p, v))
    } else {
        Ok((start, grid_value))
    }
}

/// `H(x1,s1,x2,s2)` from a precomputed cost: `s1 + s2 - 2 sqrt(s1 s2) exp(-c/2)`.
#[inline]
pub fn perspective_from_cost(c: f64, s1: f64, s2: f64) -> f64 {
    let cross = if c.is_finite() { 2.0 * (s1 * s2).sqrt() * (-0.5 * c).exp() } else { 0.0 };
    s1 + s2 - cross
}

/// Closed-form marginal perspective cost.
pub fn perspective_two(x1: Point, s1: f64, x2: Point, s2: f64, kind: GroundCostKind) -> Result<f64> {
    for s in [s1, s2] {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidMass(s));
        }
    }
    Ok(perspective_from_cost(ground_cost(x1, x2, kind), s1, s2))
}

/// Log-spaced sampling range for the oracle infima over `t` and `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub rounds: usize,
}

impl Default for OracleGrid {
    fn default() -> Self {
        OracleGrid {
            lo: 1e-4,
            hi: 1e4,
            points: 200,
            rounds: 3,
        }
    }
}

/// `inf_t t c + t R(s1/t) + t R(s2/t)` by brute force over `t`.
pub fn perspective_two_oracle(
    x1: Point,
    s1: f64,
    x2: Point,
    s2: f64,
    kind: GroundCostKind,
    t_grid: OracleGrid,
) -> Result<f64> {
    for s in [s1, s2] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidMass(s));
        }
    }
    let c = ground_cost(x1, x2, kind);
    let phi = |t: f64| t * c + t * r_unchecked(s1 / t) + t * r_unchecked(s2 / t);
    Ok(minimize_log_grid(phi, t_grid.lo, t_grid.hi, t_grid.points, t_grid.rounds).1)
}

/// `sum_i lambda_i s_i - prod_j s_j^lambda_j exp(-c~)` for a given least cost.
#[inline]
pub fn perspective_mm_value(lambdas: &[f64], s: &[f64], least_cost: f64) -> f64 {
    let linear = weighted_sum(lambdas, s.iter().copied());
    if !least_cost.is_finite() {
        return linear;
    }
    let geo: f64 = lambdas.iter().zip(s).map(|(l, si)| si.powf(*l)).product();
    linear - geo * (-least_cost).exp()
}

/// Closed-form multi-marginal perspective cost using the table's least cost.
pub fn perspective_mm(table: &LeastCostTable, tuple: &[usize], s: &[f64]) -> Result<f64> {
    if s.len() != table.lambdas.len() {
        return Err(Error::InvalidProblem(format!(
            "{} masses for {} marginals",
            s.len(),
            table.lambdas.len()
        )));
    }
    for &si in s {
        if !(si >= 0.0 && si.is_finite()) {
            return Err(Error::InvalidMass(si));
        }
    }
    Ok(perspective_mm_value(&table.lambdas, s, table.value(tuple)))
}

/// Nested brute-force infimum over pivot `x` in `candidates`, pivot mass `s`
/// and joint scale `t` of `sum_i t (lambda_i c(x_i,x) + lambda_i R(s_i/t) + lambda_i R(s/t))`.
pub fn perspective_mm_oracle(
    points: &[Point],
    s: &[f64],
    lambdas: &[f64],
    candidates: &[Point],
    kind: GroundCostKind,
    s_grid: OracleGrid,
    t_grid: OracleGrid,
) -> f64 {
    let mut best = f64::INFINITY;
    for x in candidates {
        let costs: Vec<f64> = points.iter().map(|p| ground_cost(*p, *x, kind)).collect();
        let pivot_cost = weighted_sum(lambdas, costs.iter().copied());
        if !pivot_cost.is_finite() {
            continue;
        }
        let inner = |sp: f64| {
            let phi = |t: f64| {
                let mut acc = t * pivot_cost;
                for (l, si) in lambdas.iter().zip(s) {
                    if *l != 0.0 {
                        acc += t * l * (r_unchecked(si / t) + r_unchecked(sp / t));
                    }
                }
                acc
            };
            minimize_log_grid(phi, t_grid.lo, t_grid.hi, t_grid.points, t_grid.rounds).1
        };
        let (_, v) = minimize_log_grid(inner, s_grid.lo, s_grid.hi, s_grid.points, s_grid.rounds);
        best = best.min(v);
    }
    best
}

/// Infimum over candidate pivots `(x, s)` of `sum_i lambda_i H(x_i, s_i, x, s)`,
/// the per-term perspective cost of the unconstrained conic formulation.
pub fn perspective_mm_unconstrained(
    points: &[Point],
    s: &[f64],
    lambdas: &[f64],
    candidates: &[Point],
    kind: GroundCostKind,
    s_grid: OracleGrid,
) -> f64 {
    let mut best = f64::INFINITY;
    for x in candidates {
        let costs: Vec<f64> = points.iter().map(|p| ground_cost(*p, *x, kind)).collect();
        let total = |sp: f64| {
            weighted_sum(
                lambdas,
                costs
                    .iter()
                    .zip(s)
                    .map(|(c, si)| perspective_from_cost(*c, *si, sp)),
            )
        };
        // s = 0 annihilates the pivot entirely.
        best = best.min(total(0.0));
        let (_, v) = minimize_log_grid(total, s_grid.lo, s_grid.hi, s_grid.points, s_grid.rounds);
        best = best.min(v);
    }
    best
}
