//! Log-domain unbalanced multi-marginal Sinkhorn scaling with soft, hard and
//! free marginal penalties, absorption stabilization and epsilon annealing.
//!
//! The regularized problem is
//! `min_g <C, g> + sum_i D_i(g_i | mu_i) + eps KL(g | R)`
//! where `D_i` is `w KL` for `Soft(w)`, the equality indicator for `Hard` and
//! zero for `Free`. The plan is `g = R exp((f_1 + ... + f_N - C) / eps)` with
//! potentials `f_i` in cost units.

use serde::Serialize;

use crate::entropy::{f_unchecked, hard_vectors, kl_vectors};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::tensor::{for_each_in_slice, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginalPenalty {
    /// `w KL(g_i | mu_i)`.
    Soft(f64),
    /// `g_i = mu_i` exactly.
    Hard,
    /// Unpenalized; the target vector only weights the reference measure.
    Free,
}

impl MarginalPenalty {
    fn validate(&self) -> Result<()> {
        match self {
            MarginalPenalty::Soft(w) if !(w.is_finite() && *w > 0.0) => {
                Err(Error::InvalidConfig(format!("soft weight must be positive, got {w}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    pub epsilon_factor: f64,
    /// Iteration cap per epsilon stage.
    pub max_iter: usize,
    /// Threshold on the sup-norm change of the potentials over one sweep.
    pub tol: f64,
    /// Absorb potentials into the kernel once `|f - f_abs| / eps` exceeds this.
    pub stabilization: f64,
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon_start: 1e-1,
            epsilon_final: 1e-3,
            epsilon_factor: 0.5,
            max_iter: 5000,
            tol: 1e-9,
            stabilization: 50.0,
            exec: Exec::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.epsilon_final > 0.0 && self.epsilon_final <= self.epsilon_start && self.epsilon_start.is_finite()) {
            return bad(format!(
                "need 0 < epsilon_final <= epsilon_start, got {} and {}",
                self.epsilon_final, self.epsilon_start
            ));
        }
        if !(self.epsilon_factor > 0.0 && self.epsilon_factor < 1.0) {
            return bad(format!("epsilon_factor must lie in (0, 1), got {}", self.epsilon_factor));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.stabilization > 0.0) {
            return bad(format!("stabilization must be positive, got {}", self.stabilization));
        }
        Ok(())
    }

    /// Geometric schedule from `epsilon_start` down to exactly `epsilon_final`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut eps = self.epsilon_start;
        while eps > self.epsilon_final * (1.0 + 1e-12) {
            out.push(eps);
            eps *= self.epsilon_factor;
        }
        out.push(self.epsilon_final);
        out
    }
}

/// Cost tensor over support indices with one target vector and penalty per axis.
#[derive(Debug, Clone)]
pub struct ScalingProblem {
    pub cost: Tensor,
    pub targets: Vec<Vec<f64>>,
    pub penalties: Vec<MarginalPenalty>,
}

impl ScalingProblem {
    pub fn new(cost: Tensor, targets: Vec<Vec<f64>>, penalties: Vec<MarginalPenalty>) -> Result<Self> {
        let p = ScalingProblem {
            cost,
            targets,
            penalties,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cost.ndim();
        if self.targets.len() != n || self.penalties.len() != n {
            return Err(Error::InvalidProblem(format!(
                "{}-way cost with {} targets and {} penalties",
                n,
                self.targets.len(),
                self.penalties.len()
            )));
        }
        for (axis, (t, &len)) in self.targets.iter().zip(self.cost.shape()).enumerate() {
            if t.len() != len {
                return Err(Error::InvalidProblem(format!(
                    "axis {axis}: target has {} entries, cost has {len}",
                    t.len()
                )));
            }
            if let Some(&m) = t.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
                return Err(Error::InvalidMass(m));
            }
        }
        for p in &self.penalties {
            p.validate()?;
        }
        if self.penalties.iter().all(|p| *p == MarginalPenalty::Free) {
            return Err(Error::InvalidProblem("all marginals are free".into()));
        }
        if self.cost.data().iter().any(|c| c.is_nan() || *c < 0.0 && c.is_infinite()) {
            return Err(Error::InvalidProblem("cost contains NaN or -inf".into()));
        }
        Ok(())
    }
}

/// Nonnegative plan tensor; `axes[i][k]` is the grid index of entry `k` on axis `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub values: Tensor,
    pub axes: Vec<Vec<usize>>,
}

impl TransportPlan {
    pub fn identity_axes(values: Tensor) -> Self {
        let axes = values.shape().iter().map(|&n| (0..n).collect()).collect();
        TransportPlan { values, axes }
    }

    pub fn total_mass(&self) -> f64 {
        self.values.sum()
    }

    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        self.values.marginal(axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub epsilon: f64,
    pub iterations: usize,
    pub residual: f64,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    /// Unregularized objective of the returned plan.
    pub objective: f64,
    /// Objective including `eps KL(plan | R)`.
    pub regularized: f64,
    pub marginal_residuals: Vec<f64>,
    pub fixed_point_residual: f64,
    pub iterations: usize,
    pub stages: Vec<StageReport>,
    pub converged: bool,
    pub epsilon: f64,
    /// False when a hard marginal cannot be met by any plan.
    pub feasible: bool,
}

fn log_sum_exp_stream(acc: &mut (f64, f64), v: f64) {
    if v == f64::NEG_INFINITY {
        return;
    }
    let (max, sum) = acc;
    if v > *max {
        *sum = *sum * (*max - v).exp() + 1.0;
        *max = v;
    } else {
        *sum += (v - *max).exp();
    }
}

fn finish_lse(acc: (f64, f64)) -> f64 {
    if acc.0 == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        acc.0 + acc.1.ln()
    }
}

/// Log-domain scaling state at a fixed epsilon.
struct State<'a> {
    problem: &'a ScalingProblem,
    eps: f64,
    exec: Exec,
    /// `(sum_j f_abs_j - C) / eps`.
    kernel: Vec<f64>,
    absorbed: Vec<Vec<f64>>,
    /// Log of the per-axis reference factor: `p_i log mu_i`, or the free weight.
    log_ref: Vec<Vec<f64>>,
    /// Reference exponent `p_i` of each axis (zero for free axes).
    exponents: Vec<f64>,
    log_mass: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(problem: &'a ScalingProblem, eps: f64, exec: Exec, potentials: &[Vec<f64>]) -> Self {
        let n = problem.cost.ndim();
        let raw: Vec<f64> = problem
            .penalties
            .iter()
            .map(|p| match p {
                MarginalPenalty::Soft(w) => *w,
                MarginalPenalty::Hard => 1.0,
                MarginalPenalty::Free => 0.0,
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let exponents: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut log_ref = Vec::with_capacity(n);
        let mut log_mass = Vec::with_capacity(n);
        for ((t, p), e) in problem.targets.iter().zip(&problem.penalties).zip(&exponents) {
            if *p == MarginalPenalty::Free {
                log_ref.push(t.iter().map(|w| w.ln()).collect());
            } else {
                log_ref.push(t.iter().map(|w| if *w > 0.0 { e * w.ln() } else { f64::NEG_INFINITY }).collect());
            }
            log_mass.push(t.iter().sum::<f64>().ln());
        }
        let mut s = State {
            problem,
            eps,
            exec,
            kernel: Vec::new(),
            absorbed: potentials.to_vec(),
            log_ref,
            exponents,
            log_mass,
        };
        s.rebuild_kernel();
        s
    }

    fn rebuild_kernel(&mut self) {
        let cost = &self.problem.cost;
        let eps = self.eps;
        let absorbed = &self.absorbed;
        let shape = cost.shape();
        let strides = cost.strides();
        let data = cost.data();
        let mut kernel = vec![0.0; cost.len()];
        exec::fill(self.exec, &mut kernel, |k| {
            let c = data[k];
            if c == f64::INFINITY {
                return f64::NEG_INFINITY;
            }
            let mut s = 0.0;
            for (axis, (st, len)) in strides.iter().zip(shape).enumerate() {
                s += absorbed[axis][(k / st) % len];
            }
            (s - c) / eps
        });
        self.kernel = kernel;
    }

    fn absorb(&mut self, f: &[Vec<f64>]) {
        self.absorbed = f.to_vec();
        self.rebuild_kernel();
    }

    fn needs_absorb(&self, f: &[Vec<f64>], threshold: f64) -> bool {
        f.iter()
            .zip(&self.absorbed)
            .any(|(fi, ai)| fi.iter().zip(ai).any(|(x, a)| ((x - a) / self.eps).abs() > threshold))
    }

    /// Per-axis log weights `(f_i - f_abs_i) / eps + log_ref_i`.
    fn scaled(&self, f: &[Vec<f64>]) -> Vec<Vec<f64>> {
        f.iter()
            .zip(&self.absorbed)
            .zip(&self.log_ref)
            .map(|((fi, ai), ri)| {
                fi.iter()
                    .zip(ai)
                    .zip(ri)
                    .map(|((x, a), r)| if *r == f64::NEG_INFINITY { f64::NEG_INFINITY } else { (x - a) / self.eps + r })
                    .collect()
            })
            .collect()
    }

    /// `log sum_{rest} exp(kernel + sum_{j != axis} g_j)` for every entry of `axis`.
    fn slice_lse(&self, axis: usize, g: &[Vec<f64>]) -> Vec<f64> {
        let shape = self.problem.cost.shape();
        let strides = self.problem.cost.strides();
        let kernel = &self.kernel;
        exec::map_range(self.exec, shape[axis], |x| {
            let mut acc = (f64::NEG_INFINITY, 0.0);
            for_each_in_slice(shape, strides, axis, x, |k, idx| {
                let mut v = kernel[k];
                if v == f64::NEG_INFINITY {
                    return;
                }
                for (j, gj) in g.iter().enumerate() {
                    if j != axis {
                        v += gj[idx[j]];
                    }
                }
                log_sum_exp_stream(&mut acc, v);
            });
            finish_lse(acc)
        })
    }

    /// Log of the plan mass; chunked by the leading axis in a fixed order.
    fn log_plan_mass(&self, g: &[Vec<f64>]) -> f64 {
        let parts = self.slice_lse_full(g);
        let mut acc = (f64::NEG_INFINITY, 0.0);
        for v in parts {
            log_sum_exp_stream(&mut acc, v);
        }
        finish_lse(acc)
    }

    fn slice_lse_full(&self, g: &[Vec<f64>]) -> Vec<f64> {
        let mut lse = self.slice_lse(0, g);
        for (v, g0) in lse.iter_mut().zip(&g[0]) {
            *v += g0;
        }
        lse
    }

    /// Coordinate update of one axis. Returns false when a hard marginal has a
    /// target atom no plan can reach.
    fn update_axis(&self, axis: usize, f: &mut [Vec<f64>]) -> bool {
        let penalty = self.problem.penalties[axis];
        if penalty == MarginalPenalty::Free {
            return true;
        }
        let g = self.scaled(f);
        let lse = self.slice_lse(axis, &g);
        let target = &self.problem.targets[axis];
        let eps = self.eps;
        let factor = match penalty {
            MarginalPenalty::Soft(w) => w * eps / (w + eps),
            MarginalPenalty::Hard => eps,
            MarginalPenalty::Free => unreachable!(),
        };
        let mut feasible = true;
        for (x, fx) in f[axis].iter_mut().enumerate() {
            if target[x] <= 0.0 {
                continue;
            }
            if lse[x] == f64::NEG_INFINITY {
                if penalty == MarginalPenalty::Hard {
                    feasible = false;
                }
                continue;
            }
            // log B_i - log mu_i without the f_i / eps term.
            let log_ratio = lse[x] - self.absorbed[axis][x] / eps + (self.exponents[axis] - 1.0) * target[x].ln();
            *fx = -factor * log_ratio;
        }
        feasible
    }

    /// Dual-optimal constant shift of all non-free potentials.
    fn translate(&self, f: &mut [Vec<f64>]) {
        let g = self.scaled(f);
        let log_m = self.log_plan_mass(&g);
        if !log_m.is_finite() {
            return;
        }
        let penalties = &self.problem.penalties;
        let log_a: Vec<f64> = penalties
            .iter()
            .enumerate()
            .map(|(i, p)| match p {
                MarginalPenalty::Soft(w) => {
                    let mut acc = (f64::NEG_INFINITY, 0.0);
                    for (fx, m) in f[i].iter().zip(&self.problem.targets[i]) {
                        if *m > 0.0 {
                            log_sum_exp_stream(&mut acc, -fx / w + m.ln());
                        }
                    }
                    finish_lse(acc)
                }
                _ => f64::NAN,
            })
            .collect();
        let hard = penalties.iter().position(|p| *p == MarginalPenalty::Hard);
        let mut shifts = vec![0.0; f.len()];
        match hard {
            Some(h) => {
                let log_h = self.log_mass[h];
                let total = self.eps * (log_h - log_m);
                let mut rest = total;
                for (i, p) in penalties.iter().enumerate() {
                    if let MarginalPenalty::Soft(w) = p {
                        shifts[i] = -w * (log_h - log_a[i]);
                        rest -= shifts[i];
                    }
                }
                shifts[h] = rest;
            }
            None => {
                let mut num = 0.0;
                let mut weight = 0.0;
                for (i, p) in penalties.iter().enumerate() {
                    if let MarginalPenalty::Soft(w) = p {
                        num += w * (log_m - log_a[i]);
                        weight += w;
                    }
                }
                let total = -self.eps * num / (self.eps + weight);
                for (i, p) in penalties.iter().enumerate() {
                    if let MarginalPenalty::Soft(w) = p {
                        shifts[i] = -w * (log_m + total / self.eps - log_a[i]);
                    }
                }
            }
        }
        if shifts.iter().any(|s| !s.is_finite()) {
            return;
        }
        for (fi, s) in f.iter_mut().zip(&shifts) {
            if *s != 0.0 {
                fi.iter_mut().for_each(|v| *v += s);
            }
        }
    }

    fn plan(&self, f: &[Vec<f64>]) -> Tensor {
        let g = self.scaled(f);
        let cost = &self.problem.cost;
        let shape = cost.shape();
        let strides = cost.strides();
        let kernel = &self.kernel;
        let mut data = vec![0.0; cost.len()];
        exec::fill(self.exec, &mut data, |k| {
            let mut v = kernel[k];
            if v == f64::NEG_INFINITY {
                return 0.0;
            }
            for (axis, (st, len)) in strides.iter().zip(shape).enumerate() {
                v += g[axis][(k / st) % len];
            }
            v.exp()
        });
        Tensor::from_vec(shape, data).expect("shape matches")
    }

    /// `KL(plan | R)` using `log(plan / R) = kernel + sum_i (f_i - f_abs_i) / eps`.
    fn entropy_term(&self, plan: &Tensor, f: &[Vec<f64>]) -> f64 {
        let shape = plan.shape();
        let strides = plan.strides();
        let mut acc = 0.0;
        for (k, &p) in plan.data().iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let mut v = self.kernel[k];
            for (axis, (st, len)) in strides.iter().zip(shape).enumerate() {
                let x = (k / st) % len;
                v += (f[axis][x] - self.absorbed[axis][x]) / self.eps;
            }
            acc += p * v - p;
        }
        let ref_mass: f64 = self
            .log_ref
            .iter()
            .map(|r| r.iter().map(|v| v.exp()).sum::<f64>())
            .product::<f64>();
        acc + ref_mass
    }
}

/// Rescales the slices of a single hard axis so its marginal equals the target
/// up to summation rounding, removing the log-domain rounding of the last update.
fn project_hard(plan: &mut Tensor, problem: &ScalingProblem) {
    let mut hard = problem.penalties.iter().enumerate().filter(|(_, p)| **p == MarginalPenalty::Hard);
    let (Some((axis, _)), None) = (hard.next(), hard.next()) else {
        return;
    };
    let marg = plan.marginal(axis);
    let target = &problem.targets[axis];
    let scale: Vec<f64> = marg
        .iter()
        .zip(target)
        .map(|(g, m)| if *g > 0.0 { m / g } else { 1.0 })
        .collect();
    let stride = plan.strides()[axis];
    let n = plan.shape()[axis];
    for (k, v) in plan.data_mut().iter_mut().enumerate() {
        *v *= scale[(k / stride) % n];
    }
}

fn empty_or_massless(problem: &ScalingProblem) -> bool {
    problem.cost.is_empty()
        || problem
            .targets
            .iter()
            .zip(&problem.penalties)
            .any(|(t, p)| *p != MarginalPenalty::Free && t.iter().sum::<f64>() <= 0.0)
}

fn zero_potentials(problem: &ScalingProblem) -> Vec<Vec<f64>> {
    problem.cost.shape().iter().map(|&n| vec![0.0; n]).collect()
}

struct StageOutcome {
    iterations: usize,
    residual: f64,
    converged: bool,
    feasible: bool,
}

fn run_stage(state: &mut State, f: &mut Vec<Vec<f64>>, cfg: &SolverConfig) -> StageOutcome {
    let n = f.len();
    let mut residual = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let before = f.clone();
        if it > 0 {
            state.translate(f);
        }
        for axis in 0..n {
            if !state.update_axis(axis, f) {
                return StageOutcome {
                    iterations: it + 1,
                    residual: f64::INFINITY,
                    converged: false,
                    feasible: false,
                };
            }
        }
        residual = before
            .iter()
            .zip(f.iter())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        if state.needs_absorb(f, cfg.stabilization) {
            state.absorb(f);
        }
        if residual < cfg.tol {
            return StageOutcome {
                iterations: it + 1,
                residual,
                converged: true,
                feasible: true,
            };
        }
    }
    StageOutcome {
        iterations: cfg.max_iter,
        residual,
        converged: false,
        feasible: true,
    }
}

fn trivial_solution(problem: &ScalingProblem, eps: f64) -> (TransportPlan, SolverReport) {
    let plan = Tensor::zeros(problem.cost.shape());
    let objective = unregularized_objective(&plan, &problem.cost, &problem.targets, &problem.penalties);
    let report = SolverReport {
        objective,
        regularized: objective,
        marginal_residuals: marginal_residuals(&plan, &problem.targets, &problem.penalties),
        fixed_point_residual: 0.0,
        iterations: 0,
        stages: vec![StageReport {
            epsilon: eps,
            iterations: 0,
            residual: 0.0,
            objective,
            converged: true,
        }],
        converged: true,
        epsilon: eps,
        feasible: objective.is_finite(),
    };
    (TransportPlan::identity_axes(plan), report)
}

/// Runs the scaling iterations at one epsilon, warm-starting from and updating
/// `potentials` (cost units, one vector per axis).
pub fn sinkhorn_warm(
    problem: &ScalingProblem,
    epsilon: f64,
    cfg: &SolverConfig,
    potentials: &mut Vec<Vec<f64>>,
) -> Result<(TransportPlan, SolverReport)> {
    problem.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    if empty_or_massless(problem) {
        return Ok(trivial_solution(problem, epsilon));
    }
    if potentials.len() != problem.cost.ndim()
        || potentials.iter().zip(problem.cost.shape()).any(|(p, &n)| p.len() != n)
    {
        *potentials = zero_potentials(problem);
    }
    let mut state = State::new(problem, epsilon, cfg.exec, potentials);
    let outcome = run_stage(&mut state, potentials, cfg);
    if !outcome.feasible {
        let (plan, mut report) = trivial_solution(problem, epsilon);
        report.objective = f64::INFINITY;
        report.regularized = f64::INFINITY;
        report.iterations = outcome.iterations;
        report.feasible = false;
        report.converged = false;
        report.stages[0].iterations = outcome.iterations;
        report.stages[0].objective = f64::INFINITY;
        report.stages[0].converged = false;
        return Ok((plan, report));
    }
    let mut plan = state.plan(potentials);
    project_hard(&mut plan, problem);
    let objective = unregularized_objective(&plan, &problem.cost, &problem.targets, &problem.penalties);
    let regularized = objective + epsilon * state.entropy_term(&plan, potentials);
    let report = SolverReport {
        objective,
        regularized,
        marginal_residuals: marginal_residuals(&plan, &problem.targets, &problem.penalties),
        fixed_point_residual: outcome.residual,
        iterations: outcome.iterations,
        stages: vec![StageReport {
            epsilon,
            iterations: outcome.iterations,
            residual: outcome.residual,
            objective,
            converged: outcome.converged,
        }],
        converged: outcome.converged,
        epsilon,
        feasible: true,
    };
    Ok((TransportPlan::identity_axes(plan), report))
}

/// Cold-started scaling at a single epsilon.
pub fn sinkhorn_general(
    problem: &ScalingProblem,
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<(TransportPlan, SolverReport)> {
    cfg.validate()?;
    let mut f = zero_potentials(problem);
    sinkhorn_warm(problem, epsilon, cfg, &mut f)
}

/// Geometric epsilon annealing with warm-started potentials.
pub fn anneal(problem: &ScalingProblem, cfg: &SolverConfig) -> Result<(TransportPlan, SolverReport)> {
    cfg.validate()?;
    problem.validate()?;
    let mut f = zero_potentials(problem);
    let mut stages = Vec::new();
    let mut iterations = 0;
    let mut last = None;
    for eps in cfg.schedule() {
        let (plan, report) = sinkhorn_warm(problem, eps, cfg, &mut f)?;
        iterations += report.iterations;
        stages.extend(report.stages.iter().cloned());
        let stop = !report.feasible;
        last = Some((plan, report));
        if stop {
            break;
        }
    }
    let (plan, mut report) = last.expect("schedule is never empty");
    report.iterations = iterations;
    report.stages = stages;
    Ok((plan, report))
}

/// `<C, plan> + sum_i D_i(plan_i | target_i)`; zero plan entries contribute
/// nothing even where the cost is infinite.
pub fn unregularized_objective(
    plan: &Tensor,
    cost: &Tensor,
    targets: &[Vec<f64>],
    penalties: &[MarginalPenalty],
) -> f64 {
    let mut transport = 0.0;
    for (&p, &c) in plan.data().iter().zip(cost.data()) {
        if p > 0.0 {
            transport += p * c;
        }
    }
    let mut total = transport;
    for (axis, (t, pen)) in targets.iter().zip(penalties).enumerate() {
        let marg = plan.marginal(axis);
        total += match pen {
            MarginalPenalty::Soft(w) => w * kl_vectors(&marg, t),
            MarginalPenalty::Hard => hard_vectors(&marg, t),
            MarginalPenalty::Free => 0.0,
        };
    }
    total
}

/// Unweighted KL for soft axes, sup-norm gap for hard axes, zero for free axes.
pub fn marginal_residuals(plan: &Tensor, targets: &[Vec<f64>], penalties: &[MarginalPenalty]) -> Vec<f64> {
    targets
        .iter()
        .zip(penalties)
        .enumerate()
        .map(|(axis, (t, pen))| {
            let marg = plan.marginal(axis);
            match pen {
                MarginalPenalty::Soft(_) => kl_vectors(&marg, t),
                MarginalPenalty::Hard => marg.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                MarginalPenalty::Free => 0.0,
            }
        })
        .collect()
}

/// Optimal mass of a single-atom soft problem: `min_t t c + sum_i w_i m_i F(t / m_i)`,
/// attained at `t = prod m_i^(w_i / W) exp(-c / W)`.
pub fn single_atom_mass(cost: f64, masses: &[f64], weights: &[f64]) -> f64 {
    if !cost.is_finite() {
        return 0.0;
    }
    let w: f64 = weights.iter().sum();
    let log_t: f64 = masses.iter().zip(weights).map(|(m, wi)| wi * m.ln()).sum::<f64>() / w - cost / w;
    log_t.exp()
}

/// Objective of `single_atom_mass` at a given mass `t`.
pub fn single_atom_objective(t: f64, cost: f64, masses: &[f64], weights: &[f64]) -> f64 {
    let transport = if t > 0.0 { t * cost } else { 0.0 };
    transport
        + masses
            .iter()
            .zip(weights)
            .map(|(m, w)| w * m * f_unchecked(t / m))
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    fn soft2() -> Vec<MarginalPenalty> {
        vec![MarginalPenalty::Soft(0.5), MarginalPenalty::Soft(0.5)]
    }

    // Brute-force minimizer of the one-atom objective over a fine mass grid.
    fn scan_atom(cost: f64, masses: &[f64], weights: &[f64]) -> (f64, f64) {
        let mut best = (0.0, single_atom_objective(0.0, cost, masses, weights));
        for k in 1..=400_000 {
            let t = k as f64 * 1e-5;
            let v = single_atom_objective(t, cost, masses, weights);
            if v < best.1 {
                best = (t, v);
            }
        }
        best
    }

    #[test]
    fn config_validation_and_schedule() {
        assert!(cfg().validate().is_ok());
        let s = cfg().schedule();
        assert_eq!(s.len(), 8);
        assert_eq!(s[0], 1e-1);
        assert_eq!(*s.last().unwrap(), 1e-3);
        let mut c = cfg();
        c.epsilon_factor = 1.0;
        assert!(c.validate().is_err());
        c = cfg();
        c.epsilon_final = 1.0;
        assert!(c.validate().is_err());
        c = cfg();
        c.epsilon_start = 1e-3;
        assert_eq!(c.schedule(), vec![1e-3]);
    }

    #[test]
    fn problem_validation() {
        let cost = Tensor::zeros(&[2, 2]);
        assert!(ScalingProblem::new(cost.clone(), vec![vec![1.0; 2]; 2], vec![MarginalPenalty::Free; 2]).is_err());
        assert!(ScalingProblem::new(cost.clone(), vec![vec![1.0; 2]], soft2()).is_err());
        assert!(ScalingProblem::new(cost.clone(), vec![vec![1.0, -1.0], vec![1.0; 2]], soft2()).is_err());
        assert!(ScalingProblem::new(cost, vec![vec![1.0; 2]; 2], vec![MarginalPenalty::Soft(0.0), MarginalPenalty::Hard]).is_err());
    }

    #[test]
    fn identity_coupling_between_identical_targets() {
        let n = 5;
        let cost = Tensor::from_fn(&[n, n], |i| {
            let d = (i[0] as f64 - i[1] as f64) * 0.25;
            d * d
        });
        let mu = vec![0.2; n];
        let p = ScalingProblem::new(cost, vec![mu.clone(), mu], soft2()).unwrap();
        let (plan, report) = sinkhorn_general(&p, 1e-2, &cfg()).unwrap();
        assert!(report.converged);
        assert!(report.objective <= 1e-3, "{}", report.objective);
        for a in 0..n {
            assert!(plan.values.get(&[a, a]) > 0.19);
        }
    }

    #[test]
    fn single_atom_oracle_matches_closed_form() {
        let c = -(0.25f64.cos().powi(2)).ln();
        let t = single_atom_mass(c, &[1.0, 2.0], &[0.5, 0.5]);
        assert_abs_diff_eq!(t, 2f64.sqrt() * 0.25f64.cos().powi(2), epsilon = 1e-12);
        let (ts, vs) = scan_atom(c, &[1.0, 2.0], &[0.5, 0.5]);
        assert_abs_diff_eq!(ts, t, epsilon = 1e-5);
        assert_abs_diff_eq!(vs, 1.5 - t, epsilon = 1e-9);
    }

    #[test]
    fn dirac_pair_mass_approaches_oracle() {
        let c = -(0.25f64.cos().powi(2)).ln();
        let cost = Tensor::filled(&[1, 1], c);
        let p = ScalingProblem::new(cost, vec![vec![1.0], vec![1.0]], soft2()).unwrap();
        let mut cf = cfg();
        cf.epsilon_final = 1e-4;
        let (plan, report) = anneal(&p, &cf).unwrap();
        assert!(report.converged);
        let oracle = 0.25f64.cos().powi(2);
        assert_relative_eq!(plan.total_mass(), oracle, max_relative = 1e-3);

        let p = ScalingProblem::new(Tensor::filled(&[1, 1], c), vec![vec![1.0], vec![2.0]], soft2()).unwrap();
        let (plan, report) = anneal(&p, &cf).unwrap();
        let t = single_atom_mass(c, &[1.0, 2.0], &[0.5, 0.5]);
        assert_relative_eq!(plan.total_mass(), t, max_relative = 1e-3);
        assert_abs_diff_eq!(report.objective, 1.5 - t, epsilon = 1e-6);
    }

    #[test]
    fn default_schedule_within_one_percent() {
        let c = -(0.25f64.cos().powi(2)).ln();
        let p = ScalingProblem::new(Tensor::filled(&[1, 1], c), vec![vec![1.0], vec![1.0]], soft2()).unwrap();
        let (plan, _) = anneal(&p, &cfg()).unwrap();
        assert_relative_eq!(plan.total_mass(), 0.25f64.cos().powi(2), max_relative = 1e-2);
    }

    #[test]
    fn single_stage_equals_single_call() {
        let cost = Tensor::from_fn(&[3, 4], |i| (i[0] as f64 * 0.1 - i[1] as f64 * 0.07).powi(2));
        let p = ScalingProblem::new(cost, vec![vec![0.3, 0.5, 0.2], vec![0.4, 0.1, 0.3, 0.6]], soft2()).unwrap();
        let mut c = cfg();
        c.epsilon_start = 1e-2;
        c.epsilon_final = 1e-2;
        let (a, ra) = anneal(&p, &c).unwrap();
        let (b, rb) = sinkhorn_general(&p, 1e-2, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.objective, rb.objective);
    }

    #[test]
    fn infinite_cost_gives_zero_plan() {
        let p = ScalingProblem::new(Tensor::filled(&[1, 1], f64::INFINITY), vec![vec![1.0], vec![2.0]], soft2()).unwrap();
        let (plan, report) = anneal(&p, &cfg()).unwrap();
        assert_eq!(plan.total_mass(), 0.0);
        assert_eq!(report.objective, 1.5);
        assert!(report.stages.iter().all(|s| s.objective == 1.5));
    }

    #[test]
    fn infinite_entries_carry_no_mass() {
        let cost = Tensor::from_vec(&[2, 2], vec![0.0, f64::INFINITY, 0.3, 0.0]).unwrap();
        let p = ScalingProblem::new(cost, vec![vec![1.0, 1.0], vec![1.0, 1.0]], soft2()).unwrap();
        let (plan, _) = anneal(&p, &cfg()).unwrap();
        assert_eq!(plan.values.get(&[0, 1]), 0.0);
        assert!(plan.values.get(&[1, 0]) > 0.0);
    }

    #[test]
    fn hard_axis_matches_target() {
        let cost = Tensor::from_fn(&[3, 2], |i| (i[0] as f64 * 0.2 - i[1] as f64 * 0.3).powi(2));
        let nu = vec![0.7, 1.1];
        let p = ScalingProblem::new(
            cost,
            vec![vec![0.5, 0.9, 0.4], nu.clone()],
            vec![MarginalPenalty::Soft(1.0), MarginalPenalty::Hard],
        )
        .unwrap();
        let (plan, report) = anneal(&p, &cfg()).unwrap();
        assert!(report.feasible);
        let marg = plan.marginal(1);
        for (a, b) in marg.iter().zip(&nu) {
            assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
        }
        assert!(report.objective.is_finite());
    }

    #[test]
    fn unreachable_hard_target_is_infeasible() {
        let cost = Tensor::filled(&[1, 1], f64::INFINITY);
        let p = ScalingProblem::new(cost, vec![vec![1.0], vec![1.0]], vec![MarginalPenalty::Soft(1.0), MarginalPenalty::Hard]).unwrap();
        let (plan, report) = anneal(&p, &cfg()).unwrap();
        assert_eq!(plan.total_mass(), 0.0);
        assert_eq!(report.objective, f64::INFINITY);
        assert!(!report.feasible);
    }

    #[test]
    fn zero_hard_target_gives_zero_plan() {
        let cost = Tensor::filled(&[2, 1], 0.0);
        let p = ScalingProblem::new(cost, vec![vec![1.0, 2.0], vec![0.0]], vec![MarginalPenalty::Soft(1.0), MarginalPenalty::Hard]).unwrap();
        let (plan, report) = anneal(&p, &cfg()).unwrap();
        assert_eq!(plan.total_mass(), 0.0);
        assert_eq!(report.objective, 3.0);
    }

    #[test]
    fn objective_examples() {
        let cost = Tensor::from_vec(&[2, 2], vec![0.0, f64::INFINITY, 1.0, 0.0]).unwrap();
        let t = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let zero = Tensor::zeros(&[2, 2]);
        assert_eq!(unregularized_objective(&zero, &cost, &t, &soft2()), 3.0);
        let id = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(unregularized_objective(&id, &cost, &t, &soft2()), 0.0);
        assert_eq!(marginal_residuals(&id, &t, &soft2()), vec![0.0, 0.0]);
        let unit = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(marginal_residuals(&zero, &unit, &soft2()), vec![2.0, 2.0]);
        let hard = vec![MarginalPenalty::Soft(1.0), MarginalPenalty::Hard];
        assert_eq!(marginal_residuals(&id, &t, &hard)[1], 0.0);
        assert_eq!(unregularized_objective(&zero, &cost, &t, &hard), f64::INFINITY);
        let free = vec![MarginalPenalty::Soft(1.0), MarginalPenalty::Free];
        assert_eq!(unregularized_objective(&zero, &cost, &t, &free), 3.0);
    }

    #[test]
    fn regularized_dominates_unregularized() {
        let cost = Tensor::from_fn(&[4, 4], |i| (i[0] as f64 * 0.1 - i[1] as f64 * 0.15).powi(2));
        let p = ScalingProblem::new(cost, vec![vec![0.25; 4], vec![0.5, 0.1, 0.2, 0.3]], soft2()).unwrap();
        let (_, r) = sinkhorn_general(&p, 0.05, &cfg()).unwrap();
        assert!(r.regularized >= r.objective - 1e-12);
    }

    #[test]
    fn three_marginal_soft_and_free() {
        let cost = Tensor::from_fn(&[3, 3, 4], |i| {
            let x = [i[0] as f64 * 0.2, i[1] as f64 * 0.25];
            let y = i[2] as f64 * 0.15;
            0.5 * (x[0] - y).powi(2) + 0.5 * (x[1] - y).powi(2)
        });
        let p = ScalingProblem::new(
            cost,
            vec![vec![0.3, 0.3, 0.4], vec![0.6, 0.2, 0.4], vec![1.0; 4]],
            vec![MarginalPenalty::Soft(0.5), MarginalPenalty::Soft(0.5), MarginalPenalty::Free],
        )
        .unwrap();
        let (_, r) = anneal(&p, &cfg()).unwrap();
        assert!(r.converged);
        assert!(r.fixed_point_residual < cfg().tol);
    }

    #[test]
    fn exec_policies_are_bit_identical() {
        let cost = Tensor::from_fn(&[6, 7], |i| (i[0] as f64 * 0.1 - i[1] as f64 * 0.09).powi(2));
        let p = ScalingProblem::new(
            cost,
            vec![(1..=6).map(|k| k as f64 * 0.1).collect(), vec![0.3; 7]],
            soft2(),
        )
        .unwrap();
        let mut a = cfg();
        a.exec = Exec::Sequential;
        let mut b = cfg();
        b.exec = Exec::Parallel;
        let (pa, ra) = anneal(&p, &a).unwrap();
        let (pb, rb) = anneal(&p, &b).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ra, rb);
    }
}
