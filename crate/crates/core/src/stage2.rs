//! Tikhonov refinement of the first-stage coefficient on adaptively refined
//! coefficient meshes.
//!
//! The state problem lives on the grid of `G'` and is driven by Neumann data
//! on its whole boundary; the misfit compares its boundary traces with the
//! immersed data `g~` on `S_T`. The gradient is the exact derivative of the
//! discrete functional (discrete adjoint).

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{TimeAxis, UniformGrid, DEPTH_AXIS};
use crate::mesh::{Face, QuadtreeCoeffMesh};
use crate::stage1::clamp_value;
use crate::wave::{simulate_adjoint, simulate_state, trapezoid_weight, Collect, NeumannData, StateBoundary, TimeTraces};
use crate::EPS_MIN;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub shrink: f64,
    pub max_trials: usize,
    /// Largest change of a cell value tried on the first step.
    pub initial_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            armijo: 1e-4,
            shrink: 0.5,
            max_trials: 30,
            initial_step: 1.0,
        }
    }
}

/// Part of `S_T` on which the misfit is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisfitSurface {
    /// The whole boundary of `G'`.
    Boundary,
    /// The top face `Gamma'` only.
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TikhonovConfig {
    pub gamma: f64,
    /// Gradient-norm stop.
    pub theta: f64,
    pub beta1: f64,
    pub max_refinements: usize,
    pub max_cg_iters: usize,
    /// Ramp width of `z_delta` as a fraction of `T`.
    pub delta_fraction: f64,
    pub line_search: LineSearch,
    pub eps_max: f64,
    /// Start each refined mesh from the previous result instead of `eps_glob`.
    pub warm_start: bool,
    /// Interpolation constant of the a posteriori estimates.
    pub c_interp: f64,
    /// Lipschitz constant `D` of the Theorem bound (not computable, supplied).
    pub lipschitz: f64,
    pub misfit_surface: MisfitSurface,
    /// Boundary model of the state problem; fixed when the Neumann data are
    /// extracted.
    pub state_boundary: StateBoundary,
}

impl Default for TikhonovConfig {
    fn default() -> Self {
        TikhonovConfig {
            gamma: 1e-5,
            theta: 1e-8,
            beta1: 0.5,
            max_refinements: 4,
            max_cg_iters: 20,
            delta_fraction: 0.1,
            line_search: LineSearch::default(),
            eps_max: crate::DEFAULT_EPS_MAX,
            warm_start: true,
            c_interp: 1.0,
            lipschitz: 1.0,
            misfit_surface: MisfitSurface::Top,
            state_boundary: StateBoundary::Transparent,
        }
    }
}

impl TikhonovConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.gamma > 0.0) {
            bad.push("gamma > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            bad.push("beta1 in (0, 1)");
        }
        if !(self.delta_fraction > 0.0 && self.delta_fraction < 1.0) {
            bad.push("delta_fraction in (0, 1)");
        }
        if !(self.theta >= 0.0) {
            bad.push("theta >= 0");
        }
        let ls = &self.line_search;
        if !(ls.armijo > 0.0 && ls.armijo < 1.0 && ls.shrink > 0.0 && ls.shrink < 1.0 && ls.initial_step > 0.0) {
            bad.push("line search constants");
        }
        if !(self.eps_max > EPS_MIN) {
            bad.push("eps_max > 1");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("stage-2 settings violate {}", bad.join(", "))))
        }
    }
}

/// 1 on `[0, T - delta]`, then a cosine half-ramp to 0 at `T`.
pub fn z_delta(t: f64, t_final: f64, delta: f64) -> f64 {
    let start = t_final - delta;
    if t <= start {
        1.0
    } else if t >= t_final {
        0.0
    } else {
        0.5 * (1.0 + (core::f64::consts::PI * (t - start) / delta).cos())
    }
}

fn check_meshes(eps: &QuadtreeCoeffMesh, eps_glob: &QuadtreeCoeffMesh) -> Result<()> {
    if eps.len() != eps_glob.len() {
        return Err(Error::Dimension {
            what: "first-stage coefficient cells",
            expected: eps.len(),
            found: eps_glob.len(),
        });
    }
    Ok(())
}

/// Misfit part `1/2 int_{S_T} (E - g)^2 z_delta`, trapezoid in time and the
/// boundary weights `weights` in space.
pub fn misfit_value(e: &TimeTraces, g: &TimeTraces, weights: &[f64], delta: f64) -> Result<f64> {
    if !e.same_sampling(g) || weights.len() != e.len() {
        return Err(Error::Dimension {
            what: "misfit traces",
            expected: e.data.len(),
            found: g.data.len(),
        });
    }
    let axis = e.axis;
    let zt: Vec<f64> = (0..axis.samples())
        .map(|k| axis.tau() * trapezoid_weight(&axis, k) * z_delta(axis.time(k), axis.t_final(), delta))
        .collect();
    let mut acc = 0.0;
    for i in 0..e.len() {
        let (a, b) = (e.trace(i), g.trace(i));
        let s: f64 = a.iter().zip(b).zip(&zt).map(|((x, y), w)| w * (x - y) * (x - y)).sum();
        acc += weights[i] * s;
    }
    Ok(0.5 * acc)
}

/// `1/2 gamma int (eps - eps_glob)^2`.
pub fn regularization_value(eps: &QuadtreeCoeffMesh, eps_glob: &QuadtreeCoeffMesh, gamma: f64) -> Result<f64> {
    check_meshes(eps, eps_glob)?;
    Ok(0.5 * gamma
        * eps
            .cells()
            .iter()
            .zip(eps_glob.cells())
            .enumerate()
            .map(|(id, (a, b))| eps.cell_measure(id) * (a.value - b.value).powi(2))
            .sum::<f64>())
}

pub fn tikhonov_value(
    e: &TimeTraces,
    g: &TimeTraces,
    weights: &[f64],
    eps: &QuadtreeCoeffMesh,
    eps_glob: &QuadtreeCoeffMesh,
    cfg: &TikhonovConfig,
) -> Result<f64> {
    let delta = cfg.delta_fraction * e.axis.t_final();
    Ok(misfit_value(e, g, weights, delta)? + regularization_value(eps, eps_glob, cfg.gamma)?)
}

/// Fixed inputs of the second stage.
#[derive(Debug, Clone, Copy)]
pub struct Stage2Problem<'a> {
    /// Grid of `G'`.
    pub grid: &'a UniformGrid,
    pub axis: TimeAxis,
    /// Neumann data of the state problem.
    pub neumann: &'a NeumannData,
    /// Immersed data `g~` on every boundary node of `grid`.
    pub data: &'a TimeTraces,
}

impl Stage2Problem<'_> {
    /// Boundary weights of the data nodes, zero off the misfit surface.
    fn weights(&self, surface: MisfitSurface) -> Vec<f64> {
        let top = self.grid.counts()[DEPTH_AXIS] - 1;
        self.data
            .nodes
            .iter()
            .map(|&n| match surface {
                MisfitSurface::Top if self.grid.ijk(n)[DEPTH_AXIS] != top => 0.0,
                _ => self.grid.boundary_weight(n),
            })
            .collect()
    }

    fn collect(&self, keep_fields: bool) -> Collect {
        Collect {
            record: self.data.nodes.clone(),
            keep_fields,
            ..Default::default()
        }
    }

    /// Tikhonov value of `eps` (one state solve).
    pub fn value(&self, eps: &QuadtreeCoeffMesh, eps_glob: &QuadtreeCoeffMesh, cfg: &TikhonovConfig) -> Result<f64> {
        let nodal = eps.embed_in(self.grid, EPS_MIN);
        let run = simulate_state(&nodal, self.grid, &self.axis, self.neumann, &self.collect(false))?;
        tikhonov_value(&run.traces, self.data, &self.weights(cfg.misfit_surface), eps, eps_glob, cfg)
    }
}

/// Fréchet derivative as a density on the coefficient cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub misfit: Vec<f64>,
    /// `gamma (eps - eps_glob)`.
    pub regularization: Vec<f64>,
}

impl GradientField {
    pub fn total(&self) -> Vec<f64> {
        self.misfit.iter().zip(&self.regularization).map(|(a, b)| a + b).collect()
    }
}

/// Everything one gradient evaluation produces.
#[derive(Debug, Clone)]
pub struct GradientRun {
    pub gradient: GradientField,
    pub value: f64,
    /// State field at every time level.
    pub state: Vec<Vec<f64>>,
    pub adjoint: Vec<Vec<f64>>,
}

/// One state and one adjoint solve: `L'(x) = misfit density + gamma (eps - eps_glob)`.
///
/// The misfit density on a cell is `(1/|c|) sum_i P_ci dJ/deps_i` where `P`
/// is the cell-to-node map and
/// `dJ/deps_i = -(V_i / tau) sum_{k<K} lambda_i^k (u^{k+1} - 2 u^k + u^{k-1})_i`.
pub fn compute_gradient(
    problem: &Stage2Problem,
    eps: &QuadtreeCoeffMesh,
    eps_glob: &QuadtreeCoeffMesh,
    cfg: &TikhonovConfig,
) -> Result<GradientRun> {
    check_meshes(eps, eps_glob)?;
    let grid = problem.grid;
    let axis = problem.axis;
    let nodal = eps.embed_in(grid, EPS_MIN);
    let run = simulate_state(&nodal, grid, &axis, problem.neumann, &problem.collect(true))?;
    let weights = problem.weights(cfg.misfit_surface);
    let value = tikhonov_value(&run.traces, problem.data, &weights, eps, eps_glob, cfg)?;
    let delta = cfg.delta_fraction * axis.t_final();
    let mut residual = run.traces.clone();
    let samples = axis.samples();
    for i in 0..residual.len() {
        let on = if weights[i] > 0.0 { 1.0 } else { 0.0 };
        for k in 0..samples {
            let z = on * z_delta(axis.time(k), axis.t_final(), delta);
            residual.data[i * samples + k] = z * (run.traces.sample(i, k) - problem.data.sample(i, k));
        }
    }
    let lambda = simulate_adjoint(&nodal, grid, &axis, problem.neumann.boundary, &residual)?;
    let u = &run.fields;
    let mut dj = vec![0.0; grid.len()];
    let zero = vec![0.0; grid.len()];
    for k in 0..axis.steps() {
        let um = if k == 0 { &zero } else { &u[k - 1] };
        for (i, d) in dj.iter_mut().enumerate() {
            *d += lambda[k][i] * (u[k + 1][i] - 2.0 * u[k][i] + um[i]);
        }
    }
    for (i, d) in dj.iter_mut().enumerate() {
        *d *= -grid.dual_volume(i) / axis.tau();
    }
    let cell_sums = eps.transpose_to_cells(grid, &dj)?;
    let misfit = cell_sums
        .iter()
        .enumerate()
        .map(|(id, s)| s / eps.cell_measure(id))
        .collect();
    let regularization = eps
        .cells()
        .iter()
        .zip(eps_glob.cells())
        .map(|(a, b)| cfg.gamma * (a.value - b.value))
        .collect();
    Ok(GradientRun {
        gradient: GradientField { misfit, regularization },
        value,
        state: run.fields,
        adjoint: lambda,
    })
}

/// `L2` inner product of two cell densities.
pub fn cell_dot(a: &[f64], b: &[f64], measures: &[f64]) -> f64 {
    a.iter().zip(b).zip(measures).map(|((x, y), m)| m * x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgState {
    pub m: usize,
    pub direction: Vec<f64>,
    pub beta: f64,
    /// Last accepted step.
    pub alpha: f64,
    /// `||L'^{m-1}||^2`.
    pub prev_grad_norm2: f64,
}

impl CgState {
    pub fn new() -> Self {
        CgState {
            m: 0,
            direction: Vec::new(),
            beta: 0.0,
            alpha: 0.0,
            prev_grad_norm2: 0.0,
        }
    }
}

impl Default for CgState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Accepted { eps: Vec<f64>, value: f64, trials: usize },
    /// The gradient vanishes.
    Converged,
    /// No trial step decreased the functional.
    Stall,
}

/// Gradient with the components removed that push a cell beyond an active
/// bound of `[1, eps_max]`.
pub fn projected_gradient(grad: &[f64], eps: &[f64], eps_max: f64) -> Vec<f64> {
    grad.iter()
        .zip(eps)
        .map(|(&g, &e)| {
            if (e <= EPS_MIN && g > 0.0) || (e >= eps_max && g < 0.0) {
                0.0
            } else {
                g
            }
        })
        .collect()
}

/// One Fletcher-Reeves step on cell values with a projected backtracking
/// line search. The direction is built from the projected gradient. The
/// first trial is the minimizer of the quadratic through `F(0)`, `F'(0)`
/// and `F(alpha_0)`; Armijo decrease is required of every accepted step and
/// values are clamped to `[1, eps_max]`.
#[allow(clippy::too_many_arguments)]
pub fn cg_step(
    state: &mut CgState,
    grad: &[f64],
    eps: &[f64],
    measures: &[f64],
    value: f64,
    ls: &LineSearch,
    eps_max: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<StepOutcome> {
    let projected = projected_gradient(grad, eps, eps_max);
    let grad = &projected[..];
    let g2 = cell_dot(grad, grad, measures);
    if g2 == 0.0 {
        return Ok(StepOutcome::Converged);
    }
    if state.m == 0 || state.direction.len() != grad.len() {
        state.beta = 0.0;
        state.direction = grad.iter().map(|g| -g).collect();
    } else {
        state.beta = g2 / state.prev_grad_norm2;
        for (d, g) in state.direction.iter_mut().zip(grad) {
            *d = -g + state.beta * *d;
        }
    }
    let mut slope = cell_dot(grad, &state.direction, measures);
    if slope >= 0.0 {
        // Not a descent direction: restart.
        state.direction = grad.iter().map(|g| -g).collect();
        state.beta = 0.0;
        slope = -g2;
    }
    state.prev_grad_norm2 = g2;
    state.m += 1;
    let dmax = state.direction.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let trial_eps = |alpha: f64| -> Vec<f64> {
        eps.iter()
            .zip(&state.direction)
            .map(|(e, d)| clamp_value(e + alpha * d, eps_max))
            .collect()
    };
    let mut alpha = ls.initial_step / dmax;
    if state.alpha > 0.0 {
        alpha = alpha.min(2.0 * state.alpha);
    }
    let mut trials = 0usize;
    // Quadratic model from one probe.
    let probe = trial_eps(alpha);
    let f_probe = f(&probe)?;
    trials += 1;
    let curv = f_probe - value - slope * alpha;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    if f_probe <= value + ls.armijo * alpha * slope {
        best = Some((alpha, probe, f_probe));
    }
    if curv > 0.0 {
        let a_star = -slope * alpha * alpha / (2.0 * curv);
        if a_star > 0.0 && (a_star - alpha).abs() > 1e-12 * alpha {
            let cand = trial_eps(a_star);
            let fc = f(&cand)?;
            trials += 1;
            if fc <= value + ls.armijo * a_star * slope && best.as_ref().map_or(true, |b| fc < b.2) {
                best = Some((a_star, cand, fc));
            }
            if best.is_none() {
                alpha = a_star;
            }
        }
    }
    while best.is_none() && trials < ls.max_trials {
        alpha *= ls.shrink;
        let cand = trial_eps(alpha);
        let fc = f(&cand)?;
        trials += 1;
        if fc <= value + ls.armijo * alpha * slope {
            best = Some((alpha, cand, fc));
        }
    }
    match best {
        Some((a, e, v)) => {
            state.alpha = a;
            Ok(StepOutcome::Accepted { eps: e, value: v, trials })
        }
        None => Ok(StepOutcome::Stall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    GradientSmall,
    Stabilized,
}

/// Stop when `||L'|| <= theta`, or when `||eps||` changed by less than 0.1%
/// over each of the last two iterations.
pub fn check_stop(grad_norm: f64, eps_norms: &[f64], theta: f64) -> StopDecision {
    if grad_norm <= theta {
        return StopDecision::GradientSmall;
    }
    if eps_norms.len() >= 3 {
        let n = eps_norms.len();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        if rel(eps_norms[n - 1], eps_norms[n - 2]) < 1e-3 && rel(eps_norms[n - 2], eps_norms[n - 3]) < 1e-3 {
            return StopDecision::Stabilized;
        }
    }
    StopDecision::Continue
}

/// Cells with `|L'| >= beta1 max |L'|`.
pub fn select_refinement(grad: &[f64], beta1: f64) -> Vec<usize> {
    let max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let thr = beta1 * max;
    (0..grad.len()).filter(|&i| grad[i].abs() >= thr).collect()
}

/// Jump norms and the error estimates built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorIndicators {
    /// `|eps_upper - eps_lower|` for every face of [`QuadtreeCoeffMesh::faces`].
    pub face_jumps: Vec<f64>,
    /// Largest face jump of each cell.
    pub cell_jumps: Vec<f64>,
    /// `(sum_c |c| jump_c^2)^{1/2}`.
    pub eps_jump_norm: f64,
    /// Space-time norms of the normal-derivative jumps of state and adjoint.
    pub state_space_jump: f64,
    pub state_time_jump: f64,
    pub adjoint_space_jump: f64,
    pub adjoint_time_jump: f64,
    /// `C_I ||L'|| (h (||[u]_s|| + ||[lambda]_s||) + tau (||[u]_t|| + ||[lambda]_t||))`.
    pub lagrangian_estimate: f64,
    /// `C_I ||F'|| ||[eps]||`.
    pub tikhonov_estimate: f64,
    /// `(D / alpha) C_I ||[eps]||` with `alpha = gamma`.
    pub regularized_bound: f64,
}

pub fn eps_face_jumps(eps: &QuadtreeCoeffMesh) -> (Vec<Face>, Vec<f64>) {
    let faces = eps.faces();
    let c = eps.cells();
    let jumps = faces.iter().map(|f| (c[f.upper].value - c[f.lower].value).abs()).collect();
    (faces, jumps)
}

/// `max_a |u_{i+a} - 2 u_i + u_{i-a}| / h_a` at interior nodes, 0 on the boundary.
fn space_jumps(grid: &UniformGrid, u: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = 0.0;
        if grid.is_boundary(i) {
            continue;
        }
        for &a in grid.active_axes() {
            let s = grid.stride(a);
            let j = (u[i + s] - 2.0 * u[i] + u[i - s]).abs() / grid.spacing()[a];
            *o = o.max(j);
        }
    }
}

/// Space-time `L2` norms of the space and time jumps of a field history.
fn field_jump_norms(grid: &UniformGrid, axis: &TimeAxis, fields: &[Vec<f64>]) -> (f64, f64) {
    let mut js = vec![0.0; grid.len()];
    let vol: Vec<f64> = (0..grid.len()).map(|i| grid.dual_volume(i)).collect();
    let (mut ss, mut st) = (0.0, 0.0);
    let k_last = fields.len() - 1;
    for (k, u) in fields.iter().enumerate() {
        let w = axis.tau() * trapezoid_weight(axis, k);
        space_jumps(grid, u, &mut js);
        ss += w * js.iter().zip(&vol).map(|(j, v)| v * j * j).sum::<f64>();
        if k > 0 && k < k_last {
            let (a, b) = (&fields[k - 1], &fields[k + 1]);
            st += w * (0..grid.len())
                .map(|i| {
                    let j = (b[i] - 2.0 * u[i] + a[i]).abs() / axis.tau();
                    vol[i] * j * j
                })
                .sum::<f64>();
        }
    }
    (ss.sqrt(), st.sqrt())
}

#[allow(clippy::too_many_arguments)]
pub fn aposteriori_estimates(
    eps: &QuadtreeCoeffMesh,
    grad: &[f64],
    state: &[Vec<f64>],
    adjoint: &[Vec<f64>],
    grid: &UniformGrid,
    axis: &TimeAxis,
    cfg: &TikhonovConfig,
) -> Result<ErrorIndicators> {
    if grad.len() != eps.len() {
        return Err(Error::Dimension {
            what: "gradient cells",
            expected: eps.len(),
            found: grad.len(),
        });
    }
    if state.len() != axis.samples() || adjoint.len() != axis.samples() {
        return Err(Error::Dimension {
            what: "field time levels",
            expected: axis.samples(),
            found: state.len().min(adjoint.len()),
        });
    }
    let (faces, face_jumps) = eps_face_jumps(eps);
    let mut cell_jumps = vec![0.0; eps.len()];
    for (f, &j) in faces.iter().zip(&face_jumps) {
        cell_jumps[f.lower] = f64::max(cell_jumps[f.lower], j);
        cell_jumps[f.upper] = f64::max(cell_jumps[f.upper], j);
    }
    let measures = eps.measures();
    let eps_jump_norm = cell_dot(&cell_jumps, &cell_jumps, &measures).sqrt();
    let (us, ut) = field_jump_norms(grid, axis, state);
    let (ls, lt) = field_jump_norms(grid, axis, adjoint);
    let gnorm = cell_dot(grad, grad, &measures).sqrt();
    let h = grid.min_spacing();
    let ci = cfg.c_interp;
    Ok(ErrorIndicators {
        lagrangian_estimate: ci * gnorm * (h * (us + ls) + axis.tau() * (ut + lt)),
        tikhonov_estimate: ci * gnorm * eps_jump_norm,
        regularized_bound: cfg.lipschitz / cfg.gamma * ci * eps_jump_norm,
        face_jumps,
        cell_jumps,
        eps_jump_norm,
        state_space_jump: us,
        state_time_jump: ut,
        adjoint_space_jump: ls,
        adjoint_time_jump: lt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgRecord {
    pub mesh: usize,
    pub m: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub eps_norm: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshRecord {
    pub mesh: usize,
    pub cells: usize,
    pub cg_iters: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub eps_comp: f64,
    pub n_comp: f64,
    pub stop: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientSmall,
    Stabilized,
    Stall,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct MeshResult {
    pub eps: QuadtreeCoeffMesh,
    pub eps_glob: QuadtreeCoeffMesh,
    pub gradient: GradientField,
    pub record: MeshRecord,
    /// Values of the functional after every accepted step (first entry the start).
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage2Result {
    /// One entry per mesh, coarsest first.
    pub meshes: Vec<MeshResult>,
    pub history: Vec<CgRecord>,
    /// Why the refinement loop ended.
    pub termination: Termination,
}

impl Stage2Result {
    pub fn final_eps(&self) -> &QuadtreeCoeffMesh {
        &self.meshes.last().expect("at least one mesh").eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// `||L'|| <= theta` on the last mesh.
    Converged,
    MaxRefinements,
    NormIncreased,
    NormStabilized,
    NothingToRefine,
}

fn l2_norm(v: &[f64], measures: &[f64]) -> f64 {
    cell_dot(v, v, measures).sqrt()
}

/// Conjugate gradients on one mesh starting from `start`.
fn minimize_on_mesh(
    problem: &Stage2Problem,
    start: &QuadtreeCoeffMesh,
    eps_glob: &QuadtreeCoeffMesh,
    cfg: &TikhonovConfig,
    mesh_index: usize,
    observe: &mut impl FnMut(&CgRecord, &QuadtreeCoeffMesh),
) -> Result<(MeshResult, Vec<CgRecord>)> {
    let measures = start.measures();
    let mut eps = start.clone();
    let mut state = CgState::new();
    let mut run = compute_gradient(problem, &eps, eps_glob, cfg)?;
    let mut values = vec![run.value];
    let mut history = Vec::new();
    let mut norms = vec![l2_norm(&eps.values(), &measures)];
    let mut stop = StopReason::MaxIterations;
    let mut iters = 0;
    loop {
        let grad = run.gradient.total();
        let gnorm = l2_norm(&grad, &measures);
        let rec = CgRecord {
            mesh: mesh_index,
            m: iters,
            value: run.value,
            grad_norm: gnorm,
            eps_norm: *norms.last().unwrap(),
            alpha: state.alpha,
        };
        observe(&rec, &eps);
        history.push(rec);
        match check_stop(gnorm, &norms, cfg.theta) {
            StopDecision::GradientSmall => {
                stop = StopReason::GradientSmall;
                break;
            }
            StopDecision::Stabilized => {
                stop = StopReason::Stabilized;
                break;
            }
            StopDecision::Continue => {}
        }
        if iters >= cfg.max_cg_iters {
            break;
        }
        let values_now = eps.values();
        let outcome = cg_step(
            &mut state,
            &grad,
            &values_now,
            &measures,
            run.value,
            &cfg.line_search,
            cfg.eps_max,
            |trial| problem.value(&eps.with_values(trial)?, eps_glob, cfg),
        )?;
        match outcome {
            StepOutcome::Accepted { eps: e, .. } => {
                eps.set_values(&e)?;
                iters += 1;
                run = compute_gradient(problem, &eps, eps_glob, cfg)?;
                values.push(run.value);
                norms.push(l2_norm(&e, &measures));
            }
            StepOutcome::Converged => {
                stop = StopReason::GradientSmall;
                break;
            }
            StepOutcome::Stall => {
                stop = StopReason::Stall;
                break;
            }
        }
    }
    let grad = run.gradient.total();
    let metrics = report_metrics(&eps, 1.0);
    let record = MeshRecord {
        mesh: mesh_index,
        cells: eps.len(),
        cg_iters: iters,
        value: run.value,
        grad_norm: l2_norm(&grad, &measures),
        eps_comp: metrics.eps_comp,
        n_comp: metrics.n_comp,
        stop,
    };
    Ok((
        MeshResult {
            eps,
            eps_glob: eps_glob.clone(),
            gradient: run.gradient,
            record,
            values,
        },
        history,
    ))
}

/// The adaptive loop: minimize, mark `|L'| >= beta1 max |L'|`, refine,
/// transfer, repeat.
pub fn run_stage2(problem: &Stage2Problem, eps_glob: &QuadtreeCoeffMesh, cfg: &TikhonovConfig) -> Result<Stage2Result> {
    run_stage2_observed(problem, eps_glob, cfg, |_, _| {})
}

pub fn run_stage2_observed(
    problem: &Stage2Problem,
    eps_glob: &QuadtreeCoeffMesh,
    cfg: &TikhonovConfig,
    mut observe: impl FnMut(&CgRecord, &QuadtreeCoeffMesh),
) -> Result<Stage2Result> {
    cfg.validate()?;
    let glob0 = eps_glob.map_values(|v| clamp_value(v, cfg.eps_max));
    let (first, mut history) = minimize_on_mesh(problem, &glob0, &glob0, cfg, 0, &mut observe)
        .map_err(|e| e.context("stage 2, mesh 0"))?;
    let mut meshes = vec![first];
    let mut termination = Termination::MaxRefinements;
    for r in 1..=cfg.max_refinements {
        let prev = meshes.last().unwrap();
        if prev.record.stop == StopReason::GradientSmall {
            termination = Termination::Converged;
            break;
        }
        let marked = select_refinement(&prev.gradient.total(), cfg.beta1);
        let refined = prev.eps.refine_cells(&marked)?;
        if refined.mesh.len() == prev.eps.len() {
            termination = Termination::NothingToRefine;
            break;
        }
        let new_glob = refined.mesh.sample_from(&prev.eps_glob)?;
        let start = if cfg.warm_start { refined.mesh.clone() } else { new_glob.clone() };
        let (res, h) = minimize_on_mesh(problem, &start, &new_glob, cfg, r, &mut observe)
            .map_err(|e| e.context(alloc::format!("stage 2, mesh {r}")))?;
        history.extend(h);
        let prev_norm = l2_norm(&prev.eps.values(), &prev.eps.measures());
        let new_norm = l2_norm(&res.eps.values(), &res.eps.measures());
        let increased = res.record.grad_norm > prev.record.grad_norm;
        let stabilized = (new_norm - prev_norm).abs() < 1e-3 * prev_norm;
        meshes.push(res);
        if increased {
            termination = Termination::NormIncreased;
            break;
        }
        if stabilized {
            termination = Termination::NormStabilized;
            break;
        }
    }
    if termination == Termination::MaxRefinements && meshes.last().unwrap().record.stop == StopReason::GradientSmall {
        termination = Termination::Converged;
    }
    Ok(Stage2Result {
        meshes,
        history,
        termination,
    })
}

/// Which displayed threshold rule; both keep values at or above half the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    Dielectric,
    Metal,
}

pub fn threshold_image(eps: &QuadtreeCoeffMesh, _kind: ThresholdKind) -> QuadtreeCoeffMesh {
    let max = eps.values().iter().cloned().fold(f64::MIN, f64::max);
    eps.map_values(|v| if v >= 0.5 * max { v } else { EPS_MIN })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub eps_comp: f64,
    pub n_comp: f64,
    /// Depth below `Gamma` of the centroid of the thresholded region.
    pub centroid_depth: f64,
    pub eps_comp_scaled: f64,
    pub n_comp_scaled: f64,
}

/// `eps_comp = max eps`, `n_comp = sqrt(eps_comp)`, the centroid depth of
/// the cells kept by the half-maximum threshold, and the values scaled to
/// the physical background.
pub fn report_metrics(eps: &QuadtreeCoeffMesh, background: f64) -> Metrics {
    let values = eps.values();
    let eps_comp = values.iter().cloned().fold(f64::MIN, f64::max);
    let n_comp = eps_comp.sqrt();
    let top = eps.domain().hi()[DEPTH_AXIS];
    let (mut wz, mut w) = (0.0, 0.0);
    for (id, &v) in values.iter().enumerate() {
        if v >= 0.5 * eps_comp {
            let m = eps.cell_measure(id);
            wz += m * eps.cell_center(id)[DEPTH_AXIS];
            w += m;
        }
    }
    Metrics {
        eps_comp,
        n_comp,
        centroid_depth: top - wz / w,
        eps_comp_scaled: crate::scenario::scale_by_background(eps_comp, background),
        n_comp_scaled: crate::scenario::scale_index_by_background(n_comp, background),
    }
}

/// Number of face-connected groups of cells satisfying `keep`.
pub fn connected_components(eps: &QuadtreeCoeffMesh, keep: impl Fn(f64) -> bool) -> usize {
    let n = eps.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let kept: Vec<bool> = eps.cells().iter().map(|c| keep(c.value)).collect();
    for f in eps.faces() {
        if kept[f.lower] && kept[f.upper] {
            let (a, b) = (find(&mut parent, f.lower), find(&mut parent, f.upper));
            if a != b {
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&i| kept[i] && find(&mut parent, i) == i).count()
}

/// Components of the thresholded image standing above the background.
pub fn image_components(eps: &QuadtreeCoeffMesh) -> usize {
    let img = threshold_image(eps, ThresholdKind::Dielectric);
    connected_components(&img, |v| v > EPS_MIN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use crate::RectDomain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn z_delta_shape() {
        let (t, d) = (1.2, 0.12);
        assert_eq!(z_delta(0.0, t, d), 1.0);
        assert_eq!(z_delta(t, t, d), 0.0);
        assert!((z_delta(t - 0.5 * d, t, d) - 0.5).abs() < 1e-14);
        // C1 at both junctions: one-sided slopes vanish.
        let e = 1e-7;
        assert!((z_delta(t - d + e, t, d) - 1.0).abs() / e < 1e-4);
        assert!(z_delta(t - e, t, d) / e < 1e-4);
    }

    fn traces(grid: &UniformGrid, nodes: &[usize], axis: TimeAxis, mut f: impl FnMut(usize, usize) -> f64) -> TimeTraces {
        let mut t = TimeTraces::zeros(grid, nodes, axis);
        let s = axis.samples();
        for i in 0..nodes.len() {
            for k in 0..s {
                t.data[i * s + k] = f(i, k);
            }
        }
        t
    }

    #[test]
    fn tikhonov_value_oracles() {
        let g = build_grid(RectDomain::square_2d(0.0, 1.0, 0.0, 1.0).unwrap(), 0.25).unwrap();
        let nodes = g.boundary_nodes();
        let w: Vec<f64> = nodes.iter().map(|&n| g.boundary_weight(n)).collect();
        let axis = TimeAxis::new(1.0, 0.1).unwrap();
        let mesh = QuadtreeCoeffMesh::uniform(*g.domain(), [2, 1, 2], 2, 2.0).unwrap();
        let cfg = TikhonovConfig::default();
        let a = traces(&g, &nodes, axis, |i, k| (i * 7 + k) as f64 * 0.01);
        assert_eq!(tikhonov_value(&a, &a, &w, &mesh, &mesh, &cfg).unwrap(), 0.0);
        // Constant unit misfit with the ramp pushed to the final instant.
        let b = a.map(|v| v + 1.0);
        let m = misfit_value(&b, &a, &w, 1e-12).unwrap();
        let perimeter = 4.0;
        let measure_st = perimeter * (1.0 - 0.5 * 0.1);
        assert!((m - 0.5 * measure_st).abs() < 1e-12, "{m}");
        // Direct summation.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = traces(&g, &nodes, axis, |_, _| rng.random_range(-1.0..1.0));
        let d = traces(&g, &nodes, axis, |_, _| 0.3);
        let vals: Vec<f64> = (0..4).map(|_| rng.random_range(1.0..5.0)).collect();
        let em = mesh.with_values(&vals).unwrap();
        let cfg = TikhonovConfig { gamma: 0.7, ..cfg };
        let delta = cfg.delta_fraction;
        let mut oracle = 0.0;
        for i in 0..nodes.len() {
            for k in 0..axis.samples() {
                let wk = if k == 0 || k == axis.steps() { 0.5 } else { 1.0 };
                let t = axis.time(k);
                let z = if t <= 1.0 - delta {
                    1.0
                } else {
                    0.5 * (1.0 + (core::f64::consts::PI * (t - 1.0 + delta) / delta).cos())
                };
                oracle += 0.5 * w[i] * 0.1 * wk * z * (e.sample(i, k) - 0.3).powi(2);
            }
        }
        for v in &vals {
            oracle += 0.5 * 0.7 * 0.25 * (v - 2.0).powi(2);
        }
        let got = tikhonov_value(&e, &d, &w, &em, &mesh, &cfg).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        let short = TimeTraces::zeros(&g, &nodes[1..], axis);
        assert!(matches!(
            tikhonov_value(&short, &a, &w, &mesh, &mesh, &cfg),
            Err(Error::Dimension { .. })
        ));
    }

    /// `F(x) = 1/2 x^T A x - b^T x` on two unit-measure cells.
    fn quadratic(x: &[f64]) -> f64 {
        let (a, b, c) = (3.0, 1.0, 2.0);
        0.5 * (a * x[0] * x[0] + 2.0 * b * x[0] * x[1] + c * x[1] * x[1]) - (10.0 * x[0] + 9.0 * x[1])
    }

    fn quadratic_grad(x: &[f64]) -> Vec<f64> {
        vec![3.0 * x[0] + x[1] - 10.0, x[0] + 2.0 * x[1] - 9.0]
    }

    #[test]
    fn cg_is_exact_on_quadratics() {
        // Minimizer (11/5, 17/5) lies inside the clamp interval.
        let mut x = vec![1.0, 1.0];
        let mut st = CgState::new();
        let ls = LineSearch {
            initial_step: 0.5,
            ..Default::default()
        };
        let m = [1.0, 1.0];
        let g0 = quadratic_grad(&x);
        for step in 0..2 {
            let g = quadratic_grad(&x);
            let out = cg_step(&mut st, &g, &x, &m, quadratic(&x), &ls, 25.0, |t| Ok(quadratic(t))).unwrap();
            if step == 0 {
                assert_eq!(st.direction, vec![-g0[0], -g0[1]]);
            }
            match out {
                StepOutcome::Accepted { eps, .. } => x = eps,
                other => panic!("{other:?}"),
            }
        }
        assert!((x[0] - 2.2).abs() < 1e-10 && (x[1] - 3.4).abs() < 1e-10, "{x:?}");
    }

    #[test]
    fn cg_zero_gradient_signals_stop() {
        let mut st = CgState::new();
        let x = vec![2.2, 3.4];
        let out = cg_step(&mut st, &[0.0, 0.0], &x, &[1.0, 1.0], 0.0, &LineSearch::default(), 25.0, |_| {
            panic!("no evaluation expected")
        })
        .unwrap();
        assert_eq!(out, StepOutcome::Converged);
    }

    #[test]
    fn accepted_steps_decrease_and_respect_clamp() {
        // Minimizer outside [1, 25] in the second coordinate.
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 5.0).powi(2);
        let gr = |x: &[f64]| vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 5.0)];
        let mut x = vec![10.0, 4.0];
        let mut st = CgState::new();
        let mut v = f(&x);
        for _ in 0..10 {
            match cg_step(&mut st, &gr(&x), &x, &[1.0, 1.0], v, &LineSearch::default(), 25.0, |t| Ok(f(t))).unwrap() {
                StepOutcome::Accepted { eps, value, .. } => {
                    assert!(value <= v);
                    assert!(eps.iter().all(|&e| (1.0..=25.0).contains(&e)));
                    x = eps;
                    v = value;
                }
                _ => break,
            }
        }
        assert!((x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stop_rules() {
        assert_eq!(check_stop(0.0, &[1.0], 1e-6), StopDecision::GradientSmall);
        assert_eq!(check_stop(1.0, &[2.0, 2.0, 2.0], 1e-6), StopDecision::Stabilized);
        assert_eq!(check_stop(1.0, &[2.0, 2.0], 1e-6), StopDecision::Continue);
        let seq = [1.0, 0.5, 0.2, 0.09, 0.03, 0.01];
        let norms = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let first = (0..seq.len()).find(|&m| check_stop(seq[m], &norms[..=m], 0.1) != StopDecision::Continue);
        assert_eq!(first, Some(3));
    }

    #[test]
    fn refinement_selection() {
        assert_eq!(select_refinement(&[2.0; 5], 0.5), vec![0, 1, 2, 3, 4]);
        let mut spike = vec![0.1; 9];
        spike[4] = -3.0;
        assert_eq!(select_refinement(&spike, 0.5), vec![4]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let g: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = rng.random_range(0.05..0.95);
            let max = g.iter().map(|v: &f64| v.abs()).fold(0.0, f64::max);
            let brute: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() >= b * max).collect();
            assert_eq!(select_refinement(&g, b), brute);
        }
    }

    #[test]
    fn thresholds_and_metrics() {
        let d = RectDomain::square_2d(0.0, 1.0, -1.0, 0.0).unwrap();
        let c = QuadtreeCoeffMesh::uniform(d, [10, 1, 1], 1, 4.0).unwrap();
        assert_eq!(threshold_image(&c, ThresholdKind::Dielectric), c);
        let vals: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let m = c.with_values(&vals).unwrap();
        let t = threshold_image(&m, ThresholdKind::Metal);
        let expect: Vec<f64> = vals.iter().map(|&v| if v < 5.0 { 1.0 } else { v }).collect();
        assert_eq!(t.values(), expect);
        let r = report_metrics(&m.map_values(|_| 22.09), 1.0);
        assert!((r.n_comp - 4.7).abs() < 1e-12);
        assert!((r.centroid_depth - 0.5).abs() < 1e-12);
        let one = report_metrics(&c.map_values(|_| 1.0), 4.0);
        assert_eq!(one.n_comp, 1.0);
        assert_eq!(one.eps_comp_scaled, 4.0);
        assert_eq!(one.n_comp_scaled, 2.0);
    }

    #[test]
    fn components_of_two_blobs() {
        let d = RectDomain::square_2d(0.0, 1.0, 0.0, 1.0).unwrap();
        let m = QuadtreeCoeffMesh::uniform(d, [8, 1, 8], 2, 1.0).unwrap();
        let vals: Vec<f64> = (0..m.len())
            .map(|id| {
                let c = m.cell_center(id);
                if (c[0] - 0.2).abs() < 0.1 && (c[2] - 0.5).abs() < 0.2 {
                    5.0
                } else if (c[0] - 0.7).abs() < 0.15 && (c[2] - 0.5).abs() < 0.2 {
                    4.0
                } else {
                    1.0
                }
            })
            .collect();
        let m = m.with_values(&vals).unwrap();
        assert_eq!(image_components(&m), 2);
        // Refinement of one blob keeps the count.
        let r = m.refine_cells(&[0, 9, 10, 18]).unwrap().mesh;
        assert_eq!(image_components(&r), 2);
        assert_eq!(image_components(&m.map_values(|_| 1.0)), 0);
    }

    struct Bench {
        grid: UniformGrid,
        axis: TimeAxis,
        neumann: NeumannData,
        data: TimeTraces,
        mesh: QuadtreeCoeffMesh,
    }

    /// 17 x 17 node grid, coefficient cells on the middle half, a pulse
    /// injected through the top face and data from a two-cell truth.
    fn bench(boundary: StateBoundary) -> Bench {
        let grid = build_grid(RectDomain::square_2d(0.0, 0.16, 0.0, 0.16).unwrap(), 0.01).unwrap();
        let axis = TimeAxis::for_grid(0.4, &grid, None).unwrap();
        let mut neumann = NeumannData::zeros(&grid, axis);
        neumann.boundary = boundary;
        let src = crate::wave::SourceSpec::new(0.16, 30.0);
        let s = axis.samples();
        for (i, &n) in neumann.nodes.clone().iter().enumerate() {
            if grid.ijk(n)[2] == 16 {
                for k in 0..s {
                    neumann.flux[i * s + k] = crate::wave::waveform_f(axis.time(k), &src);
                }
            }
        }
        let d = RectDomain::square_2d(0.04, 0.12, 0.04, 0.12).unwrap();
        let mesh = QuadtreeCoeffMesh::uniform(d, [4, 1, 4], 2, 1.0).unwrap();
        let mut truth = mesh.values();
        truth[5] = 3.0;
        truth[10] = 2.0;
        let tm = mesh.with_values(&truth).unwrap();
        let nodes = grid.boundary_nodes();
        let run = simulate_state(
            &tm.embed_in(&grid, 1.0),
            &grid,
            &axis,
            &neumann,
            &Collect {
                record: nodes,
                ..Default::default()
            },
        )
        .unwrap();
        Bench {
            grid,
            axis,
            neumann,
            data: run.traces,
            mesh,
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        for boundary in [StateBoundary::Neumann, StateBoundary::Transparent] {
            for surface in [MisfitSurface::Boundary, MisfitSurface::Top] {
                gradient_gate(boundary, surface);
            }
        }
    }

    fn gradient_gate(boundary: StateBoundary, surface: MisfitSurface) {
        let b = bench(boundary);
        let p = Stage2Problem {
            grid: &b.grid,
            axis: b.axis,
            neumann: &b.neumann,
            data: &b.data,
        };
        let cfg = TikhonovConfig {
            gamma: 1e-3,
            misfit_surface: surface,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let glob = b.mesh.map_values(|_| 1.5);
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let vals: Vec<f64> = (0..b.mesh.len()).map(|_| rng.random_range(1.2..3.0)).collect();
            let eps = b.mesh.with_values(&vals).unwrap();
            let g = compute_gradient(&p, &eps, &glob, &cfg).unwrap().gradient.total();
            for _ in 0..10 {
                let c = rng.random_range(0..b.mesh.len());
                let h = 1e-4;
                let mut plus = vals.clone();
                plus[c] += h;
                let mut minus = vals.clone();
                minus[c] -= h;
                let fp = p.value(&eps.with_values(&plus).unwrap(), &glob, &cfg).unwrap();
                let fm = p.value(&eps.with_values(&minus).unwrap(), &glob, &cfg).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let ad = g[c] * eps.cell_measure(c);
                worst = worst.max((fd - ad).abs() / ad.abs());
            }
        }
        assert!(worst <= 1e-2, "{boundary:?} {surface:?}: worst relative error {worst}");
    }

    #[test]
    fn zero_residual_gives_regularization_only() {
        let b = bench(StateBoundary::Transparent);
        let p = Stage2Problem {
            grid: &b.grid,
            axis: b.axis,
            neumann: &b.neumann,
            data: &b.data,
        };
        let mut truth = b.mesh.values();
        truth[5] = 3.0;
        truth[10] = 2.0;
        let tm = b.mesh.with_values(&truth).unwrap();
        let cfg = TikhonovConfig::default();
        let run = compute_gradient(&p, &tm, &tm, &cfg).unwrap();
        assert!(run.gradient.misfit.iter().all(|g| g.abs() <= 1e-8));
        assert!(run.gradient.regularization.iter().all(|&g| g == 0.0));
        let big = TikhonovConfig { gamma: 1e3, ..cfg };
        let glob = tm.map_values(|v| v + 0.5);
        let run = compute_gradient(&p, &tm, &glob, &big).unwrap();
        for (t, r) in run.gradient.total().iter().zip(&run.gradient.regularization) {
            assert!((t - r).abs() <= 1e-6 * r.abs());
            assert!((r + 500.0).abs() < 1e-9);
        }
    }

    fn random_refined(rng: &mut ChaCha8Rng) -> QuadtreeCoeffMesh {
        let d = RectDomain::square_2d(0.0, 0.8, -0.4, 0.0).unwrap();
        let mut m = QuadtreeCoeffMesh::uniform(d, [4, 1, 2], 3, 1.0).unwrap();
        for _ in 0..3 {
            let marked: Vec<usize> = (0..m.len()).filter(|_| rng.random_bool(0.3)).collect();
            m = m.refine_cells(&marked).unwrap().mesh;
        }
        let vals: Vec<f64> = (0..m.len()).map(|_| rng.random_range(1.0..9.0)).collect();
        m.with_values(&vals).unwrap()
    }

    /// Cell jumps by testing every pair of cells for a shared face.
    fn brute_cell_jumps(m: &QuadtreeCoeffMesh) -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        let tol = 1e-12;
        for i in 0..m.len() {
            for j in 0..m.len() {
                if i == j {
                    continue;
                }
                let (li, hi) = (m.cell_lo(i), m.cell_hi(i));
                let (lj, hj) = (m.cell_lo(j), m.cell_hi(j));
                let touch_x = ((hi[0] - lj[0]).abs() < tol || (hj[0] - li[0]).abs() < tol)
                    && hi[2].min(hj[2]) - li[2].max(lj[2]) > tol;
                let touch_z = ((hi[2] - lj[2]).abs() < tol || (hj[2] - li[2]).abs() < tol)
                    && hi[0].min(hj[0]) - li[0].max(lj[0]) > tol;
                if touch_x || touch_z {
                    let jump = (m.cells()[i].value - m.cells()[j].value).abs();
                    out[i] = f64::max(out[i], jump);
                }
            }
        }
        out
    }

    #[test]
    fn indicators_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = build_grid(RectDomain::square_2d(0.0, 0.1, 0.0, 0.08).unwrap(), 0.01).unwrap();
        let axis = TimeAxis::new(0.05, 0.005).unwrap();
        let cfg = TikhonovConfig {
            gamma: 0.1,
            lipschitz: 2.0,
            c_interp: 1.5,
            ..Default::default()
        };
        for _ in 0..5 {
            let m = random_refined(&mut rng);
            let grad: Vec<f64> = (0..m.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let field = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..axis.samples())
                    .map(|_| (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            };
            let (u, l) = (field(&mut rng), field(&mut rng));
            let ind = aposteriori_estimates(&m, &grad, &u, &l, &grid, &axis, &cfg).unwrap();
            let cj = brute_cell_jumps(&m);
            for (a, b) in ind.cell_jumps.iter().zip(&cj) {
                assert!((a - b).abs() < 1e-12);
            }
            let ej: f64 = (0..m.len()).map(|c| m.cell_measure(c) * cj[c] * cj[c]).sum::<f64>().sqrt();
            assert!((ind.eps_jump_norm - ej).abs() < 1e-12);
            // Space-time jumps by direct index loops.
            let (nx, nz) = (grid.counts()[0], grid.counts()[2]);
            let h = 0.01;
            let tau = axis.tau();
            let brute = |f: &[Vec<f64>]| -> (f64, f64) {
                let (mut s, mut t) = (0.0, 0.0);
                let kk = f.len() - 1;
                for k in 0..=kk {
                    let wk = tau * if k == 0 || k == kk { 0.5 } else { 1.0 };
                    for iz in 0..nz {
                        for ix in 0..nx {
                            let n = ix + nx * iz;
                            let wx = if ix == 0 || ix == nx - 1 { 0.5 } else { 1.0 };
                            let wz = if iz == 0 || iz == nz - 1 { 0.5 } else { 1.0 };
                            let vol = wx * wz * h * h;
                            if ix > 0 && ix < nx - 1 && iz > 0 && iz < nz - 1 {
                                let jx = (f[k][n + 1] - 2.0 * f[k][n] + f[k][n - 1]).abs() / h;
                                let jz = (f[k][n + nx] - 2.0 * f[k][n] + f[k][n - nx]).abs() / h;
                                s += wk * vol * jx.max(jz).powi(2);
                            }
                            if k > 0 && k < kk {
                                let jt = (f[k + 1][n] - 2.0 * f[k][n] + f[k - 1][n]).abs() / tau;
                                t += wk * vol * jt * jt;
                            }
                        }
                    }
                }
                (s.sqrt(), t.sqrt())
            };
            let (us, ut) = brute(&u);
            let (ls, lt) = brute(&l);
            for (a, b) in [
                (ind.state_space_jump, us),
                (ind.state_time_jump, ut),
                (ind.adjoint_space_jump, ls),
                (ind.adjoint_time_jump, lt),
            ] {
                assert!((a - b).abs() < 1e-12 * b.max(1.0), "{a} vs {b}");
            }
            let gn: f64 = (0..m.len()).map(|c| m.cell_measure(c) * grad[c] * grad[c]).sum::<f64>().sqrt();
            let lag = 1.5 * gn * (h * (us + ls) + tau * (ut + lt));
            assert!((ind.lagrangian_estimate - lag).abs() < 1e-12 * lag.max(1.0));
            assert!((ind.tikhonov_estimate - 1.5 * gn * ej).abs() < 1e-12);
            assert!((ind.regularized_bound - 2.0 / 0.1 * 1.5 * ej).abs() < 1e-12 * ej.max(1.0) * 30.0);
        }
    }

    #[test]
    fn indicator_examples() {
        let d = RectDomain::square_2d(0.0, 2.0, 0.0, 1.0).unwrap();
        let m = QuadtreeCoeffMesh::uniform(d, [2, 1, 1], 1, 1.0).unwrap();
        let grid = build_grid(d, 0.5).unwrap();
        let axis = TimeAxis::new(0.2, 0.1).unwrap();
        let zero = vec![vec![0.0; grid.len()]; axis.samples()];
        let cfg = TikhonovConfig::default();
        let flat = aposteriori_estimates(&m, &[1.0, 1.0], &zero, &zero, &grid, &axis, &cfg).unwrap();
        assert_eq!(flat.tikhonov_estimate, 0.0);
        let two = m.with_values(&[1.0, 9.0]).unwrap();
        let ind = aposteriori_estimates(&two, &[1.0, 1.0], &zero, &zero, &grid, &axis, &cfg).unwrap();
        assert_eq!(ind.face_jumps, vec![8.0]);
        assert_eq!(ind.cell_jumps, vec![8.0, 8.0]);
    }
}
