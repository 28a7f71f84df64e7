//! Explicit finite-difference solver for the scalar wave model
//! `eps * u_tt = Laplace(u) + source`, its Neumann-driven state variant and
//! the discrete adjoint.
//!
//! Space is discretized with the lumped finite-volume form of the 5/7-point
//! Laplacian, giving the semi-discrete system `M u'' + D u' + K u = b` with a
//! diagonal mass `M = eps * dual volume`, a diagonal boundary damping `D` on
//! absorbing faces (`du/dn = -du/dt`) and a symmetric stiffness `K` with
//! natural (homogeneous Neumann) conditions elsewhere. Time is advanced by
//! the central three-level scheme
//!
//! ```text
//! (M + tau D / 2) u[k+1] = (2M - tau^2 K) u[k] - (M - tau D / 2) u[k-1] + tau^2 b[k]
//! ```
//!
//! with `u[-1] = u[0] = 0`. Without damping the scheme is symmetric in time,
//! so the adjoint of a Neumann-driven run is the same stepper run on the
//! time-reversed residual; [`simulate_adjoint`] does exactly that.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{cfl_limit, SubGrid, TimeAxis, UniformGrid, DEPTH_AXIS};

/// Incident plane wave: `f(t) = sin(omega t)` for `0 <= t <= 2 pi / omega`,
/// zero afterwards, injected on the plane `z = z0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub z0: f64,
    pub omega: f64,
    /// Amplitude multiplier (1 for the reference waveform).
    pub amplitude: f64,
}

impl SourceSpec {
    pub fn new(z0: f64, omega: f64) -> Self {
        SourceSpec {
            z0,
            omega,
            amplitude: 1.0,
        }
    }

    /// End of the burst, `t' = 2 pi / omega`.
    pub fn burst_end(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.omega
    }
}

pub fn waveform_f(t: f64, src: &SourceSpec) -> f64 {
    if t < 0.0 || t > src.burst_end() {
        0.0
    } else {
        src.amplitude * (src.omega * t).sin()
    }
}

/// Condition on the two faces normal to the propagation axis. Lateral faces
/// are always homogeneous Neumann.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceCondition {
    /// First-order absorbing condition `du/dn = -du/dt`.
    Absorbing,
    /// Natural condition; inhomogeneous data enter as loads.
    Neumann,
}

/// Semi-discrete operator `M u'' + D u' + K u` on a grid.
#[derive(Debug, Clone)]
pub struct WaveOperator {
    grid: UniformGrid,
    mass: Vec<f64>,
    damping: Vec<f64>,
    /// Stiffness weight of the link from each node to its `+axis` neighbor.
    link: [Vec<f64>; 3],
}

impl WaveOperator {
    pub fn new(grid: &UniformGrid, eps: &[f64], front: FaceCondition, back: FaceCondition) -> Result<Self> {
        if eps.len() != grid.len() {
            return Err(Error::Dimension {
                what: "nodal coefficient",
                expected: grid.len(),
                found: eps.len(),
            });
        }
        if let Some((i, &e)) = eps
            .iter()
            .enumerate()
            .find(|(_, e)| !(e.is_finite() && **e >= 1.0 - 1e-9))
        {
            let p = grid.point(i);
            return Err(Error::Config(alloc::format!(
                "coefficient {e} below 1 at ({}, {}, {})",
                p[0],
                p[1],
                p[2]
            )));
        }
        let n = grid.len();
        let mut mass = vec![0.0; n];
        let mut damping = vec![0.0; n];
        let mut link = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let nz = grid.counts()[DEPTH_AXIS];
        for idx in 0..n {
            let ijk = grid.ijk(idx);
            mass[idx] = eps[idx] * grid.dual_volume(idx);
            let absorbing = (ijk[DEPTH_AXIS] + 1 == nz && front == FaceCondition::Absorbing)
                || (ijk[DEPTH_AXIS] == 0 && back == FaceCondition::Absorbing);
            if absorbing {
                damping[idx] = grid.dual_face_area(ijk, DEPTH_AXIS);
            }
            for &a in grid.active_axes() {
                if ijk[a] + 1 < grid.counts()[a] {
                    // Both endpoints share the same transverse face status.
                    link[a][idx] = grid.dual_face_area(ijk, a) / grid.spacing()[a];
                }
            }
        }
        Ok(WaveOperator {
            grid: grid.clone(),
            mass,
            damping,
            link,
        })
    }

    /// Damps every boundary node with its boundary weight, turning all faces
    /// into first-order absorbing faces.
    fn absorb_all_faces(mut self) -> Self {
        for i in 0..self.grid.len() {
            if self.grid.is_boundary(i) {
                self.damping[i] = self.grid.boundary_weight(i);
            }
        }
        self
    }

    fn for_state(grid: &UniformGrid, eps: &[f64], boundary: StateBoundary) -> Result<Self> {
        let op = Self::new(grid, eps, FaceCondition::Neumann, FaceCondition::Neumann)?;
        Ok(match boundary {
            StateBoundary::Neumann => op,
            StateBoundary::Transparent => op.absorb_all_faces(),
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    /// `out = K u`.
    pub fn apply_stiffness(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &a in self.grid.active_axes() {
            let s = self.grid.stride(a);
            let w = &self.link[a];
            for i in 0..u.len() {
                let c = w[i];
                if c != 0.0 {
                    let f = c * (u[i] - u[i + s]);
                    out[i] += f;
                    out[i + s] -= f;
                }
            }
        }
    }

    /// `(K u)_i` for a single node.
    pub fn stiffness_row(&self, u: &[f64], i: usize) -> f64 {
        let ijk = self.grid.ijk(i);
        let mut r = 0.0;
        for &a in self.grid.active_axes() {
            let s = self.grid.stride(a);
            if ijk[a] + 1 < self.grid.counts()[a] {
                r += self.link[a][i] * (u[i] - u[i + s]);
            }
            if ijk[a] > 0 {
                r += self.link[a][i - s] * (u[i] - u[i - s]);
            }
        }
        r
    }

    /// Discrete energy between levels `prev` and `cur`, conserved exactly by
    /// the undamped, unforced scheme.
    pub fn energy(&self, prev: &[f64], cur: &[f64], tau: f64) -> f64 {
        let mut kc = vec![0.0; cur.len()];
        self.apply_stiffness(cur, &mut kc);
        let kinetic: f64 = (0..cur.len())
            .map(|i| self.mass[i] * (cur[i] - prev[i]).powi(2))
            .sum::<f64>()
            / (tau * tau);
        let potential: f64 = prev.iter().zip(&kc).map(|(p, k)| p * k).sum();
        0.5 * (kinetic + potential)
    }
}

/// Time-stepping state of the central scheme.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    op: &'a WaveOperator,
    tau: f64,
    prev: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
    ku: Vec<f64>,
    load: Vec<f64>,
    step: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(op: &'a WaveOperator, axis: &TimeAxis) -> Result<Self> {
        let limit = cfl_limit(op.grid());
        if axis.tau() > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl {
                tau: axis.tau(),
                limit,
            });
        }
        let n = op.grid().len();
        Ok(Stepper {
            op,
            tau: axis.tau(),
            prev: vec![0.0; n],
            cur: vec![0.0; n],
            next: vec![0.0; n],
            ku: vec![0.0; n],
            load: vec![0.0; n],
            step: 0,
        })
    }

    pub fn current(&self) -> &[f64] {
        &self.cur
    }

    pub fn previous(&self) -> &[f64] {
        &self.prev
    }

    /// Advances one step; `loads` lists `(node, b_i)` for the current level.
    pub fn advance(&mut self, loads: &[(usize, f64)]) -> Result<()> {
        for &(i, b) in loads {
            self.load[i] += b;
        }
        self.op.apply_stiffness(&self.cur, &mut self.ku);
        let t2 = self.tau * self.tau;
        let ht = 0.5 * self.tau;
        let (m, d) = (&self.op.mass, &self.op.damping);
        for i in 0..self.cur.len() {
            let lhs = m[i] + ht * d[i];
            self.next[i] = (2.0 * m[i] * self.cur[i] - t2 * self.ku[i] - (m[i] - ht * d[i]) * self.prev[i]
                + t2 * self.load[i])
                / lhs;
        }
        for &(i, _) in loads {
            self.load[i] = 0.0;
        }
        core::mem::swap(&mut self.prev, &mut self.cur);
        core::mem::swap(&mut self.cur, &mut self.next);
        self.step += 1;
        if self.step % 100 == 0 && self.cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: self.step });
        }
        Ok(())
    }
}

/// Boundary or interior time series recorded at a set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTraces {
    pub nodes: Vec<usize>,
    pub points: Vec<[f64; 3]>,
    pub axis: TimeAxis,
    /// Node-major samples, `axis.samples()` per node.
    pub data: Vec<f64>,
}

impl TimeTraces {
    pub fn zeros(grid: &UniformGrid, nodes: &[usize], axis: TimeAxis) -> Self {
        TimeTraces {
            nodes: nodes.to_vec(),
            points: nodes.iter().map(|&n| grid.point(n)).collect(),
            axis,
            data: vec![0.0; nodes.len() * axis.samples()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn trace(&self, i: usize) -> &[f64] {
        let s = self.axis.samples();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn trace_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.axis.samples();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn sample(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.axis.samples() + k]
    }

    /// Position of `node` in this record.
    pub fn position(&self, node: usize) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    fn record(&mut self, k: usize, u: &[f64]) {
        let s = self.axis.samples();
        for (i, &n) in self.nodes.iter().enumerate() {
            self.data[i * s + k] = u[n];
        }
    }

    /// A record with the same sampling and `f` applied to every sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut t = self.clone();
        t.data.iter_mut().for_each(|v| *v = f(*v));
        t
    }

    pub fn same_sampling(&self, other: &TimeTraces) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.axis.samples() == other.axis.samples()
            && (self.axis.tau() - other.axis.tau()).abs() <= 1e-12 * self.axis.tau()
    }
}

/// What to collect during a forward run besides boundary traces.
#[derive(Debug, Clone, Default)]
pub struct Collect {
    /// Nodes at which time traces are recorded.
    pub record: Vec<usize>,
    /// Nodes at which Laplace transforms are accumulated.
    pub laplace_nodes: Vec<usize>,
    /// Pseudo frequencies of the accumulated transforms.
    pub laplace_s: Vec<f64>,
    /// Keep every time level of the full field.
    pub keep_fields: bool,
}

#[derive(Debug, Clone)]
pub struct WaveRun {
    pub traces: TimeTraces,
    /// `transforms[j][i]`: trapezoidal transform at `laplace_s[j]` and
    /// `laplace_nodes[i]`, truncated at the final time.
    pub transforms: Vec<Vec<f64>>,
    /// `fields[k]` is the full field at time level `k` (when requested).
    pub fields: Vec<Vec<f64>>,
}

struct Collector<'c> {
    spec: &'c Collect,
    axis: TimeAxis,
    traces: TimeTraces,
    transforms: Vec<Vec<f64>>,
    fields: Vec<Vec<f64>>,
}

impl<'c> Collector<'c> {
    fn new(grid: &UniformGrid, axis: TimeAxis, spec: &'c Collect) -> Self {
        Collector {
            spec,
            axis,
            traces: TimeTraces::zeros(grid, &spec.record, axis),
            transforms: spec
                .laplace_s
                .iter()
                .map(|_| vec![0.0; spec.laplace_nodes.len()])
                .collect(),
            fields: Vec::new(),
        }
    }

    fn observe(&mut self, k: usize, u: &[f64]) {
        self.traces.record(k, u);
        let w = if k == 0 || k == self.axis.steps() { 0.5 } else { 1.0 } * self.axis.tau();
        let t = self.axis.time(k);
        for (j, &s) in self.spec.laplace_s.iter().enumerate() {
            let f = w * (-s * t).exp();
            for (acc, &n) in self.transforms[j].iter_mut().zip(&self.spec.laplace_nodes) {
                *acc += f * u[n];
            }
        }
        if self.spec.keep_fields {
            self.fields.push(u.to_vec());
        }
    }

    fn finish(self) -> WaveRun {
        WaveRun {
            traces: self.traces,
            transforms: self.transforms,
            fields: self.fields,
        }
    }
}

/// Nodes and weights of the plane source nearest to `z0`.
pub fn plane_source_nodes(grid: &UniformGrid, z0: f64) -> Vec<(usize, f64)> {
    let k0 = grid.nearest_index(DEPTH_AXIS, z0);
    grid.select(|ijk| ijk[DEPTH_AXIS] == k0)
        .into_iter()
        .map(|n| (n, grid.dual_face_area(grid.ijk(n), DEPTH_AXIS)))
        .collect()
}

/// Forward problem on the outer box: absorbing front and back faces,
/// Neumann lateral faces, plane source, zero initial data.
pub fn simulate_forward(
    eps: &[f64],
    grid: &UniformGrid,
    axis: &TimeAxis,
    src: &SourceSpec,
    collect: &Collect,
) -> Result<WaveRun> {
    simulate_forward_observed(eps, grid, axis, src, collect, |_, _| {})
}

/// [`simulate_forward`] with a callback receiving every time level.
pub fn simulate_forward_observed(
    eps: &[f64],
    grid: &UniformGrid,
    axis: &TimeAxis,
    src: &SourceSpec,
    collect: &Collect,
    mut observer: impl FnMut(usize, &[f64]),
) -> Result<WaveRun> {
    let op = WaveOperator::new(grid, eps, FaceCondition::Absorbing, FaceCondition::Absorbing)?;
    let plane = plane_source_nodes(grid, src.z0);
    let mut stepper = Stepper::new(&op, axis)?;
    let mut col = Collector::new(grid, *axis, collect);
    let mut loads: Vec<(usize, f64)> = Vec::with_capacity(plane.len());
    col.observe(0, stepper.current());
    observer(0, stepper.current());
    for k in 0..axis.steps() {
        let f = waveform_f(axis.time(k), src);
        loads.clear();
        if f != 0.0 {
            loads.extend(plane.iter().map(|&(n, a)| (n, a * f)));
        }
        stepper.advance(&loads)?;
        col.observe(k + 1, stepper.current());
        observer(k + 1, stepper.current());
    }
    Ok(col.finish())
}

/// Boundary model of the state problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateBoundary {
    /// `du/dn = p`.
    Neumann,
    /// `du/dn + du/dt = p + du_glob/dt`: the reference run is reproduced
    /// exactly and outgoing scattered waves leave the domain.
    Transparent,
}

/// Boundary load data for the Neumann-driven state problem: for every
/// boundary node of the state grid, its boundary weight `A_i` and the flux
/// density `p_i^k` applied at step `k` (the load is `A_i p_i^k`).
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannData {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
    pub axis: TimeAxis,
    /// Node-major, `axis.samples()` values per node; the last sample is unused.
    pub flux: Vec<f64>,
    pub boundary: StateBoundary,
}

impl NeumannData {
    pub fn zeros(grid: &UniformGrid, axis: TimeAxis) -> Self {
        let nodes = grid.boundary_nodes();
        NeumannData {
            boundary: StateBoundary::Neumann,
            weights: nodes.iter().map(|&n| grid.boundary_weight(n)).collect(),
            flux: vec![0.0; nodes.len() * axis.samples()],
            nodes,
            axis,
        }
    }

    pub fn flux_at(&self, i: usize, k: usize) -> f64 {
        self.flux[i * self.axis.samples() + k]
    }

    fn loads(&self, k: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let s = self.axis.samples();
        for (i, (&n, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let p = self.flux[i * s + k];
            if p != 0.0 {
                out.push((n, w * p));
            }
        }
    }
}

/// Runs the forward problem on the outer grid and extracts the exact
/// discrete boundary flux of its solution on the state sub-grid, so that
/// [`simulate_state`] with the same coefficient reproduces the restriction
/// of this run.
pub fn forward_with_state_flux(
    eps: &[f64],
    grid: &UniformGrid,
    axis: &TimeAxis,
    src: &SourceSpec,
    state: &SubGrid,
    boundary: StateBoundary,
    collect: &Collect,
) -> Result<(WaveRun, NeumannData)> {
    let sub = &state.grid;
    let map = state.parent_map(grid);
    let sub_eps: Vec<f64> = map.iter().map(|&p| eps[p]).collect();
    let outer_op = WaveOperator::new(grid, eps, FaceCondition::Absorbing, FaceCondition::Absorbing)?;
    let state_op = WaveOperator::for_state(sub, &sub_eps, boundary)?;
    let mut data = NeumannData::zeros(sub, *axis);
    data.boundary = boundary;
    let bnodes = data.nodes.clone();
    let tau = axis.tau();
    let samples = axis.samples();
    let mut older = vec![0.0; grid.len()];
    let mut restricted = vec![0.0; sub.len()];
    let mut k_seen = 0usize;
    let mut prev_full = vec![0.0; grid.len()];
    let run = simulate_forward_observed(eps, grid, axis, src, collect, |level, u| {
        if level == 0 {
            prev_full.copy_from_slice(u);
            return;
        }
        // `u` is level k+1, `prev_full` level k, `older` level k-1.
        let k = level - 1;
        for (r, &p) in restricted.iter_mut().zip(&map) {
            *r = prev_full[p];
        }
        for (bi, &sn) in bnodes.iter().enumerate() {
            let pn = map[sn];
            let d2 = (u[pn] - 2.0 * prev_full[pn] + older[pn]) / (tau * tau);
            let d1 = (u[pn] - older[pn]) / (2.0 * tau);
            let load = (state_op.mass()[sn] - outer_op.mass()[pn]) * d2
                + (state_op.damping()[sn] - outer_op.damping()[pn]) * d1
                + state_op.stiffness_row(&restricted, sn)
                - outer_op.stiffness_row(&prev_full, pn);
            data.flux[bi * samples + k] = load / data.weights[bi];
        }
        core::mem::swap(&mut older, &mut prev_full);
        prev_full.copy_from_slice(u);
        k_seen = level;
    })?;
    debug_assert_eq!(k_seen, axis.steps());
    Ok((run, data))
}

/// State problem on the state grid: zero initial data, boundary driven by
/// `p` under the boundary model stored with it.
pub fn simulate_state(
    eps: &[f64],
    grid: &UniformGrid,
    axis: &TimeAxis,
    p: &NeumannData,
    collect: &Collect,
) -> Result<WaveRun> {
    if p.axis.samples() != axis.samples() {
        return Err(Error::Dimension {
            what: "Neumann data samples",
            expected: axis.samples(),
            found: p.axis.samples(),
        });
    }
    let op = WaveOperator::for_state(grid, eps, p.boundary)?;
    let mut stepper = Stepper::new(&op, axis)?;
    let mut col = Collector::new(grid, *axis, collect);
    let mut loads = Vec::with_capacity(p.nodes.len());
    col.observe(0, stepper.current());
    for k in 0..axis.steps() {
        p.loads(k, &mut loads);
        stepper.advance(&loads)?;
        col.observe(k + 1, stepper.current());
    }
    Ok(col.finish())
}

/// Trapezoidal weight of time level `k`.
pub fn trapezoid_weight(axis: &TimeAxis, k: usize) -> f64 {
    if k == 0 || k == axis.steps() {
        0.5
    } else {
        1.0
    }
}

/// Adjoint problem on the state grid: zero terminal data at `T`, boundary
/// of the given model driven by the residual `r` (samples `0..=K` on the boundary
/// nodes of the state grid). Returns `lambda[k]` for every time level `k`,
/// ordered forward in time.
///
/// The discrete backward problem is solved by running the forward stepper
/// on the time-reversed residual. With the state run of [`simulate_state`]
/// this satisfies the discrete duality
/// `tau sum_k w_k <A r^k, u^k> = tau sum_k <A p^k, lambda^k>`.
pub fn simulate_adjoint(
    eps: &[f64],
    grid: &UniformGrid,
    axis: &TimeAxis,
    boundary: StateBoundary,
    residual: &TimeTraces,
) -> Result<Vec<Vec<f64>>> {
    if residual.axis.samples() != axis.samples() {
        return Err(Error::Dimension {
            what: "residual samples",
            expected: axis.samples(),
            found: residual.axis.samples(),
        });
    }
    let k_last = axis.steps();
    let term = (0..residual.len())
        .map(|i| residual.sample(i, k_last).abs())
        .fold(0.0, f64::max);
    if term > 1e-12 {
        return Err(Error::Compatibility { value: term });
    }
    let op = WaveOperator::for_state(grid, eps, boundary)?;
    let weights: Vec<f64> = residual.nodes.iter().map(|&n| grid.boundary_weight(n)).collect();
    let mut stepper = Stepper::new(&op, axis)?;
    let mut reversed = Vec::with_capacity(axis.samples());
    reversed.push(stepper.current().to_vec());
    let mut loads = Vec::with_capacity(residual.len());
    for m in 0..k_last {
        let j = k_last - m;
        let w = trapezoid_weight(axis, j);
        loads.clear();
        for (i, &n) in residual.nodes.iter().enumerate() {
            let r = residual.sample(i, j);
            if r != 0.0 {
                loads.push((n, weights[i] * w * r));
            }
        }
        stepper.advance(&loads)?;
        reversed.push(stepper.current().to_vec());
    }
    reversed.reverse();
    Ok(reversed)
}
