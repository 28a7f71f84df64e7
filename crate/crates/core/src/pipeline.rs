//! Experiment plumbing shared by the driver and the end-to-end tests:
//! grids and meshes for a layout, synthetic data through the preprocessing
//! chain, and the inputs of both stages.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{build_grid, BoundaryTag, Layout, SubGrid, TimeAxis, UniformGrid, DEPTH_AXIS};
use crate::laplace::PseudoFreqAxis;
use crate::mesh::QuadtreeCoeffMesh;
use crate::preprocess::{calibrate, extract_target_signal, immerse_data, propagate_traces, PreprocessConfig, ReferenceSource};
use crate::scenario::{synthesis_grid, synthesize_measurements, Measurements, RecordPlan, Scenario};
use crate::stage1::{run_stage1_observed, GcaConfig, Stage1Problem, Stage1Record, Stage1Result};
use crate::stage2::{run_stage2_observed, CgRecord, Stage2Problem, Stage2Result, TikhonovConfig};
use crate::wave::{forward_with_state_flux, simulate_forward, Collect, NeumannData, SourceSpec, TimeTraces};
use crate::EPS_MIN;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    /// Spacing of the inversion grid.
    pub h: f64,
    /// Synthetic data are computed on a grid `synth_factor` times finer.
    pub synth_factor: usize,
    pub t_final: f64,
    pub tau_max: Option<f64>,
    /// Edge length of the root cells of the coefficient mesh.
    pub root_cell: f64,
    pub max_level: u8,
    pub gca: GcaConfig,
    pub tikhonov: TikhonovConfig,
    pub preprocess: PreprocessConfig,
}

impl ExperimentConfig {
    pub fn new() -> Self {
        ExperimentConfig {
            h: 0.005,
            synth_factor: 2,
            t_final: 1.2,
            tau_max: None,
            root_cell: 0.02,
            max_level: 2,
            gca: GcaConfig::new(PseudoFreqAxis::new(6.0, 8.0, 10).expect("valid window")),
            tikhonov: TikhonovConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.h > 0.0) {
            bad.push("h > 0");
        }
        if self.synth_factor < 2 {
            bad.push("synth_factor >= 2");
        }
        if !(self.t_final > 0.0) {
            bad.push("t_final > 0");
        }
        if !(self.root_cell >= self.h) {
            bad.push("root_cell >= h");
        }
        if !bad.is_empty() {
            return Err(Error::Config(alloc::format!("experiment settings violate {}", bad.join(", "))));
        }
        self.gca.validate()?;
        self.tikhonov.validate()?;
        self.preprocess.validate()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::new()
    }
}

/// Grids, time axis and node sets of one layout.
#[derive(Debug, Clone)]
pub struct Setup {
    pub layout: Layout,
    pub grid: UniformGrid,
    pub omega: SubGrid,
    /// Window of `grid` covering `G'`.
    pub state: SubGrid,
    pub axis: TimeAxis,
    /// `Gamma` nodes of `grid`.
    pub gamma: Vec<usize>,
    /// Nodes of the measurement plane, in the order of `gamma`.
    pub measurement: Vec<usize>,
    /// Coefficient mesh over `Omega` carrying 1.
    pub mesh: QuadtreeCoeffMesh,
}

pub fn setup(layout: &Layout, cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let grid = build_grid(layout.outer, cfg.h)?;
    let omega = grid.sub_grid(&layout.omega)?;
    let state = grid.sub_grid(&layout.state_domain()?)?;
    let axis = TimeAxis::for_grid(cfg.t_final, &grid, cfg.tau_max)?;
    let gamma = layout.region(&grid, BoundaryTag::Gamma).nodes;
    let offset = cfg.preprocess.offset;
    let plane = grid
        .aligned_index(DEPTH_AXIS, layout.gamma_z() + offset)
        .ok_or_else(|| Error::InvalidGeometry("measurement plane is not a grid plane".into()))?;
    let measurement = gamma
        .iter()
        .map(|&n| {
            let mut ijk = grid.ijk(n);
            ijk[DEPTH_AXIS] = plane;
            grid.index(ijk)
        })
        .collect();
    let mesh = QuadtreeCoeffMesh::with_root_size(layout.omega, cfg.root_cell, cfg.max_level, EPS_MIN)?;
    Ok(Setup {
        layout: *layout,
        grid,
        omega,
        state,
        axis,
        gamma,
        measurement,
        mesh,
    })
}

#[derive(Debug, Clone)]
pub struct DataSet {
    /// Raw records on the measurement plane.
    pub raw: Measurements,
    /// Extracted, propagated and calibrated target signal on `Gamma`.
    pub target: TimeTraces,
    /// Data `g` on `Gamma`: the target signal on top of the simulated
    /// incident field of the inversion grid.
    pub g: TimeTraces,
}

fn rekey(t: &TimeTraces, grid: &UniformGrid, nodes: &[usize]) -> TimeTraces {
    let mut out = TimeTraces::zeros(grid, nodes, t.axis);
    out.data.copy_from_slice(&t.data);
    out
}

/// Synthetic measurement and the preprocessing chain.
pub fn prepare_data<R: Rng + ?Sized>(scenario: &Scenario, setup: &Setup, cfg: &ExperimentConfig, rng: &mut R) -> Result<DataSet> {
    let raw = synthesize(scenario, setup, cfg, rng)?;
    preprocess(raw, setup, &scenario.src, cfg)
}

/// Raw records on the measurement plane from the finer synthesis grid.
pub fn synthesize<R: Rng + ?Sized>(scenario: &Scenario, setup: &Setup, cfg: &ExperimentConfig, rng: &mut R) -> Result<Measurements> {
    let fine = synthesis_grid(&setup.grid, cfg.synth_factor)?;
    let plan = RecordPlan {
        grid: &setup.grid,
        nodes: &setup.measurement,
        axis: setup.axis,
    };
    synthesize_measurements(scenario, &fine, cfg.synth_factor, &plan, rng)
}

/// Extraction, propagation to `Gamma` and calibration of raw records, and
/// the data `g` built from them.
pub fn preprocess(raw: Measurements, setup: &Setup, src: &SourceSpec, cfg: &ExperimentConfig) -> Result<DataSet> {
    let expect = setup.measurement.len() * setup.axis.samples();
    for t in [&raw.total, &raw.reference] {
        if t.data.len() != expect || t.axis != setup.axis {
            return Err(Error::Dimension {
                what: "measurement samples",
                expected: expect,
                found: t.data.len(),
            });
        }
    }
    let pre = &cfg.preprocess;
    let extracted = match pre.reference {
        ReferenceSource::Synthetic => extract_target_signal(&raw.total, &raw.reference)?,
        ReferenceSource::None => raw.total.clone(),
    };
    let moved = propagate_traces(&extracted, pre.offset)?;
    let target = rekey(&calibrate(&moved, pre.calibration), &setup.grid, &setup.gamma);
    let g = match pre.reference {
        ReferenceSource::Synthetic => {
            let hom = simulate_forward(
                &vec![EPS_MIN; setup.grid.len()],
                &setup.grid,
                &setup.axis,
                src,
                &Collect {
                    record: setup.gamma.clone(),
                    ..Default::default()
                },
            )?;
            let mut g = hom.traces;
            for (a, b) in g.data.iter_mut().zip(&target.data) {
                *a += b;
            }
            g
        }
        ReferenceSource::None => target.clone(),
    };
    Ok(DataSet { raw, target, g })
}

pub fn stage1(
    setup: &Setup,
    src: &SourceSpec,
    g: &TimeTraces,
    cfg: &ExperimentConfig,
    observe: impl FnMut(&Stage1Record, &QuadtreeCoeffMesh),
) -> Result<Stage1Result> {
    let problem = Stage1Problem {
        outer: &setup.grid,
        omega: &setup.omega,
        mesh: &setup.mesh,
        time: setup.axis,
        src: *src,
        data: g,
    };
    run_stage1_observed(&problem, &cfg.gca, observe)
}

/// Neumann data of the state problem and immersed data `g~` on the boundary
/// of `G'`, both taken from a run with `eps_glob`.
#[derive(Debug, Clone)]
pub struct Stage2Inputs {
    pub neumann: NeumannData,
    pub data: TimeTraces,
}

pub fn stage2_inputs(
    setup: &Setup,
    src: &SourceSpec,
    eps_glob: &QuadtreeCoeffMesh,
    g: &TimeTraces,
    cfg: &ExperimentConfig,
) -> Result<Stage2Inputs> {
    let boundary = cfg.tikhonov.state_boundary;
    let sg = &setup.state.grid;
    let map = setup.state.parent_map(&setup.grid);
    let surface = sg.boundary_nodes();
    let nodal = eps_glob.embed_in(&setup.grid, EPS_MIN);
    let col = Collect {
        record: surface.iter().map(|&n| map[n]).collect(),
        ..Default::default()
    };
    let (run, neumann) = forward_with_state_flux(&nodal, &setup.grid, &setup.axis, src, &setup.state, boundary, &col)?;
    let simulated = rekey(&run.traces, sg, &surface);
    let mut inverse = vec![usize::MAX; setup.grid.len()];
    for (i, &p) in map.iter().enumerate() {
        inverse[p] = i;
    }
    let measured_nodes: Vec<usize> = g
        .nodes
        .iter()
        .map(|&n| match inverse[n] {
            usize::MAX => Err(Error::InvalidGeometry("a data node lies outside G'".into())),
            i => Ok(i),
        })
        .collect::<Result<_>>()?;
    let measured = rekey(g, sg, &measured_nodes);
    let data = immerse_data(&measured, &simulated, sg, &surface)?;
    Ok(Stage2Inputs { neumann, data })
}

pub fn stage2(
    setup: &Setup,
    inputs: &Stage2Inputs,
    eps_glob: &QuadtreeCoeffMesh,
    cfg: &ExperimentConfig,
    observe: impl FnMut(&CgRecord, &QuadtreeCoeffMesh),
) -> Result<Stage2Result> {
    let problem = Stage2Problem {
        grid: &setup.state.grid,
        axis: setup.axis,
        neumann: &inputs.neumann,
        data: &inputs.data,
    };
    run_stage2_observed(&problem, eps_glob, &cfg.tikhonov, observe)
}

/// Outputs of a complete run.
#[derive(Debug, Clone)]
pub struct FullRun {
    pub setup: Setup,
    pub data: DataSet,
    pub stage1: Stage1Result,
    pub stage2: Stage2Result,
}

/// Synthesis, preprocessing, first stage and second stage started from
/// the first-stage coefficient.
pub fn run_full<R: Rng + ?Sized>(
    scenario: &Scenario,
    cfg: &ExperimentConfig,
    rng: &mut R,
    mut on_layer: impl FnMut(&Stage1Record, &QuadtreeCoeffMesh),
    mut on_cg: impl FnMut(&CgRecord, &QuadtreeCoeffMesh),
) -> Result<FullRun> {
    scenario.validate()?;
    let setup = setup(&scenario.layout, cfg)?;
    let data = prepare_data(scenario, &setup, cfg, rng)?;
    let stage1 = stage1(&setup, &scenario.src, &data.g, cfg, &mut on_layer)?;
    let inputs = stage2_inputs(&setup, &scenario.src, &stage1.eps, &data.g, cfg)?;
    let stage2 = stage2(&setup, &inputs, &stage1.eps, cfg, &mut on_cg)?;
    Ok(FullRun {
        setup,
        data,
        stage1,
        stage2,
    })
}
