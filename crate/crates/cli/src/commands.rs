//! The four pipeline commands. Each stage reads only files written by the
//! stages before it, so `synth`, `one` and `two` may run as separate
//! processes against the same output directory.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cipwave_core::geometry::DEPTH_AXIS;
use cipwave_core::pipeline::{preprocess, setup, stage1, stage2, stage2_inputs, synthesize, DataSet, Setup};
use cipwave_core::scenario::{build_truth, l2_error, scale_by_background, scale_index_by_background, Measurements, Scenario, Shape};
use cipwave_core::stage2::{image_components, report_metrics, Termination};
use cipwave_core::QuadtreeCoeffMesh;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::io;

pub const TRACES_TOTAL: &str = "traces_total.csv";
pub const TRACES_REFERENCE: &str = "traces_reference.csv";
pub const TRUTH: &str = "truth.csv";
pub const EPS_GLOB: &str = "eps_glob.csv";
pub const STAGE1_HISTORY: &str = "stage1_history.csv";
pub const PSI: &str = "psi.csv";
pub const EPS_FINAL: &str = "eps_final.csv";
pub const STAGE2_MESHES: &str = "stage2_meshes.csv";
pub const STAGE2_CG: &str = "stage2_cg.csv";
pub const REPORT: &str = "report.csv";
pub const REPORT_STAGES: &str = "report_stages.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Synth,
    One,
    Two,
    Full,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides the seed of the configuration file.
    pub seed: Option<u64>,
    /// Upper bound on worker threads. The numerical core is sequential,
    /// so every value gives the same results.
    pub threads: usize,
    pub dump_fields: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// SHA-256 of the configuration file bytes.
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub versions: BTreeMap<String, String>,
    pub timings: Vec<Timing>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
}

struct Run {
    cfg: RunConfig,
    setup: Setup,
    out: PathBuf,
    dump: bool,
    manifest: RunManifest,
}

impl Run {
    fn open(opts: &Options) -> Result<Self> {
        if opts.threads == 0 {
            bail!("--threads must be at least 1");
        }
        let (cfg, bytes) = RunConfig::load(&opts.config)?;
        std::fs::create_dir_all(&opts.out).with_context(|| format!("cannot create {}", opts.out.display()))?;
        let setup = setup(&cfg.scenario.layout, &cfg.experiment)?;
        let seed = opts.seed.or(cfg.seed).unwrap_or(0);
        let versions = BTreeMap::from([("cipwave".to_string(), env!("CARGO_PKG_VERSION").to_string())]);
        Ok(Run {
            cfg,
            setup,
            out: opts.out.clone(),
            dump: opts.dump_fields,
            manifest: RunManifest {
                config_hash: hex::encode(Sha256::digest(&bytes)),
                seed,
                threads: opts.threads,
                versions,
                timings: Vec::new(),
                outputs: Vec::new(),
                termination: None,
            },
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        self.out.join(name)
    }

    fn input(&self, name: &str) -> Result<PathBuf> {
        let p = self.out.join(name);
        if !p.is_file() {
            bail!("missing input {} (run the earlier stage first)", p.display());
        }
        Ok(p)
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let r = f(self).with_context(|| format!("stage {stage}"))?;
        self.manifest.timings.push(Timing {
            stage: stage.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(r)
    }

    fn finish(mut self) -> Result<RunManifest> {
        let p = self.path(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&p, text + "\n").with_context(|| format!("cannot write {}", p.display()))?;
        Ok(self.manifest)
    }

    fn read_data(&self) -> Result<DataSet> {
        let s = &self.setup;
        let total = io::read_traces(&self.input(TRACES_TOTAL)?, &s.grid, &s.measurement, s.axis)?;
        let reference = io::read_traces(&self.input(TRACES_REFERENCE)?, &s.grid, &s.measurement, s.axis)?;
        Ok(preprocess(Measurements { total, reference }, s, &self.cfg.scenario.src, &self.cfg.experiment)?)
    }

    fn synth(&mut self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.manifest.seed);
        let raw = synthesize(&self.cfg.scenario, &self.setup, &self.cfg.experiment, &mut rng)?;
        let truth = build_truth(&self.cfg.scenario, &self.setup.mesh)?;
        io::write_traces(&self.path(TRACES_TOTAL), &raw.total)?;
        io::write_traces(&self.path(TRACES_REFERENCE), &raw.reference)?;
        io::write_cells(&self.path(TRUTH), &truth)?;
        if self.dump {
            io::write_vtk(&self.path("truth.vtk"), &truth, "eps")?;
        }
        Ok(())
    }

    fn one(&mut self) -> Result<()> {
        let data = self.read_data()?;
        let res = stage1(&self.setup, &self.cfg.scenario.src, &data.g, &self.cfg.experiment, |_, _| {})?;
        io::write_cells(&self.path(EPS_GLOB), &res.eps)?;
        io::write_stage1_history(&self.path(STAGE1_HISTORY), &res.history)?;
        io::write_psi(&self.path(PSI), &res.psi)?;
        if self.dump {
            io::write_vtk(&self.path("eps_glob.vtk"), &res.eps, "eps")?;
        }
        Ok(())
    }

    fn two(&mut self) -> Result<()> {
        let data = self.read_data()?;
        let glob = io::read_cells(&self.input(EPS_GLOB)?, &self.setup.mesh)?;
        let src = self.cfg.scenario.src;
        let inputs = stage2_inputs(&self.setup, &src, &glob, &data.g, &self.cfg.experiment)?;
        let res = stage2(&self.setup, &inputs, &glob, &self.cfg.experiment, |_, _| {})?;
        io::write_cells(&self.path(EPS_FINAL), res.final_eps())?;
        let records: Vec<_> = res.meshes.iter().map(|m| m.record.clone()).collect();
        io::write_stage2_meshes(&self.path(STAGE2_MESHES), &records)?;
        io::write_cg_history(&self.path(STAGE2_CG), &res.history)?;
        for (r, m) in res.meshes.iter().enumerate() {
            // Intermediate meshes for the report; the last one is eps_final.
            if r + 1 < res.meshes.len() {
                io::write_cells(&self.path(&format!("eps_mesh{r}.csv")), &m.eps)?;
            }
        }
        if self.dump {
            io::write_vtk(&self.path("eps_final.vtk"), res.final_eps(), "eps")?;
        }
        self.manifest.termination = Some(termination_name(res.termination).to_string());
        Ok(())
    }

    fn report(&mut self) -> Result<()> {
        let sc = self.cfg.scenario.clone();
        let glob = io::read_cells(&self.input(EPS_GLOB)?, &self.setup.mesh)?;
        let meshes = read_stage2_meshes(self)?;
        let rows = table_rows(&sc, &glob, &meshes[meshes.len() - 1], self.cfg.experiment.root_cell);
        io::write_table(&self.path(REPORT), &REPORT_HEADER, &rows)?;
        let mut stages = vec![stage_row(&sc, "one", 0, &glob)?];
        for (r, m) in meshes.iter().enumerate() {
            stages.push(stage_row(&sc, "two", r, m)?);
        }
        io::write_table(&self.path(REPORT_STAGES), &STAGE_HEADER, &stages)?;
        Ok(())
    }
}

/// The meshes of stage 2, coarsest first, read back from the written files.
fn read_stage2_meshes(run: &Run) -> Result<Vec<QuadtreeCoeffMesh>> {
    let mut rdr = csv::Reader::from_path(run.input(STAGE2_MESHES)?)?;
    let n = rdr.records().count();
    (0..n)
        .map(|r| {
            let name = if r + 1 == n { EPS_FINAL.to_string() } else { format!("eps_mesh{r}.csv") };
            io::read_cells(&run.input(&name)?, &run.setup.mesh)
        })
        .collect()
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxRefinements => "max_refinements",
        Termination::NormIncreased => "norm_increased",
        Termination::NormStabilized => "norm_stabilized",
        Termination::NothingToRefine => "nothing_to_refine",
    }
}

pub const REPORT_HEADER: [&str; 13] = [
    "target",
    "shape",
    "burial_depth",
    "eps_true",
    "n_true",
    "eps_comp_stage1",
    "n_comp_stage1",
    "eps_comp_stage2",
    "n_comp_stage2",
    "depth_true",
    "depth_stage1",
    "depth_stage2",
    "background",
];

pub const STAGE_HEADER: [&str; 10] = [
    "stage",
    "mesh",
    "cells",
    "eps_comp",
    "n_comp",
    "eps_comp_scaled",
    "n_comp_scaled",
    "centroid_depth",
    "components",
    "l2_error",
];

/// Largest value and half-maximum centroid depth of the cells centred in
/// `region`.
fn local_metrics(eps: &QuadtreeCoeffMesh, gamma_z: f64, region: ([f64; 3], [f64; 3])) -> (f64, Option<f64>) {
    let axes = eps.domain().active_axes();
    let inside: Vec<usize> = (0..eps.len())
        .filter(|&c| {
            let p = eps.cell_center(c);
            axes.iter().all(|&a| p[a] >= region.0[a] && p[a] <= region.1[a])
        })
        .collect();
    let v = eps.values();
    let max = inside.iter().map(|&c| v[c]).fold(cipwave_core::EPS_MIN, f64::max);
    let (mut wz, mut w) = (0.0, 0.0);
    for &c in &inside {
        if v[c] > cipwave_core::EPS_MIN && v[c] >= 0.5 * max {
            wz += eps.cell_measure(c) * eps.cell_center(c)[DEPTH_AXIS];
            w += eps.cell_measure(c);
        }
    }
    (max, (w > 0.0).then(|| gamma_z - wz / w))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Measured-versus-computed rows, one per inclusion (a single `none` row
/// without inclusions). Values are in physical units.
fn table_rows(sc: &Scenario, glob: &QuadtreeCoeffMesh, fin: &QuadtreeCoeffMesh, pad: f64) -> Vec<Vec<String>> {
    let gz = sc.layout.gamma_z();
    let b = sc.background;
    let d = sc.layout.omega;
    let mut rows = Vec::new();
    let mut push = |target: String, shape: &str, burial: Option<f64>, eps_true: f64, depth_true: Option<f64>, region| {
        let (g, dg) = local_metrics(glob, gz, region);
        let (f, df) = local_metrics(fin, gz, region);
        rows.push(vec![
            target,
            shape.to_string(),
            opt(burial),
            eps_true.to_string(),
            eps_true.sqrt().to_string(),
            scale_by_background(g, b).to_string(),
            scale_index_by_background(g.sqrt(), b).to_string(),
            scale_by_background(f, b).to_string(),
            scale_index_by_background(f.sqrt(), b).to_string(),
            opt(depth_true),
            opt(dg),
            opt(df),
            b.to_string(),
        ]);
    };
    if sc.inclusions.is_empty() {
        push("none".into(), "", None, b, None, (d.lo(), d.hi()));
    }
    for (k, inc) in sc.inclusions.iter().enumerate() {
        let (lo, hi) = inc.shape.bounds();
        let (name, mid) = match inc.shape {
            Shape::Ball { center, .. } => ("ball", center[DEPTH_AXIS]),
            Shape::Box { lo, hi } => ("box", 0.5 * (lo[DEPTH_AXIS] + hi[DEPTH_AXIS])),
        };
        let region = (lo.map(|v| v - pad), hi.map(|v| v + pad));
        push(k.to_string(), name, Some(sc.burial_depth(k)), inc.eps, Some(gz - mid), region);
    }
    rows
}

fn stage_row(sc: &Scenario, stage: &str, mesh: usize, eps: &QuadtreeCoeffMesh) -> Result<Vec<String>> {
    let m = report_metrics(eps, sc.background);
    Ok(vec![
        stage.to_string(),
        mesh.to_string(),
        eps.len().to_string(),
        m.eps_comp.to_string(),
        m.n_comp.to_string(),
        m.eps_comp_scaled.to_string(),
        m.n_comp_scaled.to_string(),
        m.centroid_depth.to_string(),
        image_components(eps).to_string(),
        l2_error(sc, eps)?.to_string(),
    ])
}

pub fn cmd_synth(opts: &Options) -> Result<RunManifest> {
    let mut run = Run::open(opts)?;
    run.timed("synth", Run::synth)?;
    run.finish()
}

pub fn cmd_stage1(opts: &Options) -> Result<RunManifest> {
    let mut run = Run::open(opts)?;
    run.timed("one", Run::one)?;
    run.finish()
}

pub fn cmd_stage2(opts: &Options) -> Result<RunManifest> {
    let mut run = Run::open(opts)?;
    run.timed("two", Run::two)?;
    run.finish()
}

pub fn cmd_full(opts: &Options) -> Result<RunManifest> {
    let mut run = Run::open(opts)?;
    run.timed("synth", Run::synth)?;
    run.timed("one", Run::one)?;
    run.timed("two", Run::two)?;
    run.timed("report", Run::report)?;
    run.finish()
}

pub fn run_stage(stage: Stage, opts: &Options) -> Result<RunManifest> {
    match stage {
        Stage::Synth => cmd_synth(opts),
        Stage::One => cmd_stage1(opts),
        Stage::Two => cmd_stage2(opts),
        Stage::Full => cmd_full(opts),
    }
}
