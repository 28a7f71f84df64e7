//! Scenario files.
//!
//! A run is described by one TOML file. Every key is optional except the
//! ones that fix the geometry; omitted keys take the library defaults.
//!
//! ```toml
//! seed = 7
//!
//! [domain]
//! outer_lo = [-0.56, -0.16]   # (x, z) or (x, y, z)
//! outer_hi = [0.56, 0.1]
//! omega_lo = [-0.5, -0.1]
//! omega_hi = [0.5, 0.04]
//!
//! [scenario]
//! background = 1.0
//! noise = 0.0
//! eps_max = 25.0
//!
//! [source]
//! z0 = 0.08
//! omega = 30.0
//!
//! [[inclusion]]
//! shape = "ball"
//! center = [0.0, -0.0125]
//! radius = 0.025
//! eps = 4.0
//!
//! [[inclusion]]
//! shape = "box"
//! lo = [0.1, -0.06]
//! hi = [0.15, -0.02]
//! eps = 2.0
//! ```
//!
//! Solver blocks: `[solver]` (h, synth_factor, t_final, tau_max),
//! `[mesh]` (root_cell, max_level), `[gca]` (s_lo, s_hi, layers, lambda,
//! inner_iters, inner_tol, outer_tol, s_eval, initial_tail, solver_tol,
//! solver_max_iter), `[tikhonov]` (gamma, theta, beta1, max_refinements,
//! max_cg_iters, delta_fraction, warm_start, c_interp, lipschitz,
//! misfit_surface, state_boundary, armijo, shrink, max_trials,
//! initial_step) and `[preprocess]` (offset, calibration, reference).

use std::fmt;
use std::path::Path;

use cipwave_core::laplace::PseudoFreqAxis;
use cipwave_core::pipeline::ExperimentConfig;
use cipwave_core::preprocess::ReferenceSource;
use cipwave_core::scenario::{Inclusion, Scenario, Shape};
use cipwave_core::stage1::{InitialTail, SEval};
use cipwave_core::stage2::MisfitSurface;
use cipwave_core::wave::{SourceSpec, StateBoundary};
use cipwave_core::{Layout, RectDomain};
use serde::Deserialize;

/// One rejected key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad configuration:")?;
        for i in &self.issues {
            write!(f, " {}: {};", i.key, i.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn keys(&self) -> Vec<&str> {
        self.issues.iter().map(|i| i.key.as_str()).collect()
    }
}

#[derive(Debug, Default, Deserialize)]
struct Raw {
    seed: Option<u64>,
    domain: Option<RawDomain>,
    #[serde(default)]
    scenario: RawScenario,
    #[serde(default)]
    source: RawSource,
    #[serde(default)]
    inclusion: Vec<RawInclusion>,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    mesh: RawMesh,
    #[serde(default)]
    gca: RawGca,
    #[serde(default)]
    tikhonov: RawTikhonov,
    #[serde(default)]
    preprocess: RawPreprocess,
}

#[derive(Debug, Default, Deserialize)]
struct RawDomain {
    outer_lo: Option<Vec<f64>>,
    outer_hi: Option<Vec<f64>>,
    omega_lo: Option<Vec<f64>>,
    omega_hi: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
struct RawScenario {
    background: Option<f64>,
    noise: Option<f64>,
    eps_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawSource {
    z0: Option<f64>,
    omega: Option<f64>,
    amplitude: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawInclusion {
    shape: Option<String>,
    center: Option<Vec<f64>>,
    radius: Option<f64>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
    eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawSolver {
    h: Option<f64>,
    synth_factor: Option<usize>,
    t_final: Option<f64>,
    tau_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawMesh {
    root_cell: Option<f64>,
    max_level: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
struct RawGca {
    s_lo: Option<f64>,
    s_hi: Option<f64>,
    layers: Option<usize>,
    lambda: Option<f64>,
    inner_iters: Option<usize>,
    inner_tol: Option<f64>,
    outer_tol: Option<f64>,
    s_eval: Option<String>,
    initial_tail: Option<String>,
    solver_tol: Option<f64>,
    solver_max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct RawTikhonov {
    gamma: Option<f64>,
    theta: Option<f64>,
    beta1: Option<f64>,
    max_refinements: Option<usize>,
    max_cg_iters: Option<usize>,
    delta_fraction: Option<f64>,
    warm_start: Option<bool>,
    c_interp: Option<f64>,
    lipschitz: Option<f64>,
    misfit_surface: Option<String>,
    state_boundary: Option<String>,
    armijo: Option<f64>,
    shrink: Option<f64>,
    max_trials: Option<usize>,
    initial_step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawPreprocess {
    offset: Option<f64>,
    calibration: Option<f64>,
    reference: Option<String>,
}

/// A validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scenario: Scenario,
    pub experiment: ExperimentConfig,
}

#[derive(Default)]
struct Issues(Vec<Issue>);

impl Issues {
    fn push(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.0.push(Issue {
            key: key.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, key: &str, ok: bool, message: &str) {
        if !ok {
            self.push(key, message);
        }
    }
}

fn choice<T: Copy>(issues: &mut Issues, key: &str, value: &Option<String>, options: &[(&str, T)], default: T) -> T {
    match value {
        None => default,
        Some(v) => match options.iter().find(|(name, _)| name == v) {
            Some(&(_, t)) => t,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                issues.push(key, format!("`{v}` is not one of {}", names.join(", ")));
                default
            }
        },
    }
}

fn domain(issues: &mut Issues, key: &str, lo: &Option<Vec<f64>>, hi: &Option<Vec<f64>>) -> Option<RectDomain> {
    match (lo, hi) {
        (Some(lo), Some(hi)) => match RectDomain::new(lo, hi) {
            Ok(d) => Some(d),
            Err(e) => {
                issues.push(format!("domain.{key}_lo"), e.to_string());
                None
            }
        },
        _ => {
            if lo.is_none() {
                issues.push(format!("domain.{key}_lo"), "missing");
            }
            if hi.is_none() {
                issues.push(format!("domain.{key}_hi"), "missing");
            }
            None
        }
    }
}

/// `(x, z)` or `(x, y, z)` point in the layout's dimension.
fn point(issues: &mut Issues, key: &str, v: &[f64], dim: usize) -> [f64; 3] {
    match (dim, v.len()) {
        (2, 2) => [v[0], 0.0, v[1]],
        (3, 3) => [v[0], v[1], v[2]],
        _ => {
            issues.push(key, format!("expected {dim} components, found {}", v.len()));
            [0.0; 3]
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut issues = Issues::default();
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError {
            issues: vec![Issue {
                key: "<file>".into(),
                message: e.to_string(),
            }],
        })?;
        let raw: Raw = serde_ignored::deserialize(de, |path| {
            let key = path.to_string().replace(".?", "").replace("?.", "");
            issues.push(key, "unknown key")
        }).map_err(|e| {
            ConfigError {
                issues: vec![Issue {
                    key: "<file>".into(),
                    message: e.to_string(),
                }],
            }
        })?;
        let cfg = build(&raw, &mut issues);
        match cfg {
            Some(c) if issues.0.is_empty() => Ok(c),
            _ => Err(ConfigError { issues: issues.0 }),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| anyhow::anyhow!("config {} is not UTF-8", path.display()))?;
        Ok((Self::from_toml(text)?, bytes))
    }
}

fn build(raw: &Raw, issues: &mut Issues) -> Option<RunConfig> {
    let d = raw.domain.as_ref();
    if d.is_none() {
        issues.push("domain", "missing");
    }
    let empty = RawDomain::default();
    let d = d.unwrap_or(&empty);
    let outer = domain(issues, "outer", &d.outer_lo, &d.outer_hi);
    let omega = domain(issues, "omega", &d.omega_lo, &d.omega_hi);
    let layout = match (outer, omega) {
        (Some(o), Some(w)) => match Layout::new(o, w) {
            Ok(l) => Some(l),
            Err(e) => {
                issues.push("domain", e.to_string());
                None
            }
        },
        _ => None,
    };

    let sc = &raw.scenario;
    let eps_max = sc.eps_max.unwrap_or(cipwave_core::DEFAULT_EPS_MAX);
    issues.check("scenario.eps_max", eps_max > 1.0, "must exceed 1");
    let background = sc.background.unwrap_or(1.0);
    issues.check("scenario.background", background >= 1.0, "must be at least 1");
    let noise = sc.noise.unwrap_or(0.0);
    issues.check("scenario.noise", noise >= 0.0, "must be nonnegative");

    let src = SourceSpec {
        amplitude: raw.source.amplitude.unwrap_or(1.0),
        ..SourceSpec::new(raw.source.z0.unwrap_or(0.08), raw.source.omega.unwrap_or(30.0))
    };
    issues.check("source.omega", src.omega > 0.0, "must be positive");

    let dim = layout.map(|l| l.outer.dim()).unwrap_or(2);
    let mut inclusions = Vec::new();
    for (k, inc) in raw.inclusion.iter().enumerate() {
        let key = |f: &str| format!("inclusion[{k}].{f}");
        let eps = match inc.eps {
            Some(e) => e,
            None => {
                issues.push(key("eps"), "missing");
                continue;
            }
        };
        let shape = match inc.shape.as_deref() {
            Some("ball") => match (&inc.center, inc.radius) {
                (Some(c), Some(r)) => {
                    issues.check(&key("radius"), r > 0.0, "must be positive");
                    Shape::Ball {
                        center: point(issues, &key("center"), c, dim),
                        radius: r,
                    }
                }
                _ => {
                    issues.push(key("center"), "ball needs center and radius");
                    continue;
                }
            },
            Some("box") => match (&inc.lo, &inc.hi) {
                (Some(lo), Some(hi)) => Shape::Box {
                    lo: point(issues, &key("lo"), lo, dim),
                    hi: point(issues, &key("hi"), hi, dim),
                },
                _ => {
                    issues.push(key("lo"), "box needs lo and hi");
                    continue;
                }
            },
            Some(other) => {
                issues.push(key("shape"), format!("`{other}` is not one of ball, box"));
                continue;
            }
            None => {
                issues.push(key("shape"), "missing");
                continue;
            }
        };
        inclusions.push(Inclusion { shape, eps });
    }

    let mut exp = ExperimentConfig::new();
    let s = &raw.solver;
    exp.h = s.h.unwrap_or(exp.h);
    exp.synth_factor = s.synth_factor.unwrap_or(exp.synth_factor);
    exp.t_final = s.t_final.unwrap_or(exp.t_final);
    exp.tau_max = s.tau_max.or(exp.tau_max);
    issues.check("solver.h", exp.h > 0.0, "must be positive");
    issues.check("solver.synth_factor", exp.synth_factor >= 2, "must be at least 2");
    issues.check("solver.t_final", exp.t_final > 0.0, "must be positive");
    exp.root_cell = raw.mesh.root_cell.unwrap_or(exp.root_cell);
    exp.max_level = raw.mesh.max_level.unwrap_or(exp.max_level);
    issues.check("mesh.root_cell", exp.root_cell >= exp.h, "must be at least solver.h");

    let g = &raw.gca;
    let axis = PseudoFreqAxis::new(
        g.s_lo.unwrap_or(exp.gca.axis.s_lo()),
        g.s_hi.unwrap_or(exp.gca.axis.s_hi()),
        g.layers.unwrap_or(exp.gca.axis.layers()),
    );
    match axis {
        Ok(a) => exp.gca.axis = a,
        Err(e) => issues.push("gca.s_lo", e.to_string()),
    }
    let gc = &mut exp.gca;
    gc.lambda = g.lambda.unwrap_or(gc.lambda);
    gc.inner_iters = g.inner_iters.unwrap_or(gc.inner_iters);
    gc.inner_tol = g.inner_tol.unwrap_or(gc.inner_tol);
    gc.outer_tol = g.outer_tol.unwrap_or(gc.outer_tol);
    gc.solver_tol = g.solver_tol.unwrap_or(gc.solver_tol);
    gc.solver_max_iter = g.solver_max_iter.unwrap_or(gc.solver_max_iter);
    gc.eps_max = eps_max;
    gc.s_eval = choice(issues, "gca.s_eval", &g.s_eval, &[("layer", SEval::Layer), ("upper", SEval::Upper)], gc.s_eval);
    gc.initial_tail = choice(
        issues,
        "gca.initial_tail",
        &g.initial_tail,
        &[("homogeneous", InitialTail::Homogeneous), ("harmonic", InitialTail::Harmonic)],
        gc.initial_tail,
    );
    issues.check("gca.lambda", gc.lambda >= 1.0, "must be at least 1");
    issues.check("gca.inner_iters", gc.inner_iters >= 1, "must be at least 1");
    for (k, v) in [("gca.inner_tol", gc.inner_tol), ("gca.outer_tol", gc.outer_tol), ("gca.solver_tol", gc.solver_tol)] {
        issues.check(k, v > 0.0, "must be positive");
    }

    let t = &raw.tikhonov;
    let tk = &mut exp.tikhonov;
    tk.gamma = t.gamma.unwrap_or(tk.gamma);
    tk.theta = t.theta.unwrap_or(tk.theta);
    tk.beta1 = t.beta1.unwrap_or(tk.beta1);
    tk.max_refinements = t.max_refinements.unwrap_or(tk.max_refinements);
    tk.max_cg_iters = t.max_cg_iters.unwrap_or(tk.max_cg_iters);
    tk.delta_fraction = t.delta_fraction.unwrap_or(tk.delta_fraction);
    tk.warm_start = t.warm_start.unwrap_or(tk.warm_start);
    tk.c_interp = t.c_interp.unwrap_or(tk.c_interp);
    tk.lipschitz = t.lipschitz.unwrap_or(tk.lipschitz);
    tk.eps_max = eps_max;
    tk.line_search.armijo = t.armijo.unwrap_or(tk.line_search.armijo);
    tk.line_search.shrink = t.shrink.unwrap_or(tk.line_search.shrink);
    tk.line_search.max_trials = t.max_trials.unwrap_or(tk.line_search.max_trials);
    tk.line_search.initial_step = t.initial_step.unwrap_or(tk.line_search.initial_step);
    tk.misfit_surface = choice(
        issues,
        "tikhonov.misfit_surface",
        &t.misfit_surface,
        &[("top", MisfitSurface::Top), ("boundary", MisfitSurface::Boundary)],
        tk.misfit_surface,
    );
    tk.state_boundary = choice(
        issues,
        "tikhonov.state_boundary",
        &t.state_boundary,
        &[("transparent", StateBoundary::Transparent), ("neumann", StateBoundary::Neumann)],
        tk.state_boundary,
    );
    issues.check("tikhonov.gamma", tk.gamma > 0.0, "must be positive");
    issues.check("tikhonov.theta", tk.theta >= 0.0, "must be nonnegative");
    issues.check("tikhonov.beta1", tk.beta1 > 0.0 && tk.beta1 < 1.0, "must lie in (0, 1)");
    issues.check("tikhonov.delta_fraction", tk.delta_fraction > 0.0 && tk.delta_fraction < 1.0, "must lie in (0, 1)");
    issues.check("tikhonov.armijo", tk.line_search.armijo > 0.0 && tk.line_search.armijo < 1.0, "must lie in (0, 1)");
    issues.check("tikhonov.shrink", tk.line_search.shrink > 0.0 && tk.line_search.shrink < 1.0, "must lie in (0, 1)");
    issues.check("tikhonov.initial_step", tk.line_search.initial_step > 0.0, "must be positive");

    let p = &raw.preprocess;
    let pp = &mut exp.preprocess;
    pp.offset = p.offset.unwrap_or(pp.offset);
    pp.calibration = p.calibration.unwrap_or(pp.calibration);
    pp.reference = choice(
        issues,
        "preprocess.reference",
        &p.reference,
        &[("synthetic", ReferenceSource::Synthetic), ("none", ReferenceSource::None)],
        pp.reference,
    );
    issues.check("preprocess.offset", pp.offset >= 0.0, "must be nonnegative");
    issues.check("preprocess.calibration", pp.calibration > 0.0, "must be positive");

    let scenario = Scenario {
        layout: layout?,
        background,
        inclusions,
        noise,
        src,
        eps_max,
    };
    if issues.0.is_empty() {
        if let Err(e) = scenario.validate() {
            issues.push("scenario", e.to_string());
        }
        if let Err(e) = exp.validate() {
            issues.push("solver", e.to_string());
        }
    }
    Some(RunConfig {
        seed: raw.seed,
        scenario,
        experiment: exp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[domain]
outer_lo = [-0.56, -0.16]
outer_hi = [0.56, 0.1]
omega_lo = [-0.5, -0.1]
omega_hi = [0.5, 0.04]
"#;

    #[test]
    fn minimal_file_takes_defaults() {
        let c = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(c.experiment, ExperimentConfig::new());
        assert!(c.scenario.inclusions.is_empty());
        assert_eq!(c.scenario.background, 1.0);
        assert_eq!(c.seed, None);
    }

    #[test]
    fn inclusions_and_overrides() {
        let text = format!(
            "seed = 9\n{BASE}\n[scenario]\neps_max = 20.0\n[tikhonov]\ngamma = 1e-4\nstate_boundary = \"neumann\"\n\
             [[inclusion]]\nshape = \"ball\"\ncenter = [0.0, -0.02]\nradius = 0.03\neps = 4.0\n\
             [[inclusion]]\nshape = \"box\"\nlo = [0.1, -0.06]\nhi = [0.2, -0.02]\neps = 2.0\n"
        );
        let c = RunConfig::from_toml(&text).unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.scenario.inclusions.len(), 2);
        assert_eq!(
            c.scenario.inclusions[0].shape,
            Shape::Ball {
                center: [0.0, 0.0, -0.02],
                radius: 0.03
            }
        );
        assert_eq!(c.experiment.tikhonov.gamma, 1e-4);
        assert_eq!(c.experiment.tikhonov.state_boundary, StateBoundary::Neumann);
        assert_eq!(c.experiment.tikhonov.eps_max, 20.0);
        assert_eq!(c.experiment.gca.eps_max, 20.0);
    }

    #[test]
    fn every_offending_key_is_listed() {
        let text = format!(
            "bogus = 1\n{BASE}\nextra = 2\n[solver]\nh = -1.0\nspeed = 2\n[tikhonov]\nbeta1 = 2.0\nmisfit_surface = \"side\"\n\
             [[inclusion]]\nshape = \"cone\"\neps = 3.0\n"
        );
        let err = RunConfig::from_toml(&text).unwrap_err();
        let keys = err.keys();
        for k in [
            "bogus",
            "domain.extra",
            "solver.speed",
            "solver.h",
            "tikhonov.beta1",
            "tikhonov.misfit_surface",
            "inclusion[0].shape",
        ] {
            assert!(keys.contains(&k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn missing_domain_and_geometry_errors() {
        let err = RunConfig::from_toml("[scenario]\nbackground = 1.0\n").unwrap_err();
        assert_eq!(err.keys(), vec!["domain", "domain.outer_lo", "domain.outer_hi", "domain.omega_lo", "domain.omega_hi"]);
        let text = format!("{BASE}\n[[inclusion]]\nshape = \"ball\"\ncenter = [0.0, 0.03]\nradius = 0.05\neps = 4.0\n");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert_eq!(err.keys(), vec!["scenario"]);
        assert!(RunConfig::from_toml("[domain\n").is_err());
    }
}
