//! Ground-truth coefficients and synthetic measurements.
//!
//! Scenario values are physical (`background` is the host permittivity,
//! inclusion values are absolute). Simulations run in units relative to the
//! background, where the host and the exterior of `Omega` have coefficient 1.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Layout, TimeAxis, UniformGrid, DEPTH_AXIS};
use crate::mesh::QuadtreeCoeffMesh;
use crate::wave::{simulate_forward, Collect, SourceSpec, TimeTraces};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Disc (2-D) or ball (3-D).
    Ball { center: [f64; 3], radius: f64 },
    Box { lo: [f64; 3], hi: [f64; 3] },
}

impl Shape {
    pub fn contains(&self, p: &[f64; 3], axes: &[usize]) -> bool {
        match *self {
            Shape::Ball { center, radius } => {
                axes.iter().map(|&a| (p[a] - center[a]).powi(2)).sum::<f64>() <= radius * radius
            }
            Shape::Box { lo, hi } => axes.iter().all(|&a| p[a] >= lo[a] && p[a] <= hi[a]),
        }
    }

    /// Bounding box over the given axes.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Shape::Ball { center, radius } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            Shape::Box { lo, hi } => (lo, hi),
        }
    }

    pub fn top(&self) -> f64 {
        self.bounds().1[DEPTH_AXIS]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub shape: Shape,
    /// Physical permittivity.
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub layout: Layout,
    /// Physical permittivity of the host medium.
    pub background: f64,
    pub inclusions: Vec<Inclusion>,
    /// Relative standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub src: SourceSpec,
    pub eps_max: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.background >= 1.0) {
            return Err(Error::Config(alloc::format!("background {} below 1", self.background)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(alloc::format!("noise level {} is negative", self.noise)));
        }
        let om = &self.layout.omega;
        let axes = om.active_axes();
        for (k, inc) in self.inclusions.iter().enumerate() {
            let (lo, hi) = inc.shape.bounds();
            let inside = axes
                .iter()
                .all(|&a| lo[a] >= om.lo()[a] - 1e-12 && hi[a] <= om.hi()[a] + 1e-12);
            if !inside {
                return Err(Error::InvalidGeometry(alloc::format!("inclusion {k} is not contained in Omega")));
            }
            let rel = inc.eps / self.background;
            if !(rel >= 1.0 && rel <= self.eps_max) {
                return Err(Error::Config(alloc::format!(
                    "inclusion {k}: relative permittivity {rel} outside [1, {}]",
                    self.eps_max
                )));
            }
        }
        if self.src.z0 <= self.layout.omega.hi()[DEPTH_AXIS] || self.src.z0 >= self.layout.outer.hi()[DEPTH_AXIS] {
            return Err(Error::InvalidGeometry(
                "source plane must lie between Omega and the front face".into(),
            ));
        }
        Ok(())
    }

    /// Distance from `Gamma` to the top of inclusion `k`.
    pub fn burial_depth(&self, k: usize) -> f64 {
        self.layout.gamma_z() - self.inclusions[k].shape.top()
    }

    /// Relative coefficient at a point (1 outside every inclusion; later
    /// inclusions overwrite earlier ones).
    pub fn relative_at(&self, p: &[f64; 3]) -> f64 {
        let axes = self.layout.omega.active_axes();
        let mut e = 1.0;
        for inc in &self.inclusions {
            if inc.shape.contains(p, axes) {
                e = inc.eps / self.background;
            }
        }
        e
    }

    pub fn without_inclusions(&self) -> Scenario {
        Scenario {
            inclusions: Vec::new(),
            ..self.clone()
        }
    }
}

/// Truth on `mesh` in relative units: a cell takes the inclusion value when
/// its center lies inside the inclusion.
pub fn build_truth(scenario: &Scenario, mesh: &QuadtreeCoeffMesh) -> Result<QuadtreeCoeffMesh> {
    scenario.validate()?;
    let values: Vec<f64> = (0..mesh.len())
        .map(|c| scenario.relative_at(&mesh.cell_center(c)))
        .collect();
    mesh.with_values(&values)
}

/// `L2(Omega)` distance between `eps` and the truth painted on the same mesh.
pub fn l2_error(scenario: &Scenario, eps: &QuadtreeCoeffMesh) -> Result<f64> {
    let truth = build_truth(scenario, eps)?;
    let (e, t) = (eps.values(), truth.values());
    Ok((0..e.len())
        .map(|c| eps.cell_measure(c) * (e[c] - t[c]).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Nodal relative coefficient on a simulation grid, painted pointwise.
pub fn nodal_truth(scenario: &Scenario, grid: &UniformGrid) -> Vec<f64> {
    (0..grid.len()).map(|i| scenario.relative_at(&grid.point(i))).collect()
}

/// Where synthetic data are recorded: nodes of an inversion grid, sampled on
/// its time axis. The synthesis grid must be a nested refinement of it.
#[derive(Debug, Clone)]
pub struct RecordPlan<'a> {
    pub grid: &'a UniformGrid,
    pub nodes: &'a [usize],
    pub axis: TimeAxis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub total: TimeTraces,
    pub reference: TimeTraces,
}

/// Nested synthesis grid with spacing divided by `factor`.
pub fn synthesis_grid(coarse: &UniformGrid, factor: usize) -> Result<UniformGrid> {
    let target = coarse.min_spacing() / factor as f64;
    let g = crate::geometry::build_grid(*coarse.domain(), target * (1.0 + 1e-9))?;
    for &a in coarse.active_axes() {
        if (g.counts()[a] - 1) != factor * (coarse.counts()[a] - 1) {
            return Err(Error::InvalidGeometry(
                "synthesis grid is not a nested refinement of the inversion grid".into(),
            ));
        }
    }
    Ok(g)
}

fn fine_node(fine: &UniformGrid, coarse: &UniformGrid, n: usize) -> Result<usize> {
    let p = coarse.point(n);
    let mut ijk = [0usize; 3];
    for a in 0..3 {
        ijk[a] = fine
            .aligned_index(a, p[a])
            .ok_or_else(|| Error::InvalidGeometry("record node is not on the synthesis grid".into()))?;
    }
    Ok(fine.index(ijk))
}

/// Runs the scenario with and without inclusions on `fine` (time step
/// `plan.axis` divided by `time_factor`) and returns both records
/// downsampled to `plan`. Noise, if any, is added to the total traces with
/// standard deviation `noise * rms(total)`.
pub fn synthesize_measurements<R: Rng + ?Sized>(
    scenario: &Scenario,
    fine: &UniformGrid,
    time_factor: usize,
    plan: &RecordPlan,
    rng: &mut R,
) -> Result<Measurements> {
    scenario.validate()?;
    let fine_axis = plan.axis.refined(time_factor.max(1));
    let fine_nodes: Vec<usize> = plan
        .nodes
        .iter()
        .map(|&n| fine_node(fine, plan.grid, n))
        .collect::<Result<_>>()?;
    let col = Collect {
        record: fine_nodes,
        ..Default::default()
    };
    let run = |sc: &Scenario| -> Result<TimeTraces> {
        let eps = nodal_truth(sc, fine);
        let r = simulate_forward(&eps, fine, &fine_axis, &sc.src, &col)?;
        Ok(downsample(&r.traces, plan, time_factor.max(1)))
    };
    let mut total = run(scenario)?;
    let reference = if scenario.inclusions.is_empty() {
        total.clone()
    } else {
        run(&scenario.without_inclusions())?
    };
    if scenario.noise > 0.0 {
        add_noise(&mut total, scenario.noise, rng)?;
    }
    Ok(Measurements { total, reference })
}

fn downsample(fine: &TimeTraces, plan: &RecordPlan, factor: usize) -> TimeTraces {
    let mut out = TimeTraces::zeros(plan.grid, plan.nodes, plan.axis);
    for i in 0..out.len() {
        let src = fine.trace(i);
        for (k, dst) in out.trace_mut(i).iter_mut().enumerate() {
            *dst = src[k * factor];
        }
    }
    out
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Adds Gaussian noise with standard deviation `level * rms(traces)`.
pub fn add_noise<R: Rng + ?Sized>(traces: &mut TimeTraces, level: f64, rng: &mut R) -> Result<()> {
    let sigma = level * rms(&traces.data);
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(alloc::format!("noise: {e}")))?;
    for v in traces.data.iter_mut() {
        *v += normal.sample(rng);
    }
    Ok(())
}

/// Relative permittivity-type value to physical.
pub fn scale_by_background(value: f64, background: f64) -> f64 {
    value * background
}

/// Relative refractive-index-type value to physical.
pub fn scale_index_by_background(n: f64, background: f64) -> f64 {
    n * background.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, BoundaryTag};
    use crate::RectDomain;
    use rand::SeedableRng;

    fn layout() -> Layout {
        Layout::new(
            RectDomain::square_2d(-0.3, 0.3, -0.16, 0.1).unwrap(),
            RectDomain::square_2d(-0.24, 0.24, -0.1, 0.04).unwrap(),
        )
        .unwrap()
    }

    fn scenario(inclusions: Vec<Inclusion>) -> Scenario {
        Scenario {
            layout: layout(),
            background: 1.0,
            inclusions,
            noise: 0.0,
            src: SourceSpec::new(0.08, 30.0),
            eps_max: 25.0,
        }
    }

    fn ball(x: f64, z: f64, r: f64, eps: f64) -> Inclusion {
        Inclusion {
            shape: Shape::Ball {
                center: [x, 0.0, z],
                radius: r,
            },
            eps,
        }
    }

    #[test]
    fn truth_painting() {
        let mesh = QuadtreeCoeffMesh::uniform(layout().omega, [24, 1, 7], 3, 1.0).unwrap();
        let t = build_truth(&scenario(Vec::new()), &mesh).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0));
        let t = build_truth(&scenario(vec![ball(0.0, -0.03, 0.03, 15.0)]), &mesh).unwrap();
        assert_eq!(t.values().iter().cloned().fold(0.0, f64::max), 15.0);
        let escaping = scenario(vec![ball(0.0, 0.03, 0.03, 4.0)]);
        assert!(matches!(build_truth(&escaping, &mesh), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn l2_error_of_constant_offset() {
        let mesh = QuadtreeCoeffMesh::uniform(layout().omega, [24, 1, 7], 3, 1.0).unwrap();
        let sc = scenario(Vec::new());
        assert_eq!(l2_error(&sc, &mesh).unwrap(), 0.0);
        let off = mesh.map_values(|_| 1.5);
        let expect = 0.5 * layout().omega.measure().sqrt();
        assert!((l2_error(&sc, &off).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn background_scaling() {
        assert!((scale_by_background(6.125, 4.0) - 24.5).abs() < 1e-12);
        assert_eq!(scale_by_background(3.0, 1.0), 3.0);
        assert!((scale_index_by_background(2.35, 4.0) - 4.7).abs() < 1e-12);
    }

    #[test]
    fn burial_depth_is_measured_from_gamma() {
        let sc = scenario(vec![ball(0.0, -0.03, 0.02, 4.0)]);
        assert!((sc.burial_depth(0) - 0.05).abs() < 1e-12);
    }

    fn plan_setup() -> (UniformGrid, Vec<usize>, TimeAxis) {
        let grid = build_grid(layout().outer, 0.02).unwrap();
        let nodes = layout().region(&grid, BoundaryTag::Gamma).nodes;
        let axis = TimeAxis::for_grid(0.6, &grid, None).unwrap();
        (grid, nodes, axis)
    }

    #[test]
    fn no_inclusions_total_equals_reference() {
        let (grid, nodes, axis) = plan_setup();
        let fine = synthesis_grid(&grid, 2).unwrap();
        let plan = RecordPlan {
            grid: &grid,
            nodes: &nodes,
            axis,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = synthesize_measurements(&scenario(Vec::new()), &fine, 2, &plan, &mut rng).unwrap();
        assert_eq!(m.total, m.reference);
        let sc = scenario(vec![ball(0.0, -0.03, 0.03, 4.0)]);
        let a = synthesize_measurements(&sc, &fine, 2, &plan, &mut rng).unwrap();
        let b = synthesize_measurements(&sc, &fine, 2, &plan, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.total, a.reference);
    }

    #[test]
    fn noise_level_matches_rms_ratio() {
        let (grid, nodes, axis) = plan_setup();
        let fine = synthesis_grid(&grid, 2).unwrap();
        let plan = RecordPlan {
            grid: &grid,
            nodes: &nodes,
            axis,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut sc = scenario(Vec::new());
        let clean = synthesize_measurements(&sc, &fine, 2, &plan, &mut rng).unwrap().total;
        sc.noise = 0.05;
        let noisy = synthesize_measurements(&sc, &fine, 2, &plan, &mut rng).unwrap().total;
        let diff: Vec<f64> = noisy.data.iter().zip(&clean.data).map(|(a, b)| a - b).collect();
        let snr = rms(&clean.data) / rms(&diff);
        assert!((snr - 20.0).abs() < 2.0, "snr {snr}");
    }

    #[test]
    fn synthesis_grid_must_nest() {
        let (grid, _, _) = plan_setup();
        let fine = synthesis_grid(&grid, 2).unwrap();
        assert!((fine.min_spacing() - 0.01).abs() < 1e-12);
    }
}
