//! Rectangular domains, uniform node grids, boundary regions and time axes.
//!
//! Coordinates are always stored as `[x, y, z]`. Two-dimensional domains use
//! the `(x, z)` plane and collapse the `y` axis to a single node; `z` is the
//! propagation (depth) axis in both cases, with the source above the domain
//! of interest at large `z`.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Index of the propagation axis.
pub const DEPTH_AXIS: usize = 2;

const AXES_2D: [usize; 2] = [0, 2];
const AXES_3D: [usize; 3] = [0, 1, 2];

/// Relative tolerance used when snapping coordinates onto grid nodes.
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectDomain {
    lo: [f64; 3],
    hi: [f64; 3],
    dim: usize,
}

impl RectDomain {
    /// Builds a domain from `(x, z)` bounds (two entries) or `(x, y, z)`
    /// bounds (three entries).
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() || !(lo.len() == 2 || lo.len() == 3) {
            return Err(Error::InvalidGeometry(format!(
                "domain bounds must have 2 or 3 matching components, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        let dim = lo.len();
        let (mut l, mut h) = ([0.0; 3], [0.0; 3]);
        if dim == 2 {
            l[0] = lo[0];
            h[0] = hi[0];
            l[2] = lo[1];
            h[2] = hi[1];
        } else {
            l.copy_from_slice(lo);
            h.copy_from_slice(hi);
        }
        let d = RectDomain { lo: l, hi: h, dim };
        for &a in d.active_axes() {
            if !(d.lo[a].is_finite() && d.hi[a].is_finite() && d.lo[a] < d.hi[a]) {
                return Err(Error::InvalidGeometry(format!(
                    "degenerate extent on axis {a}: [{}, {}]",
                    d.lo[a], d.hi[a]
                )));
            }
        }
        Ok(d)
    }

    pub fn square_2d(lo_x: f64, hi_x: f64, lo_z: f64, hi_z: f64) -> Result<Self> {
        Self::new(&[lo_x, lo_z], &[hi_x, hi_z])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> [f64; 3] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 3] {
        self.hi
    }

    pub fn active_axes(&self) -> &'static [usize] {
        if self.dim == 2 {
            &AXES_2D
        } else {
            &AXES_3D
        }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Lebesgue measure (area in 2-D, volume in 3-D).
    pub fn measure(&self) -> f64 {
        self.active_axes().iter().map(|&a| self.extent(a)).product()
    }

    pub fn min_extent(&self) -> f64 {
        self.active_axes()
            .iter()
            .map(|&a| self.extent(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Closed-box membership with an absolute tolerance.
    pub fn contains(&self, p: &[f64; 3], tol: f64) -> bool {
        self.active_axes()
            .iter()
            .all(|&a| p[a] >= self.lo[a] - tol && p[a] <= self.hi[a] + tol)
    }

    pub fn contains_domain(&self, other: &RectDomain, tol: f64) -> bool {
        self.dim == other.dim
            && self
                .active_axes()
                .iter()
                .all(|&a| other.lo[a] >= self.lo[a] - tol && other.hi[a] <= self.hi[a] + tol)
    }

    /// Copy with the bounds of `axis` replaced.
    pub fn with_axis(&self, axis: usize, lo: f64, hi: f64) -> Result<Self> {
        let mut d = *self;
        d.lo[axis] = lo;
        d.hi[axis] = hi;
        if d.active_axes().contains(&axis) && !(lo < hi) {
            return Err(Error::InvalidGeometry(format!(
                "degenerate extent on axis {axis}: [{lo}, {hi}]"
            )));
        }
        Ok(d)
    }
}

/// Uniform node grid covering a [`RectDomain`], nodes on both end faces.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    domain: RectDomain,
    spacing: [f64; 3],
    counts: [usize; 3],
}

impl UniformGrid {
    pub fn domain(&self) -> &RectDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn active_axes(&self) -> &'static [usize] {
        self.domain.active_axes()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_spacing(&self) -> f64 {
        self.active_axes()
            .iter()
            .map(|&a| self.spacing[a])
            .fold(f64::INFINITY, f64::min)
    }

    /// Stride of a unit step along `axis` in the flat node index.
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.counts[0],
            _ => self.counts[0] * self.counts[1],
        }
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.counts[0] * (ijk[1] + self.counts[1] * ijk[2])
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.counts[0];
        let rest = idx / self.counts[0];
        [i, rest % self.counts[1], rest / self.counts[1]]
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if self.counts[axis] == 1 {
            self.domain.lo[axis]
        } else {
            self.domain.lo[axis] + i as f64 * self.spacing[axis]
        }
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let ijk = self.ijk(idx);
        [self.coord(0, ijk[0]), self.coord(1, ijk[1]), self.coord(2, ijk[2])]
    }

    /// Whether a node lies on the low or high face of `axis`.
    pub fn on_face(&self, ijk: [usize; 3], axis: usize) -> bool {
        self.counts[axis] > 1 && (ijk[axis] == 0 || ijk[axis] + 1 == self.counts[axis])
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let ijk = self.ijk(idx);
        self.active_axes().iter().any(|&a| self.on_face(ijk, a))
    }

    /// Edge length of the dual (control-volume) cell of a node along `axis`:
    /// half a spacing on the end faces.
    pub fn dual_width(&self, ijk: [usize; 3], axis: usize) -> f64 {
        if self.counts[axis] == 1 {
            1.0
        } else if self.on_face(ijk, axis) {
            0.5 * self.spacing[axis]
        } else {
            self.spacing[axis]
        }
    }

    /// Control volume of a node (area in 2-D).
    pub fn dual_volume(&self, idx: usize) -> f64 {
        let ijk = self.ijk(idx);
        self.active_axes()
            .iter()
            .map(|&a| self.dual_width(ijk, a))
            .product()
    }

    /// Area of the dual-cell face normal to `axis` (length in 2-D).
    pub fn dual_face_area(&self, ijk: [usize; 3], axis: usize) -> f64 {
        self.active_axes()
            .iter()
            .filter(|&&b| b != axis)
            .map(|&b| self.dual_width(ijk, b))
            .product()
    }

    /// Boundary measure attributed to a node: the sum of its dual face areas
    /// over every end face the node lies on. Zero for interior nodes.
    pub fn boundary_weight(&self, idx: usize) -> f64 {
        let ijk = self.ijk(idx);
        self.active_axes()
            .iter()
            .filter(|&&a| self.on_face(ijk, a))
            .map(|&a| self.dual_face_area(ijk, a))
            .sum()
    }

    /// Node index range `[first, last]` on `axis` covering `[lo, hi]` (closed),
    /// or `None` when the interval holds no node.
    pub fn node_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        if self.counts[axis] == 1 {
            let c = self.domain.lo[axis];
            return (lo <= c && c <= hi).then_some((0, 0));
        }
        let h = self.spacing[axis];
        let o = self.domain.lo[axis];
        let first = ((lo - o) / h - SNAP_TOL).ceil().max(0.0) as usize;
        let last_f = ((hi - o) / h + SNAP_TOL).floor();
        if last_f < 0.0 {
            return None;
        }
        let last = (last_f as usize).min(self.counts[axis] - 1);
        (first <= last).then_some((first, last))
    }

    /// Node index of the grid plane nearest to `value` on `axis`.
    pub fn nearest_index(&self, axis: usize, value: f64) -> usize {
        if self.counts[axis] == 1 {
            return 0;
        }
        let r = ((value - self.domain.lo[axis]) / self.spacing[axis]).round();
        (r.max(0.0) as usize).min(self.counts[axis] - 1)
    }

    /// Index of `value` on `axis` if it coincides with a grid plane.
    pub fn aligned_index(&self, axis: usize, value: f64) -> Option<usize> {
        if self.counts[axis] == 1 {
            return Some(0);
        }
        let r = (value - self.domain.lo[axis]) / self.spacing[axis];
        let i = r.round();
        ((r - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.counts[axis]).then_some(i as usize)
    }

    /// Node-aligned sub-grid over `domain`, which must sit on grid planes.
    pub fn sub_grid(&self, domain: &RectDomain) -> Result<SubGrid> {
        if domain.dim != self.domain.dim || !self.domain.contains_domain(domain, 1e-9) {
            return Err(Error::InvalidGeometry(
                "sub-grid domain is not inside the parent grid".into(),
            ));
        }
        let mut offset = [0usize; 3];
        let mut counts = [1usize; 3];
        for &a in self.active_axes() {
            let lo = self.aligned_index(a, domain.lo[a]);
            let hi = self.aligned_index(a, domain.hi[a]);
            match (lo, hi) {
                (Some(l), Some(h)) if h >= l + 2 => {
                    offset[a] = l;
                    counts[a] = h - l + 1;
                }
                _ => {
                    return Err(Error::InvalidGeometry(format!(
                        "sub-grid bounds on axis {a} are not aligned with grid planes or span fewer than 3 nodes"
                    )))
                }
            }
        }
        let grid = UniformGrid {
            domain: *domain,
            spacing: self.spacing,
            counts,
        };
        Ok(SubGrid { grid, offset })
    }

    /// Nodes satisfying `pred(ijk)`, in index order.
    pub fn select(&self, mut pred: impl FnMut([usize; 3]) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| pred(self.ijk(i))).collect()
    }

    /// All boundary nodes in index order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_boundary(i)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }
}

/// Builds a node grid whose spacing is the largest value not exceeding
/// `target_spacing` that divides each extent exactly.
pub fn build_grid(domain: RectDomain, target_spacing: f64) -> Result<UniformGrid> {
    if !(target_spacing > 0.0) || target_spacing > 0.5 * domain.min_extent() * (1.0 + 1e-12) {
        return Err(Error::InvalidGeometry(format!(
            "grid spacing {target_spacing} must lie in (0, {}]",
            0.5 * domain.min_extent()
        )));
    }
    let mut spacing = [1.0; 3];
    let mut counts = [1usize; 3];
    for &a in domain.active_axes() {
        let extent = domain.extent(a);
        let cells = (extent / target_spacing - 1e-9).ceil().max(2.0) as usize;
        spacing[a] = extent / cells as f64;
        counts[a] = cells + 1;
    }
    Ok(UniformGrid {
        domain,
        spacing,
        counts,
    })
}

/// A grid that is a node-aligned window of a parent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGrid {
    pub grid: UniformGrid,
    /// Parent node index of the sub-grid's first node along each axis.
    pub offset: [usize; 3],
}

impl SubGrid {
    pub fn to_parent(&self, parent: &UniformGrid, idx: usize) -> usize {
        let ijk = self.grid.ijk(idx);
        parent.index([
            ijk[0] + self.offset[0],
            ijk[1] + self.offset[1],
            ijk[2] + self.offset[2],
        ])
    }

    /// Parent index of every sub-grid node, in sub-grid order.
    pub fn parent_map(&self, parent: &UniformGrid) -> Vec<usize> {
        (0..self.grid.len())
            .map(|i| self.to_parent(parent, i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// Face of the outer domain through which the incident wave enters (`z` max).
    Front,
    /// Far face of the outer domain (`z` min).
    Back,
    /// Remaining faces of the outer domain.
    Lateral,
    /// Backscattering face of the domain of interest.
    Gamma,
    /// `Gamma` extended laterally to the configured half-extents.
    GammaPrime,
}

/// Nodes of a grid belonging to a tagged boundary piece.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRegion {
    pub tag: BoundaryTag,
    pub nodes: Vec<usize>,
}

/// The nested domains of an experiment: the simulation box `G`, the domain of
/// interest `Omega` (its top face is `Gamma`) and the lateral extent of the
/// extended measurement plane `Gamma'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub outer: RectDomain,
    pub omega: RectDomain,
    /// Half-extents `(X, Y)` of the extended measurement plane; `None` means
    /// the lateral extent of the outer box.
    pub gamma_prime_half: Option<[f64; 2]>,
}

impl Layout {
    pub fn new(outer: RectDomain, omega: RectDomain) -> Result<Self> {
        if !outer.contains_domain(&omega, 1e-12) {
            return Err(Error::InvalidGeometry(
                "domain of interest must lie inside the outer box".into(),
            ));
        }
        Ok(Layout {
            outer,
            omega,
            gamma_prime_half: None,
        })
    }

    pub fn gamma_z(&self) -> f64 {
        self.omega.hi[DEPTH_AXIS]
    }

    fn gamma_prime_bounds(&self) -> ([f64; 3], [f64; 3]) {
        let (mut lo, mut hi) = (self.outer.lo, self.outer.hi);
        if let Some([x, y]) = self.gamma_prime_half {
            lo[0] = -x;
            hi[0] = x;
            lo[1] = -y;
            hi[1] = y;
        }
        (lo, hi)
    }

    /// Box between `Gamma'` and the back face: the domain of the state and
    /// adjoint problems.
    pub fn state_domain(&self) -> Result<RectDomain> {
        let (lo, hi) = self.gamma_prime_bounds();
        let mut d = self.outer;
        for &a in &[0usize, 1] {
            if d.active_axes().contains(&a) {
                d = d.with_axis(a, lo[a].max(self.outer.lo[a]), hi[a].min(self.outer.hi[a]))?;
            }
        }
        d.with_axis(DEPTH_AXIS, self.outer.lo[DEPTH_AXIS], self.gamma_z())
    }

    /// Nodes of `grid` (which must cover the outer box or a part of it) in a
    /// tagged region.
    pub fn region(&self, grid: &UniformGrid, tag: BoundaryTag) -> BoundaryRegion {
        let tol = 1e-9 * grid.min_spacing().max(1e-300);
        let outer = self.outer;
        let omega = self.omega;
        let (gp_lo, gp_hi) = self.gamma_prime_bounds();
        let gz = self.gamma_z();
        let axes = grid.active_axes();
        let nodes = grid.select(|ijk| {
            let p = [grid.coord(0, ijk[0]), grid.coord(1, ijk[1]), grid.coord(2, ijk[2])];
            let on_z = |z: f64| (p[DEPTH_AXIS] - z).abs() <= tol;
            match tag {
                BoundaryTag::Front => on_z(outer.hi[DEPTH_AXIS]),
                BoundaryTag::Back => on_z(outer.lo[DEPTH_AXIS]),
                BoundaryTag::Lateral => {
                    !on_z(outer.hi[DEPTH_AXIS])
                        && !on_z(outer.lo[DEPTH_AXIS])
                        && axes.iter().filter(|&&a| a != DEPTH_AXIS).any(|&a| {
                            (p[a] - outer.lo[a]).abs() <= tol || (p[a] - outer.hi[a]).abs() <= tol
                        })
                }
                BoundaryTag::Gamma => on_z(gz) && omega.contains(&p, tol),
                BoundaryTag::GammaPrime => {
                    on_z(gz)
                        && axes
                            .iter()
                            .filter(|&&a| a != DEPTH_AXIS)
                            .all(|&a| p[a] >= gp_lo[a] - tol && p[a] <= gp_hi[a] + tol)
                }
            }
        });
        BoundaryRegion { tag, nodes }
    }
}

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    t_final: f64,
    tau: f64,
    steps: usize,
}

impl TimeAxis {
    /// Smallest number of uniform steps with `tau <= tau_max`.
    pub fn new(t_final: f64, tau_max: f64) -> Result<Self> {
        if !(t_final > 0.0 && tau_max > 0.0) {
            return Err(Error::Config(format!(
                "time axis needs positive T and step, got T = {t_final}, tau = {tau_max}"
            )));
        }
        let steps = (t_final / tau_max - 1e-9).ceil().max(1.0) as usize;
        Ok(TimeAxis {
            t_final,
            tau: t_final / steps as f64,
            steps,
        })
    }

    /// Time axis for the explicit wave solver on `grid`: the requested step,
    /// reduced if needed to satisfy [`cfl_limit`].
    pub fn for_grid(t_final: f64, grid: &UniformGrid, tau_max: Option<f64>) -> Result<Self> {
        let limit = cfl_limit(grid);
        Self::new(t_final, tau_max.map_or(limit, |t| t.min(limit)))
    }

    /// Same `T` with every step split into `factor` sub-steps.
    pub fn refined(&self, factor: usize) -> Self {
        TimeAxis {
            t_final: self.t_final,
            tau: self.tau / factor as f64,
            steps: self.steps * factor,
        }
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn samples(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau
    }
}

/// Largest admissible time step of the explicit scheme with safety factor
/// one half: `0.5 h_min / sqrt(dim)` for unit background speed.
pub fn cfl_limit(grid: &UniformGrid) -> f64 {
    0.5 * grid.min_spacing() / (grid.dim() as f64).sqrt()
}
