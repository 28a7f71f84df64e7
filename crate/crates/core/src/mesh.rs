//! Piecewise-constant coefficient fields on locally refined quadtree (2-D)
//! or octree (3-D) meshes, and their transfer to and from node grids.
//!
//! Cells are stored as a flat list of leaves. Their bounds are integer
//! multiples of the finest admissible cell size, so containment, face
//! adjacency and the partition property are exact.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{RectDomain, UniformGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct CoeffCell {
    ilo: [u64; 3],
    ihi: [u64; 3],
    level: u8,
    pub value: f64,
}

impl CoeffCell {
    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn int_bounds(&self) -> ([u64; 3], [u64; 3]) {
        (self.ilo, self.ihi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadtreeCoeffMesh {
    domain: RectDomain,
    max_level: u8,
    /// Physical length of one integer unit along each axis.
    unit: [f64; 3],
    cells: Vec<CoeffCell>,
}

/// Outcome of [`QuadtreeCoeffMesh::refine_cells`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub mesh: QuadtreeCoeffMesh,
    /// Marked cells (ids in the input mesh) left alone because they were
    /// already at the maximum level.
    pub skipped_at_max_level: Vec<usize>,
    /// For every cell of the new mesh, the id of the cell it came from.
    pub parent: Vec<usize>,
}

/// Outcome of [`QuadtreeCoeffMesh::grid_to_coeff`].
#[derive(Debug, Clone)]
pub struct Projection {
    pub mesh: QuadtreeCoeffMesh,
    /// Cells without an interior node that took the value of the node
    /// nearest their center.
    pub nearest_fallback: Vec<usize>,
}

/// A face shared by two cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub lower: usize,
    pub upper: usize,
    pub axis: usize,
    pub area: f64,
}

impl QuadtreeCoeffMesh {
    /// Uniform mesh of `roots[a]` root cells along each active axis, all at
    /// level 0 and carrying `value`.
    pub fn uniform(domain: RectDomain, roots: [usize; 3], max_level: u8, value: f64) -> Result<Self> {
        if max_level > 20 {
            return Err(Error::Config(format!("max level {max_level} exceeds 20")));
        }
        let scale = 1u64 << max_level;
        let mut unit = [1.0; 3];
        let mut n = [1u64; 3];
        for &a in domain.active_axes() {
            if roots[a] == 0 {
                return Err(Error::InvalidGeometry("zero root cells on an axis".into()));
            }
            n[a] = roots[a] as u64;
            unit[a] = domain.extent(a) / (roots[a] as u64 * scale) as f64;
        }
        let mut cells = Vec::with_capacity((n[0] * n[1] * n[2]) as usize);
        let active = |a: usize| domain.active_axes().contains(&a);
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let idx = [i, j, k];
                    let (mut ilo, mut ihi) = ([0u64; 3], [1u64; 3]);
                    for a in (0..3).filter(|&a| active(a)) {
                        ilo[a] = idx[a] * scale;
                        ihi[a] = (idx[a] + 1) * scale;
                    }
                    cells.push(CoeffCell {
                        ilo,
                        ihi,
                        level: 0,
                        value,
                    });
                }
            }
        }
        Ok(QuadtreeCoeffMesh {
            domain,
            max_level,
            unit,
            cells,
        })
    }

    /// Uniform mesh whose root cells are at most `root_size` wide.
    pub fn with_root_size(domain: RectDomain, root_size: f64, max_level: u8, value: f64) -> Result<Self> {
        if !(root_size > 0.0) {
            return Err(Error::InvalidGeometry("root cell size must be positive".into()));
        }
        let mut roots = [1usize; 3];
        for &a in domain.active_axes() {
            roots[a] = (domain.extent(a) / root_size - 1e-9).ceil().max(1.0) as usize;
        }
        Self::uniform(domain, roots, max_level, value)
    }

    pub fn domain(&self) -> &RectDomain {
        &self.domain
    }

    pub fn max_level(&self) -> u8 {
        self.max_level
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[CoeffCell] {
        &self.cells
    }

    pub fn values(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.value).collect()
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.cells.len() {
            return Err(Error::Dimension {
                what: "cell values",
                expected: self.cells.len(),
                found: values.len(),
            });
        }
        for (c, &v) in self.cells.iter_mut().zip(values) {
            c.value = v;
        }
        Ok(())
    }

    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_values(values)?;
        Ok(m)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut m = self.clone();
        for c in &mut m.cells {
            c.value = f(c.value);
        }
        m
    }

    pub fn cell_lo(&self, id: usize) -> [f64; 3] {
        let c = &self.cells[id];
        self.to_coord(c.ilo)
    }

    pub fn cell_hi(&self, id: usize) -> [f64; 3] {
        let c = &self.cells[id];
        self.to_coord(c.ihi)
    }

    fn to_coord(&self, i: [u64; 3]) -> [f64; 3] {
        let lo = self.domain.lo();
        let mut p = lo;
        for &a in self.domain.active_axes() {
            p[a] = lo[a] + i[a] as f64 * self.unit[a];
        }
        p
    }

    pub fn cell_center(&self, id: usize) -> [f64; 3] {
        let (lo, hi) = (self.cell_lo(id), self.cell_hi(id));
        let mut c = lo;
        for &a in self.domain.active_axes() {
            c[a] = 0.5 * (lo[a] + hi[a]);
        }
        c
    }

    pub fn cell_width(&self, id: usize, axis: usize) -> f64 {
        let c = &self.cells[id];
        (c.ihi[axis] - c.ilo[axis]) as f64 * self.unit[axis]
    }

    pub fn cell_measure(&self, id: usize) -> f64 {
        self.domain
            .active_axes()
            .iter()
            .map(|&a| self.cell_width(id, a))
            .product()
    }

    /// Cell diameter (length of the diagonal).
    pub fn cell_diameter(&self, id: usize) -> f64 {
        self.domain
            .active_axes()
            .iter()
            .map(|&a| self.cell_width(id, a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn measures(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.cell_measure(i)).collect()
    }

    /// Id of the cell containing `p`. Points on shared faces resolve to the
    /// cell on the upper side, except on the upper domain boundary.
    pub fn locate(&self, p: &[f64; 3]) -> Option<usize> {
        let axes = self.domain.active_axes();
        let lo = self.domain.lo();
        let mut q = [0f64; 3];
        for &a in axes {
            q[a] = (p[a] - lo[a]) / self.unit[a];
        }
        let top = self.top_int();
        self.cells.iter().position(|c| {
            axes.iter().all(|&a| {
                let (l, h) = (c.ilo[a] as f64, c.ihi[a] as f64);
                q[a] >= l && (q[a] < h || (c.ihi[a] == top[a] && q[a] <= h))
            })
        })
    }

    fn top_int(&self) -> [u64; 3] {
        let mut top = [1u64; 3];
        for c in &self.cells {
            for a in 0..3 {
                top[a] = top[a].max(c.ihi[a]);
            }
        }
        top
    }

    /// Replaces each marked cell by its `2^dim` children, which inherit the
    /// parent's value. Cells already at the maximum level are skipped and
    /// reported.
    pub fn refine_cells(&self, marked: &[usize]) -> Result<Refinement> {
        let mut flag = vec![false; self.cells.len()];
        for &m in marked {
            if m >= self.cells.len() {
                return Err(Error::InvalidGeometry(format!(
                    "marked cell {m} does not exist (mesh has {} cells)",
                    self.cells.len()
                )));
            }
            flag[m] = true;
        }
        let axes = self.domain.active_axes();
        let mut cells = Vec::with_capacity(self.cells.len() + marked.len() * 7);
        let mut parent = Vec::with_capacity(cells.capacity());
        let mut skipped = Vec::new();
        for (id, c) in self.cells.iter().enumerate() {
            if !flag[id] {
                cells.push(c.clone());
                parent.push(id);
                continue;
            }
            if c.level >= self.max_level {
                skipped.push(id);
                cells.push(c.clone());
                parent.push(id);
                continue;
            }
            let mut mid = [0u64; 3];
            for &a in axes {
                mid[a] = (c.ilo[a] + c.ihi[a]) / 2;
            }
            let children = 1usize << axes.len();
            for bits in 0..children {
                let (mut ilo, mut ihi) = (c.ilo, c.ihi);
                for (b, &a) in axes.iter().enumerate() {
                    if bits >> b & 1 == 0 {
                        ihi[a] = mid[a];
                    } else {
                        ilo[a] = mid[a];
                    }
                }
                cells.push(CoeffCell {
                    ilo,
                    ihi,
                    level: c.level + 1,
                    value: c.value,
                });
                parent.push(id);
            }
        }
        Ok(Refinement {
            mesh: QuadtreeCoeffMesh {
                domain: self.domain,
                max_level: self.max_level,
                unit: self.unit,
                cells,
            },
            skipped_at_max_level: skipped,
            parent,
        })
    }

    /// Node index box of the grid lying in the closed cell `id`.
    fn node_box(&self, grid: &UniformGrid, id: usize) -> Option<[(usize, usize); 3]> {
        let (lo, hi) = (self.cell_lo(id), self.cell_hi(id));
        let mut r = [(0usize, 0usize); 3];
        for &a in grid.active_axes() {
            r[a] = grid.node_range(a, lo[a], hi[a])?;
        }
        Some(r)
    }

    fn for_each_node(grid: &UniformGrid, r: &[(usize, usize); 3], mut f: impl FnMut(usize, [usize; 3])) {
        for k in r[2].0..=r[2].1 {
            for j in r[1].0..=r[1].1 {
                for i in r[0].0..=r[0].1 {
                    let ijk = [i, j, k];
                    f(grid.index(ijk), ijk);
                }
            }
        }
    }

    /// Per-node count of closed cells containing it, and the sum of their values.
    fn accumulate(&self, grid: &UniformGrid) -> (Vec<u32>, Vec<f64>) {
        let mut count = vec![0u32; grid.len()];
        let mut sum = vec![0.0; grid.len()];
        for id in 0..self.cells.len() {
            if let Some(r) = self.node_box(grid, id) {
                let v = self.cells[id].value;
                Self::for_each_node(grid, &r, |n, _| {
                    count[n] += 1;
                    sum[n] += v;
                });
            }
        }
        (count, sum)
    }

    /// Nodal values: each node takes the mean value of all cells whose
    /// closed box contains it (one cell for interior nodes, several on faces).
    pub fn coeff_to_grid(&self, grid: &UniformGrid) -> Result<Vec<f64>> {
        let (count, sum) = self.accumulate(grid);
        count
            .iter()
            .zip(&sum)
            .enumerate()
            .map(|(n, (&c, &s))| {
                if c == 0 {
                    let p = grid.point(n);
                    Err(Error::InvalidGeometry(format!(
                        "grid node ({}, {}, {}) lies outside every coefficient cell",
                        p[0], p[1], p[2]
                    )))
                } else {
                    Ok(s / c as f64)
                }
            })
            .collect()
    }

    /// Like [`coeff_to_grid`](Self::coeff_to_grid) on a grid that may extend
    /// beyond the mesh: nodes outside every cell take `background`.
    pub fn embed_in(&self, grid: &UniformGrid, background: f64) -> Vec<f64> {
        let (count, sum) = self.accumulate(grid);
        count
            .iter()
            .zip(&sum)
            .map(|(&c, &s)| if c == 0 { background } else { s / c as f64 })
            .collect()
    }

    /// Transpose of the linear map `cell values -> nodal values` of
    /// [`coeff_to_grid`](Self::coeff_to_grid), applied to a nodal vector.
    /// Nodes outside the mesh are ignored.
    pub fn transpose_to_cells(&self, grid: &UniformGrid, nodal: &[f64]) -> Result<Vec<f64>> {
        if nodal.len() != grid.len() {
            return Err(Error::Dimension {
                what: "nodal field",
                expected: grid.len(),
                found: nodal.len(),
            });
        }
        let (count, _) = self.accumulate(grid);
        let mut out = vec![0.0; self.cells.len()];
        for (id, o) in out.iter_mut().enumerate() {
            if let Some(r) = self.node_box(grid, id) {
                Self::for_each_node(grid, &r, |n, _| *o += nodal[n] / count[n] as f64);
            }
        }
        Ok(out)
    }

    /// Cell values from a nodal field: the mean over nodes strictly inside
    /// each cell. Cells without an interior node take the value of the node
    /// nearest their center and are reported.
    pub fn grid_to_coeff(&self, values: &[f64], grid: &UniformGrid) -> Result<Projection> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                what: "nodal field",
                expected: grid.len(),
                found: values.len(),
            });
        }
        let axes = grid.active_axes();
        let mut mesh = self.clone();
        let mut fallback = Vec::new();
        for id in 0..self.cells.len() {
            let (lo, hi) = (self.cell_lo(id), self.cell_hi(id));
            let mut sum = 0.0;
            let mut n = 0usize;
            if let Some(r) = self.node_box(grid, id) {
                Self::for_each_node(grid, &r, |node, ijk| {
                    let strictly_inside = axes.iter().all(|&a| {
                        let x = grid.coord(a, ijk[a]);
                        let tol = 1e-9 * grid.spacing()[a];
                        x > lo[a] + tol && x < hi[a] - tol
                    });
                    if strictly_inside {
                        sum += values[node];
                        n += 1;
                    }
                });
            }
            mesh.cells[id].value = if n > 0 {
                sum / n as f64
            } else {
                let c = self.cell_center(id);
                if !grid.domain().contains(&c, 1e-12) {
                    return Err(Error::InvalidGeometry(format!(
                        "cell {id} lies outside the grid"
                    )));
                }
                let mut ijk = [0usize; 3];
                for &a in axes {
                    ijk[a] = grid.nearest_index(a, c[a]);
                }
                fallback.push(id);
                values[grid.index(ijk)]
            };
        }
        Ok(Projection {
            mesh,
            nearest_fallback: fallback,
        })
    }

    /// Values of `other` (a mesh over the same domain) sampled at the cell
    /// centers of `self`.
    pub fn sample_from(&self, other: &QuadtreeCoeffMesh) -> Result<Self> {
        let mut m = self.clone();
        for id in 0..self.cells.len() {
            let c = self.cell_center(id);
            let src = other.locate(&c).ok_or_else(|| {
                Error::InvalidGeometry(format!("cell {id} center is outside the source mesh"))
            })?;
            m.cells[id].value = other.cells[src].value;
        }
        Ok(m)
    }

    /// All faces of positive measure shared by two cells.
    pub fn faces(&self) -> Vec<Face> {
        let axes = self.domain.active_axes();
        let mut faces = Vec::new();
        for &a in axes {
            let mut by_lo: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (id, c) in self.cells.iter().enumerate() {
                by_lo.entry(c.ilo[a]).or_default().push(id);
            }
            for (id, c) in self.cells.iter().enumerate() {
                let Some(cands) = by_lo.get(&c.ihi[a]) else {
                    continue;
                };
                for &other in cands {
                    let o = &self.cells[other];
                    let mut area = 1.0;
                    let mut touching = true;
                    for &b in axes.iter().filter(|&&b| b != a) {
                        let l = c.ilo[b].max(o.ilo[b]);
                        let h = c.ihi[b].min(o.ihi[b]);
                        if h <= l {
                            touching = false;
                            break;
                        }
                        area *= (h - l) as f64 * self.unit[b];
                    }
                    if touching {
                        faces.push(Face {
                            lower: id,
                            upper: other,
                            axis: a,
                            area,
                        });
                    }
                }
            }
        }
        faces
    }

    /// Checks that the cells tile the domain without gaps or overlaps.
    pub fn check_partition(&self) -> Result<()> {
        let axes = self.domain.active_axes();
        let mut total = 0u128;
        for c in &self.cells {
            if c.level > self.max_level {
                return Err(Error::InvalidGeometry("cell above max level".into()));
            }
            total += axes
                .iter()
                .map(|&a| (c.ihi[a] - c.ilo[a]) as u128)
                .product::<u128>();
        }
        let top = self.top_int();
        let expected: u128 = axes.iter().map(|&a| top[a] as u128).product();
        if total != expected {
            return Err(Error::InvalidGeometry(format!(
                "cells cover {total} units, domain has {expected}"
            )));
        }
        for (i, c) in self.cells.iter().enumerate() {
            for o in &self.cells[i + 1..] {
                if axes
                    .iter()
                    .all(|&a| c.ilo[a].max(o.ilo[a]) < c.ihi[a].min(o.ihi[a]))
                {
                    return Err(Error::InvalidGeometry("overlapping cells".into()));
                }
            }
        }
        Ok(())
    }
}
