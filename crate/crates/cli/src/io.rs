//! CSV and legacy-VTK files.
//!
//! Floats are written in Rust's shortest round-trip form, so a file read
//! back reproduces the values bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cipwave_core::laplace::BoundaryPsi;
use cipwave_core::stage1::Stage1Record;
use cipwave_core::stage2::{CgRecord, MeshRecord, StopReason};
use cipwave_core::wave::TimeTraces;
use cipwave_core::{QuadtreeCoeffMesh, TimeAxis, UniformGrid};

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(f)))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))
}

fn check_header(rdr: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> Result<()> {
    let h = rdr.headers()?;
    if h.iter().ne(expected.iter().copied()) {
        bail!("{}: header {:?}, expected {}", path.display(), h, expected.join(","));
    }
    Ok(())
}

fn num(field: &str, path: &Path, line: u64) -> Result<f64> {
    field
        .parse()
        .with_context(|| format!("{}:{line}: `{field}` is not a number", path.display()))
}

/// Traces as `x,y,z,t,u`, node-major.
pub fn write_traces(path: &Path, t: &TimeTraces) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["x", "y", "z", "t", "u"])?;
    let s = t.axis.samples();
    for (i, p) in t.points.iter().enumerate() {
        for k in 0..s {
            w.write_record(&[
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
                t.axis.time(k).to_string(),
                t.data[i * s + k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads traces recorded at `nodes` of `grid` on `axis`, in that order.
pub fn read_traces(path: &Path, grid: &UniformGrid, nodes: &[usize], axis: TimeAxis) -> Result<TimeTraces> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &["x", "y", "z", "t", "u"])?;
    let mut out = TimeTraces::zeros(grid, nodes, axis);
    let s = axis.samples();
    let tol = 1e-9 * grid.min_spacing();
    let mut count = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row as u64 + 2;
        if count >= out.data.len() {
            bail!("{}:{line}: more samples than {} nodes x {s} steps", path.display(), nodes.len());
        }
        let (i, k) = (count / s, count % s);
        let v: Vec<f64> = rec.iter().map(|f| num(f, path, line)).collect::<Result<_>>()?;
        if v.len() != 5 {
            bail!("{}:{line}: expected 5 fields", path.display());
        }
        let p = out.points[i];
        if (0..3).any(|a| (v[a] - p[a]).abs() > tol) {
            bail!("{}:{line}: point ({}, {}, {}) is not the expected node ({}, {}, {})", path.display(), v[0], v[1], v[2], p[0], p[1], p[2]);
        }
        if (v[3] - axis.time(k)).abs() > 1e-9 * axis.tau() {
            bail!("{}:{line}: time {} does not match step {k} of the time axis", path.display(), v[3]);
        }
        out.data[count] = v[4];
        count += 1;
    }
    if count != out.data.len() {
        bail!("{}: {count} samples, expected {}", path.display(), out.data.len());
    }
    Ok(out)
}

const CELL_HEADER: [&str; 9] = ["cell", "level", "x_lo", "y_lo", "z_lo", "x_hi", "y_hi", "z_hi", "eps"];

/// One row per coefficient cell.
pub fn write_cells(path: &Path, m: &QuadtreeCoeffMesh) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(CELL_HEADER)?;
    for (id, c) in m.cells().iter().enumerate() {
        let (lo, hi) = (m.cell_lo(id), m.cell_hi(id));
        let mut rec = vec![id.to_string(), c.level().to_string()];
        rec.extend(lo.iter().chain(&hi).map(|v| v.to_string()));
        rec.push(c.value.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cell file written by [`write_cells`]. `root` is refined until
/// its cells match the listed ones, so files of adaptively refined meshes
/// over the same root mesh read back exactly.
pub fn read_cells(path: &Path, root: &QuadtreeCoeffMesh) -> Result<QuadtreeCoeffMesh> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &CELL_HEADER)?;
    let mut rows: Vec<([f64; 3], [f64; 3], f64)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row as u64 + 2;
        let v: Vec<f64> = rec.iter().skip(2).map(|f| num(f, path, line)).collect::<Result<_>>()?;
        if v.len() != 7 {
            bail!("{}:{line}: expected 9 fields", path.display());
        }
        rows.push(([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6]));
    }
    let axes = root.domain().active_axes();
    let tol = 1e-9 * root.domain().min_extent();
    let mut mesh = root.clone();
    for _ in 0..=root.max_level() {
        if mesh.len() >= rows.len() {
            break;
        }
        let marked: Vec<usize> = (0..mesh.len())
            .filter(|&c| {
                let (cl, ch) = (mesh.cell_lo(c), mesh.cell_hi(c));
                rows.iter().any(|(rl, rh, _)| {
                    axes.iter().all(|&a| rl[a] >= cl[a] - tol && rh[a] <= ch[a] + tol)
                        && axes.iter().any(|&a| rh[a] - rl[a] < ch[a] - cl[a] - tol)
                })
            })
            .collect();
        if marked.is_empty() {
            break;
        }
        mesh = mesh.refine_cells(&marked)?.mesh;
    }
    if mesh.len() != rows.len() {
        bail!("{}: {} cells do not refine the coefficient mesh ({} cells)", path.display(), rows.len(), mesh.len());
    }
    for (id, (rl, rh, _)) in rows.iter().enumerate() {
        let (lo, hi) = (mesh.cell_lo(id), mesh.cell_hi(id));
        if axes.iter().any(|&a| (rl[a] - lo[a]).abs() > tol || (rh[a] - hi[a]).abs() > tol) {
            bail!("{}:{}: cell bounds do not match cell {id} of the coefficient mesh", path.display(), id + 2);
        }
    }
    let values: Vec<f64> = rows.iter().map(|r| r.2).collect();
    Ok(mesh.with_values(&values)?)
}

pub fn write_stage1_history(path: &Path, h: &[Stage1Record]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["n", "i", "eps_l2", "eps_max", "change", "residual", "solver_iterations"])?;
    for r in h {
        w.write_record(&[
            r.n.to_string(),
            r.i.to_string(),
            r.eps_l2.to_string(),
            r.eps_max.to_string(),
            r.change.to_string(),
            r.solver_residual.to_string(),
            r.solver_iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::GradientSmall => "gradient_small",
        StopReason::Stabilized => "stabilized",
        StopReason::Stall => "stall",
        StopReason::MaxIterations => "max_iterations",
    }
}

pub fn write_stage2_meshes(path: &Path, meshes: &[MeshRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["mesh", "cells", "cg_iters", "value", "grad_norm", "eps_comp", "n_comp", "stop"])?;
    for r in meshes {
        w.write_record(&[
            r.mesh.to_string(),
            r.cells.to_string(),
            r.cg_iters.to_string(),
            r.value.to_string(),
            r.grad_norm.to_string(),
            r.eps_comp.to_string(),
            r.n_comp.to_string(),
            stop_name(r.stop).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cg_history(path: &Path, h: &[CgRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["mesh", "m", "value", "grad_norm", "eps_norm", "alpha"])?;
    for r in h {
        w.write_record(&[
            r.mesh.to_string(),
            r.m.to_string(),
            r.value.to_string(),
            r.grad_norm.to_string(),
            r.eps_norm.to_string(),
            r.alpha.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Boundary data `psi(x_i, s_n)` as `x,y,z,n,psi`.
pub fn write_psi(path: &Path, psi: &BoundaryPsi) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["x", "y", "z", "n", "psi"])?;
    for (n, row) in psi.psi.iter().enumerate() {
        for (p, v) in psi.points.iter().zip(row) {
            w.write_record(&[p[0].to_string(), p[1].to_string(), p[2].to_string(), n.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A table of named columns.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The coefficient sampled on the lattice of finest cells, as legacy-VTK
/// ASCII structured points with cell data.
pub fn write_vtk(path: &Path, m: &QuadtreeCoeffMesh, name: &str) -> Result<()> {
    let d = m.domain();
    let axes = d.active_axes();
    let finest = (0..m.len())
        .map(|c| axes.iter().map(|&a| m.cell_width(c, a)).fold(f64::MAX, f64::min))
        .fold(f64::MAX, f64::min);
    let mut counts = [1usize; 3];
    let mut spacing = [1.0f64; 3];
    for &a in axes {
        counts[a] = (d.extent(a) / finest).round() as usize;
        spacing[a] = d.extent(a) / counts[a] as f64;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    let lo = d.lo();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{name}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    let pts: Vec<usize> = (0..3).map(|a| if axes.contains(&a) { counts[a] + 1 } else { 1 }).collect();
    writeln!(w, "DIMENSIONS {} {} {}", pts[0], pts[1], pts[2])?;
    writeln!(w, "ORIGIN {} {} {}", lo[0], lo[1], lo[2])?;
    writeln!(w, "SPACING {} {} {}", spacing[0], spacing[1], spacing[2])?;
    writeln!(w, "CELL_DATA {}", counts[0] * counts[1] * counts[2])?;
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let idx = [i, j, k];
                let mut p = lo;
                for &a in axes {
                    p[a] = lo[a] + (idx[a] as f64 + 0.5) * spacing[a];
                }
                let c = m.locate(&p).context("lattice point outside the coefficient mesh")?;
                writeln!(w, "{}", m.cells()[c].value)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
