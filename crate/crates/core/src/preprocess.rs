//! Preparation of measured traces for the reconstruction: shift to the
//! propagated plane, extraction of the target signal, calibration and
//! immersion into simulated data on the rest of the boundary.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{TimeAxis, UniformGrid, DEPTH_AXIS};
use crate::scenario::rms;
use crate::wave::TimeTraces;

/// Where the reference (target-free) traces come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceSource {
    /// A synthetic run of the scenario without inclusions.
    Synthetic,
    /// No subtraction.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    /// Distance from the measurement plane to the propagated plane.
    pub offset: f64,
    pub calibration: f64,
    pub reference: ReferenceSource,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            offset: 0.0,
            calibration: 1.0,
            reference: ReferenceSource::Synthetic,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.calibration > 0.0 && self.calibration.is_finite()) {
            bad.push("calibration > 0");
        }
        if !(self.offset >= 0.0) {
            bad.push("offset >= 0");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("preprocessing settings violate {}", bad.join(", "))))
        }
    }
}

/// First time at which `|u|` exceeds five times the RMS of the first
/// `window` samples. A floor of `1e-9 max|u|` keeps noiseless traces from
/// triggering on roundoff.
pub fn estimate_first_arrival(trace: &[f64], axis: &TimeAxis, window: usize) -> Result<f64> {
    let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::NoArrival);
    }
    let w = window.min(trace.len());
    let threshold = (5.0 * rms(&trace[..w])).max(1e-9 * peak);
    trace
        .iter()
        .position(|v| v.abs() > threshold)
        .map(|k| axis.time(k))
        .ok_or(Error::NoArrival)
}

/// Catmull-Rom cubic through the samples, zero outside the record.
fn cubic_at(samples: &[f64], x: f64) -> f64 {
    let n = samples.len() as isize;
    let get = |i: isize| if i < 0 || i >= n { 0.0 } else { samples[i as usize] };
    let i = x.floor() as isize;
    let t = x - i as f64;
    let (p0, p1, p2, p3) = (get(i - 1), get(i), get(i + 1), get(i + 2));
    p1 + 0.5
        * t
        * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)))
}

/// Moves every trace to a plane `offset` closer to the targets by the time
/// advance `u(t) -> u(t + offset)` (unit background speed).
pub fn propagate_traces(traces: &TimeTraces, offset: f64) -> Result<TimeTraces> {
    if !(offset >= 0.0) {
        return Err(Error::Config(alloc::format!("propagation offset must be >= 0, got {offset}")));
    }
    let axis = traces.axis;
    let shift = offset / axis.tau();
    if offset >= axis.t_final() {
        return Err(Error::Truncation {
            shift: offset,
            available: axis.t_final(),
        });
    }
    let mut out = traces.clone();
    if offset == 0.0 {
        return Ok(out);
    }
    for i in 0..traces.len() {
        let src = traces.trace(i);
        for (k, dst) in out.trace_mut(i).iter_mut().enumerate() {
            *dst = cubic_at(src, k as f64 + shift);
        }
    }
    Ok(out)
}

pub fn extract_target_signal(total: &TimeTraces, reference: &TimeTraces) -> Result<TimeTraces> {
    if !total.same_sampling(reference) {
        return Err(Error::Dimension {
            what: "reference traces",
            expected: total.data.len(),
            found: reference.data.len(),
        });
    }
    let mut out = total.clone();
    for (o, r) in out.data.iter_mut().zip(&reference.data) {
        *o -= r;
    }
    Ok(out)
}

pub fn calibrate(traces: &TimeTraces, factor: f64) -> TimeTraces {
    traces.map(|v| v * factor)
}

/// Factor that makes the peak amplitude of `measured` equal to that of
/// `simulated` (traces of a calibrating object).
pub fn calibration_factor(measured: &TimeTraces, simulated: &TimeTraces) -> Result<f64> {
    let peak = |t: &TimeTraces| t.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (pm, ps) = (peak(measured), peak(simulated));
    if pm == 0.0 {
        return Err(Error::NoArrival);
    }
    Ok(ps / pm)
}

/// Width of the seam band outside `Gamma`, in nodes.
pub const SEAM_NODES: usize = 3;

/// Combines traces measured on `Gamma` with simulated traces on the whole
/// surface `surface` (nodes of `grid`). Measured nodes keep their values; in
/// a band of [`SEAM_NODES`] nodes outside `Gamma` on the same plane the
/// seam mismatch of the nearest `Gamma` node is added with a cosine decay.
pub fn immerse_data(
    measured: &TimeTraces,
    simulated: &TimeTraces,
    grid: &UniformGrid,
    surface: &[usize],
) -> Result<TimeTraces> {
    if measured.axis.samples() != simulated.axis.samples() {
        return Err(Error::Dimension {
            what: "immersion samples",
            expected: simulated.axis.samples(),
            found: measured.axis.samples(),
        });
    }
    let mut pos = vec![usize::MAX; grid.len()];
    for (i, &n) in simulated.nodes.iter().enumerate() {
        if n >= grid.len() || pos[n] != usize::MAX {
            return Err(Error::InvalidGeometry("simulated traces repeat a node or leave the grid".into()));
        }
        pos[n] = i;
    }
    if surface.len() != simulated.len() || surface.iter().any(|&n| n >= grid.len() || pos[n] == usize::MAX) {
        return Err(Error::InvalidGeometry("simulated traces do not cover the measurement surface".into()));
    }
    let mut mpos = vec![usize::MAX; grid.len()];
    for (i, &n) in measured.nodes.iter().enumerate() {
        if n >= grid.len() || pos[n] == usize::MAX {
            return Err(Error::InvalidGeometry("measured node outside the measurement surface".into()));
        }
        if mpos[n] != usize::MAX {
            return Err(Error::InvalidGeometry("measured traces repeat a node".into()));
        }
        mpos[n] = i;
    }
    let mut out = simulated.clone();
    if measured.is_empty() {
        return Ok(out);
    }
    // Index box of the measured plane.
    let lateral: Vec<usize> = grid.active_axes().iter().copied().filter(|&a| a != DEPTH_AXIS).collect();
    let first = grid.ijk(measured.nodes[0]);
    let plane = first[DEPTH_AXIS];
    let (mut lo, mut hi) = (first, first);
    for &n in &measured.nodes {
        let ijk = grid.ijk(n);
        if ijk[DEPTH_AXIS] != plane {
            return Err(Error::InvalidGeometry("measured nodes must lie on one plane".into()));
        }
        for &a in &lateral {
            lo[a] = lo[a].min(ijk[a]);
            hi[a] = hi[a].max(ijk[a]);
        }
    }
    let samples = out.axis.samples();
    for (i, &n) in simulated.nodes.iter().enumerate() {
        let ijk = grid.ijk(n);
        if mpos[n] != usize::MAX {
            out.trace_mut(i).copy_from_slice(measured.trace(mpos[n]));
            continue;
        }
        if ijk[DEPTH_AXIS] != plane {
            continue;
        }
        let mut near = ijk;
        let mut d = 0usize;
        for &a in &lateral {
            near[a] = ijk[a].clamp(lo[a], hi[a]);
            d = d.max(ijk[a].abs_diff(near[a]));
        }
        if d == 0 || d > SEAM_NODES {
            continue;
        }
        let nn = grid.index(near);
        let (m, s) = (mpos[nn], pos[nn]);
        if m == usize::MAX {
            continue;
        }
        let w = 0.5 * (1.0 + (core::f64::consts::PI * d as f64 / (SEAM_NODES + 1) as f64).cos());
        for k in 0..samples {
            let jump = measured.sample(m, k) - simulated.sample(s, k);
            out.data[i * samples + k] += w * jump;
        }
    }
    Ok(out)
}
