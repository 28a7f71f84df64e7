//! Pseudo-frequency objects: finite-horizon Laplace transforms of traces,
//! the normalized transform `w = u~ / f~`, `v = ln(w) / s^2`, its
//! s-derivative `q`, the tail `V = v(., s_hi)` and the boundary data `psi`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{TimeAxis, DEPTH_AXIS};
use crate::wave::{SourceSpec, TimeTraces};

/// Descending pseudo frequencies `s_0 = s_hi > s_1 > ... > s_N = s_lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoFreqAxis {
    s_lo: f64,
    s_hi: f64,
    layers: usize,
}

impl PseudoFreqAxis {
    pub fn new(s_lo: f64, s_hi: f64, layers: usize) -> Result<Self> {
        if !(s_lo > 0.0 && s_hi > s_lo && layers >= 1) {
            return Err(Error::Config(alloc::format!(
                "pseudo-frequency window needs 0 < s_lo < s_hi and N >= 1, got [{s_lo}, {s_hi}], N = {layers}"
            )));
        }
        Ok(PseudoFreqAxis { s_lo, s_hi, layers })
    }

    pub fn s_lo(&self) -> f64 {
        self.s_lo
    }

    pub fn s_hi(&self) -> f64 {
        self.s_hi
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn h(&self) -> f64 {
        (self.s_hi - self.s_lo) / self.layers as f64
    }

    /// `s_n` for `n = 0..=N`.
    pub fn s(&self, n: usize) -> f64 {
        if n == self.layers {
            self.s_lo
        } else {
            self.s_hi - n as f64 * self.h()
        }
    }

    pub fn samples(&self) -> Vec<f64> {
        (0..=self.layers).map(|n| self.s(n)).collect()
    }

    /// Offset of the central difference used for `psi`.
    pub fn psi_step(&self) -> f64 {
        0.25 * self.h()
    }

    /// Pseudo frequencies at which transforms are needed by [`compute_psi`]:
    /// `s_n - ds, s_n + ds` for every `n`, in that order.
    pub fn psi_samples(&self) -> Vec<f64> {
        let ds = self.psi_step();
        (0..=self.layers)
            .flat_map(|n| [self.s(n) - ds, self.s(n) + ds])
            .collect()
    }
}

/// Trapezoidal approximation of `int_0^T u(t) exp(-s t) dt`.
pub fn laplace_transform(trace: &[f64], axis: &TimeAxis, s: f64) -> f64 {
    let k_last = trace.len().saturating_sub(1);
    let tau = axis.tau();
    let mut acc = 0.0;
    for (k, &u) in trace.iter().enumerate() {
        let w = if k == 0 || k == k_last { 0.5 } else { 1.0 };
        acc += w * u * (-s * axis.time(k)).exp();
    }
    acc * tau
}

/// Transform of the sine burst, `omega (1 - exp(-s t')) / (s^2 + omega^2)`.
pub fn f_tilde(s: f64, src: &SourceSpec) -> Result<f64> {
    let w = src.omega;
    let one_minus = -(-(s * src.burst_end())).exp_m1();
    let value = src.amplitude * w * one_minus / (s * s + w * w);
    if value.abs() < 1e-12 {
        return Err(Error::DegenerateWaveform { s, value });
    }
    Ok(value)
}

/// `w0(x, s) = exp(-s |z - z0|) / (2 s)`, the transform-domain solution in
/// the homogeneous medium.
pub fn w0_reference(x: &[f64; 3], s: f64, z0: f64) -> f64 {
    (-s * (x[DEPTH_AXIS] - z0).abs()).exp() / (2.0 * s)
}

/// `ln w0 / s^2`.
pub fn v0_reference(x: &[f64; 3], s: f64, z0: f64) -> f64 {
    let d = (x[DEPTH_AXIS] - z0).abs();
    (-s * d - (2.0 * s).ln()) / (s * s)
}

/// `d/ds [ln w0 / s^2] = d / s^2 - 1 / s^3 + 2 ln(2 s) / s^3`.
pub fn q0_reference(x: &[f64; 3], s: f64, z0: f64) -> f64 {
    let d = (x[DEPTH_AXIS] - z0).abs();
    d / (s * s) - 1.0 / (s * s * s) + 2.0 * (2.0 * s).ln() / (s * s * s)
}

/// `w = u~ / f~` pointwise.
pub fn compute_w(transforms: &[f64], src: &SourceSpec, s: f64) -> Result<Vec<f64>> {
    let f = f_tilde(s, src)?;
    Ok(transforms.iter().map(|u| u / f).collect())
}

/// `v = ln(w) / s^2`, rejecting nonpositive `w` with its location.
pub fn compute_v(w: &[f64], s: f64, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    log_over_s2(w, s, points, "w")
}

fn log_over_s2(w: &[f64], s: f64, points: &[[f64; 3]], what: &'static str) -> Result<Vec<f64>> {
    w.iter()
        .enumerate()
        .map(|(i, &value)| {
            if value > 0.0 && value.is_finite() {
                Ok(value.ln() / (s * s))
            } else {
                Err(Error::Positivity {
                    what,
                    value,
                    location: points.get(i).copied().unwrap_or([f64::NAN; 3]),
                    s,
                })
            }
        })
        .collect()
}

/// `q = dv/ds` at every sample of `s` (ascending or descending) by central
/// differences, one-sided second order at the ends. `v[j][i]` is node `i`
/// at `s[j]`.
pub fn compute_q(v: &[Vec<f64>], s: &[f64]) -> Result<Vec<Vec<f64>>> {
    let m = s.len();
    if m < 3 || v.len() != m {
        return Err(Error::Dimension {
            what: "s-samples for q",
            expected: m.max(3),
            found: v.len(),
        });
    }
    let n = v[0].len();
    let mut q = vec![vec![0.0; n]; m];
    for j in 0..m {
        let (a, b, c, wa, wb, wc) = if j == 0 {
            let (h1, h2) = (s[1] - s[0], s[2] - s[0]);
            // Derivative at s[0] of the parabola through three samples.
            (0, 1, 2, -(h1 + h2) / (h1 * h2), h2 / (h1 * (h2 - h1)), -h1 / (h2 * (h2 - h1)))
        } else if j == m - 1 {
            let (h1, h2) = (s[m - 2] - s[m - 1], s[m - 3] - s[m - 1]);
            (m - 1, m - 2, m - 3, -(h1 + h2) / (h1 * h2), h2 / (h1 * (h2 - h1)), -h1 / (h2 * (h2 - h1)))
        } else {
            let (hm, hp) = (s[j] - s[j - 1], s[j + 1] - s[j]);
            (j - 1, j, j + 1, -hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp)))
        };
        for i in 0..n {
            q[j][i] = wa * v[a][i] + wb * v[b][i] + wc * v[c][i];
        }
    }
    Ok(q)
}

/// Tail `V = ln w(., s_hi) / s_hi^2`.
pub fn compute_tail(w_hi: &[f64], s_hi: f64, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    log_over_s2(w_hi, s_hi, points, "w at s_hi")
}

/// Boundary data of the layer equations on a set of boundary nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPsi {
    pub points: Vec<[f64; 3]>,
    /// `psi[n][i] = psi(x_i, s_n)` for `n = 0..=N`.
    pub psi: Vec<Vec<f64>>,
    /// `psi_n[n - 1][i]` for `n = 1..=N`.
    pub psi_n: Vec<Vec<f64>>,
}

impl BoundaryPsi {
    /// Layer averages `psi_n = (psi(s_n) + psi(s_{n-1})) / 2`.
    pub fn from_psi(points: Vec<[f64; 3]>, psi: Vec<Vec<f64>>) -> Self {
        let psi_n = psi
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect())
            .collect();
        BoundaryPsi { points, psi, psi_n }
    }

    /// Homogeneous-medium `psi` at `points`, differenced like the data.
    pub fn homogeneous(points: Vec<[f64; 3]>, axis: &PseudoFreqAxis, z0: f64) -> Self {
        let ds = axis.psi_step();
        let psi = (0..=axis.layers())
            .map(|n| {
                let s = axis.s(n);
                points
                    .iter()
                    .map(|p| (v0_reference(p, s + ds, z0) - v0_reference(p, s - ds, z0)) / (2.0 * ds))
                    .collect()
            })
            .collect();
        Self::from_psi(points, psi)
    }

    /// Replaces entries `at` with the matching entries of `other`.
    pub fn overwrite(&mut self, at: &[usize], other: &BoundaryPsi, from: &[usize]) {
        for (&i, &j) in at.iter().zip(from) {
            for (dst, src) in self.psi.iter_mut().zip(&other.psi) {
                dst[i] = src[j];
            }
            for (dst, src) in self.psi_n.iter_mut().zip(&other.psi_n) {
                dst[i] = src[j];
            }
        }
    }
}

/// `phi = (int g e^{-st}) / f~(s)` and `psi = d/ds [ln phi / s^2]` by a
/// central difference with step [`PseudoFreqAxis::psi_step`].
pub fn compute_psi(g: &TimeTraces, src: &SourceSpec, axis: &PseudoFreqAxis) -> Result<BoundaryPsi> {
    let ds = axis.psi_step();
    let mut psi = Vec::with_capacity(axis.layers() + 1);
    for n in 0..=axis.layers() {
        let s = axis.s(n);
        let mut row = Vec::with_capacity(g.len());
        let (fm, fp) = (f_tilde(s - ds, src)?, f_tilde(s + ds, src)?);
        for i in 0..g.len() {
            let tr = g.trace(i);
            let at = |sv: f64, f: f64| -> Result<f64> {
                let phi = laplace_transform(tr, &g.axis, sv) / f;
                if phi > 0.0 && phi.is_finite() {
                    Ok(phi.ln() / (sv * sv))
                } else {
                    Err(Error::Positivity {
                        what: "phi",
                        value: phi,
                        location: g.points[i],
                        s: sv,
                    })
                }
            };
            row.push((at(s + ds, fp)? - at(s - ds, fm)?) / (2.0 * ds));
        }
        psi.push(row);
    }
    Ok(BoundaryPsi::from_psi(g.points.clone(), psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    /// Composite Gauss-Legendre (5 points) on `n` panels.
    fn gauss(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let x = [0.0, 0.538_469_310_105_683_1, -0.538_469_310_105_683_1, 0.906_179_845_938_664, -0.906_179_845_938_664];
        let w = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for p in 0..n {
            let c = a + (p as f64 + 0.5) * h;
            for k in 0..5 {
                acc += w[k] * f(c + 0.5 * h * x[k]);
            }
        }
        acc * 0.5 * h
    }

    #[test]
    fn axis_samples_descend() {
        let ax = PseudoFreqAxis::new(6.0, 8.0, 10).unwrap();
        assert!((ax.h() - 0.2).abs() < 1e-15);
        assert_eq!(ax.s(0), 8.0);
        assert_eq!(ax.s(10), 6.0);
        assert!(PseudoFreqAxis::new(0.0, 8.0, 10).is_err());
    }

    #[test]
    fn transform_of_zero_and_exponential() {
        let ax = TimeAxis::new(20.0, 1e-3).unwrap();
        assert_eq!(laplace_transform(&vec![0.0; ax.samples()], &ax, 1.0), 0.0);
        let tr: Vec<f64> = (0..ax.samples()).map(|k| (-ax.time(k)).exp()).collect();
        let exact = (1.0 - (-40.0f64).exp()) / 2.0;
        assert!((laplace_transform(&tr, &ax, 1.0) - exact).abs() < 1e-6);
    }

    #[test]
    fn burst_transform_matches_closed_form() {
        let src = SourceSpec::new(0.1, 30.0);
        let ax = TimeAxis::new(1.2, 1e-5).unwrap();
        let tr: Vec<f64> = (0..ax.samples()).map(|k| crate::wave::waveform_f(ax.time(k), &src)).collect();
        let exact = f_tilde(7.0, &src).unwrap();
        // Trapezoid error against the kink at t' is O(tau^2).
        assert!((laplace_transform(&tr, &ax, 7.0) - exact).abs() < 1e-8);
        let quad = gauss(|t| (30.0 * t).sin() * (-7.0 * t).exp(), 0.0, 2.0 * PI / 30.0, 40);
        assert!((quad - exact).abs() < 1e-10);
    }

    #[test]
    fn f_tilde_small_s_and_sign_scan() {
        let src = SourceSpec::new(0.1, 30.0);
        let s = 1e-6;
        let quad = gauss(|t| (30.0 * t).sin() * (-s * t).exp(), 0.0, src.burst_end(), 40);
        assert!((f_tilde(s, &src).unwrap() - quad).abs() < 1e-12);
        for k in 0..=200 {
            let s = 6.0 + 2.0 * k as f64 / 200.0;
            let q = gauss(|t| (30.0 * t).sin() * (-s * t).exp(), 0.0, src.burst_end(), 40);
            let f = f_tilde(s, &src).unwrap();
            assert!(q > 0.0 && f > 0.0);
            assert!((f - q).abs() < 1e-10);
        }
        let mut zero = src;
        zero.amplitude = 0.0;
        assert!(matches!(f_tilde(7.0, &zero), Err(Error::DegenerateWaveform { .. })));
    }

    #[test]
    fn w_is_ratio_invariant() {
        let mut src = SourceSpec::new(0.1, 30.0);
        let f = f_tilde(7.0, &src).unwrap();
        let w = compute_w(&[3.0 * f, f], &src, 7.0).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        src.amplitude = 2.0;
        let w2 = compute_w(&[6.0 * f, 2.0 * f], &src, 7.0).unwrap();
        assert!((w2[0] - w[0]).abs() < 1e-14);
    }

    #[test]
    fn w0_values_and_ode_residual() {
        let x = [0.0, 0.0, 0.3];
        assert!((w0_reference(&x, 2.0, 0.3) - 0.25).abs() < 1e-15);
        let y = [0.0, 0.0, 0.1];
        assert!((w0_reference(&y, 7.0, 0.3) - (-1.4f64).exp() / 14.0).abs() < 1e-15);
        let dz = 1e-4;
        for k in 1..20 {
            let z = -0.5 + 0.03 * k as f64;
            let f = |z: f64| w0_reference(&[0.0, 0.0, z], 7.0, 0.3);
            let d2 = (f(z + dz) - 2.0 * f(z) + f(z - dz)) / (dz * dz);
            assert!((d2 - 49.0 * f(z)).abs() < 1e-6);
        }
    }

    #[test]
    fn v_q_and_tail_of_homogeneous_w() {
        let ax = PseudoFreqAxis::new(6.0, 8.0, 40).unwrap();
        let pts = [[0.0, 0.0, 0.0], [0.0, 0.0, -0.1]];
        let s = ax.samples();
        let v: Vec<Vec<f64>> = s
            .iter()
            .map(|&sv| {
                let w: Vec<f64> = pts.iter().map(|p| w0_reference(p, sv, 0.2)).collect();
                compute_v(&w, sv, &pts).unwrap()
            })
            .collect();
        for (j, &sv) in s.iter().enumerate() {
            for (i, p) in pts.iter().enumerate() {
                assert!((v[j][i] - v0_reference(p, sv, 0.2)).abs() < 1e-14);
            }
        }
        let q = compute_q(&v, &s).unwrap();
        for (j, &sv) in s.iter().enumerate() {
            for (i, p) in pts.iter().enumerate() {
                assert!((q[j][i] - q0_reference(p, sv, 0.2)).abs() < 1e-4);
            }
        }
        let w_hi: Vec<f64> = pts.iter().map(|p| w0_reference(p, 8.0, 0.2)).collect();
        let tail = compute_tail(&w_hi, 8.0, &pts).unwrap();
        assert!((tail[1] - (-8.0 * 0.3 - 16.0f64.ln()) / 64.0).abs() < 1e-15);
        assert_eq!(compute_tail(&[1.0, 1.0], 8.0, &pts).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn q_exact_on_quadratics() {
        let s = [8.0, 7.5, 7.0, 6.5, 6.0];
        let v: Vec<Vec<f64>> = s.iter().map(|&x| vec![0.0, 2.0 * x * x - 3.0 * x + 1.0]).collect();
        let q = compute_q(&v, &s).unwrap();
        for (j, &x) in s.iter().enumerate() {
            assert_eq!(q[j][0], 0.0);
            assert!((q[j][1] - (4.0 * x - 3.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn q_integrates_back_to_v() {
        // -int_s^{s_hi} q + V reproduces v for quadratic v.
        let ax = PseudoFreqAxis::new(6.0, 8.0, 10).unwrap();
        let s = ax.samples();
        let vf = |x: f64| 0.3 * x * x - x + 2.0;
        let v: Vec<Vec<f64>> = s.iter().map(|&x| vec![vf(x)]).collect();
        let q = compute_q(&v, &s).unwrap();
        let tail = vf(8.0);
        let mut acc = 0.0;
        for n in 1..s.len() {
            acc += 0.5 * ax.h() * (q[n][0] + q[n - 1][0]);
            assert!((tail - acc - vf(s[n])).abs() < 1e-10);
        }
    }

    #[test]
    fn nonpositive_w_is_located() {
        let pts = [[0.0, 0.0, 0.0], [0.5, 0.0, -0.25]];
        match compute_v(&[1.0, -2.0], 7.0, &pts) {
            Err(Error::Positivity { location, value, .. }) => {
                assert_eq!(location, pts[1]);
                assert_eq!(value, -2.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(compute_tail(&[0.0, 1.0], 8.0, &pts).is_err());
        assert!(compute_v(&[f64::NAN, 1.0], 8.0, &pts).is_err());
    }

    #[test]
    fn psi_of_constant_phi() {
        // phi = c for all s: psi = -2 ln(c) / s^3.
        let src = SourceSpec::new(0.1, 30.0);
        let ax_t = TimeAxis::new(1.2, 1e-3).unwrap();
        let axis = PseudoFreqAxis::new(6.0, 8.0, 10).unwrap();
        // Build a trace whose transform is c f~(s): the burst itself scaled by c.
        let c = 0.3;
        let mut tr = TimeTraces::zeros(
            &crate::geometry::build_grid(crate::RectDomain::square_2d(0.0, 1.0, 0.0, 1.0).unwrap(), 0.5).unwrap(),
            &[0],
            ax_t,
        );
        for k in 0..ax_t.samples() {
            tr.trace_mut(0)[k] = c * crate::wave::waveform_f(ax_t.time(k), &src);
        }
        let psi = compute_psi(&tr, &src, &axis).unwrap();
        for n in 0..=10 {
            let s = axis.s(n);
            assert!((psi.psi[n][0] - (-2.0 * c.ln() / (s * s * s))).abs() < 2e-4);
        }
    }

    #[test]
    fn layer_average_exact_on_linear_psi() {
        let axis = PseudoFreqAxis::new(6.0, 8.0, 4).unwrap();
        let psi: Vec<Vec<f64>> = axis.samples().iter().map(|&s| vec![2.0 * s - 1.0]).collect();
        let b = BoundaryPsi::from_psi(vec![[0.0; 3]], psi);
        for n in 1..=4 {
            let mid = 0.5 * (axis.s(n) + axis.s(n - 1));
            assert!((b.psi_n[n - 1][0] - (2.0 * mid - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn homogeneous_psi_matches_analytic_derivative() {
        let axis = PseudoFreqAxis::new(6.0, 8.0, 10).unwrap();
        let pts = vec![[0.1, 0.0, 0.04], [0.0, 0.0, -0.1]];
        let b = BoundaryPsi::homogeneous(pts.clone(), &axis, 0.08);
        for n in 0..=10 {
            for (i, p) in pts.iter().enumerate() {
                assert!((b.psi[n][i] - q0_reference(p, axis.s(n), 0.08)).abs() < 1e-5);
            }
        }
    }
}
