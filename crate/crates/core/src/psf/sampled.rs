//! Sampled point-spread functions: loading, validation, and spectral
//! differentiation.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::psf::grid::{inner_product, Grid, GridFn};
use crate::psf::ASSUMPTION_TOL;

/// Fraction of the spectrum (counted from Nyquist) that the roll-off
/// taper occupies. High-order finite differences are unstable, so
/// derivatives are taken in the frequency domain; the taper suppresses
/// amplified sampling noise near Nyquist.
const TAPER_FRACTION: f64 = 1.0 / 3.0;

/// Maximum admissible spectral-tail fraction before differentiation is
/// refused as under-resolved.
const NYQUIST_TAIL_TOL: f64 = 1e-6;

/// A PSF given by complex samples on a uniform grid.
#[derive(Debug, Clone)]
pub struct SampledPsf {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
    max_order: usize,
    rms_width: f64,
}

impl SampledPsf {
    /// Builds from samples on a uniform grid. The profile must be
    /// normalized within `norm_tol` (it is renormalized exactly
    /// afterwards) and must satisfy the derivative-orthogonality
    /// assumption, checked here up to order 4; violating profiles are
    /// rejected with a diagnostic.
    pub fn new(
        grid: Arc<Grid>,
        values: Vec<Complex64>,
        max_order: usize,
        norm_tol: f64,
    ) -> Result<SampledPsf> {
        if grid.len() != values.len() {
            return Err(Error::InvalidInput(
                "sample count does not match grid".into(),
            ));
        }
        let f = GridFn::new(Arc::clone(&grid), values.clone());
        let norm = f.norm();
        if (norm - 1.0).abs() > norm_tol {
            return Err(Error::InvalidInput(format!(
                "sampled PSF norm {norm:.8} deviates from 1 by more than {norm_tol:.1e}"
            )));
        }
        let values: Vec<Complex64> = values.iter().map(|v| v / norm).collect();

        // rms width of |psi|^2 about its mean position
        let mut mass = 0.0;
        let mut mean = 0.0;
        for ((&x, &w), v) in grid.nodes().iter().zip(grid.weights()).zip(&values) {
            let p = w * v.norm_sqr();
            mass += p;
            mean += p * x;
        }
        mean /= mass;
        let mut var = 0.0;
        for ((&x, &w), v) in grid.nodes().iter().zip(grid.weights()).zip(&values) {
            var += w * v.norm_sqr() * (x - mean) * (x - mean);
        }
        let rms_width = (var / mass).sqrt();

        let psf = SampledPsf {
            grid,
            values,
            max_order,
            rms_width,
        };
        psf.check_nyquist(max_order)?;
        psf.check_assumption(4.min(max_order.saturating_sub(1)))?;
        Ok(psf)
    }

    /// Parses whitespace- or comma-delimited rows `x re [im]`. Rows
    /// starting with `#` are skipped. The x column must be uniform.
    pub fn parse_text(text: &str, max_order: usize, norm_tol: f64) -> Result<SampledPsf> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            if fields.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected `x re [im]`",
                    lineno + 1
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::InvalidInput(format!("line {}: bad number `{s}`", lineno + 1)))
            };
            xs.push(parse(fields[0])?);
            let re = parse(fields[1])?;
            let im = if fields.len() > 2 { parse(fields[2])? } else { 0.0 };
            vs.push(Complex64::new(re, im));
        }
        if xs.len() < 16 {
            return Err(Error::InsufficientGrid {
                need: 16,
                got: xs.len(),
            });
        }
        let h = xs[1] - xs[0];
        if h <= 0.0 || xs.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs()) {
            return Err(Error::InvalidInput(
                "sampled PSF requires a uniform, increasing x column".into(),
            ));
        }
        let half_width = (xs[xs.len() - 1] - xs[0]) / 2.0;
        let center = (xs[0] + xs[xs.len() - 1]) / 2.0;
        let grid = Grid::uniform(center, half_width, xs.len());
        SampledPsf::new(grid, vs, max_order, norm_tol)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn rms_width(&self) -> f64 {
        self.rms_width
    }

    fn spectrum(&self) -> Vec<Complex64> {
        let mut buf = self.values.clone();
        FftPlanner::new()
            .plan_fft_forward(buf.len())
            .process(&mut buf);
        buf
    }

    fn check_nyquist(&self, order: usize) -> Result<()> {
        let spec = self.spectrum();
        let n = spec.len();
        let total: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
        // energy in the tapered band near Nyquist
        let band = ((n as f64) * TAPER_FRACTION / 2.0) as usize;
        let mut tail = 0.0;
        for m in 0..n {
            let k_index = if m <= n / 2 { m } else { n - m };
            if k_index >= n / 2 - band {
                tail += spec[m].norm_sqr();
            }
        }
        let frac = tail / total;
        if frac > NYQUIST_TAIL_TOL {
            return Err(Error::NotDifferentiable { order, tail: frac });
        }
        Ok(())
    }

    fn check_assumption(&self, lmax: usize) -> Result<()> {
        let mut funcs = Vec::with_capacity(lmax + 2);
        for l in 0..=(lmax + 1) {
            funcs.push(self.derivative_on_own_grid(l)?);
        }
        for l in 0..=lmax {
            let cross = inner_product(&funcs[l], &funcs[l + 1])?.norm();
            let scale = funcs[l].norm() * funcs[l + 1].norm();
            if cross > 1e3 * ASSUMPTION_TOL * scale {
                return Err(Error::AssumptionViolated {
                    order: l,
                    residual: cross / scale,
                });
            }
        }
        Ok(())
    }

    fn derivative_on_own_grid(&self, order: usize) -> Result<GridFn> {
        let n = self.grid.len();
        let h = self.grid.spacing();
        let mut spec = self.spectrum();
        let two_pi = 2.0 * std::f64::consts::PI;

        // Adaptive low-pass edge: keep the band holding all but 1e-13 of
        // the signal energy, then roll off. The periodic extension of a
        // non-periodic profile leaves a broadband Gibbs floor that high
        // derivative orders amplify as k^order; cutting just above the
        // signal band suppresses it without touching the signal.
        let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        let mut by_freq = vec![0.0; n / 2 + 1];
        for (m, &p) in power.iter().enumerate() {
            let f = if m <= n / 2 { m } else { n - m };
            by_freq[f] += p;
        }
        let mut cum = 0.0;
        let mut f_sig = n / 2;
        for (f, &p) in by_freq.iter().enumerate() {
            cum += p;
            if cum >= (1.0 - 1e-13) * total {
                f_sig = f;
                break;
            }
        }
        let edge = ((2 * f_sig).max(n / 64) as f64).min(n as f64 / 3.0);
        let stop = (2.0 * edge).min(n as f64 / 2.0);

        for (m, c) in spec.iter_mut().enumerate() {
            // signed frequency in cycles per record -> angular wavenumber
            let f = if m <= n / 2 {
                m as f64
            } else {
                m as f64 - n as f64
            };
            let k = two_pi * f / (n as f64 * h);
            let ik_pow = Complex64::new(0.0, k).powi(order as i32);
            let a = f.abs();
            let taper = if a <= edge {
                1.0
            } else if a >= stop {
                0.0
            } else {
                let t = (a - edge) / (stop - edge);
                0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            };
            *c *= ik_pow * taper / n as f64;
        }
        FftPlanner::new()
            .plan_fft_inverse(spec.len())
            .process(&mut spec);
        Ok(GridFn::new(Arc::clone(&self.grid), spec))
    }

    /// Derivative evaluated at `x - x0` on an arbitrary grid, by
    /// Catmull-Rom interpolation of the spectral derivative. Accuracy is
    /// limited by the sample density; built-in models evaluate
    /// analytically instead.
    pub fn derivative_shifted(&self, order: usize, grid: &Arc<Grid>, x0: f64) -> Result<GridFn> {
        if order > self.max_order {
            return Err(Error::OrderTooHigh {
                order,
                lmax: self.max_order,
            });
        }
        let on_own = self.derivative_on_own_grid(order)?;
        let xs = self.grid.nodes();
        let h = self.grid.spacing();
        let vals = on_own.values();
        let n = xs.len();
        let interp = |x: f64| -> Complex64 {
            let t = (x - xs[0]) / h;
            if t < 0.0 || t > (n - 1) as f64 {
                return Complex64::new(0.0, 0.0);
            }
            let i = (t.floor() as usize).clamp(1, n.saturating_sub(3));
            let frac = t - i as f64;
            let (p0, p1, p2, p3) = (vals[i - 1], vals[i], vals[i + 1], vals[i + 2]);
            let f = Complex64::new(frac, 0.0);
            // Catmull-Rom spline
            0.5 * ((2.0 * p1)
                + (-p0 + p2) * f
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * f * f
                + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * f * f * f)
        };
        Ok(GridFn::from_fn(grid, |x| interp(x - x0)))
    }
}
