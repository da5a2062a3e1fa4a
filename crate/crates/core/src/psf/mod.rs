//! Point-spread functions: analytic derivative evaluation, quadrature
//! overlaps, and the series convergence-radius diagnostic.
//!
//! Built-in models are the real Gaussian profile
//! `psi(x) = (2 pi sigma^2)^{-1/4} exp(-x^2 / 4 sigma^2)` and the even
//! profile `sinc(x/sigma)` normalized to unit L2 mass on the whole line.
//! Both satisfy the derivative-orthogonality assumption
//! `<psi^(l), psi^(l+1)> = 0` exactly by parity. Sampled profiles are
//! loaded from text and differentiated spectrally.

pub mod grid;
pub mod sampled;

use std::sync::{Arc, OnceLock};


use crate::error::{Error, Result};
pub use grid::{inner_product, inner_product_window, Grid, GridFn};
pub use sampled::SampledPsf;

/// Default grid half-width in units of sigma.
pub const DEFAULT_HALF_WIDTH_SIGMAS: f64 = 10.0;
/// Default number of grid nodes.
pub const DEFAULT_GRID_NODES: usize = 2048;
/// Default maximum supported derivative order for built-in models.
pub const DEFAULT_LMAX: usize = 16;
/// Relative tolerance adopted for the derivative-orthogonality check.
pub const ASSUMPTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum PsfKind {
    Gaussian { sigma: f64 },
    Sinc { sigma: f64 },
    Sampled(SampledPsf),
}

/// A normalized 1D point-spread function with derivative evaluation.
#[derive(Debug, Clone)]
pub struct PsfModel {
    kind: PsfKind,
    lmax: usize,
    grid: Arc<Grid>,
}

impl PsfModel {
    pub fn gaussian(sigma: f64) -> PsfModel {
        Self::gaussian_with(sigma, DEFAULT_HALF_WIDTH_SIGMAS, DEFAULT_GRID_NODES)
    }

    pub fn gaussian_with(sigma: f64, half_width_sigmas: f64, nodes: usize) -> PsfModel {
        assert!(sigma > 0.0);
        PsfModel {
            kind: PsfKind::Gaussian { sigma },
            lmax: DEFAULT_LMAX,
            grid: Grid::uniform(0.0, half_width_sigmas * sigma, nodes),
        }
    }

    /// Even profile `sinc(x/sigma)/sqrt(pi sigma)`.
    ///
    /// The 1/x tails carry about 1% of the L2 mass beyond the default
    /// 10-sigma grid. Normalization and the orthogonality assumption are
    /// exact on the whole line; widen the grid for tighter quadrature.
    pub fn sinc(sigma: f64) -> PsfModel {
        Self::sinc_with(sigma, DEFAULT_HALF_WIDTH_SIGMAS, DEFAULT_GRID_NODES)
    }

    pub fn sinc_with(sigma: f64, half_width_sigmas: f64, nodes: usize) -> PsfModel {
        assert!(sigma > 0.0);
        PsfModel {
            kind: PsfKind::Sinc { sigma },
            lmax: DEFAULT_LMAX,
            grid: Grid::uniform(0.0, half_width_sigmas * sigma, nodes),
        }
    }

    /// Wraps an already-validated sampled profile.
    pub fn from_sampled(s: SampledPsf) -> PsfModel {
        let grid = Arc::clone(s.grid());
        let lmax = s.max_order();
        PsfModel {
            kind: PsfKind::Sampled(s),
            lmax,
            grid,
        }
    }

    /// The model's length scale: sigma for built-ins, the rms width of
    /// `|psi|^2` for sampled profiles.
    pub fn sigma(&self) -> f64 {
        match &self.kind {
            PsfKind::Gaussian { sigma } | PsfKind::Sinc { sigma } => *sigma,
            PsfKind::Sampled(s) => s.rms_width(),
        }
    }

    pub fn kind(&self) -> &PsfKind {
        &self.kind
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    /// `d^order psi / dx^order` sampled on `grid`.
    pub fn eval_derivative(&self, order: usize, grid: &Arc<Grid>) -> Result<GridFn> {
        self.eval_derivative_shifted(order, grid, 0.0)
    }

    /// `d^order psi / dx^order` evaluated at `x - x0`.
    pub fn eval_derivative_shifted(
        &self,
        order: usize,
        grid: &Arc<Grid>,
        x0: f64,
    ) -> Result<GridFn> {
        if order > self.lmax {
            return Err(Error::OrderTooHigh {
                order,
                lmax: self.lmax,
            });
        }
        match &self.kind {
            PsfKind::Gaussian { sigma } => {
                let s = *sigma;
                let norm = (2.0 * std::f64::consts::PI * s * s).powf(-0.25);
                let scale = norm * (-0.5 / s).powi(order as i32);
                Ok(GridFn::from_real_fn(grid, move |x| {
                    let u = (x - x0) / (2.0 * s);
                    scale * hermite(order, u) * (-u * u).exp()
                }))
            }
            PsfKind::Sinc { sigma } => {
                let s = *sigma;
                let norm = (std::f64::consts::PI * s).powf(-0.5) * s.powi(-(order as i32));
                Ok(GridFn::from_real_fn(grid, move |x| {
                    norm * sinc_derivative(order, (x - x0) / s)
                }))
            }
            PsfKind::Sampled(sampled) => sampled.derivative_shifted(order, grid, x0),
        }
    }

    /// The PSF itself on its own grid.
    pub fn psi(&self) -> GridFn {
        self.eval_derivative(0, &self.grid).expect("order 0")
    }

    /// Quadrature L2 norm of the order-`order` derivative.
    pub fn derivative_norm(&self, order: usize) -> Result<f64> {
        Ok(self.eval_derivative(order, &self.grid)?.norm())
    }

    /// `delta k = ||d psi/dx||`, the mode bandwidth entering every
    /// second-moment information limit.
    pub fn delta_k(&self) -> Result<f64> {
        self.derivative_norm(1)
    }

    /// Lower bound `R0` on the convergence radius of centroid expansions:
    /// `R0 = (sup_{1<=l<=lmax} (||psi^(l)|| / l!)^{1/l})^{-1}`.
    ///
    /// Monotonically non-increasing in `lmax`. Callers must keep scene
    /// sizes below `R0` before trusting any series output.
    pub fn convergence_radius_lower_bound(&self, lmax: usize) -> Result<f64> {
        if lmax > self.lmax {
            return Err(Error::OrderTooHigh {
                order: lmax,
                lmax: self.lmax,
            });
        }
        if lmax == 0 {
            return Err(Error::InvalidInput("lmax must be >= 1".into()));
        }
        let mut sup = f64::NEG_INFINITY;
        for l in 1..=lmax {
            let norm = self.derivative_norm(l)?;
            let log_ratio = (norm.ln() - ln_factorial(l)) / l as f64;
            sup = sup.max(log_ratio);
        }
        Ok((-sup).exp())
    }

    /// Checks `|<psi^(l), psi^(l+1)>| / (||psi^(l)|| ||psi^(l+1)||)` for
    /// all `l < lmax` against `tol` (relative).
    pub fn validate_assumption(&self, lmax: usize, tol: f64) -> Result<()> {
        let mut funcs = Vec::with_capacity(lmax + 1);
        for l in 0..=lmax {
            funcs.push(self.eval_derivative(l, &self.grid)?);
        }
        for l in 0..lmax {
            let cross = inner_product(&funcs[l], &funcs[l + 1])?.norm();
            let scale = funcs[l].norm() * funcs[l + 1].norm();
            if cross > tol * scale {
                return Err(Error::AssumptionViolated {
                    order: l,
                    residual: cross / scale,
                });
            }
        }
        Ok(())
    }
}

/// A separable 2D PSF `psi(x, y) = psi_x(x) psi_y(y)`.
///
/// Separability with factors obeying the 1D derivative-orthogonality
/// assumption guarantees the 2D cross-orthogonality condition, so the
/// cross-correlation `r` vanishes.
#[derive(Debug, Clone)]
pub struct Psf2d {
    pub fx: PsfModel,
    pub fy: PsfModel,
}

/// Bandwidths and cross-correlation of a 2D PSF.
#[derive(Debug, Clone, Copy)]
pub struct DeltaK2d {
    pub dkx: f64,
    pub dky: f64,
    /// `r = <d_x psi, d_y psi> / (dkx dky)`, in (-1, 1).
    pub r: f64,
}

impl Psf2d {
    pub fn separable(fx: PsfModel, fy: PsfModel) -> Psf2d {
        Psf2d { fx, fy }
    }

    pub fn gaussian(sigma_x: f64, sigma_y: f64) -> Psf2d {
        Psf2d {
            fx: PsfModel::gaussian(sigma_x),
            fy: PsfModel::gaussian(sigma_y),
        }
    }

    /// Isotropic Gaussian, the circularly-symmetric case.
    pub fn gaussian_isotropic(sigma: f64) -> Psf2d {
        Self::gaussian(sigma, sigma)
    }

    pub fn delta_k(&self) -> Result<DeltaK2d> {
        let dkx = self.fx.delta_k()?;
        let dky = self.fy.delta_k()?;
        // <d_x psi, d_y psi> = <psi_x', psi_x> <psi_y, psi_y'> for a
        // separable profile; both factors vanish under the assumption.
        let cx = inner_product(
            &self.fx.eval_derivative(1, self.fx.grid())?,
            &self.fx.eval_derivative(0, self.fx.grid())?,
        )?;
        let cy = inner_product(
            &self.fy.eval_derivative(0, self.fy.grid())?,
            &self.fy.eval_derivative(1, self.fy.grid())?,
        )?;
        let r = (cx * cy).re / (dkx * dky);
        Ok(DeltaK2d { dkx, dky, r })
    }
}

/// Physicists' Hermite polynomial `H_n(u)` by recurrence.
pub fn hermite(n: usize, u: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0 * u,
        _ => {
            let mut hm = 1.0;
            let mut h = 2.0 * u;
            for k in 1..n {
                let next = 2.0 * u * h - 2.0 * k as f64 * hm;
                hm = h;
                h = next;
            }
            h
        }
    }
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

pub fn factorial(n: usize) -> f64 {
    (2..=n).map(|k| k as f64).product::<f64>().max(1.0)
}

/// `d^l sinc(t) / dt^l` through the band-limited representation
/// `sinc(t) = int_0^1 cos(k t) dk`, so the l-th derivative is
/// `int_0^1 k^l cos(k t + l pi/2) dk`, evaluated by fixed Gauss-Legendre
/// quadrature. Stable at every order, unlike the trig-polynomial closed
/// form which cancels catastrophically near t = 0.
pub fn sinc_derivative(l: usize, t: f64) -> f64 {
    let (nodes, weights) = gauss_legendre_unit();
    let phase = l % 4;
    let mut acc = 0.0;
    for (&k, &w) in nodes.iter().zip(weights.iter()) {
        let arg = k * t;
        let c = match phase {
            0 => arg.cos(),
            1 => -arg.sin(),
            2 => -arg.cos(),
            _ => arg.sin(),
        };
        acc += w * k.powi(l as i32) * c;
    }
    acc
}

const GL_POINTS: usize = 256;

fn gauss_legendre_unit() -> (&'static [f64], &'static [f64]) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (n, w) = RULE.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(GL_POINTS);
        // map [-1, 1] -> [0, 1]
        let n01 = nodes.iter().map(|&x| 0.5 * (x + 1.0)).collect();
        let w01 = weights.iter().map(|&w| 0.5 * w).collect();
        (n01, w01)
    });
    (n, w)
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (n, w) = gauss_legendre(8);
        // exact for degree <= 15
        let int_x14: f64 = n.iter().zip(&w).map(|(&x, &w)| w * x.powi(14)).sum();
        assert_relative_eq!(int_x14, 2.0 / 15.0, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_value_at_origin() {
        let psf = PsfModel::gaussian(1.0);
        let g = Grid::uniform(0.0, 1.0, 3);
        let f = psf.eval_derivative(0, &g).unwrap();
        // (2 pi)^{-1/4} at x = 0
        assert_relative_eq!(f.values()[1].re, TWO_PI.powf(-0.25), max_relative = 1e-14);
    }

    #[test]
    fn gaussian_first_derivative_vanishes_at_origin() {
        let psf = PsfModel::gaussian(1.0);
        let g = Grid::uniform(0.0, 1.0, 3);
        let f = psf.eval_derivative(1, &g).unwrap();
        assert!(f.values()[1].norm() < 1e-300);
    }

    #[test]
    fn gaussian_second_derivative_at_origin() {
        // d^2/dx^2 (2 pi)^{-1/4} e^{-x^2/4} at 0 is -(2 pi)^{-1/4} / 2,
        // confirmed by central differences below.
        let psf = PsfModel::gaussian(1.0);
        let g = Grid::uniform(0.0, 1.0, 3);
        let f = psf.eval_derivative(2, &g).unwrap();
        assert_relative_eq!(f.values()[1].re, -TWO_PI.powf(-0.25) / 2.0, max_relative = 1e-13);

        let h = 1e-4;
        let gh = Grid::uniform(0.0, 2.0 * h, 5);
        let v = psf.eval_derivative(0, &gh).unwrap();
        let fd = (v.values()[4].re - 2.0 * v.values()[2].re + v.values()[0].re) / (4.0 * h * h);
        assert_relative_eq!(fd, f.values()[1].re, max_relative = 1e-6);
    }

    #[test]
    fn gaussian_is_normalized_on_grid() {
        let psf = PsfModel::gaussian(1.0);
        let p = psf.psi();
        assert_relative_eq!(inner_product(&p, &p).unwrap().re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_orthogonality_holds_for_builtins() {
        for psf in [PsfModel::gaussian(1.0), PsfModel::sinc(1.0)] {
            psf.validate_assumption(8, ASSUMPTION_TOL).unwrap();
        }
    }

    #[test]
    fn gaussian_delta_k_is_half_inverse_sigma() {
        // ||psi'||^2 = 1/(4 sigma^2), by the analytic integral
        // int x^2 |psi|^2 / (4 sigma^4) dx = 1/(4 sigma^2).
        assert_relative_eq!(PsfModel::gaussian(1.0).delta_k().unwrap(), 0.5, max_relative = 1e-10);
        assert_relative_eq!(PsfModel::gaussian(2.0).delta_k().unwrap(), 0.25, max_relative = 1e-10);
    }

    #[test]
    fn gaussian_psi_orthogonal_to_first_derivative() {
        let psf = PsfModel::gaussian(1.0);
        let p0 = psf.eval_derivative(0, psf.grid()).unwrap();
        let p1 = psf.eval_derivative(1, psf.grid()).unwrap();
        assert!(inner_product(&p0, &p1).unwrap().norm() < 1e-14);
    }

    #[test]
    fn convergence_radius_gaussian() {
        let psf = PsfModel::gaussian(1.0);
        // Single-term bound: R0 = 1/||psi'|| = 2 sigma.
        assert_relative_eq!(psf.convergence_radius_lower_bound(1).unwrap(), 2.0, max_relative = 1e-10);
        // Supremum over higher orders stays at l = 1 for a Gaussian, and
        // the bound never drops below sigma.
        let r12 = psf.convergence_radius_lower_bound(12).unwrap();
        assert!(r12 >= 1.0);
        // monotone non-increasing in lmax
        let mut prev = f64::INFINITY;
        for l in 1..=12 {
            let r = psf.convergence_radius_lower_bound(l).unwrap();
            assert!(r <= prev + 1e-12);
            prev = r;
        }
    }

    #[test]
    fn convergence_radius_scales_with_sigma() {
        let r1 = PsfModel::gaussian(1.0).convergence_radius_lower_bound(12).unwrap();
        let rh = PsfModel::gaussian(0.5).convergence_radius_lower_bound(12).unwrap();
        assert_relative_eq!(rh, 0.5 * r1, max_relative = 1e-8);
        assert!(rh >= 0.5);
    }

    #[test]
    fn order_too_high_rejected() {
        let psf = PsfModel::gaussian(1.0);
        assert!(matches!(
            psf.eval_derivative(17, psf.grid()),
            Err(Error::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn sinc_derivative_matches_taylor_at_small_t() {
        // sinc(t) = 1 - t^2/6 + t^4/120 - ...
        assert_relative_eq!(sinc_derivative(0, 1e-3), 1.0 - 1e-6 / 6.0, max_relative = 1e-12);
        // sinc''(0) = -1/3
        assert_relative_eq!(sinc_derivative(2, 0.0), -1.0 / 3.0, max_relative = 1e-12);
        // sinc'(t) ~ -t/3 for small t
        assert_relative_eq!(sinc_derivative(1, 1e-4), -1e-4 / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn sinc_derivative_matches_closed_form_away_from_origin() {
        let t: f64 = 3.7;
        assert_relative_eq!(sinc_derivative(0, t), t.sin() / t, max_relative = 1e-13);
        assert_relative_eq!(
            sinc_derivative(1, t),
            t.cos() / t - t.sin() / (t * t),
            max_relative = 1e-12
        );
    }

    #[test]
    fn sinc_delta_k_near_band_limit_value() {
        // Exact over the whole line: ||psi'|| = 1/(sqrt(3) sigma). The
        // 10-sigma truncation of the 1/x tails costs a few percent; a
        // 4x wider grid recovers most of it.
        let dk = PsfModel::sinc(1.0).delta_k().unwrap();
        assert_relative_eq!(dk, 1.0 / 3f64.sqrt(), max_relative = 6e-2);
        let dk_wide = PsfModel::sinc_with(1.0, 40.0, 8192).delta_k().unwrap();
        assert_relative_eq!(dk_wide, 1.0 / 3f64.sqrt(), max_relative = 2e-2);
    }

    #[test]
    fn separable_gaussian_cross_correlation_vanishes() {
        let p = Psf2d::gaussian(1.0, 2.0);
        let dk = p.delta_k().unwrap();
        assert_relative_eq!(dk.dkx, 0.5, max_relative = 1e-10);
        assert_relative_eq!(dk.dky, 0.25, max_relative = 1e-10);
        assert!(dk.r.abs() < 1e-12);
    }

    #[test]
    fn doubling_grid_density_leaves_inner_products_stable() {
        let coarse = PsfModel::gaussian_with(1.0, 10.0, 2048);
        let fine = PsfModel::gaussian_with(1.0, 10.0, 4096);
        for l in 0..=4usize {
            let a = coarse.derivative_norm(l).unwrap();
            let b = fine.derivative_norm(l).unwrap();
            assert!((a - b).abs() < 1e-8 * b.max(1.0), "order {l}: {a} vs {b}");
        }
    }
}
