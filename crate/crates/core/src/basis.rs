//! Orthonormal measurement modes built from PSF derivatives.
//!
//! The modes `b^(l)` orthonormalize the centroid derivatives
//! `d_a(x) = (d/dX)^a psi(x - X)`, so `b^(l)` is orthogonal to every
//! `d_k` with `k < l`. For a Gaussian PSF they are the Hermite-Gaussian
//! modes. The overlap coefficients `q_l = <b^(l), d_l> / l!` drive every
//! closed-form information limit; the sign of each mode is fixed so that
//! `q_l > 0`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::psf::{factorial, inner_product, GridFn, PsfModel};

/// Residual-ratio threshold below which derivatives are treated as
/// numerically dependent (after sigma^l / l! scaling).
const DEPENDENCE_TOL: f64 = 1e-10;
/// Allowed imaginary residue on q_l.
const Q_IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct DerivativeBasis {
    center: f64,
    modes: Vec<GridFn>,
    /// `coeff[a][l] = <b^(l), d_a>`: expansion of the a-th centroid
    /// derivative over the modes (zero for l > a by construction).
    coeff: Vec<Vec<Complex64>>,
    q: Vec<f64>,
    psf: PsfModel,
}

impl DerivativeBasis {
    /// Gram-Schmidt basis about `center` from derivatives up to `lmax`.
    pub fn build(psf: &PsfModel, lmax: usize, center: f64) -> Result<DerivativeBasis> {
        if lmax > psf.lmax() {
            return Err(Error::OrderTooHigh {
                order: lmax,
                lmax: psf.lmax(),
            });
        }
        let grid = psf.grid().clone();
        let sigma = psf.sigma();

        // d_a = (d/dX)^a psi(x - X) = (-1)^a psi^(a)(x - center),
        // pre-scaled by sigma^a / a! to tame the factorial growth.
        let mut scaled: Vec<GridFn> = Vec::with_capacity(lmax + 1);
        for a in 0..=lmax {
            let mut d = psf.eval_derivative_shifted(a, &grid, center)?;
            let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
            d.scale(Complex64::new(sign * sigma.powi(a as i32) / factorial(a), 0.0));
            scaled.push(d);
        }

        let even_hint = psf_even_on_grid(psf, &scaled[0]);

        // Modified Gram-Schmidt with one re-orthogonalization pass.
        let mut modes: Vec<GridFn> = Vec::with_capacity(lmax + 1);
        for l in 0..=lmax {
            let mut v = scaled[l].clone();
            let input_norm = v.norm();
            for _ in 0..2 {
                for b in &modes {
                    let c = inner_product(b, &v)?;
                    v.axpy(-c, b)?;
                }
            }
            let res = v.norm();
            if res <= DEPENDENCE_TOL * input_norm {
                return Err(Error::LinearDependence {
                    order: l,
                    residual: res / input_norm,
                });
            }
            v.scale(Complex64::new(1.0 / res, 0.0));
            if even_hint {
                purify_parity(&mut v, l)?;
            }
            // phase convention: <b^(l), d_l> real positive, so q_l > 0
            let overlap = inner_product(&v, &scaled[l])?;
            let phase = overlap / overlap.norm();
            v.scale(phase.conj());
            modes.push(v);
        }

        // expansion coefficients of the (unscaled) derivatives
        let mut coeff = vec![vec![Complex64::new(0.0, 0.0); lmax + 1]; lmax + 1];
        let mut q = vec![0.0; lmax + 1];
        for a in 0..=lmax {
            let unscale = factorial(a) / sigma.powi(a as i32);
            for l in 0..=a {
                let c = inner_product(&modes[l], &scaled[a])? * unscale;
                coeff[a][l] = c;
            }
            let qa = coeff[a][a] / factorial(a);
            if qa.im.abs() > Q_IMAG_TOL * qa.norm().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "q_{a} has imaginary residue {:.2e}",
                    qa.im
                )));
            }
            q[a] = qa.re;
        }

        Ok(DerivativeBasis {
            center,
            modes,
            coeff,
            q,
            psf: psf.clone(),
        })
    }

    pub fn lmax(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn psf(&self) -> &PsfModel {
        &self.psf
    }

    pub fn mode(&self, l: usize) -> &GridFn {
        &self.modes[l]
    }

    pub fn modes(&self) -> &[GridFn] {
        &self.modes
    }

    /// `q_l = <b^(l), d_l> / l!`, positive by convention.
    pub fn q(&self, l: usize) -> f64 {
        self.q[l]
    }

    pub fn q_vector(&self) -> &[f64] {
        &self.q
    }

    /// `<b^(l), d_a>` where `d_a` is the a-th centroid derivative
    /// (zero for `l > a` by construction). Both indices must be within
    /// the construction order; higher-order overlaps are quadrature
    /// territory.
    pub fn deriv_coeff(&self, a: usize, l: usize) -> Complex64 {
        assert!(
            a <= self.lmax() && l <= self.lmax(),
            "derivative order {a} (mode {l}) beyond the basis order {}",
            self.lmax()
        );
        if l <= a {
            self.coeff[a][l]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// Overlap `<b^(l), psi(. - x0)>` of a mode with a displaced PSF.
    pub fn mode_psf_overlap(&self, l: usize, x0: f64) -> Result<Complex64> {
        let shifted = self.psf.eval_derivative_shifted(0, self.psf.grid(), x0)?;
        inner_product(&self.modes[l], &shifted)
    }

    /// Gram matrix of the modes (orthonormality diagnostic).
    pub fn gram_matrix(&self) -> Result<Vec<Vec<Complex64>>> {
        let n = self.modes.len();
        let mut g = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = inner_product(&self.modes[i], &self.modes[j])?;
            }
        }
        Ok(g)
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_residual(&self) -> Result<f64> {
        let g = self.gram_matrix()?;
        let mut worst = 0.0f64;
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).norm());
            }
        }
        Ok(worst)
    }
}

fn psf_even_on_grid(psf: &PsfModel, psi: &GridFn) -> bool {
    if !psf.grid().is_symmetric() {
        return false;
    }
    let vals = psi.values();
    let n = vals.len();
    let scale = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    (0..n / 2).all(|i| (vals[i] - vals[n - 1 - i]).norm() <= 1e-12 * scale)
}

/// Projects onto the parity sector (-1)^l via the exact node map, keeping
/// even-PSF mode parities node-exact.
fn purify_parity(v: &mut GridFn, l: usize) -> Result<()> {
    let refl = v.reflected()?;
    let sign = if l.is_multiple_of(2) { 1.0 } else { -1.0 };
    for (a, b) in v.values_mut().iter_mut().zip(refl.values()) {
        *a = 0.5 * (*a + sign * b);
    }
    let n = v.norm();
    v.scale(Complex64::new(1.0 / n, 0.0));
    Ok(())
}

/// Tensor-product basis for separable 2D PSFs: `b^(k,l) = b_x^(k) b_y^(l)`
/// with `q_{kl} = q_k q_l`.
#[derive(Debug, Clone)]
pub struct Basis2D {
    pub bx: DerivativeBasis,
    pub by: DerivativeBasis,
}

impl Basis2D {
    pub fn separable(bx: DerivativeBasis, by: DerivativeBasis) -> Result<Basis2D> {
        Ok(Basis2D { bx, by })
    }

    pub fn lmax(&self) -> (usize, usize) {
        (self.bx.lmax(), self.by.lmax())
    }

    pub fn q(&self, k: usize, l: usize) -> f64 {
        self.bx.q(k) * self.by.q(l)
    }

    /// `<b^(k,l), d_(a,b)>` as a product of 1D coefficients.
    pub fn deriv_coeff(&self, a: (usize, usize), kl: (usize, usize)) -> Complex64 {
        self.bx.deriv_coeff(a.0, kl.0) * self.by.deriv_coeff(a.1, kl.1)
    }

    pub fn mode_psf_overlap(&self, kl: (usize, usize), x0: f64, y0: f64) -> Result<Complex64> {
        Ok(self.bx.mode_psf_overlap(kl.0, x0)? * self.by.mode_psf_overlap(kl.1, y0)?)
    }
}

/// Analytic Hermite-Gaussian mode
/// `(2 pi sigma^2)^{-1/4} (2^n n!)^{-1/2} H_n(x / (sigma sqrt 2)) e^{-x^2/(4 sigma^2)}`,
/// the closed-form reference the Gaussian Gram-Schmidt modes must match.
pub fn hermite_gaussian(n: usize, sigma: f64, x: f64) -> f64 {
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25)
        / (2f64.powi(n as i32) * factorial(n)).sqrt();
    let u = x / (sigma * std::f64::consts::SQRT_2);
    norm * crate::psf::hermite(n, u) * (-x * x / (4.0 * sigma * sigma)).exp()
}
