//! Outcome probabilities three ways: exact weak-source overlaps, moment
//! series (weak in the photon number, or thermal to all orders in the
//! photon number and second order in the image size), and a Monte Carlo
//! coherent-state oracle.

pub mod mc;
pub mod wick;

use num_complex::Complex64;

use crate::basis::DerivativeBasis;
use crate::error::{Error, Result};
use crate::povm::{Dressing, ModeRef, Outcome, OutcomeOp, Povm, PovmContext};
use crate::psf::{factorial, inner_product, inner_product_window, GridFn};
use crate::scene::{MomentVector, MomentVector2d, Scene};

/// Relative tail threshold for photon-number sums.
const THERMAL_TAIL_TOL: f64 = 1e-12;
const THERMAL_MAX_TERMS: usize = 20_000;

/// Named-outcome probabilities plus the bucket absorbing the rest.
#[derive(Debug, Clone)]
pub struct ProbTable {
    pub labels: Vec<String>,
    pub p: Vec<f64>,
    pub bucket: f64,
}

impl ProbTable {
    fn from_named(labels: Vec<String>, p: Vec<f64>) -> ProbTable {
        let sum: f64 = p.iter().sum();
        ProbTable {
            labels,
            p,
            bucket: 1.0 - sum,
        }
    }

    /// All probabilities including the bucket.
    pub fn with_bucket(&self) -> (Vec<String>, Vec<f64>) {
        let mut labels = self.labels.clone();
        labels.push("bucket".into());
        let mut p = self.p.clone();
        p.push(self.bucket);
        (labels, p)
    }
}

fn frame_guard(scene: &Scene, basis: &DerivativeBasis) -> Result<()> {
    let (cx, _) = scene.centroid();
    let r0 = basis
        .psf()
        .convergence_radius_lower_bound(basis.lmax().min(basis.psf().lmax()))?;
    if (cx - basis.center()).abs() > 0.25 * r0 {
        return Err(Error::CentroidFrameMismatch {
            scene: cx,
            frame: basis.center(),
        });
    }
    Ok(())
}

/// Exact weak-source probabilities
/// `P(n) = (1-eps) <0|E|0> + eps sum_j gamma_j <psi_j|E|psi_j>`,
/// by direct overlap quadrature with no truncation in the image size.
/// Dressed outcomes keep only their single-photon component, which is
/// exact at first order in `eps`.
pub fn weak_exact_probs(scene: &Scene, povm: &Povm) -> Result<ProbTable> {
    let eps = scene.epsilon;
    let mut labels = Vec::with_capacity(povm.outcomes.len());
    let mut p = Vec::with_capacity(povm.outcomes.len());
    match (&povm.context, scene.dimension) {
        (PovmContext::OneD(basis), 1) => {
            frame_guard(scene, basis)?;
            let psf = basis.psf();
            let shifted: Vec<GridFn> = scene
                .x
                .iter()
                .map(|&xj| psf.eval_derivative_shifted(0, psf.grid(), xj))
                .collect::<Result<_>>()?;
            for o in &povm.outcomes {
                let mut prob = (1.0 - eps) * vacuum_weight(o);
                if single_photon_visible(o) {
                    for (g, sj) in scene.gamma.iter().zip(&shifted) {
                        prob += eps * g * one_photon_weight_1d(o, basis, sj)?;
                    }
                }
                labels.push(o.label.clone());
                p.push(prob);
            }
        }
        (PovmContext::TwoD(basis), 2) => {
            let psfx = basis.bx.psf();
            let psfy = basis.by.psf();
            let sx: Vec<GridFn> = scene
                .x
                .iter()
                .map(|&xj| psfx.eval_derivative_shifted(0, psfx.grid(), xj))
                .collect::<Result<_>>()?;
            let sy: Vec<GridFn> = scene
                .y
                .iter()
                .map(|&yj| psfy.eval_derivative_shifted(0, psfy.grid(), yj))
                .collect::<Result<_>>()?;
            for o in &povm.outcomes {
                let mut prob = (1.0 - eps) * vacuum_weight(o);
                if single_photon_visible(o) {
                    for j in 0..scene.len() {
                        let w = one_photon_weight_2d(o, basis, &sx[j], &sy[j])?;
                        prob += eps * scene.gamma[j] * w;
                    }
                }
                labels.push(o.label.clone());
                p.push(prob);
            }
        }
        _ => {
            return Err(Error::InvalidInput(
                "scene and measurement dimensions disagree".into(),
            ))
        }
    }
    Ok(ProbTable::from_named(labels, p))
}

fn vacuum_weight(o: &Outcome) -> f64 {
    match (&o.op, o.dressing) {
        (OutcomeOp::ParitySector { sx, sy }, Dressing::None | Dressing::Summed) => {
            let wx = (1.0 + *sx as f64) / 2.0;
            match sy {
                Some(sy) => wx * (1.0 + *sy as f64) / 2.0,
                None => wx,
            }
        }
        _ => 0.0,
    }
}

fn single_photon_visible(o: &Outcome) -> bool {
    !matches!(o.dressing, Dressing::PerCount(k) if k > 0)
}

fn projector_overlap_1d(
    coeffs: &[(ModeRef, f64)],
    basis: &DerivativeBasis,
    f: &GridFn,
) -> Result<Complex64> {
    let mut amp = Complex64::new(0.0, 0.0);
    for (m, c) in coeffs {
        let l = match m {
            ModeRef::One(l) => *l,
            ModeRef::Two(..) => return Err(Error::InvalidInput("2D mode in 1D frame".into())),
        };
        amp += c * inner_product(basis.mode(l), f)?;
    }
    Ok(amp)
}

fn one_photon_weight_1d(o: &Outcome, basis: &DerivativeBasis, psi_j: &GridFn) -> Result<f64> {
    match &o.op {
        OutcomeOp::ModeProjector { coeffs } => {
            Ok(projector_overlap_1d(coeffs, basis, psi_j)?.norm_sqr())
        }
        OutcomeOp::ParitySector { sx, .. } => {
            let norm = inner_product(psi_j, psi_j)?.re;
            let refl = psi_j.reflected()?;
            let cross = inner_product(psi_j, &refl)?.re;
            Ok(0.5 * (norm + *sx as f64 * cross))
        }
        OutcomeOp::Pixel { lo, hi } => Ok(inner_product_window(psi_j, psi_j, *lo, *hi)?.re),
    }
}

fn one_photon_weight_2d(
    o: &Outcome,
    basis: &crate::basis::Basis2D,
    fx: &GridFn,
    fy: &GridFn,
) -> Result<f64> {
    match &o.op {
        OutcomeOp::ModeProjector { coeffs } => {
            let mut amp = Complex64::new(0.0, 0.0);
            for (m, c) in coeffs {
                let (k, l) = match m {
                    ModeRef::Two(k, l) => (*k, *l),
                    ModeRef::One(_) => {
                        return Err(Error::InvalidInput("1D mode in 2D frame".into()))
                    }
                };
                amp += c * inner_product(basis.bx.mode(k), fx)? * inner_product(basis.by.mode(l), fy)?;
            }
            Ok(amp.norm_sqr())
        }
        OutcomeOp::ParitySector { sx, sy } => {
            let py = sy.ok_or_else(|| Error::InvalidInput("2D parity needs sy".into()))?;
            let nx = inner_product(fx, fx)?.re;
            let ny = inner_product(fy, fy)?.re;
            let rx = inner_product(fx, &fx.reflected()?)?.re;
            let ry = inner_product(fy, &fy.reflected()?)?.re;
            Ok(0.25 * (nx + *sx as f64 * rx) * (ny + py as f64 * ry))
        }
        OutcomeOp::Pixel { .. } => Err(Error::UnsupportedBase(
            "pixel outcomes are 1D-only".into(),
        )),
    }
}

/// Moment-series coefficients `p_k(n)` of the single-photon probability
/// of each outcome: `P(n) = (1-eps)<0|E|0> + eps sum_k p_k(n) m_k / k!`
/// with `m_k` the signed moment radicands about the measurement frame.
#[derive(Debug, Clone)]
pub struct ProbSeries {
    pub kmax: usize,
    /// Convergence-radius lower bound of the expansion.
    pub r0: f64,
    pub outcomes: Vec<OutcomeSeries>,
    /// `tail_bound[k] = sum_{a+b=k} ||d_a|| ||d_b|| / (a! b!)`, the
    /// coefficient bound used for remainder estimates (index kmax+1).
    pub tail_bound: f64,
    pub povm_label: String,
}

#[derive(Debug, Clone)]
pub struct OutcomeSeries {
    pub label: String,
    pub vacuum: f64,
    /// `p[k]`, k = 0..=kmax
    pub p: Vec<f64>,
}

impl OutcomeSeries {
    /// Index of the first nonvanishing coefficient, if any.
    pub fn leading_order(&self, tol: f64) -> Option<usize> {
        self.p.iter().position(|&c| c.abs() > tol)
    }
}

/// Builds the weak series for every outcome of a 1D measurement.
pub fn weak_series(povm: &Povm, kmax: usize) -> Result<ProbSeries> {
    let basis = povm.basis_1d()?;
    let psf = basis.psf();
    if kmax + 1 > psf.lmax() {
        return Err(Error::OrderTooHigh {
            order: kmax + 1,
            lmax: psf.lmax(),
        });
    }
    // centroid derivatives d_a = (-1)^a psi^(a)(x - center)
    let grid = psf.grid();
    let mut derivs: Vec<GridFn> = Vec::with_capacity(kmax + 2);
    for a in 0..=(kmax + 1) {
        let mut d = psf.eval_derivative_shifted(a, grid, basis.center())?;
        if a % 2 == 1 {
            d.scale(Complex64::new(-1.0, 0.0));
        }
        derivs.push(d);
    }
    let norms: Vec<f64> = derivs.iter().map(|d| d.norm()).collect();
    let mut tail_bound = 0.0;
    for a in 0..=(kmax + 1) {
        let b = kmax + 1 - a;
        tail_bound += norms[a] * norms[b] / (factorial(a) * factorial(b));
    }

    // <b_l, d_a> by quadrature for every mode the catalog uses, valid
    // for any order the PSF model supports (the basis coefficient table
    // only reaches the basis construction order)
    let mut mode_table = vec![vec![Complex64::new(0.0, 0.0); kmax + 2]; basis.lmax() + 1];
    for (l, row) in mode_table.iter_mut().enumerate() {
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = inner_product(basis.mode(l), &derivs[a])?;
        }
    }
    let proj_overlap = |coeffs: &[(ModeRef, f64)], a: usize| -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, c) in coeffs {
            let l = match m {
                ModeRef::One(l) => *l,
                ModeRef::Two(..) => return Err(Error::InvalidInput("2D mode in 1D frame".into())),
            };
            acc += c * mode_table[l][a];
        }
        Ok(acc)
    };

    let mut outcomes = Vec::with_capacity(povm.outcomes.len());
    for o in &povm.outcomes {
        let mut p = vec![0.0; kmax + 1];
        if single_photon_visible(o) {
            // E_ab = <d_a| E |d_b>
            let e_ab = |a: usize, b: usize| -> Result<Complex64> {
                match &o.op {
                    OutcomeOp::ModeProjector { coeffs } => {
                        let va = proj_overlap(coeffs, a)?;
                        let vb = proj_overlap(coeffs, b)?;
                        Ok(va.conj() * vb)
                    }
                    OutcomeOp::ParitySector { sx, .. } => {
                        let direct = inner_product(&derivs[a], &derivs[b])?;
                        let refl = inner_product(&derivs[a], &derivs[b].reflected()?)?;
                        Ok(0.5 * (direct + *sx as f64 * refl))
                    }
                    OutcomeOp::Pixel { lo, hi } => {
                        inner_product_window(&derivs[a], &derivs[b], *lo, *hi)
                    }
                }
            };
            for k in 0..=kmax {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut scale = 0.0;
                for a in 0..=k {
                    let b = k - a;
                    let w = factorial(k) / (factorial(a) * factorial(b));
                    acc += w * e_ab(a, b)?;
                    scale += w * norms[a] * norms[b];
                }
                if acc.im.abs() > 1e-9 * acc.norm().max(1e-30) {
                    return Err(Error::InvalidInput(format!(
                        "series coefficient p_{k} of `{}` has imaginary residue {:.2e}",
                        o.label, acc.im
                    )));
                }
                // snap quadrature roundoff on structurally zero
                // coefficients: orthogonality (modes) and parity
                // (sectors) make them exact zeros. Pixel coefficients
                // are local and legitimately tiny in the tails.
                let structural = !matches!(o.op, OutcomeOp::Pixel { .. });
                p[k] = if structural && acc.re.abs() < 1e-10 * scale {
                    0.0
                } else {
                    acc.re
                };
            }
        }
        outcomes.push(OutcomeSeries {
            label: o.label.clone(),
            vacuum: vacuum_weight(o),
            p,
        });
    }
    let r0 = psf.convergence_radius_lower_bound(psf.lmax())?;
    Ok(ProbSeries {
        kmax,
        r0,
        outcomes,
        tail_bound,
        povm_label: povm.label.clone(),
    })
}

fn proj_deriv_overlap(
    coeffs: &[(ModeRef, f64)],
    basis: &DerivativeBasis,
    a: usize,
) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, c) in coeffs {
        let l = match m {
            ModeRef::One(l) => *l,
            ModeRef::Two(..) => return Err(Error::InvalidInput("2D mode in 1D frame".into())),
        };
        // <v, d_a>
        acc += c * basis.deriv_coeff(a, l);
    }
    Ok(acc)
}

impl ProbSeries {
    /// Upper bound on the truncated remainder of the single-photon
    /// series at image size `s` (geometric extrapolation beyond
    /// `kmax + 1`).
    pub fn remainder_bound(&self, s: f64, eps: f64) -> f64 {
        if s >= self.r0 {
            return f64::INFINITY;
        }
        let lead = self.tail_bound * s.powi(self.kmax as i32 + 1);
        eps * lead / (1.0 - s / self.r0)
    }

    /// Evaluates the series at a moment vector. Errors if the scene size
    /// is outside the convergence bound.
    pub fn evaluate(&self, mv: &MomentVector, eps: f64) -> Result<ProbTable> {
        if mv.size >= self.r0 {
            return Err(Error::OutsideConvergenceRadius {
                s: mv.size,
                r0: self.r0,
            });
        }
        let kmax = self.kmax.min(mv.moments.len() - 1);
        let mut labels = Vec::with_capacity(self.outcomes.len());
        let mut p = Vec::with_capacity(self.outcomes.len());
        for o in &self.outcomes {
            let mut prob = (1.0 - eps) * o.vacuum;
            for k in 0..=kmax {
                prob += eps * o.p[k] * mv.radicand(k) / factorial(k);
            }
            labels.push(o.label.clone());
            p.push(prob);
        }
        Ok(ProbTable::from_named(labels, p))
    }
}

/// 2D weak series: coefficients `p_{kl}(n)` with
/// `P(n) = (1-eps)<0|E|0> + eps sum_{kl} p_{kl}(n) m_{kl} / (k! l!)`.
#[derive(Debug, Clone)]
pub struct ProbSeries2d {
    pub kmax: usize,
    pub r0: f64,
    pub outcomes: Vec<OutcomeSeries2d>,
    pub povm_label: String,
}

#[derive(Debug, Clone)]
pub struct OutcomeSeries2d {
    pub label: String,
    pub vacuum: f64,
    /// `p[k][l]` for `k + l <= kmax`.
    pub p: Vec<Vec<f64>>,
}

pub fn weak_series_2d(povm: &Povm, kmax: usize) -> Result<ProbSeries2d> {
    let basis = povm.basis_2d()?;
    // per-axis <b_l, d_a> quadrature tables
    let axis_table = |b: &DerivativeBasis| -> Result<Vec<Vec<Complex64>>> {
        let psf = b.psf();
        if kmax + 1 > psf.lmax() {
            return Err(Error::OrderTooHigh {
                order: kmax + 1,
                lmax: psf.lmax(),
            });
        }
        let mut table = vec![vec![Complex64::new(0.0, 0.0); kmax + 1]; b.lmax() + 1];
        for a in 0..=kmax {
            let mut d = psf.eval_derivative_shifted(a, psf.grid(), b.center())?;
            if a % 2 == 1 {
                d.scale(Complex64::new(-1.0, 0.0));
            }
            for (l, row) in table.iter_mut().enumerate() {
                row[a] = inner_product(b.mode(l), &d)?;
            }
        }
        Ok(table)
    };
    let tx = axis_table(&basis.bx)?;
    let ty = axis_table(&basis.by)?;
    let axis_norms = |b: &DerivativeBasis| -> Result<Vec<f64>> {
        (0..=kmax).map(|a| b.psf().derivative_norm(a)).collect()
    };
    let nx = axis_norms(&basis.bx)?;
    let ny = axis_norms(&basis.by)?;
    let mut outcomes = Vec::with_capacity(povm.outcomes.len());
    for o in &povm.outcomes {
        let mut p = vec![vec![0.0; kmax + 1]; kmax + 1];
        if single_photon_visible(o) {
            let coeffs = match &o.op {
                OutcomeOp::ModeProjector { coeffs } => coeffs,
                _ => {
                    return Err(Error::UnsupportedBase(
                        "2D series supports mode projectors".into(),
                    ))
                }
            };
            // <v, d_(a1,a2)> factorizes over the axes
            let overlap = |a1: usize, a2: usize| -> Result<Complex64> {
                let mut acc = Complex64::new(0.0, 0.0);
                for (m, c) in coeffs {
                    let (k, l) = match m {
                        ModeRef::Two(k, l) => (*k, *l),
                        ModeRef::One(_) => {
                            return Err(Error::InvalidInput("1D mode in 2D frame".into()))
                        }
                    };
                    acc += c * tx[k][a1] * ty[l][a2];
                }
                Ok(acc)
            };
            for k in 0..=kmax {
                for l in 0..=(kmax - k) {
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut scale = 0.0;
                    for a1 in 0..=k {
                        for a2 in 0..=l {
                            let b1 = k - a1;
                            let b2 = l - a2;
                            let va = overlap(a1, a2)?;
                            let vb = overlap(b1, b2)?;
                            let w = factorial(k) * factorial(l)
                                / (factorial(a1) * factorial(a2) * factorial(b1) * factorial(b2));
                            acc += w * va.conj() * vb;
                            scale += w * nx[a1] * ny[a2] * nx[b1] * ny[b2];
                        }
                    }
                    p[k][l] = if acc.re.abs() < 1e-10 * scale { 0.0 } else { acc.re };
                }
            }
        }
        outcomes.push(OutcomeSeries2d {
            label: o.label.clone(),
            vacuum: vacuum_weight(o),
            p,
        });
    }
    let r0x = basis.bx.psf().convergence_radius_lower_bound(basis.bx.psf().lmax())?;
    let r0y = basis.by.psf().convergence_radius_lower_bound(basis.by.psf().lmax())?;
    Ok(ProbSeries2d {
        kmax,
        r0: r0x.min(r0y),
        outcomes,
        povm_label: povm.label.clone(),
    })
}

impl ProbSeries2d {
    pub fn evaluate(&self, mv: &MomentVector2d, eps: f64) -> Result<ProbTable> {
        if mv.size >= self.r0 {
            return Err(Error::OutsideConvergenceRadius {
                s: mv.size,
                r0: self.r0,
            });
        }
        let mut labels = Vec::new();
        let mut p = Vec::new();
        for o in &self.outcomes {
            let mut prob = (1.0 - eps) * o.vacuum;
            for k in 0..=self.kmax {
                for l in 0..=(self.kmax - k) {
                    if k < mv.moments.len() && l < mv.moments[k].len() {
                        prob += eps * o.p[k][l] * mv.radicand(k, l)
                            / (factorial(k) * factorial(l));
                    }
                }
            }
            labels.push(o.label.clone());
            p.push(prob);
        }
        Ok(ProbTable::from_named(labels, p))
    }
}

/// Thermal (arbitrary photon number) expansion of each outcome through
/// second order in the image size:
/// `P(n) = Q0 + q1_m1 m1 + q2_m2 m2 + q2_m1sq m1^2 + O(s^3)`.
#[derive(Debug, Clone)]
pub struct StrongSeries {
    pub epsilon: f64,
    pub outcomes: Vec<StrongOutcome>,
    pub povm_label: String,
}

#[derive(Debug, Clone)]
pub struct StrongOutcome {
    pub label: String,
    pub q0: f64,
    pub q1_m1: f64,
    pub q2_m2: f64,
    pub q2_m1sq: f64,
}

impl StrongSeries {
    pub fn evaluate(&self, m1: f64, m2: f64) -> ProbTable {
        let labels = self.outcomes.iter().map(|o| o.label.clone()).collect();
        let p = self
            .outcomes
            .iter()
            .map(|o| o.q0 + o.q1_m1 * m1 + o.q2_m2 * m2 + o.q2_m1sq * m1 * m1)
            .collect();
        ProbTable::from_named(labels, p)
    }
}

fn thermal_sum(mut term: impl FnMut(usize) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    let mut small_streak = 0;
    for k in 0..THERMAL_MAX_TERMS {
        let t = term(k);
        acc += t;
        // a single tiny term is not convergence: factors like (k - eps)
        // pass through zero mid-series for integer eps
        if t.abs() < THERMAL_TAIL_TOL * acc.abs().max(1e-300) {
            small_streak += 1;
            if k > 2 && small_streak >= 3 {
                return Ok(acc);
            }
        } else {
            small_streak = 0;
        }
    }
    Err(Error::TruncationFailure(
        "photon-number sum did not converge".into(),
    ))
}

/// Builds the thermal second-order series for a 1D measurement whose
/// outcomes live in the mode algebra (projectors, dressed projectors,
/// parity sectors). Pixel outcomes have no closed thermal form here.
pub fn strong_series(povm: &Povm, epsilon: f64) -> Result<StrongSeries> {
    let basis = povm.basis_1d()?;
    if basis.lmax() < 2 {
        return Err(Error::OrderTooHigh {
            order: 2,
            lmax: basis.lmax(),
        });
    }
    let eps = epsilon;
    let u = 1.0 + eps;
    let x = eps / u;
    // in-span bandwidth ||d_1||^2
    let dk_sq: f64 = (0..=1).map(|l| basis.deriv_coeff(1, l).norm_sqr()).sum();

    let mut outcomes = Vec::with_capacity(povm.outcomes.len());
    for o in &povm.outcomes {
        let so = match (&o.op, o.dressing) {
            (OutcomeOp::Pixel { .. }, _) => {
                return Err(Error::UnsupportedBase(format!(
                    "pixel outcome `{}` has no thermal mode-algebra form",
                    o.label
                )))
            }
            (OutcomeOp::ModeProjector { coeffs }, Dressing::None) => {
                let c0 = coeffs
                    .iter()
                    .find_map(|(m, c)| match m {
                        ModeRef::One(0) => Some(*c),
                        _ => None,
                    })
                    .unwrap_or(0.0);
                let vd1 = proj_deriv_overlap(coeffs, basis, 1)?;
                let vd2 = proj_deriv_overlap(coeffs, basis, 2)?;
                let t1 = vd1.norm_sqr();
                let q0 = eps / (u * u) * c0 * c0;
                let q1_m1 = 2.0 * eps / (u * u) * (c0 * vd1).re;
                // single-photon matrix elements only contribute at k = 0
                // (photon-number mismatch kills every higher term)
                let term_a_m2 = -dk_sq * eps * eps / (u * u) * (1.0 - 2.0 / u) * c0 * c0;
                let term_a_m1 = -dk_sq * eps * eps / (u * u) * ((1.0 - eps) / u) * c0 * c0;
                let q2_m2 = eps / u * t1 + eps / (u * u) * (c0 * vd2).re + term_a_m2;
                let q2_m1sq = -eps * eps / (u * u) * t1 + term_a_m1;
                StrongOutcome {
                    label: o.label.clone(),
                    q0,
                    q1_m1,
                    q2_m2,
                    q2_m1sq,
                }
            }
            (OutcomeOp::ModeProjector { coeffs }, Dressing::PerCount(m)) => {
                dressed_strong(o, coeffs, basis, eps, Some(m))?
            }
            (OutcomeOp::ModeProjector { coeffs }, Dressing::Summed) => {
                dressed_strong(o, coeffs, basis, eps, None)?
            }
            (OutcomeOp::ParitySector { sx, sy: None }, Dressing::None | Dressing::Summed) => {
                // requires mode parities (-1)^l, i.e. an even PSF frame
                if basis.deriv_coeff(1, 0).norm() > 1e-8 || basis.deriv_coeff(2, 1).norm() > 1e-8 {
                    return Err(Error::UnsupportedBase(
                        "thermal parity sectors need an even PSF".into(),
                    ));
                }
                let s = *sx as f64;
                let d2_psi = basis.deriv_coeff(2, 0).re; // <psi, d_2> = -dk^2
                let q0 = if s > 0.0 {
                    thermal_sum(|k| x.powi(k as i32) / u)?
                } else {
                    0.0
                };
                let (q2_m2, q2_m1sq);
                if s < 0.0 {
                    // antisymmetric sector: only the odd d_1 mode couples
                    q2_m2 = thermal_sum(|j| dk_sq * x.powi(j as i32 + 1))?;
                    q2_m1sq =
                        thermal_sum(|j| dk_sq * (j as f64 - eps) * x.powi(j as i32 + 1) / u)?;
                } else {
                    // symmetric sector: T2 insertion plus the exponential
                    // correction, both on the all-psi tower
                    let t2 = thermal_sum(|j| (j as f64 + 1.0) * x.powi(j as i32 + 1) / u)? * d2_psi;
                    let ta_m2 = -dk_sq
                        * thermal_sum(|k| {
                            x.powi(k as i32 + 1) * (1.0 - (k as f64 + 1.0) / u)
                        })?;
                    let ta_m1 = -dk_sq
                        * thermal_sum(|k| x.powi(k as i32 + 1) * (k as f64 - eps) / u)?;
                    q2_m2 = t2 + ta_m2;
                    q2_m1sq = ta_m1;
                }
                StrongOutcome {
                    label: o.label.clone(),
                    q0,
                    q1_m1: 0.0,
                    q2_m2,
                    q2_m1sq,
                }
            }
            _ => {
                return Err(Error::UnsupportedBase(format!(
                    "outcome `{}` not supported by the thermal series",
                    o.label
                )))
            }
        };
        outcomes.push(so);
    }
    Ok(StrongSeries {
        epsilon,
        outcomes,
        povm_label: povm.label.clone(),
    })
}

fn dressed_strong(
    o: &Outcome,
    coeffs: &[(ModeRef, f64)],
    basis: &DerivativeBasis,
    eps: f64,
    per_count: Option<usize>,
) -> Result<StrongOutcome> {
    let c0 = coeffs
        .iter()
        .find_map(|(m, c)| match m {
            ModeRef::One(0) => Some(*c),
            _ => None,
        })
        .unwrap_or(0.0);
    if c0.abs() > 1e-12 {
        return Err(Error::UnsupportedBase(format!(
            "dressing of `{}` requires the projector orthogonal to the PSF mode",
            o.label
        )));
    }
    let u = 1.0 + eps;
    let x = eps / u;
    let t1 = proj_deriv_overlap(coeffs, basis, 1)?.norm_sqr();
    let (q2_m2, q2_m1sq) = match per_count {
        Some(m) => (
            t1 * eps * x.powi(m as i32) / u,
            t1 * eps * x.powi(m as i32) * (m as f64 - eps) / (u * u),
        ),
        None => (
            t1 * thermal_sum(|m| eps * x.powi(m as i32) / u)?,
            t1 * thermal_sum(|m| eps * x.powi(m as i32) * (m as f64 - eps) / (u * u))?,
        ),
    };
    Ok(StrongOutcome {
        label: o.label.clone(),
        q0: 0.0,
        q1_m1: 0.0,
        q2_m2,
        q2_m1sq,
    })
}

/// Weak/strong consistency helper: the thermal series collapses to the
/// weak one as `eps -> 0`; used by tests and the convergence report.
pub fn strong_weak_gap(strong: &StrongSeries, weak_eval: &ProbTable, m1: f64, m2: f64) -> f64 {
    let s_eval = strong.evaluate(m1, m2);
    s_eval
        .p
        .iter()
        .zip(&weak_eval.p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
