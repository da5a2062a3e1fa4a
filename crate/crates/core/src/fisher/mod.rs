//! Fisher information of outcome distributions with respect to the
//! normalized moments, closed-form subdiffraction limits, Cramer-Rao
//! bounds, and the centroid pre-estimation scheme.

pub mod linalg;
pub mod qfim;
pub mod twophoton;

use serde::Serialize;

use crate::basis::{Basis2D, DerivativeBasis};
use crate::error::{Error, Result};
use crate::prob::{ProbSeries, ProbSeries2d, StrongSeries};
use crate::psf::{factorial, PsfModel};
use crate::scene::{MomentVector, MomentVector2d};

pub use linalg::fit_loglog;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ParamLabel {
    Moment(usize),
    Moment2d(usize, usize),
    XDev,
    YDev,
    Beta,
    Lambda1,
    Lambda2,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    LimitFormula,
    Series,
    Thermal,
}

/// A Fisher (or quantum Fisher) information matrix with its context.
#[derive(Debug, Clone, Serialize)]
pub struct FisherReport {
    pub params: Vec<ParamLabel>,
    pub matrix: Vec<Vec<f64>>,
    pub regime: Regime,
    pub epsilon: f64,
    pub size: Option<f64>,
    pub truncation: Option<usize>,
}

impl FisherReport {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i][j]
    }

    pub fn scalar(&self) -> f64 {
        self.matrix[0][0]
    }

    /// Symmetry and positive semidefiniteness (eigenvalues above
    /// `-1e-10 x trace`).
    pub fn validate(&self) -> Result<()> {
        let n = self.matrix.len();
        let scale: f64 = (0..n).map(|i| self.matrix[i][i].abs()).sum::<f64>().max(1e-300);
        for i in 0..n {
            for j in 0..n {
                if (self.matrix[i][j] - self.matrix[j][i]).abs() > 1e-9 * scale {
                    return Err(Error::InvalidInput("information matrix not symmetric".into()));
                }
            }
        }
        let eigs = linalg::sym_eigenvalues(&self.matrix);
        if eigs.iter().any(|&l| l < -1e-10 * scale) {
            return Err(Error::InvalidInput(format!(
                "information matrix not PSD (min eigenvalue {:.3e})",
                eigs.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        Ok(())
    }
}

fn effective_sign(sign: i8) -> f64 {
    if sign < 0 {
        -1.0
    } else {
        1.0
    }
}

/// Classical FI matrix over the requested moment orders, treating the
/// moments as independent coordinates of the probability series:
/// `dP/dM_k = eps p_k(n) k M_k^{k-1} / k!`.
pub fn fi_from_series(
    series: &ProbSeries,
    params: &[usize],
    mv: &MomentVector,
    eps: f64,
) -> Result<FisherReport> {
    let kreq = params.iter().max().copied().unwrap_or(0);
    if kreq + 2 > series.kmax + 1 {
        // truncation must cover the requested order plus the next
        // correction so the denominator is trustworthy
        return Err(Error::OrderTooHigh {
            order: kreq,
            lmax: series.kmax.saturating_sub(1),
        });
    }
    if params.iter().any(|&k| k == 0 || k > series.kmax || k >= mv.moments.len()) {
        return Err(Error::InvalidInput("parameter order out of range".into()));
    }
    let table = series.evaluate(mv, eps)?;
    let np = params.len();
    let mut matrix = vec![vec![0.0; np]; np];

    // scratch holding dP/dM for every outcome plus the bucket
    let n_out = series.outcomes.len();
    let mut dp = vec![vec![0.0; np]; n_out + 1];
    for (oi, o) in series.outcomes.iter().enumerate() {
        for (pi, &k) in params.iter().enumerate() {
            let m = &mv.moments[k];
            let d = eps * o.p[k] * effective_sign(m.sign) * k as f64 * m.magnitude.powi(k as i32 - 1)
                / factorial(k);
            dp[oi][pi] = d;
            dp[n_out][pi] -= d;
        }
    }
    let mut probs = table.p.clone();
    probs.push(table.bucket);
    for (oi, &p) in probs.iter().enumerate() {
        let has_deriv = dp[oi].iter().any(|&d| d.abs() > 1e-300);
        if p <= 1e-300 {
            if has_deriv {
                let label = if oi < n_out {
                    series.outcomes[oi].label.clone()
                } else {
                    "bucket".into()
                };
                return Err(Error::SingularProbability(label));
            }
            continue;
        }
        for i in 0..np {
            for j in 0..np {
                matrix[i][j] += dp[oi][i] * dp[oi][j] / p;
            }
        }
    }
    Ok(FisherReport {
        params: params.iter().map(|&k| ParamLabel::Moment(k)).collect(),
        matrix,
        regime: Regime::Series,
        epsilon: eps,
        size: Some(mv.size),
        truncation: Some(series.kmax),
    })
}

/// 2D analogue over moment index pairs.
pub fn fi_from_series_2d(
    series: &ProbSeries2d,
    params: &[(usize, usize)],
    mv: &MomentVector2d,
    eps: f64,
) -> Result<FisherReport> {
    let table = series.evaluate(mv, eps)?;
    let np = params.len();
    let n_out = series.outcomes.len();
    let mut dp = vec![vec![0.0; np]; n_out + 1];
    for (oi, o) in series.outcomes.iter().enumerate() {
        for (pi, &(k, l)) in params.iter().enumerate() {
            let m = &mv.moments[k][l];
            let ord = (k + l) as f64;
            let d = eps * o.p[k][l] * effective_sign(m.sign) * ord
                * m.magnitude.powf(ord - 1.0)
                / (factorial(k) * factorial(l));
            dp[oi][pi] = d;
            dp[n_out][pi] -= d;
        }
    }
    let mut probs = table.p.clone();
    probs.push(table.bucket);
    let mut matrix = vec![vec![0.0; np]; np];
    for (oi, &p) in probs.iter().enumerate() {
        let has_deriv = dp[oi].iter().any(|&d| d.abs() > 1e-300);
        if p <= 1e-300 {
            if has_deriv {
                return Err(Error::SingularProbability(format!("outcome {oi}")));
            }
            continue;
        }
        for i in 0..np {
            for j in 0..np {
                matrix[i][j] += dp[oi][i] * dp[oi][j] / p;
            }
        }
    }
    Ok(FisherReport {
        params: params
            .iter()
            .map(|&(k, l)| ParamLabel::Moment2d(k, l))
            .collect(),
        matrix,
        regime: Regime::Series,
        epsilon: eps,
        size: Some(mv.size),
        truncation: Some(series.kmax),
    })
}

/// The exact `s -> 0` limit of the second-moment FI under a thermal
/// series: `4 sum_n q2_m2(n)` over the outcomes whose probability
/// vanishes at the centroid.
pub fn fi22_thermal_limit(strong: &StrongSeries) -> f64 {
    4.0 * strong
        .outcomes
        .iter()
        .filter(|o| o.q0.abs() < 1e-14)
        .map(|o| o.q2_m2)
        .sum::<f64>()
}

/// Second-moment FI from the thermal series (all orders in the photon
/// number), evaluated at the scene's `M_1, M_2`.
pub fn fi_second_moment_thermal(strong: &StrongSeries, m1: f64, m2_mag: f64) -> FisherReport {
    let m2 = m2_mag * m2_mag;
    let table = strong.evaluate(m1, m2);
    let mut f = 0.0;
    let mut dsum = 0.0;
    for (o, &p) in strong.outcomes.iter().zip(&table.p) {
        let d = 2.0 * o.q2_m2 * m2_mag;
        dsum -= d;
        if p > 1e-300 {
            f += d * d / p;
        }
    }
    if table.bucket > 1e-300 {
        f += dsum * dsum / table.bucket;
    }
    FisherReport {
        params: vec![ParamLabel::Moment(2)],
        matrix: vec![vec![f]],
        regime: Regime::Thermal,
        epsilon: strong.epsilon,
        size: None,
        truncation: None,
    }
}

/// Which closed-form subdiffraction limit to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum LimitFormula {
    /// `F_{2l,2l} = eps q_l^2 (2l)^2 M_{2l}^{2l-2}`
    Even { l: usize },
    /// `F_{2l+1,2l+1} = 4 eps q_{l+1}^2 (2l+1)^2 M_{2l+1}^{4l} / M_{2l}^{2l}`
    Odd { l: usize },
    /// `F_22 -> 4 eps dk^2`
    Second,
}

pub fn fi_limit_formula(
    basis: &DerivativeBasis,
    mv: &MomentVector,
    eps: f64,
    which: LimitFormula,
) -> Result<FisherReport> {
    let (param, value) = match which {
        LimitFormula::Second => (ParamLabel::Moment(2), {
            let dk = basis.q(1);
            4.0 * eps * dk * dk
        }),
        LimitFormula::Even { l } => {
            if 2 * l >= mv.moments.len() || l > basis.lmax() {
                return Err(Error::InvalidInput("moment order out of range".into()));
            }
            let q = basis.q(l);
            let m = mv.magnitude(2 * l);
            (
                ParamLabel::Moment(2 * l),
                eps * q * q * (2 * l) as f64 * (2 * l) as f64 * m.powi(2 * l as i32 - 2),
            )
        }
        LimitFormula::Odd { l } => {
            if 2 * l + 1 >= mv.moments.len() || l + 1 > basis.lmax() {
                return Err(Error::InvalidInput("moment order out of range".into()));
            }
            if l > 0 && mv.radicand(2 * l) == 0.0 {
                return Err(Error::ZeroEvenMoment(2 * l));
            }
            let q = basis.q(l + 1);
            let modd = mv.magnitude(2 * l + 1);
            let meven = if l == 0 { 1.0 } else { mv.magnitude(2 * l) };
            let num = 4.0 * eps * q * q * ((2 * l + 1) as f64).powi(2) * modd.powi(4 * l as i32);
            let den = meven.powi(2 * l as i32);
            (ParamLabel::Moment(2 * l + 1), num / den)
        }
    };
    Ok(FisherReport {
        params: vec![param],
        matrix: vec![vec![value]],
        regime: Regime::LimitFormula,
        epsilon: eps,
        size: Some(mv.size),
        truncation: None,
    })
}

/// Closed-form 2D limits for the product-mode families.
#[derive(Debug, Clone, Copy)]
pub enum LimitFormula2d {
    /// `B0w`: F wrt `M_{2L, 2K-2L}`
    Even { k: usize, l: usize },
    /// `B1w/B2w` rational form wrt `M_{2L+1, 2K-2L-1}`
    Pair { k: usize, l: usize },
    /// `B3w/B4w` wrt `M_{2L+1, 2K-2L}`
    OddX { k: usize, l: usize },
    /// `B5w/B6w` wrt `M_{2K-2L, 2L+1}`
    OddY { k: usize, l: usize },
}

pub fn fi_limit_formula_2d(
    basis: &Basis2D,
    mv: &MomentVector2d,
    eps: f64,
    which: LimitFormula2d,
) -> Result<FisherReport> {
    let mag = |a: usize, b: usize| -> Result<f64> {
        if a < mv.moments.len() && b < mv.moments[a].len() {
            Ok(mv.magnitude(a, b))
        } else {
            Err(Error::InvalidInput("moment order out of range".into()))
        }
    };
    let (param, value) = match which {
        LimitFormula2d::Even { k, l } => {
            let q = basis.q(l, k - l);
            let m = mag(2 * l, 2 * (k - l))?;
            (
                ParamLabel::Moment2d(2 * l, 2 * (k - l)),
                eps * q * q * (2 * k) as f64 * (2 * k) as f64 * m.powi(2 * k as i32 - 2),
            )
        }
        LimitFormula2d::Pair { k, l } => {
            // F wrt M_{2L+1, 2K-2L-1} for the paired basis
            let qa = basis.q(l, k - l);
            let qb = basis.q(l + 1, k - l - 1);
            let ma = mag(2 * l, 2 * (k - l))?.powi(2 * k as i32);
            let mb = mag(2 * l + 2, 2 * (k - l) - 2)?.powi(2 * k as i32);
            let modd = mag(2 * l + 1, 2 * (k - l) - 1)?;
            let s_even = qa * qa * ma + qb * qb * mb;
            let den = s_even * s_even
                - 4.0 * qa * qa * qb * qb * modd.powi(4 * k as i32);
            if den <= 0.0 {
                return Err(Error::DegenerateScene(
                    "paired-family denominator vanishes".into(),
                ));
            }
            let num = 4.0
                * eps
                * s_even
                * qa
                * qa
                * qb
                * qb
                * (2 * k) as f64
                * (2 * k) as f64
                * modd.powi(4 * k as i32 - 2);
            (
                ParamLabel::Moment2d(2 * l + 1, 2 * (k - l) - 1),
                num / den,
            )
        }
        LimitFormula2d::OddX { k, l } => {
            let q = basis.q(l + 1, k - l);
            let modd = mag(2 * l + 1, 2 * (k - l))?;
            let meven = mag(2 * l, 2 * (k - l))?;
            if k > 0 && meven == 0.0 {
                return Err(Error::ZeroEvenMoment(2 * k));
            }
            let num = 4.0 * eps * q * q * ((2 * k + 1) as f64).powi(2) * modd.powi(4 * k as i32);
            let den = if k == 0 { 1.0 } else { meven.powi(2 * k as i32) };
            (ParamLabel::Moment2d(2 * l + 1, 2 * (k - l)), num / den)
        }
        LimitFormula2d::OddY { k, l } => {
            let q = basis.q(k - l, l + 1);
            let modd = mag(2 * (k - l), 2 * l + 1)?;
            let meven = mag(2 * (k - l), 2 * l)?;
            if k > 0 && meven == 0.0 {
                return Err(Error::ZeroEvenMoment(2 * k));
            }
            let num = 4.0 * eps * q * q * ((2 * k + 1) as f64).powi(2) * modd.powi(4 * k as i32);
            let den = if k == 0 { 1.0 } else { meven.powi(2 * k as i32) };
            (ParamLabel::Moment2d(2 * (k - l), 2 * l + 1), num / den)
        }
    };
    Ok(FisherReport {
        params: vec![param],
        matrix: vec![vec![value]],
        regime: Regime::LimitFormula,
        epsilon: eps,
        size: Some(mv.size),
        truncation: None,
    })
}

/// Cramer-Rao bounds from an information matrix.
#[derive(Debug, Clone, Serialize)]
pub struct CrbReport {
    pub params: Vec<ParamLabel>,
    /// Full matrix bound `F^{-1}`; `None` when `F` is singular.
    pub matrix_bound: Option<Vec<Vec<f64>>>,
    /// Per-parameter bounds `1 / F_kk`.
    pub per_parameter: Vec<f64>,
    /// True when the matrix and per-parameter bounds coincide
    /// (diagonal information matrix).
    pub diagonal_coincide: bool,
    pub singular: bool,
}

pub fn crb(report: &FisherReport) -> CrbReport {
    let n = report.matrix.len();
    let per_parameter: Vec<f64> = (0..n)
        .map(|i| {
            let f = report.matrix[i][i];
            if f > 0.0 {
                1.0 / f
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let inv = linalg::invert(&report.matrix);
    let diagonal_coincide = match &inv {
        Some(m) => (0..n).all(|i| {
            let d = (m[i][i] - per_parameter[i]).abs();
            d <= 1e-9 * per_parameter[i].abs().max(1e-300)
        }),
        None => false,
    };
    CrbReport {
        params: report.params.clone(),
        singular: inv.is_none(),
        matrix_bound: inv,
        per_parameter,
        diagonal_coincide,
    }
}

/// Centroid pre-estimation scheme: the stage-1 information, the
/// split-resource information matrix, and the efficiency guarantee.
#[derive(Debug, Clone, Serialize)]
pub struct CentroidReport {
    pub fi11: f64,
    pub split: f64,
    pub split_fim: [[f64; 2]; 2],
    /// Lower bound on `var(M1) + var(M2)` per shot.
    pub trace_bound: f64,
    /// Guaranteed efficiency of the split scheme, `sqrt((1+e)/4)`.
    pub efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CentroidMode {
    Weak,
    Strong,
}

pub fn centroid_scheme(psf: &PsfModel, eps: f64, mode: CentroidMode) -> Result<CentroidReport> {
    let dk = psf.delta_k()?;
    let dk2 = dk * dk;
    let fi11 = match mode {
        CentroidMode::Weak => 4.0 * eps * dk2,
        CentroidMode::Strong => {
            // photon-number-resolved pairs: each (k+1)-photon sector
            // contributes 4 dk^2 (k+1) eps^{k+1} / (1+eps)^{k+2}
            let u = 1.0 + eps;
            let x = eps / u;
            let mut acc = 0.0;
            for k in 0..20_000usize {
                let t = 4.0 * dk2 * (k as f64 + 1.0) * x.powi(k as i32 + 1) / u;
                acc += t;
                if k > 2 && t < 1e-14 * acc {
                    break;
                }
            }
            acc
        }
    };
    let split = 0.5;
    let half = split * fi11;
    Ok(CentroidReport {
        fi11,
        split,
        split_fim: [[half, 0.0], [0.0, half]],
        trace_bound: (1.0 + std::f64::consts::E) / (4.0 * eps * dk2),
        efficiency: ((1.0 + std::f64::consts::E) / 4.0).sqrt(),
    })
}
