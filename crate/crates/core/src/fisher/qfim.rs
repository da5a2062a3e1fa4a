//! Quantum Fisher information of the second-moment block in 2D.
//!
//! In the subdiffraction limit the informative part of the field state
//! is a 2x2 operator over the first-derivative modes; its symmetric
//! logarithmic derivatives give the QFIM over `(X, Y, beta)` or over the
//! principal-axis parameters `(Lambda1, Lambda2, theta)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fisher::linalg::eig_sym_2x2;
use crate::fisher::{FisherReport, ParamLabel, Regime};
use crate::psf::DeltaK2d;

/// Support cutoff for rank-deficient states, relative to the trace.
const SUPPORT_EPS: f64 = 1e-14;

/// 2x2 real symmetric operator in the `{e1, e2}` frame.
#[derive(Debug, Clone, Copy)]
struct Op2 {
    a: f64, // (1,1)
    b: f64, // (2,2)
    c: f64, // (1,2)
}

/// The second-moment operator in Pauli form:
/// coefficients of I, sigma_z, sigma_x (all over 2).
fn rho2(dk: &DeltaK2d, x: f64, y: f64, beta: f64) -> Op2 {
    let t = dk.dkx * dk.dkx * x * x + dk.dky * dk.dky * y * y;
    let g = dk.dkx * dk.dky * beta * x * y;
    let ci = t + 2.0 * dk.r * g;
    let cz = dk.r * t + 2.0 * g;
    let cx = (1.0 - dk.r * dk.r).sqrt() * (dk.dkx * dk.dkx * x * x - dk.dky * dk.dky * y * y);
    Op2 {
        a: 0.5 * (ci + cz),
        b: 0.5 * (ci - cz),
        c: 0.5 * cx,
    }
}

/// Parameter derivative of [`rho2`] (analytic, same assembly).
fn drho2(dk: &DeltaK2d, x: f64, y: f64, beta: f64, wrt: usize) -> Op2 {
    let (tx, gx) = match wrt {
        0 => (2.0 * dk.dkx * dk.dkx * x, dk.dkx * dk.dky * beta * y),
        1 => (2.0 * dk.dky * dk.dky * y, dk.dkx * dk.dky * beta * x),
        _ => (0.0, dk.dkx * dk.dky * x * y),
    };
    let ci = tx + 2.0 * dk.r * gx;
    let cz = dk.r * tx + 2.0 * gx;
    let cx = (1.0 - dk.r * dk.r).sqrt()
        * match wrt {
            0 => 2.0 * dk.dkx * dk.dkx * x,
            1 => -2.0 * dk.dky * dk.dky * y,
            _ => 0.0,
        };
    Op2 {
        a: 0.5 * (ci + cz),
        b: 0.5 * (ci - cz),
        c: 0.5 * cx,
    }
}

/// QFIM entries `J_uv = 2 sum_{ij} D^u_ij D^v_ij / (l_i + l_j)` in the
/// eigenbasis of the state, with rank-deficient denominators regularized
/// at `SUPPORT_EPS x trace`.
fn sld_qfim(state: Op2, derivs: &[Op2], eps: f64) -> Vec<Vec<f64>> {
    let ([l1, l2], r) = eig_sym_2x2(state.a, state.b, state.c);
    let trace = (l1 + l2).abs().max(1e-300);
    let lams = [l1.max(0.0), l2.max(0.0)];
    // rotate derivatives into the eigenbasis: D' = R^T D R
    let rot = |o: &Op2| -> [[f64; 2]; 2] {
        let d = [[o.a, o.c], [o.c, o.b]];
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        out[i][j] += r[k][i] * d[k][l] * r[l][j];
                    }
                }
            }
        }
        out
    };
    let dprime: Vec<[[f64; 2]; 2]> = derivs.iter().map(rot).collect();
    let n = derivs.len();
    let mut j = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in 0..n {
            let mut acc = 0.0;
            for i in 0..2 {
                for k in 0..2 {
                    let den = lams[i] + lams[k];
                    if den > SUPPORT_EPS * trace {
                        acc += 2.0 * dprime[u][i][k] * dprime[v][i][k] / den;
                    }
                }
            }
            j[u][v] = eps * acc;
        }
    }
    j
}

#[derive(Debug, Clone, Serialize)]
pub struct Qfim2dReport {
    /// QFIM over `(X, Y, beta)` from the SLD solve; `None` at the
    /// singular boundary `|beta| = 1`.
    pub j_xyb: Option<FisherReport>,
    /// Pure-state QFIM over `(X, Y)`, returned always (it is the
    /// relevant object at `|beta| = 1`).
    pub j_xy: FisherReport,
    pub singular: bool,
}

/// QFIM of the second-moment state wrt `(X, Y, beta)`; at `|beta| = 1`
/// only the pure-state `(X, Y)` block is meaningful.
pub fn qfim_rho2(dk: &DeltaK2d, x: f64, y: f64, beta: f64, eps: f64) -> Result<Qfim2dReport> {
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::DegenerateCovariance(
            "standard deviations must be positive".into(),
        ));
    }
    if beta.abs() > 1.0 + 1e-12 {
        return Err(Error::InvalidBeta(beta));
    }
    let j_xy = FisherReport {
        params: vec![ParamLabel::XDev, ParamLabel::YDev],
        matrix: vec![
            vec![
                4.0 * eps * dk.dkx * dk.dkx,
                4.0 * eps * dk.r * dk.dkx * dk.dky,
            ],
            vec![
                4.0 * eps * dk.r * dk.dkx * dk.dky,
                4.0 * eps * dk.dky * dk.dky,
            ],
        ],
        regime: Regime::LimitFormula,
        epsilon: eps,
        size: None,
        truncation: None,
    };
    let singular = (beta.abs() - 1.0).abs() < 1e-12;
    let j_xyb = if singular {
        None
    } else {
        let state = rho2(dk, x, y, beta);
        let derivs = [
            drho2(dk, x, y, beta, 0),
            drho2(dk, x, y, beta, 1),
            drho2(dk, x, y, beta, 2),
        ];
        Some(FisherReport {
            params: vec![ParamLabel::XDev, ParamLabel::YDev, ParamLabel::Beta],
            matrix: sld_qfim(state, &derivs, eps),
            regime: Regime::LimitFormula,
            epsilon: eps,
            size: None,
            truncation: None,
        })
    };
    Ok(Qfim2dReport {
        j_xyb,
        j_xy,
        singular,
    })
}

/// Closed form of the `(X, Y, beta)` QFIM in the cross-orthogonal
/// (`r = 0`) case, for checking the SLD solve.
pub fn qfim_xyb_closed_form(dk: &DeltaK2d, x: f64, y: f64, beta: f64, eps: f64) -> [[f64; 3]; 3] {
    let dx2 = dk.dkx * dk.dkx;
    let dy2 = dk.dky * dk.dky;
    let jbb = 4.0 * eps * dx2 * dy2 * x * x * y * y
        / ((dx2 * x * x + dy2 * y * y) * (1.0 - beta * beta));
    [
        [4.0 * eps * dx2, 0.0, 0.0],
        [0.0, 4.0 * eps * dy2, 0.0],
        [0.0, 0.0, jbb],
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct QfimAngleReport {
    pub j: FisherReport,
    /// Rotation angle of the beta-optimal projector pair.
    pub theta_prime: f64,
    /// Coefficients over `{e1, e2}` of the two projector pairs: the
    /// principal-length pair (rotated by `theta + pi/4`) and the
    /// orientation pair (rotated by `theta`); mutually unbiased.
    pub lambda_basis: [[f64; 2]; 2],
    pub theta_basis: [[f64; 2]; 2],
}

/// QFIM over `(Lambda1, Lambda2, theta)` for an isotropic PSF
/// (`dkx = dky`, `r = 0`). Exactly zero orientation information at
/// `Lambda1 = Lambda2`.
pub fn qfim_angle(
    dk: &DeltaK2d,
    lambda1: f64,
    lambda2: f64,
    theta: f64,
    eps: f64,
) -> Result<QfimAngleReport> {
    if (dk.dkx - dk.dky).abs() > 1e-9 * dk.dkx.max(dk.dky) || dk.r.abs() > 1e-9 {
        return Err(Error::AnisotropicPsf {
            dkx: dk.dkx,
            dky: dk.dky,
        });
    }
    let d2 = dk.dkx * dk.dkx;
    let (l1s, l2s) = (lambda1 * lambda1, lambda2 * lambda2);
    let (c, s) = (theta.cos(), theta.sin());
    // covariance entries and their parameter derivatives
    let c11 = c * c * l1s + s * s * l2s;
    let c22 = s * s * l1s + c * c * l2s;
    let c12 = c * s * (l1s - l2s);
    let builders: [(f64, f64, f64); 4] = [
        (c11, c22, c12),
        (2.0 * lambda1 * c * c, 2.0 * lambda1 * s * s, 2.0 * lambda1 * c * s),
        (2.0 * lambda2 * s * s, 2.0 * lambda2 * c * c, -2.0 * lambda2 * c * s),
        (
            -2.0 * c * s * (l1s - l2s),
            2.0 * c * s * (l1s - l2s),
            (c * c - s * s) * (l1s - l2s),
        ),
    ];
    let to_op = |&(a11, a22, a12): &(f64, f64, f64)| -> Op2 {
        // r = 0: ci = d2 (a11 + a22), cz = 2 d2 a12, cx = d2 (a11 - a22)
        Op2 {
            a: 0.5 * d2 * ((a11 + a22) + 2.0 * a12),
            b: 0.5 * d2 * ((a11 + a22) - 2.0 * a12),
            c: 0.5 * d2 * (a11 - a22),
        }
    };
    let state = to_op(&builders[0]);
    let derivs = [
        to_op(&builders[1]),
        to_op(&builders[2]),
        to_op(&builders[3]),
    ];
    let j = sld_qfim(state, &derivs, eps);

    // beta-optimal rotation from the (X, Y, beta) chart;
    // beta (X^2 - Y^2) / (2 X Y) = c12 (c11 - c22) / (2 c11 c22)
    let theta_prime = if c11 * c22 > 1e-300 {
        0.5 * (c12 * (c11 - c22) / (2.0 * c11 * c22)).atan()
    } else {
        0.0
    };

    let rot = |t: f64| -> [[f64; 2]; 2] {
        [[t.cos(), -t.sin()], [t.sin(), t.cos()]]
    };
    Ok(QfimAngleReport {
        j: FisherReport {
            params: vec![ParamLabel::Lambda1, ParamLabel::Lambda2, ParamLabel::Theta],
            matrix: j.iter().map(|r| r.to_vec()).collect(),
            regime: Regime::LimitFormula,
            epsilon: eps,
            size: None,
            truncation: None,
        },
        theta_prime,
        lambda_basis: rot(theta + std::f64::consts::FRAC_PI_4),
        theta_basis: rot(theta),
    })
}

/// App-C closed form `diag(4 eps dk^2, 4 eps dk^2,
/// 4 eps dk^2 (L1^2 - L2^2)^2 / (L1^2 + L2^2))`.
pub fn qfim_angle_closed_form(dk: f64, lambda1: f64, lambda2: f64, eps: f64) -> [f64; 3] {
    let d2 = dk * dk;
    let (l1s, l2s) = (lambda1 * lambda1, lambda2 * lambda2);
    [
        4.0 * eps * d2,
        4.0 * eps * d2,
        4.0 * eps * d2 * (l1s - l2s) * (l1s - l2s) / (l1s + l2s),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dk(dkx: f64, dky: f64) -> DeltaK2d {
        DeltaK2d { dkx, dky, r: 0.0 }
    }

    #[test]
    fn sld_reproduces_closed_form_xyb() {
        let d = dk(0.5, 0.4);
        let eps = 0.3;
        for (x, y, beta) in [(0.7, 0.5, 0.3), (1.2, 0.4, -0.6), (0.33, 0.9, 0.0)] {
            let rep = qfim_rho2(&d, x, y, beta, eps).unwrap();
            let j = rep.j_xyb.unwrap();
            let closed = qfim_xyb_closed_form(&d, x, y, beta, eps);
            for i in 0..3 {
                for jj in 0..3 {
                    assert!(
                        (j.matrix[i][jj] - closed[i][jj]).abs()
                            < 1e-8 * closed[i][i].max(closed[jj][jj]).max(1e-12),
                        "entry ({i},{jj}): {} vs {}",
                        j.matrix[i][jj],
                        closed[i][jj]
                    );
                }
            }
            j.validate().unwrap();
        }
    }

    #[test]
    fn singular_beta_returns_pure_block() {
        let d = DeltaK2d {
            dkx: 0.5,
            dky: 0.25,
            r: 0.1,
        };
        let rep = qfim_rho2(&d, 0.5, 0.5, 1.0, 0.2).unwrap();
        assert!(rep.singular);
        assert!(rep.j_xyb.is_none());
        assert_relative_eq!(rep.j_xy.matrix[0][0], 4.0 * 0.2 * 0.25, epsilon = 1e-12);
        assert_relative_eq!(
            rep.j_xy.matrix[0][1],
            4.0 * 0.2 * 0.1 * 0.5 * 0.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn invalid_beta_rejected() {
        let d = dk(0.5, 0.5);
        assert!(matches!(
            qfim_rho2(&d, 0.5, 0.5, 1.5, 0.1),
            Err(Error::InvalidBeta(_))
        ));
    }

    #[test]
    fn angle_form_matches_closed_form() {
        let d = dk(0.5, 0.5);
        let eps = 0.7;
        // (the Lambda2 = 0 boundary is covered separately: there the
        // Lambda2 derivative of the covariance vanishes identically)
        for (l1, l2, th) in [(0.8, 0.3, 0.4), (1.0, 0.999, -0.2), (0.6, 0.05, 1.0)] {
            let rep = qfim_angle(&d, l1, l2, th, eps).unwrap();
            let closed = qfim_angle_closed_form(0.5, l1, l2, eps);
            for i in 0..3 {
                assert!(
                    (rep.j.matrix[i][i] - closed[i]).abs() < 1e-8 * closed[0].max(1e-12),
                    "diag {i}: {} vs {}",
                    rep.j.matrix[i][i],
                    closed[i]
                );
                for jj in 0..3 {
                    if i != jj {
                        assert!(rep.j.matrix[i][jj].abs() < 1e-8 * closed[0]);
                    }
                }
            }
        }
    }

    #[test]
    fn isotropic_image_has_exactly_zero_theta_information() {
        let d = dk(0.5, 0.5);
        let rep = qfim_angle(&d, 0.7, 0.7, 0.3, 0.5).unwrap();
        assert_eq!(rep.j.matrix[2][2], 0.0);
    }

    #[test]
    fn lambda2_zero_theta_entry() {
        let d = dk(0.5, 0.5);
        let rep = qfim_angle(&d, 0.7, 0.0, 0.0, 0.5).unwrap();
        // 4 eps dk^2 L1^2 when L2 = 0
        assert_relative_eq!(
            rep.j.matrix[2][2],
            4.0 * 0.5 * 0.25 * 0.49,
            max_relative = 1e-10
        );
    }

    #[test]
    fn anisotropy_rejected_for_angle_form() {
        let d = dk(0.5, 0.4);
        assert!(matches!(
            qfim_angle(&d, 0.7, 0.3, 0.0, 0.5),
            Err(Error::AnisotropicPsf { .. })
        ));
    }

    #[test]
    fn measurement_bases_mutually_unbiased() {
        let d = dk(0.5, 0.5);
        let rep = qfim_angle(&d, 0.8, 0.3, 0.37, 0.5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let ov: f64 = (0..2)
                    .map(|k| rep.lambda_basis[k][i] * rep.theta_basis[k][j])
                    .sum();
                assert_relative_eq!(ov * ov, 0.5, epsilon = 1e-12);
            }
        }
    }
}
