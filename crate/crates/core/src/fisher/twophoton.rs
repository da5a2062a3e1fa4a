//! Strong-source eighth-moment analysis in the two-photon subspace.
//!
//! For strong sources the photon-count-resolved derivative-mode basis is
//! not optimal for high moments: inside the two-photon subspace spanned
//! by `psi^dag b4^dag |0>` and `(b2^dag)^2 |0> / sqrt2`, the eighth-moment
//! probability operator acquires an off-diagonal term, and the subspace
//! QFI strictly exceeds the diagonal projector FI whenever that term is
//! nonzero. Coefficients come out of the thermal Wick machinery.

use serde::Serialize;

use crate::basis::DerivativeBasis;
use crate::error::{Error, Result};
use crate::prob::wick::{wick_general, ThermalMoments};
use crate::psf::factorial;
use crate::scene::{moments, Scene};

#[derive(Debug, Clone, Serialize)]
pub struct TwoPhotonReport {
    pub a44: f64,
    pub a422: f64,
    pub a2222: f64,
    /// FI wrt `M_8` of the diagonal (photon-count-resolved) projector in
    /// the two-photon subspace.
    pub diagonal_fi: f64,
    /// QFI wrt `M_8` maximized over measurements inside the subspace.
    pub subspace_qfi: f64,
    /// `subspace_qfi / diagonal_fi`.
    pub improvement_ratio: f64,
    /// Strict improvement detected (requires a nondegenerate scene).
    pub improvement: bool,
    /// Ratio of the full `F_88` (all photon sectors, subspace-optimal
    /// two-photon measurement) to the fully diagonal `F_88`; tends to 1
    /// for weak sources.
    pub full_ratio: f64,
}

/// Evaluates the two-photon-subspace coefficients and both sides of the
/// comparison for a strong 1D scene.
pub fn two_photon_improvement(
    scene: &Scene,
    basis: &DerivativeBasis,
    eps: f64,
) -> Result<TwoPhotonReport> {
    if scene.size() == 0.0 {
        return Err(Error::DegenerateScene("zero-size scene".into()));
    }
    if basis.lmax() < 4 {
        return Err(Error::OrderTooHigh {
            order: 4,
            lmax: basis.lmax(),
        });
    }
    let mv = moments(scene, 8)?;
    let m: Vec<f64> = (0..=8).map(|k| mv.radicand(k)).collect();
    if m[8] == 0.0 {
        return Err(Error::DegenerateScene("eighth moment vanishes".into()));
    }
    let tm = ThermalMoments::new(eps, m.clone());
    let q2 = basis.q(2);
    let q4 = basis.q(4);

    let a44 = q4 * q4 * wick_general(&[4, 0], &[4, 0], &tm)?;
    let a422 = q4 * (q2 * q2 / 4.0) * wick_general(&[4, 0], &[2, 2], &tm)?;
    let a2222 = (q2 * q2 / 4.0).powi(2) * wick_general(&[2, 2], &[2, 2], &tm)?;

    // dQ8/dM8 of the one-dressed-photon projector
    let m8_mag = mv.magnitude(8);
    let u = 1.0 + eps;
    let g = q4 * q4 * 8.0 * m8_mag.powi(7) * eps * eps / (u * u);

    let det = a44 * a2222 - a422 * a422;
    let diagonal_fi = g * g / a44;
    let (subspace_qfi, improvement) = if det > 0.0 && a44 > 0.0 && a2222 > 0.0 {
        let qfi = g * g * (det + a2222 * a2222) / ((a44 + a2222) * det);
        (qfi, a422.abs() > 1e-14 * (a44 * a2222).sqrt())
    } else {
        // the subspace operator is (numerically) rank one: no room to
        // improve inside it
        (diagonal_fi, false)
    };

    // full F_88 over the photon-count-resolved tower, with and without
    // the two-photon replacement
    let mut full_diag = 0.0;
    for k in 0..=10usize {
        let mut a = vec![0usize; k + 1];
        a[0] = 4;
        let w = wick_general(&a, &a, &tm)?;
        if w <= 0.0 {
            continue;
        }
        let q8_k = q4 * q4 * w / factorial(k);
        let der_k = q4 * q4 * 8.0 * m8_mag.powi(7) * eps.powi(k as i32 + 1) / u.powi(k as i32 + 1);
        full_diag += der_k * der_k / q8_k;
    }
    let full_sub = full_diag - diagonal_fi + subspace_qfi;

    Ok(TwoPhotonReport {
        a44,
        a422,
        a2222,
        diagonal_fi,
        subspace_qfi,
        improvement_ratio: subspace_qfi / diagonal_fi,
        improvement,
        full_ratio: full_sub / full_diag,
    })
}

/// Closed forms of the three coefficients (as rational functions of the
/// moments), used to cross-check the Wick evaluation.
pub fn coefficients_closed_form(
    q2: f64,
    q4: f64,
    eps: f64,
    m: &[f64],
) -> (f64, f64, f64) {
    let u = 1.0 + eps;
    let e2 = eps * eps / (u * u);
    let a44 = q4 * q4 * e2 * ((m[8] - m[4] * m[4]) + 2.0 * m[4] * m[4] / u);
    let a422 = q4
        * (q2 * q2 / 4.0)
        * 2.0
        * e2
        * ((m[6] * m[2] - m[4] * m[2] * m[2]) + m[4] * m[2] * m[2] / u);
    let a2222 = (q2 * q2 / 4.0).powi(2)
        * (2.0 * eps * eps / u * m[4] * m[4] - 4.0 * eps.powi(3) / (u * u) * m[4] * m[2] * m[2]
            + 2.0 * eps.powi(4) / (u * u * u) * m[2].powi(4));
    (a44, a422, a2222)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::linalg::eig_sym_2x2;
    use crate::psf::PsfModel;
    use approx::assert_relative_eq;

    fn setup() -> (Scene, DerivativeBasis) {
        // asymmetric four-point scene with all moments alive
        let scene = Scene::line(
            &[(-0.5, 0.3), (-0.1, 0.2), (0.2, 0.3), (0.55, 0.2)],
            1.0,
        )
        .unwrap();
        let basis = DerivativeBasis::build(&PsfModel::gaussian(1.0), 6, 0.0).unwrap();
        (scene, basis)
    }

    #[test]
    fn wick_coefficients_match_closed_forms() {
        let (scene, basis) = setup();
        for eps in [0.3, 1.0, 3.0] {
            let r = two_photon_improvement(&scene, &basis, eps).unwrap();
            let mv = moments(&scene, 8).unwrap();
            let m: Vec<f64> = (0..=8).map(|k| mv.radicand(k)).collect();
            let (a44, a422, a2222) =
                coefficients_closed_form(basis.q(2), basis.q(4), eps, &m);
            assert_relative_eq!(r.a44, a44, max_relative = 1e-10);
            assert_relative_eq!(r.a422, a422, max_relative = 1e-10);
            assert_relative_eq!(r.a2222, a2222, max_relative = 1e-10);
        }
    }

    #[test]
    fn subspace_qfi_matches_numeric_sld() {
        let (scene, basis) = setup();
        let r = two_photon_improvement(&scene, &basis, 1.0).unwrap();
        // numeric SLD on the unnormalized 2x2 operator
        let mv = moments(&scene, 8).unwrap();
        let g = basis.q(4) * basis.q(4) * 8.0 * mv.magnitude(8).powi(7) / 4.0;
        let ([l1, l2], rot) = eig_sym_2x2(r.a44, r.a2222, r.a422);
        // derivative diag(g, 0) rotated
        let mut j = 0.0;
        let d = [[g, 0.0], [0.0, 0.0]];
        let mut dp = [[0.0; 2]; 2];
        for i in 0..2 {
            for jj in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        dp[i][jj] += rot[k][i] * d[k][l] * rot[l][jj];
                    }
                }
            }
        }
        let lam = [l1, l2];
        for i in 0..2 {
            for k in 0..2 {
                let den = lam[i] + lam[k];
                if den > 1e-300 {
                    j += 2.0 * dp[i][k] * dp[i][k] / den;
                }
            }
        }
        assert_relative_eq!(r.subspace_qfi, j, max_relative = 1e-9);
    }

    #[test]
    fn strict_improvement_at_unit_strength() {
        let (scene, basis) = setup();
        let r = two_photon_improvement(&scene, &basis, 1.0).unwrap();
        assert!(r.improvement);
        assert!(r.improvement_ratio > 1.0 + 1e-3, "ratio {}", r.improvement_ratio);
    }

    #[test]
    fn weak_source_improvement_fades() {
        let (scene, basis) = setup();
        let weak = two_photon_improvement(&scene, &basis, 1e-4).unwrap();
        let strong = two_photon_improvement(&scene, &basis, 1.0).unwrap();
        assert!(weak.full_ratio - 1.0 < 1e-3, "weak {}", weak.full_ratio);
        assert!(strong.full_ratio > weak.full_ratio);
    }

    #[test]
    fn degenerate_scene_rejected() {
        let basis = DerivativeBasis::build(&PsfModel::gaussian(1.0), 6, 0.0).unwrap();
        let single = Scene::line(&[(0.3, 1.0)], 1.0).unwrap();
        assert!(matches!(
            two_photon_improvement(&single, &basis, 1.0),
            Err(Error::DegenerateScene(_))
        ));
    }
}
