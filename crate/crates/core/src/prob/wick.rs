//! Thermal Gaussian-field moment expectations.
//!
//! Every expectation of the form
//! `E[e^{-|A0|^2} A^(a1)...A^(ap) conj(A^(b1))...conj(A^(bp))]`, with
//! `A^(l) = sum_j alpha_j (x_j - ref)^l` over independent complex
//! Gaussians of mean photon number `Gamma_j`, reduces by the tilting
//! identity to a pairing sum over the modified covariance
//! `C(a,b) = eps m_{a+b} - eps^2 m_a m_b / (1+eps)` with an overall
//! factor `1/(1+eps)`, where `m_k` are the signed moment radicands.
//! The closed forms below are what the moment expansions of the outcome
//! probabilities consume; the permanent route covers small general
//! patterns and serves as their independent check.

use crate::error::{Error, Result};
use crate::psf::factorial;

/// Moment radicands `m_k` about a reference point together with the mean
/// photon number; the inputs to every thermal expectation.
#[derive(Debug, Clone)]
pub struct ThermalMoments {
    pub epsilon: f64,
    /// `m[k] = sum_j gamma_j (x_j - ref)^k`, with `m[0] = 1`.
    pub m: Vec<f64>,
}

impl ThermalMoments {
    pub fn new(epsilon: f64, m: Vec<f64>) -> ThermalMoments {
        assert!(!m.is_empty() && (m[0] - 1.0).abs() < 1e-12, "m[0] must be 1");
        ThermalMoments { epsilon, m }
    }

    /// Tilted pair covariance `E'[A^(a) conj(A^(b))]`.
    fn cov(&self, a: usize, b: usize) -> f64 {
        let e = self.epsilon;
        e * self.m[a + b] - e * e * self.m[a] * self.m[b] / (1.0 + e)
    }
}

/// The five closed-form patterns used by the probability expansions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WickPattern {
    /// `E[e^{-|A0|^2} |A0|^{2k}]`
    VacuumPower { k: usize },
    /// `E[e^{-|A0|^2} (A0*)^{k-1} A1* A0^k]`, k >= 1
    FirstCross { k: usize },
    /// `E[e^{-|A0|^2} |A0|^{2(k-1)} |A1|^2]`, k >= 1
    AbsFirstPower { k: usize },
    /// `E[e^{-|A0|^2} |A0|^{2(k-1)} A2* A0]`, k >= 1
    SecondCross { k: usize },
    /// `E[e^{-|A0|^2} (A0*)^{k-2} (A1*)^2 A0^k]`, k >= 2
    FirstSquared { k: usize },
}

/// Evaluates a supported pattern in closed form.
pub fn wick_expectation(pattern: WickPattern, tm: &ThermalMoments) -> Result<f64> {
    let e = tm.epsilon;
    let u = 1.0 + e;
    match pattern {
        WickPattern::VacuumPower { k } => Ok(factorial(k) * e.powi(k as i32) / u.powi(k as i32 + 1)),
        WickPattern::FirstCross { k } => {
            if k < 1 {
                return Err(Error::UnsupportedPattern("FirstCross needs k >= 1".into()));
            }
            Ok(factorial(k) * e.powi(k as i32) * tm.m[1] / u.powi(k as i32 + 1))
        }
        WickPattern::AbsFirstPower { k } => {
            if k < 1 {
                return Err(Error::UnsupportedPattern("AbsFirstPower needs k >= 1".into()));
            }
            let m1sq = tm.m[1] * tm.m[1];
            Ok(factorial(k - 1) * e.powi(k as i32) * (tm.m[2] - m1sq) / u.powi(k as i32)
                + factorial(k) * e.powi(k as i32) * m1sq / u.powi(k as i32 + 1))
        }
        WickPattern::SecondCross { k } => {
            if k < 1 {
                return Err(Error::UnsupportedPattern("SecondCross needs k >= 1".into()));
            }
            Ok(factorial(k) * e.powi(k as i32) * tm.m[2] / u.powi(k as i32 + 1))
        }
        WickPattern::FirstSquared { k } => {
            if k < 2 {
                return Err(Error::UnsupportedPattern("FirstSquared needs k >= 2".into()));
            }
            Ok(factorial(k) * e.powi(k as i32) * tm.m[1] * tm.m[1] / u.powi(k as i32 + 1))
        }
    }
}

/// General small-pattern evaluator:
/// `E[e^{-|A0|^2} prod_i A^(a_i) prod_j conj(A^(b_j))]` via the permanent
/// of the tilted covariance. Limited to 12 factors per side.
pub fn wick_general(a_orders: &[usize], b_orders: &[usize], tm: &ThermalMoments) -> Result<f64> {
    if a_orders.len() != b_orders.len() {
        return Ok(0.0); // circular Gaussian: unbalanced products vanish
    }
    let n = a_orders.len();
    if n == 0 {
        return Ok(1.0 / (1.0 + tm.epsilon));
    }
    if n > 12 {
        return Err(Error::UnsupportedPattern(format!(
            "pattern with {n} pairs exceeds the permanent-size limit"
        )));
    }
    let mut mat = vec![0.0f64; n * n];
    for (i, &a) in a_orders.iter().enumerate() {
        for (j, &b) in b_orders.iter().enumerate() {
            if a + b >= tm.m.len() {
                return Err(Error::UnsupportedPattern(format!(
                    "pattern needs moment m_{} beyond the supplied table",
                    a + b
                )));
            }
            mat[i * n + j] = tm.cov(a, b);
        }
    }
    Ok(permanent(&mat, n) / (1.0 + tm.epsilon))
}

/// Permanent by Ryser's formula with subset enumeration.
fn permanent(mat: &[f64], n: usize) -> f64 {
    let full: u32 = 1 << n;
    let mut total = 0.0;
    for s in 1..full {
        let bits = s.count_ones() as i32;
        let mut prod = 1.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                if s & (1 << j) != 0 {
                    row += mat[i * n + j];
                }
            }
            prod *= row;
        }
        let sign = if (n as i32 - bits) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * prod;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tm(eps: f64) -> ThermalMoments {
        // two-point scene {-0.4 (w 0.3), +0.6 (w 0.7)} about its centroid
        let pts = [(-0.4f64, 0.3f64), (0.6, 0.7)];
        let cx: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let m: Vec<f64> = (0..=10)
            .map(|k| pts.iter().map(|p| p.1 * (p.0 - cx).powi(k)).sum())
            .collect();
        ThermalMoments::new(eps, m)
    }

    fn tm_offset(eps: f64, off: f64) -> ThermalMoments {
        let pts = [(-0.4f64, 0.3f64), (0.6, 0.7)];
        let cx: f64 = pts.iter().map(|p| p.0 * p.1).sum::<f64>() + off;
        let m: Vec<f64> = (0..=10)
            .map(|k| pts.iter().map(|p| p.1 * (p.0 - cx).powi(k)).sum())
            .collect();
        ThermalMoments::new(eps, m)
    }

    #[test]
    fn vacuum_power_values() {
        let t = tm(0.5);
        // k = 1, eps = 0.5 -> 0.5 / 2.25
        assert_relative_eq!(
            wick_expectation(WickPattern::VacuumPower { k: 1 }, &t).unwrap(),
            0.5 / 2.25,
            max_relative = 1e-14
        );
        // k = 0 -> 1/(1+eps)
        assert_relative_eq!(
            wick_expectation(WickPattern::VacuumPower { k: 0 }, &t).unwrap(),
            1.0 / 1.5,
            max_relative = 1e-14
        );
    }

    #[test]
    fn closed_forms_match_permanent() {
        for eps in [0.1, 1.0] {
            for off in [0.0, 0.07] {
                let t = tm_offset(eps, off);
                for k in 1..=4usize {
                    let a: Vec<usize> = vec![0; k];
                    let b = a.clone();
                    assert_relative_eq!(
                        wick_general(&a, &b, &t).unwrap(),
                        wick_expectation(WickPattern::VacuumPower { k }, &t).unwrap(),
                        max_relative = 1e-12
                    );

                    // |A0|^{2(k-1)} |A1|^2
                    let mut a1 = vec![0usize; k - 1];
                    a1.push(1);
                    let b1 = a1.clone();
                    assert_relative_eq!(
                        wick_general(&a1, &b1, &t).unwrap(),
                        wick_expectation(WickPattern::AbsFirstPower { k }, &t).unwrap(),
                        max_relative = 1e-12
                    );

                    // |A0|^{2(k-1)} A2* A0
                    let a2 = vec![0usize; k];
                    let mut b2 = vec![0usize; k - 1];
                    b2.push(2);
                    assert_relative_eq!(
                        wick_general(&a2, &b2, &t).unwrap(),
                        wick_expectation(WickPattern::SecondCross { k }, &t).unwrap(),
                        max_relative = 1e-12
                    );

                    // (A0*)^{k-1} A1* A0^k
                    let a3 = vec![0usize; k];
                    let mut b3 = vec![0usize; k - 1];
                    b3.push(1);
                    assert_relative_eq!(
                        wick_general(&a3, &b3, &t).unwrap(),
                        wick_expectation(WickPattern::FirstCross { k }, &t).unwrap(),
                        max_relative = 1e-12,
                        epsilon = 1e-15
                    );

                    if k >= 2 {
                        let a4 = vec![0usize; k];
                        let mut b4 = vec![0usize; k - 2];
                        b4.extend([1, 1]);
                        assert_relative_eq!(
                            wick_general(&a4, &b4, &t).unwrap(),
                            wick_expectation(WickPattern::FirstSquared { k }, &t).unwrap(),
                            max_relative = 1e-12,
                            epsilon = 1e-15
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn centered_frame_kills_first_cross() {
        let t = tm(0.7);
        assert!(wick_expectation(WickPattern::FirstCross { k: 2 }, &t)
            .unwrap()
            .abs()
            < 1e-15);
    }

    #[test]
    fn unbalanced_patterns_vanish() {
        let t = tm(0.5);
        assert_eq!(wick_general(&[0, 0], &[0], &t).unwrap(), 0.0);
    }

    #[test]
    fn oversized_pattern_rejected() {
        let t = tm(0.5);
        let a = vec![0usize; 13];
        assert!(matches!(
            wick_general(&a, &a, &t),
            Err(Error::UnsupportedPattern(_))
        ));
    }
}
