//! Monte Carlo coherent-state oracle for outcome probabilities.
//!
//! Samples the source amplitudes `alpha_j ~ CN(0, Gamma_j)` of the
//! thermal P-representation and averages the exact coherent-state
//! expectation of each outcome. Serves as the independent check for
//! every analytic probability path.
//!
//! Sampling is split into fixed-size blocks with one counter-based RNG
//! stream per block, so results are bit-identical for a given seed
//! regardless of thread count.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::Basis2D;
use crate::error::{Error, Result};
use crate::povm::{Dressing, ModeRef, OutcomeOp, Povm, PovmContext};
use crate::psf::{factorial, inner_product, inner_product_window, GridFn};
use crate::scene::Scene;

const BLOCK: usize = 8192;

#[derive(Debug, Clone)]
pub struct McResult {
    pub labels: Vec<String>,
    pub p: Vec<f64>,
    pub se: Vec<f64>,
    pub bucket: f64,
    pub bucket_se: f64,
    pub samples: usize,
    /// Set when per-count dressings leave more than 1e-6 of the
    /// photon-number tail outside the named outcomes.
    pub truncation_warning: bool,
}

/// Per-outcome evaluation plan against the J source modes.
enum Plan {
    Projector {
        /// `(v, psi_j)` per source
        amp: Vec<Complex64>,
        /// `(b0, psi_j)` per source, for dressing
        fund: Vec<Complex64>,
        dressing: Dressing,
    },
    Parity1d {
        /// `(psi_j, P psi_j')`
        gp: Vec<Vec<Complex64>>,
        sx: f64,
    },
    Parity2d {
        gx: Vec<Vec<Complex64>>,
        gy: Vec<Vec<Complex64>>,
        gxy: Vec<Vec<Complex64>>,
        sx: f64,
        sy: f64,
    },
    Pixel {
        /// `int_pix conj(psi_j) psi_j'`
        w: Vec<Vec<Complex64>>,
    },
}

fn quad_form(m: &[Vec<Complex64>], alpha: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, aj) in alpha.iter().enumerate() {
        for (jp, ajp) in alpha.iter().enumerate() {
            acc += aj.conj() * ajp * m[j][jp];
        }
    }
    acc
}

impl Plan {
    /// `<psi_alpha| E |psi_alpha>` given the sampled amplitudes and the
    /// total field norm `||g||^2`.
    fn eval(&self, alpha: &[Complex64], g_norm_sq: f64) -> f64 {
        match self {
            Plan::Projector {
                amp,
                fund,
                dressing,
            } => {
                let a: Complex64 = amp.iter().zip(alpha).map(|(b, al)| b * al).sum();
                let asq = a.norm_sqr();
                match dressing {
                    Dressing::None => asq * (-g_norm_sq).exp(),
                    Dressing::PerCount(k) => {
                        let b: Complex64 = fund.iter().zip(alpha).map(|(f, al)| f * al).sum();
                        asq * b.norm_sqr().powi(*k as i32) / factorial(*k) * (-g_norm_sq).exp()
                    }
                    Dressing::Summed => {
                        let b: Complex64 = fund.iter().zip(alpha).map(|(f, al)| f * al).sum();
                        asq * (b.norm_sqr() - g_norm_sq).exp()
                    }
                }
            }
            Plan::Parity1d { gp, sx } => {
                let cross = quad_form(gp, alpha).re;
                0.5 * (1.0 + sx * (cross - g_norm_sq).exp())
            }
            Plan::Parity2d {
                gx,
                gy,
                gxy,
                sx,
                sy,
            } => {
                let px = (quad_form(gx, alpha).re - g_norm_sq).exp();
                let py = (quad_form(gy, alpha).re - g_norm_sq).exp();
                let pxy = (quad_form(gxy, alpha).re - g_norm_sq).exp();
                0.25 * (1.0 + sx * px + sy * py + sx * sy * pxy)
            }
            Plan::Pixel { w } => quad_form(w, alpha).re * (-g_norm_sq).exp(),
        }
    }
}

fn source_modes_1d(scene: &Scene, povm: &Povm) -> Result<(Vec<GridFn>, Vec<Plan>)> {
    let basis = povm.basis_1d()?;
    let psf = basis.psf();
    let shifted: Vec<GridFn> = scene
        .x
        .iter()
        .map(|&xj| psf.eval_derivative_shifted(0, psf.grid(), xj))
        .collect::<Result<_>>()?;
    let j = shifted.len();
    let mut plans = Vec::with_capacity(povm.outcomes.len());
    for o in &povm.outcomes {
        let plan = match &o.op {
            OutcomeOp::ModeProjector { coeffs } => {
                let mut amp = vec![Complex64::new(0.0, 0.0); j];
                for (jj, s) in shifted.iter().enumerate() {
                    for (m, c) in coeffs {
                        let l = match m {
                            ModeRef::One(l) => *l,
                            _ => return Err(Error::InvalidInput("2D mode in 1D frame".into())),
                        };
                        amp[jj] += c * inner_product(basis.mode(l), s)?;
                    }
                }
                let mut fund = vec![Complex64::new(0.0, 0.0); j];
                if !matches!(o.dressing, Dressing::None) {
                    for (jj, s) in shifted.iter().enumerate() {
                        fund[jj] = inner_product(basis.mode(0), s)?;
                    }
                }
                Plan::Projector {
                    amp,
                    fund,
                    dressing: o.dressing,
                }
            }
            OutcomeOp::ParitySector { sx, sy: None } => {
                let mut gp = vec![vec![Complex64::new(0.0, 0.0); j]; j];
                for a in 0..j {
                    for b in 0..j {
                        gp[a][b] = inner_product(&shifted[a], &shifted[b].reflected()?)?;
                    }
                }
                Plan::Parity1d {
                    gp,
                    sx: *sx as f64,
                }
            }
            OutcomeOp::ParitySector { .. } => {
                return Err(Error::InvalidInput("2D parity in 1D frame".into()))
            }
            OutcomeOp::Pixel { lo, hi } => {
                let mut w = vec![vec![Complex64::new(0.0, 0.0); j]; j];
                for a in 0..j {
                    for b in 0..j {
                        w[a][b] = inner_product_window(&shifted[a], &shifted[b], *lo, *hi)?;
                    }
                }
                Plan::Pixel { w }
            }
        };
        plans.push(plan);
    }
    Ok((shifted, plans))
}

fn source_modes_2d(scene: &Scene, povm: &Povm) -> Result<(Vec<Vec<Complex64>>, Vec<Plan>)> {
    let basis: &Basis2D = povm.basis_2d()?;
    let psfx = basis.bx.psf();
    let psfy = basis.by.psf();
    let fx: Vec<GridFn> = scene
        .x
        .iter()
        .map(|&v| psfx.eval_derivative_shifted(0, psfx.grid(), v))
        .collect::<Result<_>>()?;
    let fy: Vec<GridFn> = scene
        .y
        .iter()
        .map(|&v| psfy.eval_derivative_shifted(0, psfy.grid(), v))
        .collect::<Result<_>>()?;
    let j = fx.len();
    // 2D source Gram factorizes
    let mut gram = vec![vec![Complex64::new(0.0, 0.0); j]; j];
    for a in 0..j {
        for b in 0..j {
            gram[a][b] = inner_product(&fx[a], &fx[b])? * inner_product(&fy[a], &fy[b])?;
        }
    }
    let mut plans = Vec::with_capacity(povm.outcomes.len());
    for o in &povm.outcomes {
        let plan = match &o.op {
            OutcomeOp::ModeProjector { coeffs } => {
                let mut amp = vec![Complex64::new(0.0, 0.0); j];
                for jj in 0..j {
                    for (m, c) in coeffs {
                        let (k, l) = match m {
                            ModeRef::Two(k, l) => (*k, *l),
                            _ => return Err(Error::InvalidInput("1D mode in 2D frame".into())),
                        };
                        amp[jj] += c
                            * inner_product(basis.bx.mode(k), &fx[jj])?
                            * inner_product(basis.by.mode(l), &fy[jj])?;
                    }
                }
                let mut fund = vec![Complex64::new(0.0, 0.0); j];
                if !matches!(o.dressing, Dressing::None) {
                    for jj in 0..j {
                        fund[jj] = inner_product(basis.bx.mode(0), &fx[jj])?
                            * inner_product(basis.by.mode(0), &fy[jj])?;
                    }
                }
                Plan::Projector {
                    amp,
                    fund,
                    dressing: o.dressing,
                }
            }
            OutcomeOp::ParitySector { sx, sy: Some(sy) } => {
                let mut gx = vec![vec![Complex64::new(0.0, 0.0); j]; j];
                let mut gy = vec![vec![Complex64::new(0.0, 0.0); j]; j];
                let mut gxy = vec![vec![Complex64::new(0.0, 0.0); j]; j];
                for a in 0..j {
                    for b in 0..j {
                        let xx = inner_product(&fx[a], &fx[b])?;
                        let yy = inner_product(&fy[a], &fy[b])?;
                        let xr = inner_product(&fx[a], &fx[b].reflected()?)?;
                        let yr = inner_product(&fy[a], &fy[b].reflected()?)?;
                        gx[a][b] = xr * yy;
                        gy[a][b] = xx * yr;
                        gxy[a][b] = xr * yr;
                    }
                }
                Plan::Parity2d {
                    gx,
                    gy,
                    gxy,
                    sx: *sx as f64,
                    sy: *sy as f64,
                }
            }
            OutcomeOp::ParitySector { sy: None, .. } => {
                return Err(Error::InvalidInput("1D parity in 2D frame".into()))
            }
            OutcomeOp::Pixel { .. } => {
                return Err(Error::UnsupportedBase("pixel outcomes are 1D-only".into()))
            }
        };
        plans.push(plan);
    }
    Ok((gram, plans))
}

struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn new() -> Kahan {
        Kahan { sum: 0.0, c: 0.0 }
    }
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Unbiased probability estimates with standard errors.
pub fn mc_gaussian_oracle(
    scene: &Scene,
    povm: &Povm,
    samples: usize,
    seed: u64,
) -> Result<McResult> {
    if samples < 10_000 {
        return Err(Error::InvalidInput("need at least 1e4 samples".into()));
    }
    let j = scene.len();
    let gamma_amp: Vec<f64> = scene
        .gamma
        .iter()
        .map(|g| (scene.epsilon * g / 2.0).sqrt())
        .collect();

    let (gram, plans): (Vec<Vec<Complex64>>, Vec<Plan>) = match (&povm.context, scene.dimension) {
        (PovmContext::OneD(_), 1) => {
            let (shifted, plans) = source_modes_1d(scene, povm)?;
            let mut gram = vec![vec![Complex64::new(0.0, 0.0); j]; j];
            for a in 0..j {
                for b in 0..j {
                    gram[a][b] = inner_product(&shifted[a], &shifted[b])?;
                }
            }
            (gram, plans)
        }
        (PovmContext::TwoD(_), 2) => source_modes_2d(scene, povm)?,
        _ => {
            return Err(Error::InvalidInput(
                "scene and measurement dimensions disagree".into(),
            ))
        }
    };

    let n_out = plans.len();
    let blocks = samples.div_ceil(BLOCK);

    type BlockPartial = (Vec<f64>, Vec<f64>, f64, f64, usize);
    let partials: Vec<BlockPartial> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block as u64 + 1);
            let count = BLOCK.min(samples - block * BLOCK);
            let mut sums: Vec<Kahan> = (0..n_out).map(|_| Kahan::new()).collect();
            let mut sq: Vec<Kahan> = (0..n_out).map(|_| Kahan::new()).collect();
            let mut bsum = Kahan::new();
            let mut bsq = Kahan::new();
            let mut alpha = vec![Complex64::new(0.0, 0.0); j];
            for _ in 0..count {
                for (a, ga) in alpha.iter_mut().zip(&gamma_amp) {
                    let re: f64 = sample_standard_normal(&mut rng);
                    let im: f64 = sample_standard_normal(&mut rng);
                    *a = Complex64::new(ga * re, ga * im);
                }
                let g_norm_sq = quad_form(&gram, &alpha).re;
                let mut rest = 1.0;
                for (i, plan) in plans.iter().enumerate() {
                    let f = plan.eval(&alpha, g_norm_sq);
                    sums[i].add(f);
                    sq[i].add(f * f);
                    rest -= f;
                }
                bsum.add(rest);
                bsq.add(rest * rest);
            }
            (
                sums.iter().map(|k| k.sum).collect(),
                sq.iter().map(|k| k.sum).collect(),
                bsum.sum,
                bsq.sum,
                count,
            )
        })
        .collect();

    let mut tot = vec![0.0; n_out];
    let mut tot_sq = vec![0.0; n_out];
    let mut btot = 0.0;
    let mut btot_sq = 0.0;
    for (s, q, bs, bq, _) in &partials {
        for i in 0..n_out {
            tot[i] += s[i];
            tot_sq[i] += q[i];
        }
        btot += bs;
        btot_sq += bq;
    }
    let n = samples as f64;
    let mean: Vec<f64> = tot.iter().map(|s| s / n).collect();
    let se: Vec<f64> = tot_sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / n - m * m).max(0.0) / n).sqrt())
        .collect();
    let bmean = btot / n;
    let bse = ((btot_sq / n - bmean * bmean).max(0.0) / n).sqrt();

    let max_dress = povm
        .outcomes
        .iter()
        .filter_map(|o| match o.dressing {
            Dressing::PerCount(k) => Some(k),
            _ => None,
        })
        .max();
    let truncation_warning = match max_dress {
        Some(kmax) => {
            let x = scene.epsilon / (1.0 + scene.epsilon);
            x.powi(kmax as i32 + 1) > 1e-6
        }
        None => false,
    };

    Ok(McResult {
        labels: povm.outcomes.iter().map(|o| o.label.clone()).collect(),
        p: mean,
        se,
        bucket: bmean,
        bucket_se: bse,
        samples,
        truncation_warning,
    })
}

fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Monte Carlo estimate of
/// `E[e^{-|A0|^2} prod A^(a_i) prod conj(A^(b_j))]` about `reference`,
/// the oracle against which the closed-form thermal expectations are
/// checked.
pub fn mc_wick_expectation(
    scene: &Scene,
    reference: f64,
    a_orders: &[usize],
    b_orders: &[usize],
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 10_000 {
        return Err(Error::InvalidInput("need at least 1e4 samples".into()));
    }
    let max_order = a_orders.iter().chain(b_orders).max().copied().unwrap_or(0);
    let d: Vec<f64> = scene.x.iter().map(|&x| x - reference).collect();
    let gamma_amp: Vec<f64> = scene
        .gamma
        .iter()
        .map(|g| (scene.epsilon * g / 2.0).sqrt())
        .collect();
    let blocks = samples.div_ceil(BLOCK);
    let partials: Vec<(f64, f64, usize)> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block as u64 + 1);
            let count = BLOCK.min(samples - block * BLOCK);
            let mut sum = Kahan::new();
            let mut sq = Kahan::new();
            let mut a_pow = vec![Complex64::new(0.0, 0.0); max_order + 1];
            for _ in 0..count {
                for v in a_pow.iter_mut() {
                    *v = Complex64::new(0.0, 0.0);
                }
                for (jj, ga) in gamma_amp.iter().enumerate() {
                    let re: f64 = sample_standard_normal(&mut rng);
                    let im: f64 = sample_standard_normal(&mut rng);
                    let al = Complex64::new(ga * re, ga * im);
                    let mut dp = 1.0;
                    for l in 0..=max_order {
                        a_pow[l] += al * dp;
                        dp *= d[jj];
                    }
                }
                let a0_sq = a_pow[0].norm_sqr();
                let mut f = Complex64::new((-a0_sq).exp(), 0.0);
                for &a in a_orders {
                    f *= a_pow[a];
                }
                for &b in b_orders {
                    f *= a_pow[b].conj();
                }
                sum.add(f.re);
                sq.add(f.re * f.re);
            }
            (sum.sum, sq.sum, count)
        })
        .collect();
    let mut tot = 0.0;
    let mut tot_sq = 0.0;
    for (s, q, _) in &partials {
        tot += s;
        tot_sq += q;
    }
    let n = samples as f64;
    let mean = tot / n;
    let se = ((tot_sq / n - mean * mean).max(0.0) / n).sqrt();
    Ok((mean, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::DerivativeBasis;
    use crate::povm;
    use crate::prob;
    use crate::psf::PsfModel;
    use crate::scene::Scene;
    use std::sync::Arc;

    fn setup() -> (Scene, povm::Povm) {
        let b = Arc::new(DerivativeBasis::build(&PsfModel::gaussian(1.0), 4, 0.0).unwrap());
        let p = povm::spade_povm(&b, 3).unwrap();
        let s = Scene::line(&[(-0.1, 0.5), (0.1, 0.5)], 0.01).unwrap();
        (s, p)
    }

    #[test]
    fn deterministic_under_seed() {
        let (s, p) = setup();
        let a = mc_gaussian_oracle(&s, &p, 20_000, 7).unwrap();
        let b = mc_gaussian_oracle(&s, &p, 20_000, 7).unwrap();
        assert_eq!(a.p, b.p);
        assert_eq!(a.se, b.se);
    }

    #[test]
    fn different_seeds_differ() {
        let (s, p) = setup();
        let a = mc_gaussian_oracle(&s, &p, 20_000, 7).unwrap();
        let b = mc_gaussian_oracle(&s, &p, 20_000, 8).unwrap();
        assert_ne!(a.p, b.p);
    }

    #[test]
    fn agrees_with_weak_exact_at_small_eps() {
        let (s, p) = setup();
        let exact = prob::weak_exact_probs(&s, &p).unwrap();
        let mc = mc_gaussian_oracle(&s, &p, 400_000, 42).unwrap();
        for i in 0..exact.p.len() {
            // the exact-weak path truncates at first order in epsilon;
            // the sampled state carries the full thermal corrections,
            // which are O(eps) relative (e.g. 1/(1+eps)^2 on mode 0)
            let tol = 4.0 * mc.se[i] + 2.5 * s.epsilon * exact.p[i].max(1e-9);
            assert!(
                (mc.p[i] - exact.p[i]).abs() <= tol,
                "outcome {i}: mc {} vs exact {} (tol {tol:.2e})",
                mc.p[i],
                exact.p[i]
            );
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let (s, p) = setup();
        assert!(mc_gaussian_oracle(&s, &p, 100, 1).is_err());
    }

    #[test]
    fn wick_mc_matches_closed_form() {
        use crate::prob::wick::{wick_expectation, ThermalMoments, WickPattern};
        let s = Scene::line(&[(-0.4, 0.3), (0.6, 0.7)], 0.5).unwrap();
        let (cx, _) = s.centroid();
        let m: Vec<f64> = (0..=4).map(|k| s.raw_moment_about(k, 0, cx, 0.0)).collect();
        let tm = ThermalMoments::new(0.5, m);
        let closed = wick_expectation(WickPattern::VacuumPower { k: 1 }, &tm).unwrap();
        let (mc, se) = mc_wick_expectation(&s, cx, &[0], &[0], 400_000, 3).unwrap();
        assert!(
            (mc - closed).abs() < 4.0 * se,
            "mc {mc} vs closed {closed} (se {se:.2e})"
        );
    }
}
