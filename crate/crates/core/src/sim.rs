//! Photodetection sampling and moment estimation from counts.
//!
//! Multinomial draws are decomposed into sequential binomials so shot
//! counts in the billions cost nothing; estimation inverts the linear
//! moment series by weighted least squares and optionally polishes with
//! a coordinate-wise golden-section likelihood search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::DerivativeBasis;
use crate::error::{Error, Result};
use crate::fisher;
use crate::povm;
use crate::prob::{self, ProbSeries, ProbTable};
use crate::psf::{factorial, PsfModel};
use crate::scene::{moments_about, MomentVector, Scene};

/// Outcome counts from one run.
#[derive(Debug, Clone, Serialize)]
pub struct CountRecord {
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
    pub shots: u64,
    pub seed: u64,
    pub povm_label: String,
}

/// Deterministic multinomial draw (bucket included as the last slot).
pub fn sample_outcomes(
    probs: &ProbTable,
    shots: u64,
    seed: u64,
    povm_label: &str,
) -> Result<CountRecord> {
    let (labels, mut p) = probs.with_bucket();
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {total}"
        )));
    }
    for v in p.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-12 {
                return Err(Error::InvalidDistribution(format!(
                    "negative probability {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; p.len()];
    let mut remaining_shots = shots;
    let mut remaining_p = 1.0f64;
    for i in 0..p.len() {
        if remaining_shots == 0 {
            break;
        }
        if i + 1 == p.len() {
            counts[i] = remaining_shots;
            break;
        }
        let cond = (p[i] / remaining_p).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining_shots, cond)
            .map_err(|e| Error::InvalidDistribution(e.to_string()))?
            .sample(&mut rng);
        counts[i] = draw;
        remaining_shots -= draw;
        remaining_p = (remaining_p - p[i]).max(f64::MIN_POSITIVE);
    }
    Ok(CountRecord {
        labels,
        counts,
        shots,
        seed,
        povm_label: povm_label.into(),
    })
}

/// Stable per-replication seed derivation (splitmix64 step).
pub fn replication_seed(base: u64, replication: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(replication.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EstimationMethod {
    MomentInversion,
    MaxLikelihood,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub order: usize,
    pub magnitude: f64,
    pub sign: i8,
    /// Plug-in standard error `1/sqrt(N F_kk)` at the estimate.
    pub se: f64,
    /// Even-order radicand came out negative; magnitude reported anyway.
    pub negative_radicand: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimates: Vec<MomentEstimate>,
    pub method: EstimationMethod,
    /// Some informative outcome had expected counts below 20.
    pub low_counts: bool,
    /// Multinomial deviance `-2 sum c_n ln p_n` at the estimate.
    pub deviance: f64,
}

fn model_probs(series: &ProbSeries, eps: f64, radicands: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.outcomes.len() + 1);
    let mut sum = 0.0;
    for o in &series.outcomes {
        let mut p = (1.0 - eps) * o.vacuum;
        for (k, &m) in radicands.iter().enumerate() {
            p += eps * o.p[k] * m / factorial(k);
        }
        let p = p.max(0.0);
        sum += p;
        out.push(p);
    }
    out.push((1.0 - sum).max(f64::MIN_POSITIVE));
    out
}

fn deviance(counts: &[u64], probs: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&c, &p) in counts.iter().zip(probs) {
        if c > 0 {
            d -= 2.0 * c as f64 * p.max(1e-300).ln();
        }
    }
    d
}

/// Estimates the requested moment orders from a count record.
///
/// Inversion solves the (linear in the radicands) truncated series by
/// variance-weighted least squares; maximum likelihood polishes each
/// radicand by golden-section sweeps of the multinomial likelihood.
/// Moments outside `params` are pinned at zero, which is exact for the
/// leading order and costs `O(s^2)` relative bias otherwise.
pub fn estimate_moments(
    record: &CountRecord,
    series: &ProbSeries,
    eps: f64,
    params: &[usize],
    method: EstimationMethod,
) -> Result<EstimateReport> {
    if params.iter().any(|&k| k == 0 || k > series.kmax) {
        return Err(Error::InvalidInput("parameter order out of range".into()));
    }
    for &k in params {
        if !series
            .outcomes
            .iter()
            .any(|o| o.p[k].abs() > 1e-12 * norm_scale(&o.p))
        {
            return Err(Error::NonIdentifiable(k));
        }
    }
    let n_named = series.outcomes.len();
    if record.counts.len() != n_named + 1 {
        return Err(Error::InvalidInput(
            "count record does not match the series outcome list".into(),
        ));
    }
    let shots = record.shots as f64;
    let freq: Vec<f64> = record.counts.iter().map(|&c| c as f64 / shots).collect();

    // weighted least squares on f_n = base_n + sum_k a_{nk} m_k
    let np = params.len();
    let mut radicands = vec![0.0; series.kmax + 1];
    radicands[0] = 1.0;
    let base: Vec<f64> = series
        .outcomes
        .iter()
        .map(|o| (1.0 - eps) * o.vacuum + eps * o.p[0])
        .collect();
    let mut ata = vec![vec![0.0; np]; np];
    let mut atb = vec![0.0; np];
    for (n, o) in series.outcomes.iter().enumerate() {
        let w = 1.0 / freq[n].max(1.0 / shots);
        let resid = freq[n] - base[n];
        let row: Vec<f64> = params
            .iter()
            .map(|&k| eps * o.p[k] / factorial(k))
            .collect();
        for i in 0..np {
            atb[i] += w * row[i] * resid;
            for j in 0..np {
                ata[i][j] += w * row[i] * row[j];
            }
        }
    }
    let inv = fisher::linalg::invert(&ata)
        .ok_or_else(|| Error::NonIdentifiable(params[0]))?;
    for i in 0..np {
        let mut m = 0.0;
        for j in 0..np {
            m += inv[i][j] * atb[j];
        }
        radicands[params[i]] = m;
    }

    let mut dev = {
        let probs = model_probs(series, eps, &radicands);
        deviance(&record.counts, &probs)
    };

    if method == EstimationMethod::MaxLikelihood {
        // coordinate-wise golden-section refinement
        let gr = 0.618_033_988_749_894_8_f64;
        for _sweep in 0..3 {
            for (i, &k) in params.iter().enumerate() {
                let center = radicands[params[i]];
                let width = (inv[i][i].max(0.0) / shots).sqrt() * 8.0
                    + 0.25 * center.abs()
                    + 1e-12;
                let mut a = center - width;
                let mut b = center + width;
                let eval = |m: f64, radicands: &mut Vec<f64>| -> f64 {
                    radicands[k] = m;
                    let probs = model_probs(series, eps, radicands);
                    deviance(&record.counts, &probs)
                };
                let mut c = b - gr * (b - a);
                let mut d = a + gr * (b - a);
                let mut fc = eval(c, &mut radicands);
                let mut fd = eval(d, &mut radicands);
                for _ in 0..200 {
                    if (b - a).abs() < 1e-10 * (center.abs() + 1e-6) {
                        break;
                    }
                    if fc < fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - gr * (b - a);
                        fc = eval(c, &mut radicands);
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + gr * (b - a);
                        fd = eval(d, &mut radicands);
                    }
                }
                let best = if fc < fd { c } else { d };
                let f_best = fc.min(fd);
                // keep the better of start and polished point
                if f_best <= dev {
                    radicands[k] = best;
                    dev = f_best;
                } else {
                    radicands[k] = center;
                }
            }
        }
    }

    // plug-in SEs via the series FI at the estimate
    let mv = synthetic_moment_vector(&radicands);
    let fi = fisher::fi_from_series(series, params, &mv, eps).ok();
    let mut estimates = Vec::with_capacity(np);
    for (i, &k) in params.iter().enumerate() {
        let m = radicands[k];
        let sign = if m > 0.0 {
            1
        } else if m < 0.0 {
            -1
        } else {
            0
        };
        let se = fi
            .as_ref()
            .map(|f| {
                let fkk = f.entry(i, i);
                if fkk > 0.0 {
                    1.0 / (shots * fkk).sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .unwrap_or(f64::INFINITY);
        estimates.push(MomentEstimate {
            order: k,
            magnitude: m.abs().powf(1.0 / k as f64),
            sign,
            se,
            negative_radicand: k % 2 == 0 && m < 0.0,
        });
    }

    // low-count check on the informative outcomes
    let model = model_probs(series, eps, &radicands);
    let low_counts = series.outcomes.iter().enumerate().any(|(n, o)| {
        params.iter().any(|&k| o.p[k].abs() > 1e-12) && model[n] * shots < 20.0
    });

    Ok(EstimateReport {
        estimates,
        method,
        low_counts,
        deviance: dev,
    })
}

fn norm_scale(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300)
}

fn synthetic_moment_vector(radicands: &[f64]) -> MomentVector {
    MomentVector {
        centroid: 0.0,
        size: 0.0,
        moments: radicands
            .iter()
            .enumerate()
            .map(|(k, &m)| crate::scene::Moment::from_radicand(m, k.max(1)))
            .collect(),
    }
}

/// Two-stage centroid-then-second-moment measurement.
#[derive(Debug, Clone, Serialize)]
pub struct TwoStageOutcome {
    /// Estimated centroid position (reference + first-moment estimate).
    pub centroid: f64,
    pub centroid_se: f64,
    pub m2: MomentEstimate,
    pub stage1_shots: u64,
    pub stage2_shots: u64,
}

/// Runs the centroid pre-estimation scheme: a fraction `split` of the
/// shots goes to the centroid pair about `reference`, the basis is then
/// re-centered at the estimate, and the remainder measures the second
/// moment.
pub fn centroid_two_stage(
    scene: &Scene,
    psf: &PsfModel,
    reference: f64,
    shots: u64,
    split: f64,
    kmax: usize,
    seed: u64,
) -> Result<TwoStageOutcome> {
    if !(0.0 < split && split < 1.0) {
        return Err(Error::InvalidInput("split must lie in (0, 1)".into()));
    }
    let n1 = (shots as f64 * split).round() as u64;
    let n2 = shots - n1;
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidInput("both stages need shots".into()));
    }

    // stage 1: centroid pair about the reference point
    let basis1 = std::sync::Arc::new(DerivativeBasis::build(psf, kmax, reference)?);
    let mut pair = povm::interleaved_povm(&basis1, povm::Parity::Even)?;
    pair.outcomes.truncate(2); // the (b0 +/- b1)/sqrt2 pair
    let series1 = prob::weak_series(&pair, 2)?;
    let probs1 = weak_probs_about(scene, &series1, reference)?;
    let rec1 = sample_outcomes(&probs1, n1, seed, &pair.label)?;
    let est1 = estimate_moments(&rec1, &series1, scene.epsilon, &[1], EstimationMethod::MomentInversion)?;
    let m1 = est1.estimates[0].sign as f64 * est1.estimates[0].magnitude;
    let x_hat = reference + m1;

    // stage 2: second moment about the re-centered frame
    let basis2 = std::sync::Arc::new(DerivativeBasis::build(psf, kmax, x_hat)?);
    let spade = povm::spade_povm(&basis2, kmax.min(4))?;
    let series2 = prob::weak_series(&spade, kmax)?;
    let probs2 = weak_probs_about(scene, &series2, x_hat)?;
    let rec2 = sample_outcomes(&probs2, n2, replication_seed(seed, 1), &spade.label)?;
    let est2 = estimate_moments(
        &rec2,
        &series2,
        scene.epsilon,
        &[2],
        EstimationMethod::MomentInversion,
    )?;

    Ok(TwoStageOutcome {
        centroid: x_hat,
        centroid_se: est1.estimates[0].se,
        m2: est2.estimates[0].clone(),
        stage1_shots: n1,
        stage2_shots: n2,
    })
}

fn weak_probs_about(scene: &Scene, series: &ProbSeries, reference: f64) -> Result<ProbTable> {
    let mv = moments_about(scene, series.kmax, reference)?;
    series.evaluate(&mv, scene.epsilon)
}

/// Runs `f` over replication indices with deterministic per-replication
/// seeds, in parallel.
pub fn replicate<T, F>(replications: usize, base_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, usize) -> T + Sync,
{
    (0..replications)
        .into_par_iter()
        .map(|rep| f(replication_seed(base_seed, rep as u64), rep))
        .collect()
}

/// Sample variance (unbiased).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::moments;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn spade_setup(
        s: f64,
        eps: f64,
        lmax: usize,
    ) -> (Scene, Arc<DerivativeBasis>, povm::Povm, ProbSeries) {
        let scene = Scene::line(&[(-s / 2.0, 0.5), (s / 2.0, 0.5)], eps).unwrap();
        let basis = Arc::new(DerivativeBasis::build(&PsfModel::gaussian(1.0), lmax, 0.0).unwrap());
        let p = povm::spade_povm(&basis, lmax.min(4)).unwrap();
        let series = prob::weak_series(&p, lmax).unwrap();
        (scene, basis, p, series)
    }

    #[test]
    fn degenerate_distribution_all_shots_on_one_outcome() {
        let probs = ProbTable {
            labels: vec!["a".into(), "b".into()],
            p: vec![1.0, 0.0],
            bucket: 0.0,
        };
        let rec = sample_outcomes(&probs, 1000, 3, "t").unwrap();
        assert_eq!(rec.counts[0], 1000);
        assert_eq!(rec.counts[1], 0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let probs = ProbTable {
            labels: vec!["a".into(), "b".into()],
            p: vec![0.3, 0.2],
            bucket: 0.5,
        };
        let a = sample_outcomes(&probs, 100_000, 11, "t").unwrap();
        let b = sample_outcomes(&probs, 100_000, 11, "t").unwrap();
        assert_eq!(a.counts, b.counts);
        let c = sample_outcomes(&probs, 100_000, 12, "t").unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn binomial_concentration() {
        // counts within 5 sqrt(N p (1-p)) of the mean on every tested seed
        let p_small = 0.005;
        let probs = ProbTable {
            labels: vec!["rare".into()],
            p: vec![p_small],
            bucket: 1.0 - p_small,
        };
        let n = 1_000_000u64;
        let sd = (n as f64 * p_small * (1.0 - p_small)).sqrt();
        let mut failures = 0;
        for seed in 0..100u64 {
            let rec = sample_outcomes(&probs, n, seed, "t").unwrap();
            if (rec.counts[0] as f64 - n as f64 * p_small).abs() > 5.0 * sd {
                failures += 1;
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn invalid_distribution_rejected() {
        let probs = ProbTable {
            labels: vec!["a".into()],
            p: vec![0.7],
            bucket: 0.1,
        };
        assert!(matches!(
            sample_outcomes(&probs, 10, 1, "t"),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn noiseless_inversion_recovers_even_moments() {
        // size 0.5 keeps even the eighth-moment outcome populated once
        // the expected counts are rounded to integers
        let (scene, _b, _p, series) = spade_setup(0.5, 0.01, 8);
        let mv = moments(&scene, 8).unwrap();
        let table = series.evaluate(&mv, scene.epsilon).unwrap();
        // expected counts at huge N rounded to integers
        let shots = 1_000_000_000_000_000u64;
        let (_, probs) = table.with_bucket();
        let counts: Vec<u64> = probs
            .iter()
            .map(|p| (p * shots as f64).round() as u64)
            .collect();
        let rec = CountRecord {
            labels: table.labels.clone(),
            counts,
            shots,
            seed: 0,
            povm_label: "spade".into(),
        };
        let est = estimate_moments(
            &rec,
            &series,
            scene.epsilon,
            &[2, 4, 6, 8],
            EstimationMethod::MomentInversion,
        )
        .unwrap();
        for e in &est.estimates {
            let truth = mv.magnitude(e.order);
            assert_relative_eq!(e.magnitude, truth, max_relative = 1e-4);
        }
    }

    #[test]
    fn ml_never_worse_than_inversion() {
        let (scene, _b, p, series) = spade_setup(0.1, 0.01, 8);
        let mv = moments(&scene, 8).unwrap();
        let table = series.evaluate(&mv, scene.epsilon).unwrap();
        for seed in 0..5u64 {
            let rec = sample_outcomes(&table, 1_000_000, seed, &p.label).unwrap();
            let inv = estimate_moments(
                &rec,
                &series,
                scene.epsilon,
                &[2, 4],
                EstimationMethod::MomentInversion,
            )
            .unwrap();
            let ml = estimate_moments(
                &rec,
                &series,
                scene.epsilon,
                &[2, 4],
                EstimationMethod::MaxLikelihood,
            )
            .unwrap();
            assert!(ml.deviance <= inv.deviance + 1e-9);
        }
    }

    #[test]
    fn estimator_consistency_with_shots() {
        let (scene, _b, p, series) = spade_setup(0.1, 0.01, 8);
        let mv = moments(&scene, 8).unwrap();
        let table = series.evaluate(&mv, scene.epsilon).unwrap();
        let truth = mv.magnitude(2);
        let mut errs = Vec::new();
        for shots in [100_000u64, 1_000_000, 10_000_000] {
            let reps = 64;
            let vals = replicate(reps, 123, |seed, _| {
                let rec = sample_outcomes(&table, shots, seed, &p.label).unwrap();
                let est = estimate_moments(
                    &rec,
                    &series,
                    scene.epsilon,
                    &[2],
                    EstimationMethod::MomentInversion,
                )
                .unwrap();
                est.estimates[0].magnitude
            });
            let rmse = (vals.iter().map(|v| (v - truth) * (v - truth)).sum::<f64>()
                / reps as f64)
                .sqrt();
            errs.push(rmse);
        }
        // error shrinks like 1/sqrt(N) within a factor 1.5
        let tenfold = (10f64).sqrt();
        assert!(errs[0] / errs[1] > tenfold / 1.5 && errs[0] / errs[1] < tenfold * 1.5);
        assert!(errs[1] / errs[2] > tenfold / 1.5 && errs[1] / errs[2] < tenfold * 1.5);
    }

    #[test]
    fn nonidentifiable_rejected() {
        let (scene, _b, p, series) = spade_setup(0.1, 0.01, 6);
        let mv = moments(&scene, 6).unwrap();
        let table = series.evaluate(&mv, scene.epsilon).unwrap();
        let rec = sample_outcomes(&table, 10_000, 1, &p.label).unwrap();
        // odd moments are invisible to the bare mode projectors
        assert!(matches!(
            estimate_moments(&rec, &series, scene.epsilon, &[3], EstimationMethod::MomentInversion),
            Err(Error::NonIdentifiable(3))
        ));
    }

    #[test]
    fn two_stage_runs_and_centers() {
        let scene = Scene::line(&[(-0.05, 0.5), (0.15, 0.5)], 0.01).unwrap();
        let psf = PsfModel::gaussian(1.0);
        let out = centroid_two_stage(&scene, &psf, 0.02, 2_000_000, 0.5, 6, 42).unwrap();
        // true centroid is 0.05
        assert!((out.centroid - 0.05).abs() < 0.02, "centroid {}", out.centroid);
        assert!(out.m2.magnitude > 0.0);
    }

    #[test]
    fn two_stage_rejects_bad_split() {
        let scene = Scene::line(&[(-0.05, 0.5), (0.05, 0.5)], 0.01).unwrap();
        let psf = PsfModel::gaussian(1.0);
        assert!(centroid_two_stage(&scene, &psf, 0.0, 1000, 1.0, 6, 1).is_err());
    }

    #[test]
    fn full_pipeline_deterministic() {
        let scene = Scene::line(&[(-0.05, 0.5), (0.15, 0.5)], 0.01).unwrap();
        let psf = PsfModel::gaussian(1.0);
        let a = centroid_two_stage(&scene, &psf, 0.02, 500_000, 0.5, 6, 7).unwrap();
        let b = centroid_two_stage(&scene, &psf, 0.02, 500_000, 0.5, 6, 7).unwrap();
        assert_eq!(a.centroid, b.centroid);
        assert_eq!(a.m2.magnitude, b.m2.magnitude);
    }
}
