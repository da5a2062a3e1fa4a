//! The eight subcommands.

use std::path::{Path, PathBuf};

use serde_json::json;

use rayleigh_core::basis::DerivativeBasis;
use rayleigh_core::fisher::{self, qfim, twophoton, CentroidMode};
use rayleigh_core::prob;
use rayleigh_core::psf::DeltaK2d;
use rayleigh_core::scene::{self, Scene};
use rayleigh_core::sim;
use rayleigh_core::Error as CoreError;

use crate::config::{self, ConfigError, RawConfig};
use crate::output::{self, envelope, matrix_json, num, CsvDoc};

/// Output format for tabular commands; JSON documents ignore `Csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Auto,
    Csv,
    Json,
}

fn emit_table(doc: &CsvDoc, command: &str, format: Format, out: Option<&Path>) -> Result<()> {
    match format {
        Format::Json => emit(out, &format!("{:#}\n", doc.render_json(command))),
        _ => emit(out, &doc.render()),
    }
}

fn require_json(command: &str, format: Format) -> Result<()> {
    if format == Format::Csv {
        return Err(CliError::Validation(format!(
            "`{command}` emits a structured document; use json output"
        )));
    }
    Ok(())
}

#[derive(Debug)]
pub enum CliError {
    /// Bad inputs or unsatisfiable preconditions: exit code 2.
    Validation(String),
    /// Numerical failure during computation: exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Core(c) => c.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::LinearDependence { .. }
            | CoreError::TruncationFailure(_)
            | CoreError::SingularProbability(_)
            | CoreError::NonIdentifiable(_)
            | CoreError::NotDifferentiable { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("io error: {e}"))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    output::write_text(path, text)?;
    Ok(())
}

/// `basis-check`: orthonormality Gram matrix and q-vector as CSV.
pub fn basis_check(cfg: &RawConfig, lmax_flag: Option<usize>, format: Format, out: Option<&Path>) -> Result<()> {
    let psf = config::load_psf(cfg)?;
    let lmax = lmax_flag
        .or(cfg.usize("povm", "lmax")?)
        .unwrap_or(8);
    let basis = DerivativeBasis::build(&psf, lmax, 0.0)?;
    let gram = basis.gram_matrix()?;
    let mut doc = CsvDoc::new(&["record", "i", "j", "value"]);
    doc.comment("basis-check");
    doc.comment(&cfg.echo);
    for (i, row) in gram.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            doc.row(vec!["gram".into(), i.to_string(), j.to_string(), num(v.re)]);
        }
    }
    for l in 0..=basis.lmax() {
        doc.row(vec!["q".into(), l.to_string(), String::new(), num(basis.q(l))]);
    }
    emit_table(&doc, "basis-check", format, out)
}

/// `moments`: the normalized-moment vector of a scene as JSON.
pub fn moments(cfg: &RawConfig, kmax: usize, format: Format, out: Option<&Path>) -> Result<()> {
    require_json("moments", format)?;
    let sc = config::load_scene(cfg, "scene")?;
    let payload = if sc.dimension == 1 {
        let mv = scene::moments(&sc, kmax)?;
        json!({ "dimension": 1, "moments": mv, "epsilon": sc.epsilon })
    } else {
        let mv = scene::moments_2d(&sc, kmax)?;
        let params = scene::second_moment_params_2d(&sc).ok();
        json!({ "dimension": 2, "moments": mv, "second_moment_params": params, "epsilon": sc.epsilon })
    };
    let doc = envelope("moments", None, &cfg.echo, payload);
    emit(out, &format!("{:#}\n", doc))
}

fn s_grid(cfg: &RawConfig) -> Result<Vec<f64>> {
    let unit = cfg.length_unit()?;
    let listed = cfg.f64_list("sweep", "s_list")?;
    if !listed.is_empty() {
        return Ok(listed.into_iter().map(|s| s * unit).collect());
    }
    let s_min = cfg
        .f64("sweep", "s_min")
        ?
        .unwrap_or(1e-3)
        * unit;
    let s_max = cfg
        .f64("sweep", "s_max")
        ?
        .unwrap_or(10f64.powf(-1.5))
        * unit;
    let count = cfg
        .usize("sweep", "s_count")
        ?
        .unwrap_or(9);
    if count < 2 || s_min <= 0.0 || s_max <= s_min {
        return Err(CliError::Validation("bad s grid".into()));
    }
    Ok((0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            s_min * (s_max / s_min).powf(t)
        })
        .collect())
}

fn sweep_shape(cfg: &RawConfig) -> Result<Scene> {
    let section = if cfg.sections.contains_key("shape") {
        "shape"
    } else {
        "scene"
    };
    let sc = config::load_scene(cfg, section)?;
    if sc.dimension != 1 {
        return Err(CliError::Validation("sweeps are 1D".into()));
    }
    // recenter on the measurement frame so moments are frame moments
    let (cx, _) = sc.centroid();
    let pts: Vec<(f64, f64)> = sc
        .x
        .iter()
        .zip(&sc.gamma)
        .map(|(&x, &g)| (x - cx, g))
        .collect();
    Ok(Scene::line(&pts, sc.epsilon)?)
}

fn expected_slope(povm_kind: &str, k: usize) -> f64 {
    if povm_kind.starts_with("direct") {
        (2 * k) as f64 - 2.0
    } else if povm_kind.starts_with("interleaved") && k % 2 == 1 {
        (k - 1) as f64
    } else {
        k as f64 - 2.0
    }
}

/// `fi-sweep`: F_kk rows over the (s, eps, k) grid plus fitted log-log
/// slopes with their expected exponents.
pub fn fi_sweep(cfg: &RawConfig, format: Format, out: Option<&Path>) -> Result<()> {
    let psf = config::load_psf(cfg)?;
    let shape = sweep_shape(cfg)?;
    let povm_kind = cfg.get("povm", "kind").unwrap_or("spade").to_string();
    let p = config::load_povm(cfg, &psf, 0.0)?;
    let kmax = cfg
        .usize("sweep", "kmax")
        ?
        .unwrap_or(10);
    let moments_list = {
        let m = cfg.usize_list("sweep", "moments")?;
        if m.is_empty() {
            vec![2]
        } else {
            m
        }
    };
    let eps_list = {
        let e = cfg.f64_list("sweep", "epsilon")?;
        if e.is_empty() {
            vec![shape.epsilon]
        } else {
            e
        }
    };
    let grid = s_grid(cfg)?;
    if grid.len() < 8 {
        return Err(CliError::Validation(format!(
            "scaling sweeps need at least 8 s points, got {}",
            grid.len()
        )));
    }
    let r0 = psf.convergence_radius_lower_bound(psf.lmax())?;
    if let Some(&bad) = grid.iter().find(|&&s| s >= r0) {
        return Err(CliError::Validation(format!(
            "s = {bad} is not below the convergence bound R0 = {r0}"
        )));
    }
    let series = prob::weak_series(&p, kmax)?;

    let mut doc = CsvDoc::new(&[
        "record", "povm", "k", "epsilon", "s", "value", "stderr", "expected",
    ]);
    doc.comment("fi-sweep");
    doc.comment(&cfg.echo);
    for &eps in &eps_list {
        for &k in &moments_list {
            let mut fit_s = Vec::new();
            let mut fit_f = Vec::new();
            for &s in &grid {
                let sc = shape.scaled_to(s)?;
                let mv = scene::moments_about(&sc, kmax, 0.0)?;
                let eval = series.evaluate(&mv, eps)?;
                let f = fisher::fi_from_series(&series, &[k], &mv, eps)?.scalar();
                doc.row(vec![
                    "fi".into(),
                    p.label.clone(),
                    k.to_string(),
                    num(eps),
                    num(s),
                    num(f),
                    String::new(),
                    String::new(),
                ]);
                // slope fits only use points where the truncation
                // remainder stays below 1% of the smallest probability
                // among the outcomes informative about this moment (the
                // limits are asymptotic statements)
                let p_min = eval
                    .p
                    .iter()
                    .zip(&series.outcomes)
                    .filter(|(&v, o)| v > 0.0 && o.p[k] != 0.0)
                    .map(|(&v, _)| v)
                    .fold(f64::INFINITY, f64::min);
                if series.remainder_bound(s, eps) <= 0.01 * p_min {
                    fit_s.push(s);
                    fit_f.push(f);
                }
            }
            if let Some((slope, se)) = fisher::fit_loglog(&fit_s, &fit_f) {
                doc.row(vec![
                    "slope".into(),
                    p.label.clone(),
                    k.to_string(),
                    num(eps),
                    String::new(),
                    num(slope),
                    num(se),
                    num(expected_slope(&povm_kind, k)),
                ]);
            }
        }
    }
    emit_table(&doc, "fi-sweep", format, out)
}

/// `convergence`: series validity report over the s grid.
pub fn convergence(cfg: &RawConfig, format: Format, out: Option<&Path>) -> Result<()> {
    let psf = config::load_psf(cfg)?;
    let shape = sweep_shape(cfg)?;
    let p = config::load_povm(cfg, &psf, 0.0)?;
    let kmax = cfg
        .usize("sweep", "kmax")
        ?
        .unwrap_or(8);
    let series = prob::weak_series(&p, kmax)?;
    let r0 = series.r0;
    let grid = s_grid(cfg)?;

    let mut doc = CsvDoc::new(&["s", "r0", "remainder_bound", "observed_gap", "pass"]);
    doc.comment("convergence");
    doc.comment(&cfg.echo);
    for &s in &grid {
        if s >= r0 {
            doc.row(vec![num(s), num(r0), String::new(), String::new(), "false".into()]);
            continue;
        }
        let sc = shape.scaled_to(s)?;
        let mv = scene::moments_about(&sc, kmax, 0.0)?;
        let eval = series.evaluate(&mv, sc.epsilon)?;
        let exact = prob::weak_exact_probs(&sc, &p)?;
        let gap = eval
            .p
            .iter()
            .zip(&exact.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let bound = series.remainder_bound(s, sc.epsilon);
        let pass = gap <= bound + 1e-12;
        doc.row(vec![
            num(s),
            num(r0),
            num(bound),
            num(gap),
            pass.to_string(),
        ]);
    }
    emit_table(&doc, "convergence", format, out)
}

/// `qfim`: second-moment quantum information matrices as JSON.
pub fn qfim_cmd(cfg: &RawConfig, format: Format, out: Option<&Path>) -> Result<()> {
    require_json("qfim", format)?;
    let p2 = config::load_psf_2d(cfg)?;
    let dk: DeltaK2d = p2.delta_k()?;
    let eps = cfg
        .f64("qfim", "epsilon")
        ?
        .or(cfg.f64("scene", "epsilon")?)
        .unwrap_or(0.01);

    // parameters either given directly or derived from a 2D scene
    let (x, y, beta) = if let Some(x) = cfg.f64("qfim", "x")? {
        (
            x,
            cfg.f64("qfim", "y")
                ?
                .ok_or_else(|| CliError::Validation("[qfim] needs y".into()))?,
            cfg.f64("qfim", "beta")?.unwrap_or(0.0),
        )
    } else {
        let sc = config::load_scene(cfg, "scene")?;
        let params = scene::second_moment_params_2d(&sc)?;
        (params.x_dev, params.y_dev, params.beta)
    };

    let rep = qfim::qfim_rho2(&dk, x, y, beta, eps)?;
    let mut payload = json!({
        "delta_k": { "dkx": dk.dkx, "dky": dk.dky, "r": dk.r },
        "epsilon": eps,
        "x": x, "y": y, "beta": beta,
        "singular": rep.singular,
        "j_xy": matrix_json(&rep.j_xy.matrix),
        "j_xyb": rep.j_xyb.as_ref().map(|j| matrix_json(&j.matrix)),
    });
    if let (Some(l1), Some(l2)) = (
        cfg.f64("qfim", "lambda1")?,
        cfg.f64("qfim", "lambda2")?,
    ) {
        let theta = cfg
            .f64("qfim", "theta")
            ?
            .unwrap_or(0.0);
        let ang = qfim::qfim_angle(&dk, l1, l2, theta, eps)?;
        payload["angle"] = json!({
            "j": matrix_json(&ang.j.matrix),
            "theta_prime": ang.theta_prime,
            "lambda_basis": ang.lambda_basis,
            "theta_basis": ang.theta_basis,
        });
    }
    let doc = envelope("qfim", None, &cfg.echo, payload);
    emit(out, &format!("{:#}\n", doc))
}

/// `simulate`: sample photodetection records, estimate moments, compare
/// the replication variance against the Cramer-Rao bound.
pub fn simulate(
    cfg: &RawConfig,
    seed_flag: Option<u64>,
    format: Format,
    out: Option<&Path>,
    dump_probs: bool,
) -> Result<()> {
    require_json("simulate", format)?;
    let psf = config::load_psf(cfg)?;
    let sc = config::load_scene(cfg, "scene")?;
    if sc.dimension != 1 {
        return Err(CliError::Validation("simulate is 1D".into()));
    }
    let p = config::load_povm(cfg, &psf, 0.0)?;
    let kmax = cfg
        .usize("sim", "kmax")
        ?
        .unwrap_or(8);
    let shots = cfg
        .usize("sim", "shots")
        ?
        .unwrap_or(1_000_000) as u64;
    let reps = cfg
        .usize("sim", "replications")
        ?
        .unwrap_or(200);
    let seed = seed_flag
        .or(cfg
            .usize("sim", "seed")
            ?
            .map(|v| v as u64))
        .unwrap_or(42);
    let params = {
        let m = cfg.usize_list("sim", "moments")?;
        if m.is_empty() {
            vec![2]
        } else {
            m
        }
    };
    let method = match cfg.get("sim", "method").unwrap_or("inversion") {
        "inversion" => sim::EstimationMethod::MomentInversion,
        "ml" | "max-likelihood" => sim::EstimationMethod::MaxLikelihood,
        other => {
            return Err(CliError::Validation(format!(
                "unknown estimation method `{other}`"
            )))
        }
    };

    let series = prob::weak_series(&p, kmax)?;
    let probs = prob::weak_exact_probs(&sc, &p)?;
    let mv = scene::moments_about(&sc, kmax, 0.0)?;

    if dump_probs {
        let mut doc = CsvDoc::new(&["outcome", "p"]);
        doc.comment("simulate --dump-probs");
        doc.comment(&cfg.echo);
        let (labels, pv) = probs.with_bucket();
        for (l, v) in labels.iter().zip(&pv) {
            doc.row(vec![l.clone(), num(*v)]);
        }
        let probs_path = out.map(|p| sibling(p, "probs.csv"));
        emit(probs_path.as_deref(), &doc.render())?;
    }

    let runs: Vec<std::result::Result<sim::EstimateReport, String>> =
        sim::replicate(reps, seed, |rep_seed, _| {
            sim::sample_outcomes(&probs, shots, rep_seed, &p.label)
                .and_then(|rec| sim::estimate_moments(&rec, &series, sc.epsilon, &params, method))
                .map_err(|e| e.to_string())
        });
    let mut ok_runs = Vec::with_capacity(runs.len());
    for r in runs {
        ok_runs.push(r.map_err(CliError::Numerical)?);
    }

    // per-replication estimates CSV
    let mut header: Vec<String> = vec!["replication".into()];
    for &k in &params {
        header.push(format!("m{k}_estimate"));
        header.push(format!("m{k}_se"));
    }
    let mut doc = CsvDoc::new(&header.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    doc.comment("simulate estimates");
    doc.comment(&cfg.echo);
    doc.comment(format!("seed = {seed}"));
    for (i, r) in ok_runs.iter().enumerate() {
        let mut row = vec![i.to_string()];
        for e in &r.estimates {
            row.push(num(e.magnitude));
            row.push(num(e.se));
        }
        doc.row(row);
    }
    let est_path = out.map(|p| sibling(p, "estimates.csv"));
    if out.is_some() {
        emit(est_path.as_deref(), &doc.render())?;
    }

    // summary with CRB comparison
    let fi = fisher::fi_from_series(&series, &params, &mv, sc.epsilon)?;
    let mut per_param = Vec::new();
    for (i, &k) in params.iter().enumerate() {
        let vals: Vec<f64> = ok_runs.iter().map(|r| r.estimates[i].magnitude).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = if vals.len() > 1 {
            sim::variance(&vals)
        } else {
            f64::NAN
        };
        let fkk = fi.entry(i, i);
        let crb = if fkk > 0.0 {
            1.0 / (shots as f64 * fkk)
        } else {
            f64::INFINITY
        };
        per_param.push(json!({
            "moment": k,
            "truth": mv.magnitude(k),
            "mean": mean,
            "var": var,
            "crb": crb,
            "var_over_crb": var / crb,
            "low_counts": ok_runs.iter().any(|r| r.low_counts),
        }));
    }
    let payload = json!({
        "povm": p.label,
        "shots": shots,
        "replications": reps,
        "estimates": per_param,
        "estimates_csv": est_path.as_ref().map(|p| p.display().to_string()),
    });
    let docj = envelope("simulate", Some(seed), &cfg.echo, payload);
    emit(out, &format!("{:#}\n", docj))
}

fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    base.with_file_name(format!("{stem}.{suffix}"))
}

/// `centroid`: the pre-estimation scheme's closed forms, plus an optional
/// two-stage replication study when `[sim]` is configured.
pub fn centroid(cfg: &RawConfig, seed_flag: Option<u64>, format: Format, out: Option<&Path>) -> Result<()> {
    require_json("centroid", format)?;
    let psf = config::load_psf(cfg)?;
    let sc = if cfg.sections.contains_key("scene") {
        Some(config::load_scene(cfg, "scene")?)
    } else {
        None
    };
    let eps = sc
        .as_ref()
        .map(|s| s.epsilon)
        .or(cfg.f64("centroid", "epsilon")?)
        .unwrap_or(0.01);
    let weak = fisher::centroid_scheme(&psf, eps, CentroidMode::Weak)?;
    let strong = fisher::centroid_scheme(&psf, eps, CentroidMode::Strong)?;
    let mut payload = json!({
        "epsilon": eps,
        "weak": weak,
        "strong": strong,
    });

    let seed = seed_flag.unwrap_or(42);
    if let (Some(sc), Some(shots)) = (
        sc,
        cfg.usize("sim", "shots")?,
    ) {
        let reps = cfg
            .usize("sim", "replications")
            ?
            .unwrap_or(200);
        let split = cfg
            .f64("sim", "split")
            ?
            .unwrap_or(0.5);
        let reference = cfg
            .f64("sim", "reference")
            ?
            .unwrap_or(0.0);
        let kmax = cfg
            .usize("sim", "kmax")
            ?
            .unwrap_or(6);
        let outs: Vec<std::result::Result<(f64, f64), String>> =
            sim::replicate(reps, seed, |rep_seed, _| {
                sim::centroid_two_stage(&sc, &psf, reference, shots as u64, split, kmax, rep_seed)
                    .map(|o| (o.centroid, o.m2.magnitude))
                    .map_err(|e| e.to_string())
            });
        let mut xs = Vec::new();
        let mut m2s = Vec::new();
        for o in outs {
            let (x, m2) = o.map_err(CliError::Numerical)?;
            xs.push(x);
            m2s.push(m2);
        }
        let dk = psf.delta_k()?;
        let expect = 1.0 / (2.0 * eps * dk * dk * shots as f64);
        payload["two_stage"] = json!({
            "shots": shots,
            "replications": reps,
            "split": split,
            "var_centroid": sim::variance(&xs),
            "var_m2": sim::variance(&m2s),
            "expected_var": expect,
            "centroid_ratio": sim::variance(&xs) / expect,
            "m2_ratio": sim::variance(&m2s) / expect,
        });
    }
    let doc = envelope("centroid", Some(seed), &cfg.echo, payload);
    emit(out, &format!("{:#}\n", doc))
}

/// `counterexample`: the strong-source two-photon-subspace improvement.
pub fn counterexample(cfg: &RawConfig, format: Format, out: Option<&Path>) -> Result<()> {
    require_json("counterexample", format)?;
    let psf = config::load_psf(cfg)?;
    let sc = config::load_scene(cfg, "scene")?;
    if sc.dimension != 1 {
        return Err(CliError::Validation("counterexample is 1D".into()));
    }
    let lmax = cfg
        .usize("povm", "lmax")
        ?
        .unwrap_or(6)
        .max(6);
    let basis = DerivativeBasis::build(&psf, lmax, 0.0)?;
    let rep = twophoton::two_photon_improvement(&sc, &basis, sc.epsilon)?;
    let doc = envelope("counterexample", None, &cfg.echo, json!(rep));
    emit(out, &format!("{:#}\n", doc))
}
