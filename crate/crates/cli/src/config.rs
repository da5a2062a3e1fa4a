//! Experiment configuration: a flat key-value format with `[sections]`,
//! plus the scene file format. Repeated keys accumulate (`point = ...`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayleigh_core::basis::{Basis2D, DerivativeBasis};
use rayleigh_core::povm::{self, DressingMode, Parity, Povm, Table2dFamily};
use rayleigh_core::psf::{Psf2d, PsfModel, SampledPsf};
use rayleigh_core::scene::Scene;
use rayleigh_core::Error as CoreError;

#[derive(Debug)]
pub enum ConfigError {
    Parse(String),
    Io(String),
    Core(CoreError),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse(m) => write!(f, "config error: {m}"),
            ConfigError::Io(m) => write!(f, "io error: {m}"),
            ConfigError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for ConfigError {
    fn from(e: CoreError) -> Self {
        ConfigError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Raw parsed config: section -> ordered (key, value) pairs.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    pub sections: BTreeMap<String, Vec<(String, String)>>,
    /// Original text, echoed into every output for reproducibility.
    pub echo: String,
    pub dir: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, dir: &Path) -> Result<RawConfig> {
        let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut current = String::from("global");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                current = line[1..line.len() - 1].trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ConfigError::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            sections
                .entry(current.clone())
                .or_default()
                .push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(RawConfig {
            sections,
            echo: text.to_string(),
            dir: dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &dir)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)?
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all(&self, section: &str, key: &str) -> Vec<&str> {
        self.sections
            .get(section)
            .map(|rows| {
                rows.iter()
                    .filter(|(k, _)| k == key)
                    .map(|(_, v)| v.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.get(section, key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| ConfigError::Parse(format!("[{section}] {key}: bad number `{v}`")))
            })
            .transpose()
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.get(section, key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| ConfigError::Parse(format!("[{section}] {key}: bad integer `{v}`")))
            })
            .transpose()
    }

    pub fn f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        match self.get(section, key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        ConfigError::Parse(format!("[{section}] {key}: bad number `{t}`"))
                    })
                })
                .collect(),
        }
    }

    pub fn usize_list(&self, section: &str, key: &str) -> Result<Vec<usize>> {
        match self.get(section, key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| {
                        ConfigError::Parse(format!("[{section}] {key}: bad integer `{t}`"))
                    })
                })
                .collect(),
        }
    }

    /// Lengths in the config are in units of sigma unless `length_unit`
    /// rescales them.
    pub fn length_unit(&self) -> Result<f64> {
        Ok(self.f64("global", "length_unit")?.unwrap_or(1.0))
    }
}

pub fn load_psf(cfg: &RawConfig) -> Result<PsfModel> {
    let unit = cfg.length_unit()?;
    let kind = cfg.get("psf", "kind").unwrap_or("gaussian");
    let sigma = cfg.f64("psf", "sigma")?.unwrap_or(1.0) * unit;
    let half_width = cfg.f64("psf", "grid_half_width")?.unwrap_or(10.0);
    let nodes = cfg.usize("psf", "grid_nodes")?.unwrap_or(2048);
    match kind {
        "gaussian" => Ok(PsfModel::gaussian_with(sigma, half_width, nodes)),
        "sinc" => Ok(PsfModel::sinc_with(sigma, half_width, nodes)),
        "sampled" => {
            let file = cfg
                .get("psf", "file")
                .ok_or_else(|| ConfigError::Parse("[psf] sampled kind needs `file`".into()))?;
            let path = cfg.dir.join(file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
            let lmax = cfg.usize("psf", "lmax")?.unwrap_or(8);
            Ok(PsfModel::from_sampled(SampledPsf::parse_text(
                &text, lmax, 1e-6,
            )?))
        }
        other => Err(ConfigError::Parse(format!("unknown psf kind `{other}`"))),
    }
}

pub fn load_psf_2d(cfg: &RawConfig) -> Result<Psf2d> {
    let unit = cfg.length_unit()?;
    let sx = cfg
        .f64("psf", "sigma_x")?
        .or(cfg.f64("psf", "sigma")?)
        .unwrap_or(1.0)
        * unit;
    let sy = cfg
        .f64("psf", "sigma_y")?
        .or(cfg.f64("psf", "sigma")?)
        .unwrap_or(1.0)
        * unit;
    Ok(Psf2d::gaussian(sx, sy))
}

/// Scene text format: `dimension d`, `epsilon e`, then `point x [y] gamma`
/// rows (bare rows without the `point` keyword are accepted too).
pub fn parse_scene_text(text: &str, unit: f64) -> Result<Scene> {
    let mut dimension = 1usize;
    let mut epsilon = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| ConfigError::Parse(format!("scene line {}: {what}", lineno + 1));
        match fields[0] {
            "dimension" => {
                dimension = fields
                    .get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad dimension"))?
            }
            "epsilon" => {
                epsilon = Some(
                    fields
                        .get(1)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("bad epsilon"))?,
                )
            }
            _ => {
                let start = if fields[0] == "point" { 1 } else { 0 };
                let nums: Vec<f64> = fields[start..]
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| bad("bad number")))
                    .collect::<Result<_>>()?;
                rows.push(nums);
            }
        }
    }
    let epsilon = epsilon.ok_or_else(|| ConfigError::Parse("scene needs `epsilon`".into()))?;
    match dimension {
        1 => {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| match r.len() {
                    2 => Ok((r[0] * unit, r[1])),
                    _ => Err(ConfigError::Parse("1D scene rows are `x gamma`".into())),
                })
                .collect::<Result<_>>()?;
            Ok(Scene::line(&pts, epsilon)?)
        }
        2 => {
            let pts: Vec<(f64, f64, f64)> = rows
                .iter()
                .map(|r| match r.len() {
                    3 => Ok((r[0] * unit, r[1] * unit, r[2])),
                    _ => Err(ConfigError::Parse("2D scene rows are `x y gamma`".into())),
                })
                .collect::<Result<_>>()?;
            Ok(Scene::plane(&pts, epsilon)?)
        }
        d => Err(ConfigError::Parse(format!("unsupported dimension {d}"))),
    }
}

/// Scene from `[scene] file = ...` or inline `point` rows.
pub fn load_scene(cfg: &RawConfig, section: &str) -> Result<Scene> {
    let unit = cfg.length_unit()?;
    if let Some(file) = cfg.get(section, "file") {
        let path = cfg.dir.join(file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        return parse_scene_text(&text, unit);
    }
    let eps = cfg
        .f64(section, "epsilon")?
        .ok_or_else(|| ConfigError::Parse(format!("[{section}] needs `epsilon` or `file`")))?;
    let rows = cfg.get_all(section, "point");
    if rows.is_empty() {
        return Err(ConfigError::Parse(format!("[{section}] has no points")));
    }
    let parsed: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| ConfigError::Parse(format!("bad point row `{r}`")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    if parsed.iter().all(|r| r.len() == 2) {
        let pts: Vec<(f64, f64)> = parsed.iter().map(|r| (r[0] * unit, r[1])).collect();
        Ok(Scene::line(&pts, eps)?)
    } else if parsed.iter().all(|r| r.len() == 3) {
        let pts: Vec<(f64, f64, f64)> = parsed
            .iter()
            .map(|r| (r[0] * unit, r[1] * unit, r[2]))
            .collect();
        Ok(Scene::plane(&pts, eps)?)
    } else {
        Err(ConfigError::Parse(
            "point rows must be uniformly `x gamma` or `x y gamma`".into(),
        ))
    }
}

/// Builds the configured measurement about `center`.
pub fn load_povm(cfg: &RawConfig, psf: &PsfModel, center: f64) -> Result<Povm> {
    let unit = cfg.length_unit()?;
    let kind = cfg.get("povm", "kind").unwrap_or("spade").to_string();
    let lmax = cfg.usize("povm", "lmax")?.unwrap_or(8);
    build_povm(&kind, psf, center, lmax, unit)
}

pub fn build_povm(
    kind: &str,
    psf: &PsfModel,
    center: f64,
    lmax: usize,
    unit: f64,
) -> Result<Povm> {
    if let Some(base) = kind.strip_prefix("dressed:") {
        let inner = build_povm(base, psf, center, lmax, unit)?;
        // the fundamental tower has no mode-orthogonal dressing; it
        // stays in the bucket
        let mut inner = inner;
        inner.outcomes.retain(|o| {
            !matches!(&o.op, povm::OutcomeOp::ModeProjector { coeffs }
                if coeffs.iter().any(|(m, c)| matches!(m, povm::ModeRef::One(0)) && c.abs() > 1e-12))
        });
        return Ok(povm::dressed_povm(&inner, DressingMode::Summed)?);
    }
    if let Some(width) = kind.strip_prefix("direct:") {
        let w: f64 = width
            .parse()
            .map_err(|_| ConfigError::Parse(format!("bad pixel width `{width}`")))?;
        let basis = Arc::new(DerivativeBasis::build(psf, 2, center)?);
        return Ok(povm::direct_imaging_povm(&basis, w * unit)?);
    }
    if let Some(fam) = Table2dFamily::parse(kind) {
        let bx = DerivativeBasis::build(psf, lmax, center)?;
        let by = DerivativeBasis::build(psf, lmax, center)?;
        let b2 = Arc::new(Basis2D::separable(bx, by)?);
        return Ok(povm::table2d_povm(&b2, fam, lmax.min(4))?);
    }
    let basis = Arc::new(DerivativeBasis::build(psf, lmax, center)?);
    match kind {
        "spade" => Ok(povm::spade_povm(&basis, lmax)?),
        "interleaved-even" => Ok(povm::interleaved_povm(&basis, Parity::Even)?),
        "interleaved-odd" => Ok(povm::interleaved_povm(&basis, Parity::Odd)?),
        "sliver" => Ok(povm::sliver_povm(&basis)?),
        other => Err(ConfigError::Parse(format!("unknown povm kind `{other}`"))),
    }
}
