//! Plain-text sectioned `key = value` run configuration. Every key has a
//! documented default; unknown keys and sections are hard errors so typos
//! cannot silently fall back to defaults. The effective configuration is
//! re-rendered canonically for artifact headers and hashing.

use crate::kernel::FourierParams;
use crate::model::{Baseline, Kernel, ModelSpec, PerturbationF, RefDensity};

use crate::pathsim::SmallJumpMode;
use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key '{key}' in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("bad value for {section}.{key}: '{value}' ({message})")]
    BadValue {
        section: String,
        key: String,
        value: String,
        message: String,
    },
    #[error("malformed line {line}: '{text}'")]
    MalformedLine { line: usize, text: String },
    #[error("bad override '{0}': expected section.key=value")]
    BadOverride(String),
}

const SECTIONS: [&str; 6] = ["model", "perturbation", "grid", "sim", "series", "verify"];

const MODEL_KEYS: [&str; 11] = [
    "dim",
    "alpha",
    "baseline",
    "c2",
    "c_bar",
    "m",
    "m_lo",
    "m_hi",
    "envelope_lo",
    "envelope_hi",
    "fourier.nodes",
];
const MODEL_KEYS_EXTRA: [&str; 1] = ["fourier.omega_cutoff"];
const PERTURBATION_KEYS: [&str; 6] = ["kind", "c", "delta", "beta", "lambda", "half_bound"];
const GRID_KEYS: [&str; 4] = ["t_max", "time_nodes", "radius", "space_nodes"];
const SIM_KEYS: [&str; 7] = [
    "epsilon",
    "t_horizon",
    "paths",
    "seed",
    "small_jump_mode",
    "floor_ratio",
    "r_sim",
];
const SERIES_KEYS: [&str; 6] = [
    "n_max",
    "truncation",
    "tolerance",
    "targets",
    "target_k",
    "mu_subdiv",
];
const VERIFY_KEYS: [&str; 4] = ["compositions", "mc_paths", "holder_radii", "holder_t"];

fn known_keys(section: &str) -> Option<Vec<&'static str>> {
    match section {
        "model" => Some(
            MODEL_KEYS
                .iter()
                .chain(MODEL_KEYS_EXTRA.iter())
                .copied()
                .collect(),
        ),
        "perturbation" => Some(PERTURBATION_KEYS.to_vec()),
        "grid" => Some(GRID_KEYS.to_vec()),
        "sim" => Some(SIM_KEYS.to_vec()),
        "series" => Some(SERIES_KEYS.to_vec()),
        "verify" => Some(VERIFY_KEYS.to_vec()),
        _ => None,
    }
}

/// Raw parsed keys per section.
type SectionMap = BTreeMap<String, BTreeMap<String, String>>;

fn parse_sections(text: &str) -> Result<SectionMap, ConfigError> {
    let mut out: SectionMap = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            let name = line[1..line.len() - 1].trim().to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(ConfigError::UnknownSection(name));
            }
            current = Some(name.clone());
            out.entry(name).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::MalformedLine {
                line: idx + 1,
                text: raw.to_string(),
            });
        };
        let section = current.clone().ok_or(ConfigError::MalformedLine {
            line: idx + 1,
            text: raw.to_string(),
        })?;
        let key = key.trim().to_string();
        let keys = known_keys(&section).expect("section validated above");
        if !keys.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { section, key });
        }
        out.entry(section)
            .or_default()
            .insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn apply_override(sections: &mut SectionMap, spec: &str) -> Result<(), ConfigError> {
    let Some((path, value)) = spec.split_once('=') else {
        return Err(ConfigError::BadOverride(spec.to_string()));
    };
    let Some((section, key)) = path.trim().split_once('.') else {
        return Err(ConfigError::BadOverride(spec.to_string()));
    };
    // Dotted model keys like fourier.nodes arrive as model.fourier.nodes.
    let (section, key) = (section.trim(), key.trim());
    if !SECTIONS.contains(&section) {
        return Err(ConfigError::UnknownSection(section.to_string()));
    }
    let keys = known_keys(section).expect("section validated above");
    if !keys.contains(&key) {
        return Err(ConfigError::UnknownKey {
            section: section.to_string(),
            key: key.to_string(),
        });
    }
    sections
        .entry(section.to_string())
        .or_default()
        .insert(key.to_string(), value.trim().to_string());
    Ok(())
}

struct SectionReader<'a> {
    section: &'static str,
    map: Option<&'a BTreeMap<String, String>>,
}

impl<'a> SectionReader<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.map.and_then(|m| m.get(key)).map(|s| s.as_str())
    }

    fn value_err(&self, key: &str, value: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            section: self.section.to_string(),
            key: key.to_string(),
            value: value.to_string(),
            message: message.into(),
        }
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|e| self.value_err(key, v, e.to_string())),
        }
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|e| self.value_err(key, v, e.to_string())),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|e| self.value_err(key, v, e.to_string())),
        }
    }

    fn u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|e| self.value_err(key, v, e.to_string())),
        }
    }

    fn f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse::<f64>()
                        .map_err(|e| self.value_err(key, v, e.to_string()))
                })
                .collect(),
        }
    }
}

/// Grid parameters.
#[derive(Debug, Clone, Copy)]
pub struct GridConfig {
    pub t_max: f64,
    pub time_nodes: usize,
    pub radius: f64,
    pub space_nodes: usize,
}

/// Simulation parameters.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub epsilon: f64,
    pub t_horizon: f64,
    pub paths: u64,
    pub seed: u64,
    pub small_jump_mode: SmallJumpMode,
    pub floor_ratio: f64,
    pub r_sim: f64,
}

/// Series parameters.
#[derive(Debug, Clone)]
pub struct SeriesConfig {
    pub n_max: usize,
    pub truncation: usize,
    pub tolerance: f64,
    pub targets: Vec<f64>,
    pub target_k: f64,
    pub mu_subdiv: usize,
}

/// Verification parameters.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub compositions: usize,
    pub mc_paths: u64,
    pub holder_radii: Vec<f64>,
    /// Panel time; 0 selects `min(t1, t_max/2)` at run time.
    pub holder_t: f64,
}

/// Fully resolved run configuration with its canonical text and hash.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub pert: PerturbationF,
    pub fourier: FourierParams,
    pub grid: GridConfig,
    pub sim: SimConfig,
    pub series: SeriesConfig,
    pub verify: VerifyConfig,
    /// Canonical rendering of every effective key.
    pub effective: String,
    pub hash: u64,
}

pub fn fnv1a64(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Parses a config text plus `section.key=value` overrides into a resolved
/// configuration; `parse_config("")` yields the documented defaults (the
/// Cauchy baseline with the 0.1/0.5 threshold perturbation).
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut sections = parse_sections(text)?;
    for spec in overrides {
        apply_override(&mut sections, spec)?;
    }
    let reader = |name: &'static str| SectionReader {
        section: name,
        map: sections.get(name),
    };

    // [model]
    let model_r = reader("model");
    let dim = model_r.usize("dim", 1)?;
    let alpha = model_r.f64("alpha", 1.0)?;
    let baseline_str = model_r.get("baseline").unwrap_or("cauchy").to_string();
    let baseline = if baseline_str == "cauchy" {
        Baseline::CauchyClosedForm
    } else if baseline_str == "fourier" {
        Baseline::FourierInversion1D
    } else if let Some(path) = baseline_str.strip_prefix("table:") {
        Baseline::UserTable(path.trim().to_string())
    } else {
        return Err(model_r.value_err(
            "baseline",
            &baseline_str,
            "expected cauchy, fourier or table:<path>",
        ));
    };
    let c2 = model_r.f64("c2", FRAC_1_PI)?;
    let c_bar = model_r.f64("c_bar", c2)?;
    let m = model_r.f64("m", 1.0)?;
    let m_lo = model_r.f64("m_lo", m)?;
    let m_hi = model_r.f64("m_hi", m)?;
    let envelope_lo = model_r.f64("envelope_lo", 0.5 * FRAC_1_PI)?;
    let envelope_hi = model_r.f64("envelope_hi", FRAC_1_PI)?;
    let fourier = FourierParams {
        cutoff_factor: model_r.f64("fourier.omega_cutoff", 40.0)?,
        nodes: model_r.usize("fourier.nodes", 1 << 14)?,
    };
    let model = ModelSpec {
        dim,
        alpha,
        kernel: Kernel::Constant(c2),
        c_bar,
        density_m: RefDensity::Constant(m),
        m_lo,
        m_hi,
        baseline,
        envelope_lo,
        envelope_hi,
    };

    // [perturbation]
    let pert_r = reader("perturbation");
    let kind = pert_r.get("kind").unwrap_or("threshold").to_string();
    let c = pert_r.f64("c", 0.1)?;
    let delta = pert_r.f64("delta", 0.5)?;
    let beta = pert_r.f64("beta", 1.5)?;
    let lambda = pert_r.f64("lambda", 1.0)?;
    let mut pert = match kind.as_str() {
        "zero" => PerturbationF::zero(),
        "threshold" => PerturbationF::threshold(c, delta),
        "threshold_one_sided" => PerturbationF::threshold_one_sided(c, delta),
        "holder" => PerturbationF::holder_bump(beta, lambda),
        other => {
            return Err(pert_r.value_err(
                "kind",
                other,
                "expected zero, threshold, threshold_one_sided or holder",
            ))
        }
    };
    if let Some(hb) = pert_r.f64_opt("half_bound")? {
        pert.half_bound = hb;
    }

    // [grid]
    let grid_r = reader("grid");
    let grid = GridConfig {
        t_max: grid_r.f64("t_max", 0.5)?,
        time_nodes: grid_r.usize("time_nodes", 64)?,
        radius: grid_r.f64("radius", 6.0)?,
        space_nodes: grid_r.usize("space_nodes", 512)?,
    };

    // [sim]
    let sim_r = reader("sim");
    let mode_str = sim_r.get("small_jump_mode").unwrap_or("discard");
    let small_jump_mode = match mode_str {
        "discard" => SmallJumpMode::Discard,
        "stable_remainder" => SmallJumpMode::StableRemainder,
        other => {
            return Err(sim_r.value_err(
                "small_jump_mode",
                other,
                "expected discard or stable_remainder",
            ))
        }
    };
    let sim = SimConfig {
        epsilon: sim_r.f64("epsilon", 0.5)?,
        t_horizon: sim_r.f64("t_horizon", 1.0)?,
        paths: sim_r.u64("paths", 100_000)?,
        seed: sim_r.u64("seed", 1)?,
        small_jump_mode,
        floor_ratio: sim_r.f64("floor_ratio", 64.0)?,
        r_sim: sim_r.f64("r_sim", 10.0)?,
    };

    // [series]
    let series_r = reader("series");
    let series = SeriesConfig {
        n_max: series_r.usize("n_max", 6)?,
        truncation: series_r.usize("truncation", 6)?,
        tolerance: series_r.f64("tolerance", 0.05)?,
        targets: series_r.f64_list("targets", &[-2.0, -1.0, 0.0, 0.5, 1.5])?,
        target_k: series_r.f64("target_k", 0.5)?,
        mu_subdiv: series_r.usize("mu_subdiv", 8)?,
    };

    // [verify]
    let verify_r = reader("verify");
    let verify = VerifyConfig {
        compositions: verify_r.usize("compositions", 4)?,
        mc_paths: verify_r.u64("mc_paths", 20_000)?,
        holder_radii: verify_r.f64_list("holder_radii", &[0.25, 0.5])?,
        holder_t: verify_r.f64("holder_t", 0.0)?,
    };

    let effective = render_effective(
        &model,
        &baseline_str,
        &kind,
        c,
        delta,
        beta,
        lambda,
        pert.half_bound,
        &fourier,
        &grid,
        &sim,
        &series,
        &verify,
    );
    let hash = fnv1a64(&effective);

    Ok(RunConfig {
        model,
        pert,
        fourier,
        grid,
        sim,
        series,
        verify,
        effective,
        hash,
    })
}

#[allow(clippy::too_many_arguments)]
fn render_effective(
    model: &ModelSpec,
    baseline: &str,
    kind: &str,
    c: f64,
    delta: f64,
    beta: f64,
    lambda: f64,
    half_bound: f64,
    fourier: &FourierParams,
    grid: &GridConfig,
    sim: &SimConfig,
    series: &SeriesConfig,
    verify: &VerifyConfig,
) -> String {
    let mode = match sim.small_jump_mode {
        SmallJumpMode::Discard => "discard",
        SmallJumpMode::StableRemainder => "stable_remainder",
    };
    let targets: Vec<String> = series.targets.iter().map(|v| format!("{v}")).collect();
    let radii: Vec<String> = verify.holder_radii.iter().map(|v| format!("{v}")).collect();
    format!(
        "[model]\n\
         dim = {}\nalpha = {}\nbaseline = {}\nc2 = {}\nc_bar = {}\nm = {}\nm_lo = {}\nm_hi = {}\n\
         envelope_lo = {}\nenvelope_hi = {}\nfourier.omega_cutoff = {}\nfourier.nodes = {}\n\
         [perturbation]\nkind = {}\nc = {}\ndelta = {}\nbeta = {}\nlambda = {}\nhalf_bound = {}\n\
         [grid]\nt_max = {}\ntime_nodes = {}\nradius = {}\nspace_nodes = {}\n\
         [sim]\nepsilon = {}\nt_horizon = {}\npaths = {}\nseed = {}\nsmall_jump_mode = {}\nfloor_ratio = {}\nr_sim = {}\n\
         [series]\nn_max = {}\ntruncation = {}\ntolerance = {}\ntargets = {}\ntarget_k = {}\nmu_subdiv = {}\n\
         [verify]\ncompositions = {}\nmc_paths = {}\nholder_radii = {}\nholder_t = {}\n",
        model.dim,
        model.alpha,
        baseline,
        model.kernel.eval(&[0.0], &[0.0]),
        model.c_bar,
        model.density_m.eval(&[0.0]),
        model.m_lo,
        model.m_hi,
        model.envelope_lo,
        model.envelope_hi,
        fourier.cutoff_factor,
        fourier.nodes,
        kind,
        c,
        delta,
        beta,
        lambda,
        half_bound,
        grid.t_max,
        grid.time_nodes,
        grid.radius,
        grid.space_nodes,
        sim.epsilon,
        sim.t_horizon,
        sim.paths,
        sim.seed,
        mode,
        sim.floor_ratio,
        sim.r_sim,
        series.n_max,
        series.truncation,
        series.tolerance,
        targets.join(","),
        series.target_k,
        series.mu_subdiv,
        verify.compositions,
        verify.mc_paths,
        radii.join(","),
        verify.holder_t,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_roundtrip() {
        let cfg = parse_config("", &[]).unwrap();
        assert_eq!(cfg.model.dim, 1);
        assert_eq!(cfg.grid.time_nodes, 64);
        assert_eq!(cfg.grid.space_nodes, 512);
        assert_eq!(cfg.sim.seed, 1);
        // The effective text itself parses back to the same hash.
        let effective = cfg.effective.clone();
        let reparsed = parse_config(&effective, &[]).unwrap();
        assert_eq!(cfg.hash, reparsed.hash);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("[model]\nalhpa = 1.0\n", &[]).unwrap_err();
        match err {
            ConfigError::UnknownKey { key, section } => {
                assert_eq!(key, "alhpa");
                assert_eq!(section, "model");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(matches!(
            parse_config("[mdoel]\nalpha = 1\n", &[]),
            Err(ConfigError::UnknownSection(_))
        ));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = parse_config("", &["sim.seed=42".to_string(), "grid.space_nodes=128".into()])
            .unwrap();
        assert_eq!(cfg.sim.seed, 42);
        assert_eq!(cfg.grid.space_nodes, 128);
        assert!(parse_config("", &["sim.sede=1".to_string()]).is_err());
        assert!(parse_config("", &["nonsense".to_string()]).is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# full line comment\n\n[model]\nalpha = 0.8  # trailing\n";
        let cfg = parse_config(text, &[]).unwrap();
        assert_eq!(cfg.model.alpha, 0.8);
    }

    #[test]
    fn perturbation_kinds_build() {
        for kind in ["zero", "threshold", "threshold_one_sided", "holder"] {
            let text = format!("[perturbation]\nkind = {kind}\n");
            let cfg = parse_config(&text, &[]).unwrap();
            if kind == "zero" {
                assert_eq!(cfg.pert.half_bound, 0.0);
            }
        }
        assert!(parse_config("[perturbation]\nkind = bogus\n", &[]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config("", &[]).unwrap();
        let b = parse_config("[sim]\nseed = 2\n", &[]).unwrap();
        assert_ne!(a.hash, b.hash);
    }

    #[test]
    fn table_baseline_syntax_parses() {
        let cfg = parse_config("[model]\nbaseline = table:/tmp/p.csv\n", &[]).unwrap();
        assert_eq!(
            cfg.model.baseline,
            Baseline::UserTable("/tmp/p.csv".to_string())
        );
        assert!(parse_config("[model]\nbaseline = gaussian\n", &[]).is_err());
    }
}
