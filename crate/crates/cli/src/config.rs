//! Experiment configuration: one TOML file, a `kind`, and a section for that kind.
//!
//! Unknown keys anywhere are errors, so a misspelled tolerance cannot fall back to a default.

use std::path::{Path, PathBuf};

use hermite_ito::ito::MIN_CUSHION;
use hermite_ito::levy::LevyPreset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    OperatorChecks,
    IsometryEnumeration,
    ItoPurejump,
    ItoBrownian,
    LocalTime,
    LevySpde,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::OperatorChecks => "operator-checks",
            Kind::IsometryEnumeration => "isometry-enumeration",
            Kind::ItoPurejump => "ito-purejump",
            Kind::ItoBrownian => "ito-brownian",
            Kind::LocalTime => "local-time",
            Kind::LevySpde => "levy-spde",
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub operator_checks: Option<OperatorChecks>,
    pub isometry_enumeration: Option<IsometryEnumeration>,
    pub ito_purejump: Option<ItoPurejump>,
    pub ito_brownian: Option<ItoBrownian>,
    pub local_time: Option<LocalTime>,
    pub levy_spde: Option<LevySpde>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorChecks {
    pub dims: Vec<usize>,
    pub n_big: usize,
    pub n_eval: usize,
    pub shifts: Vec<f64>,
    pub group_shift: f64,
    /// Random φ (and ψ) per dimension for the duality and commutation checks.
    pub samples: usize,
    pub recurrence_tol: f64,
    pub duality_tol: f64,
    pub commutation_tol: f64,
    pub identity_tol: f64,
    pub group_tol: f64,
}

impl Default for OperatorChecks {
    fn default() -> Self {
        OperatorChecks {
            dims: vec![1, 2],
            n_big: 32,
            n_eval: 26,
            shifts: vec![0.5, -0.5, 1.5, -1.5],
            group_shift: 0.7,
            samples: 5,
            recurrence_tol: 1e-12,
            duality_tol: 1e-10,
            commutation_tol: 1e-6,
            identity_tol: 1e-12,
            group_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsometryEnumeration {
    /// Walk length for the isometry; all 2^k paths are enumerated.
    pub k: usize,
    /// p in E‖∫G dM‖²_{−p} = E∫‖G‖²_{−p} d⟨M⟩.
    pub orders: Vec<f64>,
    pub isometry_tol: f64,
    /// Walk length for the decomposition-independence check.
    pub decomposition_k: usize,
    /// Slope of the deterministic drift D(t) moved from M to A.
    pub drift: f64,
    pub decomposition_tol: f64,
}

impl Default for IsometryEnumeration {
    fn default() -> Self {
        IsometryEnumeration {
            k: 10,
            orders: vec![0.0, 1.0],
            isometry_tol: 1e-12,
            decomposition_k: 8,
            drift: 0.75,
            decomposition_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoPurejump {
    pub paths: usize,
    pub rate: f64,
    /// Jumps are N(0, jump_scale²).
    pub jump_scale: f64,
    pub horizon: f64,
    pub steps: usize,
    pub n_big: usize,
    pub n_eval: usize,
    pub p: f64,
    pub tol: f64,
    /// Per-time report CSVs are written for the first `path_csvs` paths.
    pub path_csvs: usize,
}

impl Default for ItoPurejump {
    fn default() -> Self {
        ItoPurejump {
            paths: 50,
            rate: 3.0,
            jump_scale: 0.6,
            horizon: 1.0,
            steps: 64,
            n_big: 40,
            n_eval: 34,
            p: 1.0,
            tol: 1e-8,
            path_csvs: 2,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoBrownian {
    pub paths: usize,
    /// Grid levels: level ℓ has 2^ℓ uniform steps.
    pub levels: Vec<u32>,
    /// Draw the finest level once and aggregate it for coarser levels.
    pub coupled: bool,
    pub horizon: f64,
    pub n_big: usize,
    pub n_eval: usize,
    pub p: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub path_csvs: usize,
}

impl Default for ItoBrownian {
    fn default() -> Self {
        ItoBrownian {
            paths: 100,
            levels: vec![8, 9, 10, 11, 12],
            coupled: true,
            horizon: 1.0,
            n_big: 40,
            n_eval: 34,
            p: 1.0,
            slope_min: 0.3,
            slope_max: 0.7,
            path_csvs: 1,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalTime {
    pub paths: usize,
    /// Paths of the independent kernel-estimate oracle.
    pub oracle_paths: usize,
    pub level: u32,
    pub horizon: f64,
    /// Kernel bandwidth h = Δt^bandwidth_exponent.
    pub bandwidth_exponent: f64,
    /// Reconstruction cap; defaults to round(1/(πh²)), where the Hermite truncation
    /// smooths on the kernel's scale.
    pub cap: Option<usize>,
    pub x: f64,
    /// Agreement threshold in joint standard errors.
    pub se_factor: f64,
}

impl Default for LocalTime {
    fn default() -> Self {
        LocalTime {
            paths: 10_000,
            oracle_paths: 10_000,
            level: 12,
            horizon: 1.0,
            bandwidth_exponent: 0.4,
            cap: None,
            x: 0.0,
            se_factor: 3.0,
        }
    }
}

impl LocalTime {
    pub fn bandwidth(&self) -> f64 {
        (self.horizon / (1u64 << self.level) as f64).powf(self.bandwidth_exponent)
    }

    pub fn reconstruction_cap(&self) -> usize {
        self.cap.unwrap_or_else(|| {
            let h = self.bandwidth();
            (1.0 / (std::f64::consts::PI * h * h)).round() as usize
        })
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevySpde {
    pub preset: String,
    pub paths: usize,
    pub level: u32,
    pub horizon: f64,
    pub n_big: usize,
    pub n_eval: usize,
    /// Overrides of the preset's small-jump truncation.
    pub epsilon: Option<f64>,
    pub bins: Option<usize>,
    pub min_retention: f64,
    pub norm_bound: f64,
    pub gap_tol: f64,
    pub ito_gap_tol: f64,
    /// Refinement study of the same model with ν ≡ 0; empty to skip.
    pub no_jump_levels: Vec<u32>,
    pub no_jump_paths: usize,
    pub coupled: bool,
    pub slope_min: f64,
    pub slope_max: f64,
    pub path_csvs: usize,
}

impl Default for LevySpde {
    fn default() -> Self {
        LevySpde {
            preset: "default".into(),
            paths: 50,
            level: 8,
            horizon: 1.0,
            n_big: 40,
            n_eval: 34,
            epsilon: None,
            bins: None,
            min_retention: 0.999,
            norm_bound: 1e12,
            gap_tol: 1e-9,
            ito_gap_tol: 1e-9,
            no_jump_levels: vec![8, 9, 10, 11, 12],
            no_jump_paths: 100,
            coupled: true,
            slope_min: 0.3,
            slope_max: 0.7,
            path_csvs: 1,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn check_caps(section: &str, n_big: usize, n_eval: usize) -> CliResult<()> {
    if n_eval + MIN_CUSHION > n_big {
        return Err(invalid(
            &format!("{section}.n_eval"),
            format!("{n_eval} must be at most n_big - {MIN_CUSHION} = {}", n_big as i64 - MIN_CUSHION as i64),
        ));
    }
    Ok(())
}

fn check_count(field: &str, n: usize) -> CliResult<()> {
    if n == 0 {
        return Err(invalid(field, "must be at least 1"));
    }
    Ok(())
}

fn check_levels(field: &str, levels: &[u32], min_len: usize) -> CliResult<()> {
    if levels.len() < min_len {
        return Err(invalid(field, format!("needs at least {min_len} levels")));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(field, "levels must be strictly ascending"));
    }
    if let Some(l) = levels.iter().find(|&&l| l == 0 || l > 20) {
        return Err(invalid(field, format!("level {l} outside 1..=20")));
    }
    Ok(())
}

fn check_positive(field: &str, v: f64) -> CliResult<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(field, format!("{v} must be positive and finite")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative `output_dir` is resolved against the config's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if cfg.output_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output_dir = parent.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let present = [
            (Kind::OperatorChecks, self.operator_checks.is_some()),
            (Kind::IsometryEnumeration, self.isometry_enumeration.is_some()),
            (Kind::ItoPurejump, self.ito_purejump.is_some()),
            (Kind::ItoBrownian, self.ito_brownian.is_some()),
            (Kind::LocalTime, self.local_time.is_some()),
            (Kind::LevySpde, self.levy_spde.is_some()),
        ];
        for (kind, is_present) in present {
            if is_present && kind != self.kind {
                return Err(invalid(
                    &section_name(kind),
                    format!("section given but kind is \"{}\"", self.kind.name()),
                ));
            }
        }
        match self.kind {
            Kind::OperatorChecks => {
                let c = self.operator_checks();
                if c.dims.is_empty() || c.dims.iter().any(|&d| d == 0 || d > 3) {
                    return Err(invalid("operator_checks.dims", "dimensions must be in 1..=3"));
                }
                if c.n_eval > c.n_big || c.n_big < 8 {
                    return Err(invalid("operator_checks.n_eval", "needs 8 <= n_big and n_eval <= n_big"));
                }
                check_count("operator_checks.samples", c.samples)?;
            }
            Kind::IsometryEnumeration => {
                let c = self.isometry_enumeration();
                for (field, k) in [("k", c.k), ("decomposition_k", c.decomposition_k)] {
                    if !(3..=hermite_ito::paths::MAX_EXHAUSTIVE_STEPS).contains(&k) {
                        return Err(invalid(
                            &format!("isometry_enumeration.{field}"),
                            format!("{k} outside 3..={}", hermite_ito::paths::MAX_EXHAUSTIVE_STEPS),
                        ));
                    }
                }
                if c.orders.is_empty() {
                    return Err(invalid("isometry_enumeration.orders", "must not be empty"));
                }
            }
            Kind::ItoPurejump => {
                let c = self.ito_purejump();
                check_caps("ito_purejump", c.n_big, c.n_eval)?;
                check_count("ito_purejump.paths", c.paths)?;
                check_count("ito_purejump.steps", c.steps)?;
                check_positive("ito_purejump.horizon", c.horizon)?;
                check_positive("ito_purejump.rate", c.rate)?;
            }
            Kind::ItoBrownian => {
                let c = self.ito_brownian();
                check_caps("ito_brownian", c.n_big, c.n_eval)?;
                check_count("ito_brownian.paths", c.paths)?;
                check_levels("ito_brownian.levels", &c.levels, 2)?;
                check_positive("ito_brownian.horizon", c.horizon)?;
            }
            Kind::LocalTime => {
                let c = self.local_time();
                check_count("local_time.paths", c.paths)?;
                check_count("local_time.oracle_paths", c.oracle_paths)?;
                check_levels("local_time.level", &[c.level], 1)?;
                check_positive("local_time.horizon", c.horizon)?;
                check_positive("local_time.bandwidth_exponent", c.bandwidth_exponent)?;
                if c.reconstruction_cap() == 0 || c.reconstruction_cap() > 4000 {
                    return Err(invalid("local_time.cap", "reconstruction cap must be in 1..=4000"));
                }
            }
            Kind::LevySpde => {
                let c = self.levy_spde();
                check_caps("levy_spde", c.n_big, c.n_eval)?;
                check_count("levy_spde.paths", c.paths)?;
                check_levels("levy_spde.level", &[c.level], 1)?;
                if !c.no_jump_levels.is_empty() {
                    check_levels("levy_spde.no_jump_levels", &c.no_jump_levels, 2)?;
                    check_count("levy_spde.no_jump_paths", c.no_jump_paths)?;
                }
                check_positive("levy_spde.horizon", c.horizon)?;
                if LevyPreset::parse(&c.preset).is_none() {
                    let names: Vec<&str> = LevyPreset::ALL.iter().map(|p| p.name()).collect();
                    return Err(invalid(
                        "levy_spde.preset",
                        format!("unknown preset \"{}\" (known: {})", c.preset, names.join(", ")),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn operator_checks(&self) -> OperatorChecks {
        self.operator_checks.clone().unwrap_or_default()
    }

    pub fn isometry_enumeration(&self) -> IsometryEnumeration {
        self.isometry_enumeration.clone().unwrap_or_default()
    }

    pub fn ito_purejump(&self) -> ItoPurejump {
        self.ito_purejump.clone().unwrap_or_default()
    }

    pub fn ito_brownian(&self) -> ItoBrownian {
        self.ito_brownian.clone().unwrap_or_default()
    }

    pub fn local_time(&self) -> LocalTime {
        self.local_time.clone().unwrap_or_default()
    }

    pub fn levy_spde(&self) -> LevySpde {
        self.levy_spde.clone().unwrap_or_default()
    }
}

fn section_name(kind: Kind) -> String {
    kind.name().replace('-', "_")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_section_defaults() {
        let cfg = ExperimentConfig::parse("kind = \"ito-purejump\"\nmaster_seed = 3\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(cfg.kind, Kind::ItoPurejump);
        assert_eq!(cfg.ito_purejump().paths, 50);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = "kind = \"ito-purejump\"\nmaster_seed = 3\noutput_dir = \"o\"\n[ito_purejump]\ntoll = 1e-3\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("toll") && msg.contains("line 5"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cushion_and_levels_are_validated() {
        let text = "kind = \"ito-brownian\"\nmaster_seed = 1\noutput_dir = \"o\"\n[ito_brownian]\nn_big = 20\nn_eval = 16\n";
        assert!(ExperimentConfig::parse(text).unwrap_err().to_string().contains("ito_brownian.n_eval"));
        let text = "kind = \"ito-brownian\"\nmaster_seed = 1\noutput_dir = \"o\"\n[ito_brownian]\nlevels = [9, 8]\n";
        assert!(ExperimentConfig::parse(text).unwrap_err().to_string().contains("ascending"));
        let text = "kind = \"local-time\"\nmaster_seed = 1\noutput_dir = \"o\"\n[local_time]\npaths = 0\n";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn sections_must_match_the_kind() {
        let text = "kind = \"ito-purejump\"\nmaster_seed = 1\noutput_dir = \"o\"\n[local_time]\npaths = 3\n";
        assert!(ExperimentConfig::parse(text).unwrap_err().to_string().contains("local_time"));
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        let text = "kind = \"levy-spde\"\nmaster_seed = 1\noutput_dir = \"o\"\n[levy_spde]\npreset = \"gaussian\"\n";
        assert!(ExperimentConfig::parse(text).unwrap_err().to_string().contains("unknown preset"));
    }

    #[test]
    fn default_local_time_cap_matches_the_bandwidth() {
        let c = LocalTime::default();
        let h = c.bandwidth();
        assert!((h - 2f64.powf(-4.8)).abs() < 1e-15);
        assert_eq!(c.reconstruction_cap(), 247);
    }
}
