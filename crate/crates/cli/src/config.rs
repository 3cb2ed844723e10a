use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssrnas::archspace::SpaceConfig;
use ssrnas::bench::{TaskConfig, DEFAULT_ENUMERATION_CAP};
use ssrnas::engine::{RetrainConfig, SearchConfig};
use ssrnas::regloss::Regularizer;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "SSRNAS_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent configuration, exit 1.
    Config(String),
    /// Failure while running, exit 2.
    Runtime(String),
}

impl CliError {
    pub fn config(key: &str, reason: impl fmt::Display) -> Self {
        CliError::Config(format!("`{key}`: {reason}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<ssrnas::Error> for CliError {
    fn from(e: ssrnas::Error) -> Self {
        match e {
            ssrnas::Error::Config { field, reason } => CliError::config(&field, reason),
            e @ ssrnas::Error::EnumerationCap { .. } => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    /// Largest space the oracle will enumerate.
    pub cap: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    /// Random simplex points for the L0 diagnostics.
    pub points: usize,
    pub seed: u64,
    /// Exponents `m`, strictly decreasing.
    pub m_values: Vec<f64>,
    /// Random single-primitive tapes for the finite-difference suite.
    pub tapes: usize,
    /// Random states of the full architecture objective.
    pub arch_states: usize,
    pub fd_seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            points: 100,
            seed: 99,
            m_values: vec![1e-2, 1e-3, 1e-4],
            tapes: 50,
            arch_states: 10,
            fd_seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSettings {
    pub seeds: Vec<u64>,
    pub arms: Vec<Regularizer>,
    /// Retrain every searched architecture and report its metric.
    pub retrain: bool,
}

impl Default for AblateSettings {
    fn default() -> Self {
        AblateSettings {
            seeds: vec![0, 1, 2],
            arms: Regularizer::ALL.to_vec(),
            retrain: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Name of the run directory under `output_dir`.
    pub run_id: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub space: SpaceConfig,
    pub task: TaskConfig,
    pub search: SearchConfig,
    pub retrain: RetrainConfig,
    pub oracle: OracleSettings,
    pub verify: VerifySettings,
    pub ablate: AblateSettings,
}

/// Prefixes a library config error with its section, unless it already
/// carries one of `sections`.
fn in_section(e: ssrnas::Error, prefix: &str, sections: &[&str]) -> CliError {
    match e {
        ssrnas::Error::Config { field, reason } => {
            let owned = sections.iter().any(|s| field.starts_with(&format!("{s}.")));
            let key = if owned {
                field
            } else {
                format!("{prefix}.{field}")
            };
            CliError::config(&key, reason)
        }
        e => e.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            CliError::config(&key, inner.message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.space
            .validate()
            .map_err(|e| in_section(e, "space", &[]))?;
        self.task
            .validate()
            .map_err(|e| in_section(e, "task", &["task"]))?;
        self.search
            .validate()
            .map_err(|e| in_section(e, "search", &["search"]))?;
        self.retrain
            .validate()
            .map_err(|e| in_section(e, "retrain", &["retrain"]))?;
        for (key, task, space) in [
            ("task.length", self.task.length, self.space.length),
            (
                "task.in_channels",
                self.task.in_channels,
                self.space.in_channels,
            ),
            ("task.classes", self.task.classes, self.space.classes),
        ] {
            if task != space {
                return Err(CliError::config(
                    key,
                    format!("{task} does not match the space ({space})"),
                ));
            }
        }
        if let Some(id) = &self.run_id {
            check_run_id(id)?;
        }
        let v = &self.verify;
        if v.points == 0 {
            return Err(CliError::config("verify.points", "must be > 0"));
        }
        if v.m_values.is_empty()
            || v.m_values.iter().any(|&m| !(m > 0.0 && m.is_finite()))
            || v.m_values.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(CliError::config(
                "verify.m_values",
                "need a non-empty strictly decreasing list of positive numbers",
            ));
        }
        let a = &self.ablate;
        if a.seeds.is_empty() {
            return Err(CliError::config("ablate.seeds", "must not be empty"));
        }
        if a.arms.is_empty() {
            return Err(CliError::config("ablate.arms", "must not be empty"));
        }
        if a.arms
            .iter()
            .enumerate()
            .any(|(i, r)| a.arms[..i].contains(r))
        {
            return Err(CliError::config("ablate.arms", "arms must be distinct"));
        }
        Ok(())
    }

    /// Fills `run_id` and `output_dir`. Flags beat the file, the file beats
    /// the environment.
    pub fn resolve(
        &mut self,
        command: &str,
        run_id: Option<String>,
        output_root: Option<PathBuf>,
    ) -> Result<(), CliError> {
        if let Some(id) = run_id {
            check_run_id(&id)?;
            self.run_id = Some(id);
        }
        if self.run_id.is_none() {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            self.run_id = Some(format!("{command}-{secs}"));
        }
        if let Some(root) = output_root {
            self.output_dir = Some(root);
        }
        if self.output_dir.is_none() {
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
            self.output_dir = Some(root);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self)
            .map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
    }
}

fn check_run_id(id: &str) -> Result<(), CliError> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(CliError::config(
            "run_id",
            "use letters, digits, `-`, `_` and `.` only",
        ))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read `{}`: {e}", path.display())))?;
    RunConfig::from_toml(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        e => e,
    })
}
