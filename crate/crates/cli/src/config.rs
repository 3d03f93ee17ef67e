//! Scenario files: TOML with one table per concern.
//!
//! ```toml
//! [scenario]
//! name = "ring"
//! seed = 7
//!
//! [source]
//! kind = "ring"        # fully_connected | ring | blocks | kernel | matrix_file
//! n = 100
//!
//! [initial]
//! kind = "uniform"     # uniform | list | file | node_coordinate
//! lo = 0.0
//! hi = 1.0
//!
//! [integration]
//! dt = 0.1
//! t_end = 2000.0
//!
//! [control]
//! kind = "none"        # none | jurdjevic_quinn | cubic_damping
//!
//! [output]
//! formats = ["csv", "json", "svg"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub source: Source,
    #[serde(default)]
    pub initial: Initial,
    #[serde(default)]
    pub integration: Integration,
    #[serde(default)]
    pub control: Control,
    #[serde(default)]
    pub discrete: Discrete,
    #[serde(default)]
    pub kernel: KernelStudy,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Entries at or below this value count as absent arcs.
    #[serde(default)]
    pub tolerance_zero: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    FullyConnected {
        n: usize,
    },
    Ring {
        n: usize,
    },
    Blocks {
        n: usize,
        blocks: usize,
    },
    Kernel {
        n: usize,
        name: String,
        #[serde(default)]
        param: Option<f64>,
        #[serde(default = "one")]
        dimension: usize,
    },
    MatrixFile {
        path: PathBuf,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    Uniform {
        #[serde(default)]
        lo: f64,
        #[serde(default = "unit")]
        hi: f64,
    },
    List {
        values: Vec<f64>,
    },
    File {
        path: PathBuf,
    },
    /// First coordinate of each kernel grid node.
    NodeCoordinate,
}

fn unit() -> f64 {
    1.0
}

impl Default for Initial {
    fn default() -> Self {
        Initial::Uniform { lo: 0.0, hi: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Integration {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    #[serde(default = "half")]
    pub window_fraction: f64,
    /// Track `Var_P` through the Lyapunov certificate.
    #[serde(default = "yes")]
    pub var_p: bool,
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

impl Default for Integration {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: None,
            window_fraction: half(),
            var_p: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Control {
    #[default]
    None,
    JurdjevicQuinn {
        alpha: f64,
    },
    CubicDamping {
        beta: f64,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Discrete {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to `1 / max_i S_i`, the largest stable step.
    pub dt: Option<f64>,
}

fn default_steps() -> usize {
    500
}

impl Default for Discrete {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            dt: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KernelStudy {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
}

fn default_n_list() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

impl Default for KernelStudy {
    fn default() -> Self {
        Self {
            n_list: default_n_list(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown output format `{other}` (csv, json, svg)")),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
    pub dir: Option<PathBuf>,
    /// Trajectory rows kept in CSV/SVG; samples are thinned evenly, the
    /// first and last always kept. `0` keeps everything.
    #[serde(default = "default_max_rows")]
    pub max_rows: usize,
}

fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

fn default_max_rows() -> usize {
    2001
}

impl Default for Output {
    fn default() -> Self {
        Self {
            formats: all_formats(),
            dir: None,
            max_rows: default_max_rows(),
        }
    }
}

/// Parsed scenario plus the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub origin: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Output directory: configured, else `out/<name>`.
    pub fn out_dir(&self) -> PathBuf {
        match &self.config.output.dir {
            Some(dir) => dir.clone(),
            None => PathBuf::from("out").join(&self.config.scenario.name),
        }
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let origin = path.display().to_string();
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &origin, base_dir)
}

pub fn parse_config(text: &str, origin: &str, base_dir: PathBuf) -> Result<LoadedConfig, CliError> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| CliError::config(origin, e.to_string().trim_end().to_string()))?;
    let loaded = LoadedConfig {
        config,
        origin: origin.to_string(),
        base_dir,
    };
    loaded.validate()?;
    Ok(loaded)
}

impl LoadedConfig {
    fn fail(&self, field: &str, message: impl std::fmt::Display) -> CliError {
        CliError::config(&self.origin, format!("`{field}`: {message}"))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let name = &c.scenario.name;
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(self.fail("scenario.name", "must be a plain, non-empty file name"));
        }
        if !(c.scenario.tolerance_zero >= 0.0) {
            return Err(self.fail("scenario.tolerance_zero", "must be >= 0"));
        }
        match &c.source {
            Source::FullyConnected { n } | Source::Ring { n } if *n < 2 => {
                return Err(self.fail("source.n", "needs at least 2 agents"));
            }
            Source::Blocks { n, blocks } => {
                if *blocks == 0 || blocks > n {
                    return Err(self.fail("source.blocks", format!("must lie in 1..={n}")));
                }
            }
            Source::Kernel { n, dimension, .. } => {
                if *n < 2 {
                    return Err(self.fail("source.n", "needs at least 2 grid nodes"));
                }
                if !(1..=2).contains(dimension) {
                    return Err(self.fail("source.dimension", "must be 1 or 2"));
                }
            }
            _ => {}
        }
        match &c.initial {
            Initial::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                return Err(self.fail("initial", format!("need finite lo < hi, got [{lo}, {hi}]")));
            }
            Initial::List { values } if values.iter().any(|x| !x.is_finite()) => {
                return Err(self.fail("initial.values", "entries must be finite"));
            }
            Initial::NodeCoordinate if !matches!(c.source, Source::Kernel { .. }) => {
                return Err(self.fail("initial.kind", "node_coordinate needs a kernel source"));
            }
            _ => {}
        }
        for (field, value) in [("integration.dt", c.integration.dt), ("integration.t_end", c.integration.t_end)] {
            if let Some(x) = value {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(self.fail(field, format!("must be positive, got {x}")));
                }
            }
        }
        if !(c.integration.window_fraction > 0.0 && c.integration.window_fraction <= 1.0) {
            return Err(self.fail("integration.window_fraction", "must lie in (0, 1]"));
        }
        match c.control {
            Control::JurdjevicQuinn { alpha } if !(alpha >= 0.0 && alpha.is_finite()) => {
                return Err(self.fail("control.alpha", format!("must be >= 0, got {alpha}")));
            }
            Control::CubicDamping { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                return Err(self.fail("control.beta", format!("must be >= 0, got {beta}")));
            }
            _ => {}
        }
        if let Some(dt) = c.discrete.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(self.fail("discrete.dt", format!("must be positive, got {dt}")));
            }
        }
        if c.kernel.n_list.len() < 3 || c.kernel.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(self.fail("kernel.n_list", "needs at least 3 increasing grid sizes"));
        }
        if c.output.formats.is_empty() {
            return Err(self.fail("output.formats", "list at least one of csv, json, svg"));
        }
        if c.output.max_rows == 1 {
            return Err(self.fail("output.max_rows", "must be 0 (keep all) or at least 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedConfig, CliError> {
        parse_config(text, "test.toml", PathBuf::new())
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse("[scenario]\nname = \"x\"\n[source]\nkind = \"ring\"\nn = 5\n").unwrap();
        assert_eq!(c.config.scenario.seed, 0);
        assert!(matches!(c.config.initial, Initial::Uniform { lo, hi } if lo == 0.0 && hi == 1.0));
        assert_eq!(c.config.output.formats.len(), 3);
        assert_eq!(c.out_dir(), PathBuf::from("out/x"));
    }

    #[test]
    fn unknown_field_is_reported_with_position() {
        let err = parse("[scenario]\nname = \"x\"\n[source]\nkind = \"ring\"\nn = 5\nbogus = 1\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("bogus"), "{text}");
        assert!(text.contains("line"), "{text}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = parse("[scenario]\nname = \"x\"\n[source]\nkind = \"blocks\"\nn = 5\nblocks = 9\n").unwrap_err();
        assert!(err.to_string().contains("source.blocks"));
        let err = parse(
            "[scenario]\nname = \"x\"\n[source]\nkind = \"ring\"\nn = 5\n[integration]\ndt = -1.0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("integration.dt"));
    }

    #[test]
    fn kernel_source_parses() {
        let c = parse(
            "[scenario]\nname = \"k\"\n[source]\nkind = \"kernel\"\nn = 16\nname = \"periodic_gaussian\"\nparam = 0.3\n[initial]\nkind = \"node_coordinate\"\n",
        )
        .unwrap();
        assert!(matches!(c.config.source, Source::Kernel { dimension: 1, .. }));
    }
}
