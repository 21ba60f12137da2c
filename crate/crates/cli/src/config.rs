use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lpnd_core::measure::{generate_example, ExampleKind, EXAMPLE_NAMES};
use lpnd_core::suites::SuiteConfig;
use lpnd_core::DiscreteMeasure;
use serde::{Deserialize, Serialize};

/// Where the measure comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureSource {
    /// JSON measure file, or CSV with `n` and `resolution` given alongside.
    File {
        path: PathBuf,
        #[serde(default)]
        n: Option<f64>,
        #[serde(default)]
        resolution: Option<f64>,
    },
    Example(ExampleKind),
}

/// Contents of `--config FILE`. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub measure: Option<MeasureSource>,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub suites: SuiteConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let f = File::open(path).with_context(|| format!("opening config {}", path.display()))?;
        serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Accepts the hyphenated CLI spellings and a few short aliases.
pub fn example_name(raw: &str) -> Result<&'static str> {
    let s = raw.replace('-', "_");
    let s = match s.as_str() {
        "cantor" | "cantor_quarter" => "cantor_quarter_planar",
        "lipschitz" | "lipschitz_graph" => "lipschitz_graph_arclength",
        "interval" => "uniform_interval",
        "square" => "uniform_square",
        other => other,
    };
    match EXAMPLE_NAMES.iter().find(|n| **n == s) {
        Some(n) => Ok(n),
        None => bail!("unknown measure kind `{raw}`; expected one of {}", EXAMPLE_NAMES.join(", ")),
    }
}

pub fn load_measure(source: &MeasureSource) -> Result<DiscreteMeasure> {
    match source {
        MeasureSource::Example(kind) => Ok(generate_example(kind)?.measure),
        MeasureSource::File { path, n, resolution } => {
            let f = File::open(path).with_context(|| format!("opening measure {}", path.display()))?;
            let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if is_csv {
                let Some(n) = n else {
                    bail!("CSV measures need --n");
                };
                let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv");
                Ok(DiscreteMeasure::from_csv(BufReader::new(f), *n, *resolution, label)?)
            } else {
                serde_json::from_reader(BufReader::new(f))
                    .with_context(|| format!("parsing measure {}", path.display()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_resolve() {
        assert_eq!(example_name("uniform-interval").unwrap(), "uniform_interval");
        assert_eq!(example_name("cantor").unwrap(), "cantor_quarter_planar");
        assert!(example_name("moon").is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = RunConfig {
            measure: Some(MeasureSource::Example(ExampleKind::UniformInterval { atoms: 10 })),
            ..RunConfig::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"n_max": 6}"#).unwrap();
        assert_eq!(c.suites.n_max, 6);
        assert_eq!(c.suites.family_size, SuiteConfig::default().family_size);
        assert!(c.measure.is_none());
    }
}
