//! Pipeline configuration: a JSON document whose keys every flag can
//! override. The output directory may also come from `PSL_OUTPUT_DIR`.

use std::path::{Path, PathBuf};

use psl_core::schema::LabelSchema;
use psl_core::screening::{LabelRules, ModelPreset, ScreeningConfig, DEFAULT_BOOTSTRAP, DEFAULT_RIDGE};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const OUTPUT_DIR_ENV: &str = "PSL_OUTPUT_DIR";
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Label schema JSON; the standard schema when absent.
    pub schema: Option<PathBuf>,
    pub cohort: Option<PathBuf>,
    pub biomarkers: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub flip_anterior: bool,
    pub seed: u64,
    pub train_fraction: f64,
    pub bootstrap: usize,
    pub presets: Vec<ModelPreset>,
    /// Worker threads for per-patient work; 0 picks the core count.
    pub threads: usize,
    pub nondiabetic_hba1c_below: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema: None,
            cohort: None,
            biomarkers: None,
            output_dir: PathBuf::from("psl-out"),
            flip_anterior: false,
            seed: 42,
            train_fraction: 0.7,
            bootstrap: DEFAULT_BOOTSTRAP,
            presets: ModelPreset::ALL.to_vec(),
            threads: 0,
            nondiabetic_hba1c_below: LabelRules::default().nondiabetic_hba1c_below,
        }
    }
}

/// Values given on the command line; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub schema: Option<PathBuf>,
    pub cohort: Option<PathBuf>,
    pub biomarkers: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub flip_anterior: bool,
    pub seed: Option<u64>,
    pub train_fraction: Option<f64>,
    pub bootstrap: Option<usize>,
    pub presets: Option<Vec<ModelPreset>>,
    pub threads: Option<usize>,
    pub nondiabetic_hba1c_below: Option<f64>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    /// Config file, then the environment, then flags.
    pub fn resolve(file: Option<&Path>, env_output: Option<PathBuf>, o: Overrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(dir) = env_output {
            c.output_dir = dir;
        }
        macro_rules! take {
            ($($f:ident),*) => {
                $(if let Some(v) = o.$f {
                    c.$f = v;
                })*
            };
        }
        take!(output_dir, seed, train_fraction, bootstrap, presets, threads, nondiabetic_hba1c_below);
        if o.schema.is_some() {
            c.schema = o.schema;
        }
        if o.cohort.is_some() {
            c.cohort = o.cohort;
        }
        if o.biomarkers.is_some() {
            c.biomarkers = o.biomarkers;
        }
        c.flip_anterior |= o.flip_anterior;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train fraction {} must lie in (0, 1)", self.train_fraction));
        }
        if self.bootstrap < MIN_BOOTSTRAP {
            return bad(format!("bootstrap resamples {} below {MIN_BOOTSTRAP}", self.bootstrap));
        }
        if self.presets.is_empty() {
            return bad("no model presets selected".into());
        }
        for (what, p) in [("schema", &self.schema), ("cohort", &self.cohort), ("biomarkers", &self.biomarkers)] {
            if let Some(p) = p {
                if !p.exists() {
                    return bad(format!("{what} file {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn label_schema(&self) -> Result<LabelSchema> {
        match &self.schema {
            Some(p) => Ok(LabelSchema::load(p)?),
            None => Ok(LabelSchema::standard()),
        }
    }

    pub fn label_rules(&self) -> LabelRules {
        LabelRules {
            nondiabetic_hba1c_below: self.nondiabetic_hba1c_below,
            ..LabelRules::default()
        }
    }

    pub fn screening(&self) -> ScreeningConfig {
        ScreeningConfig {
            train_fraction: self.train_fraction,
            seed: self.seed,
            bootstrap_resamples: self.bootstrap,
            presets: self.presets.clone(),
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn require_cohort(&self) -> Result<&Path> {
        self.cohort
            .as_deref()
            .ok_or_else(|| CliError::Validation("no cohort CSV given (--cohort or config `cohort`)".into()))
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_file_env_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"output_dir": "from-file", "seed": 7, "bootstrap": 500}"#).unwrap();
        let c = PipelineConfig::resolve(Some(&path), None, Overrides::default()).unwrap();
        assert_eq!((c.output_dir.to_str().unwrap(), c.seed, c.bootstrap), ("from-file", 7, 500));

        let c = PipelineConfig::resolve(Some(&path), Some("from-env".into()), Overrides::default()).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("from-env"));
        assert_eq!(c.seed, 7);

        let flags = Overrides {
            output_dir: Some("from-flag".into()),
            seed: Some(9),
            ..Overrides::default()
        };
        let c = PipelineConfig::resolve(Some(&path), Some("from-env".into()), flags).unwrap();
        assert_eq!((c.output_dir, c.seed), (PathBuf::from("from-flag"), 9));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let flags = |o: Overrides| PipelineConfig::resolve(None, None, o);
        assert!(flags(Overrides { train_fraction: Some(1.0), ..Default::default() }).is_err());
        assert!(flags(Overrides { bootstrap: Some(99), ..Default::default() }).is_err());
        assert!(flags(Overrides { cohort: Some("/no/such/file.csv".into()), ..Default::default() }).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sed": 7}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(CliError::Validation(_))));
    }
}
