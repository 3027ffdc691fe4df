//! TOML run configuration. One file describes a whole run; the data root and
//! output directory may be overridden from the environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, PreprocessConfig};
use crate::error::{Error, Result};
use crate::eval::{Classifier, LeakageMode, SomMode};
use crate::fingerprint::fingerprint;
use crate::roi::{PartitionConfig, RoiMode};
use crate::som::SomConfig;

pub const ENV_DATA_ROOT: &str = "SOMTEX_DATA_ROOT";
pub const ENV_OUTPUT_DIR: &str = "SOMTEX_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the index file.
    pub root: PathBuf,
    /// Index file name, relative to `root`.
    pub index: PathBuf,
    /// Image directory, relative to `root`. Images are `<id>.pgm`.
    pub images: PathBuf,
    pub sample: Option<SampleConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            index: PathBuf::from("Info.txt"),
            images: PathBuf::from("."),
            sample: None,
        }
    }
}

/// Draw a fixed number of images per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default)]
    pub seed: u64,
    pub counts: BTreeMap<ClassLabel, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SomSection {
    /// Map sizes evaluated in replace mode, as `[rows, cols]`.
    pub sizes: Vec<[usize; 2]>,
    pub modes: Vec<SomMode>,
    /// Map size used when SOM features are appended to the originals.
    pub augment_size: [usize; 2],
    pub iterations: Option<usize>,
    pub alpha0: f64,
    pub sigma0: Option<f64>,
    pub sigma_final: f64,
    pub seed: u64,
}

impl Default for SomSection {
    fn default() -> Self {
        let base = SomConfig::default();
        Self {
            sizes: vec![[5, 5], [10, 10], [15, 15]],
            modes: vec![SomMode::Replace, SomMode::Augment],
            augment_size: [10, 10],
            iterations: base.iterations,
            alpha0: base.alpha0,
            sigma0: base.sigma0,
            sigma_final: base.sigma_final,
            seed: base.seed,
        }
    }
}

impl SomSection {
    pub fn map_config(&self, [rows, cols]: [usize; 2]) -> SomConfig {
        SomConfig {
            rows,
            cols,
            iterations: self.iterations,
            alpha0: self.alpha0,
            sigma0: self.sigma0,
            sigma_final: self.sigma_final,
            seed: self.seed,
        }
    }

    pub fn enabled(&self, mode: SomMode) -> bool {
        self.modes.contains(&mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub classifiers: Vec<Classifier>,
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
    pub leakage: LeakageMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            classifiers: vec![Classifier::NearestNeighbor, Classifier::GaussianNb],
            folds: 10,
            seed: 0,
            stratified: true,
            leakage: LeakageMode::PerFold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub modes: Vec<RoiMode>,
    pub fisher: bool,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    /// `mode` and `levels` here are ignored: modes come from the list above
    /// and levels from `preprocess`.
    pub partition: PartitionConfig,
    pub som: SomSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            modes: RoiMode::ALL.to_vec(),
            fisher: true,
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            partition: PartitionConfig::default(),
            som: SomSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// The parts of a config that influence results; paths are left out so the
/// same run in two directories fingerprints the same.
#[derive(Serialize)]
struct Parameters<'a> {
    index: &'a Path,
    sample: &'a Option<SampleConfig>,
    modes: &'a [RoiMode],
    fisher: bool,
    preprocess: &'a PreprocessConfig,
    partition: &'a PartitionConfig,
    som: &'a SomSection,
    eval: &'a EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.partition.levels = cfg.preprocess.levels;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path`, resolve relative paths against its directory, then apply
    /// environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))?;
        if let Some(base) = path.parent().filter(|b| !b.as_os_str().is_empty()) {
            cfg.data.root = base.join(&cfg.data.root);
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.apply_env(|k| std::env::var_os(k).map(PathBuf::from));
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<PathBuf>) {
        if let Some(root) = get(ENV_DATA_ROOT) {
            self.data.root = root;
        }
        if let Some(out) = get(ENV_OUTPUT_DIR) {
            self.output_dir = out;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("`modes` is empty".into()));
        }
        for &m in &self.modes {
            self.partition.with_mode(m).validate()?;
        }
        if !(2..=65536).contains(&self.preprocess.levels) {
            return Err(Error::Config(format!(
                "preprocess.levels {} outside 2..=65536",
                self.preprocess.levels
            )));
        }
        if self.eval.classifiers.is_empty() {
            return Err(Error::Config("`eval.classifiers` is empty".into()));
        }
        if self.eval.folds < 2 {
            return Err(Error::Config("`eval.folds` must be at least 2".into()));
        }
        if self.som.enabled(SomMode::Off) {
            return Err(Error::Config(
                "`som.modes` lists replace/augment; the plain features are always evaluated".into(),
            ));
        }
        let mut sizes = self.som.sizes.clone();
        if self.som.enabled(SomMode::Augment) {
            sizes.push(self.som.augment_size);
        }
        for size in sizes {
            self.som.map_config(size).validate()?;
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&Parameters {
            index: &self.data.index,
            sample: &self.data.sample,
            modes: &self.modes,
            fisher: self.fisher,
            preprocess: &self.preprocess,
            partition: &self.partition,
            som: &self.som,
            eval: &self.eval,
        })
    }

    pub fn index_path(&self) -> PathBuf {
        self.data.root.join(&self.data.index)
    }

    pub fn image_dir(&self) -> PathBuf {
        if self.data.images == Path::new(".") {
            return self.data.root.clone();
        }
        self.data.root.join(&self.data.images)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}
