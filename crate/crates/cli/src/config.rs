//! Run configuration (TOML or JSON).
//!
//! Relative paths are resolved against the directory holding the config
//! file, so a fixture directory with its `run.toml` can be moved as a unit.

use std::path::{Path, PathBuf};

use scuba_core::encoder::FitConfig;
use scuba_core::projection::ProjectionConfig;
use scuba_core::synth::SynthConfig;
use scuba_core::tensor_io::DEFAULT_STREAM_THRESHOLD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub caption: CaptionConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train_embeddings: Option<PathBuf>,
    pub train_activations: Option<PathBuf>,
    pub test_embeddings: Option<PathBuf>,
    pub test_activations: Option<PathBuf>,
    /// Image-embedding banks, one per best-of-R repeat.
    #[serde(default)]
    pub banks: Vec<PathBuf>,
    pub captions: Option<PathBuf>,
    pub caption_embeddings: Option<PathBuf>,
    /// Defaults to the bundled English lexicon.
    pub lexicon: Option<PathBuf>,
    pub person_list: Option<PathBuf>,
    /// Category names, one per line, aligned with `category_embeddings`.
    pub category_names: Option<PathBuf>,
    pub category_embeddings: Option<PathBuf>,
    /// Banks larger than this are streamed from disk instead of loaded.
    pub stream_threshold_bytes: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Run k-fold weight stability after fitting.
    pub stability_folds: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionConfig {
    /// Candidates kept per voxel.
    pub k: usize,
    /// Number of banks used for best-of-R; all configured banks when unset.
    pub repeats: Option<usize>,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        Self { k: 5, repeats: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub name: String,
    /// VoxelStats file of localizer t-statistics.
    pub tstat: Option<PathBuf>,
    /// Explicit voxel list (alternative to `tstat`).
    pub voxels: Option<Vec<usize>>,
    /// Overrides `analysis.roi_threshold` for this ROI.
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub roi_threshold: f64,
    pub rois: Vec<RoiSpec>,
    /// Rows kept per top-terms table.
    pub top: usize,
    pub k: usize,
    pub restarts: usize,
    pub stability_repeats: usize,
    /// ROI whose weights are clustered; the first ROI when unset.
    pub cluster_roi: Option<String>,
    pub convergence_sizes: Vec<usize>,
    pub convergence_repeats: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            roi_threshold: 2.0,
            rois: Vec::new(),
            top: 50,
            k: 2,
            restarts: 10,
            stability_repeats: 10,
            cluster_roi: None,
            convergence_sizes: vec![100, 1_000, 10_000],
            convergence_repeats: 5,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            data: DataPaths::default(),
            fit: FitConfig::default(),
            evaluation: EvaluationConfig::default(),
            projection: ProjectionConfig::default(),
            caption: CaptionConfig::default(),
            analysis: AnalysisConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// A parsed config plus the directory its relative paths refer to.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Loaded {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        };
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    /// Resolves a required path and checks that it exists.
    pub fn require(&self, key: &str, p: &Option<PathBuf>) -> CliResult<PathBuf> {
        let p = p
            .as_ref()
            .ok_or_else(|| CliError::config(format!("missing required config key `{key}`")))?;
        self.existing(key, p)
    }

    pub fn existing(&self, key: &str, p: &Path) -> CliResult<PathBuf> {
        let r = self.resolve(p);
        if !r.is_file() {
            return Err(CliError::config(format!("{key}: file not found: {}", r.display())));
        }
        Ok(r)
    }

    pub fn stream_threshold(&self) -> u64 {
        self.config.data.stream_threshold_bytes.unwrap_or(DEFAULT_STREAM_THRESHOLD)
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.config).expect("config serializes").as_bytes())
    }
}
