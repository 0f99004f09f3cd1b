//! Pipeline configuration file (TOML) and the seeds derived from it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wdcgan_core::classifier::ClassifierConfig;
use wdcgan_core::metrics::{DEFAULT_BINS, DUPLICATE_THRESHOLD};
use wdcgan_core::signal::{SplitCounts, SurrogateSpec};
use wdcgan_core::wdcgan::GanConfig;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the configured output directory. The `--out` flag wins over it.
pub const OUT_DIR_ENV: &str = "WDCGAN_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Global seed; every stage seed is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Segment length, copied into the GAN and classifier sections.
    #[serde(default = "default_seg_len")]
    pub seg_len: usize,
    /// Forces deterministic reductions and zeroes wall-clock columns.
    #[serde(default = "default_true")]
    pub strict_determinism: bool,
    #[serde(default)]
    pub data: DataConfig,
    /// When present, the `synth` stage writes one record per condition.
    #[serde(default)]
    pub surrogate: Option<SurrogateSpec>,
    #[serde(default)]
    pub gan: GanConfig,
    /// GAN training cases; each overrides `gan.epochs`.
    pub cases: Vec<CaseConfig>,
    /// Only lr, minibatch, epochs, threshold and strict_range are read from
    /// here; the architecture follows the GAN critic.
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<u8>,
    #[serde(default)]
    pub split: SplitCounts,
    #[serde(default)]
    pub normalization: NormScope,
    /// Directory the config was read from; relative data paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seg_len() -> usize {
    1024
}

fn default_true() -> bool {
    true
}

fn default_scenarios() -> Vec<u8> {
    vec![1, 2]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Raw records, each with a `.meta.toml` sidecar naming its condition.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: String,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Segments drawn by `generate`.
    pub n_generate: usize,
    pub bins: usize,
    /// Points of the kernel density curve drawn over each histogram.
    pub kde_points: usize,
    /// Window length for the multivariate FID.
    pub fid_dim: usize,
    pub duplicate_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_generate: 256,
            bins: DEFAULT_BINS,
            kde_points: 200,
            fid_dim: 16,
            duplicate_threshold: DUPLICATE_THRESHOLD,
        }
    }
}

/// Where the classifier's min-max range comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScope {
    /// Each segment is scaled by its own extremes.
    #[default]
    Segment,
    /// One range spanning every segment of the scenario split.
    Pool,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub seg_len: Option<usize>,
    pub strict_determinism: Option<bool>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies overrides, then the environment, then copies shared settings
    /// into the sub-configs.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.seg_len {
            self.seg_len = v;
        }
        if let Some(v) = o.strict_determinism {
            self.strict_determinism = v;
        }
        match (&o.out_dir, std::env::var_os(OUT_DIR_ENV)) {
            (Some(p), _) => self.out_dir = p.clone(),
            (None, Some(p)) if !p.is_empty() => self.out_dir = PathBuf::from(p),
            _ => self.out_dir = self.resolve(&self.out_dir),
        }
        self.gan.seg_len = self.seg_len;
        self.classifier.seg_len = self.seg_len;
        self.classifier.channel_widths = self.gan.channel_widths.clone();
        self.classifier.leaky_slope = self.gan.leaky_slope;
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.cases.is_empty() {
            return Err(CliError::Config("at least one [[cases]] entry is required".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.cases {
            let ok = !c.name.is_empty()
                && c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_');
            if !ok {
                return Err(CliError::Config(format!(
                    "case name {:?} must be non-empty ASCII letters, digits, '-' or '_'",
                    c.name
                )));
            }
            if !names.insert(&c.name) {
                return Err(CliError::Config(format!("duplicate case name {:?}", c.name)));
            }
            self.gan_config(c)
                .map_err(|e| CliError::Config(format!("case {:?}: {e}", c.name)))?;
        }
        for s in &self.scenarios {
            if !matches!(s, 1 | 2) {
                return Err(CliError::Config(format!("scenario must be 1 or 2, got {s}")));
            }
        }
        self.classifier
            .validate()
            .map_err(|e| CliError::Config(format!("classifier: {e}")))?;
        if let Some(s) = &self.surrogate {
            s.validate().map_err(|e| CliError::Config(format!("surrogate: {e}")))?;
        }
        if self.surrogate.is_none() && self.data.inputs.is_empty() {
            return Err(CliError::Config(
                "either [surrogate] or data.inputs must be given".into(),
            ));
        }
        for p in &self.data.inputs {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(CliError::Config(format!("data input {} does not exist", full.display())));
            }
        }
        let e = &self.eval;
        if e.n_generate == 0 || e.bins == 0 || e.kde_points < 2 || e.fid_dim == 0 {
            return Err(CliError::Config(
                "eval needs n_generate >= 1, bins >= 1, kde_points >= 2 and fid_dim >= 1".into(),
            ));
        }
        if !(e.duplicate_threshold > -1.0 && e.duplicate_threshold <= 1.0) {
            return Err(CliError::Config("duplicate_threshold must be in (-1, 1]".into()));
        }
        if self.split.train_per_class == 0 || self.split.test_per_class == 0 {
            return Err(CliError::Config("split counts must be positive".into()));
        }
        Ok(())
    }

    pub fn case(&self, name: &str) -> CliResult<&CaseConfig> {
        self.cases
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| CliError::Config(format!("no case named {name:?}")))
    }

    pub fn gan_config(&self, case: &CaseConfig) -> CliResult<GanConfig> {
        let cfg = GanConfig {
            epochs: case.epochs,
            seed: self.stage_seed(&format!("train-gan/{}", case.name)),
            ..self.gan.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn classifier_config(&self, case: &str, scenario: u8) -> ClassifierConfig {
        ClassifierConfig {
            seed: self.stage_seed(&format!("train-dcnn/{case}/s{scenario}")),
            ..self.classifier.clone()
        }
    }

    /// First eight bytes (little-endian) of SHA-256 over the global seed and a label.
    pub fn stage_seed(&self, label: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(label.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    /// Hash of everything that affects numeric outputs (the output directory
    /// is excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
