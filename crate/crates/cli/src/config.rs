//! Flat `key = value` configuration with dotted section prefixes.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are
//! errors. Every key has a default, so an empty file is a valid config.
//! [`PipelineConfig::section`] renders the resolved values of one section in
//! a fixed order; stage hashes are taken over that text, so two files that
//! resolve to the same values hash the same.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use lrcp_core::attribution::ForestConfig;
use lrcp_core::autoencoder::{LossKind, TrainConfig};
use lrcp_core::lrcp::{Comparison, LrcpConfig};
use lrcp_core::phantom::{PhantomConfig, PlantedEffect};
use lrcp_core::projection::{Layer, Method, ProjectionParams};
use lrcp_core::validation::BoundConfig;
use lrcp_core::ClassLabel;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} repeated")]
    Duplicate { line: usize, key: String },
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapOptions {
    pub forest: ForestConfig,
    /// Multiply the importance map by the comparison's mean volume.
    pub mean_mask: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub top_n: usize,
    pub overlap_method: Method,
    pub overlap_layer: Layer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Shuffle class labels across subjects after generation: a null control
    /// in which planted effects no longer follow the labels.
    pub permute_labels: bool,
    pub out: PathBuf,
    pub comparisons: Vec<Comparison>,
    pub phantom: PhantomConfig,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub layers: Vec<Layer>,
    pub projection: ProjectionParams,
    pub bootstrap_resamples: usize,
    pub shap: ShapOptions,
    pub bound: BoundConfig,
    pub lrcp: LrcpConfig,
    pub report: ReportOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            permute_labels: false,
            out: PathBuf::from("lrcp-out"),
            comparisons: Comparison::standard(),
            phantom: PhantomConfig {
                class_counts: PhantomConfig::clinical_class_counts(),
                effects: default_effects(),
                subject_sigma: 0.05,
                severity_jitter: 0.5,
                ..PhantomConfig::desk()
            },
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            layers: Layer::ALL.to_vec(),
            projection: ProjectionParams::default(),
            bootstrap_resamples: 0,
            shap: ShapOptions { forest: ForestConfig::default(), mean_mask: true },
            bound: BoundConfig::default(),
            lrcp: LrcpConfig::default(),
            report: ReportOptions { top_n: 10, overlap_method: Method::Tsne, overlap_layer: Layer::L3 },
        }
    }
}

/// Regions 1..=8 lowered for AD, 1..=4 less so for MCIc.
fn default_effects() -> Vec<PlantedEffect> {
    let ad = (1..=8).map(|region| PlantedEffect { region, class: ClassLabel::Ad, shift: -0.15 });
    let mcic = (1..=4).map(|region| PlantedEffect { region, class: ClassLabel::Mcic, shift: -0.1 });
    ad.chain(mcic).collect()
}

/// Sections in hashing order; each key belongs to exactly one.
pub const SECTIONS: [&str; 8] = ["global", "phantom", "train", "embed", "correlate", "shap", "lrcp", "report"];

fn value_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.to_string(), msg: msg.into() }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| value_err(key, format!("cannot parse {v:?}")))
}

fn float(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = num(key, v)?;
    if !x.is_finite() {
        return Err(value_err(key, "must be finite"));
    }
    Ok(x)
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(value_err(key, "expected true or false")),
    }
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected key = value, got {trimmed:?}") })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Duplicate { line, key: k.to_string() });
            }
            if !cfg.set(k, v)? {
                return Err(ConfigError::UnknownKey { line, key: k.to_string() });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one key; `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, ConfigError> {
        let k = key;
        match key {
            "seed" => self.seed = num(k, v)?,
            "out" => self.out = PathBuf::from(v),
            "comparisons" => {
                self.comparisons = list(v)
                    .into_iter()
                    .map(|s| Comparison::parse(s).map_err(|e| value_err(k, e.to_string())))
                    .collect::<Result<_, _>>()?
            }
            "phantom.dims" => {
                let d: Vec<usize> = list(v).into_iter().map(|s| num(k, s)).collect::<Result<_, _>>()?;
                self.phantom.dims = d.try_into().map_err(|_| value_err(k, "expected three sizes"))?;
            }
            "phantom.regions" => self.phantom.region_count = num(k, v)?,
            "phantom.counts" => {
                let mut counts = BTreeMap::new();
                for item in list(v) {
                    let (c, n) = item.split_once(':').ok_or_else(|| value_err(k, format!("expected CLASS:COUNT, got {item:?}")))?;
                    let class = ClassLabel::parse(c).ok_or_else(|| value_err(k, format!("unknown class {c:?}")))?;
                    counts.insert(class, num(k, n.trim())?);
                }
                self.phantom.class_counts = counts;
            }
            "phantom.effects" => {
                let mut effects = Vec::new();
                for item in list(v) {
                    let parts: Vec<&str> = item.split(':').map(str::trim).collect();
                    let [r, c, s] = parts[..] else {
                        return Err(value_err(k, format!("expected REGION:CLASS:SHIFT, got {item:?}")));
                    };
                    let class = ClassLabel::parse(c).ok_or_else(|| value_err(k, format!("unknown class {c:?}")))?;
                    effects.push(PlantedEffect { region: num(k, r)?, class, shift: float(k, s)? });
                }
                self.phantom.effects = effects;
            }
            "phantom.noise_sigma" => self.phantom.noise_sigma = float(k, v)?,
            "phantom.smoothness" => self.phantom.smoothness = float(k, v)?,
            "phantom.subject_sigma" => self.phantom.subject_sigma = float(k, v)?,
            "phantom.severity_jitter" => self.phantom.severity_jitter = float(k, v)?,
            "phantom.ellipsoid" => self.phantom.ellipsoid_mask = boolean(k, v)?,
            "phantom.permute_labels" => self.permute_labels = boolean(k, v)?,
            "train.learning_rate" => self.train.learning_rate = float(k, v)?,
            "train.max_epochs" => self.train.max_epochs = num(k, v)?,
            "train.patience" => self.train.patience = num(k, v)?,
            "train.batch_size" => self.train.batch_size = num(k, v)?,
            "train.loss" => self.train.loss_kind = LossKind::parse(v).ok_or_else(|| value_err(k, "expected mse, ssim or combined"))?,
            "train.alpha" => self.train.alpha = float(k, v)?,
            "embed.methods" => {
                self.methods = list(v)
                    .into_iter()
                    .map(|s| Method::parse(s).ok_or_else(|| value_err(k, format!("unknown method {s:?}"))))
                    .collect::<Result<_, _>>()?
            }
            "embed.layers" => {
                self.layers = list(v)
                    .into_iter()
                    .map(|s| Layer::parse(s).ok_or_else(|| value_err(k, format!("unknown layer {s:?}"))))
                    .collect::<Result<_, _>>()?
            }
            "embed.bootstrap" => self.bootstrap_resamples = num(k, v)?,
            "embed.tsne.perplexity" => self.projection.tsne.perplexity = float(k, v)?,
            "embed.tsne.learning_rate" => self.projection.tsne.learning_rate = float(k, v)?,
            "embed.tsne.iterations" => self.projection.tsne.iterations = num(k, v)?,
            "embed.tsne.exaggeration" => self.projection.tsne.exaggeration = float(k, v)?,
            "embed.tsne.exaggeration_iters" => self.projection.tsne.exaggeration_iters = num(k, v)?,
            "embed.umap.neighbors" => self.projection.umap.n_neighbors = num(k, v)?,
            "embed.umap.min_dist" => self.projection.umap.min_dist = float(k, v)?,
            "embed.umap.spread" => self.projection.umap.spread = float(k, v)?,
            "embed.umap.epochs" => self.projection.umap.epochs = num(k, v)?,
            "embed.umap.negative_sample_rate" => self.projection.umap.negative_sample_rate = num(k, v)?,
            "embed.umap.learning_rate" => self.projection.umap.learning_rate = float(k, v)?,
            "shap.trees" => self.shap.forest.n_trees = num(k, v)?,
            "shap.max_depth" => self.shap.forest.max_depth = num(k, v)?,
            "shap.min_leaf" => self.shap.forest.min_leaf = num(k, v)?,
            "shap.max_features" => {
                self.shap.forest.max_features = if v == "auto" { None } else { Some(num(k, v)?) }
            }
            "shap.mask" => {
                self.shap.mean_mask = match v {
                    "mean" => true,
                    "none" => false,
                    _ => return Err(value_err(k, "expected mean or none")),
                }
            }
            "bound.delta" => self.bound.delta = float(k, v)?,
            "bound.complexity" => self.bound.complexity = float(k, v)?,
            "bound.eta" => self.bound.dropout = float(k, v)?,
            "lrcp.alpha" => self.lrcp.alpha = float(k, v)?,
            "lrcp.quadratic" => self.lrcp.quadratic = boolean(k, v)?,
            "report.top_n" => self.report.top_n = num(k, v)?,
            "report.overlap_method" => {
                self.report.overlap_method = Method::parse(v).ok_or_else(|| value_err(k, format!("unknown method {v:?}")))?
            }
            "report.overlap_layer" => {
                self.report.overlap_layer = Layer::parse(v).ok_or_else(|| value_err(k, format!("unknown layer {v:?}")))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.comparisons.is_empty() {
            return bad("comparisons must not be empty".into());
        }
        for c in &self.comparisons {
            for g in &c.groups {
                if self.phantom.class_counts.get(g).copied().unwrap_or(0) == 0 {
                    return bad(format!("comparison {c} uses class {g}, which the phantom does not generate"));
                }
            }
        }
        if let Some(e) = self.phantom.effects.iter().find(|e| e.region == 0 || e.region as usize > self.phantom.region_count) {
            return bad(format!("phantom.effects names region {} but phantom.regions is {}", e.region, self.phantom.region_count));
        }
        if self.methods.is_empty() || self.layers.is_empty() {
            return bad("embed.methods and embed.layers must not be empty".into());
        }
        if !self.methods.contains(&self.report.overlap_method) || !self.layers.contains(&self.report.overlap_layer) {
            return bad("report.overlap_method and report.overlap_layer must be among the embedded ones".into());
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.bound.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.lrcp.alpha > 0.0 && self.lrcp.alpha < 1.0) {
            return bad("lrcp.alpha must lie in (0, 1)".into());
        }
        if self.report.top_n == 0 {
            return bad("report.top_n must be positive".into());
        }
        if self.shap.forest.n_trees == 0 || self.shap.forest.min_leaf == 0 {
            return bad("shap.trees and shap.min_leaf must be positive".into());
        }
        Ok(())
    }

    /// Copy of `self.lrcp` carrying the shared bound settings.
    pub fn lrcp_config(&self) -> LrcpConfig {
        LrcpConfig { bound: self.bound, ..self.lrcp }
    }

    /// Resolved `key = value` lines of one section, in a fixed order.
    pub fn section(&self, name: &str) -> String {
        let p = &self.phantom;
        let t = &self.projection.tsne;
        let u = &self.projection.umap;
        let f = &self.shap.forest;
        let pairs: Vec<(&str, String)> = match name {
            "global" => vec![("seed", self.seed.to_string()), ("comparisons", join(&self.comparisons))],
            "phantom" => vec![
                ("phantom.dims", join(p.dims)),
                ("phantom.regions", p.region_count.to_string()),
                ("phantom.counts", join(p.class_counts.iter().map(|(c, n)| format!("{c}:{n}")))),
                ("phantom.effects", join(p.effects.iter().map(|e| format!("{}:{}:{}", e.region, e.class, e.shift)))),
                ("phantom.noise_sigma", p.noise_sigma.to_string()),
                ("phantom.smoothness", p.smoothness.to_string()),
                ("phantom.subject_sigma", p.subject_sigma.to_string()),
                ("phantom.severity_jitter", p.severity_jitter.to_string()),
                ("phantom.ellipsoid", p.ellipsoid_mask.to_string()),
                ("phantom.permute_labels", self.permute_labels.to_string()),
            ],
            "train" => vec![
                ("train.learning_rate", self.train.learning_rate.to_string()),
                ("train.max_epochs", self.train.max_epochs.to_string()),
                ("train.patience", self.train.patience.to_string()),
                ("train.batch_size", self.train.batch_size.to_string()),
                ("train.loss", self.train.loss_kind.name().to_string()),
                ("train.alpha", self.train.alpha.to_string()),
            ],
            "embed" => vec![
                ("embed.methods", join(&self.methods)),
                ("embed.layers", join(&self.layers)),
                ("embed.bootstrap", self.bootstrap_resamples.to_string()),
                ("embed.tsne.perplexity", t.perplexity.to_string()),
                ("embed.tsne.learning_rate", t.learning_rate.to_string()),
                ("embed.tsne.iterations", t.iterations.to_string()),
                ("embed.tsne.exaggeration", t.exaggeration.to_string()),
                ("embed.tsne.exaggeration_iters", t.exaggeration_iters.to_string()),
                ("embed.umap.neighbors", u.n_neighbors.to_string()),
                ("embed.umap.min_dist", u.min_dist.to_string()),
                ("embed.umap.spread", u.spread.to_string()),
                ("embed.umap.epochs", u.epochs.to_string()),
                ("embed.umap.negative_sample_rate", u.negative_sample_rate.to_string()),
                ("embed.umap.learning_rate", u.learning_rate.to_string()),
            ],
            "correlate" => vec![("bound.delta", self.bound.delta.to_string())],
            "shap" => vec![
                ("shap.trees", f.n_trees.to_string()),
                ("shap.max_depth", f.max_depth.to_string()),
                ("shap.min_leaf", f.min_leaf.to_string()),
                ("shap.max_features", f.max_features.map_or("auto".to_string(), |m| m.to_string())),
                ("shap.mask", if self.shap.mean_mask { "mean" } else { "none" }.to_string()),
            ],
            "lrcp" => vec![
                ("bound.delta", self.bound.delta.to_string()),
                ("bound.complexity", self.bound.complexity.to_string()),
                ("bound.eta", self.bound.dropout.to_string()),
                ("lrcp.alpha", self.lrcp.alpha.to_string()),
                ("lrcp.quadratic", self.lrcp.quadratic.to_string()),
            ],
            "report" => vec![
                ("report.top_n", self.report.top_n.to_string()),
                ("report.overlap_method", self.report.overlap_method.to_string()),
                ("report.overlap_layer", self.report.overlap_layer.to_string()),
            ],
            _ => Vec::new(),
        };
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Every section, with `out`; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = format!("out = {}\n", self.out.display());
        for name in SECTIONS {
            s.push_str(&self.section(name));
        }
        // bound.delta is listed by two sections
        let mut seen = BTreeSet::new();
        s.lines().filter(|l| seen.insert(l.split('=').next().unwrap_or("").trim().to_string())).map(|l| format!("{l}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(PipelineConfig::parse("# nothing\n\n").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip() {
        let text = "seed = 9\nphantom.dims = 16, 16, 20\nphantom.effects = 3:AD:-0.3, 4:MCI:0.1\ncomparisons = NOR_AD\nembed.methods = pca,tsne\nreport.overlap_method = pca\nshap.max_features = 4\nphantom.permute_labels = true\n";
        let cfg = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.phantom.dims, [16, 16, 20]);
        assert_eq!(cfg.phantom.effects.len(), 2);
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_lines() {
        assert_eq!(
            PipelineConfig::parse("seed = 1\nbogus = 2\n"),
            Err(ConfigError::UnknownKey { line: 2, key: "bogus".into() })
        );
        assert!(matches!(PipelineConfig::parse("seed 1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(PipelineConfig::parse("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(PipelineConfig::parse("seed = x"), Err(ConfigError::Value { .. })));
        assert!(matches!(PipelineConfig::parse("bound.delta = 0"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn comparison_classes_must_exist() {
        let err = PipelineConfig::parse("phantom.counts = NOR:10, AD:10").unwrap_err();
        assert!(err.to_string().contains("MCI"), "{err}");
        assert!(PipelineConfig::parse("phantom.counts = NOR:10, AD:10\ncomparisons = NOR_AD").is_ok());
    }

    #[test]
    fn sections_isolate_keys() {
        let a = PipelineConfig::default();
        let b = PipelineConfig::parse("shap.trees = 7").unwrap();
        for s in SECTIONS {
            assert_eq!(a.section(s) == b.section(s), s != "shap", "{s}");
        }
    }
}
