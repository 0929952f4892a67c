use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aure_core::embed::{BackendKind, BackendSpec, FeatureLayout, InputNormalization};
use aure_core::fuse::SelectorMethod;
use aure_core::PipelineConfig;
use clap::{Args, ValueEnum};
use serde_json::Value;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectorArg {
    Fisher,
    ExtraTrees,
}

impl From<SelectorArg> for SelectorMethod {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Fisher => SelectorMethod::Fisher,
            SelectorArg::ExtraTrees => SelectorMethod::ExtraTrees,
        }
    }
}

/// Flags mirroring `PipelineConfig`. Fields present in `--config` win.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// JSON config file; its fields override the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub clip_limit: Option<f64>,
    #[arg(long)]
    pub tiles_x: Option<u32>,
    #[arg(long)]
    pub tiles_y: Option<u32>,
    /// `builtin`, or `NAME=MODEL.onnx[,output=NAME][,norm=zero_one|imagenet][,layout=nchw|nhwc]`.
    /// Repeat to fuse several backends in the given order.
    #[arg(long = "backend", value_parser = parse_backend)]
    pub backends: Vec<BackendSpec>,
    #[arg(long, value_enum)]
    pub selector: Option<SelectorArg>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub min_samples_split: Option<usize>,
    #[arg(long)]
    pub n_components: Option<usize>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub n_iter: Option<usize>,
    #[arg(long)]
    pub early_exaggeration: Option<f64>,
    /// Match in the fused space instead of after t-SNE.
    #[arg(long)]
    pub no_projection: bool,
    #[arg(long)]
    pub target_far: Option<f64>,
    #[arg(long)]
    pub anchor_session: Option<u32>,
    #[arg(long)]
    pub no_within: bool,
    #[arg(long)]
    pub no_cross: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the canonical crops under `<out-dir>/preprocessed`.
    #[arg(long)]
    pub save_preprocessed: bool,
}

pub fn parse_backend(text: &str) -> std::result::Result<BackendSpec, String> {
    if text == "builtin" {
        return Ok(BackendSpec::builtin());
    }
    let mut parts = text.split(',');
    let head = parts.next().unwrap_or_default();
    let (name, path) = head
        .split_once('=')
        .ok_or_else(|| format!("expected `builtin` or NAME=PATH, got {text:?}"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("empty name or path in {text:?}"));
    }
    let mut spec = BackendSpec::model_file(name, path);
    for opt in parts {
        let (k, v) = opt
            .split_once('=')
            .ok_or_else(|| format!("option {opt:?} must be KEY=VALUE"))?;
        match (k, v) {
            ("output", v) => spec.output_name = Some(v.to_string()),
            ("norm", "zero_one") => spec.input_normalization = InputNormalization::ZeroOne,
            ("norm", "imagenet") => spec.input_normalization = InputNormalization::ImagenetMeanStd,
            ("layout", "nchw") => spec.output_layout = FeatureLayout::Nchw,
            ("layout", "nhwc") => spec.output_layout = FeatureLayout::Nhwc,
            _ => return Err(format!("unknown backend option {opt:?}")),
        }
    }
    debug_assert_eq!(spec.kind, BackendKind::ModelFile);
    Ok(spec)
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

impl PipelineArgs {
    pub fn from_flags(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        if let Some(v) = &self.manifest {
            cfg.manifest = v.clone();
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.clip_limit {
            cfg.clahe.clip_limit = v;
        }
        if let Some(v) = self.tiles_x {
            cfg.clahe.tiles_x = v;
        }
        if let Some(v) = self.tiles_y {
            cfg.clahe.tiles_y = v;
        }
        if !self.backends.is_empty() {
            cfg.backends = self.backends.clone();
        }
        if let Some(v) = self.selector {
            cfg.selector.method = v.into();
        }
        if self.top_k.is_some() {
            cfg.selector.top_k = self.top_k;
        }
        if let Some(v) = self.trees {
            cfg.selector.trees = v;
        }
        if let Some(v) = self.min_samples_split {
            cfg.selector.min_samples_split = v;
        }
        if let Some(v) = self.n_components {
            cfg.tsne.n_components = v;
        }
        if let Some(v) = self.perplexity {
            cfg.tsne.perplexity = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.tsne.learning_rate = v;
        }
        if let Some(v) = self.n_iter {
            cfg.tsne.n_iter = v;
        }
        if let Some(v) = self.early_exaggeration {
            cfg.tsne.early_exaggeration = v;
        }
        if self.no_projection {
            cfg.projection_enabled = false;
        }
        if let Some(v) = self.target_far {
            cfg.target_far = v;
        }
        if let Some(v) = self.anchor_session {
            cfg.protocol.anchor_session = v;
        }
        if self.no_within {
            cfg.protocol.within = false;
        }
        if self.no_cross {
            cfg.protocol.cross = false;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.save_preprocessed {
            cfg.save_preprocessed = true;
        }
        cfg
    }

    /// Flags, overlaid with the config file, validated.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut value = serde_json::to_value(self.from_flags())?;
        if let Some(path) = &self.config {
            merge(&mut value, read_json(path)?);
        }
        let cfg: PipelineConfig = serde_json::from_value(value).context("invalid configuration")?;
        cfg.validate().context("invalid configuration")?;
        Ok(cfg)
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if !value.is_object() {
        bail!("{} must contain a JSON object", path.display());
    }
    Ok(value)
}
