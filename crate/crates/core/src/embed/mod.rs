//! Embedding backends: exported CNN backbones (ONNX) and a built-in
//! gradient-orientation descriptor that needs no model file.

mod builtin;
#[cfg(feature = "onnx")]
mod onnx;
mod standardize;
mod store;

use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use builtin::{builtin_descriptor, descriptor_from_luma, BUILTIN_DIM, CELL_SIZE, ORIENTATION_BINS};
pub use standardize::{apply_standardizer, destandardize, fit_standardizer, Standardizer};
pub use store::{read_store, write_store, EmbeddingStore, STORE_MAGIC, STORE_VERSION};

use crate::error::{Error, Result};
use crate::preprocess::{EarImage, EAR_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ModelFile,
    Builtin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNormalization {
    ZeroOne,
    #[default]
    ImagenetMeanStd,
}

/// Axis order of a rank-4 model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    #[default]
    Nchw,
    Nhwc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub output_name: Option<String>,
    #[serde(default)]
    pub input_normalization: InputNormalization,
    #[serde(default)]
    pub output_layout: FeatureLayout,
    pub name: String,
}

impl BackendSpec {
    pub fn builtin() -> Self {
        BackendSpec {
            kind: BackendKind::Builtin,
            model_path: None,
            output_name: None,
            input_normalization: InputNormalization::default(),
            output_layout: FeatureLayout::default(),
            name: "builtin".into(),
        }
    }

    pub fn model_file(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        BackendSpec {
            kind: BackendKind::ModelFile,
            model_path: Some(path.into()),
            name: name.into(),
            ..BackendSpec::builtin()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::param("backend name must not be empty"));
        }
        if self.kind == BackendKind::ModelFile && self.model_path.is_none() {
            return Err(Error::param(format!(
                "backend {}: model_file kind requires model_path",
                self.name
            )));
        }
        Ok(())
    }
}

/// Feature vector from one backend for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub backend: String,
    /// Record key of the source image.
    pub record: String,
}

enum Engine {
    Builtin,
    #[cfg(feature = "onnx")]
    Onnx(onnx::OnnxModel),
}

/// Loaded, read-only backend.
pub struct Backend {
    spec: BackendSpec,
    dim: usize,
    engine: Engine,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend")
            .field("name", &self.spec.name)
            .field("kind", &self.spec.kind)
            .field("dim", &self.dim)
            .finish()
    }
}

/// Loads a backend and probes it on a black image to learn its output size.
pub fn load_backend(spec: &BackendSpec) -> Result<Backend> {
    spec.validate()?;
    let engine = match spec.kind {
        BackendKind::Builtin => Engine::Builtin,
        BackendKind::ModelFile => load_model(spec)?,
    };
    let mut backend = Backend {
        spec: spec.clone(),
        dim: 0,
        engine,
    };
    let zero = EarImage::new(image::RgbImage::new(EAR_SIZE, EAR_SIZE), "probe", 0.0, false)?;
    backend.dim = backend.raw_embed(&zero)?.len();
    if backend.dim == 0 {
        return Err(backend.error("probe inference produced an empty output"));
    }
    Ok(backend)
}

#[cfg(feature = "onnx")]
fn load_model(spec: &BackendSpec) -> Result<Engine> {
    let path = spec.model_path.as_deref().expect("validated");
    if !path.is_file() {
        return Err(Error::Backend {
            backend: spec.name.clone(),
            message: format!("model file {} not found", path.display()),
        });
    }
    Ok(Engine::Onnx(onnx::OnnxModel::load(
        path,
        spec.output_name.as_deref(),
        &spec.name,
    )?))
}

#[cfg(not(feature = "onnx"))]
fn load_model(spec: &BackendSpec) -> Result<Engine> {
    Err(Error::Backend {
        backend: spec.name.clone(),
        message: "built without the `onnx` feature".into(),
    })
}

impl Backend {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Backend {
            backend: self.spec.name.clone(),
            message: message.into(),
        }
    }

    fn raw_embed(&self, img: &EarImage) -> Result<Vec<f32>> {
        match &self.engine {
            Engine::Builtin => Ok(builtin_descriptor(img)),
            #[cfg(feature = "onnx")]
            Engine::Onnx(model) => {
                let (values, shape) = model
                    .infer(img, self.spec.input_normalization)
                    .map_err(|m| self.error(m))?;
                global_average_pool(&values, &shape, self.spec.output_layout)
                    .map_err(|m| self.error(m))
            }
        }
    }
}

/// Embeds one canonical ear image.
pub fn embed_image(backend: &Backend, img: &EarImage) -> Result<EmbeddingVector> {
    let values = backend.raw_embed(img)?;
    if values.len() != backend.dim {
        return Err(backend.error(format!(
            "output length {} differs from probed dimension {}",
            values.len(),
            backend.dim
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "backend {} produced {} at index {i} for {}",
            backend.name(),
            values[i],
            img.source
        )));
    }
    Ok(EmbeddingVector {
        values,
        backend: backend.name().to_string(),
        record: img.source.clone(),
    })
}

/// Embeds images in parallel; output order follows input order.
pub fn embed_all(backend: &Backend, images: &[EarImage]) -> Result<Vec<EmbeddingVector>> {
    images.par_iter().map(|img| embed_image(backend, img)).collect()
}

/// Averages a single-image output over its spatial axes. Rank-4 outputs are
/// pooled according to `layout`; rank-2 `[1, C]` and rank-1 outputs pass
/// through.
pub fn global_average_pool(
    values: &[f32],
    shape: &[usize],
    layout: FeatureLayout,
) -> std::result::Result<Vec<f32>, String> {
    if shape.iter().product::<usize>() != values.len() {
        return Err(format!("shape {shape:?} does not match {} values", values.len()));
    }
    match shape {
        [c] | [1, c] => Ok(values[..*c].to_vec()),
        [1, a, b, c] => {
            let (channels, spatial) = match layout {
                FeatureLayout::Nchw => (*a, b * c),
                FeatureLayout::Nhwc => (*c, a * b),
            };
            let mut sums = vec![0f64; channels];
            for (i, &v) in values.iter().enumerate() {
                let ch = match layout {
                    FeatureLayout::Nchw => i / spatial,
                    FeatureLayout::Nhwc => i % channels,
                };
                sums[ch] += v as f64;
            }
            Ok(sums.into_iter().map(|s| (s / spatial as f64) as f32).collect())
        }
        other => Err(format!("unsupported output shape {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_backend_dimension() {
        let backend = load_backend(&BackendSpec::builtin()).unwrap();
        assert_eq!(backend.dim(), 1568);
        let zero = EarImage::new(image::RgbImage::new(224, 224), "k", 0.0, false).unwrap();
        let v = embed_image(&backend, &zero).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
        assert_eq!(v.record, "k");
    }

    #[test]
    fn embedding_is_deterministic() {
        let backend = load_backend(&BackendSpec::builtin()).unwrap();
        let img = EarImage::new(
            image::RgbImage::from_fn(224, 224, |x, y| image::Rgb([(x ^ y) as u8, x as u8, y as u8])),
            "k",
            0.0,
            false,
        )
        .unwrap();
        assert_eq!(embed_image(&backend, &img).unwrap(), embed_image(&backend, &img).unwrap());
    }

    #[test]
    fn pooling_nhwc_7x7x512() {
        let values: Vec<f32> = (0..7 * 7 * 512).map(|i| (i % 512) as f32 + (i / 512) as f32).collect();
        let pooled = global_average_pool(&values, &[1, 7, 7, 512], FeatureLayout::Nhwc).unwrap();
        assert_eq!(pooled.len(), 512);
        for (c, &p) in pooled.iter().enumerate() {
            let expected = (0..49).map(|s| values[s * 512 + c] as f64).sum::<f64>() / 49.0;
            assert!((p as f64 - expected).abs() < 1e-4);
        }
    }

    #[test]
    fn pooling_nchw() {
        let values: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32).collect();
        let pooled = global_average_pool(&values, &[1, 2, 3, 3], FeatureLayout::Nchw).unwrap();
        assert_eq!(pooled, vec![4.0, 13.0]);
        assert!(global_average_pool(&values, &[2, 9], FeatureLayout::Nchw).is_err());
        assert_eq!(global_average_pool(&[1.0, 2.0], &[1, 2], FeatureLayout::Nchw).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn model_kind_needs_path() {
        let mut spec = BackendSpec::builtin();
        spec.kind = BackendKind::ModelFile;
        assert!(load_backend(&spec).is_err());
        let missing = BackendSpec::model_file("vgg16", "/nonexistent/vgg16.onnx");
        assert!(load_backend(&missing).is_err());
    }
}
