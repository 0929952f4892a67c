use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude::*;

use super::InputNormalization;
use crate::error::{Error, Result};
use crate::preprocess::{EarImage, EAR_SIZE};

type Plan = Arc<RunnableModel<TypedFact, Box<dyn TypedOp>>>;

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

pub(crate) struct OnnxModel {
    plan: Plan,
}

impl OnnxModel {
    pub(crate) fn load(path: &Path, output_name: Option<&str>, backend: &str) -> Result<Self> {
        let fail = |e: TractError| Error::Backend {
            backend: backend.to_string(),
            message: format!("{}: {e:#}", path.display()),
        };
        let side = EAR_SIZE as usize;
        let mut model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(fail)?
            .with_input_fact(0, f32::fact([1, 3, side, side]).into())
            .map_err(fail)?;
        if let Some(name) = output_name {
            model = model.with_outputs_by_name([name]).map_err(fail)?;
        }
        let plan = model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(fail)?;
        Ok(OnnxModel { plan })
    }

    /// Runs one image and returns the flattened first output and its shape.
    pub(crate) fn infer(
        &self,
        img: &EarImage,
        normalization: InputNormalization,
    ) -> std::result::Result<(Vec<f32>, Vec<usize>), String> {
        let input = to_planar(img, normalization);
        let side = EAR_SIZE as usize;
        let tensor = Tensor::from_shape(&[1, 3, side, side], &input).map_err(|e| e.to_string())?;
        let outputs = self
            .plan
            .run(tvec!(tensor.into()))
            .map_err(|e| format!("inference failed: {e:#}"))?;
        let out = outputs.first().ok_or("model produced no outputs")?;
        let view = out
            .to_plain_array_view::<f32>()
            .map_err(|e| format!("output is not f32: {e}"))?;
        Ok((view.iter().copied().collect(), view.shape().to_vec()))
    }
}

/// Channel-major `[3, H, W]` float buffer.
pub(crate) fn to_planar(img: &EarImage, normalization: InputNormalization) -> Vec<f32> {
    let pixels = img.pixels();
    let plane = (pixels.width() * pixels.height()) as usize;
    let mut buf = vec![0f32; 3 * plane];
    for (i, p) in pixels.pixels().enumerate() {
        for c in 0..3 {
            let v = p.0[c] as f32 / 255.0;
            buf[c * plane + i] = match normalization {
                InputNormalization::ZeroOne => v,
                InputNormalization::ImagenetMeanStd => (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c],
            };
        }
    }
    buf
}

