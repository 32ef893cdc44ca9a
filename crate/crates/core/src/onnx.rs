//! ONNX backend on the tract runtime. The model takes one `1×3×S×S` f32 input
//! and returns either `1×D` or a token sequence `1×T×D`.

use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude::*;

use crate::encoder::{Backend, ImageTensor, OutputHead};
use crate::error::{Error, Result};

type Plan = Arc<TypedRunnableModel>;

fn model_err(context: &str, e: impl std::fmt::Display) -> Error {
    Error::Model(format!("{context}: {e:#}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutputShape {
    Vector,
    Tokens { count: usize },
}

pub struct OnnxBackend {
    plan: Plan,
    input_size: usize,
    dim: usize,
    shape: OutputShape,
    head: OutputHead,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend")
            .field("input_size", &self.input_size)
            .field("dim", &self.dim)
            .field("shape", &self.shape)
            .field("head", &self.head)
            .finish()
    }
}

impl OnnxBackend {
    pub fn load(path: impl AsRef<Path>, input_size: usize, head: OutputHead) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::Model(format!("model file {} not found", path.display())));
        }
        let ctx = path.display().to_string();
        let plan = tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, input_size, input_size]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| model_err(&ctx, e))?;
        let fact = plan.model().output_fact(0).map_err(|e| model_err(&ctx, e))?;
        let dims = fact
            .shape
            .as_concrete()
            .ok_or_else(|| Error::Model(format!("{ctx}: output shape is not static")))?
            .to_vec();
        let (dim, shape) = match dims.as_slice() {
            [1, d] => (*d, OutputShape::Vector),
            [1, t, d] if *t >= 1 => (*d, OutputShape::Tokens { count: *t }),
            other => return Err(Error::Model(format!("{ctx}: unsupported output shape {other:?}"))),
        };
        if dim == 0 {
            return Err(Error::Model(format!("{ctx}: zero-width output")));
        }
        if head == OutputHead::MeanPooled && shape == (OutputShape::Tokens { count: 1 }) {
            return Err(Error::Model(format!("{ctx}: mean pooling needs patch tokens after the class token")));
        }
        Ok(Self { plan, input_size, dim, shape, head })
    }
}

impl Backend for OnnxBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, input: &ImageTensor) -> Result<Vec<f32>> {
        let s = self.input_size;
        if input.size != s {
            return Err(Error::Model(format!("input is {}² but the model expects {s}²", input.size)));
        }
        let tensor = Tensor::from_shape(&[1, 3, s, s], &input.data).map_err(|e| model_err("input", e))?;
        let outputs = self.plan.run(tvec!(tensor.into())).map_err(|e| model_err("inference", e))?;
        let view = outputs[0].to_plain_array_view::<f32>().map_err(|e| model_err("output", e))?;
        let out: Vec<f32> = view.iter().copied().collect();
        let d = self.dim;
        match self.shape {
            OutputShape::Vector => Ok(out),
            OutputShape::Tokens { .. } => match self.head {
                OutputHead::ClassToken => Ok(out[..d].to_vec()),
                OutputHead::MeanPooled => {
                    let patches = &out[d..];
                    let n = patches.len() / d;
                    let mut acc = vec![0f64; d];
                    for token in patches.chunks_exact(d) {
                        for (a, &x) in acc.iter_mut().zip(token) {
                            *a += x as f64;
                        }
                    }
                    Ok(acc.into_iter().map(|a| (a / n as f64) as f32).collect())
                }
            },
        }
    }
}
