//! Image classification by similarity search against synthetic references.
//!
//! The pipeline has three phases:
//!
//! 1. **Reference generation** ([`synth`], [`render`], [`mesh`], [`camera`]):
//!    rasterize each class mesh under seeded, ROI-constrained camera poses.
//! 2. **Knowledge extraction** ([`encoder`], [`store`]): embed the references
//!    and keep the unit-normalized vectors with their labels in an index file.
//! 3. **Inference** ([`knn`]): embed a query, take the top-k most cosine-similar
//!    references, and majority-vote their labels.
//!
//! [`eval`] scores the pipeline on labeled image folders.

pub mod camera;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod knn;
pub mod mesh;
#[cfg(feature = "onnx")]
pub mod onnx;
pub mod par;
pub mod raster;
pub mod render;
pub mod store;
pub mod synth;

pub use camera::{sample_pose, CameraPose, PerturbationSpec};
pub use encoder::{preprocess, Backend, Embedding, Encoder, EncoderManifest};
pub use error::{Error, Result};
pub use eval::{evaluate, load_dataset, ConfusionMatrix, LabeledDataset, MetricsReport};
pub use knn::{batch_classify, classify, cosine_similarity, top_k, ClassifierConfig, Neighbor, Prediction};
pub use mesh::{generate_primitive, load_mesh, Mesh, PrimitiveKind};
pub use par::Execution;
pub use raster::Raster;
pub use render::{render, RenderConfig, RenderedImage};
pub use store::ReferenceIndex;
pub use synth::{generate_reference_set, GeneratedImage};
