//! Image encoders: preprocessing, the backend trait, and the manifest that
//! selects and configures a backend.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::raster::Raster;

/// Side of the patch grid used by the toy backend.
pub const TOY_GRID: usize = 8;
/// Embedding size of the toy backend: mean and std per patch per channel.
pub const TOY_DIM: usize = 2 * TOY_GRID * TOY_GRID * 3;

/// Raw encoder output. Not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// ONNX model file.
    InterchangeModel,
    /// Built-in patch-statistics encoder, no model file.
    ToyPatchStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    #[default]
    ClassToken,
    MeanPooled,
}

fn default_input_size() -> u32 {
    224
}

fn default_mean() -> [f32; 3] {
    [0.0; 3]
}

fn default_std() -> [f32; 3] {
    [1.0; 3]
}

/// Encoder sidecar. Stored as JSON (`.json`) or TOML (anything else).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderManifest {
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    #[serde(default = "default_input_size")]
    pub input_size: u32,
    #[serde(default = "default_mean")]
    pub channel_mean: [f32; 3],
    #[serde(default = "default_std")]
    pub channel_std: [f32; 3],
    #[serde(default)]
    pub output_head: OutputHead,
    /// Expected embedding size; checked against the backend when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl EncoderManifest {
    pub fn toy() -> Self {
        Self {
            backend: BackendKind::ToyPatchStats,
            model_path: None,
            input_size: default_input_size(),
            channel_mean: default_mean(),
            channel_std: default_std(),
            output_head: OutputHead::ClassToken,
            dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.backend, &self.model_path) {
            (BackendKind::InterchangeModel, None) => {
                return Err(Error::InvalidConfig("interchange-model backend requires model_path".into()))
            }
            (BackendKind::ToyPatchStats, Some(_)) => {
                return Err(Error::InvalidConfig("toy-patch-stats backend does not take a model_path".into()))
            }
            _ => {}
        }
        if self.input_size == 0 {
            return Err(Error::InvalidConfig("input_size must be >= 1".into()));
        }
        if self.backend == BackendKind::ToyPatchStats && (self.input_size as usize) < TOY_GRID {
            return Err(Error::InvalidConfig(format!("toy backend needs input_size >= {TOY_GRID}")));
        }
        if let Some(i) = self.channel_std.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("channel_std[{i}] must be > 0")));
        }
        if !self.channel_mean.iter().all(|m| m.is_finite()) {
            return Err(Error::InvalidConfig("channel_mean must be finite".into()));
        }
        if self.dim == Some(0) {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Reads a manifest; a relative `model_path` is resolved against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        };
        if let (Some(model), Some(dir)) = (&manifest.model_path, path.parent()) {
            if model.is_relative() {
                manifest.model_path = Some(dir.join(model));
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = if path.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))?
        } else {
            toml::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))?
        };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Normalized CHW image, `3 × size × size`, channel order RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub size: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    #[inline]
    pub fn at(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * self.size + y) * self.size + x]
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let plane = self.size * self.size;
        &self.data[channel * plane..(channel + 1) * plane]
    }
}

/// Source coordinate and blend weight for one output sample, using
/// pixel-center alignment and edge clamping.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize to `input_size²`, scale to `[0, 1]`, then standardize per channel.
pub fn preprocess(image: &Raster, manifest: &EncoderManifest) -> Result<ImageTensor> {
    if image.is_empty() {
        return Err(Error::EmptyImage);
    }
    let size = manifest.input_size as usize;
    let xs = bilinear_taps(size, image.width() as usize);
    let ys = bilinear_taps(size, image.height() as usize);
    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    let px = |x: usize, y: usize, c: usize| image.get(x as u32, y as u32)[c] as f32 / 255.0;
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                // a + (b - a) * t keeps constant regions exact
                let top = px(x0, y0, c) + (px(x1, y0, c) - px(x0, y0, c)) * fx;
                let bottom = px(x0, y1, c) + (px(x1, y1, c) - px(x0, y1, c)) * fx;
                let v = top + (bottom - top) * fy;
                data[c * plane + oy * size + ox] = (v - manifest.channel_mean[c]) / manifest.channel_std[c];
            }
        }
    }
    Ok(ImageTensor { size, data })
}

/// A loaded, immutable encoder network.
pub trait Backend: Send + Sync {
    /// Declared output size.
    fn dim(&self) -> usize;
    fn forward(&self, input: &ImageTensor) -> Result<Vec<f32>>;
}

/// Patch-statistics encoder: an 8×8 grid of patches; per patch and channel
/// the mean (first 192 values) and population standard deviation (last 192).
/// Values are ordered patch row, patch column, channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyPatchStats;

impl Backend for ToyPatchStats {
    fn dim(&self) -> usize {
        TOY_DIM
    }

    fn forward(&self, input: &ImageTensor) -> Result<Vec<f32>> {
        let n = input.size;
        if n < TOY_GRID {
            return Err(Error::Model(format!("toy backend needs input_size >= {TOY_GRID}, got {n}")));
        }
        let bounds: Vec<usize> = (0..=TOY_GRID).map(|i| i * n / TOY_GRID).collect();
        let mut means = Vec::with_capacity(TOY_DIM / 2);
        let mut stds = Vec::with_capacity(TOY_DIM / 2);
        for py in 0..TOY_GRID {
            for px in 0..TOY_GRID {
                for c in 0..3 {
                    let plane = input.channel(c);
                    let (mut sum, mut count) = (0f64, 0usize);
                    for y in bounds[py]..bounds[py + 1] {
                        for x in bounds[px]..bounds[px + 1] {
                            sum += plane[y * n + x] as f64;
                            count += 1;
                        }
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0f64;
                    for y in bounds[py]..bounds[py + 1] {
                        for x in bounds[px]..bounds[px + 1] {
                            sq += (plane[y * n + x] as f64 - mean).powi(2);
                        }
                    }
                    means.push(mean as f32);
                    stds.push((sq / count as f64).sqrt() as f32);
                }
            }
        }
        means.extend(stds);
        Ok(means)
    }
}

/// Manifest plus loaded backend.
pub struct Encoder {
    manifest: EncoderManifest,
    backend: Box<dyn Backend>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder").field("manifest", &self.manifest).field("dim", &self.dim()).finish()
    }
}

impl Encoder {
    pub fn from_manifest(manifest: EncoderManifest) -> Result<Self> {
        manifest.validate()?;
        let backend: Box<dyn Backend> = match manifest.backend {
            BackendKind::ToyPatchStats => Box::new(ToyPatchStats),
            BackendKind::InterchangeModel => load_interchange(&manifest)?,
        };
        Self::with_backend(manifest, backend)
    }

    /// Wraps a custom backend; the manifest still drives preprocessing.
    pub fn with_backend(manifest: EncoderManifest, backend: Box<dyn Backend>) -> Result<Self> {
        if let Some(dim) = manifest.dim {
            if dim != backend.dim() {
                return Err(Error::DimMismatch { expected: dim, actual: backend.dim() });
            }
        }
        Ok(Self { manifest, backend })
    }

    pub fn manifest(&self) -> &EncoderManifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn encode(&self, image: &Raster) -> Result<Embedding> {
        let input = preprocess(image, &self.manifest)?;
        let out = self.backend.forward(&input)?;
        if out.len() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), actual: out.len() });
        }
        Embedding::new(out)
    }

    /// Encodes every image; the lowest failing index aborts the batch.
    pub fn encode_batch<I: AsRef<Raster> + Sync>(&self, images: &[I]) -> Result<Vec<Embedding>> {
        par::map(images, |img| self.encode(img.as_ref()))
            .into_iter()
            .enumerate()
            .map(|(index, r)| r.map_err(|e| Error::BatchItem { index, source: Box::new(e) }))
            .collect()
    }
}

impl AsRef<Raster> for Raster {
    fn as_ref(&self) -> &Raster {
        self
    }
}

#[cfg(feature = "onnx")]
fn load_interchange(manifest: &EncoderManifest) -> Result<Box<dyn Backend>> {
    let path = manifest.model_path.as_ref().expect("validated");
    Ok(Box::new(crate::onnx::OnnxBackend::load(path, manifest.input_size as usize, manifest.output_head)?))
}

#[cfg(not(feature = "onnx"))]
fn load_interchange(_manifest: &EncoderManifest) -> Result<Box<dyn Backend>> {
    Err(Error::Model("built without the `onnx` feature".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(size: u32, mean: f32, std: f32) -> EncoderManifest {
        EncoderManifest { input_size: size, channel_mean: [mean; 3], channel_std: [std; 3], ..EncoderManifest::toy() }
    }

    #[test]
    fn identity_normalization_is_pixel_over_255() {
        let img = Raster::from_fn(224, 224, |x, y| [(x % 256) as u8, (y % 256) as u8, ((x * y) % 256) as u8]);
        let t = preprocess(&img, &manifest(224, 0.0, 1.0)).unwrap();
        for (y, x) in [(0, 0), (5, 17), (223, 223), (100, 3)] {
            let p = img.get(x as u32, y as u32);
            for c in 0..3 {
                assert_eq!(t.at(c, y, x), p[c] as f32 / 255.0);
            }
        }
    }

    #[test]
    fn mid_gray_standardization() {
        let img = Raster::filled(224, 224, [128, 128, 128]);
        let t = preprocess(&img, &manifest(224, 0.5, 0.5)).unwrap();
        let expected = (128.0 / 255.0 - 0.5) / 0.5;
        assert!((expected - 0.003_921_6f64).abs() < 1e-6);
        assert!(t.data.iter().all(|v| (*v as f64 - expected).abs() < 1e-6));
    }

    #[test]
    fn checkerboard_downsample_hand_stencil() {
        // 448x448, a 2x2 block at the center: (223,223) and (224,224) white,
        // the other two black, background mid gray 100. Output pixel o samples
        // source 2o + 0.5, i.e. the average of source pixels 2o and 2o + 1.
        let img = Raster::from_fn(448, 448, |x, y| match (x, y) {
            (223, 223) | (224, 224) => [255; 3],
            (223, 224) | (224, 223) => [0; 3],
            _ => [100; 3],
        });
        let t = preprocess(&img, &manifest(224, 0.0, 1.0)).unwrap();
        let g = 100.0 / 255.0;
        let w = 1.0;
        // (111,111) averages source 222..=223 in both axes: three gray, one white
        let probes = [
            ((111, 111), (3.0 * g + w) / 4.0),
            // (112,112) averages 224..=225: one white, three gray
            ((112, 112), (3.0 * g + w) / 4.0),
            // (111,112) holds source (x 222..=223, y 224..=225): one black (223,224)
            ((111, 112), (3.0 * g) / 4.0),
            ((10, 200), g),
        ];
        for ((y, x), expected) in probes {
            for c in 0..3 {
                assert!((t.at(c, y, x) - expected as f32).abs() < 1e-6, "({y},{x})");
            }
        }
    }

    #[test]
    fn zero_size_image_rejected() {
        let img = Raster::new(0, 5, vec![]).unwrap();
        assert!(matches!(preprocess(&img, &EncoderManifest::toy()), Err(Error::EmptyImage)));
    }

    #[test]
    fn toy_constant_image() {
        let enc = Encoder::from_manifest(EncoderManifest::toy()).unwrap();
        let e = enc.encode(&Raster::filled(64, 48, [10, 20, 30])).unwrap();
        assert_eq!(e.dim(), 384);
        let (means, stds) = e.as_slice().split_at(192);
        assert!(stds.iter().all(|s| *s == 0.0));
        for c in 0..3 {
            let first = means[c];
            assert!(means.iter().skip(c).step_by(3).all(|m| *m == first));
        }
    }

    #[test]
    fn toy_hand_statistics_on_16x16() {
        // 2x2 patches. Patch (py, px) gets pixels {a, b} alternating in x,
        // with a = 8*py + px and b = a + 2*c + 1 for channel c. Mean (a+b)/2, std |b-a|/2.
        let img = Raster::from_fn(16, 16, |x, y| {
            let a = (8 * (y / 2) + x / 2) as u8;
            std::array::from_fn(|c| if x % 2 == 0 { a } else { a + 2 * c as u8 + 1 })
        });
        let m = manifest(16, 0.0, 1.0);
        let e = Encoder::from_manifest(m).unwrap().encode(&img).unwrap();
        for py in 0..8 {
            for px in 0..8 {
                for c in 0..3 {
                    let a = (8 * py + px) as f64;
                    let b = a + 2.0 * c as f64 + 1.0;
                    let slot = (py * 8 + px) * 3 + c;
                    let mean = (a + b) / 2.0 / 255.0;
                    let std = (b - a) / 2.0 / 255.0;
                    assert!((e.as_slice()[slot] as f64 - mean).abs() < 1e-6);
                    assert!((e.as_slice()[192 + slot] as f64 - std).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn encode_is_deterministic_and_batch_matches() {
        let enc = Encoder::from_manifest(EncoderManifest::toy()).unwrap();
        let imgs: Vec<Raster> = (0..6).map(|i| Raster::from_fn(30 + i, 40, |x, y| [(x * i) as u8, y as u8, 9])).collect();
        let a = enc.encode(&imgs[2]).unwrap();
        let b = enc.encode(&imgs[2]).unwrap();
        assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let batch = enc.encode_batch(&imgs).unwrap();
        let seq: Vec<Embedding> = imgs.iter().map(|i| enc.encode(i).unwrap()).collect();
        assert_eq!(batch, seq);
        assert!(enc.encode_batch::<Raster>(&[]).unwrap().is_empty());
    }

    #[test]
    fn batch_reports_failing_index() {
        let enc = Encoder::from_manifest(EncoderManifest::toy()).unwrap();
        let imgs = vec![Raster::filled(8, 8, [1; 3]), Raster::new(0, 0, vec![]).unwrap(), Raster::new(3, 0, vec![]).unwrap()];
        let err = enc.encode_batch(&imgs).unwrap_err();
        assert!(matches!(err, Error::BatchItem { index: 1, .. }), "{err}");
    }

    #[test]
    fn manifest_validation() {
        let mut m = EncoderManifest::toy();
        m.model_path = Some("x.onnx".into());
        assert!(m.validate().is_err());
        let mut m = EncoderManifest::toy();
        m.backend = BackendKind::InterchangeModel;
        assert!(m.validate().is_err());
        let mut m = EncoderManifest::toy();
        m.channel_std[1] = 0.0;
        assert!(m.validate().is_err());
        let mut m = EncoderManifest::toy();
        m.dim = Some(768);
        assert!(matches!(Encoder::from_manifest(m), Err(Error::DimMismatch { expected: 768, actual: 384 })));
    }

    #[test]
    fn manifest_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = EncoderManifest { channel_mean: [0.485, 0.456, 0.406], channel_std: [0.229, 0.224, 0.225], ..EncoderManifest::toy() };
        for name in ["enc.toml", "enc.json"] {
            let p = dir.path().join(name);
            m.save(&p).unwrap();
            assert_eq!(EncoderManifest::load(&p).unwrap(), m);
        }
        let p = dir.path().join("model.json");
        fs::write(&p, r#"{"backend":"interchange-model","model_path":"vits14.onnx","input_size":224,"channel_mean":[0.5,0.5,0.5],"channel_std":[0.5,0.5,0.5],"output_head":"mean-pooled"}"#).unwrap();
        let loaded = EncoderManifest::load(&p).unwrap();
        assert_eq!(loaded.model_path.unwrap(), dir.path().join("vits14.onnx"));
        assert_eq!(loaded.output_head, OutputHead::MeanPooled);
    }
}
