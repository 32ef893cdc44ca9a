//! Pipeline configuration file (TOML) with `scene`, `encoder`, `classifier`
//! and `paths` sections. Relative paths resolve against the file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{Point3, Vector3};
use refsearch::{
    load_mesh, generate_primitive, CameraPose, ClassifierConfig, EncoderManifest, Mesh, PerturbationSpec,
    PrimitiveKind, RenderConfig,
};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub scene: Option<SceneConfig>,
    #[serde(default)]
    pub encoder: Option<EncoderSection>,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub base_pose: PoseSection,
    #[serde(default)]
    pub perturbation: PerturbationSection,
    #[serde(default)]
    pub render: RenderConfig,
    pub classes: Vec<ClassSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSection {
    pub position: [f64; 3],
    #[serde(default)]
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    #[serde(default = "default_fov")]
    pub vertical_fov: f64,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_fov() -> f64 {
    35.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    #[serde(default)]
    pub max_yaw: f64,
    #[serde(default)]
    pub max_pitch: f64,
    #[serde(default)]
    pub max_roll: f64,
    #[serde(default)]
    pub distance_jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A class is backed either by a mesh file or a built-in primitive.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub label: String,
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub primitive: Option<PrimitiveKind>,
    #[serde(default)]
    pub detail: u32,
    #[serde(default)]
    pub albedo: Option<[u8; 3]>,
}

/// Either a path to a manifest sidecar or the manifest fields inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EncoderSection {
    File { manifest: PathBuf },
    Inline(EncoderManifest),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    refsearch::knn::DEFAULT_K
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self { k: default_k() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub index: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// A config with no file behind it; relative paths resolve against the working directory.
    pub fn empty() -> Self {
        Self {
            scene: None,
            encoder: None,
            classifier: ClassifierSection::default(),
            paths: PathsSection::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    pub fn path(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        match value {
            Some(p) => Ok(self.resolve(p)),
            None => bail!("config key paths.{key} is not set"),
        }
    }

    pub fn scene(&self) -> Result<&SceneConfig> {
        self.scene.as_ref().context("config has no [scene] section")
    }

    pub fn classifier(&self, k_override: Option<usize>) -> Result<ClassifierConfig> {
        Ok(ClassifierConfig::new(k_override.unwrap_or(self.classifier.k))?)
    }

    /// Encoder manifest; defaults to the toy backend when the section is absent.
    pub fn encoder_manifest(&self) -> Result<EncoderManifest> {
        match &self.encoder {
            None => Ok(EncoderManifest::toy()),
            Some(EncoderSection::File { manifest }) => {
                let path = self.resolve(manifest);
                if !path.exists() {
                    bail!("config key encoder.manifest: {} does not exist", path.display());
                }
                Ok(EncoderManifest::load(&path)?)
            }
            Some(EncoderSection::Inline(m)) => {
                let mut m = m.clone();
                if let Some(p) = &m.model_path {
                    m.model_path = Some(self.resolve(p));
                }
                m.validate()?;
                Ok(m)
            }
        }
    }
}

impl SceneConfig {
    pub fn base_pose(&self) -> Result<CameraPose> {
        let p = &self.base_pose;
        Ok(CameraPose::new(Point3::from(p.position), Point3::from(p.target), Vector3::from(p.up), p.vertical_fov)
            .context("config key scene.base_pose")?)
    }

    pub fn perturbation(&self, seed_override: Option<u64>) -> PerturbationSpec {
        let p = &self.perturbation;
        PerturbationSpec {
            max_yaw: p.max_yaw,
            max_pitch: p.max_pitch,
            max_roll: p.max_roll,
            distance_jitter: p.distance_jitter,
            seed: seed_override.unwrap_or(p.seed),
        }
    }

    /// Render settings with per-class albedo folded in.
    pub fn render_config(&self) -> RenderConfig {
        let mut rc = self.render.clone();
        for class in &self.classes {
            if let Some(a) = class.albedo {
                rc.albedo.insert(class.label.clone(), a);
            }
        }
        rc
    }

    /// Loads or generates every class mesh; errors name the class.
    pub fn meshes(&self, config: &PipelineConfig) -> Result<BTreeMap<String, Mesh>> {
        if self.classes.is_empty() {
            bail!("config key scene.classes is empty");
        }
        let mut out = BTreeMap::new();
        for class in &self.classes {
            let mesh = match (&class.mesh, class.primitive) {
                (Some(path), None) => {
                    let path = config.resolve(path);
                    if !path.exists() {
                        bail!("class {:?}: mesh file {} does not exist", class.label, path.display());
                    }
                    load_mesh(&path).with_context(|| format!("class {:?}", class.label))?
                }
                (None, Some(kind)) => generate_primitive(kind, class.detail),
                _ => bail!("class {:?}: set exactly one of `mesh` or `primitive`", class.label),
            };
            if out.insert(class.label.clone(), mesh).is_some() {
                bail!("class {:?} is declared twice", class.label);
            }
        }
        Ok(out)
    }
}
