//! Labeled reference-set generation with ROI-constrained pose sampling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::camera::{apply_draw, image_seed, CameraPose, PerturbationSpec, PoseDraw, PoseStream};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::par;
use crate::render::{passes_roi, render, RenderConfig, RenderedImage};

/// Pose re-draws allowed per image before the base pose is declared unusable.
pub const MAX_POSE_ATTEMPTS: usize = 100;

/// One generated reference image and the pose that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub image: RenderedImage,
    /// Position within its class, `0..images_per_class`.
    pub index: usize,
    pub pose: CameraPose,
    pub draw: PoseDraw,
    /// Zero-based attempt at which the pose passed the ROI test.
    pub attempt: usize,
}

/// Provenance record for one written reference image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub file: String,
    pub label: String,
    pub index: usize,
    pub seed: u64,
    pub attempt: usize,
    pub pose: CameraPose,
}

impl GeneratedImage {
    /// Relative output path `<class>/<seq>_<seed>.png`.
    pub fn file_name(&self) -> String {
        format!("{}/{:04}_{:016x}.png", self.image.label, self.index, self.image.seed)
    }

    pub fn record(&self) -> ImageRecord {
        ImageRecord {
            file: self.file_name(),
            label: self.image.label.clone(),
            index: self.index,
            seed: self.image.seed,
            attempt: self.attempt,
            pose: self.pose,
        }
    }
}

/// Replays the pose stream of image `index` of `label` up to `attempt`.
pub fn replay_pose(base: &CameraPose, spec: &PerturbationSpec, label: &str, index: usize, attempt: usize) -> CameraPose {
    let mut stream = PoseStream::new(spec, label, index);
    let mut draw = stream.next_draw();
    for _ in 0..attempt {
        draw = stream.next_draw();
    }
    apply_draw(base, &draw)
}

fn generate_one(
    mesh: &Mesh,
    label: &str,
    index: usize,
    base: &CameraPose,
    spec: &PerturbationSpec,
    config: &RenderConfig,
) -> Result<GeneratedImage> {
    let mut stream = PoseStream::new(spec, label, index);
    for attempt in 0..MAX_POSE_ATTEMPTS {
        let draw = stream.next_draw();
        let pose = apply_draw(base, &draw);
        if passes_roi(mesh, &pose, config) {
            let mut image = render(mesh, &pose, config, label);
            image.seed = image_seed(spec.seed, label, index);
            return Ok(GeneratedImage { image, index, pose, draw, attempt });
        }
    }
    Err(Error::RoiUnsatisfiable { label: label.to_owned(), index, attempts: MAX_POSE_ATTEMPTS })
}

/// Renders `images_per_class` images for every class, ordered by label then index.
pub fn generate_reference_set(
    meshes: &BTreeMap<String, Mesh>,
    base: &CameraPose,
    spec: &PerturbationSpec,
    config: &RenderConfig,
) -> Result<Vec<GeneratedImage>> {
    if meshes.is_empty() {
        return Err(Error::InvalidConfig("at least one class is required".into()));
    }
    base.validate()?;
    spec.validate()?;
    config.validate()?;
    if let Some(label) = meshes.keys().find(|l| l.is_empty() || l.contains(['/', '\\'])) {
        return Err(Error::InvalidConfig(format!("class label {label:?} is not a valid directory name")));
    }
    let jobs: Vec<(&str, &Mesh, usize)> = meshes
        .iter()
        .flat_map(|(label, mesh)| (0..config.images_per_class).map(move |i| (label.as_str(), mesh, i)))
        .collect();
    par::map(&jobs, |&(label, mesh, index)| generate_one(mesh, label, index, base, spec, config))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_primitive, PrimitiveKind};
    use crate::render::roi_fraction;
    use nalgebra::{Point3, Vector3};

    fn classes() -> BTreeMap<String, Mesh> {
        [("cone", PrimitiveKind::Cone), ("cube", PrimitiveKind::Cube), ("sphere", PrimitiveKind::Icosphere)]
            .into_iter()
            .map(|(l, k)| (l.to_owned(), generate_primitive(k, 1)))
            .collect()
    }

    fn base() -> CameraPose {
        CameraPose::new(Point3::new(1.6, 1.2, 2.4), Point3::origin(), Vector3::y(), 35.0).unwrap()
    }

    fn small_config() -> RenderConfig {
        RenderConfig { width: 48, height: 48, roi_min_fraction: 1.0, ..RenderConfig::default() }
    }

    fn spec() -> PerturbationSpec {
        PerturbationSpec { max_yaw: 15.0, max_pitch: 10.0, max_roll: 5.0, distance_jitter: 0.1, seed: 11 }
    }

    #[test]
    fn twenty_four_per_class() {
        let set = generate_reference_set(&classes(), &base(), &spec(), &RenderConfig { images_per_class: 24, ..small_config() }).unwrap();
        assert_eq!(set.len(), 72);
        for label in ["cone", "cube", "sphere"] {
            assert_eq!(set.iter().filter(|g| g.image.label == label).count(), 24);
        }
    }

    #[test]
    fn zero_bounds_accept_first_draw() {
        let set = generate_reference_set(&classes(), &base(), &PerturbationSpec::none(3), &small_config()).unwrap();
        assert!(set.iter().all(|g| g.attempt == 0 && g.pose == base()));
    }

    #[test]
    fn pointing_away_is_unsatisfiable() {
        let away = CameraPose::new(Point3::new(0.0, 0.0, 3.0), Point3::new(0.0, 0.0, 6.0), Vector3::y(), 35.0).unwrap();
        let spec = PerturbationSpec { max_yaw: 5.0, max_pitch: 5.0, max_roll: 5.0, distance_jitter: 0.05, seed: 1 };
        let err = generate_reference_set(&classes(), &away, &spec, &small_config()).unwrap_err();
        assert!(matches!(err, Error::RoiUnsatisfiable { attempts: MAX_POSE_ATTEMPTS, .. }));
    }

    #[test]
    fn deterministic_and_roi_rechecks() {
        let config = RenderConfig { roi_min_fraction: 0.9, ..small_config() };
        let wide = PerturbationSpec { max_yaw: 40.0, max_pitch: 40.0, max_roll: 20.0, distance_jitter: 0.5, seed: 5 };
        let a = generate_reference_set(&classes(), &base(), &wide, &config).unwrap();
        let b = generate_reference_set(&classes(), &base(), &wide, &config).unwrap();
        assert_eq!(a, b);
        for g in &a {
            let mesh = &classes()[&g.image.label];
            let replayed = replay_pose(&base(), &wide, &g.image.label, g.index, g.attempt);
            assert_eq!(replayed, g.pose);
            assert!(roi_fraction(mesh, &replayed, config.width, config.height) >= 0.9);
        }
    }

    #[test]
    fn file_names_follow_layout() {
        let set = generate_reference_set(&classes(), &base(), &spec(), &RenderConfig { images_per_class: 2, ..small_config() }).unwrap();
        let name = set[1].file_name();
        assert!(name.starts_with("cone/0001_"), "{name}");
        assert!(name.ends_with(".png"));
    }
}
