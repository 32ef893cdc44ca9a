//! Pinhole camera poses and seeded orbital pose perturbation.

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum angle between the up vector and the view direction.
const MIN_UP_ANGLE: f64 = 1e-4;

/// Look-at pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Point3<f64>,
    pub target: Point3<f64>,
    pub up: Vector3<f64>,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
}

impl CameraPose {
    pub fn new(position: Point3<f64>, target: Point3<f64>, up: Vector3<f64>, vertical_fov: f64) -> Result<Self> {
        let pose = Self { position, target, up, vertical_fov };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.position.iter().chain(self.target.iter()).chain(self.up.iter()).all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidPose("non-finite component".into()));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(Error::InvalidPose(format!("vertical_fov {} outside (0, 180)", self.vertical_fov)));
        }
        let view = self.target - self.position;
        if view.norm() == 0.0 {
            return Err(Error::InvalidPose("position equals target".into()));
        }
        if self.up.norm() == 0.0 {
            return Err(Error::InvalidPose("zero up vector".into()));
        }
        let angle = view.angle(&self.up);
        if angle < MIN_UP_ANGLE || std::f64::consts::PI - angle < MIN_UP_ANGLE {
            return Err(Error::InvalidPose("up vector parallel to view direction".into()));
        }
        Ok(())
    }

    pub fn distance(&self) -> f64 {
        (self.target - self.position).norm()
    }

    /// Orthonormal camera basis `(right, true_up, forward)`.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let forward = (self.target - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        (right, up, forward)
    }

    /// Focal length in pixels for an image `height` pixels tall.
    pub fn focal_px(&self, height: u32) -> f64 {
        0.5 * height as f64 / (0.5 * self.vertical_fov.to_radians()).tan()
    }

    /// World point to camera coordinates `(x right, y up, depth along view)`.
    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        let (right, up, forward) = self.basis();
        let d = p - self.position;
        Vector3::new(d.dot(&right), d.dot(&up), d.dot(&forward))
    }

    /// Projects a world point to continuous pixel coordinates (x right, y down;
    /// pixel `(i, j)` spans `[i, i+1) × [j, j+1)`). `None` when the point is not
    /// in front of the camera.
    pub fn project(&self, p: &Point3<f64>, width: u32, height: u32) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let f = self.focal_px(height);
        Some((0.5 * width as f64 + f * c.x / c.z, 0.5 * height as f64 - f * c.y / c.z))
    }
}

/// Bounds on the random orbital perturbation applied to a base pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Degrees, rotation about the base up axis through the target.
    pub max_yaw: f64,
    /// Degrees, rotation about the camera right axis through the target.
    pub max_pitch: f64,
    /// Degrees, rotation about the view axis.
    pub max_roll: f64,
    /// Relative camera–target distance jitter, in `[0, 1)`.
    pub distance_jitter: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn none(seed: u64) -> Self {
        Self { max_yaw: 0.0, max_pitch: 0.0, max_roll: 0.0, distance_jitter: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_yaw", self.max_yaw),
            ("max_pitch", self.max_pitch),
            ("max_roll", self.max_roll),
            ("distance_jitter", self.distance_jitter),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.distance_jitter >= 1.0 {
            return Err(Error::InvalidConfig(format!("distance_jitter must be < 1, got {}", self.distance_jitter)));
        }
        Ok(())
    }
}

/// One perturbation draw: angles in degrees and a distance scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDraw {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub scale: f64,
}

impl PoseDraw {
    pub const IDENTITY: PoseDraw = PoseDraw { yaw: 0.0, pitch: 0.0, roll: 0.0, scale: 1.0 };
}

/// 64-bit FNV-1a, used to key random streams by class label.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-image seed derived from `(seed, hash(label), draw_index)`.
pub fn image_seed(seed: u64, label: &str, draw_index: usize) -> u64 {
    splitmix(splitmix(seed ^ splitmix(label_hash(label))) ^ draw_index as u64)
}

/// Random stream for one image. Successive draws from the same stream
/// serve rejection re-draws.
#[derive(Debug, Clone)]
pub struct PoseStream {
    rng: ChaCha8Rng,
    spec: PerturbationSpec,
}

impl PoseStream {
    pub fn new(spec: &PerturbationSpec, label: &str, draw_index: usize) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(image_seed(spec.seed, label, draw_index)), spec: *spec }
    }

    pub fn next_draw(&mut self) -> PoseDraw {
        let s = &self.spec;
        let mut sym = |bound: f64| if bound > 0.0 { self.rng.random_range(-bound..=bound) } else { 0.0 };
        let yaw = sym(s.max_yaw);
        let pitch = sym(s.max_pitch);
        let roll = sym(s.max_roll);
        let scale = 1.0 + sym(s.distance_jitter);
        PoseDraw { yaw, pitch, roll, scale }
    }
}

/// Orbits `base` about its target by the drawn angles and rescales the distance.
/// Target and field of view are unchanged.
pub fn apply_draw(base: &CameraPose, draw: &PoseDraw) -> CameraPose {
    if *draw == PoseDraw::IDENTITY {
        return *base;
    }
    let (right, _, _) = base.basis();
    let yaw = Rotation3::from_axis_angle(&Unit::new_normalize(base.up), draw.yaw.to_radians());
    let pitch = Rotation3::from_axis_angle(&Unit::new_normalize(right), draw.pitch.to_radians());
    let orbit = yaw * pitch;
    let offset = orbit * (base.position - base.target) * draw.scale;
    let forward = Unit::new_normalize(-offset);
    let roll = Rotation3::from_axis_angle(&forward, draw.roll.to_radians());
    CameraPose {
        position: base.target + offset,
        target: base.target,
        up: roll * (orbit * base.up),
        vertical_fov: base.vertical_fov,
    }
}

/// Samples the first perturbed pose for image `draw_index` of class `label`.
pub fn sample_pose(base: &CameraPose, spec: &PerturbationSpec, label: &str, draw_index: usize) -> CameraPose {
    let draw = PoseStream::new(spec, label, draw_index).next_draw();
    apply_draw(base, &draw)
}
