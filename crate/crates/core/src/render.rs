//! Deterministic CPU rasterizer: pinhole projection, z-buffered triangles,
//! flat Lambertian shading over a monochrome background.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::raster::{Raster, Rgb8};

/// Near clipping distance as a fraction of the camera–target distance.
const NEAR_FRACTION: f64 = 1e-3;

fn default_size() -> u32 {
    224
}

fn default_images_per_class() -> usize {
    24
}

fn default_background() -> Rgb8 {
    [40, 40, 40]
}

fn default_albedo() -> Rgb8 {
    [200, 200, 200]
}

fn default_light() -> Vector3<f64> {
    Vector3::new(-0.4, -0.6, -0.7).normalize()
}

fn default_ambient() -> f64 {
    0.2
}

fn default_roi() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    #[serde(default = "default_size")]
    pub width: u32,
    #[serde(default = "default_size")]
    pub height: u32,
    #[serde(default = "default_images_per_class")]
    pub images_per_class: usize,
    #[serde(default = "default_background")]
    pub background_color: Rgb8,
    /// Albedo for classes without an entry in `albedo`.
    #[serde(default = "default_albedo")]
    pub default_albedo: Rgb8,
    #[serde(default)]
    pub albedo: BTreeMap<String, Rgb8>,
    /// Direction in which light travels (from the light into the scene).
    #[serde(default = "default_light")]
    pub light_direction: Vector3<f64>,
    #[serde(default = "default_ambient")]
    pub ambient: f64,
    /// Fraction of projected mesh vertices that must land inside the frame.
    #[serde(default = "default_roi")]
    pub roi_min_fraction: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: default_size(),
            height: default_size(),
            images_per_class: default_images_per_class(),
            background_color: default_background(),
            default_albedo: default_albedo(),
            albedo: BTreeMap::new(),
            light_direction: default_light(),
            ambient: default_ambient(),
            roi_min_fraction: default_roi(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("width and height must be >= 1".into()));
        }
        if self.images_per_class == 0 {
            return Err(Error::InvalidConfig("images_per_class must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return Err(Error::InvalidConfig(format!("ambient {} outside [0, 1]", self.ambient)));
        }
        if !(self.roi_min_fraction > 0.0 && self.roi_min_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("roi_min_fraction {} outside (0, 1]", self.roi_min_fraction)));
        }
        let l = self.light_direction;
        if !l.iter().all(|c| c.is_finite()) || l.norm() == 0.0 {
            return Err(Error::InvalidConfig("light_direction must be a finite non-zero vector".into()));
        }
        Ok(())
    }

    pub fn albedo_for(&self, label: &str) -> Rgb8 {
        self.albedo.get(label).copied().unwrap_or(self.default_albedo)
    }
}

/// A labeled synthetic image together with the seed of its pose draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedImage {
    pub raster: Raster,
    pub label: String,
    pub seed: u64,
}

/// Flat Lambertian intensity for a unit face normal. The face is fully lit
/// when its normal points straight back against the light.
pub fn shade(albedo: Rgb8, normal: &Vector3<f64>, light_direction: &Vector3<f64>, ambient: f64) -> Rgb8 {
    let diffuse = (-normal.dot(&light_direction.normalize())).max(0.0);
    let intensity = ambient + (1.0 - ambient) * diffuse;
    albedo.map(|c| (c as f64 * intensity).round().clamp(0.0, 255.0) as u8)
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_depth: f64,
}

/// Clips a camera-space polygon against the plane `z = near`.
fn clip_near(poly: &[Vector3<f64>], near: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.z >= near, b.z >= near);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (near - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Pixels on an edge go to the triangle for which the edge is a "top" or
/// "left" edge, so a shared edge is filled exactly once.
#[inline]
fn owns_edge(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

#[inline]
fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

fn fill_triangle(tri: [ScreenVertex; 3], color: Rgb8, raster: &mut Raster, depth: &mut [f64]) {
    let [v0, mut v1, mut v2] = tri;
    let mut area = edge(&v0, &v1, v2.x, v2.y);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        std::mem::swap(&mut v1, &mut v2);
        area = -area;
    }
    let (w, h) = (raster.width(), raster.height());
    let min_x = v0.x.min(v1.x).min(v2.x).floor().max(0.0) as i64;
    let max_x = (v0.x.max(v1.x).max(v2.x).ceil() as i64).min(w as i64 - 1);
    let min_y = v0.y.min(v1.y).min(v2.y).floor().max(0.0) as i64;
    let max_y = (v0.y.max(v1.y).max(v2.y).ceil() as i64).min(h as i64 - 1);
    let owns = [owns_edge(&v1, &v2), owns_edge(&v2, &v0), owns_edge(&v0, &v1)];
    for py in min_y..=max_y {
        let cy = py as f64 + 0.5;
        for px in min_x..=max_x {
            let cx = px as f64 + 0.5;
            let ws = [edge(&v1, &v2, cx, cy), edge(&v2, &v0, cx, cy), edge(&v0, &v1, cx, cy)];
            let inside = ws.iter().zip(owns).all(|(&e, own)| e > 0.0 || (e == 0.0 && own));
            if !inside {
                continue;
            }
            let inv_depth = (ws[0] * v0.inv_depth + ws[1] * v1.inv_depth + ws[2] * v2.inv_depth) / area;
            let slot = &mut depth[py as usize * w as usize + px as usize];
            if inv_depth > *slot {
                *slot = inv_depth;
                raster.set(px as u32, py as u32, color);
            }
        }
    }
}

/// Renders `mesh` seen from `pose`. Pixels not covered by any triangle keep
/// the background color; degenerate triangles are skipped.
pub fn render(mesh: &Mesh, pose: &CameraPose, config: &RenderConfig, label: &str) -> RenderedImage {
    let (w, h) = (config.width, config.height);
    let mut raster = Raster::filled(w, h, config.background_color);
    let mut depth = vec![0.0f64; w as usize * h as usize];
    let albedo = config.albedo_for(label);
    let near = pose.distance() * NEAR_FRACTION;
    let focal = pose.focal_px(h);
    let (cx, cy) = (0.5 * w as f64, 0.5 * h as f64);
    let camera_vertices: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| pose.to_camera(v)).collect();

    for (t, tri) in mesh.triangles().iter().enumerate() {
        if mesh.is_degenerate(t) {
            continue;
        }
        let color = shade(albedo, &mesh.face_normals()[t], &config.light_direction, config.ambient);
        let poly = tri.map(|i| camera_vertices[i as usize]);
        let clipped = if poly.iter().all(|v| v.z >= near) { poly.to_vec() } else { clip_near(&poly, near) };
        if clipped.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = clipped
            .iter()
            .map(|v| ScreenVertex { x: cx + focal * v.x / v.z, y: cy - focal * v.y / v.z, inv_depth: 1.0 / v.z })
            .collect();
        for i in 1..screen.len() - 1 {
            fill_triangle([screen[0], screen[i], screen[i + 1]], color, &mut raster, &mut depth);
        }
    }
    RenderedImage { raster, label: label.to_owned(), seed: 0 }
}

/// Fraction of mesh vertices that project inside the frame. An empty mesh scores 0.
pub fn roi_fraction(mesh: &Mesh, pose: &CameraPose, width: u32, height: u32) -> f64 {
    if mesh.vertex_count() == 0 {
        return 0.0;
    }
    let inside = mesh
        .vertices()
        .iter()
        .filter_map(|v| pose.project(v, width, height))
        .filter(|&(x, y)| x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64)
        .count();
    inside as f64 / mesh.vertex_count() as f64
}

pub fn passes_roi(mesh: &Mesh, pose: &CameraPose, config: &RenderConfig) -> bool {
    roi_fraction(mesh, pose, config.width, config.height) >= config.roi_min_fraction
}

/// Convenience for building single-triangle or small test scenes.
pub fn mesh_from_points(points: &[Point3<f64>], triangles: Vec<[u32; 3]>) -> Result<Mesh> {
    Mesh::new(points.to_vec(), triangles)
}
