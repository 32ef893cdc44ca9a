//! Triangle meshes: loading from OBJ / binary STL and built-in primitives.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Area below which a triangle is treated as degenerate.
const DEGENERATE_AREA: f64 = 1e-14;

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vector3<f64>>,
    degenerate: Vec<bool>,
}

impl Mesh {
    /// Builds a mesh, validating indices and coordinates and computing face normals.
    ///
    /// Degenerate (zero-area) triangles are kept and flagged; their normal is zero.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} has a non-finite coordinate")));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &idx in tri {
                if idx as usize >= vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        index: idx as usize,
                        vertex_count: vertices.len(),
                    });
                }
            }
        }
        let mut normals = Vec::with_capacity(triangles.len());
        let mut degenerate = Vec::with_capacity(triangles.len());
        for tri in &triangles {
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            let cross = (b - a).cross(&(c - a));
            let norm = cross.norm();
            if 0.5 * norm <= DEGENERATE_AREA {
                normals.push(Vector3::zeros());
                degenerate.push(true);
            } else {
                normals.push(cross / norm);
                degenerate.push(false);
            }
        }
        Ok(Self { vertices, triangles, normals, degenerate })
    }

    /// A mesh with no geometry. Renders as pure background.
    pub fn empty() -> Self {
        Self { vertices: Vec::new(), triangles: Vec::new(), normals: Vec::new(), degenerate: Vec::new() }
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Unit face normals following counter-clockwise winding; zero for degenerate faces.
    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn is_degenerate(&self, triangle: usize) -> bool {
        self.degenerate[triangle]
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Axis-aligned bounding box, `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Counts edges shared by exactly two triangles vs. all edges; a closed
    /// manifold surface has every edge shared twice.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !edges.is_empty() && edges.values().all(|&n| n == 2)
    }

    /// Recenters the bounding box on the origin and scales the largest extent to `extent`.
    fn normalized(mut self, extent: f64) -> Self {
        if let Some((lo, hi)) = self.bounds() {
            let center = nalgebra::center(&lo, &hi);
            let size = (hi - lo).max();
            let scale = if size > 0.0 { extent / size } else { 1.0 };
            for v in &mut self.vertices {
                *v = Point3::from((*v - center) * scale);
            }
        }
        self
    }
}

/// Loads a mesh from an ASCII OBJ (`.obj`) or binary STL (`.stl`) file.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mesh = match ext.as_str() {
        "obj" => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::MeshParse(format!("{}: not valid UTF-8", path.display())))?;
            parse_obj(text)?
        }
        "stl" => parse_stl(&bytes)?,
        other => return Err(Error::UnsupportedFormat(format!("mesh extension {other:?}"))),
    };
    if mesh.triangle_count() == 0 {
        return Err(Error::InvalidMesh(format!("{}: no triangles", path.display())));
    }
    Ok(mesh)
}

/// Parses `v` and `f` records of an ASCII OBJ file. Polygonal faces are fan
/// triangulated; `v/vt/vn` face syntax and negative (relative) indices are accepted.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let coords: Vec<f64> = fields
                    .take(3)
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::MeshParse(format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(Error::MeshParse(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut face = Vec::new();
                for field in fields {
                    let raw = field.split('/').next().unwrap_or("");
                    let idx: i64 = raw
                        .parse()
                        .map_err(|_| Error::MeshParse(format!("line {}: bad face index {field:?}", lineno + 1)))?;
                    let resolved = match idx {
                        0 => {
                            return Err(Error::MeshParse(format!("line {}: face index 0", lineno + 1)));
                        }
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved > u32::MAX as i64 {
                        return Err(Error::MeshParse(format!("line {}: face index {idx} out of range", lineno + 1)));
                    }
                    face.push(resolved as u32);
                }
                if face.len() < 3 {
                    return Err(Error::MeshParse(format!("line {}: face needs 3 vertices", lineno + 1)));
                }
                for i in 1..face.len() - 1 {
                    triangles.push([face[0], face[i], face[i + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, triangles)
}

/// Parses a binary STL buffer. Vertices are welded by exact coordinate match.
pub fn parse_stl(bytes: &[u8]) -> Result<Mesh> {
    if bytes.len() < 84 {
        return Err(Error::MeshParse("STL shorter than its 84-byte header".into()));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let expected = 84 + count * 50;
    if bytes.len() < expected {
        return Err(Error::MeshParse(format!(
            "STL declares {count} triangles ({expected} bytes) but has {} bytes",
            bytes.len()
        )));
    }
    let mut lookup: HashMap<[u32; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(count);
    for record in bytes[84..expected].chunks_exact(50) {
        let mut tri = [0u32; 3];
        // bytes 0..12 hold the stored normal, which is recomputed from winding
        for (corner, slot) in tri.iter_mut().enumerate() {
            let base = 12 + corner * 12;
            let bits: [u32; 3] = std::array::from_fn(|axis| {
                u32::from_le_bytes(record[base + axis * 4..base + axis * 4 + 4].try_into().unwrap())
            });
            *slot = *lookup.entry(bits).or_insert_with(|| {
                vertices.push(Point3::from(bits.map(|b| f32::from_bits(b) as f64)));
                (vertices.len() - 1) as u32
            });
        }
        triangles.push(tri);
    }
    Mesh::new(vertices, triangles)
}

/// Serializes a mesh as binary STL.
pub fn write_stl(mesh: &Mesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out.extend_from_slice(&(mesh.triangle_count() as u32).to_le_bytes());
    for (tri, n) in mesh.triangles().iter().zip(mesh.face_normals()) {
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for &i in tri {
            for c in mesh.vertices()[i as usize].iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

/// Serializes a mesh as ASCII OBJ.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in mesh.triangles() {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    out
}

/// Built-in watertight shapes used as stand-ins for CAD parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Cube,
    Icosphere,
    Cone,
}

impl std::str::FromStr for PrimitiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(Self::Cube),
            "icosphere" => Ok(Self::Icosphere),
            "cone" => Ok(Self::Cone),
            other => Err(Error::UnsupportedFormat(format!("unknown primitive {other:?}"))),
        }
    }
}

/// Generates a closed primitive centered at the origin with largest extent 1.
///
/// `detail` is the subdivision count for the icosphere and doubles the
/// segment count of the cone (16 segments at detail 0). The cube ignores it.
pub fn generate_primitive(kind: PrimitiveKind, detail: u32) -> Mesh {
    let (vertices, triangles) = match kind {
        PrimitiveKind::Cube => cube(),
        PrimitiveKind::Icosphere => icosphere(detail),
        PrimitiveKind::Cone => cone(16usize << detail.min(12)),
    };
    Mesh::new(vertices, triangles)
        .expect("primitive construction yields valid indices")
        .normalized(1.0)
}

fn cube() -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let vertices = (0..8)
        .map(|i| {
            let bit = |b: u32| if i & (1 << b) != 0 { 0.5 } else { -0.5 };
            Point3::new(bit(0), bit(1), bit(2))
        })
        .collect();
    // vertex i has x = bit0, y = bit1, z = bit2; faces wound outward
    let triangles = vec![
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
    ];
    (vertices, triangles)
}

fn icosphere(detail: u32) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        (-1.0, phi, 0.0), (1.0, phi, 0.0), (-1.0, -phi, 0.0), (1.0, -phi, 0.0),
        (0.0, -1.0, phi), (0.0, 1.0, phi), (0.0, -1.0, -phi), (0.0, 1.0, -phi),
        (phi, 0.0, -1.0), (phi, 0.0, 1.0), (-phi, 0.0, -1.0), (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::from(Vector3::new(x, y, z).normalize()))
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..detail {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Point3<f64>>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (vertices[a as usize].coords + vertices[b as usize].coords).normalize();
                vertices.push(Point3::from(m));
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    (vertices, triangles)
}

fn cone(segments: usize) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let mut vertices = vec![Point3::new(0.0, 0.5, 0.0), Point3::new(0.0, -0.5, 0.0)];
    for s in 0..segments {
        let angle = std::f64::consts::TAU * s as f64 / segments as f64;
        vertices.push(Point3::new(0.5 * angle.cos(), -0.5, -0.5 * angle.sin()));
    }
    let ring = |s: usize| (2 + s % segments) as u32;
    let mut triangles = Vec::with_capacity(2 * segments);
    for s in 0..segments {
        triangles.push([0, ring(s), ring(s + 1)]);
        triangles.push([1, ring(s + 1), ring(s)]);
    }
    (vertices, triangles)
}
