//! Triangle meshes, OBJ IO, area-weighted surface sampling, similarity
//! Procrustes alignment and symmetric Chamfer distance.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some((fi, f)) = self.faces.iter().enumerate().find(|(_, f)| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidMesh(format!(
                "face {fi} references {:?} but mesh has {n} vertices",
                f
            )));
        }
        if let Some(vi) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {vi} is not finite")));
        }
        Ok(())
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn translated(&self, t: &Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + t).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| rotation * v + translation).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Appends `other`, offsetting its face indices.
    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len().max(1) as f64;
        self.vertices.iter().sum::<Vec3>() / n
    }

    pub fn to_obj_string(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.faces.len() * 20);
        for v in &self.vertices {
            let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj_string())?;
        Ok(())
    }
}

/// Parses an ASCII OBJ; polygons are fan-triangulated, normals and texture
/// coordinates are ignored. Negative (relative) indices are supported.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| err(line, format!("bad coordinate {t:?}: {e}")))
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err(line, "vertex needs 3 coordinates".into()));
                }
                if !coords.iter().all(|c| c.is_finite()) {
                    return Err(err(line, "non-finite coordinate".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|e| err(line, format!("bad face index {t:?}: {e}")))?;
                        let resolved = if i > 0 {
                            i - 1
                        } else if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            -1
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(err(
                                line,
                                format!("face index {i} out of range ({} vertices so far)", vertices.len()),
                            ));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(line, "face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text, path)
}

/// A fixed location on a mesh surface, valid under any deformation that
/// keeps the topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub face_index: usize,
    pub barycentric: [f64; 3],
}

impl SurfacePoint {
    pub fn new(face_index: usize, barycentric: [f64; 3]) -> Result<Self> {
        let sum: f64 = barycentric.iter().sum();
        if barycentric.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() >= 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "barycentric weights {barycentric:?} must be nonnegative and sum to 1"
            )));
        }
        Ok(Self {
            face_index,
            barycentric,
        })
    }
}

/// Area-weighted surface sampling. Faces are picked by inverting the
/// cumulative area, interior points use the square-root parameterization.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<SurfacePoint>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero total surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random::<f64>() * total;
        let mut face = cumulative.partition_point(|&c| c <= u);
        face = face.min(mesh.faces.len() - 1);
        // Skip zero-area faces that share a cumulative value with their successor.
        while mesh.face_area(face) == 0.0 && face + 1 < mesh.faces.len() {
            face += 1;
        }
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let a = 1.0 - s;
        let b = s * (1.0 - r2);
        let c = 1.0 - a - b;
        out.push(SurfacePoint {
            face_index: face,
            barycentric: [a, b, c.max(0.0)],
        });
    }
    Ok(out)
}

pub fn locate(mesh: &Mesh, sp: &SurfacePoint) -> Result<Vec3> {
    let face = mesh.faces.get(sp.face_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "face index {} out of range ({} faces)",
            sp.face_index,
            mesh.faces.len()
        ))
    })?;
    let [wa, wb, wc] = sp.barycentric;
    Ok(mesh.vertices[face[0]] * wa + mesh.vertices[face[1]] * wb + mesh.vertices[face[2]] * wc)
}

pub fn locate_all(mesh: &Mesh, sps: &[SurfacePoint]) -> Result<Vec<Vec3>> {
    sps.iter().map(|sp| locate(mesh, sp)).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("point cloud contains non-finite points".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len().max(1) as f64
    }

    pub fn transformed(&self, s: &Similarity) -> Self {
        Self {
            points: self.points.iter().map(|p| s.apply(p)).collect(),
        }
    }

    pub fn from_mesh_samples(mesh: &Mesh, count: usize, seed: u64) -> Result<Self> {
        let sps = sample_surface(mesh, count, seed)?;
        Self::new(locate_all(mesh, &sps)?)
    }
}

/// `p -> scale * rotation * p + translation`
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn residual(&self, source: &PointCloud, target: &PointCloud) -> f64 {
        source
            .points
            .iter()
            .zip(&target.points)
            .map(|(p, q)| (self.apply(p) - q).norm_squared())
            .sum()
    }
}

/// Least-squares similarity transform (Umeyama) mapping `source` onto `target`.
pub fn procrustes_align(source: &PointCloud, target: &PointCloud) -> Result<Similarity> {
    let n = source.len();
    if n != target.len() {
        return Err(Error::Dimension {
            what: "procrustes point counts",
            expected: n,
            got: target.len(),
        });
    }
    if n < 3 {
        return Err(Error::Degenerate(format!("procrustes needs >= 3 points, got {n}")));
    }
    let mu_p = source.centroid();
    let mu_q = target.centroid();
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, q) in source.points.iter().zip(&target.points) {
        let dp = p - mu_p;
        let dq = q - mu_q;
        cov += dq * dp.transpose();
        scatter += dp * dp.transpose();
        var_p += dp.norm_squared();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let sigma = svd.singular_values;
    let trace = sigma[0] * d[(0, 0)] + sigma[1] * d[(1, 1)] + sigma[2] * d[(2, 2)];
    let scale = trace / var_p;
    let translation = mu_q - rotation * mu_p * scale;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric mean nearest-neighbor distance,
/// `0.5 * mean_a min_b |a-b| + 0.5 * mean_b min_a |a-b|`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("chamfer distance of an empty cloud".into()));
    }
    Ok(0.5 * mean_nearest(&a.points, &b.points) + 0.5 * mean_nearest(&b.points, &a.points))
}

/// Unit-edge axis-aligned cube centered at the origin with 12 triangles.
pub fn unit_cube() -> Mesh {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        vertices.push(Vec3::new(
            if i & 1 == 0 { -0.5 } else { 0.5 },
            if i & 2 == 0 { -0.5 } else { 0.5 },
            if i & 4 == 0 { -0.5 } else { 0.5 },
        ));
    }
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh { vertices, faces }
}
