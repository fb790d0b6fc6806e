//! Dense human-object offset encoding and the per-category PCA latent
//! relation space.

use nalgebra::{DMatrix, DVector};

use crate::geom::{locate, Mesh, SurfacePoint, Vec3};
use crate::io::{content_hash, BinReader, BinWriter};
use crate::{Error, Result};

const ANCHOR_MAGIC: &[u8; 4] = b"HOAC";
const SPACE_MAGIC: &[u8; 4] = b"HOLS";
const OFFSET_MAGIC: &[u8; 4] = b"HOOV";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAnchors {
    pub category: u32,
    pub template_faces: usize,
    pub anchors: Vec<SurfacePoint>,
}

/// Fixed anchor sets: `m` on the body template, `n` per object category.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub body_template_faces: usize,
    pub human_anchors: Vec<SurfacePoint>,
    pub objects: Vec<ObjectAnchors>,
}

impl AnchorConfig {
    pub fn new(
        seed: u64,
        body_template_faces: usize,
        human_anchors: Vec<SurfacePoint>,
        objects: Vec<ObjectAnchors>,
    ) -> Result<Self> {
        let m = human_anchors.len();
        let n = objects.first().map_or(0, |o| o.anchors.len());
        if m * n == 0 {
            return Err(Error::InvalidArgument("anchor config needs m, n >= 1".into()));
        }
        if objects.iter().any(|o| o.anchors.len() != n) {
            return Err(Error::InvalidArgument(
                "every category needs the same anchor count".into(),
            ));
        }
        let cfg = Self {
            seed,
            m,
            n,
            body_template_faces,
            human_anchors,
            objects,
        };
        for sp in cfg.human_anchors.iter() {
            if sp.face_index >= body_template_faces {
                return Err(Error::InvalidArgument("human anchor face out of range".into()));
            }
        }
        for o in &cfg.objects {
            if o.anchors.iter().any(|sp| sp.face_index >= o.template_faces) {
                return Err(Error::InvalidArgument(format!(
                    "object anchor face out of range for category {}",
                    o.category
                )));
            }
        }
        Ok(cfg)
    }

    pub fn object(&self, category: u32) -> Result<&ObjectAnchors> {
        self.objects
            .iter()
            .find(|o| o.category == category)
            .ok_or_else(|| Error::InvalidArgument(format!("no anchors for category {category}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new();
        w.magic(ANCHOR_MAGIC).u16(VERSION).u64(self.seed);
        write_surface_points(&mut w, self.body_template_faces, &self.human_anchors);
        w.u32(self.objects.len() as u32);
        for o in &self.objects {
            w.u32(o.category);
            write_surface_points(&mut w, o.template_faces, &o.anchors);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(ANCHOR_MAGIC)?;
        r.version(VERSION)?;
        let seed = r.u64()?;
        let (body_faces, human) = read_surface_points(&mut r)?;
        let count = r.u32()? as usize;
        let mut objects = Vec::with_capacity(count);
        for _ in 0..count {
            let category = r.u32()?;
            let (template_faces, anchors) = read_surface_points(&mut r)?;
            objects.push(ObjectAnchors {
                category,
                template_faces,
                anchors,
            });
        }
        r.finish()?;
        Self::new(seed, body_faces, human, objects)
    }

    pub fn hash(&self) -> u64 {
        content_hash(&self.to_bytes())
    }
}

fn write_surface_points(w: &mut BinWriter, faces: usize, sps: &[SurfacePoint]) {
    w.u64(faces as u64).u64(sps.len() as u64);
    for sp in sps {
        w.u64(sp.face_index as u64);
        for b in sp.barycentric {
            w.f64(b);
        }
    }
}

fn read_surface_points(r: &mut BinReader) -> Result<(usize, Vec<SurfacePoint>)> {
    let faces = r.usize()?;
    let n = r.usize()?;
    let sps = (0..n)
        .map(|_| {
            let face = r.usize()?;
            let bary = [r.f64()?, r.f64()?, r.f64()?];
            SurfacePoint::new(face, bary)
        })
        .collect::<Result<_>>()?;
    Ok((faces, sps))
}

/// Flattened offsets; pair `(i, j)` occupies `3 * (i * n + j)..+3`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetVector {
    pub data: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub anchor_hash: u64,
}

impl OffsetVector {
    pub fn new(data: Vec<f64>, m: usize, n: usize, anchor_hash: u64) -> Result<Self> {
        if data.len() != 3 * m * n {
            return Err(Error::Dimension {
                what: "offset vector",
                expected: 3 * m * n,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("offset vector".into()));
        }
        Ok(Self {
            data,
            m,
            n,
            anchor_hash,
        })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn offset(&self, i: usize, j: usize) -> Vec3 {
        let k = 3 * (i * self.n + j);
        Vec3::new(self.data[k], self.data[k + 1], self.data[k + 2])
    }

    /// Builds the vector `d_ij = object[j] - human[i]`.
    pub fn from_anchor_positions(human: &[Vec3], object: &[Vec3], anchor_hash: u64) -> Self {
        let (m, n) = (human.len(), object.len());
        let mut data = Vec::with_capacity(3 * m * n);
        for h in human {
            for o in object {
                let d = o - h;
                data.extend_from_slice(&[d.x, d.y, d.z]);
            }
        }
        Self {
            data,
            m,
            n,
            anchor_hash,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new();
        w.magic(OFFSET_MAGIC)
            .u16(VERSION)
            .u32(self.m as u32)
            .u32(self.n as u32)
            .u64(self.anchor_hash);
        for &v in &self.data {
            w.f64(v);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(OFFSET_MAGIC)?;
        r.version(VERSION)?;
        let m = r.u32()? as usize;
        let n = r.u32()? as usize;
        let hash = r.u64()?;
        let data = (0..3 * m * n).map(|_| r.f64()).collect::<Result<_>>()?;
        r.finish()?;
        Self::new(data, m, n, hash)
    }
}

/// `d_ij = p_j^o - p_i^h` between the config's anchors on the posed meshes.
pub fn compute_offsets(
    human_mesh: &Mesh,
    object_mesh_posed: &Mesh,
    config: &AnchorConfig,
    category: u32,
) -> Result<OffsetVector> {
    let obj = config.object(category)?;
    if human_mesh.faces.len() != config.body_template_faces {
        return Err(Error::InvalidArgument(format!(
            "human mesh has {} faces, anchors were sampled on {}",
            human_mesh.faces.len(),
            config.body_template_faces
        )));
    }
    if object_mesh_posed.faces.len() != obj.template_faces {
        return Err(Error::InvalidArgument(format!(
            "object mesh has {} faces, anchors were sampled on {}",
            object_mesh_posed.faces.len(),
            obj.template_faces
        )));
    }
    let human = config
        .human_anchors
        .iter()
        .map(|sp| locate(human_mesh, sp))
        .collect::<Result<Vec<_>>>()?;
    let object = obj
        .anchors
        .iter()
        .map(|sp| locate(object_mesh_posed, sp))
        .collect::<Result<Vec<_>>>()?;
    Ok(OffsetVector::from_anchor_positions(&human, &object, config.hash()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub gamma: Vec<f64>,
    pub category: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRelationSpace {
    pub category: u32,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub anchor_hash: u64,
    pub mean: DVector<f64>,
    /// 3mn x k, orthonormal columns sorted by decreasing singular value.
    pub basis: DMatrix<f64>,
}

/// Singular values of the centered data and the variance fraction per component.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaSpectrum {
    pub singular_values: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub rank: usize,
}

impl PcaSpectrum {
    pub fn cumulative(&self, k: usize) -> f64 {
        self.explained_variance_ratio.iter().take(k).sum()
    }
}

pub fn build_latent_space(offsets: &[OffsetVector], k: usize, category: u32) -> Result<LatentRelationSpace> {
    build_latent_space_with_spectrum(offsets, k, category).map(|(s, _)| s)
}

pub fn build_latent_space_with_spectrum(
    offsets: &[OffsetVector],
    k: usize,
    category: u32,
) -> Result<(LatentRelationSpace, PcaSpectrum)> {
    let t = offsets.len();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "latent space needs at least 2 instances, got {t}"
        )));
    }
    let first = &offsets[0];
    let (m, n, hash) = (first.m, first.n, first.anchor_hash);
    let d = first.dim();
    if let Some(bad) = offsets.iter().find(|o| o.m != m || o.n != n || o.anchor_hash != hash) {
        return Err(Error::InvalidArgument(format!(
            "offset vectors disagree on anchors: ({m}, {n}, {hash:016x}) vs ({}, {}, {:016x})",
            bad.m, bad.n, bad.anchor_hash
        )));
    }
    if k == 0 || k > (t - 1).min(d) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={} for {t} instances of dimension {d}",
            (t - 1).min(d)
        )));
    }

    let mut mean = DVector::zeros(d);
    for o in offsets {
        for (acc, v) in mean.iter_mut().zip(&o.data) {
            *acc += v;
        }
    }
    mean /= t as f64;
    let mut centered = DMatrix::zeros(t, d);
    let mut scale = 0.0f64;
    for (r, o) in offsets.iter().enumerate() {
        for c in 0..d {
            centered[(r, c)] = o.data[c] - mean[c];
            scale = scale.max(o.data[c].abs());
        }
    }

    let (singular, right) = thin_right_singular(&centered);
    let tol = (t.max(d) as f64) * f64::EPSILON * scale.max(f64::MIN_POSITIVE) * (t as f64).sqrt();
    let rank = singular.iter().filter(|&&s| s > tol).count();
    if k > rank {
        return Err(Error::Degenerate(format!(
            "requested k = {k} but the centered data has numerical rank {rank}"
        )));
    }

    let mut basis = DMatrix::zeros(d, k);
    for c in 0..k {
        let mut col = right.column(c).into_owned();
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col = -col;
        }
        basis.set_column(c, &col);
    }

    let total: f64 = singular.iter().map(|s| s * s).sum();
    let ratio = singular
        .iter()
        .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
        .collect();
    Ok((
        LatentRelationSpace {
            category,
            m,
            n,
            k,
            anchor_hash: hash,
            mean,
            basis,
        },
        PcaSpectrum {
            singular_values: singular,
            explained_variance_ratio: ratio,
            rank,
        },
    ))
}

/// Singular values (descending) and matching right singular vectors as
/// columns of a d x min(t, d) matrix.
fn thin_right_singular(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (t, d) = x.shape();
    let r = t.min(d);
    let (values, vectors) = if t <= d {
        // Work on x^T (d x t) so the decomposition runs over the short side.
        let svd = x.transpose().svd(true, false);
        (svd.singular_values, svd.u.unwrap())
    } else {
        let svd = x.clone().svd(false, true);
        (svd.singular_values, svd.v_t.unwrap().transpose())
    };
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut out = DMatrix::zeros(d, r);
    for (dst, &src) in order.iter().enumerate() {
        out.set_column(dst, &vectors.column(src));
    }
    (order.iter().map(|&i| values[i]).collect(), out)
}

impl LatentRelationSpace {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_offsets(&self, x: &OffsetVector) -> Result<()> {
        if x.m != self.m || x.n != self.n {
            return Err(Error::Dimension {
                what: "offset vector for latent space",
                expected: 3 * self.m * self.n,
                got: x.dim(),
            });
        }
        if x.anchor_hash != self.anchor_hash {
            return Err(Error::HashMismatch {
                what: "anchor config",
                expected: self.anchor_hash,
                got: x.anchor_hash,
            });
        }
        Ok(())
    }

    /// `gamma = V^T (x - mu)`
    pub fn project(&self, x: &OffsetVector) -> Result<LatentCode> {
        self.check_offsets(x)?;
        let diff = DVector::from_column_slice(&x.data) - &self.mean;
        let gamma = self.basis.tr_mul(&diff);
        Ok(LatentCode {
            gamma: gamma.iter().copied().collect(),
            category: self.category,
        })
    }

    /// `x_hat = V gamma + mu`
    pub fn reproject(&self, code: &LatentCode) -> Result<OffsetVector> {
        if code.category != self.category {
            return Err(Error::InvalidArgument(format!(
                "latent code of category {} used with space {}",
                code.category, self.category
            )));
        }
        self.reproject_slice(&code.gamma)
    }

    pub fn reproject_slice(&self, gamma: &[f64]) -> Result<OffsetVector> {
        if gamma.len() != self.k {
            return Err(Error::Dimension {
                what: "latent code",
                expected: self.k,
                got: gamma.len(),
            });
        }
        let x = &self.basis * DVector::from_column_slice(gamma) + &self.mean;
        OffsetVector::new(x.iter().copied().collect(), self.m, self.n, self.anchor_hash)
    }

    /// `V^T g`, the pullback of an offset-space gradient to latent space.
    pub fn pullback(&self, grad_x: &[f64]) -> Vec<f64> {
        self.basis
            .tr_mul(&DVector::from_column_slice(grad_x))
            .iter()
            .copied()
            .collect()
    }

    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} components to {k}",
                self.k
            )));
        }
        Ok(Self {
            k,
            basis: self.basis.columns(0, k).into_owned(),
            ..self.clone()
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new();
        w.magic(SPACE_MAGIC)
            .u16(VERSION)
            .u32(self.category)
            .u32(self.m as u32)
            .u32(self.n as u32)
            .u32(self.k as u32)
            .u64(self.anchor_hash);
        for &v in self.mean.iter() {
            w.f64(v);
        }
        // nalgebra storage is column-major.
        for &v in self.basis.as_slice() {
            w.f64(v);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(SPACE_MAGIC)?;
        r.version(VERSION)?;
        let category = r.u32()?;
        let m = r.u32()? as usize;
        let n = r.u32()? as usize;
        let k = r.u32()? as usize;
        let anchor_hash = r.u64()?;
        let d = 3 * m * n;
        let mean = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let basis = (0..d * k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            category,
            m,
            n,
            k,
            anchor_hash,
            mean: DVector::from_vec(mean),
            basis: DMatrix::from_vec(d, k, basis),
        })
    }

    pub fn hash(&self) -> u64 {
        content_hash(&self.to_bytes())
    }
}
