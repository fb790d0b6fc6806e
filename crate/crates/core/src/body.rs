//! Toy articulated body: a topologically sorted kinematic tree whose bones
//! each carry a rigid capsule. Pose is per-joint axis-angle, shape is a
//! linear map onto per-bone length scales.
//!
//! Conventions: y is up, the root joint sits at the origin with identity
//! orientation (its pose entry is ignored), and a vertex bound to joint `b`
//! follows `v = v_rest + (P_b - P_b^rest) + (sigma_b A_b - I) u` with `u`
//! its rest offset from the joint.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{Mesh, SurfacePoint, Vec3};
use crate::io::{content_hash, BinReader, BinWriter};
use crate::rotation::exp_so3;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"HOBM";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub parent: Vec<Option<usize>>,
    /// Bone vector from the parent joint, in the parent frame (rest pose).
    pub offsets: Vec<Vec3>,
    pub names: Vec<String>,
}

impl Skeleton {
    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.parent.len();
        if self.offsets.len() != j || self.names.len() != j {
            return Err(Error::InvalidArgument("skeleton arrays disagree in length".into()));
        }
        let roots = self.parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 || self.parent[0].is_some() {
            return Err(Error::InvalidArgument(
                "skeleton needs exactly one root at index 0".into(),
            ));
        }
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                if *p >= i {
                    return Err(Error::InvalidArgument(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rest-pose joint positions (cumulative offsets).
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::with_capacity(self.parent.len());
        for (j, p) in self.parent.iter().enumerate() {
            out.push(match p {
                None => Vec3::zeros(),
                Some(p) => out[*p] + self.offsets[j],
            });
        }
        out
    }

    pub fn children(&self, j: usize) -> Vec<usize> {
        (0..self.parent.len()).filter(|&c| self.parent[c] == Some(j)).collect()
    }

    /// True when `j` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn in_subtree(&self, j: usize, ancestor: usize) -> bool {
        let mut cur = Some(j);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.parent[c];
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    pub theta: Vec<Vec3>,
    pub beta: Vec<f64>,
}

impl BodyParams {
    pub fn zeros(joints: usize, shape_dims: usize) -> Self {
        Self {
            theta: vec![Vec3::zeros(); joints],
            beta: vec![0.0; shape_dims],
        }
    }

    /// Flattened `(theta, beta)` in Jacobian column order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.theta.iter().flat_map(|t| [t.x, t.y, t.z]).collect();
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn from_flat(flat: &[f64], joints: usize, shape_dims: usize) -> Result<Self> {
        if flat.len() != 3 * joints + shape_dims {
            return Err(Error::Dimension {
                what: "flat body params",
                expected: 3 * joints + shape_dims,
                got: flat.len(),
            });
        }
        Ok(Self {
            theta: (0..joints)
                .map(|j| Vec3::new(flat[3 * j], flat[3 * j + 1], flat[3 * j + 2]))
                .collect(),
            beta: flat[3 * joints..].to_vec(),
        })
    }

    /// Wraps every joint rotation angle into [0, pi].
    pub fn canonicalized(&self) -> Self {
        Self {
            theta: self
                .theta
                .iter()
                .map(crate::rotation::canonicalize_axis_angle)
                .collect(),
            beta: self.beta.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.iter().all(|c| c.is_finite())) && self.beta.iter().all(|b| b.is_finite())
    }
}

/// Posed state of the tree: global joint frames and bone scales.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Matrix3<f64>>,
    /// Per-joint offset scale `1 + S beta`.
    pub scales: Vec<f64>,
}

/// A point expressed as a weighted sum of mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStencil {
    pub terms: Vec<[(usize, f64); 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub skeleton: Skeleton,
    pub template_mesh: Mesh,
    pub vertex_binding: Vec<usize>,
    /// J x B map from beta to per-bone length scale increments.
    pub shape_basis: DMatrix<f64>,
    /// Joint whose scale governs each joint's capsule (first child, or itself for leaves).
    pub segment_scale_joint: Vec<usize>,
    rest_joints: Vec<Vec3>,
    rest_local: Vec<Vec3>,
}

/// Gradient of a scalar w.r.t. per-joint local rotation matrices and beta.
#[derive(Debug, Clone)]
pub struct BodyGrad {
    pub rotations: Vec<Matrix3<f64>>,
    pub beta: Vec<f64>,
}

struct JointSpec {
    name: &'static str,
    parent: Option<usize>,
    offset: [f64; 3],
    radius: f64,
    /// Capsule extent for leaves (non-leaves extend to their first child).
    leaf_extent: [f64; 3],
}

const DEFAULT_JOINTS: [JointSpec; 16] = [
    JointSpec {
        name: "spine_lower",
        parent: None,
        offset: [0.0, 0.0, 0.0],
        radius: 0.13,
        leaf_extent: [0.0, 0.1, 0.0],
    },
    JointSpec {
        name: "spine_mid",
        parent: Some(0),
        offset: [0.0, 0.15, 0.0],
        radius: 0.12,
        leaf_extent: [0.0, 0.1, 0.0],
    },
    JointSpec {
        name: "spine_upper",
        parent: Some(1),
        offset: [0.0, 0.17, 0.0],
        radius: 0.13,
        leaf_extent: [0.0, 0.1, 0.0],
    },
    JointSpec {
        name: "head",
        parent: Some(2),
        offset: [0.0, 0.24, 0.0],
        radius: 0.1,
        leaf_extent: [0.0, 0.14, 0.02],
    },
    JointSpec {
        name: "l_shoulder",
        parent: Some(2),
        offset: [0.18, 0.12, 0.0],
        radius: 0.05,
        leaf_extent: [0.1, 0.0, 0.0],
    },
    JointSpec {
        name: "l_elbow",
        parent: Some(4),
        offset: [0.28, 0.0, 0.0],
        radius: 0.042,
        leaf_extent: [0.1, 0.0, 0.0],
    },
    JointSpec {
        name: "l_wrist",
        parent: Some(5),
        offset: [0.25, 0.0, 0.0],
        radius: 0.035,
        leaf_extent: [0.12, 0.0, 0.0],
    },
    JointSpec {
        name: "r_shoulder",
        parent: Some(2),
        offset: [-0.18, 0.12, 0.0],
        radius: 0.05,
        leaf_extent: [-0.1, 0.0, 0.0],
    },
    JointSpec {
        name: "r_elbow",
        parent: Some(7),
        offset: [-0.28, 0.0, 0.0],
        radius: 0.042,
        leaf_extent: [-0.1, 0.0, 0.0],
    },
    JointSpec {
        name: "r_wrist",
        parent: Some(8),
        offset: [-0.25, 0.0, 0.0],
        radius: 0.035,
        leaf_extent: [-0.12, 0.0, 0.0],
    },
    JointSpec {
        name: "l_hip",
        parent: Some(0),
        offset: [0.1, -0.08, 0.0],
        radius: 0.075,
        leaf_extent: [0.0, -0.1, 0.0],
    },
    JointSpec {
        name: "l_knee",
        parent: Some(10),
        offset: [0.0, -0.42, 0.0],
        radius: 0.055,
        leaf_extent: [0.0, -0.1, 0.0],
    },
    JointSpec {
        name: "l_ankle",
        parent: Some(11),
        offset: [0.0, -0.4, 0.0],
        radius: 0.04,
        leaf_extent: [0.0, -0.04, 0.14],
    },
    JointSpec {
        name: "r_hip",
        parent: Some(0),
        offset: [-0.1, -0.08, 0.0],
        radius: 0.075,
        leaf_extent: [0.0, -0.1, 0.0],
    },
    JointSpec {
        name: "r_knee",
        parent: Some(13),
        offset: [0.0, -0.42, 0.0],
        radius: 0.055,
        leaf_extent: [0.0, -0.1, 0.0],
    },
    JointSpec {
        name: "r_ankle",
        parent: Some(14),
        offset: [0.0, -0.4, 0.0],
        radius: 0.04,
        leaf_extent: [0.0, -0.04, 0.14],
    },
];

/// Uniform-scale coefficient of the first shape component.
pub const HEIGHT_SCALE_PER_BETA: f64 = 0.1;

/// Capsule with hemispherical caps from `0` to `extent`, in local coordinates.
fn capsule(extent: Vec3, radius: f64, around: usize, cap_rings: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let length = extent.norm();
    let axis = if length > 1e-12 { extent / length } else { Vec3::y() };
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);

    // (height along axis, ring radius), poles excluded.
    let mut profile = Vec::new();
    for i in 1..=cap_rings {
        let a = i as f64 / cap_rings as f64 * PI / 2.0;
        profile.push((-radius * a.cos(), radius * a.sin()));
    }
    for i in 0..cap_rings {
        let a = i as f64 / cap_rings as f64 * PI / 2.0;
        profile.push((length + radius * a.sin(), radius * a.cos()));
    }

    let mut verts = vec![-axis * radius];
    for &(h, r) in &profile {
        for k in 0..around {
            let phi = 2.0 * PI * k as f64 / around as f64;
            verts.push(axis * h + (e1 * phi.cos() + e2 * phi.sin()) * r);
        }
    }
    verts.push(axis * (length + radius));
    let top = verts.len() - 1;

    let ring = |r: usize, k: usize| 1 + r * around + (k % around);
    let mut faces = Vec::new();
    for k in 0..around {
        faces.push([0, ring(0, k + 1), ring(0, k)]);
    }
    for r in 0..profile.len() - 1 {
        for k in 0..around {
            let (a, b, c, d) = (ring(r, k), ring(r, k + 1), ring(r + 1, k + 1), ring(r + 1, k));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let last = profile.len() - 1;
    for k in 0..around {
        faces.push([top, ring(last, k), ring(last, k + 1)]);
    }
    (verts, faces)
}

impl BodyModel {
    pub fn from_parts(
        skeleton: Skeleton,
        template_mesh: Mesh,
        vertex_binding: Vec<usize>,
        shape_basis: DMatrix<f64>,
    ) -> Result<Self> {
        skeleton.validate()?;
        template_mesh.validate()?;
        let j = skeleton.joint_count();
        if vertex_binding.len() != template_mesh.vertices.len() {
            return Err(Error::Dimension {
                what: "vertex binding",
                expected: template_mesh.vertices.len(),
                got: vertex_binding.len(),
            });
        }
        if let Some(b) = vertex_binding.iter().find(|&&b| b >= j) {
            return Err(Error::InvalidArgument(format!("vertex bound to missing bone {b}")));
        }
        if shape_basis.nrows() != j {
            return Err(Error::Dimension {
                what: "shape basis rows",
                expected: j,
                got: shape_basis.nrows(),
            });
        }
        let segment_scale_joint = (0..j)
            .map(|i| skeleton.children(i).first().copied().unwrap_or(i))
            .collect();
        let rest_joints = skeleton.rest_positions();
        let rest_local = template_mesh
            .vertices
            .iter()
            .zip(&vertex_binding)
            .map(|(v, &b)| v - rest_joints[b])
            .collect();
        Ok(Self {
            skeleton,
            template_mesh,
            vertex_binding,
            shape_basis,
            segment_scale_joint,
            rest_joints,
            rest_local,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn shape_dims(&self) -> usize {
        self.shape_basis.ncols()
    }

    pub fn param_count(&self) -> usize {
        3 * self.joint_count() + self.shape_dims()
    }

    pub fn zero_params(&self) -> BodyParams {
        BodyParams::zeros(self.joint_count(), self.shape_dims())
    }

    pub fn rest_joints(&self) -> &[Vec3] {
        &self.rest_joints
    }

    /// Rest-pose vertical extent of the template mesh.
    pub fn rest_height(&self) -> f64 {
        mesh_height(&self.template_mesh)
    }

    fn check(&self, params: &BodyParams) -> Result<()> {
        if params.theta.len() != self.joint_count() {
            return Err(Error::Dimension {
                what: "pose joints",
                expected: self.joint_count(),
                got: params.theta.len(),
            });
        }
        if params.beta.len() != self.shape_dims() {
            return Err(Error::Dimension {
                what: "shape coefficients",
                expected: self.shape_dims(),
                got: params.beta.len(),
            });
        }
        Ok(())
    }

    pub fn scales(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.joint_count())
            .map(|j| {
                1.0 + (0..self.shape_dims())
                    .map(|b| self.shape_basis[(j, b)] * beta[b])
                    .sum::<f64>()
            })
            .collect()
    }

    /// Forward kinematics from local joint rotations (root entry ignored).
    pub fn kinematics_from_rotations(&self, local: &[Matrix3<f64>], beta: &[f64]) -> Kinematics {
        let j = self.joint_count();
        let scales = self.scales(beta);
        let mut positions = Vec::with_capacity(j);
        let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(j);
        for i in 0..j {
            match self.skeleton.parent[i] {
                None => {
                    positions.push(Vec3::zeros());
                    rotations.push(Matrix3::identity());
                }
                Some(p) => {
                    let pos = positions[p] + rotations[p] * (self.skeleton.offsets[i] * scales[i]);
                    let rot = rotations[p] * local[i];
                    positions.push(pos);
                    rotations.push(rot);
                }
            }
        }
        Kinematics {
            positions,
            rotations,
            scales,
        }
    }

    pub fn kinematics(&self, params: &BodyParams) -> Result<Kinematics> {
        self.check(params)?;
        let local: Vec<Matrix3<f64>> = params.theta.iter().map(exp_so3).collect();
        Ok(self.kinematics_from_rotations(&local, &params.beta))
    }

    pub fn vertex(&self, kin: &Kinematics, v: usize) -> Vec3 {
        let b = self.vertex_binding[v];
        let sigma = kin.scales[self.segment_scale_joint[b]];
        let u = self.rest_local[v];
        self.template_mesh.vertices[v] + (kin.positions[b] - self.rest_joints[b]) + (kin.rotations[b] * u * sigma - u)
    }

    pub fn posed_mesh(&self, kin: &Kinematics) -> Mesh {
        Mesh {
            vertices: (0..self.template_mesh.vertices.len())
                .map(|v| self.vertex(kin, v))
                .collect(),
            faces: self.template_mesh.faces.clone(),
        }
    }

    pub fn forward(&self, params: &BodyParams) -> Result<Mesh> {
        Ok(self.posed_mesh(&self.kinematics(params)?))
    }

    pub fn joints_3d(&self, params: &BodyParams) -> Result<Vec<Vec3>> {
        Ok(self.kinematics(params)?.positions)
    }

    pub fn stencil(&self, selectors: &[SurfacePoint]) -> Result<PointStencil> {
        let faces = &self.template_mesh.faces;
        let terms = selectors
            .iter()
            .map(|sp| {
                let f = faces.get(sp.face_index).ok_or_else(|| {
                    Error::InvalidArgument(format!("surface point face {} out of range", sp.face_index))
                })?;
                Ok([
                    (f[0], sp.barycentric[0]),
                    (f[1], sp.barycentric[1]),
                    (f[2], sp.barycentric[2]),
                ])
            })
            .collect::<Result<_>>()?;
        Ok(PointStencil { terms })
    }

    pub fn stencil_points(&self, kin: &Kinematics, stencil: &PointStencil) -> Vec<Vec3> {
        stencil
            .terms
            .iter()
            .map(|t| t.iter().map(|&(v, w)| self.vertex(kin, v) * w).sum())
            .collect()
    }

    pub fn surface_points(&self, params: &BodyParams, selectors: &[SurfacePoint]) -> Result<Vec<Vec3>> {
        let kin = self.kinematics(params)?;
        Ok(self.stencil_points(&kin, &self.stencil(selectors)?))
    }

    /// Central-difference Jacobian (h = 1e-5) of the selected surface points,
    /// rows `3 * point + axis`, columns `(theta flat, beta)`.
    pub fn jacobian(&self, params: &BodyParams, selectors: &[SurfacePoint]) -> Result<DMatrix<f64>> {
        self.check(params)?;
        let stencil = self.stencil(selectors)?;
        self.jacobian_stencil(params, &stencil, 1e-5)
    }

    pub fn jacobian_stencil(&self, params: &BodyParams, stencil: &PointStencil, h: f64) -> Result<DMatrix<f64>> {
        self.check(params)?;
        let (j, b) = (self.joint_count(), self.shape_dims());
        let flat = params.to_flat();
        let rows = 3 * stencil.terms.len();
        let mut jac = DMatrix::zeros(rows, flat.len());
        for col in 0..flat.len() {
            // Root orientation is pinned to identity.
            if col < 3 {
                continue;
            }
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[col] += h;
            minus[col] -= h;
            let pp = BodyParams::from_flat(&plus, j, b)?;
            let pm = BodyParams::from_flat(&minus, j, b)?;
            let fp = self.stencil_points(&self.kinematics(&pp)?, stencil);
            let fm = self.stencil_points(&self.kinematics(&pm)?, stencil);
            for (k, (a, c)) in fp.iter().zip(&fm).enumerate() {
                let d = (a - c) / (2.0 * h);
                jac[(3 * k, col)] = d.x;
                jac[(3 * k + 1, col)] = d.y;
                jac[(3 * k + 2, col)] = d.z;
            }
        }
        Ok(jac)
    }

    /// Reverse pass of forward kinematics. `point_grads` pairs with the
    /// stencil's points, `joint_grads` (optional) with global joint positions.
    pub fn backward(
        &self,
        local: &[Matrix3<f64>],
        kin: &Kinematics,
        stencil: &PointStencil,
        point_grads: &[Vec3],
        joint_grads: Option<&[Vec3]>,
    ) -> BodyGrad {
        let j = self.joint_count();
        let mut g_pos = vec![Vec3::zeros(); j];
        let mut g_rot = vec![Matrix3::<f64>::zeros(); j];
        let mut g_scale = vec![0.0; j];
        for (terms, g) in stencil.terms.iter().zip(point_grads) {
            for &(v, w) in terms {
                let gv = g * w;
                let b = self.vertex_binding[v];
                let seg = self.segment_scale_joint[b];
                let u = self.rest_local[v];
                g_pos[b] += gv;
                g_rot[b] += gv * u.transpose() * kin.scales[seg];
                g_scale[seg] += gv.dot(&(kin.rotations[b] * u));
            }
        }
        if let Some(jg) = joint_grads {
            for (i, g) in jg.iter().enumerate() {
                g_pos[i] += g;
            }
        }
        let mut g_local = vec![Matrix3::<f64>::zeros(); j];
        for i in (1..j).rev() {
            let p = self.skeleton.parent[i].unwrap();
            let off = self.skeleton.offsets[i];
            let gp = g_pos[i];
            g_pos[p] += gp;
            g_rot[p] += gp * off.transpose() * kin.scales[i];
            g_scale[i] += gp.dot(&(kin.rotations[p] * off));
            let gr = g_rot[i];
            g_local[i] = kin.rotations[p].transpose() * gr;
            g_rot[p] += gr * local[i].transpose();
        }
        let beta = (0..self.shape_dims())
            .map(|bb| (0..j).map(|i| g_scale[i] * self.shape_basis[(i, bb)]).sum())
            .collect();
        BodyGrad {
            rotations: g_local,
            beta,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let j = self.joint_count();
        let mut w = BinWriter::new();
        w.magic(MAGIC).u16(VERSION).u32(j as u32).u32(self.shape_dims() as u32);
        for i in 0..j {
            w.u64(self.skeleton.parent[i].map_or(u64::MAX, |p| p as u64));
            let o = self.skeleton.offsets[i];
            w.f64(o.x).f64(o.y).f64(o.z);
            w.str(&self.skeleton.names[i]);
        }
        w.u64(self.template_mesh.vertices.len() as u64);
        for v in &self.template_mesh.vertices {
            w.f64(v.x).f64(v.y).f64(v.z);
        }
        w.u64(self.template_mesh.faces.len() as u64);
        for f in &self.template_mesh.faces {
            w.u32(f[0] as u32).u32(f[1] as u32).u32(f[2] as u32);
        }
        for &b in &self.vertex_binding {
            w.u32(b as u32);
        }
        for c in 0..self.shape_dims() {
            for r in 0..j {
                w.f64(self.shape_basis[(r, c)]);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(MAGIC)?;
        r.version(VERSION)?;
        let j = r.u32()? as usize;
        let b = r.u32()? as usize;
        let mut parent = Vec::with_capacity(j);
        let mut offsets = Vec::with_capacity(j);
        let mut names = Vec::with_capacity(j);
        for _ in 0..j {
            let p = r.u64()?;
            parent.push(if p == u64::MAX { None } else { Some(p as usize) });
            offsets.push(Vec3::new(r.f64()?, r.f64()?, r.f64()?));
            names.push(r.str()?);
        }
        let nv = r.usize()?;
        let vertices = (0..nv)
            .map(|_| Ok(Vec3::new(r.f64()?, r.f64()?, r.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        let nf = r.usize()?;
        let faces = (0..nf)
            .map(|_| Ok([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize]))
            .collect::<Result<Vec<_>>>()?;
        let binding = (0..nv).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let mut basis = DMatrix::zeros(j, b);
        for c in 0..b {
            for row in 0..j {
                basis[(row, c)] = r.f64()?;
            }
        }
        r.finish()?;
        Self::from_parts(
            Skeleton { parent, offsets, names },
            Mesh::new(vertices, faces)?,
            binding,
            basis,
        )
    }

    pub fn hash(&self) -> u64 {
        content_hash(&self.to_bytes())
    }
}

pub fn mesh_height(mesh: &Mesh) -> f64 {
    let (lo, hi) = mesh
        .vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.y), hi.max(v.y))
        });
    hi - lo
}

/// Builds the default humanoid (16 joints: three spine joints, head, arms and
/// legs). Fewer joints truncate the list; extra joints become finger-like
/// chains hanging off the wrists. `seed` drives the non-uniform shape components.
pub fn build_default_body(joint_count: usize, shape_dims: usize, seed: u64) -> Result<BodyModel> {
    if joint_count < 2 {
        return Err(Error::InvalidArgument("body needs at least 2 joints".into()));
    }
    struct Spec {
        name: String,
        parent: Option<usize>,
        offset: Vec3,
        radius: f64,
        leaf_extent: Vec3,
    }
    let mut specs: Vec<Spec> = DEFAULT_JOINTS
        .iter()
        .take(joint_count)
        .map(|s| Spec {
            name: s.name.to_string(),
            parent: s.parent,
            offset: Vec3::from(s.offset),
            radius: s.radius,
            leaf_extent: Vec3::from(s.leaf_extent),
        })
        .collect();
    let mut tips = [6usize, 9usize];
    let mut extra = 0;
    while specs.len() < joint_count {
        let side = extra % 2;
        let parent = tips[side];
        let dir = if side == 0 { 1.0 } else { -1.0 };
        specs.push(Spec {
            name: format!("extra_{extra}"),
            parent: Some(parent),
            offset: Vec3::new(0.06 * dir, 0.0, 0.0),
            radius: 0.02,
            leaf_extent: Vec3::new(0.05 * dir, 0.0, 0.0),
        });
        tips[side] = specs.len() - 1;
        extra += 1;
    }

    let skeleton = Skeleton {
        parent: specs.iter().map(|s| s.parent).collect(),
        offsets: specs.iter().map(|s| s.offset).collect(),
        names: specs.iter().map(|s| s.name.clone()).collect(),
    };
    skeleton.validate()?;
    let rest = skeleton.rest_positions();

    let mut mesh = Mesh {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    let mut binding = Vec::new();
    for (i, s) in specs.iter().enumerate() {
        let extent = match skeleton.children(i).first() {
            Some(&c) => skeleton.offsets[c],
            None => s.leaf_extent,
        };
        let (verts, faces) = capsule(extent, s.radius, 10, 3);
        let local: Vec<Vec3> = verts.iter().map(|u| rest[i] + u).collect();
        let part = Mesh { vertices: local, faces };
        binding.extend(std::iter::repeat_n(i, part.vertices.len()));
        mesh.append(&part);
    }

    let mut basis = DMatrix::zeros(joint_count, shape_dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.04).unwrap();
    for c in 0..shape_dims {
        for r in 0..joint_count {
            basis[(r, c)] = if c == 0 {
                HEIGHT_SCALE_PER_BETA
            } else {
                normal.sample(&mut rng)
            };
        }
    }
    BodyModel::from_parts(skeleton, mesh, binding, basis)
}
