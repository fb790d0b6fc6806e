//! Closed-form object pose from decoded offsets: per-anchor mean targets
//! followed by weighted Kabsch.

use nalgebra::Matrix3;

use crate::body::{BodyModel, BodyParams};
use crate::geom::{locate_all, Mesh, Vec3};
use crate::relation::{AnchorConfig, OffsetVector};
use crate::rotation::{exp_so3, geodesic_angle};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth >= 1e-8 || rotation.determinant() <= 0.0 {
            return Err(Error::InvalidArgument("rotation is not proper orthonormal".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_all(&self, ps: &[Vec3]) -> Vec<Vec3> {
        ps.iter().map(|p| self.apply(p)).collect()
    }

    pub fn transform_mesh(&self, mesh: &Mesh) -> Mesh {
        mesh.transformed(&self.rotation, &self.translation)
    }

    /// `(exp(omega) R, t + dt)`
    pub fn perturbed(&self, omega: &Vec3, dt: &Vec3) -> Self {
        Self {
            rotation: exp_so3(omega) * self.rotation,
            translation: self.translation + dt,
        }
    }

    pub fn rotation_error(&self, other: &Self) -> f64 {
        geodesic_angle(&self.rotation, &other.rotation)
    }
}

/// `q_j = mean_i (p_i^h + d_ij)`
pub fn offset_targets(human_anchor_positions: &[Vec3], x_hat: &OffsetVector) -> Result<Vec<Vec3>> {
    let m = human_anchor_positions.len();
    if m != x_hat.m {
        return Err(Error::Dimension {
            what: "human anchors for offset targets",
            expected: x_hat.m,
            got: m,
        });
    }
    Ok((0..x_hat.n)
        .map(|j| {
            let sum: Vec3 = (0..m).map(|i| human_anchor_positions[i] + x_hat.offset(i, j)).sum();
            sum / m as f64
        })
        .collect())
}

/// `sum_ij |p_i + d_ij - (R p_j + t)|^2`
pub fn offset_objective(
    human_anchor_positions: &[Vec3],
    x_hat: &OffsetVector,
    object_template_anchors: &[Vec3],
    pose: &RigidPose,
) -> f64 {
    let placed = pose.apply_all(object_template_anchors);
    let mut total = 0.0;
    for (i, p) in human_anchor_positions.iter().enumerate() {
        for (j, q) in placed.iter().enumerate() {
            total += (p + x_hat.offset(i, j) - q).norm_squared();
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidFit {
    pub pose: RigidPose,
    /// Set when the weighted cross-covariance has rank < 2; the pose is then
    /// the translation-only fit.
    pub degenerate: bool,
}

pub fn fit_rigid(template_anchors: &[Vec3], targets: &[Vec3], weights: &[f64]) -> Result<RigidFit> {
    let n = template_anchors.len();
    if targets.len() != n || weights.len() != n {
        return Err(Error::Dimension {
            what: "rigid fit inputs",
            expected: n,
            got: targets.len().min(weights.len()),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "rigid fit weights must be finite and nonnegative".into(),
        ));
    }
    let wsum: f64 = weights.iter().sum();
    if n == 0 || wsum <= 0.0 {
        return Err(Error::Degenerate("rigid fit has no weighted points".into()));
    }
    let src_c: Vec3 = template_anchors.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vec3>() / wsum;
    let dst_c: Vec3 = targets.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vec3>() / wsum;

    let mut h = Matrix3::zeros();
    for ((p, q), w) in template_anchors.iter().zip(targets).zip(weights) {
        h += (q - dst_c) * (p - src_c).transpose() * *w;
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if s[0] <= f64::MIN_POSITIVE || s[1] <= 1e-10 * s[0] {
        return Ok(RigidFit {
            pose: RigidPose {
                rotation: Matrix3::identity(),
                translation: dst_c - src_c,
            },
            degenerate: true,
        });
    }
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        // Flip the direction paired with the smallest singular value.
        let imin = svd.singular_values.imin();
        d[(imin, imin)] = -1.0;
    }
    let rotation = u * d * vt;
    let translation = dst_c - rotation * src_c;
    Ok(RigidFit {
        pose: RigidPose { rotation, translation },
        degenerate: false,
    })
}

/// Offset-consistency argmin over the object pose with the body held at `params`.
pub fn init_object_pose(
    body: &BodyModel,
    params: &BodyParams,
    x_hat: &OffsetVector,
    config: &AnchorConfig,
    object_template: &Mesh,
    category: u32,
) -> Result<RigidFit> {
    let human = body.surface_points(params, &config.human_anchors)?;
    let anchors = &config.object(category)?.anchors;
    if x_hat.n != anchors.len() {
        return Err(Error::Dimension {
            what: "object anchors for offset vector",
            expected: anchors.len(),
            got: x_hat.n,
        });
    }
    let template = locate_all(object_template, anchors)?;
    let targets = offset_targets(&human, x_hat)?;
    fit_rigid(&template, &targets, &vec![1.0; template.len()])
}
