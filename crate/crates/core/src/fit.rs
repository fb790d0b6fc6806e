//! Camera model, HOI losses, offset-driven recovery (Levenberg-Marquardt on
//! the anchor objective) and joint post-optimization against 2D evidence.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2};

use crate::body::{BodyModel, BodyParams, PointStencil};
use crate::flow::{column, params_from_pose6d, pose6d_from_params, rotations_from_pose6d, FlowModel};
use crate::geom::{Mesh, Vec3};
use crate::optim::Adam;
use crate::relation::{AnchorConfig, LatentRelationSpace, OffsetVector};
use crate::rigid::{offset_objective, RigidPose};
use crate::rotation::{exp_so3, left_increment_grad, sixd_backward, skew};
use crate::{Error, Result};

pub type Vec2 = Vector2<f64>;

const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation (x right, y down, z forward).
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        RigidPose::new(rotation, translation)?;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    pub fn with_translation(&self, t: Vec3) -> Self {
        Self {
            translation: t,
            ..self.clone()
        }
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// World position of the optical center.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn project(&self, p: &Vec3) -> Option<Vec2> {
        let q = self.to_camera(p);
        (q.z > MIN_DEPTH).then(|| Vec2::new(self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy))
    }

    /// Pixel and its Jacobian w.r.t. the camera-frame point.
    fn project_jac(&self, p: &Vec3) -> Option<(Vec2, Matrix2x3<f64>)> {
        let q = self.to_camera(p);
        if q.z <= MIN_DEPTH {
            return None;
        }
        let iz = 1.0 / q.z;
        let px = Vec2::new(self.fx * q.x * iz + self.cx, self.fy * q.y * iz + self.cy);
        let jac = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * q.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * q.y * iz * iz,
        );
        Some((px, jac))
    }
}

/// Pinhole projection; points at non-positive depth come back as `None`.
pub fn project_points(cam: &Camera, pts: &[Vec3]) -> Vec<Option<Vec2>> {
    pts.iter().map(|p| cam.project(p)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    /// Point in the object template frame.
    pub x3d: Vec3,
    pub x2d: Vec2,
    pub w2d: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evidence2D {
    pub joints_2d: Vec<Vec2>,
    pub confidence: Vec<f64>,
    pub obj_corr: Vec<Correspondence>,
}

impl Evidence2D {
    pub fn validate(&self) -> Result<()> {
        if self.joints_2d.len() != self.confidence.len() {
            return Err(Error::Dimension {
                what: "joint confidences",
                expected: self.joints_2d.len(),
                got: self.confidence.len(),
            });
        }
        if self.confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("joint confidence outside [0, 1]".into()));
        }
        if self.obj_corr.iter().any(|c| !(c.w2d.x >= 0.0 && c.w2d.y >= 0.0)) {
            return Err(Error::InvalidArgument("negative correspondence weight".into()));
        }
        Ok(())
    }

    pub fn weight_sum(&self) -> f64 {
        self.obj_corr.iter().map(|c| c.w2d.x + c.w2d.y).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HOIInstance {
    pub body: BodyParams,
    pub object_pose: RigidPose,
    pub category: u32,
}

impl HOIInstance {
    pub fn object_mesh(&self, template: &Mesh) -> Mesh {
        self.object_pose.transform_mesh(template)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lambda_j: f64,
    /// Base multiplier on the adaptive coordinate-map weight.
    pub lambda_coor: f64,
    pub lambda_theta: f64,
    pub lambda_gamma: f64,
    pub lambda_ho: f64,
    pub k1: f64,
    pub k2: f64,
    pub recover_iters: usize,
    pub recover_tol: f64,
    pub post_iters: usize,
    pub lr_z_theta: f64,
    pub lr_beta: f64,
    pub lr_z_gamma: f64,
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub lr_tcam: f64,
    pub freeze_beta: bool,
    pub refine_tcam: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lambda_j: 0.1,
            lambda_coor: 1.0,
            lambda_theta: 0.1,
            lambda_gamma: 1.0,
            lambda_ho: 1.0,
            k1: 15.0,
            k2: 10.0,
            recover_iters: 50,
            recover_tol: 1e-10,
            post_iters: 300,
            lr_z_theta: 0.02,
            lr_beta: 0.02,
            lr_z_gamma: 0.02,
            lr_rotation: 0.01,
            lr_translation: 0.005,
            lr_tcam: 0.01,
            freeze_beta: false,
            refine_tcam: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.lambda_j,
            self.lambda_coor,
            self.lambda_theta,
            self.lambda_gamma,
            self.lambda_ho,
            self.lr_z_theta,
            self.lr_beta,
            self.lr_z_gamma,
            self.lr_rotation,
            self.lr_translation,
            self.lr_tcam,
        ];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "optimizer weights and rates must be nonnegative".into(),
            ));
        }
        if !(self.k2 > 0.0) {
            return Err(Error::InvalidArgument("k2 must be positive".into()));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        match key {
            "lambda_j" => self.lambda_j = num(value)?,
            "lambda_coor" => self.lambda_coor = num(value)?,
            "lambda_theta" => self.lambda_theta = num(value)?,
            "lambda_gamma" => self.lambda_gamma = num(value)?,
            "lambda_ho" => self.lambda_ho = num(value)?,
            "k1" => self.k1 = num(value)?,
            "k2" => self.k2 = num(value)?,
            "recover_iters" => self.recover_iters = num(value)?,
            "recover_tol" => self.recover_tol = num(value)?,
            "post_iters" => self.post_iters = num(value)?,
            "lr_z_theta" => self.lr_z_theta = num(value)?,
            "lr_beta" => self.lr_beta = num(value)?,
            "lr_z_gamma" => self.lr_z_gamma = num(value)?,
            "lr_rotation" => self.lr_rotation = num(value)?,
            "lr_translation" => self.lr_translation = num(value)?,
            "lr_tcam" => self.lr_tcam = num(value)?,
            "freeze_beta" => self.freeze_beta = num(value)?,
            "refine_tcam" => self.refine_tcam = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "lambda_j = {}\nlambda_coor = {}\nlambda_theta = {}\nlambda_gamma = {}\nlambda_ho = {}\nk1 = {}\nk2 = {}\n\
             recover_iters = {}\nrecover_tol = {}\npost_iters = {}\nlr_z_theta = {}\nlr_beta = {}\nlr_z_gamma = {}\n\
             lr_rotation = {}\nlr_translation = {}\nlr_tcam = {}\nfreeze_beta = {}\nrefine_tcam = {}\n",
            self.lambda_j,
            self.lambda_coor,
            self.lambda_theta,
            self.lambda_gamma,
            self.lambda_ho,
            self.k1,
            self.k2,
            self.recover_iters,
            self.recover_tol,
            self.post_iters,
            self.lr_z_theta,
            self.lr_beta,
            self.lr_z_gamma,
            self.lr_rotation,
            self.lr_translation,
            self.lr_tcam,
            self.freeze_beta,
            self.refine_tcam
        )
    }
}

fn check_offsets_for(config: &AnchorConfig, x_hat: &OffsetVector, object_anchors: &[Vec3]) -> Result<()> {
    if x_hat.m != config.m || x_hat.n != object_anchors.len() {
        return Err(Error::Dimension {
            what: "offset vector for anchors",
            expected: 3 * config.m * object_anchors.len(),
            got: x_hat.dim(),
        });
    }
    Ok(())
}

/// `sum_ij |p_i^h + d_ij - (R p_j + t)|^2` with the body posed at `inst.body`.
pub fn loss_ho_offset(
    body: &BodyModel,
    inst: &HOIInstance,
    x_hat: &OffsetVector,
    config: &AnchorConfig,
    object_anchors: &[Vec3],
) -> Result<f64> {
    check_offsets_for(config, x_hat, object_anchors)?;
    let human = body.surface_points(&inst.body, &config.human_anchors)?;
    Ok(offset_objective(&human, x_hat, object_anchors, &inst.object_pose))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub instance: HOIInstance,
    pub initial_loss: f64,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct LmSystem {
    loss: f64,
    grad: DVector<f64>,
    hessian: DMatrix<f64>,
}

/// Gauss-Newton system of the anchor objective. Uses the pairwise structure
/// `r_ij = p_i + d_ij - q_j` to avoid materializing the 3mn-row Jacobian.
fn lm_system(
    body: &BodyModel,
    params: &BodyParams,
    pose: &RigidPose,
    stencil: &PointStencil,
    x_hat: &OffsetVector,
    object_anchors: &[Vec3],
) -> Result<LmSystem> {
    let (m, n) = (x_hat.m, x_hat.n);
    let kin = body.kinematics(params)?;
    let human = body.stencil_points(&kin, stencil);
    let full = body.jacobian_stencil(params, stencil, 1e-5)?;
    let pb = full.ncols() - 3;
    let jb = full.columns(3, pb).into_owned();
    let dim = pb + 6;

    let placed: Vec<Vec3> = object_anchors.iter().map(|p| pose.apply(p)).collect();
    let mut s = vec![Vec3::zeros(); m];
    let mut u = vec![Vec3::zeros(); n];
    let mut loss = 0.0;
    for i in 0..m {
        for j in 0..n {
            let r = human[i] + x_hat.offset(i, j) - placed[j];
            loss += r.norm_squared();
            s[i] += r;
            u[j] += r;
        }
    }

    let mut grad = DVector::zeros(dim);
    let mut hessian = DMatrix::zeros(dim, dim);
    let mut sum_jp = DMatrix::zeros(3, pb);
    for i in 0..m {
        let ji = jb.rows(3 * i, 3);
        let gi = ji.tr_mul(&s[i]);
        grad.rows_mut(0, pb).add_assign_from(&gi);
        sum_jp += ji;
    }
    hessian
        .view_mut((0, 0), (pb, pb))
        .copy_from(&(jb.tr_mul(&jb) * n as f64));

    let mut sum_jq = DMatrix::zeros(3, 6);
    let mut hoo = DMatrix::zeros(6, 6);
    for j in 0..n {
        let mut jq = DMatrix::zeros(3, 6);
        jq.view_mut((0, 0), (3, 3))
            .copy_from(&(-skew(&(placed[j] - pose.translation))));
        jq.view_mut((0, 3), (3, 3)).copy_from(&Matrix3::identity());
        let gj = -(jq.tr_mul(&DVector::from_column_slice(u[j].as_slice())));
        grad.rows_mut(pb, 6).add_assign_from(&gj);
        hoo += jq.tr_mul(&jq) * m as f64;
        sum_jq += jq;
    }
    hessian.view_mut((pb, pb), (6, 6)).copy_from(&hoo);
    let cross = -(sum_jp.tr_mul(&sum_jq));
    hessian.view_mut((0, pb), (pb, 6)).copy_from(&cross);
    hessian.view_mut((pb, 0), (6, pb)).copy_from(&cross.transpose());
    Ok(LmSystem { loss, grad, hessian })
}

trait AddAssignFrom {
    fn add_assign_from(&mut self, other: &DVector<f64>);
}

impl AddAssignFrom for nalgebra::DVectorViewMut<'_, f64> {
    fn add_assign_from(&mut self, other: &DVector<f64>) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}

impl AddAssignFrom for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign_from(&mut self, other: &DVector<f64>) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}

fn apply_step(params: &BodyParams, pose: &RigidPose, delta: &DVector<f64>) -> (BodyParams, RigidPose) {
    let mut flat = params.to_flat();
    let pb = delta.len() - 6;
    for k in 0..pb {
        flat[3 + k] += delta[k];
    }
    let j = params.theta.len();
    let b = params.beta.len();
    let body = BodyParams::from_flat(&flat, j, b).expect("length preserved");
    let omega = Vec3::new(delta[pb], delta[pb + 1], delta[pb + 2]);
    let dt = Vec3::new(delta[pb + 3], delta[pb + 4], delta[pb + 5]);
    (body, pose.perturbed(&omega, &dt))
}

/// Minimizes the anchor objective over pose, shape and object pose with
/// Levenberg-Marquardt; object rotation moves by left exponential increments.
pub fn recover_instance(
    body: &BodyModel,
    x_hat: &OffsetVector,
    init: &HOIInstance,
    config: &AnchorConfig,
    object_anchors: &[Vec3],
    opt: &OptimConfig,
) -> Result<Recovery> {
    check_offsets_for(config, x_hat, object_anchors)?;
    let stencil = body.stencil(&config.human_anchors)?;
    let mut params = init.body.clone();
    let mut pose = init.object_pose.clone();
    let mut sys = lm_system(body, &params, &pose, &stencil, x_hat, object_anchors)?;
    if !sys.loss.is_finite() {
        return Err(Error::NonFinite("initial anchor objective".into()));
    }
    let initial_loss = sys.loss;
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opt.recover_iters {
        if 2.0 * sys.grad.norm() < opt.recover_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while mu < 1e12 {
            let mut a = sys.hessian.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += mu * a[(d, d)].max(1e-9) + 1e-12;
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&sys.grad))) else {
                mu *= 4.0;
                continue;
            };
            let (p2, o2) = apply_step(&params, &pose, &delta);
            match lm_system(body, &p2, &o2, &stencil, x_hat, object_anchors) {
                Ok(trial) if trial.loss.is_finite() && trial.loss < sys.loss => {
                    let small = sys.loss - trial.loss <= 1e-15 * sys.loss.max(1e-300);
                    params = p2;
                    pose = o2;
                    sys = trial;
                    mu = (mu / 3.0).max(1e-9);
                    accepted = true;
                    if small {
                        converged = true;
                    }
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    Ok(Recovery {
        instance: HOIInstance {
            body: params,
            object_pose: pose,
            category: init.category,
        },
        initial_loss,
        loss: sys.loss,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReprojLoss {
    pub l_j: f64,
    pub l_coor: f64,
}

/// Confidence-weighted L1 joint reprojection and weighted L1 object
/// coordinate reprojection, returned separately.
pub fn loss_reprojection(body: &BodyModel, inst: &HOIInstance, cam: &Camera, ev: &Evidence2D) -> Result<ReprojLoss> {
    ev.validate()?;
    let joints = body.joints_3d(&inst.body)?;
    if joints.len() != ev.joints_2d.len() {
        return Err(Error::Dimension {
            what: "2D joints",
            expected: joints.len(),
            got: ev.joints_2d.len(),
        });
    }
    let mut out = ReprojLoss::default();
    let mut valid = 0;
    for ((j, obs), conf) in joints.iter().zip(&ev.joints_2d).zip(&ev.confidence) {
        if let Some(px) = cam.project(j) {
            out.l_j += conf * (px - obs).abs().sum();
            valid += 1;
        }
    }
    for c in &ev.obj_corr {
        if let Some(px) = cam.project(&inst.object_pose.apply(&c.x3d)) {
            out.l_coor += c.w2d.component_mul(&(px - c.x2d).abs()).sum();
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(Error::NoValidPoints("every point is behind the camera".into()));
    }
    Ok(out)
}

/// `exp((sum w - k1) / k2)`
pub fn lambda_coor(ev: &Evidence2D, k1: f64, k2: f64) -> f64 {
    ((ev.weight_sum() - k1) / k2).exp()
}

fn sign2(v: &Vec2) -> Vec2 {
    v.map(|x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Everything fixed during post-optimization of one observation.
pub struct PostProblem<'a> {
    pub body: &'a BodyModel,
    pub flow: &'a FlowModel,
    pub space: &'a LatentRelationSpace,
    pub human_stencil: PointStencil,
    pub object_anchors: &'a [Vec3],
    pub camera: &'a Camera,
    pub evidence: &'a Evidence2D,
    pub condition: &'a [f64],
    pub opt: &'a OptimConfig,
    pub lambda_coor: f64,
}

/// Free variables of the post-optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct PostState {
    pub z_theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub z_gamma: Vec<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub t_cam: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PostTerms {
    pub l_j: f64,
    pub l_coor: f64,
    pub lambda_coor: f64,
    pub prior_theta: f64,
    pub l_ho: f64,
    pub prior_gamma: f64,
    pub total: f64,
}

/// Gradient of the total, with `omega` a left increment of the rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct PostGrad {
    pub z_theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub z_gamma: Vec<f64>,
    pub omega: Vec3,
    pub translation: Vec3,
    pub t_cam: Vec3,
}

impl PostGrad {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.z_theta.clone();
        v.extend(&self.beta);
        v.extend(&self.z_gamma);
        v.extend(self.omega.iter());
        v.extend(self.translation.iter());
        v.extend(self.t_cam.iter());
        v
    }
}

impl PostState {
    /// Flat layout matching [`PostGrad::flatten`], rotation given as the
    /// left increment `omega` around `self.rotation`.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let (a, b, c) = (self.z_theta.len(), self.beta.len(), self.z_gamma.len());
        let o = a + b + c;
        let omega = Vec3::new(flat[o], flat[o + 1], flat[o + 2]);
        Self {
            z_theta: flat[..a].to_vec(),
            beta: flat[a..a + b].to_vec(),
            z_gamma: flat[a + b..o].to_vec(),
            rotation: exp_so3(&omega) * self.rotation,
            translation: Vec3::new(flat[o + 3], flat[o + 4], flat[o + 5]),
            t_cam: Vec3::new(flat[o + 6], flat[o + 7], flat[o + 8]),
        }
    }

    pub fn flat_at_zero_increment(&self) -> Vec<f64> {
        let mut v = self.z_theta.clone();
        v.extend(&self.beta);
        v.extend(&self.z_gamma);
        v.extend([0.0; 3]);
        v.extend(self.translation.iter());
        v.extend(self.t_cam.iter());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostResult {
    pub instance: HOIInstance,
    pub state: PostState,
    pub camera: Camera,
    pub initial: PostTerms,
    pub best: PostTerms,
    pub iterations: usize,
    /// Set when a step produced a non-finite loss; the best finite iterate is returned.
    pub diverged: bool,
}

impl<'a> PostProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        body: &'a BodyModel,
        flow: &'a FlowModel,
        space: &'a LatentRelationSpace,
        config: &AnchorConfig,
        object_anchors: &'a [Vec3],
        camera: &'a Camera,
        evidence: &'a Evidence2D,
        condition: &'a [f64],
        opt: &'a OptimConfig,
    ) -> Result<Self> {
        opt.validate()?;
        evidence.validate()?;
        flow.check_condition(condition)?;
        if space.m != config.m || space.n != object_anchors.len() || space.k != flow.dims.k {
            return Err(Error::InvalidArgument(
                "latent space does not match anchors or flow".into(),
            ));
        }
        if evidence.joints_2d.len() != body.joint_count() || flow.dims.joints != body.joint_count() {
            return Err(Error::InvalidArgument(
                "body, flow and evidence disagree on joint count".into(),
            ));
        }
        Ok(Self {
            body,
            flow,
            space,
            human_stencil: body.stencil(&config.human_anchors)?,
            object_anchors,
            camera,
            evidence,
            condition,
            opt,
            lambda_coor: opt.lambda_coor * lambda_coor(evidence, opt.k1, opt.k2),
        })
    }

    pub fn initial_state(&self, init: &HOIInstance, t_cam: Vec3) -> Result<PostState> {
        let pose6d = pose6d_from_params(&init.body);
        let z = self.flow.pose_flow.inverse_one(&pose6d, self.condition)?.z;
        Ok(PostState {
            z_theta: z,
            beta: init.body.beta.clone(),
            z_gamma: vec![0.0; self.flow.dims.k],
            rotation: init.object_pose.rotation,
            translation: init.object_pose.translation,
            t_cam,
        })
    }

    pub fn decode_instance(&self, s: &PostState, category: u32) -> Result<HOIInstance> {
        let (theta, _) = self.flow.pose_flow.forward_one(&s.z_theta, self.condition)?;
        Ok(HOIInstance {
            body: params_from_pose6d(&theta, &s.beta),
            object_pose: RigidPose {
                rotation: s.rotation,
                translation: s.translation,
            },
            category,
        })
    }

    /// Loss terms and gradient of the weighted total at `s`.
    pub fn evaluate(&self, s: &PostState) -> Result<(PostTerms, PostGrad)> {
        let o = self.opt;
        let flow = self.flow;
        let dims = flow.dims;
        let c = column(self.condition);
        let (theta, _, pose_tape) = flow.pose_flow.forward(&column(&s.z_theta), &c)?;
        let oc = flow.offset_condition(&c, &theta);
        let (gamma, _, off_tape) = flow.offset_flow.forward(&column(&s.z_gamma), &oc)?;
        let x_hat = self.space.reproject_slice(gamma.as_slice())?;
        let local = rotations_from_pose6d(theta.as_slice());
        let kin = self.body.kinematics_from_rotations(&local, &s.beta);
        let human = self.body.stencil_points(&kin, &self.human_stencil);
        let cam = self.camera.with_translation(s.t_cam);

        let mut t = PostTerms {
            lambda_coor: self.lambda_coor,
            ..PostTerms::default()
        };
        let mut g_joint = vec![Vec3::zeros(); kin.positions.len()];
        let mut g_human = vec![Vec3::zeros(); human.len()];
        let mut g_rot = Matrix3::zeros();
        let mut g_trans = Vec3::zeros();
        let mut g_tcam = Vec3::zeros();
        let mut valid = 0;

        for (k, jp) in kin.positions.iter().enumerate() {
            let Some((px, jac)) = cam.project_jac(jp) else { continue };
            valid += 1;
            let r = px - self.evidence.joints_2d[k];
            let conf = self.evidence.confidence[k];
            t.l_j += conf * r.abs().sum();
            let gpx = sign2(&r) * (o.lambda_j * conf);
            let gc = jac.tr_mul(&gpx);
            g_tcam += gc;
            g_joint[k] += cam.rotation.tr_mul(&gc);
        }
        for corr in &self.evidence.obj_corr {
            let q = s.rotation * corr.x3d + s.translation;
            let Some((px, jac)) = cam.project_jac(&q) else { continue };
            valid += 1;
            let r = px - corr.x2d;
            t.l_coor += corr.w2d.component_mul(&r.abs()).sum();
            let gpx = sign2(&r).component_mul(&corr.w2d) * self.lambda_coor;
            let gc = jac.tr_mul(&gpx);
            g_tcam += gc;
            let gq = cam.rotation.tr_mul(&gc);
            g_trans += gq;
            g_rot += gq * corr.x3d.transpose();
        }
        if valid == 0 {
            return Err(Error::NoValidPoints("every point is behind the camera".into()));
        }

        let (m, n) = (x_hat.m, x_hat.n);
        let mut g_x = vec![0.0; x_hat.dim()];
        if o.lambda_ho > 0.0 {
            let placed: Vec<Vec3> = self
                .object_anchors
                .iter()
                .map(|p| s.rotation * p + s.translation)
                .collect();
            for i in 0..m {
                for j in 0..n {
                    let e = human[i] + x_hat.offset(i, j) - placed[j];
                    t.l_ho += e.norm_squared();
                    let ge = e * (2.0 * o.lambda_ho);
                    g_human[i] += ge;
                    let base = 3 * (i * n + j);
                    g_x[base] += ge.x;
                    g_x[base + 1] += ge.y;
                    g_x[base + 2] += ge.z;
                    g_trans -= ge;
                    g_rot -= ge * self.object_anchors[j].transpose();
                }
            }
        }
        t.prior_theta = s.z_theta.iter().map(|v| v * v).sum();
        t.prior_gamma = s.z_gamma.iter().map(|v| v * v).sum();
        t.total = o.lambda_j * t.l_j
            + self.lambda_coor * t.l_coor
            + o.lambda_theta * t.prior_theta
            + o.lambda_ho * t.l_ho
            + o.lambda_gamma * t.prior_gamma;
        if !t.total.is_finite() {
            return Err(Error::NonFinite(format!("post-optimization loss {t:?}")));
        }

        // Offset flow: gamma -> z_gamma and the theta part of its condition.
        let g_gamma = self.space.pullback(&g_x);
        let mut scratch = vec![0.0; flow.offset_flow.param_len()];
        let (gzg, gcond) = flow
            .offset_flow
            .backward_forward(&off_tape, &column(&g_gamma), 0.0, &mut scratch);
        let z_gamma = gzg
            .iter()
            .zip(&s.z_gamma)
            .map(|(g, z)| g + 2.0 * o.lambda_gamma * z)
            .collect();

        let bg = self
            .body
            .backward(&local, &kin, &self.human_stencil, &g_human, Some(&g_joint));
        let pd = dims.pose_dim();
        let mut g_theta = DMatrix::zeros(pd, 1);
        for j in 1..local.len() {
            let a = &theta.as_slice()[6 * (j - 1)..6 * j];
            let ga = sixd_backward(a, &bg.rotations[j]);
            for r in 0..6 {
                g_theta[6 * (j - 1) + r] = ga[r] + gcond[dims.cond_dim + 6 * (j - 1) + r];
            }
        }
        let mut scratch = vec![0.0; flow.pose_flow.param_len()];
        let (gzt, _) = flow.pose_flow.backward_forward(&pose_tape, &g_theta, 0.0, &mut scratch);
        let z_theta = gzt
            .iter()
            .zip(&s.z_theta)
            .map(|(g, z)| g + 2.0 * o.lambda_theta * z)
            .collect();

        Ok((
            t,
            PostGrad {
                z_theta,
                beta: bg.beta,
                z_gamma,
                omega: left_increment_grad(&s.rotation, &g_rot),
                translation: g_trans,
                t_cam: g_tcam,
            },
        ))
    }

    /// Adam descent from `init` with `t_cam` as the starting camera
    /// translation; keeps the best iterate seen.
    pub fn optimize(&self, init: &HOIInstance, t_cam: Vec3) -> Result<PostResult> {
        let o = self.opt;
        let mut state = self.initial_state(init, t_cam)?;
        let (initial, _) = self.evaluate(&state)?;
        let mut best = (initial, state.clone());
        let (a, b, c) = (state.z_theta.len(), state.beta.len(), state.z_gamma.len());
        let lr_of = |i: usize| -> f64 {
            if i < a {
                o.lr_z_theta
            } else if i < a + b {
                if o.freeze_beta {
                    0.0
                } else {
                    o.lr_beta
                }
            } else if i < a + b + c {
                o.lr_z_gamma
            } else if i < a + b + c + 3 {
                o.lr_rotation
            } else if i < a + b + c + 6 {
                o.lr_translation
            } else if o.refine_tcam {
                o.lr_tcam
            } else {
                0.0
            }
        };
        let mut adam = Adam::new(a + b + c + 9);
        let mut diverged = false;
        let mut iterations = 0;
        for _ in 0..o.post_iters {
            let (terms, grad) = match self.evaluate(&state) {
                Ok(v) => v,
                Err(_) => {
                    diverged = true;
                    break;
                }
            };
            if terms.total < best.0.total {
                best = (terms, state.clone());
            }
            let step = adam.step(&grad.flatten(), lr_of);
            let mut flat = state.flat_at_zero_increment();
            for (v, d) in flat.iter_mut().zip(&step) {
                *v += d;
            }
            state = state.with_flat(&flat);
            iterations += 1;
        }
        if !diverged {
            match self.evaluate(&state) {
                Ok((terms, _)) if terms.total < best.0.total => best = (terms, state.clone()),
                Ok(_) => {}
                Err(_) => diverged = true,
            }
        }
        if diverged {
            log::warn!("post-optimization hit a non-finite loss; returning the best finite iterate");
        }
        let (best_terms, best_state) = best;
        Ok(PostResult {
            instance: self.decode_instance(&best_state, init.category)?,
            camera: self.camera.with_translation(best_state.t_cam),
            state: best_state,
            initial,
            best: best_terms,
            iterations,
            diverged,
        })
    }
}

#[allow(clippy::too_many_arguments)]
pub fn post_optimize(
    body: &BodyModel,
    init: &HOIInstance,
    flow: &FlowModel,
    space: &LatentRelationSpace,
    config: &AnchorConfig,
    object_anchors: &[Vec3],
    cam: &Camera,
    ev: &Evidence2D,
    condition: &[f64],
    opt: &OptimConfig,
) -> Result<PostResult> {
    let problem = PostProblem::new(body, flow, space, config, object_anchors, cam, ev, condition, opt)?;
    problem.optimize(init, cam.translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::build_default_body;
    use crate::geom::{locate_all, sample_surface, unit_cube};
    use crate::relation::{compute_offsets, ObjectAnchors};
    use nalgebra::Matrix3x4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        Camera::new(
            500.0,
            500.0,
            320.0,
            240.0,
            Matrix3::identity(),
            Vec3::new(0.0, 0.0, 3.0),
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let c = Camera::new(500.0, 500.0, 320.0, 240.0, Matrix3::identity(), Vec3::zeros()).unwrap();
        assert_eq!(c.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap(), Vec2::new(320.0, 240.0));
        assert_eq!(c.project(&Vec3::new(1.0, 0.0, 1.0)).unwrap().x, 820.0);
        assert!(c.project(&Vec3::new(0.0, 0.0, -1.0)).is_none());
        // Homogeneous matrix oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rc = exp_so3(&Vec3::new(0.2, -0.3, 0.1));
        let c = Camera::new(480.0, 510.0, 300.0, 250.0, rc, Vec3::new(0.1, 0.2, 4.0)).unwrap();
        let k = Matrix3::new(480.0, 0.0, 300.0, 0.0, 510.0, 250.0, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rc);
        rt.set_column(3, &c.translation);
        let p_mat = k * rt;
        for _ in 0..100 {
            let p = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let h = p_mat * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            let px = c.project(&p).unwrap();
            assert!((px.x - h.x / h.z).abs() < 1e-10 && (px.y - h.y / h.z).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_coor_examples() {
        let mk = |w: f64| Evidence2D {
            joints_2d: vec![],
            confidence: vec![],
            obj_corr: vec![Correspondence {
                x3d: Vec3::zeros(),
                x2d: Vec2::zeros(),
                w2d: Vec2::new(w, 0.0),
            }],
        };
        assert!((lambda_coor(&mk(15.0), 15.0, 10.0) - 1.0).abs() < 1e-15);
        assert!((lambda_coor(&mk(25.0), 15.0, 10.0) - std::f64::consts::E).abs() < 1e-12);
        assert!((lambda_coor(&mk(0.0), 15.0, 10.0) - 0.22313016014842982).abs() < 1e-12);
    }

    #[test]
    fn config_parsing() {
        let p = Path::new("opt.cfg");
        let cfg = OptimConfig::parse("# tuned\nlambda_j = 0.5\nfreeze_beta=true\n\n", p).unwrap();
        assert_eq!(cfg.lambda_j, 0.5);
        assert!(cfg.freeze_beta);
        assert_eq!(OptimConfig::parse(&cfg.to_kv_string(), p).unwrap(), cfg);
        match OptimConfig::parse("lambda_j 3", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(OptimConfig::parse("bogus = 1", p).is_err());
        assert!(OptimConfig::parse("lambda_ho = -1", p).is_err());
    }

    struct Scene {
        body: BodyModel,
        config: AnchorConfig,
        template: Mesh,
        anchors: Vec<Vec3>,
        inst: HOIInstance,
    }

    fn scene(seed: u64) -> Scene {
        let body = build_default_body(16, 4, 3).unwrap();
        let template = unit_cube().transformed(&Matrix3::identity(), &Vec3::new(-0.5, -0.5, -0.5));
        let config = AnchorConfig::new(
            seed,
            body.template_mesh.faces.len(),
            sample_surface(&body.template_mesh, 24, seed).unwrap(),
            vec![ObjectAnchors {
                category: 0,
                template_faces: template.faces.len(),
                anchors: sample_surface(&template, 6, seed + 1).unwrap(),
            }],
        )
        .unwrap();
        let anchors = locate_all(&template, &config.objects[0].anchors).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = body.zero_params();
        for w in params.theta.iter_mut().skip(1) {
            *w = Vec3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
        }
        for b in params.beta.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let inst = HOIInstance {
            body: params,
            object_pose: RigidPose {
                rotation: exp_so3(&Vec3::new(0.3, 0.2, -0.1)),
                translation: Vec3::new(0.3, 0.1, 0.4),
            },
            category: 0,
        };
        Scene {
            body,
            config,
            template,
            anchors,
            inst,
        }
    }

    fn exact_offsets(s: &Scene) -> OffsetVector {
        let human = s.body.forward(&s.inst.body).unwrap();
        compute_offsets(&human, &s.inst.object_mesh(&s.template), &s.config, 0).unwrap()
    }

    #[test]
    fn ho_offset_examples() {
        let s = scene(1);
        let x = exact_offsets(&s);
        assert!(loss_ho_offset(&s.body, &s.inst, &x, &s.config, &s.anchors).unwrap() < 1e-18);
        let v = Vec3::new(0.1, -0.2, 0.3);
        let mut moved = s.inst.clone();
        moved.object_pose.translation += v;
        let l = loss_ho_offset(&s.body, &moved, &x, &s.config, &s.anchors).unwrap();
        assert!((l - 24.0 * 6.0 * v.norm_squared()).abs() < 1e-10);
        // Double-loop oracle on a random offset vector.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..x.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xr = OffsetVector::new(data, x.m, x.n, x.anchor_hash).unwrap();
        let human = s.body.surface_points(&s.inst.body, &s.config.human_anchors).unwrap();
        let mut oracle = 0.0;
        for i in 0..xr.m {
            for j in 0..xr.n {
                for a in 0..3 {
                    let pj = s.inst.object_pose.rotation * s.anchors[j] + s.inst.object_pose.translation;
                    let e = human[i][a] + xr.data[3 * (i * xr.n + j) + a] - pj[a];
                    oracle += e * e;
                }
            }
        }
        let l = loss_ho_offset(&s.body, &s.inst, &xr, &s.config, &s.anchors).unwrap();
        assert!((l - oracle).abs() < 1e-10 * oracle.max(1.0));
    }

    #[test]
    fn lm_gradient_matches_fd() {
        let s = scene(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = exact_offsets(&s);
        let data: Vec<f64> = x.data.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
        let xr = OffsetVector::new(data, x.m, x.n, x.anchor_hash).unwrap();
        let stencil = s.body.stencil(&s.config.human_anchors).unwrap();
        let sys = lm_system(&s.body, &s.inst.body, &s.inst.object_pose, &stencil, &xr, &s.anchors).unwrap();
        let pb = sys.grad.len() - 6;
        let f = |delta: &DVector<f64>| {
            let (p, o) = apply_step(&s.inst.body, &s.inst.object_pose, delta);
            let human = s.body.surface_points(&p, &s.config.human_anchors).unwrap();
            offset_objective(&human, &xr, &s.anchors, &o)
        };
        for k in (0..pb + 6).step_by(5).chain(pb..pb + 6) {
            let mut dp = DVector::zeros(pb + 6);
            dp[k] = 1e-5;
            let fd = (f(&dp) - f(&-dp.clone())) / 2e-5;
            let an = 2.0 * sys.grad[k];
            assert!(
                (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-6),
                "col {k}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn recover_noop_and_object_only() {
        let s = scene(5);
        let x = exact_offsets(&s);
        let opt = OptimConfig::default();
        let r = recover_instance(&s.body, &x, &s.inst, &s.config, &s.anchors, &opt).unwrap();
        assert!(r.loss <= r.initial_loss);
        assert!((r.instance.object_pose.translation - s.inst.object_pose.translation).norm() < 1e-8);

        let mut init = s.inst.clone();
        init.object_pose = init
            .object_pose
            .perturbed(&Vec3::new(0.05, -0.03, 0.02), &Vec3::new(0.02, 0.01, -0.03));
        let r = recover_instance(&s.body, &x, &init, &s.config, &s.anchors, &opt).unwrap();
        let closed = crate::rigid::init_object_pose(&s.body, &s.inst.body, &x, &s.config, &s.template, 0).unwrap();
        assert!(r.instance.object_pose.rotation_error(&closed.pose) < 1e-4);
        assert!((r.instance.object_pose.translation - closed.pose.translation).norm() < 1e-4);
    }

    #[test]
    fn recover_perturbed_pose() {
        let s = scene(7);
        let x = exact_offsets(&s);
        let mut init = s.inst.clone();
        for j in [5usize, 11, 14] {
            init.body.theta[j] += Vec3::new(0.2, 0.0, 0.0);
        }
        let anchors_of = |inst: &HOIInstance| {
            let mut p = s.body.surface_points(&inst.body, &s.config.human_anchors).unwrap();
            p.extend(inst.object_pose.apply_all(&s.anchors));
            p
        };
        let truth = anchors_of(&s.inst);
        let rmse = |p: &[Vec3]| {
            (p.iter().zip(&truth).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / p.len() as f64).sqrt()
        };
        let before = rmse(&anchors_of(&init));
        let r = recover_instance(&s.body, &x, &init, &s.config, &s.anchors, &OptimConfig::default()).unwrap();
        let after = rmse(&anchors_of(&r.instance));
        assert!(after < 0.1 * before, "{after} vs {before}");
    }

    #[test]
    fn reprojection_examples() {
        let s = scene(9);
        let c = cam();
        let joints = s.body.joints_3d(&s.inst.body).unwrap();
        let mut corr = Vec::new();
        for (k, p) in s.anchors.iter().enumerate() {
            corr.push(Correspondence {
                x3d: *p,
                x2d: c.project(&s.inst.object_pose.apply(p)).unwrap(),
                w2d: Vec2::new(0.5, 0.1 * k as f64),
            });
        }
        let mut ev = Evidence2D {
            joints_2d: joints.iter().map(|j| c.project(j).unwrap()).collect(),
            confidence: vec![1.0; joints.len()],
            obj_corr: corr,
        };
        let l = loss_reprojection(&s.body, &s.inst, &c, &ev).unwrap();
        assert!(l.l_j.abs() < 1e-9 && l.l_coor.abs() < 1e-9);
        ev.joints_2d[3].x += 1.0;
        let l = loss_reprojection(&s.body, &s.inst, &c, &ev).unwrap();
        assert!((l.l_j - 1.0).abs() < 1e-9);
        let behind = c.with_translation(Vec3::new(0.0, 0.0, -10.0));
        assert!(loss_reprojection(&s.body, &s.inst, &behind, &ev).is_err());
    }

    fn post_fixture(seed: u64) -> (Scene, FlowModel, LatentRelationSpace, Camera, Evidence2D, Vec<f64>) {
        let s = scene(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = exact_offsets(&s);
        let offsets: Vec<OffsetVector> = (0..12)
            .map(|_| {
                let d = x.data.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
                OffsetVector::new(d, x.m, x.n, x.anchor_hash).unwrap()
            })
            .collect();
        let space = crate::relation::build_latent_space(&offsets, 4, 0).unwrap();
        let dims = crate::flow::FlowDims {
            joints: 16,
            shape_dims: 4,
            k: 4,
            cond_dim: 7,
            hidden: 16,
            blocks: 2,
        };
        let mut flow = FlowModel::new(dims, seed).unwrap();
        let p: Vec<f64> = flow
            .params()
            .iter()
            .map(|v| v + rng.random_range(-0.05..0.05))
            .collect();
        flow.set_params(&p).unwrap();
        let c = cam();
        let joints = s.body.joints_3d(&s.inst.body).unwrap();
        let ev = Evidence2D {
            joints_2d: joints
                .iter()
                .map(|j| c.project(j).unwrap() + Vec2::new(3.3, -2.1))
                .collect(),
            confidence: (0..joints.len()).map(|k| 0.2 + 0.05 * k as f64).collect(),
            obj_corr: s
                .anchors
                .iter()
                .map(|p| Correspondence {
                    x3d: *p,
                    x2d: c.project(&s.inst.object_pose.apply(p)).unwrap() + Vec2::new(-1.7, 2.9),
                    w2d: Vec2::new(0.6, 0.3),
                })
                .collect(),
        };
        let cond = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        (s, flow, space, c, ev, cond)
    }

    #[test]
    fn post_gradient_matches_fd() {
        let (s, flow, space, c, ev, cond) = post_fixture(11);
        let opt = OptimConfig::default();
        let problem = PostProblem::new(&s.body, &flow, &space, &s.config, &s.anchors, &c, &ev, &cond, &opt).unwrap();
        let mut state = problem.initial_state(&s.inst, c.translation).unwrap();
        state.z_gamma = vec![0.3, -0.2, 0.1, 0.4];
        let f = |v: &[f64]| {
            let (t, g) = problem.evaluate(&state.with_flat(v))?;
            Ok((t.total, g.flatten()))
        };
        let worst = crate::flow::grad_check(&f, &state.flat_at_zero_increment(), 1e-6, None).unwrap();
        assert!(worst < 1e-3, "relative gradient error {worst}");
    }

    #[test]
    fn post_optimize_reduces_and_is_deterministic() {
        let (s, flow, space, c, ev, cond) = post_fixture(13);
        let opt = OptimConfig {
            post_iters: 60,
            ..OptimConfig::default()
        };
        let mut init = s.inst.clone();
        init.object_pose.translation += Vec3::new(0.05, 0.0, 0.0);
        let a = post_optimize(
            &s.body, &init, &flow, &space, &s.config, &s.anchors, &c, &ev, &cond, &opt,
        )
        .unwrap();
        let b = post_optimize(
            &s.body, &init, &flow, &space, &s.config, &s.anchors, &c, &ev, &cond, &opt,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.best.total < a.initial.total);
        assert!(!a.diverged);
        assert_eq!(a.camera.translation, c.translation);
        let frozen = OptimConfig {
            freeze_beta: true,
            ..opt.clone()
        };
        let r = post_optimize(
            &s.body, &init, &flow, &space, &s.config, &s.anchors, &c, &ev, &cond, &frozen,
        )
        .unwrap();
        assert_eq!(r.instance.body.beta, init.body.beta);
    }

    #[test]
    fn post_stationary_at_truth_and_ablation_decomposes() {
        let (s, flow, space, c, mut ev, cond) = post_fixture(17);
        let tcam = c.translation;
        let joints = s.body.joints_3d(&s.inst.body).unwrap();
        ev.joints_2d = joints.iter().map(|j| c.project(j).unwrap()).collect();
        for corr in ev.obj_corr.iter_mut() {
            corr.x2d = c.project(&s.inst.object_pose.apply(&corr.x3d)).unwrap();
        }
        let opt = OptimConfig {
            lambda_theta: 0.0,
            lambda_gamma: 0.0,
            lambda_ho: 0.0,
            post_iters: 20,
            ..OptimConfig::default()
        };
        let r = post_optimize(
            &s.body, &s.inst, &flow, &space, &s.config, &s.anchors, &c, &ev, &cond, &opt,
        )
        .unwrap();
        assert!(r.initial.total < 1e-6);
        assert!(r.instance.object_pose.rotation_error(&s.inst.object_pose) < 1e-9);
        let truth = s.body.joints_3d(&s.inst.body).unwrap();
        let got = s.body.joints_3d(&r.instance.body).unwrap();
        assert!(truth.iter().zip(&got).all(|(a, b)| (a - b).norm() < 1e-6));
        assert_eq!(r.camera.translation, tcam);

        let ablate = OptimConfig {
            lambda_gamma: 0.0,
            lambda_ho: 0.0,
            ..OptimConfig::default()
        };
        let problem = PostProblem::new(&s.body, &flow, &space, &s.config, &s.anchors, &c, &ev, &cond, &ablate).unwrap();
        let mut state = problem.initial_state(&s.inst, tcam).unwrap();
        state.translation += Vec3::new(0.02, 0.01, 0.0);
        state.z_gamma = vec![0.5; 4];
        let (t, g) = problem.evaluate(&state).unwrap();
        let expect = ablate.lambda_j * t.l_j + t.lambda_coor * t.l_coor + ablate.lambda_theta * t.prior_theta;
        assert_eq!(t.total, expect);
        assert!(g.z_gamma.iter().all(|v| *v == 0.0));
    }
}
