//! Synthetic HOI scenes: primitive object templates, archetype-driven body and
//! object placement, free-viewport cameras, noisy 2D evidence and the
//! observation features the flows are conditioned on.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::body::{BodyModel, BodyParams};
use crate::fit::{Camera, Correspondence, Evidence2D, HOIInstance, Vec2};
use crate::flow::pose6d_from_params;
use crate::flow::train::TrainSet;
use crate::geom::{locate_all, sample_surface, unit_cube, Mesh, SurfacePoint, Vec3};
use crate::io::{mix_seed, BinReader, BinWriter};
use crate::relation::{compute_offsets, AnchorConfig, LatentRelationSpace, ObjectAnchors, OffsetVector};
use crate::rigid::RigidPose;
use crate::rotation::{exp_so3, sixd_from_matrix};
use crate::{Error, Result};

pub const CATEGORY_NAMES: [&str; 4] = ["box", "sphere", "cylinder", "torus"];

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTemplate {
    pub category: u32,
    /// Centered at the origin.
    pub mesh: Mesh,
    pub anchors: Vec<SurfacePoint>,
}

impl ObjectTemplate {
    pub fn bounding_radius(&self) -> f64 {
        self.mesh.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn anchor_positions(&self) -> Result<Vec<Vec3>> {
        locate_all(&self.mesh, &self.anchors)
    }
}

fn uv_sphere(radius: f64, rings: usize, segments: usize) -> Mesh {
    let mut vertices = vec![Vec3::new(0.0, radius, 0.0)];
    for r in 1..rings {
        let phi = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Vec3::new(phi.sin() * a.cos(), phi.cos(), phi.sin() * a.sin()) * radius);
        }
    }
    vertices.push(Vec3::new(0.0, -radius, 0.0));
    let bottom = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + r * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(0, s + 1), ring(0, s)]);
    }
    for r in 0..rings - 2 {
        for s in 0..segments {
            faces.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
        }
    }
    for s in 0..segments {
        faces.push([bottom, ring(rings - 2, s), ring(rings - 2, s + 1)]);
    }
    Mesh { vertices, faces }
}

fn cylinder(radius: f64, height: f64, segments: usize) -> Mesh {
    let h = height / 2.0;
    let mut vertices = vec![Vec3::new(0.0, h, 0.0), Vec3::new(0.0, -h, 0.0)];
    for y in [h, -h] {
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Vec3::new(radius * a.cos(), y, radius * a.sin()));
        }
    }
    let top = |s: usize| 2 + s % segments;
    let bot = |s: usize| 2 + segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, top(s + 1), top(s)]);
        faces.push([1, bot(s), bot(s + 1)]);
        faces.push([top(s), top(s + 1), bot(s + 1)]);
        faces.push([top(s), bot(s + 1), bot(s)]);
    }
    Mesh { vertices, faces }
}

fn torus(major: f64, minor: f64, around: usize, tube: usize) -> Mesh {
    let mut vertices = Vec::with_capacity(around * tube);
    for i in 0..around {
        let u = 2.0 * PI * i as f64 / around as f64;
        for j in 0..tube {
            let v = 2.0 * PI * j as f64 / tube as f64;
            let r = major + minor * v.cos();
            vertices.push(Vec3::new(r * u.cos(), minor * v.sin(), r * u.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % around) * tube + j % tube;
    let mut faces = Vec::new();
    for i in 0..around {
        for j in 0..tube {
            faces.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
        }
    }
    Mesh { vertices, faces }
}

/// Fixed-size primitive for a category: box 0.4x0.3x0.3, sphere r 0.15,
/// cylinder r 0.12 h 0.45, torus 0.2/0.05.
pub fn primitive_mesh(category: u32) -> Result<Mesh> {
    let mesh = match category {
        0 => {
            let c = unit_cube();
            let s = Matrix3::from_diagonal(&Vec3::new(0.4, 0.3, 0.3));
            c.transformed(&s, &Vec3::zeros())
        }
        1 => uv_sphere(0.15, 12, 16),
        2 => cylinder(0.12, 0.45, 16),
        3 => torus(0.2, 0.05, 20, 8),
        _ => return Err(Error::InvalidArgument(format!("unknown object category {category}"))),
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn object_templates(count: usize, anchors: usize, seed: u64) -> Result<Vec<ObjectTemplate>> {
    if count == 0 || count > CATEGORY_NAMES.len() {
        return Err(Error::InvalidArgument(format!(
            "category count must be in 1..={}",
            CATEGORY_NAMES.len()
        )));
    }
    (0..count as u32)
        .map(|c| {
            let mesh = primitive_mesh(c)?;
            let anchors = sample_surface(&mesh, anchors, mix_seed(seed, 100 + c as u64))?;
            Ok(ObjectTemplate {
                category: c,
                mesh,
                anchors,
            })
        })
        .collect()
}

/// Rebuilds the templates an anchor config was made from.
pub fn templates_from_config(config: &AnchorConfig) -> Result<Vec<ObjectTemplate>> {
    config
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if o.category as usize != i {
                return Err(Error::Format("anchor config categories are not ordered".into()));
            }
            let mesh = primitive_mesh(o.category)?;
            if mesh.faces.len() != o.template_faces {
                return Err(Error::InvalidMesh(format!(
                    "category {} template has {} faces, anchors expect {}",
                    o.category,
                    mesh.faces.len(),
                    o.template_faces
                )));
            }
            Ok(ObjectTemplate {
                category: o.category,
                mesh,
                anchors: o.anchors.clone(),
            })
        })
        .collect()
}

/// Samples `m` body anchors and wraps the templates' anchors into one config.
pub fn build_anchor_config(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    m: usize,
    seed: u64,
) -> Result<AnchorConfig> {
    let human = sample_surface(&body.template_mesh, m, mix_seed(seed, 1))?;
    let objects = templates
        .iter()
        .map(|t| ObjectAnchors {
            category: t.category,
            template_faces: t.mesh.faces.len(),
            anchors: t.anchors.clone(),
        })
        .collect();
    AnchorConfig::new(seed, body.template_mesh.faces.len(), human, objects)
}

/// Interaction style: a base pose plus where the object sits relative to one joint.
struct Archetype {
    pose: &'static [(usize, [f64; 3])],
    attach: usize,
    /// In the attachment joint's global frame.
    offset: [f64; 3],
}

// Joint indices of the default body: 1 spine_mid, 4/7 shoulders, 8 r_elbow,
// 9 r_wrist, 10/13 hips, 11/14 knees.
const ARCHETYPES: [Archetype; 3] = [
    // Standing, holding the object in front with the right forearm.
    Archetype {
        pose: &[(4, [0.0, 0.0, -1.3]), (7, [0.0, 0.0, 1.3]), (8, [0.0, 1.4, 0.0])],
        attach: 9,
        offset: [-0.2, 0.0, 0.0],
    },
    // Reaching forward with a slight lean.
    Archetype {
        pose: &[(1, [0.3, 0.0, 0.0]), (4, [0.0, 0.0, -1.3]), (7, [0.0, 1.4, 0.0])],
        attach: 9,
        offset: [-0.25, 0.0, 0.0],
    },
    // Sitting on the object.
    Archetype {
        pose: &[
            (4, [0.0, 0.0, -1.3]),
            (7, [0.0, 0.0, 1.3]),
            (10, [-1.5, 0.0, 0.0]),
            (13, [-1.5, 0.0, 0.0]),
            (11, [1.5, 0.0, 0.0]),
            (14, [1.5, 0.0, 0.0]),
        ],
        attach: 0,
        offset: [0.0, -0.3, 0.1],
    },
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceNoise {
    pub joint_sigma: f64,
    pub beta_sigma: f64,
    pub position_sigma: f64,
    pub orientation_sigma: f64,
}

impl Default for InstanceNoise {
    fn default() -> Self {
        Self {
            joint_sigma: 0.15,
            beta_sigma: 0.5,
            position_sigma: 0.05,
            orientation_sigma: 0.1,
        }
    }
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ) * sigma
}

fn sample_instance(body: &BodyModel, category: u32, noise: &InstanceNoise, seed: u64) -> Result<HOIInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = &ARCHETYPES[rng.random_range(0..ARCHETYPES.len())];
    let mut params = body.zero_params();
    for &(j, w) in arch.pose {
        if j < params.theta.len() {
            params.theta[j] = Vec3::from(w);
        }
    }
    for w in params.theta.iter_mut().skip(1) {
        *w += gaussian3(&mut rng, noise.joint_sigma);
    }
    for b in params.beta.iter_mut() {
        *b = rng.sample::<f64, _>(StandardNormal) * noise.beta_sigma;
    }
    let kin = body.kinematics(&params)?;
    let attach = arch.attach.min(body.joint_count() - 1);
    let frame = kin.rotations[attach];
    let rotation = frame * exp_so3(&gaussian3(&mut rng, noise.orientation_sigma));
    let mut translation =
        kin.positions[attach] + frame * Vec3::from(arch.offset) + gaussian3(&mut rng, noise.position_sigma);

    let center = body.posed_mesh(&kin).centroid();
    let limit = 2.0 * body.rest_height();
    let gap = translation - center;
    if gap.norm() > limit {
        translation = center + gap * (limit / gap.norm());
    }
    Ok(HOIInstance {
        body: params,
        object_pose: RigidPose { rotation, translation },
        category,
    })
}

/// Draws `count` instances; instance `i` has category `i % templates.len()`
/// and its own seed `mix_seed(seed, i)`.
pub fn generate_instances(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    count: usize,
    seed: u64,
    noise: &InstanceNoise,
) -> Result<Vec<HOIInstance>> {
    if count == 0 || templates.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one instance and one template".into(),
        ));
    }
    (0..count)
        .map(|i| {
            let cat = templates[i % templates.len()].category;
            sample_instance(body, cat, noise, mix_seed(seed, i as u64))
        })
        .collect()
}

/// Midpoint of the posed body centroid and the object center.
pub fn instance_centroid(body: &BodyModel, inst: &HOIInstance) -> Result<Vec3> {
    Ok((body.forward(&inst.body)?.centroid() + inst.object_pose.translation) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }
}

/// World-to-camera rotation looking from `eye` at `target` with world +y up.
pub fn look_at(eye: &Vec3, target: &Vec3) -> Matrix3<f64> {
    let f = (target - eye).normalize();
    let x = f.cross(&Vec3::y()).normalize();
    let y = f.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), f.transpose()])
}

/// Cameras on a sphere of radius 2.5-3.5 m around `centroid`, uniform
/// azimuth, elevation in [-10, 45] degrees, all looking at the centroid.
pub fn free_viewport_cameras(centroid: &Vec3, views: usize, seed: u64, intr: &Intrinsics) -> Result<Vec<Camera>> {
    if views == 0 {
        return Err(Error::InvalidArgument("views must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..views)
        .map(|_| {
            let radius = rng.random_range(2.5..3.5);
            let az = rng.random_range(0.0..2.0 * PI);
            let el = rng.random_range(-10f64.to_radians()..45f64.to_radians());
            let eye = centroid + Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * radius;
            let r = look_at(&eye, centroid);
            Camera::new(intr.fx, intr.fy, intr.cx, intr.cy, r, -(r * eye))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub joint_sigma: f64,
    pub corr_sigma: f64,
    pub corr_count: usize,
    /// Probability that a view's coordinate map comes from a wrong object pose.
    pub bad_map_prob: f64,
    pub bad_rotation: f64,
    pub bad_translation: f64,
    /// Total correspondence weight of a residual-free map.
    pub weight_budget: f64,
    /// Extra joint noise multiplier per unit of occlusion score.
    pub occlusion_noise_gain: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            joint_sigma: 2.0,
            corr_sigma: 2.0,
            corr_count: 64,
            bad_map_prob: 0.2,
            bad_rotation: 0.35,
            bad_translation: 0.08,
            weight_budget: 20.0,
            occlusion_noise_gain: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            joint_sigma: 0.0,
            corr_sigma: 0.0,
            bad_map_prob: 0.0,
            ..Self::default()
        }
    }
}

/// Occlusion score in [0, 1] of `p` seen from `eye` behind a sphere.
fn occlusion_score(eye: &Vec3, p: &Vec3, center: &Vec3, radius: f64) -> f64 {
    let ray = p - eye;
    let len = ray.norm();
    if len <= 0.0 || radius <= 0.0 {
        return 0.0;
    }
    let u = ray / len;
    let along = (center - eye).dot(&u);
    if along <= 0.0 || along >= len {
        return 0.0;
    }
    let d = (center - eye - u * along).norm();
    if d >= radius {
        0.0
    } else {
        (2.0 * (1.0 - d / radius)).min(1.0)
    }
}

/// Evidence for one view plus whether its coordinate map was corrupted.
pub fn make_evidence(
    body: &BodyModel,
    inst: &HOIInstance,
    template: &ObjectTemplate,
    cam: &Camera,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<(Evidence2D, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joints = body.joints_3d(&inst.body)?;
    let eye = cam.center();
    let radius = template.bounding_radius();
    let mut joints_2d = Vec::with_capacity(joints.len());
    let mut confidence = Vec::with_capacity(joints.len());
    for j in &joints {
        let score = occlusion_score(&eye, j, &inst.object_pose.translation, radius);
        let sigma = noise.joint_sigma * (1.0 + noise.occlusion_noise_gain * score);
        match cam.project(j) {
            Some(px) => {
                let n = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * sigma;
                joints_2d.push(px + n);
                confidence.push((1.0 - score).max(0.05));
            }
            None => {
                joints_2d.push(Vec2::new(cam.cx, cam.cy));
                confidence.push(0.0);
            }
        }
    }

    let bad = noise.bad_map_prob > 0.0 && rng.random::<f64>() < noise.bad_map_prob;
    let source = if bad {
        let w = gaussian3(&mut rng, 1.0).normalize() * noise.bad_rotation;
        let t = gaussian3(&mut rng, 1.0).normalize() * noise.bad_translation;
        inst.object_pose.perturbed(&w, &t)
    } else {
        inst.object_pose.clone()
    };
    let samples = sample_surface(&template.mesh, noise.corr_count.max(1), mix_seed(seed, 1))?;
    let points = locate_all(&template.mesh, &samples)?;
    let scale = (2.0 * noise.corr_sigma).max(1.0);
    let unit = noise.weight_budget / (2 * noise.corr_count.max(1)) as f64;
    let mut obj_corr = Vec::with_capacity(points.len());
    for p in points {
        let (Some(truth), Some(seen)) = (cam.project(&inst.object_pose.apply(&p)), cam.project(&source.apply(&p)))
        else {
            continue;
        };
        let x2d = seen + Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * noise.corr_sigma;
        let r = x2d - truth;
        let w2d = r.map(|v| unit * (-v.abs() / scale).exp());
        obj_corr.push(Correspondence { x3d: p, x2d, w2d });
    }
    Ok((
        Evidence2D {
            joints_2d,
            confidence,
            obj_corr,
        },
        bad,
    ))
}

/// Length of the observation feature.
pub fn feature_dim(joints: usize, categories: usize) -> usize {
    3 * joints + 11 + categories
}

/// Observation feature, layout:
/// `[0, 2J)` joints scaled to [-1, 1] by the half image size,
/// `[2J, 3J)` joint confidences,
/// then the weighted correspondence centroid (2), its spread `std_u, std_v,
/// corr_uv` (3), the 6D camera rotation (6) and the category one-hot (C).
pub fn make_feature(
    ev: &Evidence2D,
    category: u32,
    categories: usize,
    cam_rotation: &Matrix3<f64>,
    intr: &Intrinsics,
) -> Result<Vec<f64>> {
    ev.validate()?;
    if category as usize >= categories {
        return Err(Error::InvalidArgument(format!(
            "category {category} outside 0..{categories}"
        )));
    }
    let (hw, hh) = (intr.width / 2.0, intr.height / 2.0);
    let norm = |p: &Vec2| Vector2::new((p.x - hw) / hw, (p.y - hh) / hh);
    let mut c = Vec::with_capacity(feature_dim(ev.joints_2d.len(), categories));
    for p in &ev.joints_2d {
        let q = norm(p);
        c.extend([q.x, q.y]);
    }
    c.extend(&ev.confidence);

    // Sorted so the summary does not depend on correspondence order.
    let mut pts: Vec<(f64, Vector2<f64>)> = ev.obj_corr.iter().map(|k| (k.w2d.x + k.w2d.y, norm(&k.x2d))).collect();
    pts.sort_by(|a, b| {
        (a.1.x, a.1.y, a.0)
            .partial_cmp(&(b.1.x, b.1.y, b.0))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let total: f64 = pts.iter().map(|p| p.0).sum();
    let weight = |w: f64| {
        if total > 0.0 {
            w / total
        } else {
            1.0 / pts.len().max(1) as f64
        }
    };
    let mut mean = Vector2::zeros();
    for (w, p) in &pts {
        mean += p * weight(*w);
    }
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    for (w, p) in &pts {
        let d = p - mean;
        let a = weight(*w);
        suu += a * d.x * d.x;
        svv += a * d.y * d.y;
        suv += a * d.x * d.y;
    }
    let (su, sv) = (suu.sqrt(), svv.sqrt());
    let rho = if su > 1e-12 && sv > 1e-12 { suv / (su * sv) } else { 0.0 };
    c.extend([mean.x, mean.y, su, sv, rho]);
    c.extend(sixd_from_matrix(cam_rotation));
    c.extend((0..categories).map(|k| if k == category as usize { 1.0 } else { 0.0 }));
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub camera: Camera,
    pub evidence: Evidence2D,
    pub feature: Vec<f64>,
    pub bad_map: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub instance: HOIInstance,
    pub views: Vec<ViewRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub views: usize,
    pub seed: u64,
    pub split: Split,
    pub instance_noise: InstanceNoise,
    pub noise: NoiseConfig,
    pub intrinsics: Intrinsics,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            views: 12,
            seed: 0,
            split: Split::Train,
            instance_noise: InstanceNoise::default(),
            noise: NoiseConfig::default(),
            intrinsics: Intrinsics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub body_hash: u64,
    pub anchor_hash: u64,
    pub split: Split,
    pub seed: u64,
    pub categories: usize,
    pub intrinsics: Intrinsics,
    pub records: Vec<SynthRecord>,
}

const DATASET_MAGIC: &[u8; 4] = b"HODS";
const DATASET_VERSION: u16 = 1;

fn make_record(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    instance: HOIInstance,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SynthRecord> {
    let template = &templates[instance.category as usize];
    let centroid = instance_centroid(body, &instance)?;
    let cams = free_viewport_cameras(&centroid, cfg.views, mix_seed(seed, 1), &cfg.intrinsics)?;
    let views = cams
        .into_iter()
        .enumerate()
        .map(|(v, camera)| {
            let (evidence, bad_map) = make_evidence(
                body,
                &instance,
                template,
                &camera,
                &cfg.noise,
                mix_seed(seed, 10 + v as u64),
            )?;
            let feature = make_feature(
                &evidence,
                instance.category,
                templates.len(),
                &camera.rotation,
                &cfg.intrinsics,
            )?;
            Ok(ViewRecord {
                camera,
                evidence,
                feature,
                bad_map,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthRecord { instance, views })
}

/// Runs `f(i)` for `i in 0..n` on up to `jobs` threads, results in index order.
pub fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|t| {
                let f = &f;
                s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Full dataset: a pure function of the body, templates, anchor config and `cfg`.
pub fn generate_dataset(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    config: &AnchorConfig,
    cfg: &SynthConfig,
    jobs: usize,
) -> Result<SynthDataset> {
    if cfg.views == 0 {
        return Err(Error::InvalidArgument("views must be >= 1".into()));
    }
    for (i, t) in templates.iter().enumerate() {
        if t.category as usize != i {
            return Err(Error::InvalidArgument("templates must be ordered by category".into()));
        }
    }
    let instances = generate_instances(body, templates, cfg.count, cfg.seed, &cfg.instance_noise)?;
    let records = parallel_map(instances.len(), jobs, |i| {
        make_record(
            body,
            templates,
            instances[i].clone(),
            cfg,
            mix_seed(cfg.seed ^ 0x5EED_0F_7E05, i as u64),
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        body_hash: body.hash(),
        anchor_hash: config.hash(),
        split: cfg.split,
        seed: cfg.seed,
        categories: templates.len(),
        intrinsics: cfg.intrinsics,
        records,
    })
}

fn write_vec3(w: &mut BinWriter, v: &Vec3) {
    for x in v.iter() {
        w.f64(*x);
    }
}

fn read_vec3(r: &mut BinReader) -> Result<Vec3> {
    Ok(Vec3::new(r.f64()?, r.f64()?, r.f64()?))
}

fn write_mat3(w: &mut BinWriter, m: &Matrix3<f64>) {
    for x in m.iter() {
        w.f64(*x);
    }
}

fn read_mat3(r: &mut BinReader) -> Result<Matrix3<f64>> {
    let mut m = Matrix3::zeros();
    for x in m.iter_mut() {
        *x = r.f64()?;
    }
    Ok(m)
}

pub fn write_instance(w: &mut BinWriter, inst: &HOIInstance) {
    w.u32(inst.category);
    w.f64s(&inst.body.to_flat());
    w.u32(inst.body.beta.len() as u32);
    write_mat3(w, &inst.object_pose.rotation);
    write_vec3(w, &inst.object_pose.translation);
}

pub fn read_instance(r: &mut BinReader) -> Result<HOIInstance> {
    let category = r.u32()?;
    let flat = r.f64s()?;
    let b = r.u32()? as usize;
    if flat.len() < b || (flat.len() - b) % 3 != 0 {
        return Err(Error::Format("instance parameter block has a bad length".into()));
    }
    let body = BodyParams::from_flat(&flat, (flat.len() - b) / 3, b)?;
    let rotation = read_mat3(r)?;
    let translation = read_vec3(r)?;
    Ok(HOIInstance {
        body,
        object_pose: RigidPose::new(rotation, translation)?,
        category,
    })
}

pub fn write_camera(w: &mut BinWriter, c: &Camera) {
    for v in [c.fx, c.fy, c.cx, c.cy] {
        w.f64(v);
    }
    write_mat3(w, &c.rotation);
    write_vec3(w, &c.translation);
}

pub fn read_camera(r: &mut BinReader) -> Result<Camera> {
    let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let rot = read_mat3(r)?;
    let t = read_vec3(r)?;
    Camera::new(fx, fy, cx, cy, rot, t)
}

fn write_evidence(w: &mut BinWriter, ev: &Evidence2D) {
    let flat: Vec<f64> = ev.joints_2d.iter().flat_map(|p| [p.x, p.y]).collect();
    w.f64s(&flat);
    w.f64s(&ev.confidence);
    w.u32(ev.obj_corr.len() as u32);
    for c in &ev.obj_corr {
        write_vec3(w, &c.x3d);
        for v in [c.x2d.x, c.x2d.y, c.w2d.x, c.w2d.y] {
            w.f64(v);
        }
    }
}

fn read_evidence(r: &mut BinReader) -> Result<Evidence2D> {
    let flat = r.f64s()?;
    if flat.len() % 2 != 0 {
        return Err(Error::Format("odd joint coordinate count".into()));
    }
    let joints_2d = flat.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
    let confidence = r.f64s()?;
    let n = r.u32()? as usize;
    let mut obj_corr = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let x3d = read_vec3(r)?;
        let x2d = Vec2::new(r.f64()?, r.f64()?);
        let w2d = Vec2::new(r.f64()?, r.f64()?);
        obj_corr.push(Correspondence { x3d, x2d, w2d });
    }
    let ev = Evidence2D {
        joints_2d,
        confidence,
        obj_corr,
    };
    ev.validate()?;
    Ok(ev)
}

impl SynthDataset {
    pub fn view_count(&self) -> usize {
        self.records.iter().map(|r| r.views.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new();
        w.magic(DATASET_MAGIC).u16(DATASET_VERSION);
        w.u64(self.body_hash);
        w.u64(self.anchor_hash);
        w.u8(matches!(self.split, Split::Test) as u8);
        w.u64(self.seed);
        w.u32(self.categories as u32);
        let i = &self.intrinsics;
        for v in [i.fx, i.fy, i.cx, i.cy, i.width, i.height] {
            w.f64(v);
        }
        w.u64(self.records.len() as u64);
        for rec in &self.records {
            let mut rw = BinWriter::new();
            write_instance(&mut rw, &rec.instance);
            rw.u32(rec.views.len() as u32);
            for v in &rec.views {
                write_camera(&mut rw, &v.camera);
                write_evidence(&mut rw, &v.evidence);
                rw.f64s(&v.feature);
                rw.u8(v.bad_map as u8);
            }
            w.bytes(&rw.into_bytes());
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(DATASET_MAGIC)?;
        r.version(DATASET_VERSION)?;
        let body_hash = r.u64()?;
        let anchor_hash = r.u64()?;
        let split = if r.u8()? == 1 { Split::Test } else { Split::Train };
        let seed = r.u64()?;
        let categories = r.u32()? as usize;
        let intrinsics = Intrinsics {
            fx: r.f64()?,
            fy: r.f64()?,
            cx: r.f64()?,
            cy: r.f64()?,
            width: r.f64()?,
            height: r.f64()?,
        };
        let count = r.usize()?;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let block = r.bytes()?;
            let mut rr = BinReader::new(&block);
            let instance = read_instance(&mut rr)?;
            let nv = rr.u32()? as usize;
            let mut views = Vec::with_capacity(nv.min(1 << 12));
            for _ in 0..nv {
                let camera = read_camera(&mut rr)?;
                let evidence = read_evidence(&mut rr)?;
                let feature = rr.f64s()?;
                let bad_map = rr.u8()? == 1;
                views.push(ViewRecord {
                    camera,
                    evidence,
                    feature,
                    bad_map,
                });
            }
            rr.finish()?;
            records.push(SynthRecord { instance, views });
        }
        r.finish()?;
        Ok(Self {
            body_hash,
            anchor_hash,
            split,
            seed,
            categories,
            intrinsics,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// One JSON object per record, for debugging.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, rec) in self.records.iter().enumerate() {
            let inst = &rec.instance;
            let views: Vec<_> = rec
                .views
                .iter()
                .map(|v| {
                    json!({
                        "rotation": v.camera.rotation.transpose().as_slice(),
                        "translation": v.camera.translation.as_slice(),
                        "intrinsics": [v.camera.fx, v.camera.fy, v.camera.cx, v.camera.cy],
                        "joints_2d": v.evidence.joints_2d.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
                        "confidence": v.evidence.confidence,
                        "correspondences": v.evidence.obj_corr.len(),
                        "weight_sum": v.evidence.weight_sum(),
                        "bad_map": v.bad_map,
                        "feature": v.feature,
                    })
                })
                .collect();
            let line = json!({
                "index": i,
                "split": self.split.name(),
                "category": inst.category,
                "category_name": CATEGORY_NAMES.get(inst.category as usize).copied().unwrap_or("unknown"),
                "theta": inst.body.theta.iter().map(|w| [w.x, w.y, w.z]).collect::<Vec<_>>(),
                "beta": inst.body.beta,
                "object_rotation": inst.object_pose.rotation.transpose().as_slice(),
                "object_translation": inst.object_pose.translation.as_slice(),
                "views": views,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn check_hashes(&self, body: &BodyModel, config: &AnchorConfig) -> Result<()> {
        if self.body_hash != body.hash() {
            return Err(Error::HashMismatch {
                what: "dataset body model",
                expected: self.body_hash,
                got: body.hash(),
            });
        }
        if self.anchor_hash != config.hash() {
            return Err(Error::HashMismatch {
                what: "dataset anchor config",
                expected: self.anchor_hash,
                got: config.hash(),
            });
        }
        Ok(())
    }
}

/// Ground-truth offsets of one instance, recomputed from the posed meshes.
pub fn instance_offsets(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    config: &AnchorConfig,
    inst: &HOIInstance,
) -> Result<OffsetVector> {
    let template = templates
        .get(inst.category as usize)
        .ok_or_else(|| Error::InvalidArgument(format!("no template for category {}", inst.category)))?;
    let human = body.forward(&inst.body)?;
    compute_offsets(&human, &inst.object_mesh(&template.mesh), config, inst.category)
}

/// Offsets of every instance grouped by category.
pub fn offsets_by_category(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    config: &AnchorConfig,
    dataset: &SynthDataset,
    jobs: usize,
) -> Result<Vec<Vec<OffsetVector>>> {
    let all = parallel_map(dataset.records.len(), jobs, |i| {
        instance_offsets(body, templates, config, &dataset.records[i].instance)
    });
    let mut out = vec![Vec::new(); dataset.categories];
    for (rec, x) in dataset.records.iter().zip(all) {
        out[rec.instance.category as usize].push(x?);
    }
    Ok(out)
}

/// One training column per view: feature, 6D pose, latent code, shape and
/// camera translation (the body root in camera coordinates).
pub fn training_set(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    config: &AnchorConfig,
    spaces: &[LatentRelationSpace],
    dataset: &SynthDataset,
    jobs: usize,
) -> Result<TrainSet> {
    let first = dataset
        .records
        .first()
        .and_then(|r| r.views.first())
        .ok_or_else(|| Error::InvalidArgument("dataset has no views".into()))?;
    let d = first.feature.len();
    let k = spaces
        .first()
        .map(|s| s.k)
        .ok_or_else(|| Error::InvalidArgument("no latent spaces".into()))?;
    if spaces.iter().any(|s| s.k != k) {
        return Err(Error::InvalidArgument("latent spaces must share k".into()));
    }
    let gammas = parallel_map(dataset.records.len(), jobs, |i| -> Result<Vec<f64>> {
        let inst = &dataset.records[i].instance;
        let space = spaces
            .iter()
            .find(|s| s.category == inst.category)
            .ok_or_else(|| Error::InvalidArgument(format!("no latent space for category {}", inst.category)))?;
        Ok(space.project(&instance_offsets(body, templates, config, inst)?)?.gamma)
    });
    let n = dataset.view_count();
    let pd = 6 * (body.joint_count() - 1);
    let b = body.shape_dims();
    let mut set = TrainSet {
        cond: DMatrix::zeros(d, n),
        pose6d: DMatrix::zeros(pd, n),
        gamma: DMatrix::zeros(k, n),
        beta: DMatrix::zeros(b, n),
        tcam: DMatrix::zeros(3, n),
    };
    let mut col = 0;
    for (rec, gamma) in dataset.records.iter().zip(gammas) {
        let gamma = gamma?;
        let pose = pose6d_from_params(&rec.instance.body);
        for v in &rec.views {
            if v.feature.len() != d {
                return Err(Error::Dimension {
                    what: "observation feature",
                    expected: d,
                    got: v.feature.len(),
                });
            }
            set.cond.column_mut(col).copy_from_slice(&v.feature);
            set.pose6d.column_mut(col).copy_from_slice(&pose);
            set.gamma.column_mut(col).copy_from_slice(&gamma);
            set.beta.column_mut(col).copy_from_slice(&rec.instance.body.beta);
            set.tcam
                .column_mut(col)
                .copy_from_slice(v.camera.translation.as_slice());
            col += 1;
        }
    }
    Ok(set)
}
