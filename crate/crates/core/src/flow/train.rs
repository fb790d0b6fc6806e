//! Training objective (NLL of both flows, latent-code L1, pose/shape/camera
//! supervision) with its analytic gradient, and the Adam training loop.

use nalgebra::{DMatrix, Matrix3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FlowModel, FlowTape};
use crate::io::mix_seed;
use crate::optim::{clip_norm, Adam};
use crate::rotation::{matrix_from_sixd, sixd_backward};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_smpl: f64,
    pub lambda_nll: f64,
    pub lambda_gamma: f64,
    pub lambda_exp: f64,
    /// Multiplies the latent-code L1. Latent codes grow like the square root
    /// of the offset dimension, so callers pass 1/sqrt(m*n) to keep the term
    /// comparable across anchor settings.
    pub gamma_scale: f64,
    /// Draws per datum for the sampled expectation terms.
    pub samples: usize,
    pub seed: u64,
    /// Std of Gaussian noise added to 6D pose targets in the NLL term.
    pub pose_noise: f64,
    pub grad_clip: f64,
    /// Samples used for actnorm and head-bias initialization.
    pub init_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 6,
            lambda_smpl: 1.0,
            lambda_nll: 1.0,
            lambda_gamma: 1.0,
            lambda_exp: 1.0,
            gamma_scale: 1.0,
            samples: 2,
            seed: 0,
            pose_noise: 0.01,
            grad_clip: 100.0,
            init_batch: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.init_batch == 0 {
            return Err(Error::InvalidArgument(
                "learning rate, batch size, epochs must be positive".into(),
            ));
        }
        let weights = [
            self.lambda_smpl,
            self.lambda_nll,
            self.lambda_gamma,
            self.lambda_exp,
            self.gamma_scale,
            self.pose_noise,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Column-per-sample training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub cond: DMatrix<f64>,
    pub pose6d: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub tcam: DMatrix<f64>,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.cond.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            cond: self.cond.select_columns(idx),
            pose6d: self.pose6d.select_columns(idx),
            gamma: self.gamma.select_columns(idx),
            beta: self.beta.select_columns(idx),
            tcam: self.tcam.select_columns(idx),
        }
    }

    fn check(&self, model: &FlowModel) -> Result<()> {
        let d = &model.dims;
        let shapes = [
            (self.cond.nrows(), d.cond_dim),
            (self.pose6d.nrows(), d.pose_dim()),
            (self.gamma.nrows(), d.k),
            (self.beta.nrows(), d.shape_dims),
            (self.tcam.nrows(), 3),
        ];
        for (got, expected) in shapes {
            if got != expected {
                return Err(Error::Dimension {
                    what: "training set rows",
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }
}

/// All randomness consumed by one evaluation of the training loss.
#[derive(Debug, Clone)]
pub struct BatchNoise {
    pub pose_jitter: DMatrix<f64>,
    pub z_theta: Vec<DMatrix<f64>>,
    pub z_gamma: Vec<DMatrix<f64>>,
}

impl BatchNoise {
    pub fn sample(model: &FlowModel, batch: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let pd = model.dims.pose_dim();
        let k = model.dims.k;
        let mut randn =
            |r: usize, scale: f64| DMatrix::from_fn(r, batch, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let pose_jitter = randn(pd, cfg.pose_noise);
        let mut z_theta = Vec::new();
        let mut z_gamma = Vec::new();
        for _ in 0..cfg.samples {
            z_theta.push(randn(pd, 1.0));
            z_gamma.push(randn(k, 1.0));
        }
        Self {
            pose_jitter,
            z_theta,
            z_gamma,
        }
    }

    pub fn zero(model: &FlowModel, batch: usize) -> Self {
        Self {
            pose_jitter: DMatrix::zeros(model.dims.pose_dim(), batch),
            z_theta: Vec::new(),
            z_gamma: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub nll: f64,
    pub gamma: f64,
    pub smpl: f64,
}

fn half_log_2pi() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Mean over columns of `0.5 |z|^2 + d/2 log 2pi - ld`.
fn nll_value(z: &DMatrix<f64>, ld: &[f64]) -> f64 {
    let d = z.nrows() as f64;
    let b = z.ncols() as f64;
    z.column_iter()
        .zip(ld)
        .map(|(c, l)| 0.5 * c.norm_squared() + d * half_log_2pi() - l)
        .sum::<f64>()
        / b
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of |R(theta) - R_gt|_1 over joints and columns, with its gradient
/// w.r.t. the 6D input scaled by `w`.
fn rotation_l1(theta: &DMatrix<f64>, gt: &DMatrix<f64>, w: f64) -> (f64, DMatrix<f64>) {
    let mut total = 0.0;
    let mut g = DMatrix::zeros(theta.nrows(), theta.ncols());
    for c in 0..theta.ncols() {
        for j in 0..theta.nrows() / 6 {
            let a: Vec<f64> = (0..6).map(|r| theta[(6 * j + r, c)]).collect();
            let b: Vec<f64> = (0..6).map(|r| gt[(6 * j + r, c)]).collect();
            let diff = matrix_from_sixd(&a) - matrix_from_sixd(&b);
            total += diff.abs().sum();
            let gr = Matrix3::from_fn(|r, cc| w * sign(diff[(r, cc)]));
            let ga = sixd_backward(&a, &gr);
            for r in 0..6 {
                g[(6 * j + r, c)] = ga[r];
            }
        }
    }
    (total, g)
}

fn l1(pred: &DMatrix<f64>, gt: &DMatrix<f64>, w: f64) -> (f64, DMatrix<f64>) {
    let diff = pred - gt;
    (diff.abs().sum(), diff.map(|v| w * sign(v)))
}

struct Decode {
    theta: DMatrix<f64>,
    pose_tape: FlowTape,
    gamma: DMatrix<f64>,
    offset_tape: FlowTape,
}

fn decode(model: &FlowModel, c: &DMatrix<f64>, zt: &DMatrix<f64>, zg: &DMatrix<f64>) -> Result<Decode> {
    let (theta, _, pose_tape) = model.pose_flow.forward(zt, c)?;
    let (gamma, _, offset_tape) = model.offset_flow.forward(zg, &model.offset_condition(c, &theta))?;
    Ok(Decode {
        theta,
        pose_tape,
        gamma,
        offset_tape,
    })
}

/// Evaluates the weighted training loss on `batch` and its gradient w.r.t.
/// all model parameters (flat, in [`FlowModel::params`] order).
pub fn train_loss(
    model: &FlowModel,
    batch: &TrainSet,
    noise: &BatchNoise,
    cfg: &TrainConfig,
) -> Result<(LossParts, Vec<f64>)> {
    batch.check(model)?;
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let inv_b = 1.0 / b as f64;
    let d = model.dims;
    let off = model.param_offsets();
    let mut grad = vec![0.0; model.param_len()];
    let (g_pose, rest) = grad.split_at_mut(off[1]);
    let (g_off, rest) = rest.split_at_mut(off[2] - off[1]);
    let (g_beta, g_tcam) = rest.split_at_mut(off[3] - off[2]);
    let c = &batch.cond;
    let mut parts = LossParts::default();

    // Negative log-likelihood of both flows.
    let target = &batch.pose6d + &noise.pose_jitter;
    let (z1, ld1, t1) = model.pose_flow.inverse(&target, c)?;
    let w = cfg.lambda_nll * inv_b;
    model.pose_flow.backward_inverse(&t1, &(&z1 * w), -w, g_pose);
    let gt_cond = model.offset_condition(c, &batch.pose6d);
    let (z2, ld2, t2) = model.offset_flow.inverse(&batch.gamma, &gt_cond)?;
    model.offset_flow.backward_inverse(&t2, &(&z2 * w), -w, g_off);
    parts.nll = nll_value(&z1, &ld1) + nll_value(&z2, &ld2);

    // Mode (z = 0) plus sampled draws share the same decode-and-compare path.
    let mut draws = vec![(DMatrix::zeros(d.pose_dim(), b), DMatrix::zeros(d.k, b), 1.0)];
    let s = noise.z_theta.len();
    for (zt, zg) in noise.z_theta.iter().zip(&noise.z_gamma) {
        draws.push((zt.clone(), zg.clone(), cfg.lambda_exp / s as f64));
    }
    for (i, (zt, zg, weight)) in draws.iter().enumerate() {
        let dec = decode(model, c, zt, zg)?;
        let wg = cfg.lambda_gamma * cfg.gamma_scale * weight * inv_b;
        let (lg, gg) = l1(&dec.gamma, &batch.gamma, wg);
        // The pose term uses the same mode/expectation split as the gamma term.
        let ws = cfg.lambda_smpl * if i == 0 { 1.0 } else { 1.0 / s as f64 } * inv_b;
        let (lr, mut gtheta) = rotation_l1(&dec.theta, &batch.pose6d, ws);
        parts.gamma += cfg.gamma_scale * weight * lg * inv_b;
        parts.smpl += if i == 0 { lr } else { lr / s as f64 } * inv_b;
        let (_, gcond) = model.offset_flow.backward_forward(&dec.offset_tape, &gg, 0.0, g_off);
        gtheta += gcond.rows(d.cond_dim, d.pose_dim());
        model.pose_flow.backward_forward(&dec.pose_tape, &gtheta, 0.0, g_pose);
    }

    // Regression heads.
    let ws = cfg.lambda_smpl * inv_b;
    let (beta, tb) = model.beta_head.forward(c);
    let (lb, gb) = l1(&beta, &batch.beta, ws);
    model.beta_head.backward(&tb, &gb, g_beta);
    let (tcam, tt) = model.tcam_head.forward(c);
    let (lt, gt) = l1(&tcam, &batch.tcam, ws);
    model.tcam_head.backward(&tt, &gt, g_tcam);
    parts.smpl += (lb + lt) * inv_b;

    parts.total = cfg.lambda_nll * parts.nll + cfg.lambda_gamma * parts.gamma + cfg.lambda_smpl * parts.smpl;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss {parts:?}")));
    }
    Ok((parts, grad))
}

/// Mean NLL of (pose, offset) flows on `set`; `shuffle` permutes the
/// observation features across samples before scoring.
pub fn mean_nll(model: &FlowModel, set: &TrainSet, shuffle: Option<u64>) -> Result<(f64, f64)> {
    let n = set.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let cond = match shuffle {
        Some(seed) => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            set.cond.select_columns(&idx)
        }
        None => set.cond.clone(),
    };
    let (mut a, mut b) = (0.0, 0.0);
    for start in (0..n).step_by(1024) {
        let len = (n - start).min(1024);
        let c = cond.columns(start, len).into_owned();
        let pose = set.pose6d.columns(start, len).into_owned();
        let gamma = set.gamma.columns(start, len).into_owned();
        let lp = model.pose_flow.log_prob(&pose, &c)?;
        let lo = model.offset_flow.log_prob(&gamma, &model.offset_condition(&c, &pose))?;
        a -= lp.iter().sum::<f64>();
        b -= lo.iter().sum::<f64>();
    }
    Ok((a / n as f64, b / n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_nll: f64,
    pub holdout_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Held-out total NLL right after data-dependent initialization.
    pub initial_holdout_nll: f64,
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_holdout_nll(&self) -> f64 {
        self.epochs.last().map_or(self.initial_holdout_nll, |e| e.holdout_nll)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_nll,holdout_nll\n");
        s.push_str(&format!("0,,,{:?}\n", self.initial_holdout_nll));
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:?},{:?},{:?}\n",
                e.epoch, e.train_loss, e.train_nll, e.holdout_nll
            ));
        }
        s
    }
}

fn initialize(model: &mut FlowModel, data: &TrainSet) -> Result<()> {
    model.pose_flow.data_init(&data.pose6d, &data.cond)?;
    let oc = model.offset_condition(&data.cond, &data.pose6d);
    model.offset_flow.data_init(&data.gamma, &oc)?;
    let n = data.len() as f64;
    let bias = model.beta_head.biases.last_mut().unwrap();
    for r in 0..bias.len() {
        bias[r] = data.beta.row(r).sum() / n;
    }
    let bias = model.tcam_head.biases.last_mut().unwrap();
    for r in 0..3 {
        bias[r] = data.tcam.row(r).sum() / n;
    }
    Ok(())
}

/// Fits `model` in place. Batches are drawn from a seeded shuffle so the
/// loss history is a pure function of the inputs.
pub fn train(
    model: &mut FlowModel,
    train_set: &TrainSet,
    holdout: &TrainSet,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    train_set.check(model)?;
    holdout.check(model)?;
    if train_set.is_empty() || holdout.is_empty() {
        return Err(Error::InvalidArgument(
            "training and held-out sets must be nonempty".into(),
        ));
    }
    let n = train_set.len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x7EA1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let init_idx = &order[..cfg.init_batch.min(n)];
    initialize(model, &train_set.select(init_idx))?;
    model.seed = cfg.seed;

    let sum_nll = |m: &FlowModel| mean_nll(m, holdout, None).map(|(a, b)| a + b);
    let initial_holdout_nll = sum_nll(model)?;
    log::info!("initial held-out NLL {initial_holdout_nll:.4}");
    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut nll_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.select(chunk);
            let noise = BatchNoise::sample(model, chunk.len(), cfg, &mut rng);
            let (parts, mut grad) = train_loss(model, &batch, &noise, cfg)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {batches}: {e}")))?;
            clip_norm(&mut grad, cfg.grad_clip);
            adam.apply(&mut params, &grad, cfg.learning_rate);
            model.set_params(&params)?;
            loss_sum += parts.total;
            nll_sum += parts.nll;
            batches += 1;
        }
        let holdout_nll = sum_nll(model)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_nll: nll_sum / batches as f64,
            holdout_nll,
        };
        log::info!("{stats:?}");
        epochs.push(stats);
    }
    Ok(TrainHistory {
        initial_holdout_nll,
        epochs,
    })
}
