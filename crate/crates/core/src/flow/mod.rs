//! Conditional normalizing flows over body pose (6D per joint) and latent
//! relation codes, stacked as p(theta | c) p(gamma | c, theta), plus the
//! beta and camera-translation regression heads.

pub mod layers;
pub mod train;

use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::body::BodyParams;
use crate::geom::Vec3;
use crate::io::{content_hash, mix_seed, BinReader, BinWriter};
use crate::rotation::{log_so3, matrix_from_sixd, sixd_from_matrix};
use crate::{Error, Result};

pub use layers::{ActNorm, Coupling, LuLinear, Mlp, SCALE_CLAMP};
use layers::{ActTape, CouplingTape, LuTape};
pub use train::{train, train_loss, BatchNoise, TrainConfig, TrainHistory, TrainSet};

const MAGIC: &[u8; 4] = b"HOFL";
const VERSION: u16 = 1;

pub fn std_normal_log_density(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub act: ActNorm,
    pub lin: LuLinear,
    pub coupling: Coupling,
}

/// Blocks applied in order actnorm, LU linear, coupling on the base-to-data
/// (forward) direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub dim: usize,
    pub cond_dim: usize,
    pub blocks: Vec<Block>,
}

pub struct FlowTape {
    blocks: Vec<(ActTape, LuTape, CouplingTape)>,
}

/// Base sample with its change-of-variables bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub z: Vec<f64>,
    pub log_det: f64,
    pub log_prob: f64,
}

impl Flow {
    pub fn new(dim: usize, cond_dim: usize, hidden: usize, blocks: usize, rng: &mut ChaCha8Rng) -> Self {
        let blocks = (0..blocks)
            .map(|_| Block {
                act: ActNorm::identity(dim),
                lin: LuLinear::random(dim, rng),
                coupling: Coupling::new(dim, cond_dim, hidden, rng),
            })
            .collect();
        Self { dim, cond_dim, blocks }
    }

    pub fn param_len(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.act.param_len() + b.lin.param_len() + b.coupling.param_len())
            .sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            b.act.write_params(out);
            b.lin.write_params(out);
            b.coupling.net.write_params(out);
        }
    }

    pub fn read_params(&mut self, src: &mut &[f64]) {
        for b in &mut self.blocks {
            b.act.read_params(src);
            b.lin.read_params(src);
            b.coupling.net.read_params(src);
        }
    }

    fn block_offsets(&self) -> Vec<(usize, usize, usize)> {
        let mut off = 0;
        self.blocks
            .iter()
            .map(|b| {
                let a = off;
                let l = a + b.act.param_len();
                let c = l + b.lin.param_len();
                off = c + b.coupling.param_len();
                (a, l, c)
            })
            .collect()
    }

    fn check(&self, x: &DMatrix<f64>, cond: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.dim || cond.nrows() != self.cond_dim || x.ncols() != cond.ncols() {
            return Err(Error::Dimension {
                what: "flow input",
                expected: self.dim + self.cond_dim,
                got: x.nrows() + cond.nrows(),
            });
        }
        Ok(())
    }

    /// Base `z` to data; returns the per-sample forward log-determinant.
    pub fn forward(&self, z: &DMatrix<f64>, cond: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, FlowTape)> {
        self.check(z, cond)?;
        let mut h = z.clone();
        let mut ld = vec![0.0; z.ncols()];
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (h1, ta) = b.act.forward(&h);
            let (h2, tl) = b.lin.forward(&h1);
            let (h3, cld, tc) = b.coupling.forward(&h2, cond);
            let fixed = b.act.log_det() + b.lin.log_det();
            for (acc, c) in ld.iter_mut().zip(&cld) {
                *acc += fixed + c;
            }
            tapes.push((ta, tl, tc));
            h = h3;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow forward output".into()));
        }
        Ok((h, ld, FlowTape { blocks: tapes }))
    }

    /// Reverse pass of [`Flow::forward`]; `gld` is dL/d(log_det) per sample.
    pub fn backward_forward(
        &self,
        tape: &FlowTape,
        gx: &DMatrix<f64>,
        gld: f64,
        grad: &mut [f64],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let offs = self.block_offsets();
        let mut g = gx.clone();
        let mut gcond = DMatrix::zeros(self.cond_dim, gx.ncols());
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let (ta, tl, tc) = &tape.blocks[i];
            let (a, l, c) = offs[i];
            let (g2, gc) = b
                .coupling
                .backward_forward(tc, &g, gld, &mut grad[c..c + b.coupling.param_len()]);
            gcond += gc;
            let g1 = b.lin.backward_forward(tl, &g2, gld, &mut grad[l..c]);
            g = b.act.backward_forward(ta, &g1, gld, &mut grad[a..l]);
        }
        (g, gcond)
    }

    /// Data to base; returns the per-sample inverse log-determinant.
    pub fn inverse(&self, x: &DMatrix<f64>, cond: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, FlowTape)> {
        self.check(x, cond)?;
        let mut h = x.clone();
        let mut ld = vec![0.0; x.ncols()];
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in self.blocks.iter().rev() {
            let (h2, cld, tc) = b.coupling.inverse(&h, cond);
            let (h1, tl) = b.lin.inverse(&h2);
            let (h0, ta) = b.act.inverse(&h1);
            let fixed = b.act.log_det() + b.lin.log_det();
            for (acc, c) in ld.iter_mut().zip(&cld) {
                *acc += c - fixed;
            }
            tapes.push((ta, tl, tc));
            h = h0;
        }
        tapes.reverse();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow inverse output".into()));
        }
        Ok((h, ld, FlowTape { blocks: tapes }))
    }

    pub fn backward_inverse(
        &self,
        tape: &FlowTape,
        gz: &DMatrix<f64>,
        gld: f64,
        grad: &mut [f64],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let offs = self.block_offsets();
        let mut g = gz.clone();
        let mut gcond = DMatrix::zeros(self.cond_dim, gz.ncols());
        for (i, b) in self.blocks.iter().enumerate() {
            let (ta, tl, tc) = &tape.blocks[i];
            let (a, l, c) = offs[i];
            let g1 = b.act.backward_inverse(ta, &g, gld, &mut grad[a..l]);
            let g2 = b.lin.backward_inverse(tl, &g1, gld, &mut grad[l..c]);
            let (g3, gc) = b
                .coupling
                .backward_inverse(tc, &g2, gld, &mut grad[c..c + b.coupling.param_len()]);
            gcond += gc;
            g = g3;
        }
        (g, gcond)
    }

    /// Per-sample `log N(f^-1(x); 0, I) + log|det d f^-1 / dx|`.
    pub fn log_prob(&self, x: &DMatrix<f64>, cond: &DMatrix<f64>) -> Result<Vec<f64>> {
        let (z, ld, _) = self.inverse(x, cond)?;
        Ok(z.column_iter()
            .zip(&ld)
            .map(|(col, l)| std_normal_log_density(col.as_slice()) + l)
            .collect())
    }

    pub fn forward_one(&self, z: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (x, ld, _) = self.forward(&column(z), &column(cond))?;
        Ok((x.as_slice().to_vec(), ld[0]))
    }

    pub fn inverse_one(&self, x: &[f64], cond: &[f64]) -> Result<FlowSample> {
        let (z, ld, _) = self.inverse(&column(x), &column(cond))?;
        let z = z.as_slice().to_vec();
        let log_prob = std_normal_log_density(&z) + ld[0];
        Ok(FlowSample {
            z,
            log_det: -ld[0],
            log_prob,
        })
    }

    /// Glow-style data-dependent init: walks the inverse pass and sets each
    /// actnorm so its inverse output is standardized on `x`.
    pub fn data_init(&mut self, x: &DMatrix<f64>, cond: &DMatrix<f64>) -> Result<()> {
        self.check(x, cond)?;
        let mut h = x.clone();
        for b in self.blocks.iter_mut().rev() {
            let (h2, _, _) = b.coupling.inverse(&h, cond);
            let (h1, _) = b.lin.inverse(&h2);
            b.act.init_from_outputs(&h1);
            h = b.act.inverse(&h1).0;
        }
        Ok(())
    }
}

pub(crate) fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowDims {
    /// Body joints including the root; the pose flow covers the other J-1.
    pub joints: usize,
    pub shape_dims: usize,
    pub k: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
}

impl FlowDims {
    pub fn pose_dim(&self) -> usize {
        6 * (self.joints - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub dims: FlowDims,
    pub pose_flow: Flow,
    pub offset_flow: Flow,
    pub beta_head: Mlp,
    pub tcam_head: Mlp,
    pub body_hash: u64,
    pub anchor_hash: u64,
    /// Latent-space hashes indexed by category.
    pub space_hashes: Vec<u64>,
    pub seed: u64,
}

/// Greedy stacked posterior mode for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMode {
    pub theta6d: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub t_cam: Vec3,
}

impl FlowModel {
    pub fn new(dims: FlowDims, seed: u64) -> Result<Self> {
        if dims.joints < 2 || dims.k == 0 || dims.blocks == 0 || dims.hidden == 0 {
            return Err(Error::InvalidArgument(format!("invalid flow dimensions {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF10));
        let pd = dims.pose_dim();
        let pose_flow = Flow::new(pd, dims.cond_dim, dims.hidden, dims.blocks, &mut rng);
        let offset_flow = Flow::new(dims.k, dims.cond_dim + pd, dims.hidden, dims.blocks, &mut rng);
        let beta_head = Mlp::new(dims.cond_dim, dims.hidden, dims.shape_dims, 2, &mut rng, true);
        let tcam_head = Mlp::new(dims.cond_dim, dims.hidden, 3, 2, &mut rng, true);
        Ok(Self {
            dims,
            pose_flow,
            offset_flow,
            beta_head,
            tcam_head,
            body_hash: 0,
            anchor_hash: 0,
            space_hashes: Vec::new(),
            seed,
        })
    }

    pub fn param_len(&self) -> usize {
        self.pose_flow.param_len()
            + self.offset_flow.param_len()
            + self.beta_head.param_len()
            + self.tcam_head.param_len()
    }

    /// Offsets of (pose flow, offset flow, beta head, tcam head) in the flat vector.
    pub fn param_offsets(&self) -> [usize; 4] {
        let a = self.pose_flow.param_len();
        let b = a + self.offset_flow.param_len();
        let c = b + self.beta_head.param_len();
        [0, a, b, c]
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        self.pose_flow.write_params(&mut out);
        self.offset_flow.write_params(&mut out);
        self.beta_head.write_params(&mut out);
        self.tcam_head.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_len() {
            return Err(Error::Dimension {
                what: "flow parameters",
                expected: self.param_len(),
                got: p.len(),
            });
        }
        let mut src = p;
        self.pose_flow.read_params(&mut src);
        self.offset_flow.read_params(&mut src);
        self.beta_head.read_params(&mut src);
        self.tcam_head.read_params(&mut src);
        Ok(())
    }

    /// Offset-flow condition `c ++ theta6d`, column per sample.
    pub fn offset_condition(&self, c: &DMatrix<f64>, theta6d: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(c.nrows() + theta6d.nrows(), c.ncols());
        out.rows_mut(0, c.nrows()).copy_from(c);
        out.rows_mut(c.nrows(), theta6d.nrows()).copy_from(theta6d);
        out
    }

    pub fn check_condition(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.dims.cond_dim {
            return Err(Error::Dimension {
                what: "observation feature",
                expected: self.dims.cond_dim,
                got: c.len(),
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation feature".into()));
        }
        Ok(())
    }

    /// theta = f_pose(0 | c), gamma* = f_offset(0 | c, theta), heads on c.
    pub fn stacked_posterior_mode(&self, c: &[f64]) -> Result<PosteriorMode> {
        self.check_condition(c)?;
        let cm = column(c);
        let pd = self.dims.pose_dim();
        let (theta, _, _) = self.pose_flow.forward(&DMatrix::zeros(pd, 1), &cm)?;
        let (gamma, _, _) = self
            .offset_flow
            .forward(&DMatrix::zeros(self.dims.k, 1), &self.offset_condition(&cm, &theta))?;
        let beta = self.beta_head.eval(&cm);
        let t = self.tcam_head.eval(&cm);
        Ok(PosteriorMode {
            theta6d: theta.as_slice().to_vec(),
            gamma: gamma.as_slice().to_vec(),
            beta: beta.as_slice().to_vec(),
            t_cam: Vec3::new(t[0], t[1], t[2]),
        })
    }

    /// Sample decode: (theta6d, gamma) for base draws (z_theta, z_gamma).
    pub fn decode(&self, c: &[f64], z_theta: &[f64], z_gamma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_condition(c)?;
        let cm = column(c);
        let (theta, _, _) = self.pose_flow.forward(&column(z_theta), &cm)?;
        let (gamma, _, _) = self
            .offset_flow
            .forward(&column(z_gamma), &self.offset_condition(&cm, &theta))?;
        Ok((theta.as_slice().to_vec(), gamma.as_slice().to_vec()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.dims;
        let mut w = BinWriter::new();
        w.magic(MAGIC).u16(VERSION);
        for v in [d.joints, d.shape_dims, d.k, d.cond_dim, d.hidden, d.blocks] {
            w.u32(v as u32);
        }
        w.u64(self.body_hash).u64(self.anchor_hash).u64(self.seed);
        w.u32(self.space_hashes.len() as u32);
        for &h in &self.space_hashes {
            w.u64(h);
        }
        for flow in [&self.pose_flow, &self.offset_flow] {
            for b in &flow.blocks {
                for &p in &b.lin.perm {
                    w.u32(p as u32);
                }
                for &s in &b.lin.sign {
                    w.u8(u8::from(s < 0.0));
                }
            }
        }
        w.f64s(&self.params());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(MAGIC)?;
        r.version(VERSION)?;
        let mut v = [0usize; 6];
        for slot in v.iter_mut() {
            *slot = r.u32()? as usize;
        }
        let dims = FlowDims {
            joints: v[0],
            shape_dims: v[1],
            k: v[2],
            cond_dim: v[3],
            hidden: v[4],
            blocks: v[5],
        };
        let body_hash = r.u64()?;
        let anchor_hash = r.u64()?;
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let space_hashes = (0..count).map(|_| r.u64()).collect::<Result<_>>()?;
        let mut model = Self::new(dims, seed)?;
        for flow in [&mut model.pose_flow, &mut model.offset_flow] {
            let dim = flow.dim;
            for b in &mut flow.blocks {
                let perm = (0..dim)
                    .map(|_| r.u32().map(|p| p as usize))
                    .collect::<Result<Vec<_>>>()?;
                let mut seen = vec![false; dim];
                for &p in &perm {
                    if p >= dim || std::mem::replace(&mut seen[p], true) {
                        return Err(Error::Format("checkpoint permutation is invalid".into()));
                    }
                }
                b.lin.perm = perm;
                b.lin.sign = (0..dim)
                    .map(|_| r.u8().map(|s| if s == 1 { -1.0 } else { 1.0 }))
                    .collect::<Result<_>>()?;
            }
        }
        let params = r.f64s()?;
        r.finish()?;
        model.set_params(&params)?;
        model.body_hash = body_hash;
        model.anchor_hash = anchor_hash;
        model.space_hashes = space_hashes;
        Ok(model)
    }

    pub fn hash(&self) -> u64 {
        content_hash(&self.to_bytes())
    }
}

/// 6D pose vector (joints 1..J) from axis-angle body parameters.
pub fn pose6d_from_params(params: &BodyParams) -> Vec<f64> {
    params.theta[1..]
        .iter()
        .flat_map(|w| sixd_from_matrix(&crate::rotation::exp_so3(w)))
        .collect()
}

/// Local rotation matrices (root = identity) decoded from a 6D pose vector.
pub fn rotations_from_pose6d(theta6d: &[f64]) -> Vec<Matrix3<f64>> {
    std::iter::once(Matrix3::identity())
        .chain(theta6d.chunks(6).map(matrix_from_sixd))
        .collect()
}

pub fn params_from_pose6d(theta6d: &[f64], beta: &[f64]) -> BodyParams {
    BodyParams {
        theta: rotations_from_pose6d(theta6d).iter().map(log_so3).collect(),
        beta: beta.to_vec(),
    }
}

/// Largest relative deviation between `grad` and central differences at `point`.
///
/// Entries are compared as `|g - fd| / max(|g|, |fd|, floor)` with
/// `floor = 1e-6 * max(1, max |g|)`, so vanishing components do not divide by zero.
pub fn grad_check(
    f: &dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    point: &[f64],
    h: f64,
    coords: Option<&[usize]>,
) -> Result<f64> {
    let (v0, grad) = f(point)?;
    if !v0.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("grad_check base evaluation".into()));
    }
    let all: Vec<usize>;
    let idx = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let gmax = grad.iter().fold(1.0f64, |a, g| a.max(g.abs()));
    let floor = 1e-6 * gmax;
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for &i in idx {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?.0;
        x[i] = orig - h;
        let fm = f(&x)?.0;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("grad_check at coordinate {i}")));
        }
        let fd = (fp - fm) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}
