//! Flow building blocks with explicit reverse passes. Activations are stored
//! column-per-sample (`features x batch`).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Bound on coupling log-scales: `s = CLAMP * tanh(pre / CLAMP)`.
pub const SCALE_CLAMP: f64 = 5.0;

pub(crate) fn take<'a>(src: &mut &'a [f64], n: usize) -> &'a [f64] {
    let (head, tail) = src.split_at(n);
    *src = tail;
    head
}

fn split_grad(grad: &mut [f64], n: usize) -> (&mut [f64], &mut [f64]) {
    grad.split_at_mut(n)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * std)
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.nrows(), |r, _| m.row(r).sum())
}

/// Feed-forward net with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

pub struct MlpTape {
    inputs: Vec<DMatrix<f64>>,
}

impl Mlp {
    pub fn new(
        input: usize,
        hidden: usize,
        output: usize,
        hidden_layers: usize,
        rng: &mut impl Rng,
        zero_output: bool,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, hidden_layers));
        sizes.push(output);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let last = l == sizes.len() - 2;
            let w = if last && zero_output {
                DMatrix::zeros(sizes[l + 1], sizes[l])
            } else {
                gaussian_matrix(rng, sizes[l + 1], sizes[l], 1.0 / (sizes[l].max(1) as f64).sqrt())
            };
            weights.push(w);
            biases.push(DVector::zeros(sizes[l + 1]));
        }
        Self { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    pub fn param_len(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
    }

    pub fn read_params(&mut self, src: &mut &[f64]) {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(take(src, n));
            let n = b.len();
            b.as_mut_slice().copy_from_slice(take(src, n));
        }
    }

    fn affine(w: &DMatrix<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = w * x;
        for mut col in y.column_iter_mut() {
            col += b;
        }
        y
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpTape) {
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut y = Self::affine(w, b, &h);
            if l < last {
                y.apply(|v| *v = v.tanh());
            }
            inputs.push(h);
            h = y;
        }
        (h, MlpTape { inputs })
    }

    pub fn eval(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).0
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, tape: &MlpTape, gy: &DMatrix<f64>, grad: &mut [f64]) -> DMatrix<f64> {
        let mut offsets = Vec::with_capacity(self.weights.len());
        let mut off = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push(off);
            off += w.len() + b.len();
        }
        let mut g = gy.clone();
        for l in (0..self.weights.len()).rev() {
            let input = &tape.inputs[l];
            let w = &self.weights[l];
            let gw = &g * input.transpose();
            let gb = row_sums(&g);
            let slot = &mut grad[offsets[l]..offsets[l] + w.len() + gb.len()];
            let (sw, sb) = split_grad(slot, w.len());
            add_into(sw, gw.as_slice());
            add_into(sb, gb.as_slice());
            let mut gin = w.tr_mul(&g);
            if l > 0 {
                gin.zip_apply(input, |gv, a| *gv *= 1.0 - a * a);
            }
            g = gin;
        }
        g
    }
}

/// Per-dimension affine normalization `y = x * exp(ls) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm {
    pub log_scale: DVector<f64>,
    pub bias: DVector<f64>,
}

pub struct ActTape {
    x: DMatrix<f64>,
}

impl ActNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            log_scale: DVector::zeros(dim),
            bias: DVector::zeros(dim),
        }
    }

    pub fn param_len(&self) -> usize {
        2 * self.log_scale.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.log_scale.as_slice());
        out.extend_from_slice(self.bias.as_slice());
    }

    pub fn read_params(&mut self, src: &mut &[f64]) {
        let d = self.log_scale.len();
        self.log_scale.as_mut_slice().copy_from_slice(take(src, d));
        self.bias.as_mut_slice().copy_from_slice(take(src, d));
    }

    pub fn log_det(&self) -> f64 {
        self.log_scale.sum()
    }

    /// Sets parameters so the inverse pass maps `y` to zero mean, unit variance.
    pub fn init_from_outputs(&mut self, y: &DMatrix<f64>) {
        let b = y.ncols().max(1) as f64;
        for r in 0..y.nrows() {
            let row = y.row(r);
            let mean = row.sum() / b;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b;
            self.bias[r] = mean;
            self.log_scale[r] = var.sqrt().max(1e-4).ln();
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, ActTape) {
        let mut y = x.clone();
        for (r, mut row) in y.row_iter_mut().enumerate() {
            let s = self.log_scale[r].exp();
            let b = self.bias[r];
            row.apply(|v| *v = *v * s + b);
        }
        (y, ActTape { x: x.clone() })
    }

    pub fn backward_forward(&self, tape: &ActTape, gy: &DMatrix<f64>, gld: f64, grad: &mut [f64]) -> DMatrix<f64> {
        let d = self.log_scale.len();
        let batch = gy.ncols() as f64;
        let mut gx = gy.clone();
        for r in 0..d {
            let s = self.log_scale[r].exp();
            let mut gls = batch * gld;
            let mut gb = 0.0;
            for c in 0..gy.ncols() {
                gls += gy[(r, c)] * tape.x[(r, c)] * s;
                gb += gy[(r, c)];
                gx[(r, c)] *= s;
            }
            grad[r] += gls;
            grad[d + r] += gb;
        }
        gx
    }

    pub fn inverse(&self, y: &DMatrix<f64>) -> (DMatrix<f64>, ActTape) {
        let mut x = y.clone();
        for (r, mut row) in x.row_iter_mut().enumerate() {
            let inv = (-self.log_scale[r]).exp();
            let b = self.bias[r];
            row.apply(|v| *v = (*v - b) * inv);
        }
        (x.clone(), ActTape { x })
    }

    pub fn backward_inverse(&self, tape: &ActTape, gx: &DMatrix<f64>, gld: f64, grad: &mut [f64]) -> DMatrix<f64> {
        let d = self.log_scale.len();
        let batch = gx.ncols() as f64;
        let mut gy = gx.clone();
        for r in 0..d {
            let inv = (-self.log_scale[r]).exp();
            let mut gls = -batch * gld;
            let mut gb = 0.0;
            for c in 0..gx.ncols() {
                gls -= gx[(r, c)] * tape.x[(r, c)];
                gb -= gx[(r, c)] * inv;
                gy[(r, c)] *= inv;
            }
            grad[r] += gls;
            grad[d + r] += gb;
        }
        gy
    }
}

/// Invertible linear map `y = P L U x` with unit-lower `L` and
/// `U = strict_upper + diag(sign * exp(log_s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LuLinear {
    /// `y[i] = (L U x)[perm[i]]`
    pub perm: Vec<usize>,
    pub sign: Vec<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub log_s: DVector<f64>,
}

pub struct LuTape {
    x: DMatrix<f64>,
    v: DMatrix<f64>,
}

/// Partial-pivoting LU: `a[piv[i]] = (L U)[i]` row-wise.
fn lu_decompose(a: &DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().partial_cmp(&m[(j, k)].abs()).unwrap())
            .unwrap();
        if p != k {
            m.swap_rows(p, k);
            piv.swap(p, k);
        }
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            m[(i, k)] = f;
            for j in k + 1..n {
                m[(i, j)] -= f * m[(k, j)];
            }
        }
    }
    let l = DMatrix::from_fn(n, n, |i, j| if i > j { m[(i, j)] } else { 0.0 });
    let u = DMatrix::from_fn(n, n, |i, j| if i <= j { m[(i, j)] } else { 0.0 });
    (piv, l, u)
}

impl LuLinear {
    /// Starts from a random rotation, as in Glow.
    pub fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let g = gaussian_matrix(rng, dim, dim, 1.0);
        let q = g.qr().q();
        let (piv, l, u) = lu_decompose(&q);
        let mut perm = vec![0; dim];
        for (i, &p) in piv.iter().enumerate() {
            perm[p] = i;
        }
        let sign = (0..dim).map(|i| if u[(i, i)] < 0.0 { -1.0 } else { 1.0 }).collect();
        let log_s = DVector::from_fn(dim, |i, _| u[(i, i)].abs().ln());
        let upper = DMatrix::from_fn(dim, dim, |i, j| if i < j { u[(i, j)] } else { 0.0 });
        Self {
            perm,
            sign,
            lower: l,
            upper,
            log_s,
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn param_len(&self) -> usize {
        let d = self.dim();
        2 * d * d + d
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.lower.as_slice());
        out.extend_from_slice(self.upper.as_slice());
        out.extend_from_slice(self.log_s.as_slice());
    }

    pub fn read_params(&mut self, src: &mut &[f64]) {
        let d = self.dim();
        self.lower.as_mut_slice().copy_from_slice(take(src, d * d));
        self.upper.as_mut_slice().copy_from_slice(take(src, d * d));
        self.log_s.as_mut_slice().copy_from_slice(take(src, d));
    }

    pub fn log_det(&self) -> f64 {
        self.log_s.sum()
    }

    fn l_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lower[(i, j)],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        })
    }

    fn u_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => self.upper[(i, j)],
            std::cmp::Ordering::Equal => self.sign[i] * self.log_s[i].exp(),
            std::cmp::Ordering::Greater => 0.0,
        })
    }

    pub fn weight(&self) -> DMatrix<f64> {
        let lu = self.l_matrix() * self.u_matrix();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| lu[(self.perm[i], j)])
    }

    fn permute(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(w.nrows(), w.ncols(), |i, c| w[(self.perm[i], c)])
    }

    fn unpermute(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(y.nrows(), y.ncols());
        for i in 0..y.nrows() {
            w.set_row(self.perm[i], &y.row(i));
        }
        w
    }

    fn accumulate(&self, gl: &DMatrix<f64>, gu: &DMatrix<f64>, gld_total: f64, grad: &mut [f64]) {
        let d = self.dim();
        for j in 0..d {
            for i in 0..d {
                if i > j {
                    grad[j * d + i] += gl[(i, j)];
                } else if i < j {
                    grad[d * d + j * d + i] += gu[(i, j)];
                }
            }
        }
        for i in 0..d {
            let s = self.sign[i] * self.log_s[i].exp();
            grad[2 * d * d + i] += gu[(i, i)] * s + gld_total;
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, LuTape) {
        let v = self.u_matrix() * x;
        let w = self.l_matrix() * &v;
        (self.permute(&w), LuTape { x: x.clone(), v })
    }

    pub fn backward_forward(&self, tape: &LuTape, gy: &DMatrix<f64>, gld: f64, grad: &mut [f64]) -> DMatrix<f64> {
        let gw = self.unpermute(gy);
        let gl = &gw * tape.v.transpose();
        let gv = self.l_matrix().tr_mul(&gw);
        let gu = &gv * tape.x.transpose();
        self.accumulate(&gl, &gu, gld * gy.ncols() as f64, grad);
        self.u_matrix().tr_mul(&gv)
    }

    pub fn inverse(&self, y: &DMatrix<f64>) -> (DMatrix<f64>, LuTape) {
        let w = self.unpermute(y);
        let v = self
            .l_matrix()
            .solve_lower_triangular(&w)
            .expect("unit lower triangular");
        let x = self
            .u_matrix()
            .solve_upper_triangular(&v)
            .expect("LU diagonal is exp(log_s) and never zero");
        (x.clone(), LuTape { x, v })
    }

    pub fn backward_inverse(&self, tape: &LuTape, gx: &DMatrix<f64>, gld: f64, grad: &mut [f64]) -> DMatrix<f64> {
        let gv = self.u_matrix().tr_solve_upper_triangular(gx).expect("nonsingular U");
        let gu = -(&gv * tape.x.transpose());
        let gw = self.l_matrix().tr_solve_lower_triangular(&gv).expect("unit L");
        let gl = -(&gw * tape.v.transpose());
        self.accumulate(&gl, &gu, -gld * gx.ncols() as f64, grad);
        self.permute(&gw)
    }
}

/// Conditional affine coupling: the second half is scaled and shifted by a
/// net of (first half, condition).
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub split: usize,
    pub dim: usize,
    pub cond_dim: usize,
    pub net: Mlp,
}

pub struct CouplingTape {
    xb: DMatrix<f64>,
    s: DMatrix<f64>,
    net: MlpTape,
}

impl Coupling {
    pub fn new(dim: usize, cond_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let split = dim / 2;
        let net = Mlp::new(split + cond_dim, hidden, 2 * (dim - split), 2, rng, true);
        Self {
            split,
            dim,
            cond_dim,
            net,
        }
    }

    pub fn param_len(&self) -> usize {
        self.net.param_len()
    }

    fn net_input(&self, xa: &DMatrix<f64>, cond: &DMatrix<f64>) -> DMatrix<f64> {
        let b = xa.ncols();
        let mut h = DMatrix::zeros(self.split + self.cond_dim, b);
        h.rows_mut(0, self.split).copy_from(xa);
        h.rows_mut(self.split, self.cond_dim).copy_from(cond);
        h
    }

    /// Returns (s, t, pre-tanh state) with `s` already clamped.
    fn scale_shift(&self, xa: &DMatrix<f64>, cond: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, MlpTape) {
        let db = self.dim - self.split;
        let (out, tape) = self.net.forward(&self.net_input(xa, cond));
        let s = out.rows(0, db).map(|p| SCALE_CLAMP * (p / SCALE_CLAMP).tanh());
        let t = out.rows(db, db).into_owned();
        (s, t, tape)
    }

    fn net_backward(
        &self,
        tape: &CouplingTape,
        gs: &DMatrix<f64>,
        gt: &DMatrix<f64>,
        grad: &mut [f64],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let db = self.dim - self.split;
        let b = gs.ncols();
        let mut gout = DMatrix::zeros(2 * db, b);
        for c in 0..b {
            for r in 0..db {
                let th = tape.s[(r, c)] / SCALE_CLAMP;
                gout[(r, c)] = gs[(r, c)] * (1.0 - th * th);
                gout[(db + r, c)] = gt[(r, c)];
            }
        }
        let gh = self.net.backward(&tape.net, &gout, grad);
        (
            gh.rows(0, self.split).into_owned(),
            gh.rows(self.split, self.cond_dim).into_owned(),
        )
    }

    pub fn forward(&self, x: &DMatrix<f64>, cond: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, CouplingTape) {
        let db = self.dim - self.split;
        let xa = x.rows(0, self.split).into_owned();
        let xb = x.rows(self.split, db).into_owned();
        let (s, t, net) = self.scale_shift(&xa, cond);
        let yb = xb.component_mul(&s.map(f64::exp)) + t;
        let mut y = x.clone();
        y.rows_mut(self.split, db).copy_from(&yb);
        let ld = s.column_iter().map(|c| c.sum()).collect();
        (y, ld, CouplingTape { xb, s, net })
    }

    /// Returns (dL/dx, dL/dcond).
    pub fn backward_forward(
        &self,
        tape: &CouplingTape,
        gy: &DMatrix<f64>,
        gld: f64,
        grad: &mut [f64],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let db = self.dim - self.split;
        let gyb = gy.rows(self.split, db).into_owned();
        let es = tape.s.map(f64::exp);
        let gxb = gyb.component_mul(&es);
        let gs = gyb.component_mul(&tape.xb).component_mul(&es).add_scalar(gld);
        let (gxa_net, gcond) = self.net_backward(tape, &gs, &gyb, grad);
        let mut gx = gy.clone();
        gx.rows_mut(0, self.split).add_assign(&gxa_net);
        gx.rows_mut(self.split, db).copy_from(&gxb);
        (gx, gcond)
    }

    pub fn inverse(&self, y: &DMatrix<f64>, cond: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, CouplingTape) {
        let db = self.dim - self.split;
        let ya = y.rows(0, self.split).into_owned();
        let yb = y.rows(self.split, db);
        let (s, t, net) = self.scale_shift(&ya, cond);
        let xb = (yb - t).component_mul(&s.map(|v| (-v).exp()));
        let mut x = y.clone();
        x.rows_mut(self.split, db).copy_from(&xb);
        let ld = s.column_iter().map(|c| -c.sum()).collect();
        (x, ld, CouplingTape { xb, s, net })
    }

    pub fn backward_inverse(
        &self,
        tape: &CouplingTape,
        gx: &DMatrix<f64>,
        gld: f64,
        grad: &mut [f64],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let db = self.dim - self.split;
        let gxb = gx.rows(self.split, db).into_owned();
        let ens = tape.s.map(|v| (-v).exp());
        let gyb = gxb.component_mul(&ens);
        let gt = -&gyb;
        let gs = -(gxb.component_mul(&tape.xb)).add_scalar(gld);
        let (gya_net, gcond) = self.net_backward(tape, &gs, &gt, grad);
        let mut gy = gx.clone();
        gy.rows_mut(0, self.split).add_assign(&gya_net);
        gy.rows_mut(self.split, db).copy_from(&gyb);
        (gy, gcond)
    }
}

trait AddAssignView {
    fn add_assign(&mut self, other: &DMatrix<f64>);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, other: &DMatrix<f64>) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lu_reconstructs_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = LuLinear::random(6, &mut rng);
        let w = lin.weight();
        let orth = (w.tr_mul(&w) - DMatrix::identity(6, 6)).abs().max();
        assert!(orth < 1e-10);
        assert!((lin.log_det() - w.determinant().abs().ln()).abs() < 1e-10);
    }

    #[test]
    fn layer_inverses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian_matrix(&mut rng, 5, 7, 1.0);
        let cond = gaussian_matrix(&mut rng, 3, 7, 1.0);
        let mut act = ActNorm::identity(5);
        act.log_scale = DVector::from_fn(5, |i, _| 0.1 * i as f64 - 0.2);
        act.bias = DVector::from_fn(5, |i, _| i as f64);
        let (y, _) = act.forward(&x);
        assert!((act.inverse(&y).0 - &x).abs().max() < 1e-12);

        let lin = LuLinear::random(5, &mut rng);
        let (y, _) = lin.forward(&x);
        assert!((lin.inverse(&y).0 - &x).abs().max() < 1e-10);

        let mut coup = Coupling::new(5, 3, 8, &mut rng);
        let mut p = Vec::new();
        coup.net.write_params(&mut p);
        let noisy: Vec<f64> = p.iter().map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
        coup.net.read_params(&mut noisy.as_slice());
        let (y, ld, _) = coup.forward(&x, &cond);
        let (back, ld_inv, _) = coup.inverse(&y, &cond);
        assert!((back - &x).abs().max() < 1e-10);
        for (a, b) in ld.iter().zip(&ld_inv) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(4, 6, 3, 2, &mut rng, false);
        let x = gaussian_matrix(&mut rng, 4, 2, 1.0);
        let gy = gaussian_matrix(&mut rng, 3, 2, 1.0);
        let mut grad = vec![0.0; mlp.param_len()];
        let (_, tape) = mlp.forward(&x);
        let gx = mlp.backward(&tape, &gy, &mut grad);
        let f = |m: &Mlp, x: &DMatrix<f64>| m.eval(x).component_mul(&gy).sum();
        let mut params = Vec::new();
        mlp.write_params(&mut params);
        for k in (0..params.len()).step_by(7) {
            let mut a = mlp.clone();
            let mut b = mlp.clone();
            let mut pa = params.clone();
            let mut pb = params.clone();
            pa[k] += 1e-6;
            pb[k] -= 1e-6;
            a.read_params(&mut pa.as_slice());
            b.read_params(&mut pb.as_slice());
            let fd = (f(&a, &x) - f(&b, &x)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-6, "param {k}: {fd} vs {}", grad[k]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (f(&mlp, &xp) - f(&mlp, &xm)) / 2e-6;
            assert!((fd - gx[i]).abs() < 1e-6);
        }
    }
}
