//! Temporal 1-D convolutional residual denoiser with hand-written backprop.
//!
//! Activations are `[channels, batch·horizon]` matrices; column `b·H + t` is
//! time step `t` of sample `b`. Convolutions are lowered to one GEMM each via
//! im2col with zero padding inside every sample.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::trajectory::POSE_DIM;
use super::PolicyError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub horizon: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub time_dim: usize,
    /// Sinusoidal position channels appended to the input along the horizon.
    pub pos_channels: usize,
    pub cond_dim: usize,
}

impl NetConfig {
    pub fn new(horizon: usize, hidden: usize, cond_dim: usize) -> Self {
        Self {
            horizon,
            hidden,
            kernel: 5,
            blocks: 3,
            time_dim: 32,
            pos_channels: 8,
            cond_dim,
        }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        let ok = self.horizon >= 2
            && self.hidden >= 1
            && self.kernel % 2 == 1
            && self.time_dim % 2 == 0
            && self.time_dim > 0
            && self.pos_channels % 2 == 0
            && self.cond_dim >= 1;
        if ok {
            Ok(())
        } else {
            Err(PolicyError::InvalidConfig(format!("invalid network shape {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
    out: usize,
    inp: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    emb: Lin,
    c1: Lin,
    c2: Lin,
}

/// Network shape plus the layout of every named tensor in the flat
/// parameter vector.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: NetConfig,
    manifest: Vec<TensorSpec>,
    total: usize,
    time1: Lin,
    time2: Lin,
    cond1: Lin,
    cond2: Lin,
    input: Lin,
    blocks: Vec<Block>,
    output: Lin,
}

struct LayoutBuilder {
    manifest: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn tensor(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.manifest.push(TensorSpec { name, shape, offset });
        offset
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) -> Lin {
        let w = self.tensor(format!("{name}.weight"), vec![out, inp]);
        let b = self.tensor(format!("{name}.bias"), vec![out]);
        Lin { w, b, out, inp }
    }
}

fn view(params: &[f64], l: Lin) -> (ArrayView2<'_, f64>, &[f64]) {
    let w = ArrayView2::from_shape((l.out, l.inp), &params[l.w..l.w + l.out * l.inp]).expect("weight shape");
    (w, &params[l.b..l.b + l.out])
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn silu_all(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(silu)
}

/// `out = W·x + b` with `b` broadcast over columns.
fn affine(params: &[f64], l: Lin, x: &Array2<f64>) -> Array2<f64> {
    let (w, b) = view(params, l);
    let mut out = Array2::<f64>::zeros((l.out, x.ncols()));
    for (mut row, &bias) in out.axis_iter_mut(Axis(0)).zip(b) {
        row.fill(bias);
    }
    general_mat_mul(1.0, &w, x, 1.0, &mut out);
    out
}

/// Accumulates weight/bias gradients of `affine` and returns `Wᵀ·dy` when
/// `want_input` is set.
fn affine_backward(
    params: &[f64],
    grad: &mut [f64],
    l: Lin,
    x: &Array2<f64>,
    dy: &Array2<f64>,
    want_input: bool,
) -> Option<Array2<f64>> {
    {
        let (gw, gb) = grad_views(grad, l);
        let mut gw = gw;
        general_mat_mul(1.0, dy, &x.t(), 1.0, &mut gw);
        for (g, row) in gb.iter_mut().zip(dy.axis_iter(Axis(0))) {
            *g += row.sum();
        }
    }
    want_input.then(|| {
        let (w, _) = view(params, l);
        w.t().dot(dy)
    })
}

fn grad_views(grad: &mut [f64], l: Lin) -> (ArrayViewMut2<'_, f64>, &mut [f64]) {
    let (head, tail) = grad.split_at_mut(l.b);
    let w = ArrayViewMut2::from_shape((l.out, l.inp), &mut head[l.w..l.w + l.out * l.inp]).expect("weight shape");
    (w, &mut tail[..l.out])
}

/// `[C, B·H]` → `[C·K, B·H]`; row `c·K + k` holds channel `c` shifted by
/// `k − K/2`, zero outside each sample.
fn im2col(x: &Array2<f64>, horizon: usize, kernel: usize) -> Array2<f64> {
    let (c, n) = x.dim();
    let pad = kernel / 2;
    let mut out = Array2::<f64>::zeros((c * kernel, n));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("contiguous");
    let os = out.as_slice_mut().expect("contiguous");
    let batch = n / horizon;
    for ch in 0..c {
        let src = &xs[ch * n..(ch + 1) * n];
        for k in 0..kernel {
            let dst = &mut os[(ch * kernel + k) * n..(ch * kernel + k + 1) * n];
            for b in 0..batch {
                let base = b * horizon;
                for t in 0..horizon {
                    let s = t as isize + k as isize - pad as isize;
                    if s >= 0 && (s as usize) < horizon {
                        dst[base + t] = src[base + s as usize];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `im2col`.
fn col2im(cols: &Array2<f64>, channels: usize, horizon: usize, kernel: usize) -> Array2<f64> {
    let n = cols.ncols();
    let pad = kernel / 2;
    let mut out = Array2::<f64>::zeros((channels, n));
    let cs = cols.as_standard_layout();
    let cs = cs.as_slice().expect("contiguous");
    let os = out.as_slice_mut().expect("contiguous");
    let batch = n / horizon;
    for ch in 0..channels {
        let dst = &mut os[ch * n..(ch + 1) * n];
        for k in 0..kernel {
            let src = &cs[(ch * kernel + k) * n..(ch * kernel + k + 1) * n];
            for b in 0..batch {
                let base = b * horizon;
                for t in 0..horizon {
                    let s = t as isize + k as isize - pad as isize;
                    if s >= 0 && (s as usize) < horizon {
                        dst[base + s as usize] += src[base + t];
                    }
                }
            }
        }
    }
    out
}

/// Sinusoidal embedding of diffusion steps, `[dim, B]`.
pub fn timestep_embedding(steps: &[usize], dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::<f64>::zeros((dim, steps.len()));
    for (b, &t) in steps.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let a = t as f64 * freq;
            out[(i, b)] = a.sin();
            out[(half + i, b)] = a.cos();
        }
    }
    out
}

/// Smooth basis over the horizon: sin/cos(π·j·τ), τ ∈ [0, 1].
fn position_channels(channels: usize, horizon: usize, batch: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((channels, batch * horizon));
    for j in 0..channels / 2 {
        for t in 0..horizon {
            let tau = t as f64 / (horizon - 1) as f64;
            let a = std::f64::consts::PI * (j + 1) as f64 * tau;
            for b in 0..batch {
                out[(2 * j, b * horizon + t)] = a.sin();
                out[(2 * j + 1, b * horizon + t)] = a.cos();
            }
        }
    }
    out
}

/// Adds per-sample column vectors `e[:, b]` to every time step of sample `b`.
fn add_broadcast(h: &mut Array2<f64>, e: &Array2<f64>, horizon: usize) {
    for b in 0..e.ncols() {
        let col = e.column(b);
        let mut block = h.slice_mut(s![.., b * horizon..(b + 1) * horizon]);
        for (mut row, &v) in block.axis_iter_mut(Axis(0)).zip(col.iter()) {
            row += v;
        }
    }
}

fn sum_per_sample(d: &Array2<f64>, horizon: usize, batch: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((d.nrows(), batch));
    for b in 0..batch {
        let block = d.slice(s![.., b * horizon..(b + 1) * horizon]);
        out.column_mut(b).assign(&block.sum_axis(Axis(1)));
    }
    out
}

struct BlockCache {
    h_in: Array2<f64>,
    cols1: Array2<f64>,
    z1: Array2<f64>,
    cols2: Array2<f64>,
}

struct Cache {
    batch: usize,
    temb: Array2<f64>,
    th: Array2<f64>,
    ta: Array2<f64>,
    cond: Array2<f64>,
    ch: Array2<f64>,
    ca: Array2<f64>,
    e: Array2<f64>,
    se: Array2<f64>,
    cols0: Array2<f64>,
    blocks: Vec<BlockCache>,
    h_last: Array2<f64>,
    ao: Array2<f64>,
}

impl Denoiser {
    pub fn new(config: NetConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let w = config.hidden;
        let k = config.kernel;
        let mut lb = LayoutBuilder {
            manifest: Vec::new(),
            total: 0,
        };
        let time1 = lb.linear("time.fc1", w, config.time_dim);
        let time2 = lb.linear("time.fc2", w, w);
        let cond1 = lb.linear("cond.fc1", w, config.cond_dim);
        let cond2 = lb.linear("cond.fc2", w, w);
        let input = lb.linear("input.conv", w, (POSE_DIM + config.pos_channels) * k);
        let blocks = (0..config.blocks)
            .map(|j| Block {
                emb: lb.linear(&format!("block{j}.emb"), w, w),
                c1: lb.linear(&format!("block{j}.conv1"), w, w * k),
                c2: lb.linear(&format!("block{j}.conv2"), w, w * k),
            })
            .collect();
        let output = lb.linear("output.conv", POSE_DIM, w);
        Ok(Self {
            config,
            manifest: lb.manifest,
            total: lb.total,
            time1,
            time2,
            cond1,
            cond2,
            input,
            blocks,
            output,
        })
    }

    pub fn manifest(&self) -> &[TensorSpec] {
        &self.manifest
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    /// Weights ~ N(0, 1/fan_in), biases zero. The second convolution of each
    /// block and the output layer start scaled down so the initial network
    /// is close to a small residual perturbation.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for spec in &self.manifest {
            if spec.shape.len() != 2 {
                continue;
            }
            let fan_in = spec.shape[1] as f64;
            let damp = if spec.name.ends_with("conv2.weight") || spec.name.starts_with("output") {
                0.1
            } else {
                1.0
            };
            let dist = Normal::new(0.0, damp / fan_in.sqrt()).expect("finite std");
            for v in &mut p[spec.offset..spec.offset + spec.len()] {
                *v = dist.sample(rng);
            }
        }
        p
    }

    fn check(&self, params: &[f64], x: &[f64], steps: &[usize], cond: &[f64]) -> Result<usize, PolicyError> {
        if params.len() != self.total {
            return Err(PolicyError::ShapeMismatch {
                expected: self.total,
                actual: params.len(),
            });
        }
        let batch = steps.len();
        let per = self.config.horizon * POSE_DIM;
        if x.len() != batch * per {
            return Err(PolicyError::ShapeMismatch {
                expected: batch * per,
                actual: x.len(),
            });
        }
        if cond.len() != batch * self.config.cond_dim {
            return Err(PolicyError::DimensionMismatch {
                expected: batch * self.config.cond_dim,
                actual: cond.len(),
            });
        }
        Ok(batch)
    }

    /// Row-major `[B, H, 10]` → `[10, B·H]`.
    fn to_channels(&self, x: &[f64], batch: usize) -> Array2<f64> {
        let h = self.config.horizon;
        let mut out = Array2::<f64>::zeros((POSE_DIM, batch * h));
        for (col, pose) in x.chunks_exact(POSE_DIM).enumerate() {
            for (c, v) in pose.iter().enumerate() {
                out[(c, col)] = *v;
            }
        }
        out
    }

    fn from_channels(&self, y: &Array2<f64>) -> Vec<f64> {
        let n = y.ncols();
        let mut out = vec![0.0; n * POSE_DIM];
        for col in 0..n {
            for c in 0..POSE_DIM {
                out[col * POSE_DIM + c] = y[(c, col)];
            }
        }
        out
    }

    fn forward_cached(&self, params: &[f64], x: &[f64], steps: &[usize], cond: &[f64]) -> (Array2<f64>, Cache) {
        let batch = steps.len();
        let cfg = &self.config;
        let h = cfg.horizon;

        let temb = timestep_embedding(steps, cfg.time_dim);
        let th = affine(params, self.time1, &temb);
        let ta = silu_all(&th);
        let te = affine(params, self.time2, &ta);

        let cond = Array2::from_shape_vec((batch, cfg.cond_dim), cond.to_vec())
            .expect("cond shape")
            .reversed_axes()
            .as_standard_layout()
            .to_owned();
        let ch = affine(params, self.cond1, &cond);
        let ca = silu_all(&ch);
        let ce = affine(params, self.cond2, &ca);
        let e = te + ce;
        let se = silu_all(&e);

        let xin = ndarray::concatenate(
            Axis(0),
            &[self.to_channels(x, batch).view(), position_channels(cfg.pos_channels, h, batch).view()],
        )
        .expect("same column count");
        let cols0 = im2col(&xin, h, cfg.kernel);
        let mut hcur = affine(params, self.input, &cols0);

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let eb = affine(params, blk.emb, &se);
            let cols1 = im2col(&silu_all(&hcur), h, cfg.kernel);
            let mut z1 = affine(params, blk.c1, &cols1);
            add_broadcast(&mut z1, &eb, h);
            let cols2 = im2col(&silu_all(&z1), h, cfg.kernel);
            let z2 = affine(params, blk.c2, &cols2);
            let h_next = &hcur + &z2;
            blocks.push(BlockCache {
                h_in: hcur,
                cols1,
                z1,
                cols2,
            });
            hcur = h_next;
        }
        let ao = silu_all(&hcur);
        let y = affine(params, self.output, &ao);
        (
            y,
            Cache {
                batch,
                temb,
                th,
                ta,
                cond,
                ch,
                ca,
                e,
                se,
                cols0,
                blocks,
                h_last: hcur,
                ao,
            },
        )
    }

    /// Predicted noise for a batch. `x` is row-major `[B, H, 10]`, `cond` is
    /// `[B, cond_dim]`.
    pub fn predict(&self, params: &[f64], x: &[f64], steps: &[usize], cond: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check(params, x, steps, cond)?;
        let (y, _) = self.forward_cached(params, x, steps, cond);
        Ok(self.from_channels(&y))
    }

    /// Mean squared error against `target` and its gradient with respect to
    /// every parameter.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        x: &[f64],
        steps: &[usize],
        cond: &[f64],
        target: &[f64],
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        self.check(params, x, steps, cond)?;
        if target.len() != x.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: x.len(),
                actual: target.len(),
            });
        }
        let (y, cache) = self.forward_cached(params, x, steps, cond);
        let tgt = self.to_channels(target, cache.batch);
        let diff = &y - &tgt;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let dy = diff * (2.0 / n);
        let grad = self.backward(params, &cache, &dy);
        Ok((loss, grad))
    }

    pub fn loss(&self, params: &[f64], x: &[f64], steps: &[usize], cond: &[f64], target: &[f64]) -> Result<f64, PolicyError> {
        let pred = self.predict(params, x, steps, cond)?;
        if target.len() != pred.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: pred.len(),
                actual: target.len(),
            });
        }
        Ok(pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
    }

    fn backward(&self, params: &[f64], c: &Cache, dy: &Array2<f64>) -> Vec<f64> {
        let cfg = &self.config;
        let h = cfg.horizon;
        let mut g = vec![0.0; self.total];

        let dao = affine_backward(params, &mut g, self.output, &c.ao, dy, true).expect("input grad");
        let mut dh = dao * &c.h_last.mapv(silu_grad);
        let mut dse = Array2::<f64>::zeros(c.se.dim());

        for (blk, bc) in self.blocks.iter().zip(&c.blocks).rev() {
            let dcols2 = affine_backward(params, &mut g, blk.c2, &bc.cols2, &dh, true).expect("input grad");
            let da2 = col2im(&dcols2, cfg.hidden, h, cfg.kernel);
            let dz1 = da2 * &bc.z1.mapv(silu_grad);

            let deb = sum_per_sample(&dz1, h, c.batch);
            let dse_blk = affine_backward(params, &mut g, blk.emb, &c.se, &deb, true).expect("input grad");
            dse += &dse_blk;

            let dcols1 = affine_backward(params, &mut g, blk.c1, &bc.cols1, &dz1, true).expect("input grad");
            let da1 = col2im(&dcols1, cfg.hidden, h, cfg.kernel);
            dh = dh + da1 * &bc.h_in.mapv(silu_grad);
        }
        affine_backward(params, &mut g, self.input, &c.cols0, &dh, false);

        let de = dse * &c.e.mapv(silu_grad);
        let dta = affine_backward(params, &mut g, self.time2, &c.ta, &de, true).expect("input grad");
        let dth = dta * &c.th.mapv(silu_grad);
        affine_backward(params, &mut g, self.time1, &c.temb, &dth, false);
        let dca = affine_backward(params, &mut g, self.cond2, &c.ca, &de, true).expect("input grad");
        let dch = dca * &c.ch.mapv(silu_grad);
        affine_backward(params, &mut g, self.cond1, &c.cond, &dch, false);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn im2col_adjoint() {
        // <im2col(x), y> = <x, col2im(y)> for random x, y.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, h, b, k) = (3, 7, 2, 5);
        let x = Array2::from_shape_vec((c, h * b), gaussian(&mut rng, c * h * b)).unwrap();
        let y = Array2::from_shape_vec((c * k, h * b), gaussian(&mut rng, c * k * h * b)).unwrap();
        let lhs = (&im2col(&x, h, k) * &y).sum();
        let rhs = (&x * &col2im(&y, c, h, k)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn convolution_does_not_mix_samples() {
        let x = Array2::from_shape_fn((1, 8), |(_, j)| j as f64 + 1.0);
        let cols = im2col(&x, 4, 3);
        // Sample 0 is columns 0..4, sample 1 columns 4..8; the left shift of
        // column 4 must read padding, not column 3.
        assert_eq!(cols[(0, 4)], 0.0);
        assert_eq!(cols[(2, 3)], 0.0);
        assert_eq!(cols[(1, 5)], 6.0);
    }

    #[test]
    fn manifest_covers_parameters() {
        let net = Denoiser::new(NetConfig::new(8, 6, 5)).unwrap();
        let mut next = 0;
        for t in net.manifest() {
            assert_eq!(t.offset, next);
            next += t.len();
        }
        assert_eq!(next, net.param_count());
    }

    #[test]
    fn batch_entries_are_independent() {
        let net = Denoiser::new(NetConfig::new(8, 6, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = net.init(&mut rng);
        let x = gaussian(&mut rng, 2 * 8 * POSE_DIM);
        let cond = gaussian(&mut rng, 2 * 4);
        let both = net.predict(&p, &x, &[3, 40], &cond).unwrap();
        let second = net.predict(&p, &x[8 * POSE_DIM..], &[40], &cond[4..]).unwrap();
        for (a, b) in both[8 * POSE_DIM..].iter().zip(&second) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = Denoiser::new(NetConfig::new(6, 5, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = net.init(&mut rng);
        let x = gaussian(&mut rng, 2 * 6 * POSE_DIM);
        let target = gaussian(&mut rng, 2 * 6 * POSE_DIM);
        let cond = gaussian(&mut rng, 2 * 4);
        let steps = [5, 71];
        let (_, grad) = net.loss_and_grad(&p, &x, &steps, &cond, &target).unwrap();
        let eps = 1e-5;
        for i in (0..p.len()).step_by(7) {
            let mut hi = p.clone();
            hi[i] += eps;
            let mut lo = p.clone();
            lo[i] -= eps;
            let fd = (net.loss(&hi, &x, &steps, &cond, &target).unwrap()
                - net.loss(&lo, &x, &steps, &cond, &target).unwrap())
                / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / denom < 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
        }
    }
}
