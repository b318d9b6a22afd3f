//! A single attention + gated-FFN block built from widely-linear layers.
//!
//! Sequences are `d×L` complex matrices (one column per position) with
//! `d = model_dim / 2`. Head `h` owns complex channels `h·c..(h+1)·c` of the
//! Q/K/V outputs, `c = head_dim / 2`; in stacked real coordinates that is
//! rows `h·c..(h+1)·c` plus the same range offset by `n_heads·c`.
//!
//! The block has residual connections around both sublayers and no
//! normalization or positional encoding:
//!
//! ```text
//! h   = x + O(attn(Q x, K x, V x))
//! out = h + Down(silu(Gate h) ⊙ Up h)
//! ```
//!
//! `silu` and `⊙` act on real and imaginary planes separately.

use crate::error::{Error, Result};
use crate::kernels::{mf_infer_layer, ActivationVector};
use crate::residual::{residual_quantize, QuantizedLayer};
use crate::synth;
use crate::tensor::{ComplexMatrix, RealMatrix};
use crate::widely_linear::{
    hermitian_score, real_to_widely_linear_strict, realify_layer, stack, unstack, WidelyLinearLayer,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Q,
    K,
    V,
    O,
    Up,
    Gate,
    Down,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Q,
        LayerKind::K,
        LayerKind::V,
        LayerKind::O,
        LayerKind::Up,
        LayerKind::Gate,
        LayerKind::Down,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Q => "q_proj",
            LayerKind::K => "k_proj",
            LayerKind::V => "v_proj",
            LayerKind::O => "o_proj",
            LayerKind::Up => "up_proj",
            LayerKind::Gate => "gate_proj",
            LayerKind::Down => "down_proj",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Real dimensions of the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyBlockConfig {
    pub model_dim: usize,
    pub head_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub seed: u64,
}

impl ToyBlockConfig {
    pub fn validate(&self) -> Result<()> {
        for (axis, dim) in [
            ("model_dim", self.model_dim),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
        ] {
            if dim < 2 || dim % 2 != 0 {
                return Err(Error::InvalidConfig(format!("{axis} must be even and >= 2, got {dim}")));
            }
        }
        if self.n_heads == 0 {
            return Err(Error::InvalidConfig("n_heads must be >= 1".into()));
        }
        Ok(())
    }

    /// Real width of the concatenated heads.
    pub fn attn_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    /// Real `(rows, cols)` of each projection.
    pub fn shape_of(&self, kind: LayerKind) -> (usize, usize) {
        let (d, p, f) = (self.model_dim, self.attn_dim(), self.ffn_dim);
        match kind {
            LayerKind::Q | LayerKind::K | LayerKind::V => (p, d),
            LayerKind::O => (d, p),
            LayerKind::Up | LayerKind::Gate => (f, d),
            LayerKind::Down => (d, f),
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(fan_in)`.
    pub fn random_weights(&self, gain: f64) -> Vec<RealMatrix> {
        let mut rng = synth::rng(self.seed);
        LayerKind::ALL
            .iter()
            .map(|&k| {
                let (r, c) = self.shape_of(k);
                synth::gaussian_real(&mut rng, r, c, gain / (c as f64).sqrt())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Fp,
    Quantized,
}

#[derive(Debug, Clone)]
pub struct ToyBlock {
    pub config: ToyBlockConfig,
    /// Indexed by [`LayerKind::index`].
    pub layers: Vec<WidelyLinearLayer>,
    pub quantized: Option<Vec<QuantizedLayer>>,
}

/// Converts seven real projections (in [`LayerKind::ALL`] order) one by one.
pub fn convert_block(config: ToyBlockConfig, weights: &[RealMatrix]) -> Result<ToyBlock> {
    config.validate()?;
    if weights.len() != LayerKind::ALL.len() {
        return Err(Error::DimensionMismatch(format!("expected 7 weights, got {}", weights.len())));
    }
    let mut layers = Vec::with_capacity(7);
    for (&kind, r) in LayerKind::ALL.iter().zip(weights) {
        if r.shape() != config.shape_of(kind) {
            return Err(Error::DimensionMismatch(format!(
                "{} is {:?}, expected {:?}",
                kind.name(),
                r.shape(),
                config.shape_of(kind)
            )));
        }
        layers.push(real_to_widely_linear_strict(r)?);
    }
    Ok(ToyBlock {
        config,
        layers,
        quantized: None,
    })
}

impl ToyBlock {
    pub fn random(config: ToyBlockConfig, gain: f64) -> Result<Self> {
        config.validate()?;
        convert_block(config, &config.random_weights(gain))
    }

    pub fn layer(&self, kind: LayerKind) -> &WidelyLinearLayer {
        &self.layers[kind.index()]
    }

    /// Quantizes every layer into `stages` residual stages.
    pub fn quantize(&mut self, stages: usize) -> Result<()> {
        self.quantized = Some(
            self.layers
                .iter()
                .map(|l| residual_quantize(l, stages))
                .collect::<Result<_>>()?,
        );
        Ok(())
    }

    /// Real matrices of the layers, the input of the reference forward.
    pub fn real_weights(&self) -> Vec<RealMatrix> {
        self.layers.iter().map(realify_layer).collect()
    }

    fn linear(&self, kind: LayerKind, x: &ComplexMatrix, mode: ForwardMode) -> Result<ComplexMatrix> {
        match mode {
            ForwardMode::Fp => self.layer(kind).apply(x),
            ForwardMode::Quantized => {
                let q = self
                    .quantized
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("block has not been quantized".into()))?;
                let layer = &q[kind.index()];
                let cols = (0..x.cols())
                    .map(|j| {
                        let (re, im) = x.column_planes(j);
                        let y = mf_infer_layer(layer, &ActivationVector { re, im })?;
                        Ok((y.re, y.im))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ComplexMatrix::from_columns(&cols)
            }
        }
    }

    /// Multi-head attention sublayer, `O(attn(Qx, Kx, Vx))`, without the
    /// residual.
    pub fn attention_forward(&self, x: &ComplexMatrix, mode: ForwardMode) -> Result<ComplexMatrix> {
        self.check_input(x)?;
        let q = self.linear(LayerKind::Q, x, mode)?;
        let k = self.linear(LayerKind::K, x, mode)?;
        let v = self.linear(LayerKind::V, x, mode)?;
        let c = self.config.head_dim / 2;
        let l = x.cols();
        let mut z = ComplexMatrix::zeros(q.rows(), l);
        for h in 0..self.config.n_heads {
            let (lo, hi) = (h * c, (h + 1) * c);
            let scores = hermitian_score(&q.row_slice(lo, hi), &k.row_slice(lo, hi), self.config.head_dim)?;
            let a_t = softmax_rows(&scores).transpose();
            let vh = v.row_slice(lo, hi);
            let zr = vh.re_plane().matmul(&a_t)?;
            let zi = vh.im_plane().matmul(&a_t)?;
            z.re_mut()[lo * l..hi * l].copy_from_slice(zr.data());
            z.im_mut()[lo * l..hi * l].copy_from_slice(zi.data());
        }
        self.linear(LayerKind::O, &z, mode)
    }

    pub fn forward(&self, x: &ComplexMatrix, mode: ForwardMode) -> Result<ComplexMatrix> {
        let h = x.add(&self.attention_forward(x, mode)?)?;
        let g = self.linear(LayerKind::Gate, &h, mode)?;
        let u = self.linear(LayerKind::Up, &h, mode)?;
        let mut act = ComplexMatrix::zeros(g.rows(), g.cols());
        for (a, (g, u)) in act.re_mut().iter_mut().zip(g.re().iter().zip(u.re())) {
            *a = silu(*g) * u;
        }
        for (a, (g, u)) in act.im_mut().iter_mut().zip(g.im().iter().zip(u.im())) {
            *a = silu(*g) * u;
        }
        h.add(&self.linear(LayerKind::Down, &act, mode)?)
    }

    fn check_input(&self, x: &ComplexMatrix) -> Result<()> {
        if 2 * x.rows() != self.config.model_dim {
            return Err(Error::DimensionMismatch(format!(
                "block takes {} complex channels, got {}",
                self.config.model_dim / 2,
                x.rows()
            )));
        }
        Ok(())
    }
}

pub fn block_forward(b: &ToyBlock, x: &ComplexMatrix, mode: ForwardMode) -> Result<ComplexMatrix> {
    b.forward(x, mode)
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Numerically stable softmax over each row.
pub fn softmax_rows(s: &RealMatrix) -> RealMatrix {
    let (r, c) = s.shape();
    let mut out = RealMatrix::zeros(r, c);
    for i in 0..r {
        let row = &s.data()[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = e.iter().sum();
        for (o, v) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(e) {
            *o = v / sum;
        }
    }
    out
}

/// The same block written as an ordinary real transformer block acting on
/// stacked inputs `[Re x; Im x]`.
#[derive(Debug, Clone)]
pub struct RealBlock {
    pub weights: Vec<RealMatrix>,
    pub n_heads: usize,
    pub head_dim: usize,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RealCache {
    x: RealMatrix,
    q: RealMatrix,
    k: RealMatrix,
    v: RealMatrix,
    probs: Vec<RealMatrix>,
    z: RealMatrix,
    h: RealMatrix,
    g: RealMatrix,
    u: RealMatrix,
    act: RealMatrix,
}

impl RealBlock {
    pub fn of(block: &ToyBlock) -> Self {
        Self {
            weights: block.real_weights(),
            n_heads: block.config.n_heads,
            head_dim: block.config.head_dim,
        }
    }

    fn w(&self, kind: LayerKind) -> &RealMatrix {
        &self.weights[kind.index()]
    }

    /// Stacked row indices of head `h`.
    fn head_rows(&self, h: usize) -> Vec<usize> {
        let c = self.head_dim / 2;
        let half = self.n_heads * c;
        (h * c..(h + 1) * c).chain(half + h * c..half + (h + 1) * c).collect()
    }

    pub fn forward(&self, x: &RealMatrix) -> Result<RealMatrix> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &RealMatrix) -> Result<(RealMatrix, RealCache)> {
        let q = self.w(LayerKind::Q).matmul(x)?;
        let k = self.w(LayerKind::K).matmul(x)?;
        let v = self.w(LayerKind::V).matmul(x)?;
        let l = x.cols();
        let mut z = RealMatrix::zeros(q.rows(), l);
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let rows = self.head_rows(h);
            let (qh, kh, vh) = (gather(&q, &rows), gather(&k, &rows), gather(&v, &rows));
            let mut s = qh.transpose().matmul(&kh)?;
            s.data_mut().iter_mut().for_each(|v| *v *= scale);
            let a = softmax_rows(&s);
            scatter_add(&mut z, &rows, &vh.matmul(&a.transpose())?);
            probs.push(a);
        }
        let h = x.add(&self.w(LayerKind::O).matmul(&z)?)?;
        let g = self.w(LayerKind::Gate).matmul(&h)?;
        let u = self.w(LayerKind::Up).matmul(&h)?;
        let act = RealMatrix::from_fn(g.rows(), g.cols(), |i, j| silu(g.get(i, j)) * u.get(i, j));
        let out = h.add(&self.w(LayerKind::Down).matmul(&act)?)?;
        let cache = RealCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            z,
            h,
            g,
            u,
            act,
        };
        Ok((out, cache))
    }

    /// Weight gradients given `∂L/∂out`, in [`LayerKind::ALL`] order.
    pub fn backward(&self, c: &RealCache, d_out: &RealMatrix) -> Result<Vec<RealMatrix>> {
        let mut grads = vec![RealMatrix::zeros(0, 0); 7];
        let set = |grads: &mut Vec<RealMatrix>, k: LayerKind, g: RealMatrix| grads[k.index()] = g;

        // FFN
        set(&mut grads, LayerKind::Down, d_out.matmul(&c.act.transpose())?);
        let d_act = self.w(LayerKind::Down).transpose().matmul(d_out)?;
        let d_g = RealMatrix::from_fn(c.g.rows(), c.g.cols(), |i, j| {
            d_act.get(i, j) * c.u.get(i, j) * silu_grad(c.g.get(i, j))
        });
        let d_u = RealMatrix::from_fn(c.u.rows(), c.u.cols(), |i, j| d_act.get(i, j) * silu(c.g.get(i, j)));
        let h_t = c.h.transpose();
        set(&mut grads, LayerKind::Gate, d_g.matmul(&h_t)?);
        set(&mut grads, LayerKind::Up, d_u.matmul(&h_t)?);
        let d_h = d_out
            .add(&self.w(LayerKind::Gate).transpose().matmul(&d_g)?)?
            .add(&self.w(LayerKind::Up).transpose().matmul(&d_u)?)?;

        // attention
        set(&mut grads, LayerKind::O, d_h.matmul(&c.z.transpose())?);
        let d_z = self.w(LayerKind::O).transpose().matmul(&d_h)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let (mut d_q, mut d_k, mut d_v) = (
            RealMatrix::zeros(c.q.rows(), c.q.cols()),
            RealMatrix::zeros(c.k.rows(), c.k.cols()),
            RealMatrix::zeros(c.v.rows(), c.v.cols()),
        );
        for h in 0..self.n_heads {
            let rows = self.head_rows(h);
            let a = &c.probs[h];
            let (qh, kh, vh, dzh) = (
                gather(&c.q, &rows),
                gather(&c.k, &rows),
                gather(&c.v, &rows),
                gather(&d_z, &rows),
            );
            scatter_add(&mut d_v, &rows, &dzh.matmul(a)?);
            let d_a = dzh.transpose().matmul(&vh)?;
            let l = a.rows();
            let mut d_s = RealMatrix::zeros(l, l);
            for i in 0..l {
                let dot: f64 = (0..l).map(|j| a.get(i, j) * d_a.get(i, j)).sum();
                for j in 0..l {
                    d_s.set(i, j, a.get(i, j) * (d_a.get(i, j) - dot) * scale);
                }
            }
            scatter_add(&mut d_q, &rows, &kh.matmul(&d_s.transpose())?);
            scatter_add(&mut d_k, &rows, &qh.matmul(&d_s)?);
        }
        let x_t = c.x.transpose();
        set(&mut grads, LayerKind::Q, d_q.matmul(&x_t)?);
        set(&mut grads, LayerKind::K, d_k.matmul(&x_t)?);
        set(&mut grads, LayerKind::V, d_v.matmul(&x_t)?);
        Ok(grads)
    }
}

fn gather(m: &RealMatrix, rows: &[usize]) -> RealMatrix {
    RealMatrix::from_fn(rows.len(), m.cols(), |i, j| m.get(rows[i], j))
}

fn scatter_add(m: &mut RealMatrix, rows: &[usize], src: &RealMatrix) {
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..src.cols() {
            m.set(r, j, m.get(r, j) + src.get(i, j));
        }
    }
}

/// Complex forward computed through the real reference block.
pub fn reference_forward(b: &ToyBlock, x: &ComplexMatrix) -> Result<ComplexMatrix> {
    unstack(&RealBlock::of(b).forward(&stack(x))?)
}
