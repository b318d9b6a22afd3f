//! Quantization-aware training of a toy block.
//!
//! Full-precision masters are quantized every step; the loss and its
//! gradient are computed with the dequantized weights and the gradient is
//! passed straight through to the masters. Scales are recomputed from the
//! updated masters on the next step.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::phasequant::{quantize_tensor, scale_gradient};
use crate::residual::{reconstruct, residual_quantize};
use crate::schedule::{Preset, WsdSchedule};
use crate::synth;
use crate::tensor::{ComplexMatrix, RealMatrix};
use crate::toy::{RealBlock, ToyBlock, ToyBlockConfig};
use crate::widely_linear::{realify_layer, WidelyLinearLayer};

/// Regression onto `y_i = x_i + M·mean_j(x_j)` for stacked real sequences
/// `x` with i.i.d. standard normal entries and a fixed random `M`.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub teacher: RealMatrix,
    pub train: Vec<(RealMatrix, RealMatrix)>,
    pub eval: Vec<(RealMatrix, RealMatrix)>,
}

impl SyntheticTask {
    pub fn new(model_dim: usize, seq_len: usize, train_size: usize, eval_size: usize, seed: u64) -> Self {
        let mut rng = synth::rng(seed);
        let teacher = synth::gaussian_real(&mut rng, model_dim, model_dim, 1.0 / (model_dim as f64).sqrt());
        let mut sample = || {
            let x = synth::gaussian_real(&mut rng, model_dim, seq_len, 1.0);
            let mean = RealMatrix::from_fn(model_dim, 1, |i, _| {
                (0..seq_len).map(|j| x.get(i, j)).sum::<f64>() / seq_len as f64
            });
            let mixed = teacher.matmul(&mean).expect("teacher is square");
            let y = RealMatrix::from_fn(model_dim, seq_len, |i, j| x.get(i, j) + mixed.get(i, 0));
            (x, y)
        };
        let train = (0..train_size).map(|_| sample()).collect();
        let eval = (0..eval_size).map(|_| sample()).collect();
        Self { teacher, train, eval }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QatConfig {
    pub steps: usize,
    /// Residual stages in the forward pass; `None` trains unquantized.
    pub stages: Option<usize>,
    /// Sequences per step; at least the training-set size means full batch.
    pub batch_size: usize,
    pub momentum: f64,
    /// Also propagate through the stage-0 scales instead of holding them
    /// constant.
    pub scale_grad: bool,
    pub seed: u64,
}

impl Default for QatConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            stages: Some(2),
            batch_size: 8,
            momentum: 0.9,
            scale_grad: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    pub initial_eval: f64,
    pub final_eval: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "step,lr,loss")?;
    for r in trace {
        writeln!(out, "{},{:e},{:e}", r.step, r.lr, r.loss)?;
    }
    Ok(())
}

/// Weights used in the forward pass for the given masters.
fn effective(masters: &[WidelyLinearLayer], stages: Option<usize>) -> Result<Vec<WidelyLinearLayer>> {
    match stages {
        None => Ok(masters.to_vec()),
        Some(t) => masters.iter().map(|l| Ok(reconstruct(&residual_quantize(l, t)?))).collect(),
    }
}

fn real_block(b: &ToyBlock, layers: &[WidelyLinearLayer]) -> RealBlock {
    RealBlock {
        weights: layers.iter().map(realify_layer).collect(),
        n_heads: b.config.n_heads,
        head_dim: b.config.head_dim,
    }
}

/// Mean squared error over every real output entry of `batch`.
fn batch_loss(rb: &RealBlock, batch: &[&(RealMatrix, RealMatrix)]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in batch {
        let out = rb.forward(x)?;
        sum += out.sub(y)?.data().iter().map(|v| v * v).sum::<f64>();
        count += y.data().len();
    }
    Ok(sum / count as f64)
}

/// Loss of `b` on `data` using the forward the trainer would use.
pub fn evaluate(b: &ToyBlock, data: &[(RealMatrix, RealMatrix)], stages: Option<usize>) -> Result<f64> {
    let rb = real_block(b, &effective(&b.layers, stages)?);
    batch_loss(&rb, &data.iter().collect::<Vec<_>>())
}

/// Splits a gradient with respect to the real matrix into gradients with
/// respect to the real and imaginary parts of `U` and `W`.
pub fn real_grad_to_widely_linear(g: &RealMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let (r, c) = g.shape();
    if r % 2 != 0 || c % 2 != 0 {
        return Err(Error::OddDimension { axis: "gradient", dim: if r % 2 != 0 { r } else { c } });
    }
    let (n, m) = (r / 2, c / 2);
    let blk = |bi: usize, bj: usize, i: usize, j: usize| g.get(bi * n + i, bj * m + j);
    let du = ComplexMatrix::from_real_planes(
        &RealMatrix::from_fn(n, m, |i, j| blk(0, 0, i, j) + blk(1, 1, i, j)),
        &RealMatrix::from_fn(n, m, |i, j| blk(1, 0, i, j) - blk(0, 1, i, j)),
    )?;
    let dw = ComplexMatrix::from_real_planes(
        &RealMatrix::from_fn(n, m, |i, j| blk(0, 0, i, j) - blk(1, 1, i, j)),
        &RealMatrix::from_fn(n, m, |i, j| blk(0, 1, i, j) + blk(1, 0, i, j)),
    )?;
    Ok((du, dw))
}

/// Loss and master gradients `(dU, dW)` per layer on one batch.
pub fn loss_and_grads(
    b: &ToyBlock,
    batch: &[&(RealMatrix, RealMatrix)],
    stages: Option<usize>,
    scale_grad: bool,
) -> Result<(f64, Vec<(ComplexMatrix, ComplexMatrix)>)> {
    let eff = effective(&b.layers, stages)?;
    let rb = real_block(b, &eff);
    let count: usize = batch.iter().map(|(_, y)| y.data().len()).sum();
    let mut loss = 0.0;
    let mut acc: Option<Vec<RealMatrix>> = None;
    for (x, y) in batch {
        let (out, cache) = rb.forward_cached(x)?;
        let diff = out.sub(y)?;
        loss += diff.data().iter().map(|v| v * v).sum::<f64>();
        let mut d_out = diff;
        d_out.data_mut().iter_mut().for_each(|v| *v *= 2.0 / count as f64);
        let g = rb.backward(&cache, &d_out)?;
        acc = Some(match acc {
            None => g,
            Some(a) => a.iter().zip(&g).map(|(a, g)| a.add(g)).collect::<Result<_>>()?,
        });
    }
    let acc = acc.ok_or_else(|| Error::InvalidConfig("empty batch".into()))?;
    let mut grads = Vec::with_capacity(acc.len());
    for (g, master) in acc.iter().zip(&b.layers) {
        let (mut du, mut dw) = real_grad_to_widely_linear(g)?;
        if scale_grad && stages.is_some() {
            let qu = quantize_tensor(&master.u);
            let qw = quantize_tensor(&master.w);
            du = du.add(&scale_gradient(&du, &master.u, &qu.codes)?)?;
            dw = dw.add(&scale_gradient(&dw, &master.w, &qw.codes)?)?;
        }
        grads.push((du, dw));
    }
    Ok((loss / count as f64, grads))
}

fn axpy(target: &mut ComplexMatrix, a: f64, x: &ComplexMatrix) {
    for (t, v) in target.re_mut().iter_mut().zip(x.re()) {
        *t += a * v;
    }
    for (t, v) in target.im_mut().iter_mut().zip(x.im()) {
        *t += a * v;
    }
}

/// Gradient descent with optional heavy-ball momentum on the masters of `b`.
pub fn toy_qat_train(
    b: &mut ToyBlock,
    task: &SyntheticTask,
    schedule: &WsdSchedule,
    cfg: &QatConfig,
) -> Result<TrainReport> {
    if cfg.steps == 0 {
        return Err(Error::InvalidConfig("steps must be >= 1".into()));
    }
    if cfg.stages == Some(0) {
        return Err(Error::InvalidStageCount(0));
    }
    if task.train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("empty training set or batch".into()));
    }
    let mut rng = synth::rng(cfg.seed);
    let mut order: Vec<usize> = (0..task.train.len()).collect();
    let mut cursor = order.len();
    let mut velocity: Vec<(ComplexMatrix, ComplexMatrix)> = b
        .layers
        .iter()
        .map(|l| (ComplexMatrix::zeros(l.u.rows(), l.u.cols()), ComplexMatrix::zeros(l.w.rows(), l.w.cols())))
        .collect();
    let initial_eval = evaluate(b, &task.eval, cfg.stages)?;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<&(RealMatrix, RealMatrix)> = if cfg.batch_size >= task.train.len() {
            task.train.iter().collect()
        } else {
            (0..cfg.batch_size)
                .map(|_| {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    cursor += 1;
                    &task.train[order[cursor - 1]]
                })
                .collect()
        };
        let (loss, grads) = loss_and_grads(b, &batch, cfg.stages, cfg.scale_grad)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let lr = schedule.lr(step);
        trace.push(TraceRow { step, lr, loss });
        for ((layer, vel), (du, dw)) in b.layers.iter_mut().zip(&mut velocity).zip(&grads) {
            for (v, g, master) in [(&mut vel.0, du, &mut layer.u), (&mut vel.1, dw, &mut layer.w)] {
                let mut nv = v.scale(crate::tensor::ComplexScalar::new(cfg.momentum, 0.0));
                axpy(&mut nv, 1.0, g);
                axpy(master, -lr, &nv);
                *v = nv;
            }
        }
    }
    if b.quantized.is_some() {
        if let Some(t) = cfg.stages {
            b.quantize(t)?;
        }
    }
    let final_eval = evaluate(b, &task.eval, cfg.stages)?;
    if !final_eval.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: final_eval,
        });
    }
    Ok(TrainReport {
        trace,
        initial_eval,
        final_eval,
    })
}

/// Everything a toy training run needs, readable from `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainConfig {
    pub block: ToyBlockConfig,
    pub init_gain: f64,
    pub seq_len: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub task_seed: u64,
    pub peak_lr: f64,
    pub qat: QatConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            block: ToyBlockConfig {
                model_dim: 16,
                head_dim: 8,
                n_heads: 4,
                ffn_dim: 32,
                seed: 1,
            },
            init_gain: 0.5,
            seq_len: 8,
            train_size: 256,
            eval_size: 64,
            task_seed: 2,
            peak_lr: 0.2,
            qat: QatConfig::default(),
        }
    }
}

impl ToyTrainConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// `stages = 0` or `stages = none` disables quantization.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1)))?;
            let bad = |what: &str| Error::InvalidConfig(format!("line {}: bad {what} '{value}'", lineno + 1));
            let int = || value.parse::<usize>().map_err(|_| bad(key));
            let float = || value.parse::<f64>().map_err(|_| bad(key));
            match key {
                "model_dim" => c.block.model_dim = int()?,
                "head_dim" => c.block.head_dim = int()?,
                "n_heads" => c.block.n_heads = int()?,
                "ffn_dim" => c.block.ffn_dim = int()?,
                "block_seed" => c.block.seed = value.parse().map_err(|_| bad(key))?,
                "init_gain" => c.init_gain = float()?,
                "seq_len" => c.seq_len = int()?,
                "train_size" => c.train_size = int()?,
                "eval_size" => c.eval_size = int()?,
                "task_seed" => c.task_seed = value.parse().map_err(|_| bad(key))?,
                "peak_lr" => c.peak_lr = float()?,
                "steps" => c.qat.steps = int()?,
                "stages" => {
                    c.qat.stages = match value {
                        "none" | "0" => None,
                        _ => Some(int()?),
                    }
                }
                "batch_size" => c.qat.batch_size = int()?,
                "momentum" => c.qat.momentum = float()?,
                "scale_grad" => c.qat.scale_grad = value.parse().map_err(|_| bad(key))?,
                "seed" => c.qat.seed = value.parse().map_err(|_| bad(key))?,
                _ => return Err(Error::InvalidConfig(format!("line {}: unknown key '{key}'", lineno + 1))),
            }
        }
        c.block.validate()?;
        Ok(c)
    }

    pub fn task(&self) -> SyntheticTask {
        SyntheticTask::new(
            self.block.model_dim,
            self.seq_len,
            self.train_size,
            self.eval_size,
            self.task_seed,
        )
    }

    /// Trains a fresh block under `schedule`.
    pub fn run(&self, schedule: &WsdSchedule) -> Result<TrainReport> {
        let mut b = ToyBlock::random(self.block, self.init_gain)?;
        toy_qat_train(&mut b, &self.task(), schedule, &self.qat)
    }

    /// Trains a fresh block under a preset squeezed into `qat.steps`.
    pub fn run_preset(&self, preset: Preset) -> Result<TrainReport> {
        self.run(&preset.scaled(self.qat.steps, self.peak_lr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{block_forward, ForwardMode};
    use crate::widely_linear::{stack, unstack};

    fn tiny() -> ToyTrainConfig {
        ToyTrainConfig {
            block: ToyBlockConfig {
                model_dim: 4,
                head_dim: 2,
                n_heads: 1,
                ffn_dim: 2,
                seed: 3,
            },
            seq_len: 3,
            train_size: 4,
            eval_size: 4,
            ..ToyTrainConfig::default()
        }
    }

    #[test]
    fn master_gradients_match_finite_differences() {
        let cfg = tiny();
        let task = cfg.task();
        let b = ToyBlock::random(cfg.block, 1.0).unwrap();
        let batch: Vec<_> = task.train.iter().collect();
        let (_, grads) = loss_and_grads(&b, &batch, None, false).unwrap();

        // loss through the complex forward, independent of the real backward
        let loss = |b: &ToyBlock| {
            let mut s = 0.0;
            let mut n = 0;
            for (x, y) in &task.train {
                let out = block_forward(b, &unstack(x).unwrap(), ForwardMode::Fp).unwrap();
                s += stack(&out).sub(y).unwrap().data().iter().map(|v| v * v).sum::<f64>();
                n += y.data().len();
            }
            s / n as f64
        };
        let eps = 1e-6;
        let mut checked = 0;
        for (li, (du, dw)) in grads.iter().enumerate() {
            for plane in 0..2 {
                for part in 0..2 {
                    let g = if plane == 0 { du } else { dw };
                    for idx in 0..g.len() {
                        let bump = |d: f64| {
                            let mut p = b.clone();
                            let t = if plane == 0 { &mut p.layers[li].u } else { &mut p.layers[li].w };
                            let s = if part == 0 { t.re_mut() } else { t.im_mut() };
                            s[idx] += d;
                            loss(&p)
                        };
                        let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                        let an = if part == 0 { g.re()[idx] } else { g.im()[idx] };
                        assert!(
                            (fd - an).abs() <= 1e-4 * an.abs().max(1e-3),
                            "layer {li} plane {plane} part {part} idx {idx}: {an} vs {fd}"
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked >= 10);
    }

    #[test]
    fn zero_lr_keeps_masters() {
        let mut cfg = tiny();
        cfg.qat.steps = 5;
        cfg.qat.batch_size = usize::MAX;
        let mut b = ToyBlock::random(cfg.block, 1.0).unwrap();
        let before = b.layers.clone();
        let report = toy_qat_train(&mut b, &cfg.task(), &WsdSchedule::constant(0.0), &cfg.qat).unwrap();
        assert_eq!(b.layers, before);
        let first = report.trace[0].loss;
        assert!(report.trace.iter().all(|r| r.loss == first && r.lr == 0.0));
        assert_eq!(report.initial_eval, report.final_eval);
    }

    #[test]
    fn zero_steps_rejected() {
        let mut cfg = tiny();
        cfg.qat.steps = 0;
        assert!(cfg.run(&WsdSchedule::constant(0.1)).is_err());
    }

    #[test]
    fn huge_lr_reports_divergence() {
        let mut cfg = tiny();
        cfg.qat.steps = 200;
        cfg.qat.stages = None;
        let err = cfg.run(&WsdSchedule::constant(1e6)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn parses_key_values() {
        let c = ToyTrainConfig::parse("steps = 50 # short\n\nstages=none\npeak_lr = 0.1\nscale_grad = true\n").unwrap();
        assert_eq!(c.qat.steps, 50);
        assert_eq!(c.qat.stages, None);
        assert_eq!(c.peak_lr, 0.1);
        assert!(c.qat.scale_grad);
        assert!(ToyTrainConfig::parse("bogus = 1").is_err());
        assert!(ToyTrainConfig::parse("steps").is_err());
        assert!(ToyTrainConfig::parse("model_dim = 5").is_err());
    }

    #[test]
    fn trace_csv() {
        let rows = [TraceRow { step: 0, lr: 0.5, loss: 2.0 }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,lr,loss\n0,5e-1,2e0\n");
    }
}
