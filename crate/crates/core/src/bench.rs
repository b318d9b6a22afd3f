//! Timing and operation counts for the four matvec paths.
//!
//! Counts come from running each path once over [`Counted`] scalars, so they
//! reflect the operations the code really performs rather than a formula.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::error::Result;
use crate::kernels::{
    lut_accumulate, lut_apply_stage_with, lut_infer_layer_with, mf_accumulate, mf_apply_stage_with,
    mf_infer_layer_with, ActivationVector, LutLayer, LutTable, ScaleOrder, StageExecutor,
};
use crate::residual::{residual_quantize, QuantizedLayer};
use crate::scalar::{count_ops, to_counted, Counted, OpCounts};
use crate::synth;
use crate::tensor::{matmul_planes, MulAlgo};
use crate::widely_linear::real_to_widely_linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPath {
    DenseNaive,
    DenseGauss,
    Mf,
    Lut,
}

impl KernelPath {
    pub const ALL: [KernelPath; 4] = [Self::DenseNaive, Self::DenseGauss, Self::Mf, Self::Lut];

    pub fn name(self) -> &'static str {
        match self {
            Self::DenseNaive => "dense-naive",
            Self::DenseGauss => "dense-gauss",
            Self::Mf => "mf",
            Self::Lut => "lut",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Complex `(n, m)` layer shapes.
    pub sizes: Vec<(usize, usize)>,
    pub stages: Vec<usize>,
    pub repeats: usize,
    pub threads: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub path: KernelPath,
    pub n: usize,
    pub m: usize,
    pub stages: usize,
    pub threads: usize,
    /// Median over repeats.
    pub wall_ns: u128,
    pub mults: u64,
    pub adds: u64,
    pub fetches: u64,
    /// Multiplications inside the code-accumulation loops (mf and lut only).
    pub loop_mults: u64,
}

pub const CSV_HEADER: &str = "path,n,m,T,threads,wall_ns,mults,adds,fetches";

pub fn write_csv<W: Write>(rows: &[BenchRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.path.name(),
            r.n,
            r.m,
            r.stages,
            r.threads,
            r.wall_ns,
            r.mults,
            r.adds,
            r.fetches
        )?;
    }
    Ok(())
}

/// Median wall time of `repeats` calls.
pub fn median_time(repeats: usize, mut f: impl FnMut()) -> Duration {
    let mut times: Vec<Duration> = (0..repeats.max(1))
        .map(|_| {
            let t0 = Instant::now();
            f();
            t0.elapsed()
        })
        .collect();
    times.sort();
    times[times.len() / 2]
}

/// Random quantized layer with complex shape `(n, m)`.
pub fn random_layer(n: usize, m: usize, stages: usize, seed: u64) -> Result<QuantizedLayer> {
    let mut rng = synth::rng(seed);
    let r = synth::gaussian_real(&mut rng, 2 * n, 2 * m, 1.0 / ((2 * m) as f64).sqrt());
    residual_quantize(&real_to_widely_linear(&r), stages)
}

/// Operation counts of the dense path (reconstructed `Û, Ŵ`, one complex
/// matvec each).
pub fn count_dense(q: &QuantizedLayer, x: &ActivationVector, algo: MulAlgo) -> OpCounts {
    let (n, m) = q.shape();
    let dense = q.reconstruct();
    let c = |v: &[f64]| to_counted(v);
    let (ur, ui, wr, wi) = (c(dense.u.re()), c(dense.u.im()), c(dense.w.re()), c(dense.w.im()));
    let (xr, xi) = (c(&x.re), c(&x.im));
    let xci: Vec<Counted> = xi.iter().map(|&v| -v).collect();
    count_ops(|| {
        let (ar, ai) = matmul_planes(&ur, &ui, &xr, &xi, n, m, 1, algo);
        let (br, bi) = matmul_planes(&wr, &wi, &xr, &xci, n, m, 1, algo);
        let y: Vec<_> = ar.iter().zip(&br).map(|(&a, &b)| a + b).collect();
        let z: Vec<_> = ai.iter().zip(&bi).map(|(&a, &b)| a + b).collect();
        (y, z)
    })
    .1
}

/// Counts for the mf path: `(total, accumulation-loop only)`.
pub fn count_mf(q: &QuantizedLayer, x: &ActivationVector) -> (OpCounts, OpCounts) {
    let (xr, xi) = (to_counted(&x.re), to_counted(&x.im));
    let xci: Vec<Counted> = xi.iter().map(|&v| -v).collect();
    let (_, total) = count_ops(|| {
        let mut acc: Option<(Vec<Counted>, Vec<Counted>)> = None;
        for s in q.stages() {
            let sc = [
                (Counted(s.u_scales.s_re), Counted(s.u_scales.s_im)),
                (Counted(s.w_scales.s_re), Counted(s.w_scales.s_im)),
            ];
            let (re, im) = mf_apply_stage_with(s, sc, &xr, &xi);
            acc = Some(match acc {
                None => (re, im),
                Some((ar, ai)) => (
                    ar.into_iter().zip(re).map(|(a, b)| a + b).collect(),
                    ai.into_iter().zip(im).map(|(a, b)| a + b).collect(),
                ),
            });
        }
        acc
    });
    let (_, loop_only) = count_ops(|| {
        for s in q.stages() {
            mf_accumulate(&s.u_codes, &xr, &xi);
            mf_accumulate(&s.w_codes, &xr, &xci);
        }
    });
    (total, loop_only)
}

/// Counts for the lut path (table build included): `(total, fetch loop only)`.
pub fn count_lut(q: &QuantizedLayer, x: &ActivationVector) -> Result<(OpCounts, OpCounts)> {
    let layer = LutLayer::from_layer(q);
    let (xr, xi) = (to_counted(&x.re), to_counted(&x.im));
    let xci: Vec<Counted> = xi.iter().map(|&v| -v).collect();
    let (out, total) = count_ops(|| -> Result<()> {
        let lut = LutTable::build(&xr, &xi);
        let lut_conj = LutTable::build(&xr, &xci);
        let mut acc: Option<(Vec<Counted>, Vec<Counted>)> = None;
        for s in &layer.stages {
            let sc = [
                (Counted(s.u.scales.s_re), Counted(s.u.scales.s_im)),
                (Counted(s.w.scales.s_re), Counted(s.w.scales.s_im)),
            ];
            let (re, im) = lut_apply_stage_with(s, sc, &lut, &lut_conj)?;
            acc = Some(match acc {
                None => (re, im),
                Some((ar, ai)) => (
                    ar.into_iter().zip(re).map(|(a, b)| a + b).collect(),
                    ai.into_iter().zip(im).map(|(a, b)| a + b).collect(),
                ),
            });
        }
        Ok(())
    });
    out?;
    let lut = LutTable::build(&xr, &xi);
    let lut_conj = LutTable::build(&xr, &xci);
    let (out, loop_only) = count_ops(|| -> Result<()> {
        for s in &layer.stages {
            lut_accumulate(&s.u, &lut)?;
            lut_accumulate(&s.w, &lut_conj)?;
        }
        Ok(())
    });
    out?;
    Ok((total, loop_only))
}

fn dense_matvec(q: &QuantizedLayer, x: &ActivationVector, algo: MulAlgo) -> ActivationVector {
    let (n, m) = q.shape();
    let dense = q.reconstruct();
    let xci: Vec<f64> = x.im.iter().map(|v| -v).collect();
    let (ar, ai) = matmul_planes(dense.u.re(), dense.u.im(), &x.re, &x.im, n, m, 1, algo);
    let (br, bi) = matmul_planes(dense.w.re(), dense.w.im(), &x.re, &xci, n, m, 1, algo);
    ActivationVector {
        re: ar.iter().zip(&br).map(|(a, b)| a + b).collect(),
        im: ai.iter().zip(&bi).map(|(a, b)| a + b).collect(),
    }
}

/// Times and counts every path for every `(size, T)` combination.
pub fn bench_kernels(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let exec = StageExecutor::new(cfg.threads)?;
    let mut rows = Vec::new();
    for (i, &(n, m)) in cfg.sizes.iter().enumerate() {
        for &t in &cfg.stages {
            let seed = cfg.seed.wrapping_add((i * 1000 + t) as u64);
            let q = random_layer(n, m, t, seed)?;
            let x = synth::gaussian_activation(&mut synth::rng(seed ^ 0x5eed), m);
            let lut_layer = LutLayer::from_layer(&q);
            for path in KernelPath::ALL {
                let (counts, loop_counts, wall) = match path {
                    KernelPath::DenseNaive | KernelPath::DenseGauss => {
                        let algo = if path == KernelPath::DenseNaive {
                            MulAlgo::Naive
                        } else {
                            MulAlgo::Gauss
                        };
                        // the dense path multiplies reconstructed weights; the
                        // reconstruction itself is not timed
                        let (n_, m_) = q.shape();
                        let dense = q.reconstruct();
                        let xci: Vec<f64> = x.im.iter().map(|v| -v).collect();
                        let wall = median_time(cfg.repeats, || {
                            let a = matmul_planes(dense.u.re(), dense.u.im(), &x.re, &x.im, n_, m_, 1, algo);
                            let b = matmul_planes(dense.w.re(), dense.w.im(), &x.re, &xci, n_, m_, 1, algo);
                            std::hint::black_box((a, b));
                        });
                        (count_dense(&q, &x, algo), OpCounts::default(), wall)
                    }
                    KernelPath::Mf => {
                        let (total, lp) = count_mf(&q, &x);
                        let wall = median_time(cfg.repeats, || {
                            std::hint::black_box(mf_infer_layer_with(&q, &x, &exec, ScaleOrder::PerStage).ok());
                        });
                        (total, lp, wall)
                    }
                    KernelPath::Lut => {
                        let (total, lp) = count_lut(&q, &x)?;
                        let wall = median_time(cfg.repeats, || {
                            std::hint::black_box(lut_infer_layer_with(&lut_layer, &x, &exec).ok());
                        });
                        (total, lp, wall)
                    }
                };
                rows.push(BenchRow {
                    path,
                    n,
                    m,
                    stages: t,
                    threads: exec.threads(),
                    wall_ns: wall.as_nanos(),
                    mults: counts.mults,
                    adds: counts.adds,
                    fetches: counts.fetches,
                    loop_mults: loop_counts.mults,
                });
            }
        }
    }
    Ok(rows)
}

/// Dense output of the reconstructed layer computed with the chosen complex
/// multiplication; exposed so the paths can be cross-checked.
pub fn dense_output(q: &QuantizedLayer, x: &ActivationVector, algo: MulAlgo) -> ActivationVector {
    dense_matvec(q, x, algo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_construction() {
        let (n, m, t) = (8, 12, 2);
        let q = random_layer(n, m, t, 3).unwrap();
        let x = synth::gaussian_activation(&mut synth::rng(4), m);

        let naive = count_dense(&q, &x, MulAlgo::Naive);
        let gauss = count_dense(&q, &x, MulAlgo::Gauss);
        // two planes × n·m complex products
        assert_eq!(naive.mults, 2 * 4 * (n * m) as u64);
        assert_eq!(gauss.mults, 2 * 3 * (n * m) as u64);
        assert_eq!(gauss.mults * 4, naive.mults * 3);

        let (mf, mf_loop) = count_mf(&q, &x);
        assert_eq!(mf_loop.mults, 0);
        // 4 scale multiplies per row per plane per stage
        assert_eq!(mf.mults, (t * 2 * 4 * n) as u64);

        let (lut, lut_loop) = count_lut(&q, &x).unwrap();
        assert_eq!(lut_loop.mults, 0);
        assert_eq!(lut.mults, (t * 2 * 4 * n) as u64);
        assert_eq!(lut.fetches, (t * 2 * n * m.div_ceil(4)) as u64);
        assert_eq!(mf.fetches, 0);

        let a = dense_output(&q, &x, MulAlgo::Naive);
        let b = dense_output(&q, &x, MulAlgo::Gauss);
        assert!(a.max_abs_diff(&b) <= 1e-12 * a.max_abs());
    }

    #[test]
    fn csv_has_all_paths() {
        let cfg = BenchConfig {
            sizes: vec![(4, 8)],
            stages: vec![1, 2],
            repeats: 1,
            threads: 1,
            seed: 0,
        };
        let rows = bench_kernels(&cfg).unwrap();
        assert_eq!(rows.len(), 8);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let paths: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
        for p in ["dense-naive", "dense-gauss", "mf", "lut"] {
            assert!(paths.contains(&p));
        }
    }
}
