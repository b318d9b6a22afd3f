//! The `verify` subcommand: equivalence, roundtrip, kernel oracle and budget
//! checks over every layer of a checkpoint.

use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;

use wlquant::kernels::{dense_apply, lut_infer_layer_with, mf_infer_layer_with, LutLayer, ScaleOrder, StageExecutor};
use wlquant::packing::{code_payload_bits, layer_file_len, read_layer, read_real_checkpoint, write_layer};
use wlquant::residual::{residual_quantize, QuantizedLayer};
use wlquant::synth;
use wlquant::tensor::RealMatrix;
use wlquant::widely_linear::{realify_conj, realify_lin, pad_real, real_to_widely_linear, widely_linear_to_real};

use crate::masters::through_f32;
use crate::{fwl_path, open, probe};

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub equivalence: f64,
    pub roundtrip: f64,
    pub kernel: f64,
}

/// Worst result of one named check across layers.
struct Check {
    name: &'static str,
    pass: bool,
    measured: f64,
    tolerance: f64,
    verbose: bool,
}

impl Check {
    fn new(name: &'static str, tolerance: f64, verbose: bool) -> Self {
        Self {
            name,
            pass: true,
            measured: 0.0,
            tolerance,
            verbose,
        }
    }

    /// Records one layer's measurement; `NaN` counts as a failure.
    fn record(&mut self, layer: &str, measured: f64, pass: bool, note: &str) {
        let pass = pass && !measured.is_nan();
        if self.verbose {
            println!(
                "  {:<14} {:<24} {} measured={measured:.3e} tolerance={:.1e}{note}",
                self.name,
                layer,
                if pass { "PASS" } else { "FAIL" },
                self.tolerance
            );
        }
        self.pass &= pass;
        if measured.is_nan() || measured > self.measured {
            self.measured = measured;
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a: f64, &b| a.max(b.abs()))
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// The layer `quantize` would have written for `r`, after an on-disk
/// roundtrip so scales carry the same `f32` rounding as the file.
fn expected_layer(r: &RealMatrix, stages: usize) -> Result<QuantizedLayer> {
    let q = residual_quantize(&through_f32(&real_to_widely_linear(r)), stages)?;
    let mut bytes = Vec::new();
    write_layer(&q, &mut bytes)?;
    Ok(read_layer(bytes.as_slice())?)
}

pub fn cmd_verify(
    real: &Path,
    fwl_dir: &Path,
    samples: usize,
    tol: Tolerances,
    seed: u64,
    threads: usize,
    json: bool,
) -> Result<bool> {
    let tensors = read_real_checkpoint(open(real)?).context("reading checkpoint")?;
    let exec = StageExecutor::new(threads)?;
    let mut rng = synth::rng(seed);
    let mut equivalence = Check::new("equivalence", tol.equivalence, !json);
    let mut roundtrip = Check::new("roundtrip", tol.roundtrip, !json);
    let mut kernel = Check::new("kernel_oracle", tol.kernel, !json);
    let mut budget = Check::new("budget", 0.0, !json);

    for (name, r) in &tensors {
        let layer = real_to_widely_linear(r);

        let mut err: f64 = 0.0;
        for _ in 0..samples {
            let x = probe(&mut rng, r.cols());
            let want = r.matvec(&x)?;
            let got = layer.apply_real(&x)?;
            err = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(err, f64::max);
        }
        equivalence.record(name, err, err <= tol.equivalence, "");

        let back = widely_linear_to_real(&layer).max_abs_diff(r);
        let (padded, _) = pad_real(r);
        let blocks = realify_lin(&layer.u).add(&realify_conj(&layer.w))?.max_abs_diff(&padded);
        let rt = relative(back.max(blocks), r.max_abs());
        roundtrip.record(name, rt, rt <= tol.roundtrip, "");

        let path = fwl_path(fwl_dir, name);
        if !path.exists() {
            kernel.record(name, f64::NAN, false, " (missing .fwl file)");
            budget.record(name, f64::NAN, false, " (missing .fwl file)");
            continue;
        }
        let q = read_layer(open(&path)?).with_context(|| format!("reading {}", path.display()))?;
        let (n, m) = q.shape();
        let t = q.num_stages();

        let expected = expected_layer(r, t)?;
        if expected.shape() != q.shape()
            || (expected.real_out_dim, expected.real_in_dim) != (q.real_out_dim, q.real_in_dim)
        {
            kernel.record(name, f64::NAN, false, " (shape differs from checkpoint)");
        } else {
            let dense = expected.reconstruct();
            let lut = LutLayer::from_layer(&q);
            let mut worst: f64 = 0.0;
            for _ in 0..samples.max(1) {
                let x = synth::gaussian_activation(&mut rng, m);
                let want = dense_apply(&dense, &x)?;
                let scale = max_abs(&want.re).max(max_abs(&want.im));
                let mf = mf_infer_layer_with(&q, &x, &exec, ScaleOrder::PerStage)?;
                let lt = lut_infer_layer_with(&lut, &x, &exec)?;
                worst = worst
                    .max(relative(mf.max_abs_diff(&want), scale))
                    .max(relative(lt.max_abs_diff(&want), scale));
            }
            kernel.record(name, worst, worst <= tol.kernel, "");
        }

        let on_disk = std::fs::metadata(&path)?.len() as usize;
        let bits_per_param = code_payload_bits(n, m, t) as f64 / q.real_param_count() as f64;
        let deviation = (bits_per_param - t as f64).abs();
        let size_ok = on_disk == layer_file_len(n, m, t);
        budget.record(
            name,
            deviation,
            size_ok && deviation == 0.0,
            &format!(" ({bits_per_param:.2} bits/param, T={t}, {on_disk} bytes)"),
        );
    }

    let checks = [equivalence, roundtrip, kernel, budget];
    let all = checks.iter().all(|c| c.pass);
    if json {
        let mut obj = serde_json::Map::new();
        for c in &checks {
            // NaN is not representable in JSON
            let measured = if c.measured.is_finite() { json!(c.measured) } else { json!(null) };
            obj.insert(
                c.name.to_string(),
                json!({ "pass": c.pass, "measured": measured, "tolerance": c.tolerance }),
            );
        }
        println!("{}", serde_json::to_string_pretty(&obj)?);
    } else {
        for c in &checks {
            println!(
                "{} {:<14} measured={:.3e} tolerance={:.1e}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance
            );
        }
        if !all {
            let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
            println!("verification failed: {}", failed.join(", "));
        }
    }
    Ok(all)
}
