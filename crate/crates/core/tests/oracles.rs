//! Checks against independently computed references.

use wlquant::kernels::{lut_apply_stage_with, LutStage, LutTable};
use wlquant::phasequant::{CodePlane, CODEWORDS};
use wlquant::residual::{residual_quantize, QuantStage};
use wlquant::phasequant::AxisScales;
use wlquant::synth;
use wlquant::tensor::{ComplexMatrix, RealMatrix};
use wlquant::toy::{reference_forward, ForwardMode, ToyBlock, ToyBlockConfig};
use wlquant::widely_linear::{real_to_widely_linear, stack_complex_vector, WidelyLinearLayer};

/// Column `j` of the real matrix a layer represents is its response to the
/// `j`-th basis vector.
fn realify_by_probing(l: &WidelyLinearLayer) -> RealMatrix {
    let (rows, cols) = (l.real_out_dim, l.real_in_dim);
    let mut out = RealMatrix::zeros(rows, cols);
    for j in 0..cols {
        let mut e = vec![0.0; cols];
        e[j] = 1.0;
        let y = l.apply_real(&e).unwrap();
        for (i, v) in y.into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    out
}

#[test]
fn probing_recovers_source_matrix() {
    let mut rng = synth::rng(10);
    for (r, c) in [(2, 2), (4, 6), (7, 3), (5, 5), (1, 8)] {
        let m = synth::gaussian_real(&mut rng, r, c, 1.0);
        let probed = realify_by_probing(&real_to_widely_linear(&m));
        assert!(probed.max_abs_diff(&m) <= 1e-15 * m.max_abs() * 4.0, "{r}x{c}");
    }
}

#[test]
fn stacking_convention() {
    // one complex channel: R = [[a, b], [c, d]] acting on [Re x; Im x]
    let r = RealMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let l = real_to_widely_linear(&r);
    let y = l.apply(&ComplexMatrix::column(&[wlquant::tensor::ComplexScalar::new(1.0, 0.0)]).unwrap()).unwrap();
    assert_eq!(stack_complex_vector(&y), vec![1.0, 3.0]);
}

/// Integer LUT evaluation agrees with summing `i^k · x_j` directly.
#[test]
fn lut_is_bit_exact_in_integers() {
    let mut rng = synth::rng(11);
    for (n, m) in [(3, 4), (5, 9), (2, 13), (6, 16)] {
        let codes = |rng: &mut synth::SynthRng| {
            let v = (0..n * m).map(|_| (synth::gaussian(rng).to_bits() % 4) as u8).collect();
            CodePlane::new(n, m, v).unwrap()
        };
        let stage = QuantStage {
            u_codes: codes(&mut rng),
            u_scales: AxisScales::new(1.0, 1.0),
            w_codes: codes(&mut rng),
            w_scales: AxisScales::new(1.0, 1.0),
            stage_index: 0,
        };
        let xr: Vec<i64> = (0..m).map(|_| (synth::gaussian(&mut rng) * 1000.0) as i64).collect();
        let xi: Vec<i64> = (0..m).map(|_| (synth::gaussian(&mut rng) * 1000.0) as i64).collect();
        let xci: Vec<i64> = xi.iter().map(|v| -v).collect();
        let lut = LutTable::build(&xr, &xi);
        let lut_conj = LutTable::build(&xr, &xci);
        let (got_re, got_im) = lut_apply_stage_with(&LutStage::from_stage(&stage), [(1, 1), (1, 1)], &lut, &lut_conj).unwrap();

        for i in 0..n {
            let (mut re, mut im) = (0i64, 0i64);
            for j in 0..m {
                for (plane, x_im) in [(&stage.u_codes, &xi), (&stage.w_codes, &xci)] {
                    let (cr, ci) = CODEWORDS[plane.codes()[i * m + j] as usize];
                    let (cr, ci) = (i64::from(cr), i64::from(ci));
                    re += cr * xr[j] - ci * x_im[j];
                    im += cr * x_im[j] + ci * xr[j];
                }
            }
            assert_eq!((got_re[i], got_im[i]), (re, im), "row {i} of {n}x{m}");
        }
    }
}

fn read_golden() -> Vec<(f64, f64)> {
    let text = include_str!("fixtures/toy_block_golden.txt");
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace().map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect()
}

#[test]
fn toy_block_golden_trace() {
    let cfg = ToyBlockConfig {
        model_dim: 8,
        head_dim: 8,
        n_heads: 1,
        ffn_dim: 8,
        seed: 2024,
    };
    let b = ToyBlock::random(cfg, 1.0).unwrap();
    let x = synth::gaussian_complex(&mut synth::rng(77), 4, 4, 1.0);
    let golden = read_golden();
    for y in [reference_forward(&b, &x).unwrap(), b.forward(&x, ForwardMode::Fp).unwrap()] {
        assert_eq!(y.len(), golden.len());
        for (z, &(re, im)) in y.entries().zip(&golden) {
            assert!((z.re - re).abs() <= 1e-10 && (z.im - im).abs() <= 1e-10);
        }
    }
}

#[test]
fn identity_block_with_single_position() {
    // Q=K=V=O=I and zero FFN: the output is x + x
    let cfg = ToyBlockConfig {
        model_dim: 4,
        head_dim: 4,
        n_heads: 1,
        ffn_dim: 2,
        seed: 0,
    };
    let eye = RealMatrix::identity(4);
    let zeros = [RealMatrix::zeros(2, 4), RealMatrix::zeros(2, 4), RealMatrix::zeros(4, 2)];
    let weights = vec![
        eye.clone(),
        eye.clone(),
        eye.clone(),
        eye,
        zeros[0].clone(),
        zeros[1].clone(),
        zeros[2].clone(),
    ];
    let b = wlquant::toy::convert_block(cfg, &weights).unwrap();
    let x = synth::gaussian_complex(&mut synth::rng(1), 2, 1, 1.0);
    let y = b.forward(&x, ForwardMode::Fp).unwrap();
    assert!(y.max_abs_diff(&x.add(&x).unwrap()) <= 1e-15);
}

#[test]
fn quantized_block_error_shrinks_with_stages() {
    let mut violations = 0;
    for seed in 0..20 {
        let cfg = ToyBlockConfig {
            model_dim: 16,
            head_dim: 4,
            n_heads: 2,
            ffn_dim: 16,
            seed,
        };
        let mut b = ToyBlock::random(cfg, 1.0).unwrap();
        let x = synth::gaussian_complex(&mut synth::rng(1000 + seed), 8, 6, 1.0);
        let fp = b.forward(&x, ForwardMode::Fp).unwrap();
        let mut prev = f64::INFINITY;
        for t in 1..=3 {
            b.quantize(t).unwrap();
            let err = b.forward(&x, ForwardMode::Quantized).unwrap().sub(&fp).unwrap().frobenius_norm()
                / fp.frobenius_norm();
            if err > prev {
                violations += 1;
            }
            prev = err;
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn residual_stage_codes_are_deterministic() {
    let mut rng = synth::rng(12);
    let r = synth::gaussian_real(&mut rng, 10, 12, 1.0);
    let l = real_to_widely_linear(&r);
    assert_eq!(residual_quantize(&l, 3).unwrap(), residual_quantize(&l, 3).unwrap());
}
