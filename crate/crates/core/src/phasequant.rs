//! Phase-aware 2-bit quantization onto the codebook `{+1, +i, −1, −i}`.
//!
//! Code `k` stands for the codeword `i^k`. A weight is projected to the
//! codeword nearest in angle, using the half-open sectors of
//! `k = floor(2θ/π + ½) mod 4` with `θ = Arg(w) ∈ (−π, π]`. Two per-tensor
//! scales restore magnitude: `s_re` is the mean `|Re w|` over weights coded
//! `±1`, and `s_im` the mean `|Im w|` over weights coded `±i`.

use crate::error::{Error, Result};
use crate::tensor::{ComplexMatrix, ComplexScalar};

/// `(b_re, b_im)` for each code.
pub const CODEWORDS: [(i8, i8); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// One 2-bit code per weight, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodePlane {
    rows: usize,
    cols: usize,
    codes: Vec<u8>,
}

impl CodePlane {
    pub fn new(rows: usize, cols: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} code plane needs {} codes, got {}",
                rows * cols,
                codes.len()
            )));
        }
        if let Some(index) = codes.iter().position(|&c| c > 3) {
            return Err(Error::InvalidCode {
                index,
                code: codes[index],
            });
        }
        Ok(Self { rows, cols, codes })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            codes: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Per-tensor magnitudes for the real (`±1`) and imaginary (`±i`) axes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisScales {
    pub s_re: f64,
    pub s_im: f64,
}

impl AxisScales {
    pub fn new(s_re: f64, s_im: f64) -> Self {
        debug_assert!(s_re >= 0.0 && s_im >= 0.0);
        Self { s_re, s_im }
    }

    pub fn is_zero(&self) -> bool {
        self.s_re == 0.0 && self.s_im == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub codes: CodePlane,
    pub scales: AxisScales,
}

/// Nearest codeword by angle.
///
/// Equivalent to `floor(2·Arg(w)/π + ½) mod 4`, evaluated with exact
/// comparisons on `(Re w, Im w)` so boundary ties land on the sector the floor
/// rule assigns (`θ = π/4 ↦ +i`, `θ = 3π/4 ↦ −1`, `θ = π ↦ −1`,
/// `θ = −3π/4 ↦ −i`, `θ = −π/4 ↦ +1`). `Arg(0)` is taken as 0.
pub fn phase_project(w: ComplexScalar) -> u8 {
    let (a, b) = (w.re, w.im);
    if a > 0.0 && -a <= b && b < a {
        0
    } else if b > 0.0 && -b < a && a <= b {
        1
    } else if a < 0.0 && a < b && b <= -a {
        2
    } else if b < 0.0 && b <= a && a < -b {
        3
    } else {
        // only the origin is left
        0
    }
}

pub fn project_tensor(w: &ComplexMatrix) -> CodePlane {
    CodePlane {
        rows: w.rows(),
        cols: w.cols(),
        codes: w.entries().map(phase_project).collect(),
    }
}

/// Mean-magnitude scales for the two axes; an empty axis gets scale 0.
///
/// Sums run sequentially in index order so results are reproducible.
pub fn compute_scales(w: &ComplexMatrix, codes: &CodePlane) -> Result<AxisScales> {
    if w.shape() != codes.shape() {
        return Err(Error::DimensionMismatch(format!(
            "tensor {:?} vs codes {:?}",
            w.shape(),
            codes.shape()
        )));
    }
    let (mut sum_re, mut n_re) = (0.0, 0usize);
    let (mut sum_im, mut n_im) = (0.0, 0usize);
    for ((&re, &im), &k) in w.re().iter().zip(w.im()).zip(&codes.codes) {
        if k % 2 == 0 {
            sum_re += re.abs();
            n_re += 1;
        } else {
            sum_im += im.abs();
            n_im += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(AxisScales::new(mean(sum_re, n_re), mean(sum_im, n_im)))
}

/// `ŵ = s_re·b_re + i·s_im·b_im` for every code.
pub fn dequantize(q: &QuantizedTensor) -> ComplexMatrix {
    let AxisScales { s_re, s_im } = q.scales;
    let mut out = ComplexMatrix::zeros(q.codes.rows, q.codes.cols);
    for (i, &k) in q.codes.codes.iter().enumerate() {
        match k {
            0 => out.re_mut()[i] = s_re,
            1 => out.im_mut()[i] = s_im,
            2 => out.re_mut()[i] = -s_re,
            _ => out.im_mut()[i] = -s_im,
        }
    }
    out
}

pub fn quantize_tensor(w: &ComplexMatrix) -> QuantizedTensor {
    let codes = project_tensor(w);
    let scales = compute_scales(w, &codes).expect("codes built from w");
    QuantizedTensor { codes, scales }
}

/// Straight-through backward pass: the projection is treated as the identity,
/// so the upstream gradient reaches the master weights unchanged.
pub fn ste_backward(upstream_grad: &ComplexMatrix, master: &ComplexMatrix) -> Result<ComplexMatrix> {
    if upstream_grad.shape() != master.shape() {
        return Err(Error::DimensionMismatch(format!(
            "gradient {:?} vs master {:?}",
            upstream_grad.shape(),
            master.shape()
        )));
    }
    Ok(upstream_grad.clone())
}

/// Extra master gradient contributed through the scales when they are not
/// treated as constants.
///
/// With `∂L/∂s_re = Σ g_re·b_re` over the `±1` subset and
/// `∂s_re/∂Re w_j = sign(Re w_j) / N_re`, each weight in that subset receives
/// `sign(Re w_j)·(∂L/∂s_re)/N_re` on its real part; the `±i` subset mirrors
/// this on imaginary parts.
pub fn scale_gradient(
    upstream_grad: &ComplexMatrix,
    master: &ComplexMatrix,
    codes: &CodePlane,
) -> Result<ComplexMatrix> {
    if upstream_grad.shape() != master.shape() || master.shape() != codes.shape() {
        return Err(Error::DimensionMismatch("scale gradient shapes".into()));
    }
    let (mut d_re, mut n_re, mut d_im, mut n_im) = (0.0, 0usize, 0.0, 0usize);
    for (i, &k) in codes.codes.iter().enumerate() {
        let (b_re, b_im) = CODEWORDS[k as usize];
        if k % 2 == 0 {
            d_re += upstream_grad.re()[i] * f64::from(b_re);
            n_re += 1;
        } else {
            d_im += upstream_grad.im()[i] * f64::from(b_im);
            n_im += 1;
        }
    }
    let mut out = ComplexMatrix::zeros(master.rows(), master.cols());
    for (i, &k) in codes.codes.iter().enumerate() {
        if k % 2 == 0 {
            out.re_mut()[i] = master.re()[i].signum() * d_re / n_re as f64;
        } else {
            out.im_mut()[i] = master.im()[i].signum() * d_im / n_im as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> ComplexScalar {
        ComplexScalar::new(re, im)
    }

    fn worked() -> ComplexMatrix {
        ComplexMatrix::from_entries(1, 3, &[c(2.0, 0.5), c(-1.0, 0.2), c(0.3, 3.0)]).unwrap()
    }

    /// Brute-force argmax of Re(w·conj(s)); ties go to the counter-clockwise
    /// codeword, matching the half-open floor sectors.
    fn argmax_code(w: ComplexScalar) -> u8 {
        let score = |k: usize| {
            let (br, bi) = CODEWORDS[k];
            w.re * f64::from(br) + w.im * f64::from(bi)
        };
        let best = (0..4).map(score).fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..4).filter(|&k| score(k) == best).collect();
        match tied.as_slice() {
            [k] => *k as u8,
            [0, 3] => 0,
            [a, _] => (*a as u8 + 1) % 4,
            _ => 0,
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(phase_project(c(1.0, 0.1)), 0);
        assert_eq!(phase_project(c(1.0, 1.0)), 1);
        assert_eq!(phase_project(c(-0.3, 0.1)), 2);
        assert_eq!(argmax_code(c(-0.3, 0.1)), 2);
        assert_eq!(phase_project(c(0.0, 0.0)), 0);
    }

    #[test]
    fn projection_boundaries_follow_floor_rule() {
        // (θ, expected k) from floor(2θ/π + ½) mod 4
        let cases = [
            (c(1.0, 1.0), 1),   // π/4
            (c(-1.0, 1.0), 2),  // 3π/4
            (c(-1.0, 0.0), 2),  // π
            (c(-1.0, -0.0), 2), // still π on the principal branch
            (c(-1.0, -1.0), 3), // −3π/4
            (c(1.0, -1.0), 0),  // −π/4
            (c(0.0, 2.0), 1),   // π/2
            (c(0.0, -2.0), 3),  // −π/2
        ];
        for (w, k) in cases {
            assert_eq!(phase_project(w), k, "{w:?}");
            let theta = w.im.atan2(w.re);
            let theta = if theta == -std::f64::consts::PI { std::f64::consts::PI } else { theta };
            let floor = ((2.0 * theta / std::f64::consts::PI + 0.5).floor() as i64).rem_euclid(4);
            assert_eq!(floor as u8, k, "{w:?}");
        }
    }

    #[test]
    fn scale_examples() {
        let w = ComplexMatrix::from_entries(1, 2, &[c(1.0, 0.0), c(0.0, 2.0)]).unwrap();
        let q = quantize_tensor(&w);
        assert_eq!(q.scales, AxisScales::new(1.0, 2.0));

        let q = quantize_tensor(&ComplexMatrix::zeros(3, 3));
        assert_eq!(q.scales, AxisScales::new(0.0, 0.0));
        assert!(q.codes.codes().iter().all(|&k| k == 0));
        assert_eq!(dequantize(&q), ComplexMatrix::zeros(3, 3));

        let q = quantize_tensor(&worked());
        assert_eq!(q.codes.codes(), &[0, 2, 1]);
        assert_eq!(q.scales, AxisScales::new(1.5, 3.0));
    }

    #[test]
    fn dequantize_examples() {
        let scales = AxisScales::new(1.5, 3.0);
        let one = |k: u8| dequantize(&QuantizedTensor {
            codes: CodePlane::new(1, 1, vec![k]).unwrap(),
            scales,
        })
        .get(0, 0);
        assert_eq!(one(0), c(1.5, 0.0));
        assert_eq!(one(3), c(0.0, -3.0));
        let d = dequantize(&quantize_tensor(&worked()));
        assert_eq!(d.entries().collect::<Vec<_>>(), vec![c(1.5, 0.0), c(-1.5, 0.0), c(0.0, 3.0)]);
    }

    #[test]
    fn code_plane_validation() {
        assert!(matches!(
            CodePlane::new(1, 2, vec![0, 4]),
            Err(Error::InvalidCode { index: 1, code: 4 })
        ));
        assert!(CodePlane::new(1, 2, vec![0]).is_err());
        let w = ComplexMatrix::zeros(2, 2);
        assert!(compute_scales(&w, &CodePlane::zeros(1, 4)).is_err());
    }

    #[test]
    fn ste_is_identity() {
        let g = ComplexMatrix::from_fn(2, 3, |i, j| c(i as f64, j as f64 - 1.0));
        let m = ComplexMatrix::from_fn(2, 3, |_, _| c(0.3, -0.7));
        assert_eq!(ste_backward(&g, &m).unwrap(), g);
        let z = ComplexMatrix::zeros(2, 3);
        assert_eq!(ste_backward(&z, &m).unwrap(), z);
        assert!(ste_backward(&g, &ComplexMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn ste_step_reduces_toy_regression_loss() {
        // Two complex masters, loss = Σ |ŵ_j x_j − y_j|² with ŵ the dequantized
        // weights. One STE step with a small learning rate lowers the loss.
        let x = [c(1.0, 0.5), c(-0.5, 1.0)];
        let y = [c(0.2, 1.1), c(-0.9, 0.4)];
        let loss = |w: &ComplexMatrix| -> f64 {
            let d = dequantize(&quantize_tensor(w));
            (0..2)
                .map(|j| (crate::tensor::cmul_naive(d.at(j), x[j]) - y[j]).norm_sqr())
                .sum()
        };
        let master = ComplexMatrix::from_entries(1, 2, &[c(1.5, 0.2), c(0.3, 1.7)]).unwrap();
        let d = dequantize(&quantize_tensor(&master));
        // ∂L/∂ŵ_j = 2 (ŵ_j x_j − y_j) conj(x_j) in the (re, im) gradient convention
        let grad = ComplexMatrix::from_fn(1, 2, |_, j| {
            let r = crate::tensor::cmul_naive(d.at(j), x[j]) - y[j];
            let g = crate::tensor::cmul_naive(r, x[j].conj());
            c(2.0 * g.re, 2.0 * g.im)
        });
        // finite-difference check of the gradient of the dequantized forward
        // (codes frozen: scale-constant, STE view)
        let frozen = quantize_tensor(&master);
        let fd_loss = |dw: ComplexMatrix| -> f64 {
            (0..2)
                .map(|j| (crate::tensor::cmul_naive(dw.at(j), x[j]) - y[j]).norm_sqr())
                .sum()
        };
        let h = 1e-6;
        for j in 0..2 {
            let base = dequantize(&frozen);
            let mut plus = base.clone();
            plus.re_mut()[j] += h;
            let mut minus = base.clone();
            minus.re_mut()[j] -= h;
            let fd = (fd_loss(plus) - fd_loss(minus)) / (2.0 * h);
            assert!((fd - grad.re()[j]).abs() < 1e-6);
        }
        let step = ste_backward(&grad, &master).unwrap();
        let updated = master.sub(&step.scale(c(0.05, 0.0))).unwrap();
        assert!(loss(&updated) < loss(&master));
    }
}
