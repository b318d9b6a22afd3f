//! Recursive residual quantization.
//!
//! Starting from `R⁰ = W`, stage `t` quantizes `Rᵗ` and passes on
//! `Rᵗ⁺¹ = Rᵗ − dequant(stageₜ)`. The deployed weight is the sum of the
//! dequantized stages. `U` and `W` are processed independently.

use crate::error::{Error, Result};
use crate::phasequant::{dequantize, quantize_tensor, AxisScales, CodePlane, QuantizedTensor};
use crate::tensor::ComplexMatrix;
use crate::widely_linear::WidelyLinearLayer;

/// One residual stage of a layer: codes and scales for `U` and `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantStage {
    pub u_codes: CodePlane,
    pub u_scales: AxisScales,
    pub w_codes: CodePlane,
    pub w_scales: AxisScales,
    pub stage_index: usize,
}

impl QuantStage {
    pub fn shape(&self) -> (usize, usize) {
        self.u_codes.shape()
    }

    pub fn u_tensor(&self) -> QuantizedTensor {
        QuantizedTensor {
            codes: self.u_codes.clone(),
            scales: self.u_scales,
        }
    }

    pub fn w_tensor(&self) -> QuantizedTensor {
        QuantizedTensor {
            codes: self.w_codes.clone(),
            scales: self.w_scales,
        }
    }

    /// Dense `(Û, Ŵ)` of this stage alone.
    pub fn dequantized(&self) -> (ComplexMatrix, ComplexMatrix) {
        (dequantize(&self.u_tensor()), dequantize(&self.w_tensor()))
    }
}

/// A widely-linear layer stored as `T ≥ 1` residual stages.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    stages: Vec<QuantStage>,
    rows: usize,
    cols: usize,
    pub real_out_dim: usize,
    pub real_in_dim: usize,
    pub padded_out: bool,
    pub padded_in: bool,
}

impl QuantizedLayer {
    /// Assembles a layer from stages; stage shapes must agree and indices must
    /// run `0..T`.
    pub fn new(
        stages: Vec<QuantStage>,
        real_out_dim: usize,
        real_in_dim: usize,
        padded_out: bool,
        padded_in: bool,
    ) -> Result<Self> {
        let first = stages.first().ok_or(Error::InvalidStageCount(0))?;
        let (rows, cols) = first.shape();
        for (t, s) in stages.iter().enumerate() {
            if s.u_codes.shape() != (rows, cols) || s.w_codes.shape() != (rows, cols) {
                return Err(Error::DimensionMismatch(format!("stage {t} shape differs")));
            }
            if s.stage_index != t {
                return Err(Error::DimensionMismatch(format!(
                    "stage at position {t} has index {}",
                    s.stage_index
                )));
            }
        }
        if real_out_dim + padded_out as usize != 2 * rows || real_in_dim + padded_in as usize != 2 * cols {
            return Err(Error::DimensionMismatch(format!(
                "real dims {real_out_dim}x{real_in_dim} do not match complex shape {rows}x{cols}"
            )));
        }
        Ok(Self {
            stages,
            rows,
            cols,
            real_out_dim,
            real_in_dim,
            padded_out,
            padded_in,
        })
    }

    pub fn stages(&self) -> &[QuantStage] {
        &self.stages
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Complex `(n, m)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of real parameters of the (padded) source layer, `4nm`.
    pub fn real_param_count(&self) -> usize {
        4 * self.rows * self.cols
    }

    pub fn reconstruct(&self) -> WidelyLinearLayer {
        reconstruct(self)
    }
}

/// Quantizes `tensor` into `stages` residual stages.
pub fn residual_quantize_tensor(tensor: &ComplexMatrix, stages: usize) -> Result<Vec<QuantizedTensor>> {
    Ok(residual_trace(tensor, stages)?.0)
}

/// Stages plus the residual norms `‖R⁰‖, …, ‖Rᵀ‖`.
fn residual_trace(tensor: &ComplexMatrix, stages: usize) -> Result<(Vec<QuantizedTensor>, Vec<f64>)> {
    if stages == 0 {
        return Err(Error::InvalidStageCount(0));
    }
    let mut residual = tensor.clone();
    let mut norms = vec![residual.frobenius_norm()];
    let mut out = Vec::with_capacity(stages);
    for _ in 0..stages {
        let q = quantize_tensor(&residual);
        residual = residual.sub(&dequantize(&q))?;
        norms.push(residual.frobenius_norm());
        out.push(q);
    }
    Ok((out, norms))
}

pub fn residual_quantize(layer: &WidelyLinearLayer, stages: usize) -> Result<QuantizedLayer> {
    let u = residual_quantize_tensor(&layer.u, stages)?;
    let w = residual_quantize_tensor(&layer.w, stages)?;
    let stages = u
        .into_iter()
        .zip(w)
        .enumerate()
        .map(|(t, (u, w))| QuantStage {
            u_codes: u.codes,
            u_scales: u.scales,
            w_codes: w.codes,
            w_scales: w.scales,
            stage_index: t,
        })
        .collect();
    QuantizedLayer::new(
        stages,
        layer.real_out_dim,
        layer.real_in_dim,
        layer.padded_out,
        layer.padded_in,
    )
}

/// Sum of dequantized stages in a fixed order.
pub fn reconstruct_tensor(stages: &[QuantizedTensor]) -> ComplexMatrix {
    let mut iter = stages.iter();
    let mut acc = dequantize(iter.next().expect("at least one stage"));
    for q in iter {
        acc = acc.add(&dequantize(q)).expect("stages share a shape");
    }
    acc
}

/// `Σₜ dequant(stageₜ)` for `U` and `W`, accumulated in ascending `t`.
pub fn reconstruct(q: &QuantizedLayer) -> WidelyLinearLayer {
    let us: Vec<_> = q.stages.iter().map(QuantStage::u_tensor).collect();
    let ws: Vec<_> = q.stages.iter().map(QuantStage::w_tensor).collect();
    WidelyLinearLayer {
        u: reconstruct_tensor(&us),
        w: reconstruct_tensor(&ws),
        real_out_dim: q.real_out_dim,
        real_in_dim: q.real_in_dim,
        padded_out: q.padded_out,
        padded_in: q.padded_in,
    }
}

/// Residual norm after `t` stages, per plane and combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageError {
    pub stage: usize,
    pub u_error: f64,
    pub w_error: f64,
    pub total: f64,
}

/// `‖Rᵗ‖_F` for `t = 0..=t_max` of a single tensor.
pub fn residual_norms(tensor: &ComplexMatrix, t_max: usize) -> Result<Vec<f64>> {
    Ok(residual_trace(tensor, t_max)?.1)
}

/// Residual norms of both planes for `t = 0..=t_max`. Diagnostic only.
pub fn stage_error_report(layer: &WidelyLinearLayer, t_max: usize) -> Result<Vec<StageError>> {
    let u = residual_norms(&layer.u, t_max)?;
    let w = residual_norms(&layer.w, t_max)?;
    Ok(u
        .into_iter()
        .zip(w)
        .enumerate()
        .map(|(stage, (u_error, w_error))| StageError {
            stage,
            u_error,
            w_error,
            total: u_error.hypot(w_error),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ComplexScalar;

    fn c(re: f64, im: f64) -> ComplexScalar {
        ComplexScalar::new(re, im)
    }

    fn worked() -> ComplexMatrix {
        ComplexMatrix::from_entries(1, 3, &[c(2.0, 0.5), c(-1.0, 0.2), c(0.3, 3.0)]).unwrap()
    }

    #[test]
    fn single_stage_is_plain_quantization() {
        let w = worked();
        let stages = residual_quantize_tensor(&w, 1).unwrap();
        assert_eq!(stages, vec![quantize_tensor(&w)]);
        let r = reconstruct_tensor(&stages);
        assert_eq!(r.entries().collect::<Vec<_>>(), vec![c(1.5, 0.0), c(-1.5, 0.0), c(0.0, 3.0)]);
    }

    #[test]
    fn two_stage_worked_example() {
        let w = worked();
        let norms = residual_norms(&w, 2).unwrap();
        assert!((norms[0] - 14.38f64.sqrt()).abs() < 1e-12);
        // stage-0 residual {0.5+0.5i, 0.5+0.2i, 0.3}: 0.25+0.25+0.25+0.04+0.09
        assert!((norms[1] - 0.88f64.sqrt()).abs() < 1e-12);
        assert!((norms[1] - 0.938).abs() < 1e-3);
        assert!(norms[2] <= norms[1]);

        // Hand recursion on the residual: 0.5+0.5i sits at θ=π/4 → +i,
        // the other two project to +1; s_re = (0.5+0.3)/2, s_im = 0.5.
        let stages = residual_quantize_tensor(&w, 2).unwrap();
        assert_eq!(stages[1].codes.codes(), &[1, 0, 0]);
        assert!((stages[1].scales.s_re - 0.4).abs() < 1e-15);
        assert!((stages[1].scales.s_im - 0.5).abs() < 1e-15);
        let r = reconstruct_tensor(&stages);
        let want = [c(1.5, 0.5), c(-1.1, 0.0), c(0.4, 3.0)];
        for (got, want) in r.entries().zip(want) {
            assert!((got - want).abs() < 1e-15, "{got:?} vs {want:?}");
        }
        // 0.25 + 0.01 + 0.04 + 0.01
        assert!((norms[2] - 0.31f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_tensor_stays_zero() {
        let z = ComplexMatrix::zeros(4, 5);
        let stages = residual_quantize_tensor(&z, 3).unwrap();
        assert!(stages.iter().all(|q| q.scales.is_zero()));
        assert_eq!(reconstruct_tensor(&stages), z);
        assert!(residual_norms(&z, 3).unwrap().iter().all(|&n| n == 0.0));
    }

    #[test]
    fn zero_stages_rejected() {
        assert!(matches!(
            residual_quantize_tensor(&worked(), 0),
            Err(Error::InvalidStageCount(0))
        ));
        let layer = WidelyLinearLayer::new(worked(), worked()).unwrap();
        assert!(residual_quantize(&layer, 0).is_err());
    }

    #[test]
    fn layer_stages_and_report() {
        let layer = WidelyLinearLayer::new(worked(), worked().conj()).unwrap();
        let q = residual_quantize(&layer, 2).unwrap();
        assert_eq!(q.num_stages(), 2);
        assert_eq!(q.real_param_count(), 12);
        let report = stage_error_report(&layer, 2).unwrap();
        assert_eq!(report.len(), 3);
        let rec = reconstruct(&q);
        let res_u = layer.u.sub(&rec.u).unwrap().frobenius_norm();
        assert!((res_u - report[2].u_error).abs() < 1e-15);
    }
}
