//! Inference kernels for quantized widely-linear layers.
//!
//! Every code is one of `±1, ±i`, so a stage's matvec needs no data-dependent
//! multiplications. Per output row and per plane, two complex partial sums are
//! kept: `A = Σ ±x_j` over codes `±1`, and `B = Σ ±i·x_j` over codes `±i`
//! (multiplying by `±i` swaps re/im with a sign flip). The stage output is then
//! `s_re·A + s_im·B`, which matches the dequantized weight `s_re·b_re + i·s_im·b_im`
//! for any pair of scales.
//!
//! The `W` plane acts on `conj(x)`; the LUT path therefore builds a second
//! table from `conj(x)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::packing::pack_slice;
use crate::phasequant::{AxisScales, CodePlane};
use crate::residual::{QuantStage, QuantizedLayer};
use crate::scalar::Scalar;
use crate::tensor::ComplexMatrix;
use crate::widely_linear::WidelyLinearLayer;

/// Codes packed per table index.
pub const GROUP: usize = 4;
/// Entries per lookup table.
pub const LUT_ENTRIES: usize = 256;

/// A complex activation vector in planar form.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ActivationVector {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::DimensionMismatch(format!(
                "re has {} entries, im has {}",
                re.len(),
                im.len()
            )));
        }
        if let Some(i) = re.iter().chain(&im).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn conj(&self) -> Self {
        Self {
            re: self.re.clone(),
            im: self.im.iter().map(|v| -v).collect(),
        }
    }

    /// Column 0 of a `m×1` matrix.
    pub fn from_column(x: &ComplexMatrix) -> Result<Self> {
        if x.cols() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected a column vector, got {:?}",
                x.shape()
            )));
        }
        Ok(Self {
            re: x.re().to_vec(),
            im: x.im().to_vec(),
        })
    }

    pub fn to_column(&self) -> ComplexMatrix {
        ComplexMatrix::new(self.len(), 1, self.re.clone(), self.im.clone()).expect("planes agree")
    }

    pub fn add_assign(&mut self, o: &ActivationVector) {
        for (a, b) in self.re.iter_mut().zip(&o.re) {
            *a += b;
        }
        for (a, b) in self.im.iter_mut().zip(&o.im) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, o: &ActivationVector) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .zip(o.re.iter().zip(&o.im))
            .map(|((a, b), (c, d))| (a - c).hypot(b - d))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Unscaled per-row partial sums of one plane: `A` (real-axis codes) and
/// `B` (imaginary-axis codes), each as `(re, im)` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisPartials<S> {
    pub a_re: Vec<S>,
    pub a_im: Vec<S>,
    pub b_re: Vec<S>,
    pub b_im: Vec<S>,
}

impl<S: Scalar> AxisPartials<S> {
    fn zeros(rows: usize) -> Self {
        Self {
            a_re: vec![S::zero(); rows],
            a_im: vec![S::zero(); rows],
            b_re: vec![S::zero(); rows],
            b_im: vec![S::zero(); rows],
        }
    }

    /// `s_re·A + s_im·B`; the only multiplications of a stage.
    pub fn scale(&self, s_re: S, s_im: S) -> (Vec<S>, Vec<S>) {
        let re = self
            .a_re
            .iter()
            .zip(&self.b_re)
            .map(|(&a, &b)| s_re * a + s_im * b)
            .collect();
        let im = self
            .a_im
            .iter()
            .zip(&self.b_im)
            .map(|(&a, &b)| s_re * a + s_im * b)
            .collect();
        (re, im)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!(
            "stage takes {expected} inputs, activation has {got}"
        )));
    }
    Ok(())
}

/// Add/sub/skip accumulation of one code plane against `x`.
///
/// Contains no multiplications; `±i` codes swap the activation's planes.
pub fn mf_accumulate<S: Scalar>(codes: &CodePlane, x_re: &[S], x_im: &[S]) -> AxisPartials<S> {
    let (rows, cols) = codes.shape();
    let mut p = AxisPartials::zeros(rows);
    for (r, row) in codes.codes().chunks_exact(cols.max(1)).take(rows).enumerate() {
        let (mut ar, mut ai, mut br, mut bi) = (S::zero(), S::zero(), S::zero(), S::zero());
        for ((&k, &xr), &xi) in row.iter().zip(x_re).zip(x_im) {
            match k {
                // +1
                0 => {
                    ar = ar + xr;
                    ai = ai + xi;
                }
                // +i·x = −x_im + i·x_re
                1 => {
                    br = br - xi;
                    bi = bi + xr;
                }
                // −1
                2 => {
                    ar = ar - xr;
                    ai = ai - xi;
                }
                // −i·x = x_im − i·x_re
                _ => {
                    br = br + xi;
                    bi = bi - xr;
                }
            }
        }
        p.a_re[r] = ar;
        p.a_im[r] = ai;
        p.b_re[r] = br;
        p.b_im[r] = bi;
    }
    p
}

/// Scaled output of one plane, generic over the scalar type.
pub fn mf_apply_plane<S: Scalar>(
    codes: &CodePlane,
    s_re: S,
    s_im: S,
    x_re: &[S],
    x_im: &[S],
) -> (Vec<S>, Vec<S>) {
    mf_accumulate(codes, x_re, x_im).scale(s_re, s_im)
}

/// One stage: `Û·x + Ŵ·conj(x)` without data-dependent multiplications.
pub fn mf_apply_stage_with<S: Scalar>(
    stage: &QuantStage,
    scales: [(S, S); 2],
    x_re: &[S],
    x_im: &[S],
) -> (Vec<S>, Vec<S>) {
    let conj_im: Vec<S> = x_im.iter().map(|&v| -v).collect();
    let (ur, ui) = mf_apply_plane(&stage.u_codes, scales[0].0, scales[0].1, x_re, x_im);
    let (wr, wi) = mf_apply_plane(&stage.w_codes, scales[1].0, scales[1].1, x_re, &conj_im);
    (
        ur.into_iter().zip(wr).map(|(a, b)| a + b).collect(),
        ui.into_iter().zip(wi).map(|(a, b)| a + b).collect(),
    )
}

fn f64_scales(stage: &QuantStage) -> [(f64, f64); 2] {
    [
        (stage.u_scales.s_re, stage.u_scales.s_im),
        (stage.w_scales.s_re, stage.w_scales.s_im),
    ]
}

pub fn mf_apply_stage(stage: &QuantStage, x: &ActivationVector) -> Result<ActivationVector> {
    check_len(stage.shape().1, x.len())?;
    let (re, im) = mf_apply_stage_with(stage, f64_scales(stage), &x.re, &x.im);
    Ok(ActivationVector { re, im })
}

/// Where stage scales are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleOrder {
    /// Each stage scales its own partials before the reduction.
    #[default]
    PerStage,
    /// Stages return unscaled partials; scales are applied while reducing.
    Folded,
}

/// Runs independent per-stage work, optionally on a dedicated thread pool.
/// Results always come back in stage order.
pub struct StageExecutor {
    pool: Option<rayon::ThreadPool>,
}

impl StageExecutor {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    /// `threads <= 1` runs inline on the caller's thread.
    pub fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, rayon::ThreadPool::current_num_threads)
    }

    pub fn map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        match &self.pool {
            None => items.iter().map(f).collect(),
            Some(pool) => pool.install(|| items.par_iter().map(f).collect()),
        }
    }
}

/// `Σₜ [Ûₜ·x + Ŵₜ·conj(x)]` evaluated stage by stage on the calling thread.
pub fn mf_infer_layer(q: &QuantizedLayer, x: &ActivationVector) -> Result<ActivationVector> {
    mf_infer_layer_with(q, x, &StageExecutor::sequential(), ScaleOrder::PerStage)
}

/// Stage-parallel inference. Per-stage outputs are reduced sequentially in
/// ascending stage order, so the result does not depend on the thread count.
pub fn mf_infer_layer_with(
    q: &QuantizedLayer,
    x: &ActivationVector,
    exec: &StageExecutor,
    order: ScaleOrder,
) -> Result<ActivationVector> {
    let (n, m) = q.shape();
    check_len(m, x.len())?;
    let mut y = ActivationVector::zeros(n);
    match order {
        ScaleOrder::PerStage => {
            let parts = exec.map(q.stages(), |s| {
                let (re, im) = mf_apply_stage_with(s, f64_scales(s), &x.re, &x.im);
                ActivationVector { re, im }
            });
            for p in &parts {
                y.add_assign(p);
            }
        }
        ScaleOrder::Folded => {
            let conj = x.conj();
            let parts = exec.map(q.stages(), |s| {
                (
                    mf_accumulate(&s.u_codes, &x.re, &x.im),
                    mf_accumulate(&s.w_codes, &conj.re, &conj.im),
                )
            });
            for (s, (pu, pw)) in q.stages().iter().zip(&parts) {
                for (p, sc) in [(pu, s.u_scales), (pw, s.w_scales)] {
                    let (re, im) = p.scale(sc.s_re, sc.s_im);
                    y.add_assign(&ActivationVector { re, im });
                }
            }
        }
    }
    Ok(y)
}

/// Dense reference: `U x + W conj(x)` with explicit complex multiplications.
pub fn dense_apply(layer: &WidelyLinearLayer, x: &ActivationVector) -> Result<ActivationVector> {
    ActivationVector::from_column(&layer.apply(&x.to_column())?)
}

/// Per-group tables of partial sums for one activation vector.
///
/// For group `g` and index `idx` with 2-bit fields `k_0..k_3`
/// (`k_j = (idx >> 2j) & 3`), `re_axis` holds `Σ ±x` over fields coded `±1`
/// and `im_axis` holds `Σ ±i·x` over fields coded `±i`. Activations past the
/// end are treated as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LutTable<S> {
    groups: usize,
    re_axis: Vec<(S, S)>,
    im_axis: Vec<(S, S)>,
}

impl<S: Scalar> LutTable<S> {
    pub fn build(x_re: &[S], x_im: &[S]) -> Self {
        let m = x_re.len();
        let groups = m.div_ceil(GROUP);
        let mut re_axis = Vec::with_capacity(groups * LUT_ENTRIES);
        let mut im_axis = Vec::with_capacity(groups * LUT_ENTRIES);
        for g in 0..groups {
            let xs: [(S, S); GROUP] = std::array::from_fn(|j| {
                let i = g * GROUP + j;
                if i < m {
                    (x_re[i], x_im[i])
                } else {
                    (S::zero(), S::zero())
                }
            });
            for idx in 0..LUT_ENTRIES {
                let (mut a, mut b) = ((S::zero(), S::zero()), (S::zero(), S::zero()));
                for (j, &(xr, xi)) in xs.iter().enumerate() {
                    match (idx >> (2 * j)) & 0b11 {
                        0 => a = (a.0 + xr, a.1 + xi),
                        1 => b = (b.0 - xi, b.1 + xr),
                        2 => a = (a.0 - xr, a.1 - xi),
                        _ => b = (b.0 + xi, b.1 - xr),
                    }
                }
                re_axis.push(a);
                im_axis.push(b);
            }
        }
        Self {
            groups,
            re_axis,
            im_axis,
        }
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// `(A, B)` halves stored for `idx` of group `g`.
    pub fn halves(&self, g: usize, idx: u8) -> ((S, S), (S, S)) {
        let i = g * LUT_ENTRIES + idx as usize;
        (self.re_axis[i], self.im_axis[i])
    }

    /// `Σⱼ i^{kⱼ}·x_{4g+j}` for `idx`.
    pub fn entry(&self, g: usize, idx: u8) -> (S, S) {
        let (a, b) = self.halves(g, idx);
        (a.0 + b.0, a.1 + b.1)
    }
}

/// Tables for `x` and for `conj(x)`.
pub fn build_lut(x: &ActivationVector) -> (LutTable<f64>, LutTable<f64>) {
    let conj = x.conj();
    (LutTable::build(&x.re, &x.im), LutTable::build(&conj.re, &conj.im))
}

/// Codes of one plane packed row by row, four per byte, each row padded to a
/// whole number of groups with code 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RowPackedPlane {
    rows: usize,
    groups: usize,
    bytes: Vec<u8>,
    pub scales: AxisScales,
}

impl RowPackedPlane {
    pub fn pack(codes: &CodePlane, scales: AxisScales) -> Self {
        let (rows, cols) = codes.shape();
        let groups = cols.div_ceil(GROUP);
        let mut bytes = Vec::with_capacity(rows * groups);
        for row in codes.codes().chunks(cols.max(1)).take(rows) {
            bytes.extend(pack_slice(row));
        }
        Self {
            rows,
            groups,
            bytes,
            scales,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }
}

/// A stage laid out for the LUT kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LutStage {
    pub u: RowPackedPlane,
    pub w: RowPackedPlane,
    pub stage_index: usize,
}

impl LutStage {
    pub fn from_stage(stage: &QuantStage) -> Self {
        Self {
            u: RowPackedPlane::pack(&stage.u_codes, stage.u_scales),
            w: RowPackedPlane::pack(&stage.w_codes, stage.w_scales),
            stage_index: stage.stage_index,
        }
    }
}

/// One table fetch and accumulation per group, no multiplications.
pub fn lut_accumulate<S: Scalar>(plane: &RowPackedPlane, lut: &LutTable<S>) -> Result<AxisPartials<S>> {
    if plane.groups != lut.groups {
        return Err(Error::GroupMisalignment {
            stage: plane.groups,
            table: lut.groups,
        });
    }
    let mut p = AxisPartials::zeros(plane.rows);
    if plane.groups == 0 {
        return Ok(p);
    }
    for (r, row) in plane.bytes.chunks_exact(plane.groups).enumerate() {
        let (mut ar, mut ai, mut br, mut bi) = (S::zero(), S::zero(), S::zero(), S::zero());
        for (g, &idx) in row.iter().enumerate() {
            S::note_fetch();
            let i = g * LUT_ENTRIES + idx as usize;
            let (a, b) = (lut.re_axis[i], lut.im_axis[i]);
            ar = ar + a.0;
            ai = ai + a.1;
            br = br + b.0;
            bi = bi + b.1;
        }
        p.a_re[r] = ar;
        p.a_im[r] = ai;
        p.b_re[r] = br;
        p.b_im[r] = bi;
    }
    Ok(p)
}

/// One stage through the tables: `U` plane against `lut`, `W` plane against
/// `lut_conj`.
pub fn lut_apply_stage_with<S: Scalar>(
    stage: &LutStage,
    scales: [(S, S); 2],
    lut: &LutTable<S>,
    lut_conj: &LutTable<S>,
) -> Result<(Vec<S>, Vec<S>)> {
    let (ur, ui) = lut_accumulate(&stage.u, lut)?.scale(scales[0].0, scales[0].1);
    let (wr, wi) = lut_accumulate(&stage.w, lut_conj)?.scale(scales[1].0, scales[1].1);
    Ok((
        ur.into_iter().zip(wr).map(|(a, b)| a + b).collect(),
        ui.into_iter().zip(wi).map(|(a, b)| a + b).collect(),
    ))
}

fn lut_scales(stage: &LutStage) -> [(f64, f64); 2] {
    [
        (stage.u.scales.s_re, stage.u.scales.s_im),
        (stage.w.scales.s_re, stage.w.scales.s_im),
    ]
}

pub fn lut_apply_stage(
    stage: &LutStage,
    lut: &LutTable<f64>,
    lut_conj: &LutTable<f64>,
) -> Result<ActivationVector> {
    let (re, im) = lut_apply_stage_with(stage, lut_scales(stage), lut, lut_conj)?;
    Ok(ActivationVector { re, im })
}

/// A whole layer laid out for the LUT kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LutLayer {
    pub stages: Vec<LutStage>,
    pub cols: usize,
}

impl LutLayer {
    pub fn from_layer(q: &QuantizedLayer) -> Self {
        Self {
            stages: q.stages().iter().map(LutStage::from_stage).collect(),
            cols: q.shape().1,
        }
    }
}

/// Builds both tables once and reuses them for every stage and row.
pub fn lut_infer_layer(layer: &LutLayer, x: &ActivationVector) -> Result<ActivationVector> {
    lut_infer_layer_with(layer, x, &StageExecutor::sequential())
}

pub fn lut_infer_layer_with(
    layer: &LutLayer,
    x: &ActivationVector,
    exec: &StageExecutor,
) -> Result<ActivationVector> {
    check_len(layer.cols, x.len())?;
    let (lut, lut_conj) = build_lut(x);
    let rows = layer.stages.first().map_or(0, |s| s.u.rows);
    let parts = exec.map(&layer.stages, |s| lut_apply_stage(s, &lut, &lut_conj));
    let mut y = ActivationVector::zeros(rows);
    for p in parts {
        y.add_assign(&p?);
    }
    Ok(y)
}

/// Symmetric per-vector INT8 quantization of an activation.
///
/// Approximate: the float kernels are exact, this mode is not.
#[derive(Debug, Clone, PartialEq)]
pub struct Int8Activation {
    pub re: Vec<i8>,
    pub im: Vec<i8>,
    pub scale: f64,
}

pub fn quantize_activation_int8(x: &ActivationVector) -> Int8Activation {
    let max = x.re.iter().chain(&x.im).fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max == 0.0 { 1.0 } else { max / 127.0 };
    let q = |v: &f64| (v / scale).round().clamp(-127.0, 127.0) as i8;
    Int8Activation {
        re: x.re.iter().map(q).collect(),
        im: x.im.iter().map(q).collect(),
        scale,
    }
}

/// LUT inference on INT8 activations: integer tables and accumulation, with
/// the activation scale and axis scales applied per row at the end.
pub fn lut_infer_layer_int8(layer: &LutLayer, x: &ActivationVector) -> Result<ActivationVector> {
    check_len(layer.cols, x.len())?;
    let qx = quantize_activation_int8(x);
    let re: Vec<i64> = qx.re.iter().map(|&v| i64::from(v)).collect();
    let im: Vec<i64> = qx.im.iter().map(|&v| i64::from(v)).collect();
    let neg_im: Vec<i64> = im.iter().map(|v| -v).collect();
    let lut = LutTable::build(&re, &im);
    let lut_conj = LutTable::build(&re, &neg_im);
    let rows = layer.stages.first().map_or(0, |s| s.u.rows);
    let mut y = ActivationVector::zeros(rows);
    for s in &layer.stages {
        for (plane, table) in [(&s.u, &lut), (&s.w, &lut_conj)] {
            let p = lut_accumulate(plane, table)?;
            let (sr, si) = (plane.scales.s_re * qx.scale, plane.scales.s_im * qx.scale);
            for r in 0..rows {
                y.re[r] += sr * p.a_re[r] as f64 + si * p.b_re[r] as f64;
                y.im[r] += sr * p.a_im[r] as f64 + si * p.b_im[r] as f64;
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasequant::{dequantize, QuantizedTensor};
    use crate::residual::residual_quantize;
    use crate::scalar::{count_ops, to_counted, Counted};
    use crate::tensor::{ComplexScalar, RealMatrix};
    use crate::widely_linear::real_to_widely_linear;

    fn stage_1x1(k: u8, scales: AxisScales) -> QuantStage {
        QuantStage {
            u_codes: CodePlane::new(1, 1, vec![k]).unwrap(),
            u_scales: scales,
            w_codes: CodePlane::new(1, 1, vec![0]).unwrap(),
            w_scales: AxisScales::default(),
            stage_index: 0,
        }
    }

    fn av(re: &[f64], im: &[f64]) -> ActivationVector {
        ActivationVector::new(re.to_vec(), im.to_vec()).unwrap()
    }

    #[test]
    fn mf_examples() {
        let x = av(&[3.0], &[4.0]);
        let y = mf_apply_stage(&stage_1x1(0, AxisScales::new(1.0, 1.0)), &x).unwrap();
        assert_eq!(y, x);
        // +i·(a+bi) = −b + ai
        let y = mf_apply_stage(&stage_1x1(1, AxisScales::new(1.0, 1.0)), &av(&[2.0], &[5.0])).unwrap();
        assert_eq!(y, av(&[-5.0], &[2.0]));
        assert!(mf_apply_stage(&stage_1x1(0, AxisScales::new(1.0, 1.0)), &av(&[1.0, 2.0], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn mf_unequal_scales_match_dequantized_weight() {
        // code +i with s_re ≠ s_im: ŵ = 0.5i, so ŵ·(1+2i) = −1 + 0.5i
        let y = mf_apply_stage(&stage_1x1(1, AxisScales::new(3.0, 0.5)), &av(&[1.0], &[2.0])).unwrap();
        assert_eq!(y, av(&[-1.0], &[0.5]));
        let d = dequantize(&QuantizedTensor {
            codes: CodePlane::new(1, 1, vec![1]).unwrap(),
            scales: AxisScales::new(3.0, 0.5),
        });
        assert_eq!(d.get(0, 0), ComplexScalar::new(0.0, 0.5));
    }

    #[test]
    fn identity_layer_infers_exactly() {
        let q = residual_quantize(&real_to_widely_linear(&RealMatrix::identity(2)), 1).unwrap();
        let s = &q.stages()[0];
        assert_eq!(s.u_codes.codes(), &[0]);
        assert_eq!(s.u_scales, AxisScales::new(1.0, 0.0));
        assert!(s.w_scales.is_zero());
        let y = mf_infer_layer(&q, &av(&[3.0], &[4.0])).unwrap();
        assert_eq!(y, av(&[3.0], &[4.0]));
        let y = lut_infer_layer(&LutLayer::from_layer(&q), &av(&[3.0], &[4.0])).unwrap();
        assert_eq!(y, av(&[3.0], &[4.0]));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let r = RealMatrix::from_fn(6, 10, |i, j| (i as f64 - 2.5) * (j as f64 + 0.5));
        let q = residual_quantize(&real_to_widely_linear(&r), 2).unwrap();
        let x = ActivationVector::zeros(5);
        assert_eq!(mf_infer_layer(&q, &x).unwrap(), ActivationVector::zeros(3));
        assert_eq!(lut_infer_layer(&LutLayer::from_layer(&q), &x).unwrap(), ActivationVector::zeros(3));
    }

    #[test]
    fn lut_examples() {
        let t = LutTable::build(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4]);
        assert_eq!(t.groups(), 1);
        assert_eq!(t.entry(0, 0), (1.0, 0.0));
        let t = LutTable::build(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]);
        // k0 = 1: i·(1+i) = −1 + i
        assert_eq!(t.entry(0, 1), (-1.0, 1.0));
        // m = 5 pads to two groups
        assert_eq!(LutTable::<f64>::build(&[0.0; 5], &[0.0; 5]).groups(), 2);
    }

    #[test]
    fn lut_single_group_all_plus_one() {
        let stage = QuantStage {
            u_codes: CodePlane::zeros(1, 4),
            u_scales: AxisScales::new(1.0, 1.0),
            w_codes: CodePlane::zeros(1, 4),
            w_scales: AxisScales::default(),
            stage_index: 0,
        };
        let x = av(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.0, -1.0, 2.0]);
        let (lut, lut_conj) = build_lut(&x);
        let y = lut_apply_stage(&LutStage::from_stage(&stage), &lut, &lut_conj).unwrap();
        assert_eq!(y, av(&[10.0], &[1.5]));
    }

    #[test]
    fn lut_rejects_misaligned_groups() {
        let stage = LutStage::from_stage(&QuantStage {
            u_codes: CodePlane::zeros(2, 8),
            u_scales: AxisScales::default(),
            w_codes: CodePlane::zeros(2, 8),
            w_scales: AxisScales::default(),
            stage_index: 0,
        });
        let (lut, lut_conj) = build_lut(&ActivationVector::zeros(4));
        assert!(matches!(
            lut_apply_stage(&stage, &lut, &lut_conj),
            Err(Error::GroupMisalignment { stage: 2, table: 1 })
        ));
    }

    #[test]
    fn accumulation_loop_has_no_multiplications() {
        let codes = CodePlane::new(3, 5, (0..15).map(|i| (i * 7 % 4) as u8).collect()).unwrap();
        let xr = to_counted(&[1.0, -2.0, 0.5, 3.0, 0.25]);
        let xi = to_counted(&[0.0, 1.0, -1.5, 2.0, 4.0]);
        let (_, acc) = count_ops(|| mf_accumulate(&codes, &xr, &xi));
        assert_eq!(acc.mults, 0);
        assert_eq!(acc.adds, 2 * 15);
        let p = mf_accumulate(&codes, &xr, &xi);
        let (_, sc) = count_ops(|| p.scale(Counted(1.0), Counted(2.0)));
        assert_eq!(sc.mults, 4 * 3);
    }

    #[test]
    fn int8_mode_is_close() {
        let r = RealMatrix::from_fn(16, 24, |i, j| ((i * 31 + j * 17) % 13) as f64 / 6.5 - 1.0);
        let q = residual_quantize(&real_to_widely_linear(&r), 2).unwrap();
        let x = av(
            &(0..12).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>(),
            &(0..12).map(|i| (i as f64 * 0.91).cos()).collect::<Vec<_>>(),
        );
        let exact = mf_infer_layer(&q, &x).unwrap();
        let approx = lut_infer_layer_int8(&LutLayer::from_layer(&q), &x).unwrap();
        assert!(exact.max_abs_diff(&approx) <= 0.05 * exact.max_abs());
    }
}
