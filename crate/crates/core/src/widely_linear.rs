//! Lossless conversion between a real linear layer and its widely-linear
//! complex form `y = U x + W conj(x)`.
//!
//! A real vector of length `2m` is paired as stacked halves: the first `m`
//! entries are real parts and the last `m` are imaginary parts. Partitioning
//! `R` into `n×m` blocks
//!
//! ```text
//! R = [ R11 R12 ]
//!     [ R21 R22 ]
//! ```
//!
//! gives the unique pair
//!
//! ```text
//! U = ½(R11 + R22) + i·½(R21 − R12)
//! W = ½(R11 − R22) + i·½(R12 + R21)
//! ```
//!
//! and `R = realify_lin(U) + realify_conj(W)`.

use crate::error::{Error, Result};
use crate::tensor::{ComplexMatrix, MulAlgo, RealMatrix};

/// Which dimensions of a real matrix received a zero channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PadFlags {
    /// A zero row (output channel) was appended.
    pub out: bool,
    /// A zero column (input channel) was appended.
    pub input: bool,
}

/// The `(U, W)` pair of a widely-linear layer together with the shape of the
/// real layer it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WidelyLinearLayer {
    pub u: ComplexMatrix,
    pub w: ComplexMatrix,
    pub real_out_dim: usize,
    pub real_in_dim: usize,
    pub padded_out: bool,
    pub padded_in: bool,
}

/// The four `n×m` blocks of a `2n×2m` real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    pub r11: RealMatrix,
    pub r12: RealMatrix,
    pub r21: RealMatrix,
    pub r22: RealMatrix,
}

impl BlockPartition {
    pub fn of(r: &RealMatrix) -> Result<Self> {
        let (rows, cols) = r.shape();
        if rows % 2 != 0 {
            return Err(Error::OddDimension { axis: "rows", dim: rows });
        }
        if cols % 2 != 0 {
            return Err(Error::OddDimension { axis: "cols", dim: cols });
        }
        let (n, m) = (rows / 2, cols / 2);
        let block = |br: usize, bc: usize| RealMatrix::from_fn(n, m, |i, j| r.get(br * n + i, bc * m + j));
        Ok(Self {
            r11: block(0, 0),
            r12: block(0, 1),
            r21: block(1, 0),
            r22: block(1, 1),
        })
    }
}

impl WidelyLinearLayer {
    pub fn new(u: ComplexMatrix, w: ComplexMatrix) -> Result<Self> {
        if u.shape() != w.shape() {
            return Err(Error::DimensionMismatch(format!(
                "U is {:?} but W is {:?}",
                u.shape(),
                w.shape()
            )));
        }
        let (n, m) = u.shape();
        Ok(Self {
            u,
            w,
            real_out_dim: 2 * n,
            real_in_dim: 2 * m,
            padded_out: false,
            padded_in: false,
        })
    }

    /// Complex output and input dimensions `(n, m)`.
    pub fn shape(&self) -> (usize, usize) {
        self.u.shape()
    }

    pub fn pad_flags(&self) -> PadFlags {
        PadFlags {
            out: self.padded_out,
            input: self.padded_in,
        }
    }

    /// `U x + W conj(x)` for a batch of complex column vectors.
    pub fn apply(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        apply_widely_linear(self, x)
    }

    /// Applies the layer to a real vector of the source layer's input width
    /// and returns a real vector of its output width.
    pub fn apply_real(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.real_in_dim {
            return Err(Error::DimensionMismatch(format!(
                "layer takes {} real inputs, got {}",
                self.real_in_dim,
                x.len()
            )));
        }
        let xc = pair_real_vector(x);
        let y = self.apply(&xc)?;
        let mut out = stack_complex_vector(&y);
        out.truncate(self.real_out_dim);
        Ok(out)
    }

    /// The (unpadded) real matrix this layer represents.
    pub fn to_real(&self) -> RealMatrix {
        widely_linear_to_real(self)
    }
}

/// Appends a zero row and/or column wherever a dimension is odd.
pub fn pad_real(r: &RealMatrix) -> (RealMatrix, PadFlags) {
    let (rows, cols) = r.shape();
    let flags = PadFlags {
        out: rows % 2 == 1,
        input: cols % 2 == 1,
    };
    if !flags.out && !flags.input {
        return (r.clone(), flags);
    }
    let padded = RealMatrix::from_fn(rows + flags.out as usize, cols + flags.input as usize, |i, j| {
        if i < rows && j < cols {
            r.get(i, j)
        } else {
            0.0
        }
    });
    (padded, flags)
}

/// Converts a real layer, zero-padding odd dimensions.
pub fn real_to_widely_linear(r: &RealMatrix) -> WidelyLinearLayer {
    let (padded, flags) = pad_real(r);
    let mut layer = from_even(&padded).expect("padded matrix has even dimensions");
    layer.real_out_dim = r.rows();
    layer.real_in_dim = r.cols();
    layer.padded_out = flags.out;
    layer.padded_in = flags.input;
    layer
}

/// Converts a real layer that must already have even dimensions.
pub fn real_to_widely_linear_strict(r: &RealMatrix) -> Result<WidelyLinearLayer> {
    from_even(r)
}

fn from_even(r: &RealMatrix) -> Result<WidelyLinearLayer> {
    let b = BlockPartition::of(r)?;
    let (n, m) = b.r11.shape();
    let len = n * m;
    let (r11, r12, r21, r22) = (b.r11.data(), b.r12.data(), b.r21.data(), b.r22.data());
    let mut u_re = Vec::with_capacity(len);
    let mut u_im = Vec::with_capacity(len);
    let mut w_re = Vec::with_capacity(len);
    let mut w_im = Vec::with_capacity(len);
    for k in 0..len {
        u_re.push(0.5 * (r11[k] + r22[k]));
        u_im.push(0.5 * (r21[k] - r12[k]));
        w_re.push(0.5 * (r11[k] - r22[k]));
        w_im.push(0.5 * (r12[k] + r21[k]));
    }
    WidelyLinearLayer::new(
        ComplexMatrix::new(n, m, u_re, u_im)?,
        ComplexMatrix::new(n, m, w_re, w_im)?,
    )
}

/// `[[Re U, −Im U], [Im U, Re U]]`.
pub fn realify_lin(u: &ComplexMatrix) -> RealMatrix {
    let (n, m) = u.shape();
    RealMatrix::from_fn(2 * n, 2 * m, |i, j| {
        let z = u.get(i % n, j % m);
        match (i < n, j < m) {
            (true, true) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
            (false, false) => z.re,
        }
    })
}

/// `[[Re W, Im W], [Im W, −Re W]]`.
pub fn realify_conj(w: &ComplexMatrix) -> RealMatrix {
    let (n, m) = w.shape();
    RealMatrix::from_fn(2 * n, 2 * m, |i, j| {
        let z = w.get(i % n, j % m);
        match (i < n, j < m) {
            (true, true) => z.re,
            (true, false) => z.im,
            (false, true) => z.im,
            (false, false) => -z.re,
        }
    })
}

/// `realify_lin(U) + realify_conj(W)` at full (padded) size.
pub fn realify_layer(l: &WidelyLinearLayer) -> RealMatrix {
    realify_lin(&l.u)
        .add(&realify_conj(&l.w))
        .expect("U and W share a shape")
}

/// Recovers the real matrix of the source layer, dropping any padded channel.
pub fn widely_linear_to_real(l: &WidelyLinearLayer) -> RealMatrix {
    let full = realify_layer(l);
    if full.shape() == (l.real_out_dim, l.real_in_dim) {
        return full;
    }
    RealMatrix::from_fn(l.real_out_dim, l.real_in_dim, |i, j| full.get(i, j))
}

/// `y = U x + W conj(x)`; `x` holds one complex column per sample.
pub fn apply_widely_linear(l: &WidelyLinearLayer, x: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (_, m) = l.shape();
    if x.rows() != m {
        return Err(Error::DimensionMismatch(format!(
            "layer takes {m} complex inputs, x has {} rows",
            x.rows()
        )));
    }
    let ux = l.u.matmul(x, MulAlgo::Naive)?;
    let wx = l.w.matmul(&x.conj(), MulAlgo::Naive)?;
    ux.add(&wx)
}

/// Pairs a real vector into a complex column by stacked halves, appending a
/// zero when the length is odd. Also used for biases.
pub fn pair_real_vector(x: &[f64]) -> ComplexMatrix {
    let half = x.len().div_ceil(2);
    let at = |i: usize| x.get(i).copied().unwrap_or(0.0);
    let re = (0..half).map(at).collect();
    let im = (half..2 * half).map(at).collect();
    ComplexMatrix::new(half, 1, re, im).expect("consistent lengths")
}

/// `[Re y; Im y]` for a complex column vector.
pub fn stack_complex_vector(y: &ComplexMatrix) -> Vec<f64> {
    let (re, im) = y.column_planes(0);
    re.into_iter().chain(im).collect()
}

/// Stacks every column: a `d×L` complex matrix becomes a `2d×L` real one.
pub fn stack(x: &ComplexMatrix) -> RealMatrix {
    let (d, l) = x.shape();
    RealMatrix::from_fn(2 * d, l, |i, j| {
        if i < d {
            x.re()[i * l + j]
        } else {
            x.im()[(i - d) * l + j]
        }
    })
}

/// Inverse of [`stack`]; the row count must be even.
pub fn unstack(x: &RealMatrix) -> Result<ComplexMatrix> {
    let (rows, l) = x.shape();
    if rows % 2 != 0 {
        return Err(Error::OddDimension { axis: "rows", dim: rows });
    }
    let d = rows / 2;
    ComplexMatrix::new(d, l, x.data()[..d * l].to_vec(), x.data()[d * l..].to_vec())
}

/// Hermitian attention scores `Re(qᴴ k) / sqrt(d_k)`.
///
/// `q` is `d×Lq` and `k` is `d×Lk`, one column per position; the result is
/// `Lq×Lk`.
pub fn hermitian_score(q: &ComplexMatrix, k: &ComplexMatrix, d_k: usize) -> Result<RealMatrix> {
    if q.rows() != k.rows() {
        return Err(Error::DimensionMismatch(format!(
            "q has {} channels, k has {}",
            q.rows(),
            k.rows()
        )));
    }
    let (d, lq) = q.shape();
    let lk = k.cols();
    let scale = 1.0 / (d_k as f64).sqrt();
    Ok(RealMatrix::from_fn(lq, lk, |i, j| {
        // Re(conj(q)·k) = q_re k_re + q_im k_im
        let mut s = 0.0;
        for c in 0..d {
            s += q.re()[c * lq + i] * k.re()[c * lk + j] + q.im()[c * lq + i] * k.im()[c * lk + j];
        }
        s * scale
    }))
}
