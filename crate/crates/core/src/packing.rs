//! On-disk formats.
//!
//! # Packed codes
//! Four 2-bit codes per byte, little-endian within the byte: code `j` sits in
//! bits `2(j mod 4)..2(j mod 4)+1` of byte `j / 4`. Unused trailing bits are 0.
//!
//! # Quantized layer file (`FWL1`, version 1)
//! All integers little-endian.
//!
//! | field         | type        |
//! |---------------|-------------|
//! | magic         | `b"FWL1"`   |
//! | version       | u16 (= 1)   |
//! | n, m          | u32, u32    |
//! | T             | u16         |
//! | padding flags | u8: bit 0 = output padded, bit 1 = input padded |
//!
//! followed, for each stage and for each plane (`U` then `W`), by `s_re: f32`,
//! `s_im: f32` and `ceil(n·m / 4)` bytes of packed codes.
//!
//! # Tensor container
//! A sequence of entries, each a `u32` header length, a UTF-8 header
//! `name\tdtype\tshape` (shape as comma-separated dimensions, dtype `f32`)
//! and `product(shape)·4` bytes of little-endian `f32`.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};
use crate::phasequant::{AxisScales, CodePlane};
use crate::residual::{QuantStage, QuantizedLayer};
use crate::tensor::RealMatrix;

pub const LAYER_MAGIC: [u8; 4] = *b"FWL1";
pub const LAYER_VERSION: u16 = 1;
/// Bytes before the first stage.
pub const LAYER_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 2 + 1;

const PAD_OUT: u8 = 0b01;
const PAD_IN: u8 = 0b10;

/// 2-bit codes packed four to a byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    bytes: Vec<u8>,
    count: usize,
}

impl PackedCodes {
    pub fn from_raw(bytes: Vec<u8>, count: usize) -> Result<Self> {
        let expected = count.div_ceil(4);
        if bytes.len() != expected {
            return Err(Error::MalformedLength {
                count,
                expected,
                actual: bytes.len(),
            });
        }
        let tail = count % 4;
        if tail != 0 && bytes[expected - 1] >> (2 * tail) != 0 {
            return Err(Error::MalformedHeader(
                "non-zero padding bits after the last code".into(),
            ));
        }
        Ok(Self { bytes, count })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Code at position `j`.
    pub fn get(&self, j: usize) -> u8 {
        (self.bytes[j / 4] >> (2 * (j % 4))) & 0b11
    }
}

/// Packs a flat code slice (every value must be `< 4`).
pub fn pack_slice(codes: &[u8]) -> Vec<u8> {
    codes
        .chunks(4)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |b, (j, &k)| b | ((k & 0b11) << (2 * j)))
        })
        .collect()
}

pub fn pack_codes(codes: &CodePlane) -> PackedCodes {
    PackedCodes {
        bytes: pack_slice(codes.codes()),
        count: codes.len(),
    }
}

/// Unpacks into a `rows × cols` plane; `rows·cols` must equal the code count.
pub fn unpack_codes(p: &PackedCodes, rows: usize, cols: usize) -> Result<CodePlane> {
    if rows * cols != p.count {
        return Err(Error::DimensionMismatch(format!(
            "{} packed codes cannot fill {rows}x{cols}",
            p.count
        )));
    }
    CodePlane::new(rows, cols, (0..p.count).map(|j| p.get(j)).collect())
}

/// Exact size of an `FWL1` file.
pub fn layer_file_len(n: usize, m: usize, stages: usize) -> usize {
    LAYER_HEADER_LEN + stages * 2 * (8 + (n * m).div_ceil(4))
}

/// Meaningful code bits in an `FWL1` payload: `2 bits × 2nm weights × T`.
pub fn code_payload_bits(n: usize, m: usize, stages: usize) -> usize {
    stages * 2 * 2 * n * m
}

/// Serializes `q`, returning the byte count written.
pub fn write_layer<W: Write>(q: &QuantizedLayer, mut sink: W) -> Result<usize> {
    let (n, m) = q.shape();
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{what} = {v} exceeds u32")))
    };
    let t = u16::try_from(q.num_stages())
        .map_err(|_| Error::InvalidConfig(format!("{} stages exceed u16", q.num_stages())))?;
    let mut buf = Vec::with_capacity(layer_file_len(n, m, q.num_stages()));
    buf.extend_from_slice(&LAYER_MAGIC);
    buf.extend_from_slice(&LAYER_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(n, "n")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(m, "m")?.to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    let flags = if q.padded_out { PAD_OUT } else { 0 } | if q.padded_in { PAD_IN } else { 0 };
    buf.push(flags);
    for stage in q.stages() {
        for (codes, scales) in [(&stage.u_codes, stage.u_scales), (&stage.w_codes, stage.w_scales)] {
            buf.extend_from_slice(&(scales.s_re as f32).to_le_bytes());
            buf.extend_from_slice(&(scales.s_im as f32).to_le_bytes());
            buf.extend_from_slice(&pack_slice(codes.codes()));
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

fn read_exact_or<R: Read>(src: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

fn read_u16<R: Read>(src: &mut R, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or(src, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(src: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(src, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(src: &mut R, what: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact_or(src, &mut b, what)?;
    Ok(f32::from_le_bytes(b))
}

fn read_scales<R: Read>(src: &mut R) -> Result<AxisScales> {
    let s_re = read_f32(src, "scale")?;
    let s_im = read_f32(src, "scale")?;
    for s in [s_re, s_im] {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::MalformedHeader(format!("invalid scale {s}")));
        }
    }
    Ok(AxisScales::new(f64::from(s_re), f64::from(s_im)))
}

/// Parses an `FWL1` layer.
pub fn read_layer<R: Read>(mut src: R) -> Result<QuantizedLayer> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut src, &mut magic, "magic")?;
    if magic != LAYER_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = read_u16(&mut src, "version")?;
    if version != LAYER_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let n = read_u32(&mut src, "n")? as usize;
    let m = read_u32(&mut src, "m")? as usize;
    let t = read_u16(&mut src, "stage count")? as usize;
    let mut flags = [0u8; 1];
    read_exact_or(&mut src, &mut flags, "padding flags")?;
    let flags = flags[0];
    if flags & !(PAD_OUT | PAD_IN) != 0 {
        return Err(Error::MalformedHeader(format!("unknown flag bits {flags:#04x}")));
    }
    if t == 0 {
        return Err(Error::InvalidStageCount(0));
    }
    let padded_out = flags & PAD_OUT != 0;
    let padded_in = flags & PAD_IN != 0;
    if (padded_out && n == 0) || (padded_in && m == 0) {
        return Err(Error::MalformedHeader("padding flag on an empty dimension".into()));
    }
    let plane_bytes = (n * m).div_ceil(4);
    let mut stages = Vec::with_capacity(t);
    for stage_index in 0..t {
        let mut planes = Vec::with_capacity(2);
        for _ in 0..2 {
            let scales = read_scales(&mut src)?;
            let mut bytes = vec![0u8; plane_bytes];
            read_exact_or(&mut src, &mut bytes, "packed codes")?;
            let packed = PackedCodes::from_raw(bytes, n * m)?;
            planes.push((unpack_codes(&packed, n, m)?, scales));
        }
        let (w_codes, w_scales) = planes.pop().expect("two planes");
        let (u_codes, u_scales) = planes.pop().expect("two planes");
        stages.push(QuantStage {
            u_codes,
            u_scales,
            w_codes,
            w_scales,
            stage_index,
        });
    }
    let mut rest = [0u8; 1];
    if src.read(&mut rest)? != 0 {
        return Err(Error::MalformedHeader("trailing bytes after the last stage".into()));
    }
    QuantizedLayer::new(
        stages,
        2 * n - padded_out as usize,
        2 * m - padded_in as usize,
        padded_out,
        padded_in,
    )
}

/// One named `f32` tensor of the container format.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        validate_name(&name)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor {name}: shape {shape:?} vs {} values",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_matrix(name: impl Into<String>, m: &RealMatrix) -> Result<Self> {
        Self::new(name, vec![m.rows(), m.cols()], m.to_f32())
    }

    pub fn to_matrix(&self) -> Result<RealMatrix> {
        match self.shape.as_slice() {
            [rows, cols] => RealMatrix::from_f32(*rows, *cols, &self.data),
            other => Err(Error::DimensionMismatch(format!(
                "tensor {} has shape {other:?}, expected a matrix",
                self.name
            ))),
        }
    }
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['\t', '\n', '\r']) {
        return Err(Error::MalformedHeader(format!("invalid tensor name {name:?}")));
    }
    Ok(())
}

pub fn write_container<W: Write>(entries: &[TensorEntry], mut sink: W) -> Result<usize> {
    let mut buf = Vec::new();
    for e in entries {
        validate_name(&e.name)?;
        let shape: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        let header = format!("{}\tf32\t{}", e.name, shape.join(","));
        let len = u32::try_from(header.len())
            .map_err(|_| Error::MalformedHeader("header too long".into()))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

/// Reads every entry; any defect fails the whole read.
pub fn read_container<R: Read>(mut src: R) -> Result<Vec<TensorEntry>> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut out = Vec::new();
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Truncated(what.to_string()))?;
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    while pos < bytes.len() {
        let len = u32::from_le_bytes(take(&mut pos, 4, "header length")?.try_into().unwrap()) as usize;
        let header = std::str::from_utf8(take(&mut pos, len, "header")?)
            .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let [name, dtype, shape] = fields.as_slice() else {
            return Err(Error::MalformedHeader(format!("expected 3 fields in {header:?}")));
        };
        if *dtype != "f32" {
            return Err(Error::UnsupportedDtype(dtype.to_string()));
        }
        let shape = shape
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::MalformedHeader(format!("bad shape {shape:?}")))?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
        let payload = take(
            &mut pos,
            count.checked_mul(4).ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?,
            &format!("payload of {name}"),
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(TensorEntry::new(*name, shape, data)?);
    }
    Ok(out)
}

/// Named real matrices from a container; every entry must be 2-D.
pub fn read_real_checkpoint<R: Read>(src: R) -> Result<Vec<(String, RealMatrix)>> {
    read_container(src)?
        .into_iter()
        .map(|e| Ok((e.name.clone(), e.to_matrix()?)))
        .collect()
}

pub fn write_real_checkpoint<W: Write>(tensors: &[(String, RealMatrix)], sink: W) -> Result<usize> {
    let entries = tensors
        .iter()
        .map(|(name, m)| TensorEntry::from_matrix(name.clone(), m))
        .collect::<Result<Vec<_>>>()?;
    write_container(&entries, sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::residual_quantize;
    use crate::tensor::{ComplexMatrix, ComplexScalar};
    use crate::widely_linear::{real_to_widely_linear, WidelyLinearLayer};

    #[test]
    fn pack_examples() {
        let p = pack_codes(&CodePlane::new(1, 4, vec![0, 1, 2, 3]).unwrap());
        assert_eq!(p.bytes(), &[0xE4]);
        assert_eq!(p.bytes(), &[0b1110_0100]);
        let p = pack_codes(&CodePlane::new(1, 1, vec![0]).unwrap());
        assert_eq!(p.bytes(), &[0x00]);
        let p = pack_codes(&CodePlane::new(1, 5, vec![3, 3, 3, 3, 1]).unwrap());
        assert_eq!(p.bytes(), &[0xFF, 0x01]);
    }

    #[test]
    fn unpack_examples() {
        let p = PackedCodes::from_raw(vec![0xE4], 4).unwrap();
        assert_eq!(unpack_codes(&p, 1, 4).unwrap().codes(), &[0, 1, 2, 3]);
        let empty = PackedCodes::from_raw(vec![], 0).unwrap();
        assert!(unpack_codes(&empty, 0, 0).unwrap().is_empty());
        assert!(matches!(
            PackedCodes::from_raw(vec![0, 0], 4),
            Err(Error::MalformedLength { count: 4, expected: 1, actual: 2 })
        ));
        assert!(PackedCodes::from_raw(vec![0b0100_0000], 3).is_err());
    }

    fn sample_layer(t: usize) -> QuantizedLayer {
        let r = RealMatrix::from_fn(5, 6, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        residual_quantize(&real_to_widely_linear(&r), t).unwrap()
    }

    #[test]
    fn layer_roundtrip_and_size() {
        let q = sample_layer(2);
        let mut buf = Vec::new();
        let written = write_layer(&q, &mut buf).unwrap();
        assert_eq!(written, buf.len());
        assert_eq!(written, layer_file_len(3, 3, 2));
        let back = read_layer(buf.as_slice()).unwrap();
        assert_eq!(back.shape(), (3, 3));
        assert_eq!((back.real_out_dim, back.real_in_dim), (5, 6));
        assert!(back.padded_out && !back.padded_in);
        let mut again = Vec::new();
        write_layer(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn layer_read_errors_are_distinct() {
        let mut buf = Vec::new();
        write_layer(&sample_layer(1), &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_layer(bad.as_slice()), Err(Error::BadMagic(_))));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_layer(bad.as_slice()), Err(Error::VersionMismatch(9))));

        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_layer(short), Err(Error::Truncated(_))));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_layer(long.as_slice()), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn budget_for_1024_square() {
        // 2048×2048 real source = 4·1024² real parameters
        let (n, m) = (1024, 1024);
        assert_eq!(code_payload_bits(n, m, 1), 4 * n * m);
        assert_eq!(code_payload_bits(n, m, 1) / 8, 512 * 1024);
        assert_eq!(code_payload_bits(n, m, 2) / 8, 1024 * 1024);
        assert_eq!(layer_file_len(n, m, 1) - LAYER_HEADER_LEN - 16, 512 * 1024);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let id = vec![("eye".to_string(), RealMatrix::identity(2))];
        let mut buf = Vec::new();
        write_real_checkpoint(&id, &mut buf).unwrap();
        assert_eq!(read_real_checkpoint(buf.as_slice()).unwrap(), id);

        let names = ["Q", "K", "V", "O", "Up", "Gate", "Down"];
        let tensors: Vec<_> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), RealMatrix::from_fn(2 + i, 3, |r, c| (r + c + i) as f64 * 0.25)))
            .collect();
        let mut buf = Vec::new();
        write_real_checkpoint(&tensors, &mut buf).unwrap();
        assert_eq!(read_real_checkpoint(buf.as_slice()).unwrap(), tensors);

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_real_checkpoint(truncated), Err(Error::Truncated(_))));
    }

    #[test]
    fn container_header_errors() {
        let e = TensorEntry::new("x", vec![1], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_container(&[e], &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf[4..4 + 7]).to_string();
        assert_eq!(text, "x\tf32\t1");

        let mut bad = buf.clone();
        bad[6..9].copy_from_slice(b"f16");
        assert!(matches!(read_container(bad.as_slice()), Err(Error::UnsupportedDtype(d)) if d == "f16"));

        let mut bad = buf.clone();
        bad[10] = b'z';
        assert!(matches!(read_container(bad.as_slice()), Err(Error::MalformedHeader(_))));

        assert!(TensorEntry::new("a\tb", vec![0], vec![]).is_err());
        assert!(TensorEntry::new("v", vec![3], vec![1.0, 2.0, 3.0]).unwrap().to_matrix().is_err());
    }

    #[test]
    fn zero_scale_stage_survives_roundtrip() {
        let z = ComplexMatrix::zeros(2, 2);
        let one = ComplexMatrix::from_fn(2, 2, |_, _| ComplexScalar::new(1.0, 0.0));
        let layer = WidelyLinearLayer::new(one, z).unwrap();
        let q = residual_quantize(&layer, 3).unwrap();
        let mut buf = Vec::new();
        write_layer(&q, &mut buf).unwrap();
        assert_eq!(read_layer(buf.as_slice()).unwrap(), q);
    }
}
