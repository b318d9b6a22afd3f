//! Container layout for unquantized widely-linear layers.
//!
//! Each layer `name` is stored as three tensors: `name.U` and `name.W` with
//! shape `[2, n, m]` (real plane then imaginary plane) and `name.real_shape`
//! holding the source layer's real `[rows, cols]`.

use anyhow::{anyhow, bail, Context, Result};
use wlquant::packing::TensorEntry;
use wlquant::tensor::ComplexMatrix;
use wlquant::widely_linear::WidelyLinearLayer;

fn planes(name: &str, z: &ComplexMatrix) -> Result<TensorEntry> {
    let (n, m) = z.shape();
    let data = z.re().iter().chain(z.im()).map(|&v| v as f32).collect();
    Ok(TensorEntry::new(name, vec![2, n, m], data)?)
}

fn from_planes(e: &TensorEntry) -> Result<ComplexMatrix> {
    let [2, n, m] = e.shape.as_slice() else {
        bail!("tensor {} has shape {:?}, expected [2, n, m]", e.name, e.shape);
    };
    let (n, m) = (*n, *m);
    let vals: Vec<f64> = e.data.iter().map(|&v| f64::from(v)).collect();
    Ok(ComplexMatrix::new(n, m, vals[..n * m].to_vec(), vals[n * m..].to_vec())?)
}

pub fn to_entries(name: &str, l: &WidelyLinearLayer) -> Result<Vec<TensorEntry>> {
    Ok(vec![
        planes(&format!("{name}.U"), &l.u)?,
        planes(&format!("{name}.W"), &l.w)?,
        TensorEntry::new(
            format!("{name}.real_shape"),
            vec![2],
            vec![l.real_out_dim as f32, l.real_in_dim as f32],
        )?,
    ])
}

/// Groups `*.U`, `*.W`, `*.real_shape` triples back into layers, in the order
/// their `U` tensors appear.
pub fn from_entries(entries: &[TensorEntry]) -> Result<Vec<(String, WidelyLinearLayer)>> {
    let find = |name: &str| {
        entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| anyhow!("missing tensor {name}"))
    };
    let mut out = Vec::new();
    for e in entries {
        let Some(base) = e.name.strip_suffix(".U") else { continue };
        let u = from_planes(e)?;
        let w = from_planes(find(&format!("{base}.W"))?)?;
        let shape = find(&format!("{base}.real_shape"))?;
        let [rows, cols] = shape.data[..] else {
            bail!("{base}.real_shape must hold two values");
        };
        let mut layer = WidelyLinearLayer::new(u, w).with_context(|| format!("layer {base}"))?;
        let (rows, cols) = (rows as usize, cols as usize);
        let (n, m) = layer.shape();
        if rows + 1 < 2 * n || rows > 2 * n || cols + 1 < 2 * m || cols > 2 * m {
            bail!("{base}: real shape {rows}x{cols} does not fit complex shape {n}x{m}");
        }
        layer.real_out_dim = rows;
        layer.real_in_dim = cols;
        layer.padded_out = rows < 2 * n;
        layer.padded_in = cols < 2 * m;
        out.push((base.to_string(), layer));
    }
    if out.is_empty() {
        bail!("no widely-linear layers found");
    }
    Ok(out)
}

/// The layer as it reads back from a masters file.
pub fn through_f32(l: &WidelyLinearLayer) -> WidelyLinearLayer {
    let round = |z: &ComplexMatrix| {
        let (n, m) = z.shape();
        let r = |v: &[f64]| v.iter().map(|&x| f64::from(x as f32)).collect();
        ComplexMatrix::new(n, m, r(z.re()), r(z.im())).expect("rounded values stay finite")
    };
    WidelyLinearLayer {
        u: round(&l.u),
        w: round(&l.w),
        ..l.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wlquant::tensor::RealMatrix;
    use wlquant::widely_linear::real_to_widely_linear;

    #[test]
    fn entries_roundtrip_with_padding() {
        let r = RealMatrix::from_fn(5, 4, |i, j| (i as f64) - 0.5 * j as f64);
        let layer = real_to_widely_linear(&r);
        let entries = to_entries("odd", &layer).unwrap();
        assert_eq!(entries.len(), 3);
        let back = from_entries(&entries).unwrap();
        assert_eq!(back.len(), 1);
        let (name, l) = &back[0];
        assert_eq!(name, "odd");
        assert_eq!(*l, through_f32(&layer));
        assert!(l.padded_out && !l.padded_in);
        assert_eq!((l.real_out_dim, l.real_in_dim), (5, 4));
    }

    #[test]
    fn missing_partner_tensor_is_an_error() {
        let layer = real_to_widely_linear(&RealMatrix::identity(2));
        let mut entries = to_entries("eye", &layer).unwrap();
        entries.remove(1);
        assert!(from_entries(&entries).is_err());
        assert!(from_entries(&[]).is_err());
    }
}
