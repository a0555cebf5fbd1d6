//! FLD1 field files: one JSON document carrying base64 little-endian binary64
//! samples, component-major, index `(c*ny + j)*nx + i`.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};
use crate::fields::{Grid2, ScalarField, VectorField};

pub const MAGIC: &str = "FLD1";
pub const ENCODING: &str = "b64le-f64";

#[derive(Debug, Serialize, Deserialize)]
struct Fld1Doc {
    magic: String,
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    hx: f64,
    hy: f64,
    components: usize,
    encoding: String,
    data: String,
}

pub fn to_string(field: &VectorField) -> String {
    let g = field.grid();
    let mut bytes = Vec::with_capacity(field.ncomp() * g.len() * 8);
    for c in field.components() {
        for v in c.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let doc = Fld1Doc {
        magic: MAGIC.into(),
        nx: g.nx,
        ny: g.ny,
        x0: g.x0,
        y0: g.y0,
        hx: g.hx,
        hy: g.hy,
        components: field.ncomp(),
        encoding: ENCODING.into(),
        data: B64.encode(bytes),
    };
    serde_json::to_string(&doc).expect("plain struct serializes")
}

pub fn from_str(text: &str) -> Result<VectorField> {
    let doc: Fld1Doc = serde_json::from_str(text).map_err(|e| FlatError::Format(e.to_string()))?;
    if doc.magic != MAGIC {
        return Err(FlatError::Format(format!("bad magic {:?}", doc.magic)));
    }
    if doc.encoding != ENCODING {
        return Err(FlatError::Format(format!("unsupported encoding {:?}", doc.encoding)));
    }
    if doc.components == 0 {
        return Err(FlatError::Format("zero components".into()));
    }
    let grid = Grid2::new(doc.nx, doc.ny, doc.x0, doc.y0, doc.hx, doc.hy)?;
    let bytes = B64.decode(doc.data.as_bytes()).map_err(|e| FlatError::Format(e.to_string()))?;
    let expected = doc.components * grid.len() * 8;
    if bytes.len() != expected {
        return Err(FlatError::Format(format!("data holds {} bytes, expected {expected}", bytes.len())));
    }
    let comps = bytes
        .chunks_exact(grid.len() * 8)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            ScalarField::new(grid, values)
        })
        .collect::<Result<Vec<_>>>()?;
    VectorField::from_components(comps)
}

pub fn write(path: impl AsRef<Path>, field: &VectorField) -> Result<()> {
    std::fs::write(path, to_string(field))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<VectorField> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_component_major() {
        let g = Grid2::new(3, 4, 0.5, -1.0, 0.25, 0.5).unwrap();
        let f = VectorField::from_fn(g, 2, |x, y, o| {
            o[0] = x;
            o[1] = 10.0 + y;
        })
        .unwrap();
        let text = to_string(&f);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["magic"], "FLD1");
        assert_eq!(v["encoding"], "b64le-f64");
        assert_eq!(v["components"], 2);
        let bytes = B64.decode(v["data"].as_str().unwrap()).unwrap();
        let at = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap());
        // (c*ny + j)*nx + i with c=1, j=2, i=1
        assert_eq!(at((1 * 4 + 2) * 3 + 1), 10.0 + g.y(2));
        assert_eq!(at((0 * 4 + 3) * 3 + 2), g.x(2));
    }

    #[test]
    fn rejects_foreign_magic_and_encoding() {
        let g = Grid2::new(3, 3, 0.0, 0.0, 1.0, 1.0).unwrap();
        let f = VectorField::from_fn(g, 1, |_, _, o| o[0] = 1.0).unwrap();
        let text = to_string(&f);
        assert!(from_str(&text.replace("FLD1", "FLD2")).is_err());
        assert!(from_str(&text.replace("b64le-f64", "b64be-f64")).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["nx"] = 4.into();
        assert!(from_str(&v.to_string()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_is_bit_exact(nx in 3usize..7, ny in 3usize..7, k in 1usize..4, seed in any::<u32>()) {
            let g = Grid2::new(nx, ny, -0.3, 0.7, 0.1, 0.2).unwrap();
            let s = seed as f64 * 1e-3;
            let f = VectorField::from_fn(g, k, |x, y, o| {
                for (c, v) in o.iter_mut().enumerate() {
                    *v = (s + c as f64 * x).sin() * y.exp() - 1e-300 * c as f64;
                }
            }).unwrap();
            let back = from_str(&to_string(&f)).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
