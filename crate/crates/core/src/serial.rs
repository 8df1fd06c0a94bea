//! JSON schema shared by matrices, linear networks, ReLU networks and
//! feedforward specs.
//!
//! Matrices are `{"rows": r, "cols": c, "entries": [row-major floats]}`.
//! Networks are `{"w_u", "w_e", "b_u"?, "b_e"?, "blocks": [...], "block_depth"}`
//! where a depth-1 block is `{"w", "b"?}` and a depth-2 block is
//! `{"w1", "w2", "b1"?, "b2"?}`. Bias fields are present only for ReLU networks.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::tensor::Matrix;

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson { rows: self.rows(), cols: self.cols(), entries: self.as_slice().to_vec() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = MatrixJson::deserialize(d)?;
        Matrix::new(m.rows, m.cols, m.entries).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub(crate) struct BlockJson {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w1: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w2: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct NetworkJson {
    pub w_u: Matrix,
    pub w_e: Matrix,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b_u: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b_e: Option<Vec<f64>>,
    pub blocks: Vec<BlockJson>,
    pub block_depth: u8,
}

pub(crate) fn missing(field: &str, block: usize) -> crate::Error {
    crate::Error::DimensionMismatch(format!("block {block} is missing field `{field}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_json_shape() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.5]]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"rows":2,"cols":2,"entries":[1.0,2.0,3.0,4.5]}"#);
        assert_eq!(serde_json::from_str::<Matrix>(&s).unwrap(), m);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"entries":[1.0]}"#).is_err());
    }
}
