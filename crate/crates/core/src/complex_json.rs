//! Serde adapters writing complex numbers as `[re, im]` pairs.

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{CMatrix, CVector};

type Pair = [f64; 2];

fn pair(z: &Complex64) -> Pair {
    [z.re, z.im]
}

fn complex(p: &Pair) -> Complex64 {
    Complex64::new(p[0], p[1])
}

/// `Vec<CVector>` as a list of lists of pairs.
pub mod vectors {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[CVector], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<Vec<Pair>> = v.iter().map(|x| x.iter().map(pair).collect()).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CVector>, D::Error> {
        let raw: Vec<Vec<Pair>> = Vec::deserialize(d)?;
        Ok(raw
            .iter()
            .map(|x| CVector::from_iterator(x.len(), x.iter().map(complex)))
            .collect())
    }
}

/// `Vec<CMatrix>` as a list of row-major matrices of pairs.
pub mod matrices {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<Vec<Vec<Pair>>> = v
            .iter()
            .map(|a| {
                (0..a.nrows())
                    .map(|i| (0..a.ncols()).map(|j| pair(&a[(i, j)])).collect())
                    .collect()
            })
            .collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMatrix>, D::Error> {
        let raw: Vec<Vec<Vec<Pair>>> = Vec::deserialize(d)?;
        raw.iter()
            .map(|rows| {
                let nrows = rows.len();
                let ncols = rows.first().map(Vec::len).unwrap_or(0);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(serde::de::Error::custom("ragged matrix rows"));
                }
                Ok(CMatrix::from_fn(nrows, ncols, |i, j| complex(&rows[i][j])))
            })
            .collect()
    }
}
