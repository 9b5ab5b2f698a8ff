//! Complex matrices as row-major nested arrays of `[re, im]` pairs.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{c, CMat};

pub fn to_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMat, String> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err("ragged matrix rows".into());
    }
    Ok(CMat::from_fn(nr, nc, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

pub fn serialize<S: Serializer>(m: &CMat, s: S) -> Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMat, D::Error> {
    let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
    from_rows(&rows).map_err(D::Error::custom)
}
