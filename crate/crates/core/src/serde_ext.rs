//! Serde adapters: matrices as nested row arrays, vectors as flat arrays, and
//! reals that may be infinite (JSON has no infinity, so `"inf"` / `"-inf"`).

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::numlin::{Mat, Vector};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExtF64 {
    Num(f64),
    Text(String),
}

fn to_ext(v: f64) -> ExtF64 {
    if v == f64::INFINITY {
        ExtF64::Text("inf".into())
    } else if v == f64::NEG_INFINITY {
        ExtF64::Text("-inf".into())
    } else {
        ExtF64::Num(v)
    }
}

fn from_ext<E: serde::de::Error>(v: ExtF64) -> Result<f64, E> {
    match v {
        ExtF64::Num(x) => Ok(x),
        ExtF64::Text(s) => match s.as_str() {
            "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
            "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
            other => Err(E::custom(format!("not a number: {other}"))),
        },
    }
}

pub mod mat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err("ragged matrix rows".into());
        }
        Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
    }
}

pub mod opt_mat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => super::mat::serialize(m, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| super::mat::from_rows(&r).map_err(D::Error::custom))
            .transpose()
    }
}

pub mod mat_list {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        let all: Vec<Vec<Vec<f64>>> = ms
            .iter()
            .map(|m| {
                (0..m.nrows())
                    .map(|i| m.row(i).iter().copied().collect())
                    .collect()
            })
            .collect();
        all.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        let all: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        all.iter()
            .map(|r| super::mat::from_rows(r).map_err(D::Error::custom))
            .collect()
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.iter().copied().collect::<Vec<f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        Ok(Vector::from_vec(v))
    }
}

pub mod opt_vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vector>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|v| v.iter().copied().collect::<Vec<f64>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vector>, D::Error> {
        let v: Option<Vec<f64>> = Option::deserialize(d)?;
        Ok(v.map(Vector::from_vec))
    }
}

pub mod vector_list {
    use super::*;

    pub fn serialize<S: Serializer>(vs: &[Vector], s: S) -> Result<S::Ok, S::Error> {
        vs.iter()
            .map(|v| v.iter().copied().collect::<Vec<f64>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
        let all: Vec<Vec<f64>> = Vec::deserialize(d)?;
        Ok(all.into_iter().map(Vector::from_vec).collect())
    }
}

/// Vector whose entries may be `±inf`.
pub mod ext_vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|&x| to_ext(x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        let v: Vec<ExtF64> = Vec::deserialize(d)?;
        let vals: Result<Vec<f64>, D::Error> = v.into_iter().map(from_ext).collect();
        Ok(Vector::from_vec(vals?))
    }
}
