//! Shared text-format helpers: 17-significant-digit floats for CSV and JSON.

use serde::ser::{Error as _, SerializeSeq};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// Formats `v` with 17 significant digits, which round-trips every finite f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses a float field, rejecting non-finite values.
pub fn parse_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
        what: what.to_string(),
        reason: format!("`{s}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            what: what.to_string(),
            reason: format!("`{s}` is not finite"),
        });
    }
    Ok(v)
}

/// JSON array of floats written with [`fmt_f64`].
pub struct Sig17<'a>(pub &'a [f64]);

impl Serialize for Sig17<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.0.len()))?;
        for &v in self.0 {
            seq.serialize_element(&raw_number(v).map_err(S::Error::custom)?)?;
        }
        seq.end()
    }
}

/// Single float written with [`fmt_f64`].
pub struct Sig17Scalar(pub f64);

impl Serialize for Sig17Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        raw_number(self.0)
            .map_err(S::Error::custom)?
            .serialize(serializer)
    }
}

fn raw_number(v: f64) -> std::result::Result<Box<RawValue>, String> {
    if !v.is_finite() {
        return Err(format!("cannot serialise non-finite value {v}"));
    }
    RawValue::from_string(fmt_f64(v)).map_err(|e| e.to_string())
}

pub(crate) fn csv_error(what: &str, e: csv::Error) -> Error {
    Error::Parse {
        what: what.to_string(),
        reason: e.to_string(),
    }
}

pub(crate) fn json_error(what: &str, e: serde_json::Error) -> Error {
    Error::Parse {
        what: what.to_string(),
        reason: e.to_string(),
    }
}
