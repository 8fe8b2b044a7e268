//! Lossless number formatting for CSV and JSON artifacts.
//!
//! Every float written to disk uses 17 significant digits so that it parses
//! back to the identical `f64`.

use serde::de::Deserializer;
use serde::ser::{Error as _, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

/// Format with 17 significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// An `f64` that serializes to JSON with 17 significant digits.
///
/// Non-finite values serialize as `null`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct F17(pub f64);

impl From<f64> for F17 {
    fn from(x: f64) -> Self {
        F17(x)
    }
}

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(fmt17(self.0)).map_err(S::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Option::<f64>::deserialize(d).map(|x| F17(x.unwrap_or(f64::NAN)))
    }
}

pub fn f17_vec(xs: &[f64]) -> Vec<F17> {
    xs.iter().copied().map(F17).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, 0.0, 165.36] {
            let s = fmt17(x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn json_round_trip() {
        let v = vec![F17(0.1), F17(-2.5e-17), F17(f64::INFINITY)];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, "[1.0000000000000001e-1,-2.4999999999999999e-17,null]");
        let back: Vec<F17> = serde_json::from_str(&s).unwrap();
        assert_eq!(back[0].0.to_bits(), 0.1f64.to_bits());
        assert_eq!(back[1].0.to_bits(), (-2.5e-17f64).to_bits());
        assert!(back[2].0.is_nan());
    }
}
