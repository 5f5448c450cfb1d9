//! Score scalar abstraction.
//!
//! Every score handled by the engine (per-question metrics, aggregated
//! objectives, grid cells, marginal means) lives in `[0, 1]` and is produced by
//! ratios of counts and arithmetic means. The engine is generic over the
//! scalar so the same code runs on `f64` for production and on exact
//! rationals where tests need bit-exact algebra.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Numeric type usable as a score.
///
/// `Display`/`FromStr` must round-trip losslessly; all on-disk formats write
/// scores through them.
pub trait Scalar:
    Num
    + Copy
    + PartialOrd
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// `numerator / denominator` for non-negative counts. `denominator` must be non-zero.
    fn ratio(numerator: usize, denominator: usize) -> Self {
        Self::from_count(numerator) / Self::from_count(denominator)
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    /// Lossy conversion used only for reporting (standard errors, logs).
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn is_unit_interval(self) -> bool {
        self >= Self::zero() && self <= Self::one()
    }

    /// Arithmetic mean; `None` for an empty slice.
    fn mean(values: &[Self]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sum = values.iter().fold(Self::zero(), |acc, v| acc + *v);
        Some(sum / Self::from_count(values.len()))
    }

    /// Parses a score, also accepting the decimal notation floats print.
    fn parse_score(text: &str) -> Option<Self> {
        text.trim().parse::<Self>().ok()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

impl Scalar for Ratio<i64> {
    fn parse_score(text: &str) -> Option<Self> {
        parse_rational(text)
    }
}

impl Scalar for Ratio<i128> {
    fn parse_score(text: &str) -> Option<Self> {
        parse_rational(text)
    }
}

/// Parses `"n/d"`, `"n"`, or a finite decimal such as `"0.25"` exactly.
fn parse_rational<T>(text: &str) -> Option<Ratio<T>>
where
    T: Clone + num_traits::Num + num_integer::Integer + FromStr,
    Ratio<T>: FromStr,
{
    let text = text.trim();
    if let Ok(r) = text.parse::<Ratio<T>>() {
        return Some(r);
    }
    let (int_part, frac_part) = text.split_once('.')?;
    if frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let negative = int_part.starts_with('-');
    let digits = format!("{}{}", int_part.trim_start_matches('-'), frac_part);
    let numer: T = digits.parse().ok()?;
    let ten: T = "10".parse().ok()?;
    let mut denom = T::one();
    for _ in 0..frac_part.len() {
        denom = denom * ten.clone();
    }
    let r = Ratio::new(numer, denom);
    Some(if negative { Ratio::new(T::zero(), T::one()) - r } else { r })
}

/// Serde adapters that store scores as strings through `Display`/`parse_score`.
pub mod score_serde {
    use super::Scalar;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Scalar, Ser: Serializer>(value: &S, ser: Ser) -> Result<Ser::Ok, Ser::Error> {
        ser.collect_str(value)
    }

    pub fn deserialize<'de, S: Scalar, D: Deserializer<'de>>(de: D) -> Result<S, D::Error> {
        let text = String::deserialize(de)?;
        S::parse_score(&text).ok_or_else(|| D::Error::custom(format!("invalid score `{text}`")))
    }

    pub mod option {
        use super::super::Scalar;
        use serde::{de::Error, Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Scalar, Ser: Serializer>(
            value: &Option<S>,
            ser: Ser,
        ) -> Result<Ser::Ok, Ser::Error> {
            match value {
                Some(v) => ser.collect_str(v),
                None => ser.serialize_none(),
            }
        }

        pub fn deserialize<'de, S: Scalar, D: Deserializer<'de>>(de: D) -> Result<Option<S>, D::Error> {
            match Option::<String>::deserialize(de)? {
                None => Ok(None),
                Some(text) => S::parse_score(&text)
                    .map(Some)
                    .ok_or_else(|| D::Error::custom(format!("invalid score `{text}`"))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Exact = Ratio<i128>;

    #[test]
    fn ratio_is_exact_for_rationals() {
        assert_eq!(Exact::ratio(2, 3), Exact::new(2, 3));
        assert_eq!(<f64 as Scalar>::ratio(1, 4), 0.25);
    }

    #[test]
    fn mean_of_empty_is_none() {
        assert_eq!(<f64 as Scalar>::mean(&[]), None);
        assert_eq!(Exact::mean(&[Exact::new(1, 3), Exact::new(1, 1), Exact::new(0, 1)]), Some(Exact::new(4, 9)));
    }

    #[test]
    fn rational_parses_decimal_and_fraction() {
        assert_eq!(Exact::parse_score("0.25"), Some(Exact::new(1, 4)));
        assert_eq!(Exact::parse_score("2/3"), Some(Exact::new(2, 3)));
        assert_eq!(Exact::parse_score("1"), Some(Exact::new(1, 1)));
        assert_eq!(Exact::parse_score("abc"), None);
    }

    #[test]
    fn float_display_roundtrips() {
        for v in [0.1f64, 1.0 / 3.0, 0.0, 1.0, 0.7071067811865476] {
            let text = v.to_string();
            assert_eq!(f64::parse_score(&text), Some(v));
        }
    }
}
