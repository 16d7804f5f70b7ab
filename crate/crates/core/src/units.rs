//! SI and logarithmic unit newtypes.
//!
//! Every unit wraps an `f64` and serializes as a bare number. Deserialization
//! rejects NaN and infinities, so a parsed configuration never carries a
//! non-finite value into the simulator.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! unit {
    ($(#[$meta:meta])* $name:ident, $suffix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
        pub struct $name(pub f64);

        impl $name {
            pub const fn new(value: f64) -> Self {
                Self(value)
            }

            pub const fn value(self) -> f64 {
                self.0
            }

            pub fn is_finite(self) -> bool {
                self.0.is_finite()
            }
        }

        impl From<f64> for $name {
            fn from(v: f64) -> Self {
                Self(v)
            }
        }

        impl From<$name> for f64 {
            fn from(v: $name) -> f64 {
                v.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $suffix)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_f64(self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                finite(d).map(Self)
            }
        }
    };
}

unit!(
    /// Time in seconds.
    Seconds,
    "s"
);
unit!(
    /// Frequency in hertz.
    Hertz,
    "Hz"
);
unit!(Volts, "V");
unit!(Amperes, "A");
unit!(Farads, "F");
unit!(Ohms, "Ohm");
unit!(
    /// Power relative to the carrier, dB.
    Dbc,
    "dBc"
);
unit!(
    /// Single-sideband phase noise density, dBc/Hz.
    DbcPerHz,
    "dBc/Hz"
);

/// Deserialize an `f64` and reject NaN and infinities.
pub fn finite<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(serde::de::Error::custom(format!(
            "non-finite number {v} is not allowed"
        )))
    }
}

/// Like [`finite`] for optional fields.
pub fn finite_opt<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    match Option::<f64>::deserialize(d)? {
        Some(v) if !v.is_finite() => Err(serde::de::Error::custom(format!(
            "non-finite number {v} is not allowed"
        ))),
        other => Ok(other),
    }
}

/// Power ratio to dB.
pub fn db10(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Amplitude ratio to dB.
pub fn db20(x: f64) -> f64 {
    20.0 * x.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Deserialize)]
    struct Holder {
        f: Hertz,
    }

    #[test]
    fn rejects_non_finite() {
        assert!(toml::from_str::<Holder>("f = nan").is_err());
        assert!(toml::from_str::<Holder>("f = inf").is_err());
        assert!(toml::from_str::<Holder>("f = -inf").is_err());
        let h: Holder = toml::from_str("f = 5e7").unwrap();
        assert_eq!(h.f, Hertz(5e7));
    }
}
