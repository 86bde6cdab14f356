//! Property codecs: how an engineering value becomes payload bytes.
//!
//! The set is fixed. Integers and fixed-point values of 1..=8 bytes, big
//! endian on the wire, signed variants in two's complement. A codec's string
//! form ("uint:4", "fixed:6:2.5e-3") is what configuration files carry.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

use crate::error::{Error, Result};

/// Op-select convention inside the 18-bit RCA. Bits 15..0 carry the register
/// number; the two bits above pick the operation.
pub const RCA_REGISTER_MASK: u32 = 0xFFFF;
/// Write that the device stages and applies at the next timing event.
pub const RCA_WRITE_LATCHED: u32 = 1 << 16;
/// Write that the device applies when the transaction completes.
pub const RCA_WRITE_NOW: u32 = 1 << 17;

pub fn rca_read(reg: u16) -> u32 {
    u32::from(reg)
}

pub fn rca_write_latched(reg: u16) -> u32 {
    u32::from(reg) | RCA_WRITE_LATCHED
}

pub fn rca_write_now(reg: u16) -> u32 {
    u32::from(reg) | RCA_WRITE_NOW
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Codec {
    /// Unsigned integer, `bytes` wide.
    Uint { bytes: u8 },
    /// Two's-complement integer, `bytes` wide.
    Int { bytes: u8 },
    /// Unsigned raw count times `scale`.
    UFixed { bytes: u8, scale: f64 },
    /// Signed raw count times `scale`.
    Fixed { bytes: u8, scale: f64 },
}

impl Codec {
    /// Payload width on the wire.
    pub fn width(&self) -> usize {
        match *self {
            Codec::Uint { bytes }
            | Codec::Int { bytes }
            | Codec::UFixed { bytes, .. }
            | Codec::Fixed { bytes, .. } => bytes as usize,
        }
    }

    pub fn parse(s: &str) -> Result<Codec> {
        let bad = |msg: &str| Error::Domain(format!("codec {s:?}: {msg}"));
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or("");
        let bytes: u8 = parts
            .next()
            .ok_or_else(|| bad("missing byte width"))?
            .parse()
            .map_err(|_| bad("byte width is not an integer"))?;
        if bytes == 0 || bytes as usize > 8 {
            return Err(bad("byte width must be 1..=8"));
        }
        let scale = parts.next();
        let trailing = parts.next();
        if trailing.is_some() {
            return Err(bad("too many fields"));
        }
        let need_scale = || -> Result<f64> {
            let raw = scale.ok_or_else(|| bad("missing scale"))?;
            let v: f64 = raw.parse().map_err(|_| bad("scale is not a number"))?;
            if !v.is_finite() || v <= 0.0 {
                return Err(bad("scale must be finite and positive"));
            }
            Ok(v)
        };
        match kind {
            "uint" if scale.is_none() => Ok(Codec::Uint { bytes }),
            "int" if scale.is_none() => Ok(Codec::Int { bytes }),
            "uint" | "int" => Err(bad("integer codecs take no scale")),
            "ufixed" => Ok(Codec::UFixed { bytes, scale: need_scale()? }),
            "fixed" => Ok(Codec::Fixed { bytes, scale: need_scale()? }),
            _ => Err(bad("unknown codec kind")),
        }
    }

    /// Decode payload bytes into an engineering value.
    pub fn decode(&self, bytes: &[u8]) -> Result<f64> {
        if bytes.len() != self.width() {
            return Err(Error::Domain(format!(
                "codec {self} expects {} bytes, got {}",
                self.width(),
                bytes.len()
            )));
        }
        let mut raw: u64 = 0;
        for &b in bytes {
            raw = (raw << 8) | u64::from(b);
        }
        let signed = |raw: u64, width: usize| -> i64 {
            let shift = 64 - 8 * width;
            ((raw << shift) as i64) >> shift
        };
        Ok(match *self {
            Codec::Uint { .. } => raw as f64,
            Codec::Int { bytes } => signed(raw, bytes as usize) as f64,
            Codec::UFixed { scale, .. } => raw as f64 * scale,
            Codec::Fixed { bytes, scale } => signed(raw, bytes as usize) as f64 * scale,
        })
    }

    /// Encode an engineering value into payload bytes. Integer codecs insist
    /// on integral values; fixed-point codecs round to the nearest raw count.
    pub fn encode(&self, value: f64) -> Result<Vec<u8>> {
        if !value.is_finite() {
            return Err(Error::Range(format!("value {value} is not finite")));
        }
        let width = self.width();
        let unsigned = |raw: f64| -> Result<u64> {
            // 2^(8w) as f64 is exact; the comparison below is safe for w <= 8.
            let limit = (8 * width as u32) as f64;
            if raw < 0.0 || raw >= 2f64.powi(limit as i32) {
                return Err(Error::Range(format!(
                    "raw count {raw} does not fit {width} unsigned bytes"
                )));
            }
            Ok(raw as u64)
        };
        let signed = |raw: f64| -> Result<i64> {
            let half = 2f64.powi((8 * width - 1) as i32);
            if raw < -half || raw >= half {
                return Err(Error::Range(format!(
                    "raw count {raw} does not fit {width} signed bytes"
                )));
            }
            Ok(raw as i64)
        };
        let raw: u64 = match *self {
            Codec::Uint { .. } => {
                if value.fract() != 0.0 {
                    return Err(Error::Range(format!("{value} is not an integer")));
                }
                unsigned(value)?
            }
            Codec::Int { .. } => {
                if value.fract() != 0.0 {
                    return Err(Error::Range(format!("{value} is not an integer")));
                }
                signed(value)? as u64
            }
            Codec::UFixed { scale, .. } => unsigned((value / scale).round())?,
            Codec::Fixed { scale, .. } => signed((value / scale).round())? as u64,
        };
        let mut out = vec![0u8; width];
        for (k, byte) in out.iter_mut().enumerate() {
            *byte = (raw >> (8 * (width - 1 - k))) as u8;
        }
        Ok(out)
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Codec::Uint { bytes } => write!(f, "uint:{bytes}"),
            Codec::Int { bytes } => write!(f, "int:{bytes}"),
            Codec::UFixed { bytes, scale } => write!(f, "ufixed:{bytes}:{scale}"),
            Codec::Fixed { bytes, scale } => write!(f, "fixed:{bytes}:{scale}"),
        }
    }
}

impl Serialize for Codec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Codec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Codec::parse(&s).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["uint:1", "uint:8", "int:4", "ufixed:2:0.01", "fixed:6:0.0000152587890625"] {
            let c = Codec::parse(s).unwrap();
            assert_eq!(Codec::parse(&c.to_string()).unwrap(), c);
        }
        assert!(Codec::parse("uint:0").is_err());
        assert!(Codec::parse("uint:9").is_err());
        assert!(Codec::parse("uint:4:2").is_err());
        assert!(Codec::parse("fixed:4").is_err());
        assert!(Codec::parse("fixed:4:-1").is_err());
        assert!(Codec::parse("blob:4").is_err());
    }

    #[test]
    fn integer_codecs() {
        let c = Codec::Uint { bytes: 2 };
        assert_eq!(c.encode(513.0).unwrap(), vec![2, 1]);
        assert_eq!(c.decode(&[2, 1]).unwrap(), 513.0);
        assert!(c.encode(65536.0).is_err());
        assert!(c.encode(-1.0).is_err());
        assert!(c.encode(1.5).is_err());

        let i = Codec::Int { bytes: 2 };
        assert_eq!(i.encode(-2.0).unwrap(), vec![0xFF, 0xFE]);
        assert_eq!(i.decode(&[0xFF, 0xFE]).unwrap(), -2.0);
        assert!(i.encode(32768.0).is_err());
        assert_eq!(i.encode(-32768.0).unwrap(), vec![0x80, 0x00]);
    }

    #[test]
    fn fixed_point_codecs_round_to_raw_counts() {
        let c = Codec::UFixed { bytes: 2, scale: 0.01 };
        assert_eq!(c.encode(77.004).unwrap(), c.encode(77.0).unwrap());
        assert_eq!(c.decode(&c.encode(77.0).unwrap()).unwrap(), 77.0);

        let f = Codec::Fixed { bytes: 4, scale: 2f64.powi(-32) };
        let enc = f.encode(-0.25).unwrap();
        assert_eq!(f.decode(&enc).unwrap(), -0.25);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let c = Codec::Uint { bytes: 4 };
        assert!(c.decode(&[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn uint_round_trip(bytes in 1u8..=8, v in 0u64..u32::MAX as u64) {
            let c = Codec::Uint { bytes };
            let max = if bytes == 8 { u64::MAX } else { (1u64 << (8 * bytes)) - 1 };
            let v = v % (max.min(1 << 52) + 1);
            let enc = c.encode(v as f64).unwrap();
            prop_assert_eq!(enc.len(), bytes as usize);
            prop_assert_eq!(c.decode(&enc).unwrap(), v as f64);
        }

        #[test]
        fn int_round_trip(bytes in 1u8..=8, v in i32::MIN as i64..=i32::MAX as i64) {
            let c = Codec::Int { bytes };
            let half = 1i64 << (8 * bytes.min(7) - 1);
            let v = v.rem_euclid(2 * half) - half;
            let enc = c.encode(v as f64).unwrap();
            prop_assert_eq!(c.decode(&enc).unwrap(), v as f64);
        }

        #[test]
        fn fixed_round_trips_to_the_nearest_count(raw in -8_388_608i64..8_388_607, exp in -20i32..0) {
            let scale = 2f64.powi(exp);
            let c = Codec::Fixed { bytes: 3, scale };
            let value = raw as f64 * scale;
            let enc = c.encode(value).unwrap();
            prop_assert_eq!(c.decode(&enc).unwrap(), value);
        }
    }
}
