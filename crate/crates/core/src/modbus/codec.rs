use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    U16,
    S16,
    U32,
    S32,
    Float32,
}

impl DataType {
    /// Number of 16-bit registers occupied.
    pub fn words(self) -> u16 {
        match self {
            DataType::U16 | DataType::S16 => 1,
            DataType::U32 | DataType::S32 | DataType::Float32 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordOrder {
    #[default]
    HighWordFirst,
    LowWordFirst,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("{datatype:?} needs {expected} register word(s), got {got}")]
    ArityMismatch {
        datatype: DataType,
        expected: usize,
        got: usize,
    },
    #[error("decoded value is not finite ({0})")]
    NonFiniteValue(String),
    #[error("scale must be finite and non-zero")]
    InvalidScale,
    #[error("offset must be finite")]
    InvalidOffset,
    #[error("value {0} does not fit the register encoding")]
    Unrepresentable(String),
}

/// How raw register words become a measurement: reinterpretation, then
/// `value * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCodec<S>", into = "RawCodec<S>")]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct ValueCodec<S: Scalar> {
    datatype: DataType,
    word_order: WordOrder,
    scale: S,
    offset: S,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
struct RawCodec<S: Scalar> {
    datatype: DataType,
    #[serde(default)]
    word_order: WordOrder,
    #[serde(default = "one")]
    scale: S,
    #[serde(default = "zero")]
    offset: S,
}

fn one<S: Scalar>() -> S {
    S::one()
}

fn zero<S: Scalar>() -> S {
    S::zero()
}

impl<S: Scalar> TryFrom<RawCodec<S>> for ValueCodec<S> {
    type Error = CodecError;

    fn try_from(raw: RawCodec<S>) -> Result<Self, Self::Error> {
        ValueCodec::new(raw.datatype, raw.word_order, raw.scale, raw.offset)
    }
}

impl<S: Scalar> From<ValueCodec<S>> for RawCodec<S> {
    fn from(c: ValueCodec<S>) -> Self {
        RawCodec {
            datatype: c.datatype,
            word_order: c.word_order,
            scale: c.scale,
            offset: c.offset,
        }
    }
}

impl<S: Scalar> ValueCodec<S> {
    pub fn new(
        datatype: DataType,
        word_order: WordOrder,
        scale: S,
        offset: S,
    ) -> Result<Self, CodecError> {
        if scale.is_zero() || !scale.is_finite() {
            return Err(CodecError::InvalidScale);
        }
        if !offset.is_finite() {
            return Err(CodecError::InvalidOffset);
        }
        Ok(Self {
            datatype,
            word_order,
            scale,
            offset,
        })
    }

    /// Unscaled codec with the default word order.
    pub fn plain(datatype: DataType) -> Self {
        Self {
            datatype,
            word_order: WordOrder::default(),
            scale: S::one(),
            offset: S::zero(),
        }
    }

    pub fn datatype(&self) -> DataType {
        self.datatype
    }

    pub fn word_order(&self) -> WordOrder {
        self.word_order
    }

    pub fn scale(&self) -> S {
        self.scale
    }

    pub fn offset(&self) -> S {
        self.offset
    }

    pub fn with_word_order(mut self, word_order: WordOrder) -> Self {
        self.word_order = word_order;
        self
    }

    pub fn words(&self) -> u16 {
        self.datatype.words()
    }

    /// Inverse of [`decode_value`]: the register words a device would hold for
    /// `value`. Integer types round to the nearest raw count.
    pub fn encode(&self, value: S) -> Result<Vec<u16>, CodecError> {
        let raw = (value - self.offset) / self.scale;
        let bad = || CodecError::Unrepresentable(format!("{value}"));
        let rounded = raw.round();
        let bits: u32 = match self.datatype {
            DataType::U16 => return rounded.to_u16().map(|w| vec![w]).ok_or_else(bad),
            DataType::S16 => return rounded.to_i16().map(|w| vec![w as u16]).ok_or_else(bad),
            DataType::U32 => rounded.to_u32().ok_or_else(bad)?,
            DataType::S32 => rounded.to_i32().ok_or_else(bad)? as u32,
            DataType::Float32 => raw.to_f32().ok_or_else(bad)?.to_bits(),
        };
        let (hi, lo) = ((bits >> 16) as u16, bits as u16);
        Ok(match self.word_order {
            WordOrder::HighWordFirst => vec![hi, lo],
            WordOrder::LowWordFirst => vec![lo, hi],
        })
    }
}

/// Assembles `words` per the codec's datatype and word order, then applies
/// scale and offset.
pub fn decode_value<S: Scalar>(words: &[u16], codec: &ValueCodec<S>) -> Result<S, CodecError> {
    let expected = codec.datatype.words() as usize;
    if words.len() != expected {
        return Err(CodecError::ArityMismatch {
            datatype: codec.datatype,
            expected,
            got: words.len(),
        });
    }
    let pattern = || -> u32 {
        let (hi, lo) = match codec.word_order {
            WordOrder::HighWordFirst => (words[0], words[1]),
            WordOrder::LowWordFirst => (words[1], words[0]),
        };
        (hi as u32) << 16 | lo as u32
    };
    let raw: Option<S> = match codec.datatype {
        DataType::U16 => S::from_u16(words[0]),
        DataType::S16 => S::from_i16(words[0] as i16),
        DataType::U32 => S::from_u32(pattern()),
        DataType::S32 => S::from_i32(pattern() as i32),
        DataType::Float32 => {
            let f = f32::from_bits(pattern());
            if !f.is_finite() {
                return Err(CodecError::NonFiniteValue(f.to_string()));
            }
            // widen through the shortest decimal so 412.53f32 stays 412.53
            S::from_f64(f.to_string().parse::<f64>().expect("float display parses"))
        }
    };
    let raw = raw.ok_or_else(|| CodecError::NonFiniteValue("unrepresentable".into()))?;
    let inverse = S::one() / codec.scale;
    let scaled = if inverse.abs() > S::one() && inverse.fract().is_zero() {
        // dividing by 10 rounds once; multiplying by 0.1 does not
        raw / inverse
    } else {
        raw * codec.scale
    };
    let value = scaled + codec.offset;
    if !value.is_finite() {
        return Err(CodecError::NonFiniteValue(value.to_string()));
    }
    Ok(value)
}
