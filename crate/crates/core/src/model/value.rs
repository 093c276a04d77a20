use std::fmt;

use serde::{Deserialize, Serialize};

/// Value type of a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Float64,
    Int64,
    Bool,
    Text,
}

impl ValueType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Float64 | ValueType::Int64)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueType::Float64 => "float64",
            ValueType::Int64 => "int64",
            ValueType::Bool => "bool",
            ValueType::Text => "text",
        };
        f.write_str(s)
    }
}

/// A single channel value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    pub fn value_type(&self) -> ValueType {
        match self {
            Scalar::Float(_) => ValueType::Float64,
            Scalar::Int(_) => ValueType::Int64,
            Scalar::Bool(_) => ValueType::Bool,
            Scalar::Text(_) => ValueType::Text,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Scalar::Float(v) => Some(v),
            Scalar::Int(v) => Some(v as f64),
            _ => None,
        }
    }

    /// Equality that distinguishes `-0.0` from `0.0` and treats identical NaN payloads as equal.
    pub fn bit_eq(&self, other: &Scalar) -> bool {
        match (self, other) {
            (Scalar::Float(a), Scalar::Float(b)) => a.to_bits() == b.to_bits(),
            (a, b) => a == b,
        }
    }

    /// Convert a JSON value into a scalar of the requested type. Integers are accepted for
    /// float channels; nothing else is coerced.
    pub fn from_json(value: &serde_json::Value, ty: ValueType) -> Option<Scalar> {
        use serde_json::Value;
        match (ty, value) {
            (ValueType::Float64, Value::Number(n)) => n.as_f64().map(Scalar::Float),
            (ValueType::Int64, Value::Number(n)) => n.as_i64().map(Scalar::Int),
            (ValueType::Bool, Value::Bool(b)) => Some(Scalar::Bool(*b)),
            (ValueType::Text, Value::String(s)) => Some(Scalar::Text(s.clone())),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Scalar::Float(v) => {
                serde_json::Number::from_f64(*v).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
            }
            Scalar::Int(v) => serde_json::Value::from(*v),
            Scalar::Bool(v) => serde_json::Value::Bool(*v),
            Scalar::Text(v) => serde_json::Value::String(v.clone()),
        }
    }

    /// Parse the textual representation used by the CSV connector.
    pub fn parse_text(text: &str, ty: ValueType) -> Option<Scalar> {
        match ty {
            ValueType::Float64 => text.trim().parse().ok().map(Scalar::Float),
            ValueType::Int64 => text.trim().parse().ok().map(Scalar::Int),
            ValueType::Bool => match text.trim() {
                "true" | "1" => Some(Scalar::Bool(true)),
                "false" | "0" => Some(Scalar::Bool(false)),
                _ => None,
            },
            ValueType::Text => Some(Scalar::Text(text.to_string())),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Float(v) => write!(f, "{v}"),
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Bool(v) => write!(f, "{v}"),
            Scalar::Text(v) => f.write_str(v),
        }
    }
}
