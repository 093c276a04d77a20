use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use super::ModelError;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
                let id = id.into();
                if id.trim().is_empty() {
                    return Err(ModelError::InvalidId(stringify!($name)));
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $name::new(s).map_err(serde::de::Error::custom)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = ModelError;
            fn try_from(s: &str) -> Result<Self, ModelError> {
                $name::new(s)
            }
        }
    };
}

string_id!(
    /// Identifier of a machine, product or batch asset.
    AssetId
);
string_id!(
    /// Identifier of one (multivariate) timeseries.
    SeriesId
);
string_id!(
    /// Identifier of a transformation view.
    ViewId
);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ids_are_rejected() {
        assert!(AssetId::new("").is_err());
        assert!(SeriesId::new("   ").is_err());
        assert_eq!(ViewId::new("v").unwrap().as_str(), "v");
    }

    #[test]
    fn deserialize_validates() {
        assert!(serde_json::from_str::<AssetId>("\"\"").is_err());
        let id: AssetId = serde_json::from_str("\"caster-1\"").unwrap();
        assert_eq!(id.to_string(), "caster-1");
    }
}
