use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("invalid entity id {0:?}: expected Q followed by digits")]
    Entity(String),
    #[error("invalid property id {0:?}: expected P followed by digits")]
    Property(String),
}

fn is_prefixed_digits(s: &str, prefix: u8) -> bool {
    let b = s.as_bytes();
    b.len() >= 2 && b[0] == prefix && b[1..].iter().all(u8::is_ascii_digit)
}

macro_rules! id_newtype {
    ($name:ident, $prefix:literal, $err:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Result<Self, IdError> {
                let s = s.into();
                if is_prefixed_digits(&s, $prefix) {
                    Ok(Self(s))
                } else {
                    Err(IdError::$err(s))
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = IdError;
            fn try_from(s: String) -> Result<Self, IdError> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl FromStr for $name {
            type Err = IdError;
            fn from_str(s: &str) -> Result<Self, IdError> {
                Self::new(s)
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
    };
}

id_newtype!(EntityId, b'Q', Entity, "Item identifier such as `Q42`.");
id_newtype!(PropertyId, b'P', Property, "Property identifier such as `P17`.");

/// Value of a single claim's main snak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClaimValue {
    EntityRef {
        id: EntityId,
    },
    Text {
        text: String,
    },
    /// `amount` keeps the dump's decimal string (sign stripped) to avoid
    /// float round-off.
    Quantity {
        amount: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<EntityId>,
    },
    Time {
        time: String,
        precision: u8,
    },
    Coordinate {
        lat: f64,
        lon: f64,
    },
    Other {
        raw: String,
    },
}

impl ClaimValue {
    pub fn entity_ref(&self) -> Option<&EntityId> {
        match self {
            ClaimValue::EntityRef { id } => Some(id),
            _ => None,
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        ClaimValue::Text { text: s.into() }
    }

    pub fn item(id: &str) -> Self {
        ClaimValue::EntityRef {
            id: EntityId::new(id).expect("valid QID literal"),
        }
    }
}

/// A knowledge-graph node in normalized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    #[serde(default)]
    pub descriptions: BTreeMap<String, String>,
    #[serde(default)]
    pub aliases: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub claims: BTreeMap<PropertyId, Vec<ClaimValue>>,
    #[serde(default)]
    pub sitelinks: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntityInvariant {
    #[error("empty map key in {0}")]
    EmptyKey(&'static str),
    #[error("language code {0:?} is not a lowercase tag")]
    LanguageCode(String),
    #[error("claim list for {0} is empty")]
    EmptyClaims(PropertyId),
    #[error("coordinate out of range under {0}")]
    Coordinate(PropertyId),
    #[error("entity reference under {0} is not a valid item id")]
    EntityRef(PropertyId),
}

/// Lowercase alphanumeric subtags joined by `-`.
pub fn is_language_code(code: &str) -> bool {
    !code.is_empty()
        && code.split('-').all(|sub| {
            !sub.is_empty()
                && sub
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        })
}

impl Entity {
    pub fn new(id: EntityId) -> Self {
        Entity {
            id,
            labels: BTreeMap::new(),
            descriptions: BTreeMap::new(),
            aliases: BTreeMap::new(),
            claims: BTreeMap::new(),
            sitelinks: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), EntityInvariant> {
        for (what, keys) in [
            ("labels", self.labels.keys().collect::<Vec<_>>()),
            ("descriptions", self.descriptions.keys().collect()),
            ("aliases", self.aliases.keys().collect()),
        ] {
            for k in keys {
                if k.is_empty() {
                    return Err(EntityInvariant::EmptyKey(what));
                }
                if !is_language_code(k) {
                    return Err(EntityInvariant::LanguageCode(k.clone()));
                }
            }
        }
        if self.sitelinks.keys().any(String::is_empty) {
            return Err(EntityInvariant::EmptyKey("sitelinks"));
        }
        for (p, values) in &self.claims {
            if values.is_empty() {
                return Err(EntityInvariant::EmptyClaims(p.clone()));
            }
            for v in values {
                match v {
                    ClaimValue::Coordinate { lat, lon }
                        if !((-90.0..=90.0).contains(lat) && (-180.0..=180.0).contains(lon)) =>
                    {
                        return Err(EntityInvariant::Coordinate(p.clone()));
                    }
                    ClaimValue::EntityRef { id } if !is_prefixed_digits(id.as_str(), b'Q') => {
                        return Err(EntityInvariant::EntityRef(p.clone()));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Labels restricted to `langs`.
    pub fn labels_in(&self, langs: &BTreeSet<String>) -> BTreeMap<String, String> {
        self.labels
            .iter()
            .filter(|(lang, _)| langs.contains(*lang))
            .map(|(l, v)| (l.clone(), v.clone()))
            .collect()
    }

    /// Every entity reference under `p`, in claim order.
    pub fn claim_entity_refs(&self, p: &PropertyId) -> Vec<EntityId> {
        self.claims
            .get(p)
            .map(|vs| vs.iter().filter_map(ClaimValue::entity_ref).cloned().collect())
            .unwrap_or_default()
    }

    pub fn label(&self, lang: &str) -> Option<&str> {
        self.labels.get(lang).map(String::as_str)
    }

    pub fn description(&self, lang: &str) -> Option<&str> {
        self.descriptions.get(lang).map(String::as_str)
    }

    /// Total outgoing entity references across all claims.
    pub fn outgoing_links(&self) -> usize {
        self.claims
            .values()
            .flatten()
            .filter(|v| v.entity_ref().is_some())
            .count()
    }

    pub fn claim_count(&self) -> usize {
        self.claims.values().map(Vec::len).sum()
    }
}
