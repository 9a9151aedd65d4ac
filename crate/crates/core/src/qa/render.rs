use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::kg::{ClaimValue, EntityId};

/// Source of labels for entities referenced by claim values.
pub trait LabelResolver {
    fn labels_of(&self, id: &EntityId) -> Option<&BTreeMap<String, String>>;
}

impl LabelResolver for HashMap<EntityId, BTreeMap<String, String>> {
    fn labels_of(&self, id: &EntityId) -> Option<&BTreeMap<String, String>> {
        self.get(id)
    }
}

impl LabelResolver for BTreeMap<EntityId, BTreeMap<String, String>> {
    fn labels_of(&self, id: &EntityId) -> Option<&BTreeMap<String, String>> {
        self.get(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("no label for {0} in any language")]
    Unresolvable(EntityId),
    #[error("value has no canonical text form")]
    Unsupported,
    #[error("value renders empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    /// Set when a label came from a language other than the requested one.
    pub fallback_language: Option<String>,
}

/// Label lookup with the chain: requested language, English, then the first
/// available language in code order.
pub fn resolve_label(
    id: &EntityId,
    lang: &str,
    labels: &dyn LabelResolver,
) -> Result<(String, Option<String>), RenderError> {
    let map = labels.labels_of(id).ok_or_else(|| RenderError::Unresolvable(id.clone()))?;
    let usable = |s: &&String| !s.trim().is_empty();
    if let Some(l) = map.get(lang).filter(usable) {
        return Ok((l.clone(), None));
    }
    if let Some(l) = map.get("en").filter(usable) {
        return Ok((l.clone(), Some("en".to_owned())));
    }
    map.iter()
        .find(|(_, v)| usable(v))
        .map(|(k, v)| (v.clone(), Some(k.clone())))
        .ok_or_else(|| RenderError::Unresolvable(id.clone()))
}

fn strip_zeros(s: &str) -> &str {
    let t = s.trim_start_matches('0');
    if t.is_empty() {
        "0"
    } else {
        t
    }
}

/// Canonical rendering of a dump time string such as `+1632-00-00T00:00:00Z`.
pub fn render_time(time: &str, precision: u8) -> Option<String> {
    let (negative, body) = match time.as_bytes().first()? {
        b'+' => (false, &time[1..]),
        b'-' => (true, &time[1..]),
        _ => (false, time),
    };
    let date = body.split('T').next()?;
    let mut parts = date.splitn(3, '-');
    let year_raw = parts.next()?;
    if year_raw.is_empty() || !year_raw.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let month = parts.next().unwrap_or("00");
    let day = parts.next().unwrap_or("00");
    let year = strip_zeros(year_raw);
    let era = |s: String| if negative { format!("{s} BCE") } else { s };
    let out = match precision {
        11.. if month != "00" && day != "00" => format!("{year}-{month}-{day}"),
        10.. if month != "00" => format!("{year}-{month}"),
        8 => {
            let y: u64 = year.parse().ok()?;
            format!("{}s", y / 10 * 10)
        }
        _ => year.to_owned(),
    };
    Some(era(out))
}

/// Text form of a claim value in `lang`.
pub fn render_value(v: &ClaimValue, lang: &str, labels: &dyn LabelResolver) -> Result<Rendered, RenderError> {
    let rendered = match v {
        ClaimValue::EntityRef { id } => {
            let (text, fallback_language) = resolve_label(id, lang, labels)?;
            Rendered { text, fallback_language }
        }
        ClaimValue::Text { text } => Rendered { text: text.trim().to_owned(), fallback_language: None },
        ClaimValue::Quantity { amount, unit } => {
            let amount = amount.strip_prefix('+').unwrap_or(amount);
            match unit.as_ref().map(|u| resolve_label(u, lang, labels)) {
                Some(Ok((unit_label, fallback_language))) => Rendered {
                    text: format!("{amount} {unit_label}"),
                    fallback_language,
                },
                Some(Err(_)) | None => Rendered { text: amount.to_owned(), fallback_language: None },
            }
        }
        ClaimValue::Time { time, precision } => Rendered {
            text: render_time(time, *precision).ok_or(RenderError::Unsupported)?,
            fallback_language: None,
        },
        ClaimValue::Coordinate { lat, lon } => Rendered { text: format!("{lat}, {lon}"), fallback_language: None },
        ClaimValue::Other { .. } => return Err(RenderError::Unsupported),
    };
    if rendered.text.trim().is_empty() {
        return Err(RenderError::Empty);
    }
    Ok(rendered)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> EntityId {
        EntityId::new(s).unwrap()
    }

    fn labels() -> HashMap<EntityId, BTreeMap<String, String>> {
        let mut m = HashMap::new();
        m.insert(
            q("Q183"),
            BTreeMap::from([("en".to_string(), "Germany".to_string()), ("de".to_string(), "Deutschland".to_string())]),
        );
        m.insert(q("Q11573"), BTreeMap::from([("en".to_string(), "metre".to_string())]));
        m.insert(q("Q99"), BTreeMap::from([("ja".to_string(), "東京".to_string()), ("ko".to_string(), "도쿄".to_string())]));
        m.insert(q("Q100"), BTreeMap::new());
        m
    }

    #[test]
    fn entity_labels_and_fallbacks() {
        let l = labels();
        let r = render_value(&ClaimValue::item("Q183"), "en", &l).unwrap();
        assert_eq!(r, Rendered { text: "Germany".into(), fallback_language: None });
        let r = render_value(&ClaimValue::item("Q183"), "de", &l).unwrap();
        assert_eq!(r.text, "Deutschland");
        let r = render_value(&ClaimValue::item("Q183"), "sw", &l).unwrap();
        assert_eq!(r.fallback_language.as_deref(), Some("en"));
        let r = render_value(&ClaimValue::item("Q99"), "sw", &l).unwrap();
        assert_eq!(r, Rendered { text: "東京".into(), fallback_language: Some("ja".into()) });
        assert_eq!(
            render_value(&ClaimValue::item("Q100"), "en", &l),
            Err(RenderError::Unresolvable(q("Q100")))
        );
        assert_eq!(
            render_value(&ClaimValue::item("Q101"), "en", &l),
            Err(RenderError::Unresolvable(q("Q101")))
        );
    }

    #[test]
    fn times() {
        let t = |s: &str, p| render_time(s, p).unwrap();
        assert_eq!(t("+1632-00-00T00:00:00Z", 9), "1632");
        assert_eq!(t("+1879-03-14T00:00:00Z", 11), "1879-03-14");
        assert_eq!(t("+1879-03-00T00:00:00Z", 11), "1879-03");
        assert_eq!(t("+1879-03-14T00:00:00Z", 10), "1879-03");
        assert_eq!(t("+1635-00-00T00:00:00Z", 8), "1630s");
        assert_eq!(t("-0500-00-00T00:00:00Z", 9), "500 BCE");
        assert_eq!(render_time("garbage", 9), None);
    }

    #[test]
    fn quantities_match_reference_formatter() {
        let l = labels();
        let reference = |amount: &str, unit: Option<&str>| match unit {
            Some(u) => format!("{} {}", amount.trim_start_matches('+'), u),
            None => amount.trim_start_matches('+').to_string(),
        };
        let cases = [
            ("73.5", Some(("Q11573", "metre"))),
            ("+1500", Some(("Q11573", "metre"))),
            ("-4", None),
            ("0.001", Some(("Q11573", "metre"))),
        ];
        for (amount, unit) in cases {
            let v = ClaimValue::Quantity { amount: amount.into(), unit: unit.map(|(u, _)| q(u)) };
            assert_eq!(render_value(&v, "en", &l).unwrap().text, reference(amount, unit.map(|(_, n)| n)));
        }
        assert_eq!(
            render_value(&ClaimValue::Quantity { amount: "73.5".into(), unit: Some(q("Q11573")) }, "en", &l)
                .unwrap()
                .text,
            "73.5 metre"
        );
    }

    #[test]
    fn other_values() {
        let l = labels();
        assert_eq!(render_value(&ClaimValue::text(" Ulm "), "en", &l).unwrap().text, "Ulm");
        assert_eq!(render_value(&ClaimValue::text("  "), "en", &l), Err(RenderError::Empty));
        assert_eq!(
            render_value(&ClaimValue::Coordinate { lat: 27.175, lon: 78.0421 }, "en", &l).unwrap().text,
            "27.175, 78.0421"
        );
        assert_eq!(render_value(&ClaimValue::Other { raw: "{}".into() }, "en", &l), Err(RenderError::Unsupported));
    }
}
