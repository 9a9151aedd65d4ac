//! Does a question give away the entity it asks about?

use crate::kg::Entity;
use crate::text::normalize_text;

/// True when the normalized question contains the entity's label or any alias
/// in `language` or English. Empty names never count.
pub fn leakage_check(question: &str, entity: &Entity, language: &str) -> bool {
    let q = normalize_text(question);
    let mut langs = vec![language];
    if language != "en" {
        langs.push("en");
    }
    langs.iter().any(|lang| {
        let label = entity.labels.get(*lang).into_iter();
        let aliases = entity.aliases.get(*lang).into_iter().flatten();
        label.chain(aliases).any(|name| {
            let n = normalize_text(name);
            !n.is_empty() && q.contains(&n)
        })
    })
}
