//! Knowledge-graph ingestion: identifiers, the normalized entity model, and
//! the streaming dump parser.

mod dump;
mod model;

pub use dump::{
    line_aligned_shards, open_dump, parse_dump_range, parse_dump_stream, parse_entity_line,
    DumpItem, DumpOptions, DumpParser, ParseDiagnostic,
};
pub use model::{is_language_code, ClaimValue, Entity, EntityId, EntityInvariant, IdError, PropertyId};
