//! Regenerates the bundled offline fixture.
//!
//! cargo run -p kultur-core --example record_fixture -- crates/core/tests/fixtures/tiny

use std::path::PathBuf;

use kultur::synth::{record_fixture, SynthParams};

fn main() {
    let dir: PathBuf = std::env::args_os().nth(1).map(Into::into).unwrap_or_else(|| "fixture".into());
    let params = SynthParams { subjects: 120, regions: 5, seed: 7 };
    match record_fixture(&dir, params) {
        Ok(m) => {
            for (k, v) in &m.stage_counts {
                println!("{k:>20} {v}");
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
