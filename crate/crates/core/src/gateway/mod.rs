//! Prompt protocols, response parsers and model dispatch.

mod client;
mod dispatch;
mod leakage;
mod parse;
mod prompts;

pub use client::*;
pub use dispatch::*;
pub use leakage::*;
pub use parse::*;
pub use prompts::*;
