//! Lossy compression of SQL query logs into pattern encodings.

pub mod cluster;
pub mod deviation;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod io;
pub mod log;
pub mod lossless;
pub mod maxent;
pub mod mixture;
pub mod pattern;
pub mod sql;

pub use encoding::Encoding;
pub use error::{LogrError, Result};
pub use log::Log;
pub use pattern::Pattern;
