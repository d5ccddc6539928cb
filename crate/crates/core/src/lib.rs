pub mod cv;
pub mod effects;
pub mod error;
pub mod io;
pub mod matching;
pub mod panel;
pub mod pipeline;
pub mod placebo;
pub mod simulate;
pub mod solver;
pub mod synthesis;

pub use error::{Error, Result};
