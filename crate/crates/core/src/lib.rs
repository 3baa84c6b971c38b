pub mod agents;
pub mod attention;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kv;
pub mod losses;
pub mod matching;
pub mod model;
pub mod numerics;
pub mod phase;
pub mod pnm;
pub mod pose;
pub mod synth;

pub use error::{Error, Result};
