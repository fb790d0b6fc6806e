pub mod body;
pub mod error;
pub mod fit;
pub mod flow;
pub mod geom;
pub mod io;
pub mod optim;
pub mod relation;
pub mod rigid;
pub mod rotation;
pub mod synth;

pub use error::{Error, Result};
