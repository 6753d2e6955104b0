pub mod linalg;
pub mod classical_ca;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod oracles;
pub mod neural;
pub mod pic_objective;
pub mod reconstitution;
pub mod whitening;

pub use error::{Error, Result};
pub use linalg::Matrix;
