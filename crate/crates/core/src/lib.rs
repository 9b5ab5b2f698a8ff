//! Optimization of control-enhanced sequential strategies for quantum
//! channel estimation.
//!
//! A strategy feeds an input state through `N` queries of a parametrized
//! channel with `N-1` interleaved control operations. The quantum Fisher
//! information of the output is maximized by alternating exact updates of
//! the measurement operator, the input state, and the controls, with all
//! contractions carried out on a matrix product operator chain.

pub mod ansatz;
pub mod channels;
pub mod comb;
pub mod error;
pub mod linalg;
pub mod optimize;
pub mod qfi;
pub mod sdp;
pub mod serde_cmat;
pub mod tnet;

pub use error::{Error, Result};
