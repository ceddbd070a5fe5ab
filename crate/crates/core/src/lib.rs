//! Oblivious inference for quantized 1-D CNNs over secret sharing.
//!
//! Two parties (or three servers) evaluate a model owner's int8 network on a
//! data owner's feature vector without either side seeing the other's input.

pub mod dealer;
pub mod error;
pub mod model_io;
pub mod protocols;
pub mod qnn;
pub mod ring;
pub mod scheme;
pub mod sharing;
pub mod sim;
pub mod transport;

pub use error::{Error, Result};
