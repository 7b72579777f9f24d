pub mod auction;
pub mod chance;
pub mod dispatch;
pub mod error;
pub mod io;
pub mod model;
pub mod network;
pub mod online;
pub mod qp;
pub mod sim;
pub mod strategy;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
