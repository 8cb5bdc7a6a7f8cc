pub mod backprop;
pub mod checkpoint;
pub mod data;
pub mod equiv;
pub mod error;
pub mod gradcheck;
pub mod interchange;
pub mod linalg;
pub mod optim;
pub mod registry;
pub mod semnet;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
