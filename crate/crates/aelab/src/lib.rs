//! A desk-scale laboratory for convolutional autoencoders: deterministic
//! and variational models trained on small image datasets, ex-post
//! density estimators over their latent spaces, and Fréchet-distance
//! scoring of the resulting samplers.

pub mod checkpoint;
pub mod container;
pub mod data;
pub mod density;
pub mod error;
pub mod frechet;
pub mod gradcheck;
pub mod guide;
pub mod harness;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
