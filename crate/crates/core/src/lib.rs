//! Certified fair training and global individual fairness verification for
//! small ReLU classifiers on tabular data.

pub mod autodiff;
pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod lp;
pub mod nn;
pub mod product;
pub mod property;
pub mod synth;
pub mod training;
pub mod verifier;

pub use error::{Error, Result};
