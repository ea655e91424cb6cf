//! A small from-scratch CNN library in `f64` built around the N-fold
//! superposition (NS) layer: split `t` feature maps into `N` blocks, take the
//! β-weighted sum across blocks and feed the result, repeated `N` times, to
//! the dense head.
//!
//! Layers, losses and optimizers are hand-written with exact backward
//! passes; [`gradcheck`] audits them against finite differences.
//! [`minima`] builds the stationarity systems of a toy network and compares
//! their solution spaces with and without NS. [`train`] runs repeated-trial
//! MNIST / CIFAR-10 experiments from a JSON [`config`].

pub mod checkpoint;
pub mod cli;
pub mod closed_form;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod minima;
pub mod model;
pub mod nsfold;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
