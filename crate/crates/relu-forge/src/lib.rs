//! Constructive deep ReLU network toolkit.
//!
//! This crate materializes a family of explicit ReLU network constructions as
//! concrete weight matrices and biases: an exact network calculus (compose,
//! concatenate, extend, sum) over rational weights, gadget networks
//! (piecewise-linear encoders, square/product approximators, sorting and
//! order-statistic networks, bit extractors, cell indexers), an optimal
//! sparse-integer-vector codec realized as networks, multiscale
//! piecewise-polynomial approximation on b-adic partitions, and an end-to-end
//! pipeline that replicates approximants over prime bases and takes a median
//! to remove the unreliable region near cell boundaries. A benchmark harness
//! measures Lp errors and fits approximation-rate slopes.

pub mod error;
pub mod scalar;
pub mod net;
pub mod serialize;
pub mod gadgets;
pub mod sparse;
pub mod poly;
pub mod approx;
pub mod funcs;
pub mod pipeline;
pub mod cli;

pub use error::{Error, Result};
pub use net::{compose, concat, extend_identity, pad_depth, pad_width, sum_nets, AffineLayer, F64Net, ReluNet};
pub use scalar::{NumericMode, Rat, Scalar};
