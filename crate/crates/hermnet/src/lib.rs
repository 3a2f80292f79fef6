//! Heterogeneous relational message passing networks for predicting
//! potential energies and atomic forces of molecular and periodic systems.

pub mod elements;
pub mod error;
pub mod graph;
pub mod io;
pub mod model;
pub mod structure;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
