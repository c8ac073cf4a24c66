//! Rate-and-state friction spring-slider: simulation, synthetic data and
//! Bayesian inversion of the critical slip distance.

// negated float comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data_io;
pub mod inversion;
pub mod ode_solver;
pub mod rsf_model;
