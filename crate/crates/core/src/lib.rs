//! Exponential-disutility indifference pricing on finite event trees with
//! proportional transaction costs.
//!
//! Prices are expressed in discounted units throughout. The backward value
//! surface is built from piecewise-linear approximations of an
//! entropy-penalised convex hull, which bracket the exact value from above
//! (`Method::Upper`) and below (`Method::Lower`).

pub mod error;
pub mod market;
pub mod payoff;
pub mod pwl;
pub mod dual;
pub mod pricing;
pub mod strategy;

pub use error::{Error, Result};
