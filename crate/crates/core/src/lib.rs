// `!(x < y)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod approx;
pub mod bench;
pub mod bo;
pub mod duel;
pub mod error;
pub mod gibbs;
pub mod kernel;
pub mod normal;
pub mod predictive;
pub mod skew;
pub mod truncnorm;

pub use error::{Error, Result};
