//! Eigenvalue GARCH (λ-GARCH) modelling: spectral targeting and joint
//! quasi-maximum-likelihood estimation, sandwich inference, simulation and
//! Value-at-Risk backtesting.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimation;
pub mod harness;
pub mod inference;
pub mod model;
pub mod panel;
pub mod risk;
pub mod spectral;
pub mod timing;

pub use error::{Error, Result};
pub use panel::ReturnPanel;
