//! Online iterative RLHF on finite synthetic environments.
//!
//! Every quantity the workflow touches (expected rewards, KL divergences,
//! the KL-regularized optimum) is computed exactly by enumeration, so the
//! algorithms can be checked as properties rather than by benchmark scores.
//!
//! - [`env`]: environments and the Bradley-Terry preference oracle
//! - [`reward`]: BT reward fitting, the pairwise preference model, length-bias audit
//! - [`policy`]: softmax policies, the Gibbs optimum, DPO, best/worst-of-n
//! - [`iterative`]: the practical online loop with rejection-sampled pairs
//! - [`linear`]: information-gain exploration in the linear-reward case
//! - [`harness`]: configuration, persistence and seeded experiment runners

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod harness;
pub mod iterative;
pub mod linear;
pub mod numeric;
pub mod optim;
pub mod policy;
pub mod reward;
pub mod seeds;

pub use error::{LabError, Result};
