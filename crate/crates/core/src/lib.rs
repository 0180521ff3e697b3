//! Meta-reinforcement-learning workbench for radar tracker hyperparameters.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: synthetic multi-room radar world producing Range-Angle Images
//!   (RAIs) with ground truth.
//! - [`tracker`]: CA-CFAR, DBSCAN clustering, gating/association and an
//!   unscented Kalman filter, parameterised by the agent's action.
//! - [`reward`]: the per-frame tracking reward.
//! - [`nn`]: a small reverse-mode autodiff stack, MLPs and Adam.
//! - [`agent`]: SAC actor and bootstrapped multi-head critic with a Gaussian
//!   context prior drawn from RAI statistics.
//! - [`meta`]: meta-training over rooms, comparators, baseline and evaluation.
//! - [`ood`]: ensemble-dispersion scoring and F1 evaluation.
//! - [`checkpoint`]: versioned named-block binary container.

pub mod agent;
pub mod assignment;
pub mod checkpoint;
pub mod error;
pub mod meta;
pub mod nn;
pub mod ood;
pub mod reward;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
