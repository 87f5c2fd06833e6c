//! Desk-scale implementation of a secret-based verifiable inference
//! protocol: seeded stand-in models, proxy-task and labeling-network
//! training, threshold calibration, adversarial provider strategies, and
//! three-party session simulation with secret rotation.

pub mod error;
pub mod attacks;
pub mod config;
pub mod corpus;
pub mod harness;
pub mod labeling;
pub mod models;
pub mod proxy;
pub mod verify;
pub mod decision;
pub mod numerics;

pub use error::{Result, SvipError};
