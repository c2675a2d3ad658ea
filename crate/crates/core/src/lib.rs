// SPDX-License-Identifier: Apache-2.0

//! Simulation of stacked intelligent metasurface (SIM) transceivers.
//!
//! A SIM is a stack of thin programmable layers placed in front of a small
//! antenna array. Each layer re-radiates the field it receives with a
//! tunable phase shift, so the stack as a whole applies a matrix to the
//! transmitted (or received) signals in the wave domain. The crate models
//! the geometry, the layer-to-layer diffraction, channel generation and two
//! uses of such a stack: multi-user downlink precoding and direction-of-arrival
//! classification.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod channel;
pub mod doa;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod propagation;
pub mod units;

pub use error::{Error, Result};
