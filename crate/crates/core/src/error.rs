// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Two points that should be separated coincide, or propagation runs
    /// against the layer normal.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("distance {distance} m is below the 1 m reference")]
    BelowReferenceDistance { distance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rank deficiency, eigen failure or a non-finite intermediate.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}
