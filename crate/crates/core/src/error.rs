//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong in this crate.
///
/// Variants are grouped so callers (notably the CLI) can distinguish
/// user-facing input problems from internal/numerical failures via
/// [`Error::is_user_error`].
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (extxyz, tables). `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Geometry that violates a documented precondition (non-orthorhombic
    /// cell, cutoff too large for minimum image, non-positive box length...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A species string with no entry in the relevant table/config.
    #[error("unknown species: {0}")]
    UnknownSpecies(String),

    /// Array/shape or configuration-value mismatch.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Checkpoint file problems (version, schema, shapes).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Dataset is missing labels required by the requested operation.
    #[error("missing labels: {0}")]
    MissingLabels(String),

    /// Training produced non-finite loss or gradients.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// MD produced non-finite or runaway state.
    #[error("dynamics instability: {0}")]
    Instability(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user input (files, configs, geometry),
    /// false for internal/numerical failures (divergence, instability).
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Divergence(_) | Error::Instability(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
