use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;

use crate::optimizer::SolveReport;
use crate::tree::{Node, Violation};

#[derive(Clone, Debug)]
pub enum Error {
    DimensionMismatch { expected: usize, found: usize },
    NotPositiveDefinite { min_eig: f64 },
    NotPsd { min_eig: f64 },
    InvalidTolerance,
    InvalidDepth(usize),
    InvalidInstance(Vec<Violation>),
    InvalidSubset { constraint: usize },
    DuplicateSubset { first: usize, second: usize },
    NotATree { first: usize, second: usize },
    NegativeEpsilon,
    EpsTooLarge { node: Node },
    NotStrictlyInterior { node: Node },
    InfeasibleTheta { node: Node },
    SingularTerm { node: Node },
    BoundaryTheta { node: Node },
    InvalidNoiseTree { node: Node },
    InvalidConfig(&'static str),
    NotConverged(Box<SolveReport>),
    SingularSlack { node: Node },
    SingularEnhancement { node: Node },
    LambdaNotPsd { node: Node, min_eig: f64 },
    GammaSingular { node: Node },
    JointCovSingular,
    InvalidSampleCount,
    UnsupportedDimension { m: usize },
    InvalidResolution,
}

impl Error {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::NotPsd { .. } => "NotPsd",
            Error::InvalidTolerance => "InvalidTolerance",
            Error::InvalidDepth(_) => "InvalidDepth",
            Error::InvalidInstance(_) => "InvalidInstance",
            Error::InvalidSubset { .. } => "InvalidSubset",
            Error::DuplicateSubset { .. } => "DuplicateSubset",
            Error::NotATree { .. } => "NotATree",
            Error::NegativeEpsilon => "NegativeEpsilon",
            Error::EpsTooLarge { .. } => "EpsTooLarge",
            Error::NotStrictlyInterior { .. } => "NotStrictlyInterior",
            Error::InfeasibleTheta { .. } => "InfeasibleTheta",
            Error::SingularTerm { .. } => "SingularTerm",
            Error::BoundaryTheta { .. } => "BoundaryTheta",
            Error::InvalidNoiseTree { .. } => "InvalidNoiseTree",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NotConverged(_) => "NotConverged",
            Error::SingularSlack { .. } => "SingularSlack",
            Error::SingularEnhancement { .. } => "SingularEnhancement",
            Error::LambdaNotPsd { .. } => "LambdaNotPsd",
            Error::GammaSingular { .. } => "GammaSingular",
            Error::JointCovSingular => "JointCovSingular",
            Error::InvalidSampleCount => "InvalidSampleCount",
            Error::UnsupportedDimension { .. } => "UnsupportedDimension",
            Error::InvalidResolution => "InvalidResolution",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NotPositiveDefinite { min_eig } => {
                write!(f, "matrix is not positive definite (min eigenvalue {min_eig:e})")
            }
            Error::NotPsd { min_eig } => {
                write!(f, "matrix is not positive semidefinite (min eigenvalue {min_eig:e})")
            }
            Error::InvalidTolerance => f.write_str("tolerances must be finite and non-negative"),
            Error::InvalidDepth(l) => write!(f, "tree depth {l} is invalid (need L >= 2)"),
            Error::InvalidInstance(v) => {
                write!(f, "instance violates {} constraint(s)", v.len())?;
                if let Some(first) = v.first() {
                    write!(f, "; first: {first}")?;
                }
                Ok(())
            }
            Error::InvalidSubset { constraint } => {
                write!(f, "constraint {constraint} has an empty or out-of-range subset")
            }
            Error::DuplicateSubset { first, second } => {
                write!(f, "constraints {first} and {second} name the same subset")
            }
            Error::NotATree { first, second } => {
                write!(f, "subsets of constraints {first} and {second} overlap without nesting")
            }
            Error::NegativeEpsilon => f.write_str("epsilon must be non-negative"),
            Error::EpsTooLarge { node } => {
                write!(f, "epsilon shrink makes the distortion at {node} non-positive-definite")
            }
            Error::NotStrictlyInterior { node } => {
                write!(f, "distortion at {node} is not strictly below the source covariance")
            }
            Error::InfeasibleTheta { node } => write!(f, "theta at {node} violates the chain constraints"),
            Error::SingularTerm { node } => write!(f, "objective term at {node} is singular"),
            Error::BoundaryTheta { node } => write!(f, "theta at {node} has no finite noise covariance"),
            Error::InvalidNoiseTree { node } => write!(f, "noise covariance at {node} is not admissible"),
            Error::InvalidConfig(what) => write!(f, "invalid solver configuration: {what}"),
            Error::NotConverged(r) => {
                write!(f, "solver did not converge (best value {:.12})", r.value_nats)
            }
            Error::SingularSlack { node } => write!(f, "slack at {node} is numerically singular"),
            Error::SingularEnhancement { node } => write!(f, "enhanced covariance at {node} is singular"),
            Error::LambdaNotPsd { node, min_eig } => {
                write!(f, "innovation covariance at {node} is not PSD (min eigenvalue {min_eig:e})")
            }
            Error::GammaSingular { node } => write!(f, "pair covariance at {node} is singular"),
            Error::JointCovSingular => f.write_str("joint noise covariance is singular"),
            Error::InvalidSampleCount => f.write_str("sample count must be positive"),
            Error::UnsupportedDimension { m } => write!(f, "operation requires m = 1 (got m = {m})"),
            Error::InvalidResolution => f.write_str("grid resolution must be positive and finite"),
        }
    }
}

impl core::error::Error for Error {}
