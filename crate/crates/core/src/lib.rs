//! Regularized data-driven predictive control.
//!
//! The crate builds trajectory data matrices, fits least-squares multistep
//! predictors, evaluates the cost a regularizer attributes to a single
//! trajectory (in closed form and by direct optimization over the generator
//! vector), solves the resulting control problems and constructs the
//! implicit predictor maps those problems induce.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod data;
pub mod error;
pub mod fixtures;
pub mod implicit;
pub mod io;
pub mod linalg;
pub mod ocp;
pub mod predictors;
pub mod qp;
pub mod regularizers;

pub use data::{
    affine_rank_report, build_from_columns, build_hankel, build_hankel_state, rank_report, sample_state_columns,
    simulate, DataMatrix, DataMode, Layout, RankReport, SystemModel, TrajectoryTuple,
};
pub use error::{DpcError, Result};
pub use implicit::{ImplicitPredictorMap, MapVariant, TerminalWeights, VerificationReport};
pub use linalg::{KktSolution, LqFactors, ProjectorPair, DEFAULT_TOL};
pub use ocp::{
    Bounds, ConstraintSet, ControlObjective, DPCProblem, DPCSolution, FeasibilityReport, SolveStatus,
    TerminalConstraint,
};
pub use predictors::{AffineLeastSquaresPredictor, LeastSquaresPredictor, OffsetPredictor};
pub use regularizers::{Regularizer, TrajectoryCostBreakdown};

pub use nalgebra::{DMatrix, DVector};
