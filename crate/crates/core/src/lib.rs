//! Constrained convex optimisation by descent with approximate Lagrange
//! multipliers.
//!
//! The crate is split along the lines of the method:
//!
//! * [`problem`] holds the convex program, its Lagrangian and dual function,
//!   action sets and the Slater-based dual bound.
//! * [`queue`] provides multiplier/queue updates, the Skorokhod closed form and
//!   the continuity certificates that make scaled queues usable as multipliers.
//! * [`tracker`] turns any sequence of continuous decisions into a sequence of
//!   discrete actions with bounded cumulative deviation.
//! * [`descent`] implements action-set descent (direct search and
//!   Frank-Wolfe) with unsynchronised block schedules.
//! * [`solver`] composes the pieces into the classical and generalised
//!   max-weight / dual subgradient solvers and evaluates the approximation
//!   window on the running average.
//! * [`harness`] runs the built-in scenarios and writes trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod descent;
pub mod harness;
pub mod hull;
pub mod inner;
pub mod problem;
pub mod queue;
pub mod solver;
pub mod tracker;
mod vecops;

pub use descent::{DescentConfig, DescentEngine, SchedulePolicy, UpdateSchedule};
pub use harness::{HarnessError, ScenarioConfig, ScenarioId};
pub use problem::{
    ActionSet, Constraints, ConvexProblem, Curvature, GroundSet, ProblemError, ScalarFn, SeparableStructure,
    SlaterCertificate,
};
pub use queue::{IncrementLog, MultiplierState, QueueError};
pub use solver::{SolverError, SolverPreset, Trajectory};
pub use tracker::{SelectionRule, Tracker, TrackerError};
