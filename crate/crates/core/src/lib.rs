//! Hierarchical null-space impedance control of a redundant scanning arm,
//! with intention-weighted mode blending and a closed-loop interaction
//! simulation.
//!
//! Numeric modules are generic over [`Real`]; the aliases below fix the
//! scalar for the common cases.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dynamics;
pub mod hierarchy;
pub mod intent;
pub mod minjerk;
pub mod scalar;
pub mod sim;
pub mod supervisor;

pub use scalar::Real;

pub type RobotModelF64 = dynamics::RobotModel<f64>;
pub type RobotModelF32 = dynamics::RobotModel<f32>;
pub type JointStateF64 = dynamics::JointState<f64>;
pub type JointStateF32 = dynamics::JointState<f32>;
pub type PoseF64 = dynamics::Pose<f64>;
pub type PoseF32 = dynamics::Pose<f32>;
pub type DecompositionF64 = hierarchy::HierarchyDecomposition<f64>;
pub type DecompositionF32 = hierarchy::HierarchyDecomposition<f32>;
pub type FactorsF64 = intent::Factors<f64>;
pub type FactorsF32 = intent::Factors<f32>;
pub type ImpedanceF64 = controller::ImpedanceParams<f64>;
pub type ImpedanceF32 = controller::ImpedanceParams<f32>;
pub type TargetsF64 = controller::TaskTargets<f64>;
pub type TargetsF32 = controller::TaskTargets<f32>;
pub type SupervisorF64 = supervisor::SupervisorState<f64>;
pub type SupervisorF32 = supervisor::SupervisorState<f32>;
