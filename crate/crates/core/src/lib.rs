//! Simulation stack for a cable-driven dual-segment flexible endoscope under
//! image-based visual servoing.
//!
//! The crate is organized around the closed control loop:
//!
//! 1. [`kinematics`] — constant-curvature geometry: actuator/configuration
//!    maps, tip and camera transforms, numeric Jacobians, damped-least-squares
//!    inverse kinematics.
//! 2. [`camera`] — pinhole projection and the interaction matrix relating
//!    camera motion to pixel-feature motion.
//! 3. [`estimator`] — offline ± perturbation initialization of the
//!    actuator-to-camera Jacobian and its online blending with the analytic
//!    model.
//! 4. [`qp`] — dense convex QP solver with KKT-certified solutions.
//! 5. [`mpc`] — the visual model-predictive controller with an internal-model
//!    reference loop, condensed to a QP each tick.
//! 6. [`plant`] — ground-truth environment: perturbed geometry, simulated
//!    camera and tip sensor, target motion, disturbance injection.
//! 7. [`harness`] — scenario files, the closed-loop runner, metrics and
//!    trace export.
//!
//! All quantities are millimeters and radians; pixel coordinates are
//! real-valued.

pub mod camera;
pub mod estimator;
pub mod harness;
pub mod kinematics;
pub mod mpc;
pub mod plant;
pub mod qp;

pub use camera::{CameraIntrinsics, InteractionMatrix, PixelFeature};
pub use estimator::JacobianEstimate;
pub use kinematics::{ActuatorState, ConfigState, Pose, RobotGeometry};
pub use mpc::{MpcConfig, VisualMpc};
pub use plant::{Plant, PlantConfig, TargetProfile};
pub use qp::{QpProblem, QpSolution, QpSolver};
