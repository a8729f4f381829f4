//! Grasp detection geometry, manipulation relationship reasoning and
//! sequential grasp planning for cluttered object stacks.
//!
//! The crate covers the deterministic parts of a detect-reason-grasp
//! pipeline: oriented grasp rectangles and their anchor encoding, training
//! loss references, detection post-processing, relationship graphs and grasp
//! ordering, pixel-to-robot execution geometry, evaluation metrics, a dataset
//! format, and a seeded simulator that stands in for the network and the robot.

pub mod anchor;
pub mod dataset;
pub mod evaluation;
pub mod execution;
pub mod geometry;
pub mod loss;
pub mod perception;
pub mod plan;
pub mod predictions;
pub mod relation;
pub mod sim;
