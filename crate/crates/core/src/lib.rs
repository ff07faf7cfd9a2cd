//! Spatiotemporal occupancy grid maps for navigation among moving obstacles.
//!
//! The crate covers the whole loop: a 2D simulator with moving actors, a
//! self-supervised point annotator, ground-truth SOGM generation, a
//! convolutional forecaster trained with masked losses, risk maps built
//! from forecasts, and an elastic-band planner in (x, y, t).

pub mod annotate;
pub mod config;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod net;
pub mod pipeline;
pub mod planner;
pub mod render;
pub mod risk;
pub mod sim;
pub mod sogm;
pub mod tensor;

pub use config::Config;
pub use error::{Error, Result};
pub use geom::Vec2;
pub use net::{NetConfig, Network};
pub use planner::Trajectory;
pub use risk::Srm;
pub use sim::{Frame, Label, Pose2};
pub use sogm::{Sogm, SogmParams};
pub use tensor::Tensor;
