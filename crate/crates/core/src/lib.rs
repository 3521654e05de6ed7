//! Geometry, simulation, labeling, dataset I/O and evaluation for
//! polar accessible-depth estimation.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod sim;
pub mod synth;

pub use error::{DatasetError, EvalError, GeometryError, OracleError, SimError, SynthError};
pub use geometry::{CadProfile, Category, Point3, PointFrame, PointTag, PolarGridSpec, PolarIndex, Pose};
