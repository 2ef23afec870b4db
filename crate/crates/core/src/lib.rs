//! Single-shot global localization of a forward-facing camera in a semantic
//! instance map.
//!
//! Pipeline: cluster query instances, pair every query instance with every
//! same-class map instance, link mutually consistent candidate pairs into a
//! consistency graph, and read correspondence sets off its maximum cliques.
//! Each clique yields a refined 3-DOF pose that is verified by counting the
//! query instances it explains.

pub mod baselines;
pub mod camera;
pub mod consistency;
pub mod descriptor;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod mcp;
pub mod pairpose;
pub mod synthworld;
pub mod util;
pub mod worldmodel;

pub use camera::{CameraModel, PixelBox, Pose2D};
pub use error::{Error, Result};
pub use worldmodel::{MapInstance, QueryImage, QueryInstance, SemanticClass, SemanticMap};
