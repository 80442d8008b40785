//! Shape from motion and shading on a cubic B-spline surface.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod lsq;
pub mod motion;
pub mod optimizer;
pub mod shading;
pub mod surface;
pub mod synth;

pub use config::{RunConfig, SynthConfig};
pub use error::{Error, Result};
pub use eval::{EvalReport, Similarity};
pub use image::GrayImage;
pub use motion::{FeatureTemplate, Pose, PoseSet};
pub use optimizer::{imls_run, ImlsResult, OptimizerConfig};
pub use shading::{ImageStack, PhotometricStereo, ShadingParams};
pub use surface::{BsplineSurface, CoeffKind, CoeffMatrix, ControlGrid, KnotVector, Selection, UvGrid, UvSamples};
