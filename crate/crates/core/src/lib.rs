//! Recursive semi-supervised semantic segmentation.
//!
//! A segmentation network is first fit on a small pixel-labelled set, then
//! used to propose weak labels for a larger image-labelled set. Proposals are
//! refined with graph-based superpixels, selected by a human reviewer (or an
//! automatic gate), and folded back into training. The loop repeats until the
//! accepted set stops growing.
//!
//! Module map:
//!
//! * [`datamodel`]: manifests, class taxonomy, masks, image I/O, balancing.
//! * [`losses`]: pixel-averaged cross-entropy and soft dice regularizer.
//! * [`segnet`]: model backend contract, the default UNet, training, inference.
//! * [`fhseg`]: Felzenszwalb–Huttenlocher graph segmentation.
//! * [`weaklabel`]: refinement policies, candidates and the automatic gate.
//! * [`recursion`]: the stage 1/2/3 controller and experiment directory.
//! * [`review`]: the human-in-the-loop selection service and its HTTP API.
//! * [`metrics`]: Dice/IoU/precision/recall, aggregation and reports.
//! * [`synth`]: synthetic blob datasets for desk-scale runs.
//! * [`config`] and [`pipeline`]: experiment configuration and CLI commands.

pub mod config;
pub mod datamodel;
pub mod error;
pub mod fhseg;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod recursion;
pub mod review;
pub mod segnet;
pub mod synth;
pub mod util;
pub mod weaklabel;

pub use error::{Error, Result, ReviewError};
