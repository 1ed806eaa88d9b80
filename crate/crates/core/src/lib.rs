//! Deformation-aware lossy image compression.
//!
//! A codec is wrapped in an alternating optimization: compress the current
//! deformed image, then re-estimate the smooth deformation that warps the
//! input onto the compressed result. The distortion being minimized is the
//! deformation-aware SSD ([`dassd`]), which forgives small smooth
//! displacements that plain SSD punishes.

pub mod codec;
pub mod dassd;
pub mod driver;
pub mod error;
mod filter;
pub mod fixtures;
pub mod flow;
pub mod image;
pub mod warp;
pub mod wavelet;
pub mod weights;

pub use codec::{compress_to_budget, CodecHandle, CodecKind, CompressResult, ExternalCodec, RateTarget};
pub use dassd::{dassd, dassd_sweep, dassd_with_hint, DassdReport};
pub use driver::{baseline, run, BaselineOutput, CodecPreset, RateMode, RateSchedule, RunConfig, RunOutput, RunReport, RunTrace};
pub use error::{Error, Result};
pub use flow::{estimate_flow, flow_energy, FlowEnergy, FlowField, FlowParams};
pub use image::{load_image, luminance, save_image, ssd, Image, MetricsReport};
pub use warp::warp;
pub use weights::{build_weight_map, edge_map, WeightMap};
