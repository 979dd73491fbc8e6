//! voxseg-core — volumetric image-segmentation toolkit.
//!
//! Delineates high-uptake lesions in dense 3D scalar volumes using six
//! methods that combine intensity and spatial information in different ways:
//!
//! - [`clustering`] — K-Means, Gaussian mixture EM, Fuzzy C-Means and a
//!   spatial-distance-weighted FCM variant on voxel intensities, with the
//!   most intense clusters selected as the lesion label.
//! - [`dictseg`] — a patch dictionary of intensity/label pairs seeded by
//!   label-similarity clustering and refined by vector quantization.
//! - [`cnn`] — a small 3D convolutional network trained from scratch with
//!   AdaGrad, applied patch-wise and stitched back into a full volume.
//!
//! Around these sit [`preprocess`] (sharpness-gated Gaussian smoothing),
//! [`morphology`] (binary opening/closing label cleanup), [`metrics`]
//! (overlap and surface-distance evaluation), [`phantom`] (deterministic
//! synthetic test volumes with exact ground truth) and [`pipeline`]
//! (config-driven end-to-end runs with manifests and k-fold splitting).

pub mod clustering;
pub mod cnn;
pub mod dictseg;
mod error;
pub mod io;
pub mod metrics;
pub mod morphology;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask3, Patch3, Volume3};
