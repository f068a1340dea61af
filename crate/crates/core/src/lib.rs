//! Core library for fingerprinting MU-MIMO Wi-Fi beamformers from their
//! compressed beamforming feedback.
//!
//! The pipeline has three legs:
//!
//! * [`codec`] converts channel matrices to beamforming matrices, Givens
//!   angles and quantized angle words, and back.
//! * [`dot11`] reads and writes VHT compressed beamforming action frames
//!   from classic pcap captures.
//! * [`chansim`] synthesizes multipath channels with per-device hardware
//!   impairments so labeled sounding datasets can be generated offline.
//!
//! On top of those, [`features`] turns angle records into stacked I/Q
//! tensors, [`net`] trains a small convolutional classifier with a spatial
//! attention block on them, [`dataset`] holds the on-disk record store and
//! the train/test split logic, [`study`] runs the quantization-error
//! study, and [`experiments`] wires records, splits and the classifier
//! together.

pub mod chansim;
pub mod codec;
pub mod dataset;
pub mod dot11;
pub mod experiments;
pub mod features;
pub mod net;
pub mod study;

pub use chansim::{BeamformeeProfile, CfrTensor, DeviceProfile, PathSet, Scenario, ScenarioConfig};
pub use codec::{AngleSetSlice, CfrSlice, QuantizedAngleSetSlice, VMatrixSlice};
pub use dataset::{DatasetHeader, DatasetRecord, Split, SplitSpec};
pub use dot11::{FeedbackFrame, VhtMimoControl};
pub use features::{FeatureTensor, VMatrix};
pub use net::{LabeledSet, ModelParams, NetConfig, TrainOptions};
