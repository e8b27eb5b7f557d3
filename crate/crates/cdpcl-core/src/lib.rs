//! Calibration-based dual prototypical contrastive learning at desk scale:
//! prototype banks, uncertainty/hard-weight calibration, the contrastive and
//! segmentation losses, a toy segmentation network and trainer, a procedural
//! multi-domain dataset, and mIoU/discrepancy reporting.

pub mod calibration;
pub mod error;
pub mod losses;
pub mod numerics;
pub mod evalreport;
pub mod protobank;
pub mod segtrain;
pub mod selftest;
pub mod synthdomains;

pub use error::{CdpclError, Result};
pub use numerics::{Graph, Tensor, Var};
pub use protobank::{ClassFeatures, LabelBatch, PrototypeBank, IGNORE_INDEX};
