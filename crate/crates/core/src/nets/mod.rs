//! The encoder, mapper, pose head, view decoder and discriminator.
//!
//! All five share one [`ParamStore`]; a [`Ctx`] places the parameters a pass
//! needs on a fresh autodiff tape and decides which of them receive gradients.

mod checkpoint;
mod layers;
mod model;
mod store;

pub use checkpoint::{Checkpoint, CheckpointEntry, EntryKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{BatchNorm, Conv, ConvTranspose, Init, Linear, ResidualConv, ResidualDense};
pub use model::{Decoder, Discriminator, Encoder, Mapper, Model, NetConfig, PoseHead, RouteTracer};
pub use store::{apply_norm_updates, Ctx, Mode, Net, NormUpdate, ParamEntry, ParamId, ParamStore, PartitionReport, Role};
