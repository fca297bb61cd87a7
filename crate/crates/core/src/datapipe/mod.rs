//! Dataset container, preprocessing, online augmentation and mini-batch composition.

mod augment;
mod batch;
mod container;
mod guard;
mod preprocess;

pub use augment::{augment, augment_image, augment_pose, AugmentConfig, AugmentParams, CropScale};
pub use batch::{
    compose_batch, iterations_per_epoch, synthetic_batch, BatchComposition, BatchItem, BatchSpec, Domain,
    INPUT_VIEW, TARGET_VIEW,
};
pub use container::{Dataset, DatasetHeader, DomainFlags, Record, Split, CONTAINER_VERSION, HEADER_LEN, MAGIC, NO_RANK};
pub use guard::LabelGuard;
pub use preprocess::{preprocess, CropSpec};
