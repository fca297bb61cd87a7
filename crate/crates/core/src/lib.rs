//! Semi-supervised pose estimation through a shared latent space.
//!
//! An encoder maps depth images into a latent space; a small mapper moves
//! latents of real images onto those of synthetic ones, and a pose head regresses
//! joints from that space. Unlabeled data contributes through view prediction
//! and adversarial distribution matching on the latents.

pub mod analysis;
pub mod config;
pub mod datapipe;
pub mod error;
pub mod image;
pub mod nets;
pub mod objectives;
pub mod optimizer;
pub mod pose;
pub mod seed;
pub mod toyhand;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
