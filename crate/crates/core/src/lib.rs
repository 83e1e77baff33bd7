//! Pixel-corruption inpainting with a semi-super-resolution GAN.
//!
//! The crate carries its own small numeric stack: dense [`Tensor`]s, an
//! eager reverse-mode [`Graph`], and [`Adam`]. On top of it sit the
//! convolutional [`layers`], the generator/discriminator pair in [`model`],
//! the corruption procedure, the adversarial losses, NMSE evaluation, image
//! I/O, and the training harness with checkpointing.

pub mod adam;
pub mod checkpoint;
pub mod corruption;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod param;
pub mod rng;
pub mod tensor;
pub mod training;

pub use adam::{Adam, AdamState};
pub use corruption::CorruptionMask;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Mode, Pass};
pub use losses::LossReport;
pub use metrics::{nmse, nmse_dataset, NmseResult};
pub use model::{
    build_discriminator, build_generator, Discriminator, DiscriminatorConfig, Generator,
    GeneratorConfig, Network,
};
pub use param::{ParamId, ParamStore};
pub use rng::Rng;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use tensor::{ElementwiseOp, Init, Operand, Scalar, Tensor};
pub use training::{lr_at_epoch, TrainConfig, Trainer};
