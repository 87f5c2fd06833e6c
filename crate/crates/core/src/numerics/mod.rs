//! Dense linear algebra and gradient-based training primitives: tensors,
//! MLPs, a small transformer encoder with hand-derived backward passes,
//! Adam with decoupled weight decay, finite-difference gradient checking,
//! and the binary parameter container.

pub mod activation;
pub mod container;
pub mod embedding;
pub mod encoder;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod special;
pub mod tensor;

pub use activation::Activation;
pub use container::{ArchDescriptor, ParameterSet, TensorMeta, FORMAT_VERSION, MAGIC};
pub use embedding::Embedding;
pub use encoder::{masked_mean, masked_mean_backward, EncoderSpec, TransformerEncoder};
pub use gradcheck::{check_gradients, GradCheckReport, FD_REL_TOL, FD_STEP};
pub use linear::Linear;
pub use mlp::{Mlp, MlpSpec};
pub use optim::{AdamConfig, AdamState};
pub use tensor::{l2_distance, Tensor};
