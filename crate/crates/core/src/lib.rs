//! Voxel-wise semantic captioning from linear brain encoders.
//!
//! The pipeline runs entirely at the embedding boundary: given image
//! embeddings paired with voxel activations it fits a linear encoder
//! ([`encoder`]), turns each voxel's weight into its optimal embedding,
//! pulls that embedding onto the natural-image manifold with a softmax
//! weighted sum over an image bank ([`projection`]), retrieves a caption
//! ([`caption_retrieval`]) and runs selectivity analyses ([`analysis`]).

pub mod analysis;
pub mod caption_retrieval;
pub mod encoder;
pub mod projection;
pub mod rng;
pub mod synth;
pub mod tensor_io;

pub(crate) mod linalg;

pub use tensor_io::{ActivationMatrix, CaptionTable, EmbeddingMatrix, Matrix, VoxelStats};
