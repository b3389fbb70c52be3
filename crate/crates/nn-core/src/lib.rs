//! Minimal deterministic f64 tensor math with hand-written backward passes
//! for the small layer menu used by the occupancy models.

pub mod adaln;
pub mod attention;
pub mod block;
pub mod checkpoint;
pub mod error;
pub mod ffn;
pub mod gradcheck;
pub mod linear;
pub mod ops;
pub mod optim;
pub mod param;
pub mod rng;
pub mod rope;
pub mod tensor;
pub mod timestep;

pub use adaln::AdaLnModulation;
pub use attention::{masked_attention, masked_attention_backward, AttentionMask, MultiHeadAttention};
pub use block::TransformerBlock;
pub use error::{NnError, Result};
pub use ffn::SwiGlu;
pub use gradcheck::grad_check;
pub use linear::Linear;
pub use optim::{AdamW, Ema};
pub use param::{Module, Param};
pub use rope::rope2d;
pub use tensor::Tensor;
pub use timestep::TimestepEmbedder;
