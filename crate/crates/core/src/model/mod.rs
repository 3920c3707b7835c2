//! The Duet v2 scoring model and its checkpoint format.

mod checkpoint;
mod config;
mod duet;
mod interaction;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, parse_checkpoint, read_checkpoint, save_checkpoint,
    write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{parse_key_values, Activation, Combiner, ModelConfig};
pub use duet::{embedding_parameter_count, parameter_count, DuetV2, Pass};
pub use interaction::{build_interaction_matrix, InteractionMatrix};
