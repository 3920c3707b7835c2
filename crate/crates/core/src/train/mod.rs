//! Pairwise training: loss, minibatches, the Adam loop and bagging.

mod loss;
mod sampling;
mod trainer;

pub use loss::{
    ranknet_loss, ranknet_loss_grad, ranknet_loss_node, softmax_pair_loss, DEFAULT_SIGMA,
};
pub use sampling::{
    make_bagging_plan, BagMember, BaggingPlan, FileSource, MemorySource, SampleMode, SampleStream,
    TripleSource, DEFAULT_BAG_SIZE, SHUFFLE_BLOCK,
};
pub use trainer::{
    dropout_rng, encode_triple, minibatch_loss, train_bagged, train_model, EncodedTriple,
    StepRecord, TrainConfig, TrainInputs, TrainReport,
};
