//! Function-level smart contract intent detection: Solidity function
//! extraction, byte-level BPE, a small masked-language-model encoder, and a
//! masked BiLSTM multi-label classifier trained with focal loss.

pub mod checkpoint;
pub mod classifier;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod extractor;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use classifier::{ClassifierConfig, ClassifierParams, ContractMatrix, FocalParams, PredictionVector};
pub use dataset::{DatasetSplit, Intent, IntentLabelVector, SourceContract, NUM_CLASSES};
pub use encoder::{EncoderConfig, EncoderParams, HiddenMatrix};
pub use error::{Error, Result};
pub use extractor::FunctionUnit;
pub use metrics::{ConfusionCounts, MetricReport};
pub use optim::OptimizerState;
pub use tensor::{NamedTensors, Tensor};
pub use tokenizer::{TokenSequence, Vocabulary};
pub use trainer::{TrainConfig, TrainOutcome};
