//! Demonstrations, training, model files and recognition evaluation.

pub mod demo;
pub mod model_file;
pub mod recognition;
pub mod train;

pub use demo::{load_demos, record_scripted, DemoMeta, Demonstration, Recorder, ScriptedOptions};
pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use recognition::{aliased_corpus, evaluate, precision_recall, template_model, Corpus, CorpusConfig};
pub use train::{train, PolicyController, TrainConfig, TrainedModel};
