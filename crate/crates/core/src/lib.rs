//! Neural graph topic model.
//!
//! Graphs are generated by sampling a topic mixture, drawing substructures
//! from topic-specific latent Gaussians, and assembling them under a global
//! structure vector. The crate covers the graph primitives, datasets, the
//! network and its variational objective, training, controllable generation,
//! and the evaluation suite.

pub mod assembly;
pub mod autograd;
pub mod data;
pub mod eval;
pub mod generation;
pub mod error;
pub mod graph;
pub mod net;
pub mod objectives;
pub mod training;

pub use assembly::{AssemblyMode, GenerationTrace, UnionRule};
pub use data::GraphSet;
pub use error::{Error, Result};
pub use eval::{ClassifierProbe, MetricReport};
pub use generation::{Generator, SweepReport};
pub use graph::{Graph, StructuralProfile};
pub use net::{NetConfig, NgtmModel};
pub use training::{Checkpoint, TrainConfig};
