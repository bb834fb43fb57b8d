//! Condition assembly and the connector between the language model
//! and the generator.
//!
//! The language model exposes two kinds of last-layer states: the
//! multimodal (image and text) positions and the learnable query
//! positions. This crate stacks either or both into one condition
//! sequence and maps it through a small bidirectional transformer into
//! the tokens the diffusion model cross-attends to.

mod condition;
mod connector;
mod error;

pub use condition::{assemble_condition, ConditionBundle, ConditionMode};
pub use connector::{Connector, ConnectorConfig};
pub use error::{BridgeError, BridgeResult};
