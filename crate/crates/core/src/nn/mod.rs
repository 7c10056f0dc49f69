//! Minimal differentiable model engine.

mod checkpoint;
mod layers;
mod model;
pub mod presets;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{LayerSpec, Parameter};
pub use model::{Architecture, Model};
pub use presets::Preset;
