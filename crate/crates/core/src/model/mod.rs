//! The ResNet-34 classifier and its checkpoint format.

pub mod checkpoint;
pub mod layers;
mod resnet;

pub use checkpoint::{Checkpoint, HeadPolicy};
pub use resnet::{
    build_resnet34, ForwardTrace, ModelSpec, ResNet, ResidualBlock, ResidualBlockSpec, Shortcut,
    HEAD_BIAS, HEAD_WEIGHT, MIN_INPUT_SIZE,
};
