//! The two-stage dehazing network.

mod blocks;
mod config;
mod network;
mod tsnet;

pub use blocks::{Alm, Iffe, Msfm, MsfmTrace, Msplck};
pub use config::{Ablation, Branch, ModelConfig, Variant};
pub use network::{Head, StageNetwork};
pub use tsnet::{param_count, Stage1Out, TsNet, HI, LO};
