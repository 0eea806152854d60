//! Pair datasets: manifests with absolute poses, synthetic scenes and splits.

pub mod manifest;
pub mod split;
pub mod synth;

pub use manifest::{format_pairs, load_pairs, parse_pairs, save_pairs, Convention, ImageRef, PairRecord};
pub use split::split;
pub use synth::{synth_scene, write_scene, CellMatch, Intrinsics, SynthConfig, SyntheticScene};
