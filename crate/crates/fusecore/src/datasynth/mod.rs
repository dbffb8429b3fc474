//! Deterministic synthetic video corpus: a shape-physics simulator, a
//! rasterizer, a rule-based narrator, and dataset emission with
//! seed-disjoint splits.

pub mod emit;
pub mod narrate;
pub mod render;
pub mod sim;

pub use emit::{emit_dataset, read_records, read_video, write_video, DatasetConfig, Record, SeedRange};
pub use narrate::{make_mcq, narrate, Mcq, Narration};
pub use render::{render, render_with_masks};
pub use sim::{simulate, MicroWorld, Simulation};
