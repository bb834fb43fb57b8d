//! Procedural dataset of colored shapes with captions and edits.
//!
//! Scenes place one to three non-overlapping shapes from a fixed
//! eight-color palette on a square canvas. Everything is a pure
//! function of integer seeds: generation, rasterization, captioning,
//! and edit derivation all reproduce bit-for-bit, and the train, val,
//! and test splits are disjoint seed ranges. That makes every
//! downstream training run replayable without storing the data.

mod caption;
mod edit;
mod error;
mod export;
mod palette;
mod render;
mod scene;

pub use caption::{
    caption, caption_text, parse_caption, relation_between, ParsedCaption, Relation, Vocab, WORDS,
};
pub use edit::{
    make_edit, parse_instruction, Direction, EditInstruction, EditKind, EditTriplet, MASK_DILATION,
};
pub use error::WorldError;
pub use export::{
    export_dataset, mask_to_rle, read_ppm, rle_to_mask, write_ppm, EditRecord, SampleRecord, Split,
};
pub use palette::{ColorId, COLOR_NAMES, PALETTE};
pub use render::{covers, footprint_mask, render, Image};
pub use scene::{
    gen_scene, gen_scene_sized, Kind, ObjSize, Object, SceneSpec, DEFAULT_SIZE, MAX_OBJECTS,
};
