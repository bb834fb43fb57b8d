//! The fixed eight-color palette.
//!
//! Colors sit at the corners of the RGB cube, so every pair is at
//! least distance 1.0 apart in RGB space. That separation is what
//! lets downstream scorers quantize rendered pixels back to palette
//! entries with a wide rejection band.

/// Palette RGB values, in [0,1] per channel.
pub const PALETTE: [[f32; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
];

/// Color words, aligned with [`PALETTE`].
pub const COLOR_NAMES: [&str; 8] = [
    "black", "red", "green", "blue", "yellow", "magenta", "cyan", "white",
];

/// Index into [`PALETTE`].
pub type ColorId = usize;
