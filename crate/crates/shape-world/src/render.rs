//! Hard rasterization of scenes into `[0,1]` RGB buffers.

use crate::palette::PALETTE;
use crate::scene::{Kind, Object, SceneSpec};

/// Flat RGB image, row-major `[row][col][channel]`, values in [0,1].
///
/// Kept as a plain struct (not a tensor) so the dataset layer carries
/// no gradient machinery; training code converts at the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.size + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// True when `(row, col)` lies inside the object's footprint.
///
/// Circles use the inclusive disk test; squares are axis-aligned with
/// half-side `r`; triangles point up, apex at `center - (r, 0)`, with
/// half-width growing by one pixel per two rows.
pub fn covers(o: &Object, canvas: usize, row: usize, col: usize) -> bool {
    let r = o.radius(canvas) as i64;
    let dr = row as i64 - o.center.0 as i64;
    let dc = col as i64 - o.center.1 as i64;
    match o.kind {
        Kind::Circle => dr * dr + dc * dc <= r * r,
        Kind::Square => dr.abs() <= r && dc.abs() <= r,
        Kind::Triangle => {
            let down = dr + r; // rows below the apex
            (0..=2 * r).contains(&down) && 2 * dc.abs() <= down
        }
    }
}

/// Rasterize a scene. No anti-aliasing: every pixel is exactly one
/// palette color, so rendering twice is bit-identical by construction.
pub fn render(scene: &SceneSpec) -> Image {
    let s = scene.size;
    let bg = PALETTE[scene.background];
    let mut data = vec![0.0f32; s * s * 3];
    for row in 0..s {
        for col in 0..s {
            let mut color = bg;
            for o in &scene.objects {
                if covers(o, s, row, col) {
                    color = PALETTE[o.color];
                    break;
                }
            }
            let i = (row * s + col) * 3;
            data[i..i + 3].copy_from_slice(&color);
        }
    }
    Image { size: s, data }
}

/// Boolean footprint of one object, dilated by `dilate` pixels
/// (Chebyshev disk), as a flat row-major mask.
pub fn footprint_mask(o: &Object, canvas: usize, dilate: usize) -> Vec<bool> {
    let mut mask = vec![false; canvas * canvas];
    let d = dilate as i64;
    for row in 0..canvas {
        for col in 0..canvas {
            'probe: for pr in -d..=d {
                for pc in -d..=d {
                    let rr = row as i64 + pr;
                    let cc = col as i64 + pc;
                    if rr >= 0
                        && cc >= 0
                        && (rr as usize) < canvas
                        && (cc as usize) < canvas
                        && covers(o, canvas, rr as usize, cc as usize)
                    {
                        mask[row * canvas + col] = true;
                        break 'probe;
                    }
                }
            }
        }
    }
    mask
}
