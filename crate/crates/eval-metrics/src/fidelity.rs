//! Pixel-fidelity metrics: PSNR, SSIM, and masked edit consistency.

use shape_world::Image;

use crate::error::MetricError;

/// Reported PSNR for identical inputs (and the cap for near-identical
/// ones), in decibels.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM tile side.
pub const SSIM_WINDOW: usize = 8;

const SSIM_C1: f64 = 1e-4; // (k1 L)^2, k1 = 0.01, L = 1
const SSIM_C2: f64 = 9e-4; // (k2 L)^2, k2 = 0.03, L = 1

fn check_dims(a: &Image, b: &Image) -> Result<(), MetricError> {
    if a.size != b.size {
        return Err(MetricError::DimMismatch(a.size, b.size));
    }
    Ok(())
}

fn mse_to_db(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Peak signal-to-noise ratio in dB over unit-range images, capped at
/// 99 dB (identical inputs report the cap exactly).
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    Ok(mse_to_db(acc / a.data.len() as f64))
}

/// PSNR restricted to pixels outside `mask` (true = allowed to
/// change). The ground-truth target of an edit triplet scores the cap
/// by the triplet's locality invariant.
pub fn edit_consistency(edited: &Image, source: &Image, mask: &[bool]) -> Result<f64, MetricError> {
    check_dims(edited, source)?;
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for (i, &masked) in mask.iter().enumerate() {
        if masked {
            continue;
        }
        for ch in 0..3 {
            let d = edited.data[3 * i + ch] as f64 - source.data[3 * i + ch] as f64;
            acc += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(MetricError::MaskCoversAll);
    }
    Ok(mse_to_db(acc / n as f64))
}

struct TileStats {
    mean: f64,
    var: f64,
}

fn tile_stats(img: &Image, ch: usize, row0: usize, col0: usize) -> TileStats {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut sum = 0.0f64;
    for r in row0..row0 + SSIM_WINDOW {
        for c in col0..col0 + SSIM_WINDOW {
            sum += img.data[(r * img.size + c) * 3 + ch] as f64;
        }
    }
    let mean = sum / n;
    let mut var = 0.0f64;
    for r in row0..row0 + SSIM_WINDOW {
        for c in col0..col0 + SSIM_WINDOW {
            let d = img.data[(r * img.size + c) * 3 + ch] as f64 - mean;
            var += d * d;
        }
    }
    TileStats { mean, var: var / n }
}

fn tile_cov(a: &Image, b: &Image, ch: usize, row0: usize, col0: usize, ma: f64, mb: f64) -> f64 {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut cov = 0.0f64;
    for r in row0..row0 + SSIM_WINDOW {
        for c in col0..col0 + SSIM_WINDOW {
            let i = (r * a.size + c) * 3 + ch;
            cov += (a.data[i] as f64 - ma) * (b.data[i] as f64 - mb);
        }
    }
    cov / n
}

/// Structural similarity over non-overlapping 8x8 tiles, averaged
/// across tiles and channels. Symmetric in its arguments; identical
/// images score exactly 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    if a.size < SSIM_WINDOW {
        return Err(MetricError::TooSmallForWindow(a.size, SSIM_WINDOW));
    }
    let tiles = a.size / SSIM_WINDOW;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for ch in 0..3 {
        for tr in 0..tiles {
            for tc in 0..tiles {
                let (r0, c0) = (tr * SSIM_WINDOW, tc * SSIM_WINDOW);
                let sa = tile_stats(a, ch, r0, c0);
                let sb = tile_stats(b, ch, r0, c0);
                let cov = tile_cov(a, b, ch, r0, c0, sa.mean, sb.mean);
                let num = (2.0 * sa.mean * sb.mean + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (sa.mean * sa.mean + sb.mean * sb.mean + SSIM_C1) * (sa.var + sb.var + SSIM_C2);
                acc += num / den;
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use shape_world::{gen_scene, make_edit, render};

    fn constant_image(size: usize, v: f32) -> Image {
        Image { size, data: vec![v; size * size * 3] }
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let img = render(&gen_scene(1));
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_closed_form_twenty_db() {
        // Uniform offset of 0.1 gives MSE 0.01 -> 20 dB, up to f32
        // rounding of the 0.1 step itself.
        let a = constant_image(32, 0.4);
        let b = constant_image(32, 0.5);
        let db = psnr(&a, &b).unwrap();
        assert!((db - 20.0).abs() < 1e-5, "got {db}");
    }

    #[test]
    fn psnr_black_vs_white_is_zero() {
        let a = constant_image(32, 0.0);
        let b = constant_image(32, 1.0);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_dim_mismatch_errors() {
        let a = constant_image(32, 0.0);
        let b = constant_image(64, 0.0);
        assert!(matches!(psnr(&a, &b), Err(MetricError::DimMismatch(32, 64))));
    }

    #[test]
    fn ssim_self_is_one() {
        let img = render(&gen_scene(4));
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric() {
        let a = render(&gen_scene(8));
        let b = render(&gen_scene(9));
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_checkerboard_inverse_is_negative() {
        let size = 32;
        let mut data = vec![0.0f32; size * size * 3];
        for r in 0..size {
            for c in 0..size {
                let v = ((r + c) % 2) as f32;
                for ch in 0..3 {
                    data[(r * size + c) * 3 + ch] = v;
                }
            }
        }
        let a = Image { size, data };
        let inv = Image { size, data: a.data.iter().map(|v| 1.0 - v).collect() };
        assert!(ssim(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = constant_image(4, 0.5);
        assert!(matches!(ssim(&a, &a), Err(MetricError::TooSmallForWindow(4, 8))));
    }

    #[test]
    fn edit_consistency_caps_on_ground_truth() {
        for seed in 0..100 {
            let scene = gen_scene(seed);
            let t = make_edit(&scene, seed + 1);
            let src = render(&t.source);
            let tgt = render(&t.target);
            assert_eq!(edit_consistency(&tgt, &src, &t.edit_mask).unwrap(), PSNR_CAP_DB);
        }
    }

    #[test]
    fn edit_consistency_low_for_unrelated_image() {
        let scene = gen_scene(17);
        let t = make_edit(&scene, 18);
        let src = render(&t.source);
        let other = render(&gen_scene(4242));
        let db = edit_consistency(&other, &src, &t.edit_mask).unwrap();
        assert!(db < 12.0, "unrelated image scored {db} dB");
    }

    #[test]
    fn edit_consistency_rejects_full_mask() {
        let img = constant_image(32, 0.5);
        let mask = vec![true; 32 * 32];
        assert!(matches!(
            edit_consistency(&img, &img, &mask),
            Err(MetricError::MaskCoversAll)
        ));
    }
}
