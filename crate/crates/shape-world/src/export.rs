//! Dataset materialization: raster files and line-delimited records.
//!
//! Rasters are binary PPM (`P6`), chosen over compressed formats so
//! the bytes on disk are a direct, documented function of the pixel
//! values. Records are one JSON object per line.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::caption::caption;
use crate::edit::{make_edit, EditKind};
use crate::error::WorldError;
use crate::render::{render, Image};
use crate::scene::{gen_scene, SceneSpec};

/// Dataset partitions, disjoint by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Seed range owned by this split.
    pub fn seeds(self) -> Range<u64> {
        match self {
            Split::Train => 0..80_000,
            Split::Val => 80_000..90_000,
            Split::Test => 90_000..100_000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Quantize a unit-interval channel to a byte, round-to-nearest.
fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an image as binary PPM: `P6\n{w} {h}\n255\n` then RGB bytes
/// in row-major order.
pub fn write_ppm(path: &Path, img: &Image) -> Result<(), WorldError> {
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P6\n{} {}\n255\n", img.size, img.size)?;
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_byte(v)).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Read back a PPM written by [`write_ppm`].
pub fn read_ppm(path: &Path) -> Result<Image, WorldError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| WorldError::BadCaption(format!("ppm {}: {m}", path.display()));

    let header_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| bad("truncated header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("non-utf8 header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("P6") {
        return Err(bad("not a P6 file"));
    }
    let dims = lines.next().ok_or_else(|| bad("missing dimensions"))?;
    let mut it = dims.split_whitespace();
    let w: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad width"))?;
    let h: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad height"))?;
    if w != h {
        return Err(bad("expected a square image"));
    }
    if lines.next() != Some("255") {
        return Err(bad("expected maxval 255"));
    }
    let pixels = &bytes[header_end + 1..];
    if pixels.len() != w * h * 3 {
        return Err(bad("pixel payload size mismatch"));
    }
    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Image { size: w, data })
}

/// One exported sample's metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub scene: SceneSpec,
    pub caption_tokens: Vec<usize>,
    pub image_file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditRecord>,
}

/// Edit metadata attached to a sample when triplets are exported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditRecord {
    pub kind: EditKind,
    pub instruction_tokens: Vec<usize>,
    pub target_scene: SceneSpec,
    pub target_file: String,
    /// Run-length encoded mask: alternating counts of false/true runs.
    pub mask_rle: Vec<u32>,
}

pub fn mask_to_rle(mask: &[bool]) -> Vec<u32> {
    let mut rle = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in mask {
        if b == current {
            run += 1;
        } else {
            rle.push(run);
            current = b;
            run = 1;
        }
    }
    rle.push(run);
    rle
}

pub fn rle_to_mask(rle: &[u32], len: usize) -> Vec<bool> {
    let mut mask = Vec::with_capacity(len);
    let mut current = false;
    for &run in rle {
        mask.extend(std::iter::repeat(current).take(run as usize));
        current = !current;
    }
    debug_assert_eq!(mask.len(), len);
    mask
}

/// Materialize `count` samples of a split into `dir`: one PPM per
/// image plus a `records.jsonl` describing every sample. With
/// `with_edits`, each sample also carries an edit triplet and its
/// target raster.
pub fn export_dataset(
    dir: &Path,
    split: Split,
    count: u64,
    with_edits: bool,
) -> Result<(), WorldError> {
    fs::create_dir_all(dir)?;
    let mut records = BufWriter::new(File::create(dir.join("records.jsonl"))?);
    let range = split.seeds();
    let count = count.min(range.end - range.start);
    for seed in range.start..range.start + count {
        let scene = gen_scene(seed);
        let image_file = format!("{}_{seed:06}.ppm", split.name());
        write_ppm(&dir.join(&image_file), &render(&scene))?;

        let edit = if with_edits {
            let t = make_edit(&scene, seed);
            let target_file = format!("{}_{seed:06}_edit.ppm", split.name());
            write_ppm(&dir.join(&target_file), &render(&t.target))?;
            Some(EditRecord {
                kind: t.edit_kind,
                instruction_tokens: t.instruction,
                target_scene: t.target,
                target_file,
                mask_rle: mask_to_rle(&t.edit_mask),
            })
        } else {
            None
        };

        let record = SampleRecord {
            seed,
            caption_tokens: caption(&scene)?,
            scene,
            image_file,
            edit,
        };
        serde_json::to_writer(&mut records, &record)?;
        records.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufRead;

    #[test]
    fn splits_are_disjoint_and_cover_100k() {
        let (tr, va, te) = (Split::Train.seeds(), Split::Val.seeds(), Split::Test.seeds());
        assert_eq!(tr.end, va.start);
        assert_eq!(va.end, te.start);
        assert_eq!(te.end - tr.start, 100_000);
    }

    #[test]
    fn ppm_round_trips_exactly() {
        let img = render(&gen_scene(3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        // Palette channels are exactly 0.0 or 1.0, so quantization is
        // lossless for rendered scenes.
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_bytes_are_deterministic() {
        let img = render(&gen_scene(11));
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ppm"), dir.path().join("b.ppm"));
        write_ppm(&p1, &img).unwrap();
        write_ppm(&p2, &img).unwrap();
        assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
    }

    #[test]
    fn mask_rle_round_trips() {
        for seed in 0..50 {
            let scene = gen_scene(seed);
            let t = make_edit(&scene, seed);
            let rle = mask_to_rle(&t.edit_mask);
            assert_eq!(rle_to_mask(&rle, t.edit_mask.len()), t.edit_mask);
        }
    }

    #[test]
    fn export_writes_readable_records() {
        let dir = tempfile::tempdir().unwrap();
        export_dataset(dir.path(), Split::Val, 5, true).unwrap();
        let f = File::open(dir.path().join("records.jsonl")).unwrap();
        let mut n = 0;
        for line in std::io::BufReader::new(f).lines() {
            let rec: SampleRecord = serde_json::from_str(&line.unwrap()).unwrap();
            assert!(rec.scene.is_valid());
            assert!(dir.path().join(&rec.image_file).exists());
            let edit = rec.edit.expect("exported with edits");
            assert!(dir.path().join(&edit.target_file).exists());
            n += 1;
        }
        assert_eq!(n, 5);
    }
}
