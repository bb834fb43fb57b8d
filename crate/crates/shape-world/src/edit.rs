//! Edit triplets: instruction-conditioned scene transformations.
//!
//! An edit changes exactly one thing about a scene. The mask marks
//! where pixels are allowed to change (affected footprints dilated by
//! two pixels); outside it, source and target render identically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caption::Vocab;
use crate::error::WorldError;
use crate::palette::{ColorId, COLOR_NAMES};
use crate::render::footprint_mask;
use crate::scene::{in_bounds, sample_object, separated, Kind, Object, SceneSpec, MAX_OBJECTS};

/// Pixels of dilation applied to affected footprints.
pub const MASK_DILATION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EditKind {
    Recolor,
    Add,
    Remove,
    Move,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    fn word(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    /// Row/col displacement for a positive step.
    fn offset(self, step: i64) -> (i64, i64) {
        match self {
            Direction::Up => (-step, 0),
            Direction::Down => (step, 0),
            Direction::Left => (0, -step),
            Direction::Right => (0, step),
        }
    }
}

/// A source scene, an instruction, the edited target, and the pixel
/// mask within which they may differ.
#[derive(Debug, Clone, PartialEq)]
pub struct EditTriplet {
    pub source: SceneSpec,
    pub instruction: Vec<usize>,
    pub target: SceneSpec,
    /// Row-major `size*size` booleans; true where change is allowed.
    pub edit_mask: Vec<bool>,
    pub edit_kind: EditKind,
}

/// Structured reading of an edit instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditInstruction {
    pub kind: EditKind,
    pub color: ColorId,
    pub shape: Kind,
    /// New color, for recolor instructions.
    pub to_color: Option<ColorId>,
    /// Step direction, for move instructions.
    pub direction: Option<Direction>,
}

fn move_step(canvas: usize) -> i64 {
    (4 * canvas / 32) as i64
}

fn moved(o: &Object, dir: Direction, canvas: usize) -> Option<Object> {
    let (dr, dc) = dir.offset(move_step(canvas));
    let row = o.center.0 as i64 + dr;
    let col = o.center.1 as i64 + dc;
    if row < 0 || col < 0 {
        return None;
    }
    let candidate = Object { center: (row as usize, col as usize), ..*o };
    in_bounds(&candidate, canvas).then_some(candidate)
}

fn feasible_moves(scene: &SceneSpec) -> Vec<(usize, Direction)> {
    let mut out = Vec::new();
    for (i, o) in scene.objects.iter().enumerate() {
        for dir in Direction::ALL {
            if let Some(cand) = moved(o, dir, scene.size) {
                let clear = scene
                    .objects
                    .iter()
                    .enumerate()
                    .all(|(j, other)| j == i || separated(other, &cand, scene.size));
                if clear {
                    out.push((i, dir));
                }
            }
        }
    }
    out
}

fn free_colors(scene: &SceneSpec) -> Vec<ColorId> {
    (0..8)
        .filter(|c| *c != scene.background && scene.objects.iter().all(|o| o.color != *c))
        .collect()
}

fn union_masks(a: &mut [bool], b: &[bool]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x |= y;
    }
}

fn encode_instruction(words: &[&str]) -> Vec<usize> {
    Vocab::standard()
        .encode(&words.join(" "))
        .expect("instruction words are all in the vocabulary")
}

/// Derive an edit of `scene`. The same `(scene, seed)` pair always
/// yields the same triplet. Kinds are drawn uniformly from the
/// applicable subset: recolor and remove always apply (the scene has
/// at least one object), add applies below the object cap, move when
/// some object has a clear step. In the rare case that an add cannot
/// be placed within the retry budget, the edit falls back to recolor.
pub fn make_edit(scene: &SceneSpec, seed: u64) -> EditTriplet {
    assert!(!scene.objects.is_empty(), "cannot edit an empty scene");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let moves = feasible_moves(scene);

    let mut applicable = vec![EditKind::Recolor, EditKind::Remove];
    if scene.objects.len() < MAX_OBJECTS {
        applicable.push(EditKind::Add);
    }
    if !moves.is_empty() {
        applicable.push(EditKind::Move);
    }
    applicable.sort_by_key(|k| *k as usize);

    let kind = applicable[rng.gen_range(0..applicable.len())];
    match kind {
        EditKind::Recolor => recolor(scene, &mut rng),
        EditKind::Remove => remove(scene, &mut rng),
        EditKind::Move => do_move(scene, &moves, &mut rng),
        EditKind::Add => match add(scene, &mut rng) {
            Some(t) => t,
            None => recolor(scene, &mut rng),
        },
    }
}

fn recolor(scene: &SceneSpec, rng: &mut ChaCha8Rng) -> EditTriplet {
    let idx = rng.gen_range(0..scene.objects.len());
    let free = free_colors(scene);
    let new_color = free[rng.gen_range(0..free.len())];
    let obj = scene.objects[idx];

    let mut target = scene.clone();
    target.objects[idx].color = new_color;

    EditTriplet {
        instruction: encode_instruction(&[
            "recolor",
            "the",
            COLOR_NAMES[obj.color],
            obj.kind.word(),
            "to",
            COLOR_NAMES[new_color],
        ]),
        edit_mask: footprint_mask(&obj, scene.size, MASK_DILATION),
        source: scene.clone(),
        target,
        edit_kind: EditKind::Recolor,
    }
}

fn remove(scene: &SceneSpec, rng: &mut ChaCha8Rng) -> EditTriplet {
    let idx = rng.gen_range(0..scene.objects.len());
    let obj = scene.objects[idx];
    let mut target = scene.clone();
    target.objects.remove(idx);

    EditTriplet {
        instruction: encode_instruction(&[
            "remove",
            "the",
            COLOR_NAMES[obj.color],
            obj.kind.word(),
        ]),
        edit_mask: footprint_mask(&obj, scene.size, MASK_DILATION),
        source: scene.clone(),
        target,
        edit_kind: EditKind::Remove,
    }
}

fn add(scene: &SceneSpec, rng: &mut ChaCha8Rng) -> Option<EditTriplet> {
    let new = sample_object(rng, scene.size, scene.background, &scene.objects, 512)?;
    let mut target = scene.clone();
    target.objects.push(new);

    Some(EditTriplet {
        instruction: encode_instruction(&["add", "a", COLOR_NAMES[new.color], new.kind.word()]),
        edit_mask: footprint_mask(&new, scene.size, MASK_DILATION),
        source: scene.clone(),
        target,
        edit_kind: EditKind::Add,
    })
}

fn do_move(scene: &SceneSpec, moves: &[(usize, Direction)], rng: &mut ChaCha8Rng) -> EditTriplet {
    let (idx, dir) = moves[rng.gen_range(0..moves.len())];
    let obj = scene.objects[idx];
    let new_obj = moved(&obj, dir, scene.size).expect("feasible move stays in bounds");
    let mut target = scene.clone();
    target.objects[idx] = new_obj;

    let mut mask = footprint_mask(&obj, scene.size, MASK_DILATION);
    union_masks(&mut mask, &footprint_mask(&new_obj, scene.size, MASK_DILATION));
    EditTriplet {
        instruction: encode_instruction(&[
            "move",
            "the",
            COLOR_NAMES[obj.color],
            obj.kind.word(),
            dir.word(),
        ]),
        edit_mask: mask,
        source: scene.clone(),
        target,
        edit_kind: EditKind::Move,
    }
}

/// Parse an instruction token sequence back into structured form.
pub fn parse_instruction(tokens: &[usize]) -> Result<EditInstruction, WorldError> {
    let vocab = Vocab::standard();
    let words: Result<Vec<_>, _> = tokens.iter().map(|&t| vocab.word(t)).collect();
    let words = words?;
    let bad = |msg: &str| WorldError::BadCaption(msg.to_string());

    let color_at = |i: usize| -> Result<ColorId, WorldError> {
        let w = *words.get(i).ok_or_else(|| bad("instruction ends early"))?;
        COLOR_NAMES.iter().position(|&c| c == w).ok_or_else(|| bad("expected a color"))
    };
    let kind_at = |i: usize| -> Result<Kind, WorldError> {
        let w = *words.get(i).ok_or_else(|| bad("instruction ends early"))?;
        Kind::ALL.into_iter().find(|k| k.word() == w).ok_or_else(|| bad("expected a shape"))
    };

    match words.first().copied() {
        Some("recolor") if words.len() == 6 && words[1] == "the" && words[4] == "to" => {
            Ok(EditInstruction {
                kind: EditKind::Recolor,
                color: color_at(2)?,
                shape: kind_at(3)?,
                to_color: Some(color_at(5)?),
                direction: None,
            })
        }
        Some("remove") if words.len() == 4 && words[1] == "the" => Ok(EditInstruction {
            kind: EditKind::Remove,
            color: color_at(2)?,
            shape: kind_at(3)?,
            to_color: None,
            direction: None,
        }),
        Some("add") if words.len() == 4 && words[1] == "a" => Ok(EditInstruction {
            kind: EditKind::Add,
            color: color_at(2)?,
            shape: kind_at(3)?,
            to_color: None,
            direction: None,
        }),
        Some("move") if words.len() == 5 && words[1] == "the" => {
            let dir = Direction::ALL
                .into_iter()
                .find(|d| d.word() == words[4])
                .ok_or_else(|| bad("expected a direction"))?;
            Ok(EditInstruction {
                kind: EditKind::Move,
                color: color_at(2)?,
                shape: kind_at(3)?,
                to_color: None,
                direction: Some(dir),
            })
        }
        _ => Err(bad("unrecognized instruction form")),
    }
}
