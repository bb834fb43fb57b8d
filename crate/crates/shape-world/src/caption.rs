//! Canonical captions and their inverse parser.
//!
//! Every scene has exactly one caption. One- and two-object scenes use
//! the attribute and spatial-relation templates; three-object scenes
//! chain attributes with "and". The parser is the exact inverse at the
//! attribute level, which the tests quantify as a round trip.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::WorldError;
use crate::palette::{ColorId, COLOR_NAMES};
use crate::scene::{Kind, Object, SceneSpec};

/// Every word the grammar can emit, in fixed id order. Ids are stable
/// across runs and releases; new words may only be appended.
pub const WORDS: [&str; 26] = [
    "a", "and", "above", "below", "left", "right", "of", "the", "to", "up", "down", "add",
    "remove", "move", "recolor", "circle", "square", "triangle", "black", "red", "green", "blue",
    "yellow", "magenta", "cyan", "white",
];

/// Token-id vocabulary over [`WORDS`].
pub struct Vocab {
    index: std::collections::HashMap<&'static str, usize>,
}

impl Vocab {
    /// The process-wide vocabulary.
    pub fn standard() -> &'static Vocab {
        static VOCAB: OnceLock<Vocab> = OnceLock::new();
        VOCAB.get_or_init(|| Vocab {
            index: WORDS.iter().enumerate().map(|(i, &w)| (w, i)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        WORDS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> Result<usize, WorldError> {
        self.index.get(word).copied().ok_or_else(|| WorldError::UnknownWord(word.to_string()))
    }

    pub fn word(&self, id: usize) -> Result<&'static str, WorldError> {
        WORDS.get(id).copied().ok_or(WorldError::UnknownTokenId(id))
    }

    /// Whitespace-tokenize a sentence into ids.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, WorldError> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> Result<String, WorldError> {
        let words: Result<Vec<_>, _> = tokens.iter().map(|&t| self.word(t)).collect();
        Ok(words?.join(" "))
    }
}

/// Spatial relation between the first two objects of a scene, named
/// from the first object's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Above,
    Below,
    LeftOf,
    RightOf,
}

impl Relation {
    fn words(self) -> &'static [&'static str] {
        match self {
            Relation::Above => &["above"],
            Relation::Below => &["below"],
            Relation::LeftOf => &["left", "of"],
            Relation::RightOf => &["right", "of"],
        }
    }
}

/// Relation of `a` to `b` by dominant center offset; row offsets win
/// ties so the choice is canonical.
pub fn relation_between(a: &Object, b: &Object) -> Relation {
    let dr = b.center.0 as i64 - a.center.0 as i64;
    let dc = b.center.1 as i64 - a.center.1 as i64;
    if dr.abs() >= dc.abs() {
        if dr > 0 {
            Relation::Above
        } else {
            Relation::Below
        }
    } else if dc > 0 {
        Relation::LeftOf
    } else {
        Relation::RightOf
    }
}

/// Attribute-level content of a caption: (color, kind) per object in
/// caption order, plus the relation for two-object sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCaption {
    pub objects: Vec<(ColorId, Kind)>,
    pub relation: Option<Relation>,
}

impl ParsedCaption {
    /// What the caption of `scene` should parse to.
    pub fn of_scene(scene: &SceneSpec) -> Self {
        let objects = scene.objects.iter().map(|o| (o.color, o.kind)).collect();
        let relation = (scene.objects.len() == 2)
            .then(|| relation_between(&scene.objects[0], &scene.objects[1]));
        ParsedCaption { objects, relation }
    }
}

fn kind_word(k: Kind) -> &'static str {
    k.word()
}

fn push_object(words: &mut Vec<&'static str>, o: &Object) {
    words.push("a");
    words.push(COLOR_NAMES[o.color]);
    words.push(kind_word(o.kind));
}

/// The canonical caption as plain text.
pub fn caption_text(scene: &SceneSpec) -> Result<String, WorldError> {
    let mut words: Vec<&'static str> = Vec::new();
    match scene.objects.len() {
        0 => return Err(WorldError::EmptyScene),
        1 => push_object(&mut words, &scene.objects[0]),
        2 => {
            push_object(&mut words, &scene.objects[0]);
            words.extend(relation_between(&scene.objects[0], &scene.objects[1]).words());
            push_object(&mut words, &scene.objects[1]);
        }
        _ => {
            for (i, o) in scene.objects.iter().enumerate() {
                if i > 0 {
                    words.push("and");
                }
                push_object(&mut words, o);
            }
        }
    }
    Ok(words.join(" "))
}

/// The canonical caption as token ids.
pub fn caption(scene: &SceneSpec) -> Result<Vec<usize>, WorldError> {
    Vocab::standard().encode(&caption_text(scene)?)
}

struct Cursor<'a> {
    words: &'a [&'static str],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<&'static str, WorldError> {
        let w = self
            .words
            .get(self.pos)
            .copied()
            .ok_or_else(|| WorldError::BadCaption("sentence ends early".into()))?;
        self.pos += 1;
        Ok(w)
    }

    fn expect(&mut self, want: &str) -> Result<(), WorldError> {
        let got = self.next()?;
        if got != want {
            return Err(WorldError::BadCaption(format!("expected {want:?}, found {got:?}")));
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.pos == self.words.len()
    }
}

fn parse_color(w: &str) -> Result<ColorId, WorldError> {
    COLOR_NAMES
        .iter()
        .position(|&c| c == w)
        .ok_or_else(|| WorldError::BadCaption(format!("{w:?} is not a color")))
}

fn parse_kind(w: &str) -> Result<Kind, WorldError> {
    Kind::ALL
        .into_iter()
        .find(|k| k.word() == w)
        .ok_or_else(|| WorldError::BadCaption(format!("{w:?} is not a shape")))
}

fn parse_object(c: &mut Cursor) -> Result<(ColorId, Kind), WorldError> {
    c.expect("a")?;
    let color = parse_color(c.next()?)?;
    let kind = parse_kind(c.next()?)?;
    Ok((color, kind))
}

fn parse_relation(c: &mut Cursor) -> Result<Relation, WorldError> {
    match c.next()? {
        "above" => Ok(Relation::Above),
        "below" => Ok(Relation::Below),
        "left" => {
            c.expect("of")?;
            Ok(Relation::LeftOf)
        }
        "right" => {
            c.expect("of")?;
            Ok(Relation::RightOf)
        }
        w => Err(WorldError::BadCaption(format!("{w:?} is not a relation"))),
    }
}

/// Parse token ids back to attributes. Inverse of [`caption`] at the
/// attribute level; malformed sentences and unknown ids error.
pub fn parse_caption(tokens: &[usize]) -> Result<ParsedCaption, WorldError> {
    let vocab = Vocab::standard();
    let words: Result<Vec<_>, _> = tokens.iter().map(|&t| vocab.word(t)).collect();
    let words = words?;
    let mut c = Cursor { words: &words, pos: 0 };

    let mut objects = vec![parse_object(&mut c)?];
    let mut relation = None;
    if !c.done() {
        match c.words[c.pos] {
            "and" => {
                while !c.done() {
                    c.expect("and")?;
                    objects.push(parse_object(&mut c)?);
                }
            }
            _ => {
                relation = Some(parse_relation(&mut c)?);
                objects.push(parse_object(&mut c)?);
            }
        }
    }
    if !c.done() {
        return Err(WorldError::BadCaption("trailing words".into()));
    }
    Ok(ParsedCaption { objects, relation })
}
