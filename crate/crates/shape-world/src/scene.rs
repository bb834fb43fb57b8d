//! Scene specifications and the seeded generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::palette::ColorId;

/// Default canvas side length in pixels.
pub const DEFAULT_SIZE: usize = 32;

/// Maximum objects per generated scene.
pub const MAX_OBJECTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Circle,
    Square,
    Triangle,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Circle, Kind::Square, Kind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Kind::Circle => "circle",
            Kind::Square => "square",
            Kind::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjSize {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub kind: Kind,
    pub color: ColorId,
    /// Center pixel, (row, col).
    pub center: (usize, usize),
    pub size: ObjSize,
}

impl Object {
    /// Nominal radius in pixels: half-side for squares, circumscribed
    /// half-height for triangles.
    pub fn radius(&self, canvas: usize) -> usize {
        match self.size {
            ObjSize::Small => 3 * canvas / DEFAULT_SIZE,
            ObjSize::Large => 5 * canvas / DEFAULT_SIZE,
        }
    }
}

/// A procedural scene: a background color and up to three
/// non-overlapping colored shapes on an `size x size` canvas.
///
/// The generator always produces 1..=3 objects; zero objects is a
/// legal degenerate state so that removal edits can empty a scene.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub size: usize,
    pub background: ColorId,
    pub objects: Vec<Object>,
}

impl SceneSpec {
    /// Check every structural invariant: counts, color distinctness,
    /// in-bounds placement, and pairwise separation.
    pub fn is_valid(&self) -> bool {
        if self.objects.len() > MAX_OBJECTS || self.background >= 8 {
            return false;
        }
        for (i, a) in self.objects.iter().enumerate() {
            if a.color >= 8 || a.color == self.background {
                return false;
            }
            if !in_bounds(a, self.size) {
                return false;
            }
            for b in &self.objects[i + 1..] {
                if a.color == b.color || !separated(a, b, self.size) {
                    return false;
                }
            }
        }
        true
    }

    /// Euclidean center distance of every object pair is at least the
    /// sum of their radii (implied by the stronger axis separation the
    /// generator enforces).
    pub fn min_pair_slack(&self) -> f64 {
        let mut slack = f64::INFINITY;
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                let dr = a.center.0 as f64 - b.center.0 as f64;
                let dc = a.center.1 as f64 - b.center.1 as f64;
                let dist = (dr * dr + dc * dc).sqrt();
                let need = (a.radius(self.size) + b.radius(self.size)) as f64;
                slack = slack.min(dist - need);
            }
        }
        slack
    }
}

pub(crate) fn in_bounds(o: &Object, canvas: usize) -> bool {
    let r = o.radius(canvas);
    let (row, col) = o.center;
    row >= r + 1 && col >= r + 1 && row + r + 1 < canvas && col + r + 1 < canvas
}

/// Axis (Chebyshev) separation with a 2-pixel guard band. This is
/// strictly stronger than the "centers at least sum-of-radii apart"
/// scene invariant and also guarantees rendered footprints stay
/// pixel-disjoint for squares and triangles, whose corners extend
/// past the nominal radius along the diagonals.
pub(crate) fn separated(a: &Object, b: &Object, canvas: usize) -> bool {
    let dr = a.center.0.abs_diff(b.center.0);
    let dc = a.center.1.abs_diff(b.center.1);
    dr.max(dc) >= a.radius(canvas) + b.radius(canvas) + 2
}

pub(crate) fn sample_object<R: Rng>(
    rng: &mut R,
    canvas: usize,
    background: ColorId,
    existing: &[Object],
    attempts: usize,
) -> Option<Object> {
    for _ in 0..attempts {
        let kind = Kind::ALL[rng.gen_range(0..3)];
        let size = if rng.gen_bool(0.5) { ObjSize::Small } else { ObjSize::Large };
        let color = rng.gen_range(0..8usize);
        if color == background || existing.iter().any(|o| o.color == color) {
            continue;
        }
        let probe = Object { kind, color, center: (0, 0), size };
        let r = probe.radius(canvas);
        let lo = r + 1;
        let hi = canvas - r - 1;
        let center = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        let candidate = Object { center, ..probe };
        if existing.iter().all(|o| separated(o, &candidate, canvas)) {
            return Some(candidate);
        }
    }
    None
}

/// Generate a scene on the default 32-pixel canvas.
pub fn gen_scene(seed: u64) -> SceneSpec {
    gen_scene_sized(seed, DEFAULT_SIZE)
}

/// Generate a scene on an `size x size` canvas (`size` a multiple of
/// 32). The same seed always yields the same scene.
///
/// Placement is rejection-sampled. If a full scene cannot be placed
/// within the retry budget the target object count is lowered, which
/// keeps the function total: a single object always fits.
pub fn gen_scene_sized(seed: u64, size: usize) -> SceneSpec {
    assert!(size >= DEFAULT_SIZE && size % DEFAULT_SIZE == 0, "canvas must be a multiple of 32");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = rng.gen_range(0..8usize);
    let mut want = rng.gen_range(1..=MAX_OBJECTS);
    loop {
        'restart: for _ in 0..64 {
            let mut objects: Vec<Object> = Vec::with_capacity(want);
            for _ in 0..want {
                match sample_object(&mut rng, size, background, &objects, 256) {
                    Some(o) => objects.push(o),
                    None => continue 'restart,
                }
            }
            let scene = SceneSpec { size, background, objects };
            debug_assert!(scene.is_valid());
            return scene;
        }
        want -= 1;
    }
}
