//! Synthetic scene graphs and their feature encodings.
//!
//! A scene graph is the symbolic ground truth for the reasoning dialect:
//! objects with attributes and bounding boxes, plus spatial relation
//! triples derived from box centers. The learned executor never sees the
//! graph; it sees a fixed feature matrix produced by [`FeatureCodebook`],
//! standing in for a pre-trained detector. Features are sums of per
//! attribute-word codebook vectors plus position terms, a per-slot
//! encoding and a little noise, so attributes stay linearly decodable
//! while nothing symbolic leaks through.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::AttrCat;
use crate::rng::seeded_rng;
use crate::tensor::{sinusoid_row, Matrix};

/// Attribute inventories. Closed, small, and shared by the generator,
/// the oracle and the answer vocabulary.
pub mod vocab {
    pub const NAMES: [&str; 8] = [
        "person", "dog", "cat", "car", "tree", "chair", "bag", "bottle",
    ];
    pub const COLORS: [&str; 12] = [
        "red", "blue", "green", "yellow", "black", "white", "brown", "gray", "orange", "purple",
        "pink", "cyan",
    ];
    pub const MATERIALS: [&str; 6] = ["wooden", "metal", "plastic", "glass", "leather", "fabric"];
    pub const SHAPES: [&str; 5] = ["round", "square", "triangular", "oblong", "flat"];
    pub const SCENES: [&str; 4] = ["indoors", "outdoors", "street", "park"];
    pub const ACTIVITIES: [&str; 4] = ["standing", "sitting", "walking", "running"];
    pub const RELATIONS: [&str; 4] = ["left", "right", "above", "below"];
    pub const POSITIONS: [&str; 4] = ["left", "right", "top", "bottom"];

    /// Every attribute word, for building the token vocabulary.
    pub fn all_words() -> Vec<&'static str> {
        let mut out = Vec::new();
        out.extend(NAMES);
        out.extend(COLORS);
        out.extend(MATERIALS);
        out.extend(SHAPES);
        out.extend(SCENES);
        out.extend(ACTIVITIES);
        out.extend(RELATIONS);
        out.extend(POSITIONS);
        out
    }

    /// Index of a word in [`answer_words`].
    pub fn answer_index(word: &str) -> Option<usize> {
        answer_words().iter().position(|w| *w == word)
    }

    /// The answer vocabulary: every word a Query/Choose/Common routine can
    /// produce, in a fixed order with duplicates removed.
    pub fn answer_words() -> Vec<&'static str> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for w in NAMES
            .iter()
            .chain(COLORS.iter())
            .chain(MATERIALS.iter())
            .chain(SHAPES.iter())
            .chain(SCENES.iter())
            .chain(ACTIVITIES.iter())
            .chain(POSITIONS.iter())
        {
            if seen.insert(*w) {
                out.push(*w);
            }
        }
        out
    }

    pub fn values_of(cat: super::AttrCat) -> &'static [&'static str] {
        match cat {
            super::AttrCat::Name => &NAMES,
            super::AttrCat::Color => &COLORS,
            super::AttrCat::Material => &MATERIALS,
            super::AttrCat::Shape => &SHAPES,
            super::AttrCat::Scene => &SCENES,
            super::AttrCat::Activity => &ACTIVITIES,
            super::AttrCat::Position => &POSITIONS,
        }
    }
}

/// Margin below which two box centers are considered aligned rather than
/// spatially related.
pub const RELATION_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub name: String,
    /// color / material / shape / activity.
    pub attrs: BTreeMap<String, String>,
    /// x, y, w, h in [0, 1] image coordinates.
    pub bbox: [f64; 4],
}

impl SceneObject {
    pub fn center(&self) -> (f64, f64) {
        (
            self.bbox[0] + self.bbox[2] / 2.0,
            self.bbox[1] + self.bbox[3] / 2.0,
        )
    }

    /// Four-way image position from the dominant axis of the center.
    pub fn position_word(&self) -> &'static str {
        let (cx, cy) = self.center();
        let (dx, dy) = (cx - 0.5, cy - 0.5);
        if dx.abs() >= dy.abs() {
            if dx < 0.0 {
                "left"
            } else {
                "right"
            }
        } else if dy < 0.0 {
            "top"
        } else {
            "bottom"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub id: String,
    /// Scene-level attribute shared by every object.
    pub scene: String,
    pub objects: Vec<SceneObject>,
    /// (subject id, predicate, object id) triples.
    pub relations: Vec<(usize, String, usize)>,
}

impl SceneGraph {
    /// Attribute word of `object` under `cat`; positions and the scene
    /// attribute are derived rather than stored.
    pub fn attr_of(&self, object: &SceneObject, cat: AttrCat) -> Option<String> {
        match cat {
            AttrCat::Name => Some(object.name.clone()),
            AttrCat::Scene => Some(self.scene.clone()),
            AttrCat::Position => Some(object.position_word().to_string()),
            _ => object.attrs.get(cat.word()).cloned(),
        }
    }

    pub fn object(&self, id: usize) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn has_relation(&self, s: usize, predicate: &str, o: usize) -> bool {
        self.relations
            .iter()
            .any(|(a, p, b)| *a == s && *b == o && p == predicate)
    }
}

/// Relation triples implied by box centers, with a dead zone of
/// [`RELATION_MARGIN`] around equality.
pub fn compute_relations(objects: &[SceneObject]) -> Vec<(usize, String, usize)> {
    let mut out = Vec::new();
    for a in objects {
        for b in objects {
            if a.id == b.id {
                continue;
            }
            let (ax, ay) = a.center();
            let (bx, by) = b.center();
            if ax < bx - RELATION_MARGIN {
                out.push((a.id, "left".to_string(), b.id));
            }
            if ax > bx + RELATION_MARGIN {
                out.push((a.id, "right".to_string(), b.id));
            }
            if ay < by - RELATION_MARGIN {
                out.push((a.id, "above".to_string(), b.id));
            }
            if ay > by + RELATION_MARGIN {
                out.push((a.id, "below".to_string(), b.id));
            }
        }
    }
    out
}

/// Fixed random projection of attribute words into feature space. One
/// codebook per dataset; every scene in the dataset shares it.
#[derive(Debug, Clone)]
pub struct FeatureCodebook {
    pub d: usize,
    pub n_slots: usize,
    vectors: BTreeMap<String, Vec<f64>>,
    pos_x: Vec<f64>,
    pos_y: Vec<f64>,
    slot_enc: Vec<Vec<f64>>,
    noise_sigma: f64,
}

impl FeatureCodebook {
    /// `d` feature width, `n_slots` fixed object slots per scene
    /// (shorter scenes are zero-padded), `seed` fixes every vector.
    pub fn new(d: usize, n_slots: usize, seed: u64) -> FeatureCodebook {
        let mut rng = seeded_rng(seed, "feature-codebook", 0);
        let mut vectors = BTreeMap::new();
        // Draw order is the fixed iteration order of the inventories, so
        // a given (d, seed) always yields the same codebook.
        let groups: [(&str, &[&str]); 6] = [
            ("name", &vocab::NAMES),
            ("color", &vocab::COLORS),
            ("material", &vocab::MATERIALS),
            ("shape", &vocab::SHAPES),
            ("scene", &vocab::SCENES),
            ("activity", &vocab::ACTIVITIES),
        ];
        for (cat, words) in groups {
            for w in words {
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.6..0.6)).collect();
                vectors.insert(format!("{cat}:{w}"), v);
            }
        }
        let pos_x = (0..d).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let pos_y = (0..d).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let slot_enc = (0..n_slots)
            .map(|i| sinusoid_row(i, d).into_iter().map(|v| v * 0.5).collect())
            .collect();
        FeatureCodebook {
            d,
            n_slots,
            vectors,
            pos_x,
            pos_y,
            slot_enc,
            noise_sigma: 0.01,
        }
    }

    fn lookup(&self, key: &str) -> &[f64] {
        self.vectors
            .get(key)
            .unwrap_or_else(|| panic!("attribute word outside the closed vocabulary: {key}"))
    }

    /// Object-slot feature matrix (`n_slots` × `d`). Slot order follows
    /// object ids; unused slots stay zero. `noise_seed` makes the small
    /// additive noise reproducible per scene.
    pub fn featurize(&self, graph: &SceneGraph, noise_seed: u64) -> Matrix {
        assert!(
            graph.objects.len() <= self.n_slots,
            "scene has {} objects, codebook has {} slots",
            graph.objects.len(),
            self.n_slots
        );
        let mut rng = seeded_rng(noise_seed, "scene-noise", 0);
        let mut out = Matrix::zeros(self.n_slots, self.d);
        for (slot, obj) in graph.objects.iter().enumerate() {
            let row = out.row_mut(slot);
            let addv = |v: &[f64], row: &mut [f64]| {
                for (r, x) in row.iter_mut().zip(v) {
                    *r += x;
                }
            };
            addv(self.lookup(&format!("name:{}", obj.name)), row);
            for cat in ["color", "material", "shape", "activity"] {
                if let Some(word) = obj.attrs.get(cat) {
                    let key = format!("{cat}:{word}");
                    let v = self.lookup(&key).to_vec();
                    addv(&v, row);
                }
            }
            let sv = self.lookup(&format!("scene:{}", graph.scene)).to_vec();
            addv(&sv, row);
            let (cx, cy) = obj.center();
            for j in 0..self.d {
                row[j] += cx * self.pos_x[j] + cy * self.pos_y[j] + self.slot_enc[slot][j];
                row[j] += rng.gen_range(-1.0..1.0) * self.noise_sigma;
            }
        }
        out
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: usize, name: &str, cx: f64, cy: f64) -> SceneObject {
        let mut attrs = BTreeMap::new();
        attrs.insert("color".into(), "red".into());
        attrs.insert("material".into(), "metal".into());
        attrs.insert("shape".into(), "round".into());
        attrs.insert("activity".into(), "standing".into());
        SceneObject {
            id,
            name: name.into(),
            attrs,
            bbox: [cx - 0.05, cy - 0.05, 0.1, 0.1],
        }
    }

    #[test]
    fn relations_follow_centers() {
        let objects = vec![obj(0, "dog", 0.2, 0.5), obj(1, "cat", 0.8, 0.5)];
        let rels = compute_relations(&objects);
        assert!(rels.contains(&(0, "left".to_string(), 1)));
        assert!(rels.contains(&(1, "right".to_string(), 0)));
        assert!(!rels.iter().any(|(_, p, _)| p == "above" || p == "below"));
    }

    #[test]
    fn near_centers_produce_no_relation() {
        let objects = vec![obj(0, "dog", 0.50, 0.5), obj(1, "cat", 0.55, 0.5)];
        assert!(compute_relations(&objects).is_empty());
    }

    #[test]
    fn position_word_uses_dominant_axis() {
        assert_eq!(obj(0, "dog", 0.1, 0.45).position_word(), "left");
        assert_eq!(obj(0, "dog", 0.55, 0.9).position_word(), "bottom");
    }

    #[test]
    fn featurize_is_deterministic_and_pads_with_zeros() {
        let graph = SceneGraph {
            id: "s0".into(),
            scene: "park".into(),
            objects: vec![obj(0, "dog", 0.2, 0.3)],
            relations: vec![],
        };
        let book = FeatureCodebook::new(32, 4, 99);
        let a = book.featurize(&graph, 7);
        let b = book.featurize(&graph, 7);
        assert_eq!(a, b);
        for j in 0..32 {
            assert_eq!(a.get(2, j), 0.0);
            assert_eq!(a.get(3, j), 0.0);
        }
        let c = book.featurize(&graph, 8);
        assert_ne!(a, c, "noise seed must matter");
        let mut diff = 0.0;
        for (x, y) in a.data.iter().zip(&c.data) {
            diff = f64::max(diff, (x - y).abs());
        }
        assert!(diff < 0.05, "noise should stay small, got {diff}");
    }

    #[test]
    fn answer_words_are_unique() {
        let words = vocab::answer_words();
        let set: std::collections::BTreeSet<_> = words.iter().collect();
        assert_eq!(set.len(), words.len());
        assert!(words.len() >= 40);
    }
}
