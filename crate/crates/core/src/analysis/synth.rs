//! Synthetic scene graphs with known predictability.
//!
//! Every pair of consecutive instances in an image, `(0, 1)`, `(2, 3)`, ...,
//! gets one triplet. Its rule is drawn by weight, independently of the object
//! classes. Geometric rules form a decision list: a geometric predicate is
//! emitted only for boxes where its own test holds and no geometric rule
//! listed before it holds, so geometry alone identifies it. A coin rule
//! ignores geometry and classes and emits `"{name}_{k}"` for a fair draw of k.

use std::collections::{BTreeSet, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::sgdata::{normalize_label, BBox, Dataset, ImageRecord, Instance, Triplet, Vocab};
use crate::util::seeded_rng;

const MIN_IMAGE_SIDE: u32 = 200;
const MAX_IMAGE_SIDE: u32 = 800;
const MAX_ATTEMPTS: usize = 10_000;
/// Box sides as fractions of the image side; the lower bound keeps the
/// pair-embedding ratio features within a trainable range.
const MIN_BOX_FRACTION: f64 = 0.1;
const MAX_BOX_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoRule {
    /// Subject center strictly higher in the image (smaller y) than the object center.
    Above,
    /// Subject center strictly left of the object center.
    LeftOf,
    /// Object box lies inside the subject box.
    Contains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    Geometric { rule: GeoRule },
    Coin { n_outcomes: usize },
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateRule {
    pub name: String,
    #[serde(flatten)]
    pub kind: RuleKind,
    /// Relative probability of drawing this rule for a pair.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

impl PredicateRule {
    pub fn geometric(name: &str, rule: GeoRule) -> Self {
        PredicateRule {
            name: name.into(),
            kind: RuleKind::Geometric { rule },
            weight: 1.0,
        }
    }

    pub fn coin(name: &str, n_outcomes: usize) -> Self {
        PredicateRule {
            name: name.into(),
            kind: RuleKind::Coin { n_outcomes },
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    /// Predicate labels this rule can emit.
    pub fn labels(&self) -> Vec<String> {
        match self.kind {
            RuleKind::Geometric { .. } => vec![self.name.clone()],
            RuleKind::Coin { n_outcomes } => (0..n_outcomes)
                .map(|k| format!("{}_{k}", self.name))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_images: usize,
    pub instances_per_image: usize,
    pub rules: Vec<PredicateRule>,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Two geometric predicates and one two-outcome coin, each rule equally likely.
    fn default() -> Self {
        SynthSpec {
            n_images: 3000,
            instances_per_image: 4,
            rules: vec![
                PredicateRule::geometric("above", GeoRule::Above),
                PredicateRule::geometric("left_of", GeoRule::LeftOf),
                PredicateRule::coin("coin", 2),
            ],
            n_classes: 3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// All predicate labels in rule order.
    pub fn predicate_labels(&self) -> Vec<String> {
        self.rules.iter().flat_map(|r| r.labels()).collect()
    }

    /// Labels emitted by geometric rules.
    pub fn geometric_labels(&self) -> Vec<String> {
        self.rules
            .iter()
            .filter(|r| matches!(r.kind, RuleKind::Geometric { .. }))
            .map(|r| r.name.clone())
            .collect()
    }

    pub fn class_labels(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| format!("class_{c}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::invalid("synthetic spec needs at least one rule"));
        }
        if self.instances_per_image < 2 {
            return Err(Error::invalid("instances_per_image must be >= 2"));
        }
        if self.n_classes == 0 {
            return Err(Error::invalid("n_classes must be >= 1"));
        }
        let mut labels = HashSet::new();
        for l in self.predicate_labels() {
            if normalize_label(&l) != l || l.is_empty() {
                return Err(Error::invalid(format!(
                    "rule label {l:?} is not normalized"
                )));
            }
            if !labels.insert(l.clone()) {
                return Err(Error::invalid(format!("duplicate predicate label {l:?}")));
            }
        }
        let mut geo = HashSet::new();
        for r in &self.rules {
            if !(r.weight >= 0.0 && r.weight.is_finite()) {
                return Err(Error::invalid(format!(
                    "rule {} has invalid weight {}",
                    r.name, r.weight
                )));
            }
            match r.kind {
                RuleKind::Coin { n_outcomes: 0 } => {
                    return Err(Error::invalid(format!(
                        "coin rule {} has no outcomes",
                        r.name
                    )));
                }
                RuleKind::Geometric { rule } if !geo.insert(rule) => {
                    return Err(Error::Unsatisfiable(format!(
                        "geometric rule {rule:?} listed twice; the second can never fire"
                    )));
                }
                _ => {}
            }
        }
        if self.rules.iter().all(|r| r.weight == 0.0) {
            return Err(Error::invalid("all rule weights are zero"));
        }
        Ok(())
    }
}

/// Evaluates a geometric rule on pixel boxes.
pub fn geometric_rule_holds(rule: GeoRule, subject: &BBox, object: &BBox) -> bool {
    let (sx, sy) = subject.center();
    let (ox, oy) = object.center();
    match rule {
        GeoRule::Above => sy < oy,
        GeoRule::LeftOf => sx < ox,
        GeoRule::Contains => subject.contains(object),
    }
}

fn random_box(rng: &mut ChaCha8Rng, width: f64, height: f64) -> BBox {
    let w = rng.gen_range(MIN_BOX_FRACTION..MAX_BOX_FRACTION) * width;
    let h = rng.gen_range(MIN_BOX_FRACTION..MAX_BOX_FRACTION) * height;
    let x = rng.gen_range(0.0..width - w);
    let y = rng.gen_range(0.0..height - h);
    BBox { x, y, w, h }
}

fn random_pair(rng: &mut ChaCha8Rng, rule: GeoRule, width: f64, height: f64) -> (BBox, BBox) {
    if rule != GeoRule::Contains {
        return (
            random_box(rng, width, height),
            random_box(rng, width, height),
        );
    }
    // containment is too rare to hit by plain rejection
    let subject = random_box(rng, width, height);
    let w = rng.gen_range(0.1..0.9) * subject.w;
    let h = rng.gen_range(0.1..0.9) * subject.h;
    let x = subject.x + rng.gen_range(0.0..subject.w - w);
    let y = subject.y + rng.gen_range(0.0..subject.h - h);
    (subject, BBox { x, y, w, h })
}

pub fn gen_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut class_names = spec.class_labels();
    class_names.sort();
    let object_vocab = Vocab::from_labels(class_names)?;
    let class_ids: Vec<u32> = spec
        .class_labels()
        .iter()
        .map(|l| object_vocab.id(l).expect("class label present"))
        .collect();
    let mut predicate_names = spec.predicate_labels();
    predicate_names.sort();
    let predicate_vocab = Vocab::from_labels(predicate_names)?;
    let rule_labels: Vec<Vec<u32>> = spec
        .rules
        .iter()
        .map(|r| {
            r.labels()
                .iter()
                .map(|l| predicate_vocab.id(l).expect("label present"))
                .collect()
        })
        .collect();
    // geometric rules in decision-list order
    let geo_order: Vec<GeoRule> = spec
        .rules
        .iter()
        .filter_map(|r| match r.kind {
            RuleKind::Geometric { rule } => Some(rule),
            RuleKind::Coin { .. } => None,
        })
        .collect();
    let chooser = WeightedIndex::new(spec.rules.iter().map(|r| r.weight))
        .map_err(|e| Error::invalid(format!("rule weights: {e}")))?;

    let mut next_instance = 0u64;
    let mut images = Vec::with_capacity(spec.n_images);
    for img_idx in 0..spec.n_images {
        let image_id = img_idx as u64 + 1;
        let width = rng.gen_range(MIN_IMAGE_SIDE..=MAX_IMAGE_SIDE);
        let height = rng.gen_range(MIN_IMAGE_SIDE..=MAX_IMAGE_SIDE);
        let (wf, hf) = (width as f64, height as f64);
        let classes: Vec<u32> = (0..spec.instances_per_image)
            .map(|_| class_ids[rng.gen_range(0..spec.n_classes)])
            .collect();
        let mut boxes = Vec::with_capacity(spec.instances_per_image);
        let mut triplets = Vec::new();
        let base = next_instance;
        for pair in 0..spec.instances_per_image / 2 {
            let r = chooser.sample(&mut rng);
            let (s, o, predicate) = match spec.rules[r].kind {
                RuleKind::Geometric { rule } => {
                    let rank = geo_order.iter().position(|&g| g == rule).expect("listed");
                    let earlier = &geo_order[..rank];
                    let mut found = None;
                    for _ in 0..MAX_ATTEMPTS {
                        let (s, o) = random_pair(&mut rng, rule, wf, hf);
                        if geometric_rule_holds(rule, &s, &o)
                            && !earlier.iter().any(|&e| geometric_rule_holds(e, &s, &o))
                        {
                            found = Some((s, o));
                            break;
                        }
                    }
                    let (s, o) = found.ok_or_else(|| {
                        Error::Unsatisfiable(format!(
                            "no box pair satisfies {rule:?} while failing {earlier:?} after {MAX_ATTEMPTS} draws"
                        ))
                    })?;
                    (s, o, rule_labels[r][0])
                }
                RuleKind::Coin { n_outcomes } => {
                    let s = random_box(&mut rng, wf, hf);
                    let o = random_box(&mut rng, wf, hf);
                    (s, o, rule_labels[r][rng.gen_range(0..n_outcomes)])
                }
            };
            boxes.push(s);
            boxes.push(o);
            triplets.push(Triplet {
                subject_id: base + 2 * pair as u64,
                predicate,
                object_id: base + 2 * pair as u64 + 1,
            });
        }
        while boxes.len() < spec.instances_per_image {
            boxes.push(random_box(&mut rng, wf, hf));
        }
        let instances = boxes
            .into_iter()
            .zip(classes)
            .enumerate()
            .map(|(k, (bbox, object_label))| Instance {
                instance_id: base + k as u64,
                image_id,
                bbox,
                object_label,
                attribute_labels: BTreeSet::new(),
            })
            .collect();
        next_instance += spec.instances_per_image as u64;
        images.push(ImageRecord {
            image_id,
            width,
            height,
            instances,
            triplets,
        });
    }
    let mut dataset = Dataset {
        images,
        object_vocab,
        predicate_vocab,
        attribute_vocab: Vocab::default(),
        split_tags: None,
    };
    dataset.recount();
    Ok(dataset)
}

/// Random vectors in `[-1, 1]^dim` for every token of every label, drawn in
/// sorted token order.
pub fn synthetic_embeddings<'a>(
    labels: impl IntoIterator<Item = &'a str>,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be >= 1"));
    }
    let tokens: BTreeSet<&str> = labels
        .into_iter()
        .flat_map(|l| l.split_whitespace())
        .collect();
    let mut rng = seeded_rng(seed);
    let mut table = EmbeddingTable::new(dim);
    for t in tokens {
        table.insert(t, (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_images: usize) -> SynthSpec {
        SynthSpec {
            n_images,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn geometric_labels_satisfy_their_rule() {
        let spec = SynthSpec {
            rules: vec![
                PredicateRule::geometric("above", GeoRule::Above),
                PredicateRule::geometric("left_of", GeoRule::LeftOf),
                PredicateRule::geometric("contains", GeoRule::Contains),
                PredicateRule::coin("coin", 2),
            ],
            ..small(300)
        };
        let d = gen_synthetic(&spec).unwrap();
        d.validate().unwrap();
        let id = |l| d.predicate_vocab.id(l).unwrap();
        let mut seen = 0;
        for (img, t) in d.triplets() {
            let s = &img.instance(t.subject_id).unwrap().bbox;
            let o = &img.instance(t.object_id).unwrap().bbox;
            let holds = |r| geometric_rule_holds(r, s, o);
            if t.predicate == id("above") {
                assert!(holds(GeoRule::Above));
                seen += 1;
            } else if t.predicate == id("left_of") {
                assert!(holds(GeoRule::LeftOf) && !holds(GeoRule::Above));
                seen += 1;
            } else if t.predicate == id("contains") {
                assert!(
                    holds(GeoRule::Contains) && !holds(GeoRule::Above) && !holds(GeoRule::LeftOf)
                );
                seen += 1;
            }
        }
        assert!(seen > 300);
    }

    #[test]
    fn zero_images_is_empty() {
        let d = gen_synthetic(&small(0)).unwrap();
        assert_eq!((d.n_images(), d.n_triplets()), (0, 0));
        assert_eq!(d.predicate_vocab.len(), 4);
    }

    #[test]
    fn coin_outcomes_are_fair() {
        let spec = SynthSpec {
            rules: vec![PredicateRule::coin("coin", 2)],
            instances_per_image: 2,
            ..small(2000)
        };
        let d = gen_synthetic(&spec).unwrap();
        let n = d.n_triplets() as f64;
        let heads = d
            .predicate_vocab
            .count(d.predicate_vocab.id("coin_0").unwrap()) as f64;
        let sigma = (n * 0.25).sqrt();
        assert!((heads - n / 2.0).abs() <= 3.0 * sigma, "{heads} of {n}");
    }

    #[test]
    fn regeneration_is_identical() {
        assert_eq!(
            gen_synthetic(&small(50)).unwrap(),
            gen_synthetic(&small(50)).unwrap()
        );
        assert_ne!(
            gen_synthetic(&small(50)).unwrap(),
            gen_synthetic(&SynthSpec {
                seed: 1,
                ..small(50)
            })
            .unwrap()
        );
    }

    #[test]
    fn odd_instance_counts_leave_one_unpaired() {
        let d = gen_synthetic(&SynthSpec {
            instances_per_image: 5,
            ..small(10)
        })
        .unwrap();
        assert_eq!(d.n_instances(), 50);
        assert_eq!(d.n_triplets(), 20);
        d.validate().unwrap();
    }

    #[test]
    fn invalid_specs() {
        let dup = SynthSpec {
            rules: vec![
                PredicateRule::geometric("above", GeoRule::Above),
                PredicateRule::geometric("higher", GeoRule::Above),
            ],
            ..small(5)
        };
        assert!(matches!(gen_synthetic(&dup), Err(Error::Unsatisfiable(_))));
        assert!(gen_synthetic(&SynthSpec {
            rules: vec![],
            ..small(5)
        })
        .is_err());
        assert!(gen_synthetic(&SynthSpec {
            instances_per_image: 1,
            ..small(5)
        })
        .is_err());
        assert!(gen_synthetic(&SynthSpec {
            n_classes: 0,
            ..small(5)
        })
        .is_err());
        let clash = SynthSpec {
            rules: vec![
                PredicateRule::geometric("c_0", GeoRule::Above),
                PredicateRule::coin("c", 1),
            ],
            ..small(5)
        };
        assert!(gen_synthetic(&clash).is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = SynthSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains(r#""kind":"geometric""#), "{text}");
        assert_eq!(serde_json::from_str::<SynthSpec>(&text).unwrap(), spec);
        let minimal: PredicateRule =
            serde_json::from_str(r#"{"name":"c","kind":"coin","n_outcomes":3}"#).unwrap();
        assert_eq!(minimal, PredicateRule::coin("c", 3));
    }

    #[test]
    fn embeddings_cover_all_tokens() {
        let t = synthetic_embeddings(["is on", "on", "class_1"], 8, 3).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), Some(8));
        assert!(t.get("is").is_some() && t.get("class_1").is_some());
        assert!(synthetic_embeddings(["a"], 0, 0).is_err());
    }
}
