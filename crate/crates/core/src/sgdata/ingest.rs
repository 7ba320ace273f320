//! Visual-Genome-style JSON ingestion.
//!
//! Labels are normalized, boxes are clamped to the image, degenerate boxes
//! and dangling or self-referencing relationships are dropped. Every drop is
//! tallied in [`IngestReport`]. Vocabulary ids are assigned in lexicographic
//! label order so that ingesting the same sources always gives the same ids.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    normalize_label, BBox, Dataset, ImageId, ImageRecord, Instance, InstanceId, Triplet, Vocab,
};
use crate::error::{Error, Result};
use crate::util::{byte_offset, read_to_string_maybe_gz};

/// Raw JSON documents to ingest. `attributes` is optional; attributes may
/// also be given inline on each object.
#[derive(Debug, Clone, Copy)]
pub struct VgSources<'a> {
    pub objects: &'a str,
    pub relationships: &'a str,
    pub attributes: Option<&'a str>,
    pub image_meta: &'a str,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub images: usize,
    pub instances: usize,
    pub triplets: usize,
    pub clamped_boxes: usize,
    pub dropped_degenerate_boxes: usize,
    pub dropped_unlabeled_objects: usize,
    pub dropped_duplicate_object_ids: usize,
    pub dropped_objects_unknown_image: usize,
    pub dropped_images_bad_extent: usize,
    pub dropped_dangling_triplets: usize,
    pub dropped_self_triplets: usize,
    pub dropped_unlabeled_triplets: usize,
}

#[derive(Deserialize)]
struct VgImageObjects {
    image_id: ImageId,
    objects: Vec<VgObject>,
}

#[derive(Deserialize)]
struct VgObject {
    object_id: InstanceId,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[serde(default)]
    names: Option<Vec<String>>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    attributes: Vec<String>,
}

#[derive(Deserialize)]
struct VgImageRelationships {
    image_id: ImageId,
    relationships: Vec<VgRelationship>,
}

#[derive(Deserialize)]
struct VgRelationship {
    predicate: String,
    subject: VgRef,
    object: VgRef,
}

#[derive(Deserialize)]
struct VgRef {
    object_id: InstanceId,
}

#[derive(Deserialize)]
struct VgImageAttributes {
    image_id: ImageId,
    #[serde(default)]
    attributes: Vec<VgAttributeEntry>,
}

#[derive(Deserialize)]
struct VgAttributeEntry {
    object_id: InstanceId,
    #[serde(default)]
    attributes: Vec<String>,
}

// image_data.json carries both `image_id` and `id` in some releases.
#[derive(Deserialize)]
struct VgImageMeta {
    #[serde(default)]
    image_id: Option<ImageId>,
    #[serde(default)]
    id: Option<ImageId>,
    width: i64,
    height: i64,
}

fn parse<T: DeserializeOwned>(source_name: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => Error::Schema {
            source_name: source_name.to_string(),
            message: e.to_string(),
        },
        _ => Error::Parse {
            source_name: source_name.to_string(),
            offset: byte_offset(text, e.line(), e.column()),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
    })
}

struct RawInstance {
    id: InstanceId,
    bbox: BBox,
    label: String,
    attributes: BTreeSet<String>,
}

/// Ingests VG-style JSON documents into a [`Dataset`].
pub fn ingest_vg(sources: VgSources<'_>) -> Result<(Dataset, IngestReport)> {
    let meta: Vec<VgImageMeta> = parse("image_data.json", sources.image_meta)?;
    let objects: Vec<VgImageObjects> = parse("objects.json", sources.objects)?;
    let relationships: Vec<VgImageRelationships> =
        parse("relationships.json", sources.relationships)?;
    let attributes: Vec<VgImageAttributes> = match sources.attributes {
        Some(text) => parse("attributes.json", text)?,
        None => Vec::new(),
    };

    let mut report = IngestReport::default();

    let mut extents: BTreeMap<ImageId, (u32, u32)> = BTreeMap::new();
    for m in meta {
        let id = m.image_id.or(m.id).ok_or_else(|| Error::Schema {
            source_name: "image_data.json".into(),
            message: "missing field `image_id`".into(),
        })?;
        if m.width <= 0 || m.height <= 0 || m.width > u32::MAX as i64 || m.height > u32::MAX as i64
        {
            report.dropped_images_bad_extent += 1;
            continue;
        }
        extents.insert(id, (m.width as u32, m.height as u32));
    }

    let mut extra_attributes: HashMap<InstanceId, Vec<String>> = HashMap::new();
    for entry in attributes {
        let _ = entry.image_id;
        for a in entry.attributes {
            extra_attributes
                .entry(a.object_id)
                .or_default()
                .extend(a.attributes);
        }
    }

    let mut raw: BTreeMap<ImageId, Vec<RawInstance>> = BTreeMap::new();
    let mut seen_ids: HashSet<InstanceId> = HashSet::new();
    for img in objects {
        let Some(&(width, height)) = extents.get(&img.image_id) else {
            report.dropped_objects_unknown_image += img.objects.len();
            continue;
        };
        let bucket = raw.entry(img.image_id).or_default();
        for obj in img.objects {
            let first_name = match (&obj.names, &obj.name) {
                (Some(names), _) => names.first().cloned().unwrap_or_default(),
                (None, Some(name)) => name.clone(),
                (None, None) => {
                    return Err(Error::Schema {
                        source_name: "objects.json".into(),
                        message: format!("object {}: missing field `names`", obj.object_id),
                    })
                }
            };
            let label = normalize_label(&first_name);
            if label.is_empty() {
                report.dropped_unlabeled_objects += 1;
                continue;
            }
            let Some((bbox, clamped)) = clamp_box(obj.x, obj.y, obj.w, obj.h, width, height) else {
                report.dropped_degenerate_boxes += 1;
                continue;
            };
            if !seen_ids.insert(obj.object_id) {
                report.dropped_duplicate_object_ids += 1;
                continue;
            }
            if clamped {
                report.clamped_boxes += 1;
            }
            let mut attrs: BTreeSet<String> = obj
                .attributes
                .iter()
                .map(|a| normalize_label(a))
                .filter(|a| !a.is_empty())
                .collect();
            if let Some(extra) = extra_attributes.get(&obj.object_id) {
                attrs.extend(
                    extra
                        .iter()
                        .map(|a| normalize_label(a))
                        .filter(|a| !a.is_empty()),
                );
            }
            bucket.push(RawInstance {
                id: obj.object_id,
                bbox,
                label,
                attributes: attrs,
            });
        }
    }

    let mut raw_rels: BTreeMap<ImageId, Vec<(InstanceId, String, InstanceId)>> = BTreeMap::new();
    for img in relationships {
        let local: HashSet<InstanceId> = raw
            .get(&img.image_id)
            .map(|v| v.iter().map(|r| r.id).collect())
            .unwrap_or_default();
        let bucket = raw_rels.entry(img.image_id).or_default();
        for rel in img.relationships {
            let s = rel.subject.object_id;
            let o = rel.object.object_id;
            let predicate = normalize_label(&rel.predicate);
            if !local.contains(&s) || !local.contains(&o) {
                report.dropped_dangling_triplets += 1;
            } else if s == o {
                report.dropped_self_triplets += 1;
            } else if predicate.is_empty() {
                report.dropped_unlabeled_triplets += 1;
            } else {
                bucket.push((s, predicate, o));
            }
        }
    }

    let object_labels: BTreeSet<&str> = raw.values().flatten().map(|r| r.label.as_str()).collect();
    let attribute_labels: BTreeSet<&str> = raw
        .values()
        .flatten()
        .flat_map(|r| r.attributes.iter().map(String::as_str))
        .collect();
    let predicate_labels: BTreeSet<&str> = raw_rels
        .values()
        .flatten()
        .map(|(_, p, _)| p.as_str())
        .collect();
    let object_vocab = Vocab::from_labels(object_labels.iter().copied())?;
    let attribute_vocab = Vocab::from_labels(attribute_labels.iter().copied())?;
    let predicate_vocab = Vocab::from_labels(predicate_labels.iter().copied())?;

    let mut images = Vec::with_capacity(extents.len());
    for (&image_id, &(width, height)) in &extents {
        let instances: Vec<Instance> = raw
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(|r| Instance {
                instance_id: r.id,
                image_id,
                bbox: r.bbox,
                object_label: object_vocab.id(&r.label).expect("label collected above"),
                attribute_labels: r
                    .attributes
                    .iter()
                    .map(|a| attribute_vocab.id(a).expect("attribute collected above"))
                    .collect(),
            })
            .collect();
        let triplets: Vec<Triplet> = raw_rels
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(|(s, p, o)| Triplet {
                subject_id: *s,
                predicate: predicate_vocab.id(p).expect("predicate collected above"),
                object_id: *o,
            })
            .collect();
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
        attribute_vocab,
        split_tags: None,
    };
    dataset.recount();
    report.images = dataset.n_images();
    report.instances = dataset.n_instances();
    report.triplets = dataset.n_triplets();
    Ok((dataset, report))
}

/// Reads the four VG files (gzip accepted) and ingests them.
pub fn ingest_vg_files(
    objects: &Path,
    relationships: &Path,
    attributes: Option<&Path>,
    image_meta: &Path,
) -> Result<(Dataset, IngestReport)> {
    let objects = read_to_string_maybe_gz(objects)?;
    let relationships = read_to_string_maybe_gz(relationships)?;
    let attributes = attributes.map(read_to_string_maybe_gz).transpose()?;
    let image_meta = read_to_string_maybe_gz(image_meta)?;
    ingest_vg(VgSources {
        objects: &objects,
        relationships: &relationships,
        attributes: attributes.as_deref(),
        image_meta: &image_meta,
    })
}

/// Intersects a box with the image; `None` when nothing with positive area remains.
fn clamp_box(x: f64, y: f64, w: f64, h: f64, width: u32, height: u32) -> Option<(BBox, bool)> {
    if ![x, y, w, h].iter().all(|v| v.is_finite()) || w <= 0.0 || h <= 0.0 {
        return None;
    }
    let x0 = x.max(0.0);
    let y0 = y.max(0.0);
    let x1 = (x + w).min(width as f64);
    let y1 = (y + h).min(height as f64);
    let bbox = BBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    };
    if bbox.w <= 0.0 || bbox.h <= 0.0 {
        return None;
    }
    let clamped = x0 != x || y0 != y || bbox.w != w || bbox.h != h;
    Some((bbox, clamped))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn sources<'a>(objects: &'a str, relationships: &'a str, meta: &'a str) -> VgSources<'a> {
        VgSources {
            objects,
            relationships,
            attributes: None,
            image_meta: meta,
        }
    }

    #[test]
    fn fixture_counts() {
        let (d, report) = ingest_vg(sources(OBJECTS, RELATIONSHIPS, IMAGE_META)).unwrap();
        assert_eq!(d.n_images(), 2);
        assert_eq!(d.n_instances(), 5);
        assert_eq!(d.n_triplets(), 3);
        assert_eq!(report.dropped_dangling_triplets, 0);
        assert!(d.validate().is_ok());
        assert_eq!(d.object_vocab.labels(), ["hat", "horse", "man", "nose"]);
        assert_eq!(d.predicate_vocab.labels(), ["has", "riding", "wears"]);
        assert_eq!(d.attribute_vocab.labels(), ["red", "tall"]);
        assert_eq!(d.object_vocab.count(d.object_vocab.id("man").unwrap()), 2);
        // "Tall" and "tall" normalize to the same attribute.
        assert_eq!(d.attribute_vocab.count(1), 2);
    }

    #[test]
    fn empty_arrays_give_empty_dataset() {
        let (d, report) = ingest_vg(sources("[]", "[]", "[]")).unwrap();
        assert_eq!(d.n_images(), 0);
        assert!(d.object_vocab.is_empty());
        assert!(d.predicate_vocab.is_empty());
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn dangling_triplet_is_dropped_and_counted() {
        let rels = r#"[{"image_id": 1, "relationships": [
            {"predicate": "on", "subject": {"object_id": 1}, "object": {"object_id": 999}},
            {"predicate": "near", "subject": {"object_id": 1}, "object": {"object_id": 2}}
        ]}]"#;
        let objs = r#"[{"image_id": 1, "objects": [
            {"object_id": 1, "x": 0, "y": 0, "w": 5, "h": 5, "names": ["a"]},
            {"object_id": 2, "x": 1, "y": 1, "w": 5, "h": 5, "names": ["b"]}
        ]}]"#;
        let meta = r#"[{"image_id": 1, "width": 10, "height": 10}]"#;
        let (d, report) = ingest_vg(sources(objs, rels, meta)).unwrap();
        assert_eq!(report.dropped_dangling_triplets, 1);
        assert_eq!(d.n_triplets(), 1);
        assert_eq!(d.predicate_vocab.labels(), ["near"]);
    }

    #[test]
    fn boxes_are_clamped_and_degenerate_ones_dropped() {
        let objs = r#"[{"image_id": 1, "objects": [
            {"object_id": 1, "x": -5, "y": 2, "w": 10, "h": 20, "names": ["a"]},
            {"object_id": 2, "x": 3, "y": 3, "w": 0, "h": 5, "names": ["b"]},
            {"object_id": 3, "x": 12, "y": 3, "w": 4, "h": 5, "names": ["c"]}
        ]}]"#;
        let meta = r#"[{"image_id": 1, "width": 10, "height": 10}]"#;
        let (d, report) = ingest_vg(sources(objs, "[]", meta)).unwrap();
        assert_eq!(report.clamped_boxes, 1);
        assert_eq!(report.dropped_degenerate_boxes, 2);
        let b = d.images[0].instances[0].bbox;
        assert_eq!((b.x, b.y, b.w, b.h), (0.0, 2.0, 5.0, 8.0));
    }

    #[test]
    fn attributes_file_is_merged() {
        let attrs =
            r#"[{"image_id": 2, "attributes": [{"object_id": 21, "attributes": ["Brown "]}]}]"#;
        let (d, _) = ingest_vg(VgSources {
            attributes: Some(attrs),
            ..sources(OBJECTS, RELATIONSHIPS, IMAGE_META)
        })
        .unwrap();
        let horse = d.images[1].instance(21).unwrap();
        let brown = d.attribute_vocab.id("brown").unwrap();
        assert!(horse.attribute_labels.contains(&brown));
    }

    #[test]
    fn malformed_json_reports_byte_offset() {
        let err = ingest_vg(sources("[{\"image_id\": 1,, }]", "[]", "[]")).unwrap_err();
        match err {
            Error::Parse { offset, line, .. } => {
                assert_eq!(line, 1);
                assert_eq!(offset, 16);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_names_the_field() {
        let objs = r#"[{"image_id": 1, "objects": [{"object_id": 1, "y": 0, "w": 5, "h": 5, "names": ["a"]}]}]"#;
        let err = ingest_vg(sources(
            objs,
            "[]",
            r#"[{"image_id": 1, "width": 9, "height": 9}]"#,
        ))
        .unwrap_err();
        match err {
            Error::Schema { message, .. } => assert!(message.contains("`x`"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingestion_is_idempotent() {
        let a = ingest_vg(sources(OBJECTS, RELATIONSHIPS, IMAGE_META)).unwrap();
        let b = ingest_vg(sources(OBJECTS, RELATIONSHIPS, IMAGE_META)).unwrap();
        assert_eq!(a, b);
    }
}
