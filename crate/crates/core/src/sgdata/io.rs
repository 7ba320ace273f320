//! Canonical on-disk format.
//!
//! `<name>.jsonl`: line 1 is a header `{"format":"sgds","version":1,"n_images":N}`,
//! then one [`ImageRecord`] per line. Vocabularies and split tags live in the
//! sidecar `<name>.jsonl.vocab.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, ImageId, ImageRecord, Split, Vocab};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "sgds";
pub const FORMAT_VERSION: u64 = 1;
const VOCAB_FORMAT_NAME: &str = "sgds-vocab";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u64,
    n_images: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u64,
    objects: Vocab,
    predicates: Vocab,
    attributes: Vocab,
    split_tags: Option<BTreeMap<ImageId, Split>>,
}

pub fn vocab_sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".vocab.json");
    PathBuf::from(name)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let io_err = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        n_images: dataset.images.len(),
    };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.write_all(b"\n").map_err(io_err)?;
    for img in &dataset.images {
        serde_json::to_writer(&mut out, img).expect("record serializes");
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;

    let sidecar_path = vocab_sidecar_path(path);
    let sidecar = Sidecar {
        format: VOCAB_FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        objects: dataset.object_vocab.clone(),
        predicates: dataset.predicate_vocab.clone(),
        attributes: dataset.attribute_vocab.clone(),
        split_tags: dataset.split_tags.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&sidecar_path, json + "\n").map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let line_err = |line: usize, message: String| Error::Line {
        path: display.clone(),
        line,
        message,
    };

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(line_err(1, "missing header".into())),
    };
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| line_err(1, format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(line_err(1, format!("unknown format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }

    let mut images = Vec::with_capacity(header.n_images);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| line_err(line_no, e.to_string()))?;
        let record: ImageRecord =
            serde_json::from_str(&line).map_err(|e| line_err(line_no, e.to_string()))?;
        images.push(record);
    }
    if images.len() != header.n_images {
        return Err(line_err(
            images.len() + 2,
            format!(
                "truncated: header announces {} records, found {}",
                header.n_images,
                images.len()
            ),
        ));
    }

    let sidecar_path = vocab_sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Line {
        path: sidecar_path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if sidecar.format != VOCAB_FORMAT_NAME {
        return Err(Error::invalid(format!(
            "{}: unknown format {:?}",
            sidecar_path.display(),
            sidecar.format
        )));
    }
    if sidecar.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: sidecar.version,
            expected: FORMAT_VERSION,
        });
    }

    let dataset = Dataset {
        images,
        object_vocab: sidecar.objects,
        predicate_vocab: sidecar.predicates,
        attribute_vocab: sidecar.attributes,
        split_tags: sidecar.split_tags,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::two_image_dataset;
    use super::*;
    use crate::sgdata::split_dataset;

    #[test]
    fn fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let (train, _) = split_dataset(&two_image_dataset(), 0.5, 7).unwrap();
        for d in [two_image_dataset(), train] {
            save_dataset(&d, &path).unwrap();
            assert_eq!(load_dataset(&path).unwrap(), d);
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        save_dataset(&Dataset::default(), &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), Dataset::default());
    }

    #[test]
    fn corrupted_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&two_image_dataset(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replacen('{', "#", 1);
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Line { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_at_line_boundary_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&two_image_dataset(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().take(2).collect();
        std::fs::write(&path, kept.join("\n") + "\n").unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Line { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&two_image_dataset(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"version\":1", "\"version\":2", 1)).unwrap();
        assert!(matches!(
            load_dataset(&path).unwrap_err(),
            Error::Version {
                found: 2,
                expected: 1
            }
        ));
    }
}
