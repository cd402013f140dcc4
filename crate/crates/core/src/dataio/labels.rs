use std::fs::File;
use std::path::Path;

use indexmap::IndexMap;

use super::{io_err, DataError, EmbeddingSet, Result};

/// Ground-truth class index per image id, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTable {
    pub entries: IndexMap<String, usize>,
}

impl LabelTable {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut entries = IndexMap::new();
        for (id, class) in pairs {
            let id = id.into();
            if entries.contains_key(&id) {
                return Err(DataError::DuplicateImageId(id));
            }
            entries.insert(id, class);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.entries.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Per-class sample counts over `k` classes.
    pub fn class_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for &c in self.entries.values() {
            counts[c] += 1;
        }
        counts
    }

    /// Restricts the table to `ids`, keeping their given order.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let mut entries = IndexMap::with_capacity(ids.len());
        for id in ids {
            let c = self
                .get(id)
                .ok_or_else(|| DataError::UnknownImageId(id.clone()))?;
            entries.insert(id.clone(), c);
        }
        Ok(Self { entries })
    }

    pub fn check_classes(&self, k: usize) -> Result<()> {
        for (id, c) in self.iter() {
            if c >= k {
                return Err(DataError::Invalid(format!(
                    "image {id:?} has class index {c}, only {k} classes"
                )));
            }
        }
        Ok(())
    }

    /// Resolves every labeled id to its row in `set`, as `(image index, class)`.
    pub fn resolve(&self, set: &EmbeddingSet) -> Result<Vec<(usize, usize)>> {
        let index = set.id_index();
        self.iter()
            .map(|(id, c)| {
                index
                    .get(id)
                    .map(|&i| (i, c))
                    .ok_or_else(|| DataError::UnknownImageId(id.to_owned()))
            })
            .collect()
    }
}

/// Reads an `image_id,label` CSV, mapping label names through `class_names`.
pub fn read_labels(path: &Path, class_names: &[String]) -> Result<LabelTable> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| DataError::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "image_id" || &headers[1] != "label" {
        return Err(DataError::MalformedRow {
            line: 1,
            reason: format!("expected header `image_id,label`, got {headers:?}"),
        });
    }
    let mut entries = IndexMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DataError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("expected 2 fields, got {}", record.len()),
            });
        }
        let (id, name) = (&record[0], &record[1]);
        if id.is_empty() {
            return Err(DataError::MalformedRow {
                line,
                reason: "empty image id".into(),
            });
        }
        let class = class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::UnknownClassName {
                line,
                name: name.to_owned(),
            })?;
        if entries.insert(id.to_owned(), class).is_some() {
            return Err(DataError::DuplicateImageId(id.to_owned()));
        }
    }
    Ok(LabelTable { entries })
}

pub fn write_labels(table: &LabelTable, class_names: &[String], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let to_err = |e: csv::Error| DataError::Invalid(e.to_string());
    w.write_record(["image_id", "label"]).map_err(to_err)?;
    for (id, c) in table.iter() {
        let name = class_names
            .get(c)
            .ok_or_else(|| DataError::Invalid(format!("class index {c} out of range")))?;
        w.write_record([id, name.as_str()]).map_err(to_err)?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn names() -> Vec<String> {
        vec!["clear".into(), "foggy".into()]
    }

    fn read(text: &str) -> Result<LabelTable> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        fs::write(&p, text).unwrap();
        read_labels(&p, &names())
    }

    #[test]
    fn two_rows() {
        let t = read("image_id,label\nimg1,clear\nimg2,foggy\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("img2"), Some(1));
        assert_eq!(t.class_counts(2), vec![1, 1]);
    }

    #[test]
    fn unknown_class() {
        assert!(matches!(
            read("image_id,label\nimg1,snowy\n"),
            Err(DataError::UnknownClassName { line: 2, name }) if name == "snowy"
        ));
    }

    #[test]
    fn duplicate_id() {
        assert!(matches!(
            read("image_id,label\nimg1,clear\nimg1,foggy\n"),
            Err(DataError::DuplicateImageId(id)) if id == "img1"
        ));
    }

    #[test]
    fn malformed_rows() {
        assert!(matches!(read("id,label\nimg1,clear\n"), Err(DataError::MalformedRow { line: 1, .. })));
        assert!(matches!(
            read("image_id,label\nimg1,clear,extra\n"),
            Err(DataError::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(read("image_id,label\n,clear\n"), Err(DataError::MalformedRow { .. })));
    }

    #[test]
    fn quoted_ids_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let t = LabelTable::from_pairs([("a,b", 0), ("c", 1)]).unwrap();
        write_labels(&t, &names(), &p).unwrap();
        assert_eq!(read_labels(&p, &names()).unwrap(), t);
    }

    #[test]
    fn resolve_against_embeddings() {
        let set = EmbeddingSet::new(vec!["x".into(), "y".into()], 1, 2, 1, vec![0.; 4]).unwrap();
        let t = LabelTable::from_pairs([("y", 1), ("x", 0)]).unwrap();
        assert_eq!(t.resolve(&set).unwrap(), vec![(1, 1), (0, 0)]);
        let t = LabelTable::from_pairs([("z", 1)]).unwrap();
        assert!(matches!(t.resolve(&set), Err(DataError::UnknownImageId(_))));
    }
}
