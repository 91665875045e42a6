use std::path::Path;

use crate::error::{Error, Result};
use crate::hseb;
use crate::tensor::Array;

/// `N×D` evaluation embeddings with optional integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    vectors: Array,
    labels: Option<Vec<usize>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Array, labels: Option<Vec<usize>>) -> Result<Self> {
        let (n, d) = vectors.dims2()?;
        if n == 0 || d == 0 {
            return Err(Error::Empty(format!("embedding set is {n}x{d}")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::format(format!(
                    "{} labels for {n} embeddings",
                    l.len()
                )));
            }
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn vectors(&self) -> &Array {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::arg(format!("{what} needs labels")))
    }

    /// `max label + 1`, or `None` without labels.
    pub fn class_count(&self) -> Option<usize> {
        self.labels().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Subset in the given row order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let picked: Vec<&[f64]> = rows.iter().map(|&r| self.row(r)).collect();
        let vectors = Array::from_rows(&picked)?;
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        Self::new(vectors, labels)
    }
}

/// Reads an HSEB embedding file plus an optional labels file.
pub fn load_embeddings(path: &Path, labels: Option<&Path>) -> Result<EmbeddingSet> {
    let vectors = hseb::read(path)?;
    let labels = labels.map(hseb::read_labels).transpose()?;
    EmbeddingSet::new(vectors, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hseb::Dtype;

    #[test]
    fn load_known_file_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.hseb");
        let a = Array::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]).unwrap();
        hseb::write(&path, &a, Dtype::F64).unwrap();
        let lp = dir.path().join("l.txt");
        std::fs::write(&lp, "0\n1\n1\n").unwrap();
        let set = load_embeddings(&path, Some(&lp)).unwrap();
        assert_eq!(set.vectors(), &a);
        assert_eq!(set.labels(), Some(&[0, 1, 1][..]));
        assert_eq!(set.class_count(), Some(2));
    }

    #[test]
    fn empty_file_is_an_empty_set_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.hseb");
        hseb::write(&path, &Array::zeros(&[0, 2]), Dtype::F32).unwrap();
        assert!(matches!(load_embeddings(&path, None), Err(Error::Empty(_))));
    }

    #[test]
    fn label_count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.hseb");
        hseb::write(&path, &Array::zeros(&[3, 2]), Dtype::F64).unwrap();
        let lp = dir.path().join("l.txt");
        std::fs::write(&lp, "0\n1\n").unwrap();
        assert!(matches!(
            load_embeddings(&path, Some(&lp)),
            Err(Error::Format(_))
        ));
    }
}
