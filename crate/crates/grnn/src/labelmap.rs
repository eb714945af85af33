//! Sparse pixel labels: (row, col, class) triples over an H x W image.
//!
//! Class ids are 1-based externally (CSV files, reports); most in-memory
//! consumers subtract 1. A `LabelMap` never holds duplicates.

use crate::error::{GrnnError, Result};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    /// 1-based class ids.
    pub num_classes: usize,
    /// Sorted by (row, col); unique pixels.
    entries: Vec<(usize, usize, usize)>,
}

impl LabelMap {
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        mut entries: Vec<(usize, usize, usize)>,
    ) -> Result<Self> {
        entries.sort_unstable();
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(GrnnError::Label(format!(
                    "duplicate label for pixel ({}, {})",
                    pair[0].0, pair[0].1
                )));
            }
        }
        for &(r, c, cls) in &entries {
            if r >= height || c >= width {
                return Err(GrnnError::Label(format!(
                    "pixel ({r}, {c}) out of range for {height}x{width}"
                )));
            }
            if cls < 1 || cls > num_classes {
                return Err(GrnnError::Label(format!(
                    "class {cls} out of range 1..={num_classes}"
                )));
            }
        }
        Ok(LabelMap {
            height,
            width,
            num_classes,
            entries,
        })
    }

    pub fn empty(height: usize, width: usize, num_classes: usize) -> Self {
        LabelMap {
            height,
            width,
            num_classes,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[(usize, usize, usize)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Class of a pixel, if labeled.
    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        self.entries
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(row, col)))
            .ok()
            .map(|i| self.entries[i].2)
    }

    /// Number of labeled pixels per class (index 0 = class 1).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &(_, _, cls) in &self.entries {
            counts[cls - 1] += 1;
        }
        counts
    }

    /// Entries grouped by class, each group sorted by (row, col).
    pub fn by_class(&self) -> BTreeMap<usize, Vec<(usize, usize)>> {
        let mut map: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for &(r, c, cls) in &self.entries {
            map.entry(cls).or_default().push((r, c));
        }
        map
    }
}

/// Load labels from a `row,col,class_id` CSV. A leading non-numeric line is
/// treated as a header. `num_classes` is the maximum class id seen.
pub fn load_labels(path: &Path, height: usize, width: usize) -> Result<LabelMap> {
    let text = fs::read_to_string(path).map_err(|e| GrnnError::io(path, e))?;
    let mut entries = Vec::new();
    let mut max_class = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(GrnnError::Label(format!(
                "{}:{}: expected `row,col,class_id`, got `{line}`",
                path.display(),
                lineno + 1
            )));
        }
        let parsed: Option<(usize, usize, usize)> = (|| {
            Some((
                fields[0].parse().ok()?,
                fields[1].parse().ok()?,
                fields[2].parse().ok()?,
            ))
        })();
        match parsed {
            Some((r, c, cls)) => {
                if cls < 1 {
                    return Err(GrnnError::Label(format!(
                        "{}:{}: class_id must be >= 1",
                        path.display(),
                        lineno + 1
                    )));
                }
                max_class = max_class.max(cls);
                entries.push((r, c, cls));
            }
            None if lineno == 0 => continue, // header line
            None => {
                return Err(GrnnError::Label(format!(
                    "{}:{}: malformed line `{line}`",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    LabelMap::new(height, width, max_class.max(1), entries)
}

/// Write labels as `row,col,class_id` lines (LF, no header).
pub fn save_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let mut out = String::new();
    for &(r, c, cls) in labels.entries() {
        out.push_str(&format!("{r},{c},{cls}\n"));
    }
    fs::write(path, out).map_err(|e| GrnnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn single_entry_infers_one_class() {
        let (_d, p) = write_tmp("0,0,1\n");
        let lm = load_labels(&p, 4, 4).unwrap();
        assert_eq!(lm.len(), 1);
        assert_eq!(lm.num_classes, 1);
        assert_eq!(lm.get(0, 0), Some(1));
    }

    #[test]
    fn out_of_range_row_rejected() {
        let (_d, p) = write_tmp("5,0,1\n");
        let err = load_labels(&p, 4, 4).unwrap_err();
        assert!(matches!(err, GrnnError::Label(_)), "{err}");
    }

    #[test]
    fn duplicate_pixel_rejected() {
        let (_d, p) = write_tmp("0,0,1\n1,1,2\n0,0,2\n");
        let err = load_labels(&p, 4, 4).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn zero_class_rejected() {
        let (_d, p) = write_tmp("0,0,0\n");
        assert!(load_labels(&p, 4, 4).is_err());
    }

    #[test]
    fn header_line_skipped_and_round_trip() {
        let (_d, p) = write_tmp("row,col,class_id\n1,2,3\n0,1,1\n");
        let lm = load_labels(&p, 4, 4).unwrap();
        assert_eq!(lm.len(), 2);
        assert_eq!(lm.num_classes, 3);

        let dir = tempfile::tempdir().unwrap();
        let p2 = dir.path().join("back.csv");
        save_labels(&lm, &p2).unwrap();
        let back = load_labels(&p2, 4, 4).unwrap();
        assert_eq!(back.entries(), lm.entries());
    }
}
