//! Superpixel segmentations: a total partition of the image grid into
//! 4-connected, non-empty regions indexed 0..count-1.

use crate::container;
use crate::error::{GrnnError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelSegmentation {
    pub height: usize,
    pub width: usize,
    /// Number of superpixels.
    pub count: usize,
    /// Row-major superpixel index per pixel, each in `0..count`.
    pub assignment: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegHeader {
    height: usize,
    width: usize,
    count: usize,
    dtype: String,
    byte_order: String,
}

impl SuperpixelSegmentation {
    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.assignment[row * self.width + col]
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Pixel count per superpixel.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count];
        for &a in &self.assignment {
            sizes[a as usize] += 1;
        }
        sizes
    }

    /// Check the partition / non-empty / 4-connectivity invariants.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height, self.width);
        if self.assignment.len() != h * w {
            return Err(GrnnError::InvalidInput("assignment length mismatch".into()));
        }
        if self.count == 0 {
            return Err(GrnnError::InvalidInput("empty segmentation".into()));
        }
        if self.assignment.iter().any(|&a| a as usize >= self.count) {
            return Err(GrnnError::InvalidInput(
                "assignment index out of range".into(),
            ));
        }
        let sizes = self.sizes();
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(GrnnError::InvalidInput(format!("superpixel {k} is empty")));
        }
        // flood fill from the first pixel of each label must reach all of it
        let mut seen_component = vec![false; h * w];
        let mut first = vec![usize::MAX; self.count];
        for (i, &a) in self.assignment.iter().enumerate() {
            let a = a as usize;
            if first[a] == usize::MAX {
                first[a] = i;
            }
        }
        let mut stack = Vec::new();
        for k in 0..self.count {
            let mut reached = 0usize;
            stack.push(first[k]);
            seen_component[first[k]] = true;
            while let Some(p) = stack.pop() {
                reached += 1;
                let (r, c) = (p / w, p % w);
                let mut push = |q: usize| {
                    if !seen_component[q] && self.assignment[q] as usize == k {
                        seen_component[q] = true;
                        stack.push(q);
                    }
                };
                if r > 0 {
                    push(p - w);
                }
                if r + 1 < h {
                    push(p + w);
                }
                if c > 0 {
                    push(p - 1);
                }
                if c + 1 < w {
                    push(p + 1);
                }
            }
            if reached != sizes[k] {
                return Err(GrnnError::InvalidInput(format!(
                    "superpixel {k} is disconnected ({reached} of {} pixels reachable)",
                    sizes[k]
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, header_path: &Path) -> Result<()> {
        let header = SegHeader {
            height: self.height,
            width: self.width,
            count: self.count,
            dtype: "u32".into(),
            byte_order: "little".into(),
        };
        container::write_header(header_path, &header)?;
        container::write_raw_u32(header_path, &self.assignment)
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let header: SegHeader = container::read_header(header_path)?;
        let assignment = container::read_raw_u32(header_path, header.height * header.width)?;
        let seg = SuperpixelSegmentation {
            height: header.height,
            width: header.width,
            count: header.count,
            assignment,
        };
        seg.validate()?;
        Ok(seg)
    }

    /// Grayscale intensity image with superpixel boundaries burned in red,
    /// as PPM bytes. Intensity values are clamped to [0, 1].
    pub fn boundary_overlay(&self, intensity: &[f64]) -> Vec<u8> {
        let (h, w) = (self.height, self.width);
        let mut bytes = Vec::with_capacity(32 + 3 * h * w);
        bytes.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                let boundary = (c + 1 < w && self.assignment[p] != self.assignment[p + 1])
                    || (r + 1 < h && self.assignment[p] != self.assignment[p + w]);
                if boundary {
                    bytes.extend_from_slice(&[220, 30, 30]);
                } else {
                    let g = (intensity[p].clamp(0.0, 1.0) * 255.0).round() as u8;
                    bytes.extend_from_slice(&[g, g, g]);
                }
            }
        }
        bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_two_block_partition() {
        let seg = SuperpixelSegmentation {
            height: 2,
            width: 2,
            count: 2,
            assignment: vec![0, 1, 0, 1],
        };
        seg.validate().unwrap();
        assert_eq!(seg.sizes(), vec![2, 2]);
    }

    #[test]
    fn disconnected_label_rejected() {
        // label 0 at opposite corners only
        let seg = SuperpixelSegmentation {
            height: 2,
            width: 2,
            count: 2,
            assignment: vec![0, 1, 1, 0],
        };
        assert!(seg.validate().is_err());
    }

    #[test]
    fn empty_label_rejected() {
        let seg = SuperpixelSegmentation {
            height: 1,
            width: 2,
            count: 3,
            assignment: vec![0, 1],
        };
        assert!(seg.validate().is_err());
    }

    #[test]
    fn container_round_trip() {
        let seg = SuperpixelSegmentation {
            height: 2,
            width: 3,
            count: 2,
            assignment: vec![0, 0, 1, 0, 1, 1],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seg.json");
        seg.save(&p).unwrap();
        assert_eq!(SuperpixelSegmentation::load(&p).unwrap(), seg);
    }
}
