//! Dense classification maps and PPM rendering.

use crate::container;
use crate::error::{GrnnError, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// How a pixel's label came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// No label assigned.
    None,
    /// Pixel was in the supplied ground-truth set.
    GroundTruth,
    /// Label produced by the classifier / propagation.
    Predicted,
    /// No information reached the pixel's superpixel; tie-rule default.
    Fallback,
}

impl Provenance {
    fn to_u32(self) -> u32 {
        match self {
            Provenance::None => 0,
            Provenance::GroundTruth => 1,
            Provenance::Predicted => 2,
            Provenance::Fallback => 3,
        }
    }

    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            0 => Provenance::None,
            1 => Provenance::GroundTruth,
            2 => Provenance::Predicted,
            3 => Provenance::Fallback,
            other => {
                return Err(GrnnError::InvalidInput(format!(
                    "bad provenance code {other}"
                )))
            }
        })
    }
}

/// H x W map of class ids in `0..=num_classes`, where 0 = unclassified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationMap {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Row-major class ids, `0..=num_classes`.
    pub labels: Vec<u32>,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapHeader {
    height: usize,
    width: usize,
    num_classes: usize,
    dtype: String,
    byte_order: String,
    encoding: String,
}

impl ClassificationMap {
    pub fn unclassified(height: usize, width: usize, num_classes: usize) -> Self {
        ClassificationMap {
            height,
            width,
            num_classes,
            labels: vec![0; height * width],
            provenance: vec![Provenance::None; height * width],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.height * self.width
            || self.provenance.len() != self.labels.len()
        {
            return Err(GrnnError::InvalidInput("map shape mismatch".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize > self.num_classes) {
            return Err(GrnnError::InvalidInput(format!(
                "label {bad} exceeds class count {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Mark pixels present in `labels` as ground-truth provenance.
    pub fn stamp_ground_truth(&mut self, labels: &crate::labelmap::LabelMap) {
        for &(r, c, _) in labels.entries() {
            self.provenance[r * self.width + c] = Provenance::GroundTruth;
        }
    }

    /// Serialize as JSON header + packed u32 raster
    /// (class id in the low 24 bits, provenance in the high byte).
    pub fn save(&self, header_path: &Path) -> Result<()> {
        self.validate()?;
        let header = MapHeader {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            dtype: "u32".into(),
            byte_order: "little".into(),
            encoding: "class_lo24_provenance_hi8".into(),
        };
        container::write_header(header_path, &header)?;
        let packed: Vec<u32> = self
            .labels
            .iter()
            .zip(&self.provenance)
            .map(|(&l, &p)| l | (p.to_u32() << 24))
            .collect();
        container::write_raw_u32(header_path, &packed)
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let header: MapHeader = container::read_header(header_path)?;
        if header.encoding != "class_lo24_provenance_hi8" {
            return Err(GrnnError::BadHeader {
                path: header_path.to_path_buf(),
                reason: format!("unsupported encoding {}", header.encoding),
            });
        }
        let packed = container::read_raw_u32(header_path, header.height * header.width)?;
        let mut labels = Vec::with_capacity(packed.len());
        let mut provenance = Vec::with_capacity(packed.len());
        for v in packed {
            labels.push(v & 0x00ff_ffff);
            provenance.push(Provenance::from_u32(v >> 24)?);
        }
        let map = ClassificationMap {
            height: header.height,
            width: header.width,
            num_classes: header.num_classes,
            labels,
            provenance,
        };
        map.validate()?;
        Ok(map)
    }
}

/// Write the map as a binary PPM (P6), one image pixel per map pixel.
///
/// `palette[0]` colors unclassified pixels; class q uses `palette[q]`.
pub fn emit_map(map: &ClassificationMap, palette: &[[u8; 3]], path: &Path) -> Result<()> {
    map.validate()?;
    if palette.len() < map.num_classes + 1 {
        return Err(GrnnError::InvalidInput(format!(
            "palette has {} colors, need {}",
            palette.len(),
            map.num_classes + 1
        )));
    }
    let mut bytes = Vec::with_capacity(32 + 3 * map.labels.len());
    bytes.extend_from_slice(format!("P6\n{} {}\n255\n", map.width, map.height).as_bytes());
    for &l in &map.labels {
        bytes.extend_from_slice(&palette[l as usize]);
    }
    fs::write(path, bytes).map_err(|e| GrnnError::io(path, e))
}

/// Evenly spaced hue wheel with black at index 0; usable as an `emit_map`
/// palette for up to `n` classes.
pub fn default_palette(n: usize) -> Vec<[u8; 3]> {
    let mut palette = vec![[0u8, 0, 0]];
    for i in 0..n {
        let h = (i as f64) / (n.max(1) as f64) * 360.0;
        palette.push(hsv_to_rgb(h, 0.85, 0.95));
    }
    palette
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_black_pixel() {
        let map = ClassificationMap::unclassified(1, 1, 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ppm");
        emit_map(&map, &[[0, 0, 0], [255, 0, 0], [0, 255, 0]], &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes, b"P6\n1 1\n255\n\x00\x00\x00");
    }

    #[test]
    fn two_pixels_red_then_green() {
        let mut map = ClassificationMap::unclassified(2, 1, 2);
        map.labels = vec![1, 2];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ppm");
        emit_map(&map, &[[0, 0, 0], [255, 0, 0], [0, 255, 0]], &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes, b"P6\n1 2\n255\n\xff\x00\x00\x00\xff\x00");
    }

    #[test]
    fn short_palette_rejected() {
        let map = ClassificationMap::unclassified(1, 1, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ppm");
        assert!(emit_map(&map, &[[0, 0, 0], [1, 1, 1]], &p).is_err());
    }

    #[test]
    fn map_container_round_trip() {
        let mut map = ClassificationMap::unclassified(2, 3, 4);
        map.labels = vec![0, 1, 2, 3, 4, 1];
        map.provenance = vec![
            Provenance::None,
            Provenance::GroundTruth,
            Provenance::Predicted,
            Provenance::Fallback,
            Provenance::Predicted,
            Provenance::Predicted,
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("map.json");
        map.save(&p).unwrap();
        assert_eq!(ClassificationMap::load(&p).unwrap(), map);
    }
}
