//! Hyperspectral cube: an H x W x B raster of reflectance values.
//!
//! On disk the cube is a JSON header plus a raw little-endian f32 blob in
//! band-sequential order; in memory it is f64 in row-major
//! (row, col, band) order.

use crate::container;
use crate::error::{GrnnError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Row-major (row, col, band), length `height * width * bands`.
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    byte_order: String,
    interleave: String,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        let cube = HsiCube {
            height,
            width,
            bands,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(GrnnError::InvalidInput(
                "cube dimensions must all be >= 1".into(),
            ));
        }
        let expect = self.height * self.width * self.bands;
        if self.data.len() != expect {
            return Err(GrnnError::InvalidInput(format!(
                "cube data length {} does not match {}x{}x{}",
                self.data.len(),
                self.height,
                self.width,
                self.bands
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(GrnnError::NonFinite {
                context: "cube data".into(),
                index: i,
            });
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Spectrum of the pixel at (row, col).
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.width + col) * self.bands;
        &self.data[base..base + self.bands]
    }

    /// Spectrum of the pixel with flat index `row * width + col`.
    #[inline]
    pub fn pixel_flat(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.bands..(idx + 1) * self.bands]
    }
}

/// Load a cube from its JSON header; the blob lives at `<name>.raw`.
pub fn load_cube(header_path: &Path) -> Result<HsiCube> {
    let header: CubeHeader = container::read_header(header_path)?;
    if header.dtype != "f32" || header.byte_order != "little" || header.interleave != "bsq" {
        return Err(GrnnError::BadHeader {
            path: header_path.to_path_buf(),
            reason: format!(
                "unsupported encoding (dtype={}, byte_order={}, interleave={})",
                header.dtype, header.byte_order, header.interleave
            ),
        });
    }
    if header.height == 0 || header.width == 0 || header.bands == 0 {
        return Err(GrnnError::BadHeader {
            path: header_path.to_path_buf(),
            reason: "zero dimension".into(),
        });
    }
    let n = header.height * header.width * header.bands;
    let bsq = container::read_raw_f32(header_path, n)?;

    // band-sequential -> (row, col, band)
    let plane = header.height * header.width;
    let mut data = vec![0.0; n];
    for b in 0..header.bands {
        for p in 0..plane {
            data[p * header.bands + b] = bsq[b * plane + p];
        }
    }
    let cube = HsiCube {
        height: header.height,
        width: header.width,
        bands: header.bands,
        data,
    };
    cube.validate()?;
    Ok(cube)
}

/// Save a cube as JSON header + band-sequential f32 blob.
pub fn save_cube(cube: &HsiCube, header_path: &Path) -> Result<()> {
    cube.validate()?;
    let header = CubeHeader {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        dtype: "f32".into(),
        byte_order: "little".into(),
        interleave: "bsq".into(),
    };
    container::write_header(header_path, &header)?;
    let plane = cube.height * cube.width;
    let mut bsq = vec![0.0; cube.data.len()];
    for p in 0..plane {
        for b in 0..cube.bands {
            bsq[b * plane + p] = cube.data[p * cube.bands + b];
        }
    }
    container::write_raw_f32(header_path, &bsq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smallest_well_formed_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let hp = dir.path().join("c.json");
        let cube = HsiCube::new(2, 2, 3, (0..12).map(|i| i as f64).collect()).unwrap();
        save_cube(&cube, &hp).unwrap();
        let back = load_cube(&hp).unwrap();
        assert_eq!(back.data.len(), 12);
        assert_eq!(back, cube);
    }

    #[test]
    fn truncated_raw_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let hp = dir.path().join("c.json");
        let cube = HsiCube::new(2, 2, 3, vec![0.0; 12]).unwrap();
        save_cube(&cube, &hp).unwrap();
        std::fs::write(container::raw_path(&hp), [0u8; 44]).unwrap();
        let err = load_cube(&hp).unwrap_err();
        assert!(matches!(err, GrnnError::SizeMismatch { .. }), "{err}");
    }

    #[test]
    fn non_finite_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let hp = dir.path().join("c.json");
        let cube = HsiCube {
            height: 1,
            width: 1,
            bands: 2,
            data: vec![1.0, 2.0],
        };
        save_cube(&cube, &hp).unwrap();
        // overwrite blob with a NaN
        let nan = f32::NAN.to_le_bytes();
        let one = 1.0f32.to_le_bytes();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&one);
        bytes.extend_from_slice(&nan);
        std::fs::write(container::raw_path(&hp), bytes).unwrap();
        assert!(matches!(
            load_cube(&hp).unwrap_err(),
            GrnnError::NonFinite { .. }
        ));
    }

    #[test]
    fn trivial_one_value_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let hp = dir.path().join("one.json");
        let cube = HsiCube::new(1, 1, 1, vec![0.0]).unwrap();
        save_cube(&cube, &hp).unwrap();
        assert_eq!(load_cube(&hp).unwrap(), cube);
    }

    #[test]
    fn random_cube_round_trip_bit_exact() {
        // values drawn as f32 so the f32 file width is lossless
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..8 * 8 * 4)
            .map(|_| rng.random::<f32>() as f64)
            .collect();
        let cube = HsiCube::new(8, 8, 4, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hp = dir.path().join("r.json");
        save_cube(&cube, &hp).unwrap();
        let back = load_cube(&hp).unwrap();
        assert_eq!(back.data, cube.data);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let cube = HsiCube::new(1, 1, 1, vec![0.0]).unwrap();
        let err = save_cube(&cube, Path::new("/nonexistent-dir/х/c.json")).unwrap_err();
        assert!(matches!(err, GrnnError::Io { .. }));
    }

    #[test]
    fn synthetic_64x64x32_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..64 * 64 * 32)
            .map(|_| rng.random::<f32>() as f64)
            .collect();
        let cube = HsiCube::new(64, 64, 32, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hp = dir.path().join("big.json");
        save_cube(&cube, &hp).unwrap();
        assert_eq!(load_cube(&hp).unwrap().data, cube.data);
    }
}
