//! 64-bit difference hash.
//!
//! The image is reduced to a 9x8 grid of grayscale cells with an area-weighted
//! box filter, then each row contributes 8 bits: bit set iff a cell is strictly
//! brighter than its right neighbour. Bits are packed row-major starting at the
//! most significant bit.
//!
//! Luma uses the Rec. 601 weights scaled by 1000 (299, 587, 114) and the box
//! filter works in integer sub-pixel units, so every step is exact and hashes
//! are identical on every platform.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub const GRID_COLS: usize = 9;
pub const GRID_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn distance(self, other: PerceptualHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("expected 16 hex digits, got {0:?}")]
pub struct BadHashHex(pub String);

impl FromStr for PerceptualHash {
    type Err = BadHashHex;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 {
            return Err(BadHashHex(s.to_string()));
        }
        u64::from_str_radix(s, 16).map(PerceptualHash).map_err(|_| BadHashHex(s.to_string()))
    }
}

impl From<PerceptualHash> for String {
    fn from(h: PerceptualHash) -> String {
        h.to_string()
    }
}

impl TryFrom<String> for PerceptualHash {
    type Error = BadHashHex;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Rec. 601 luma scaled by 1000.
#[inline]
pub fn luma_milli(p: &image::Rgb<u8>) -> u64 {
    299 * u64::from(p[0]) + 587 * u64::from(p[1]) + 114 * u64::from(p[2])
}

/// Overlap weights between source pixels and output cells along one axis.
///
/// Coordinates are scaled by `cells`, so pixel `i` spans `[i*cells, (i+1)*cells)`
/// and cell `c` spans `[c*len, (c+1)*len)`. Every cell has total weight `len`.
fn axis_weights(len: usize, cells: usize) -> Vec<Vec<(usize, u64)>> {
    (0..cells)
        .map(|c| {
            let lo = c * len;
            let hi = (c + 1) * len;
            let first = lo / cells;
            let last = (hi - 1) / cells;
            (first..=last)
                .filter_map(|i| {
                    let a = lo.max(i * cells);
                    let b = hi.min((i + 1) * cells);
                    (b > a).then_some((i, (b - a) as u64))
                })
                .collect()
        })
        .collect()
}

/// Box-filtered 9x8 grid of luma sums. All cells cover the same area, so
/// sums compare exactly like means.
pub fn reduce_to_grid(img: &RgbImage) -> [[u128; GRID_COLS]; GRID_ROWS] {
    let (w, h) = (img.width() as usize, img.height() as usize);
    assert!(w >= 1 && h >= 1, "image must be non-empty");
    let wx = axis_weights(w, GRID_COLS);
    let wy = axis_weights(h, GRID_ROWS);

    let mut rows = vec![[0u128; GRID_COLS]; h];
    for (y, row_sums) in rows.iter_mut().enumerate() {
        for (c, weights) in wx.iter().enumerate() {
            row_sums[c] = weights
                .iter()
                .map(|&(x, wgt)| u128::from(luma_milli(img.get_pixel(x as u32, y as u32))) * u128::from(wgt))
                .sum();
        }
    }

    let mut grid = [[0u128; GRID_COLS]; GRID_ROWS];
    for (r, weights) in wy.iter().enumerate() {
        for c in 0..GRID_COLS {
            grid[r][c] = weights.iter().map(|&(y, wgt)| rows[y][c] * u128::from(wgt)).sum();
        }
    }
    grid
}

/// Packs the row gradients of a 9x8 grid.
pub fn hash_grid<T: PartialOrd>(grid: &[[T; GRID_COLS]; GRID_ROWS]) -> PerceptualHash {
    let mut bits = 0u64;
    for row in grid {
        for c in 0..GRID_COLS - 1 {
            bits = (bits << 1) | u64::from(row[c] > row[c + 1]);
        }
    }
    PerceptualHash(bits)
}

pub fn dhash(img: &RgbImage) -> PerceptualHash {
    hash_grid(&reduce_to_grid(img))
}

/// Decodes `bytes` (first frame for animations) and hashes the result.
pub fn dhash_bytes(bytes: &[u8]) -> Result<PerceptualHash, image::ImageError> {
    let img = image::load_from_memory(bytes)?.to_rgb8();
    if img.width() == 0 || img.height() == 0 {
        return Err(image::ImageError::Parameter(image::error::ParameterError::from_kind(
            image::error::ParameterErrorKind::DimensionMismatch,
        )));
    }
    Ok(dhash(&img))
}

/// Hamming similarity `1 - distance/64`. Exact in `f64`: both the division by
/// 64 and the subtraction are representable without rounding.
pub fn similarity(a: PerceptualHash, b: PerceptualHash) -> f64 {
    1.0 - f64::from(a.distance(b)) / 64.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_hashes_to_zero() {
        let img = RgbImage::from_pixel(37, 23, image::Rgb([128, 128, 128]));
        assert_eq!(dhash(&img), PerceptualHash(0));
        let tiny = RgbImage::from_pixel(1, 1, image::Rgb([9, 200, 3]));
        assert_eq!(dhash(&tiny), PerceptualHash(0));
    }

    #[test]
    fn strictly_decreasing_rows_set_every_bit() {
        let img = RgbImage::from_fn(9, 8, |x, _| {
            let v = 250 - 30 * x as u8;
            image::Rgb([v, v, v])
        });
        assert_eq!(dhash(&img), PerceptualHash(u64::MAX));
        // Larger image whose 9x8 reduction still decreases strictly.
        let wide = RgbImage::from_fn(90, 16, |x, _| {
            let v = 255 - (x as u8 * 2);
            image::Rgb([v, 0, 0])
        });
        assert_eq!(dhash(&wide), PerceptualHash(u64::MAX));
    }

    #[test]
    fn axis_weights_cover_each_cell_equally() {
        for len in 1..40 {
            for w in axis_weights(len, 9) {
                assert_eq!(w.iter().map(|x| x.1).sum::<u64>(), len as u64);
            }
        }
    }

    #[test]
    fn similarity_examples() {
        let h = PerceptualHash(0x0123_4567_89ab_cdef);
        assert_eq!(similarity(h, h), 1.0);
        assert_eq!(similarity(h, PerceptualHash(!h.0)), 0.0);
        assert_eq!(similarity(h, PerceptualHash(h.0 ^ 0b11_1111)), 0.90625);
        assert_eq!(similarity(h, PerceptualHash(h.0 ^ 0b111_1111)), 0.890625);
    }

    #[test]
    fn hex_round_trip() {
        let h = PerceptualHash(0xfe);
        assert_eq!(h.to_string(), "00000000000000fe");
        assert_eq!("00000000000000fe".parse::<PerceptualHash>().unwrap(), h);
        assert!("fe".parse::<PerceptualHash>().is_err());
    }

    #[test]
    fn undecodable_bytes_error() {
        assert!(dhash_bytes(b"definitely not an image").is_err());
    }
}
