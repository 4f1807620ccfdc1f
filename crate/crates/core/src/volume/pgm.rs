use std::fs;
use std::path::Path;

use super::Slice2D;
use crate::error::Result;
use crate::MAX_LABEL;

fn write_p5(path: &Path, nx: usize, ny: usize, pixels: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Binary PGM of an intensity slice, min-max windowed to `0..=255`.
pub fn write_pgm(path: impl AsRef<Path>, slice: &Slice2D<f32>) -> Result<()> {
    let (lo, hi) = slice
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let pixels: Vec<u8> = slice
        .data
        .iter()
        .map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 })
        .collect();
    write_p5(path.as_ref(), slice.dims[0], slice.dims[1], &pixels)
}

/// Binary PGM of a label slice with labels spread evenly over the gray range.
pub fn write_label_pgm(path: impl AsRef<Path>, slice: &Slice2D<u8>) -> Result<()> {
    let step = 255 / MAX_LABEL;
    let pixels: Vec<u8> = slice.data.iter().map(|&l| l * step).collect();
    write_p5(path.as_ref(), slice.dims[0], slice.dims[1], &pixels)
}
