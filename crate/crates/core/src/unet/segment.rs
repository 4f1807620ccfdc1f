use rayon::prelude::*;

use super::UNet;
use crate::error::{Error, Result};
use crate::neural::{softmax, Mode, Tensor4};
use crate::volume::{LabelVolume, ProbVolume, Volume};
use crate::NUM_CLASSES;

const INFERENCE_BATCH: usize = 8;

/// Reflect-pads a row-major `h × w` plane at the bottom and right up to
/// `(ph, pw)`.
pub fn pad_reflect<T: Copy>(plane: &[T], h: usize, w: usize, ph: usize, pw: usize) -> Result<Vec<T>> {
    if ph < h || pw < w || (ph > h && ph - h >= h) || (pw > w && pw - w >= w) {
        return Err(Error::Shape(format!("cannot reflect-pad {h}×{w} to {ph}×{pw}")));
    }
    let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
    let mut out = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        let sy = reflect(y, h);
        for x in 0..pw {
            out.push(plane[sy * w + reflect(x, w)]);
        }
    }
    Ok(out)
}

pub(crate) fn padded_size(n: usize, divisor: usize) -> usize {
    n.div_ceil(divisor) * divisor
}

/// Per-pixel argmax over class-major probabilities; ties go to the lower label.
pub fn argmax_labels(probs: &[f32], pixels: usize) -> Vec<u8> {
    (0..pixels)
        .map(|i| {
            let mut best = 0;
            for k in 1..NUM_CLASSES {
                if probs[k * pixels + i] > probs[best * pixels + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Segments every axial slice in eval mode and re-stacks the result.
/// Intensities are normalized per volume before inference.
pub fn segment_volume(net: &UNet, v: &Volume) -> Result<(LabelVolume, ProbVolume)> {
    let [nx, ny, nz] = v.dims();
    let div = net.config.divisor();
    let (ph, pw) = (padded_size(ny, div), padded_size(nx, div));
    let norm = v.normalized();
    let plane = nx * ny;
    let chunks: Vec<Vec<usize>> = (0..nz).collect::<Vec<_>>().chunks(INFERENCE_BATCH).map(|c| c.to_vec()).collect();
    let outputs: Vec<Result<Vec<f32>>> = chunks
        .par_iter()
        .map(|zs| {
            let mut data = Vec::with_capacity(zs.len() * ph * pw);
            for &z in zs {
                data.extend(pad_reflect(&norm.data()[z * plane..(z + 1) * plane], ny, nx, ph, pw)?);
            }
            let x = Tensor4::from_vec([zs.len(), 1, ph, pw], data)?;
            let mut local = net.clone();
            let (logits, _) = local.forward(&x, Mode::Eval, 0)?;
            Ok(softmax(&logits).into_data())
        })
        .collect();
    let mut probs = ProbVolume::zeros(v.geom().clone());
    for (zs, out) in chunks.iter().zip(outputs) {
        let out = out?;
        let sample = NUM_CLASSES * ph * pw;
        for (j, &z) in zs.iter().enumerate() {
            let s = &out[j * sample..(j + 1) * sample];
            for k in 0..NUM_CLASSES {
                let dst = &mut probs.class_mut(k)[z * plane..(z + 1) * plane];
                for y in 0..ny {
                    let row = &s[k * ph * pw + y * pw..k * ph * pw + y * pw + nx];
                    dst[y * nx..(y + 1) * nx].copy_from_slice(row);
                }
            }
        }
    }
    let labels = argmax_labels(probs.values(), v.len());
    Ok((LabelVolume::new(v.geom().clone(), labels)?, probs))
}
