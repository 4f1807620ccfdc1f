//! Brute-force surface extraction and all-pairs surface distances.

use quadseg::LabelVolume;

pub fn brute_surface(v: &LabelVolume, label: u8) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = v.dims();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if v.get(x, y, z) != label {
                    continue;
                }
                let c = [x as i64, y as i64, z as i64];
                let mut surface = false;
                for d in [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
                    let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
                    let inside = n[0] >= 0 && n[1] >= 0 && n[2] >= 0 && n[0] < nx as i64 && n[1] < ny as i64 && n[2] < nz as i64;
                    if !inside || v.get(n[0] as usize, n[1] as usize, n[2] as usize) != label {
                        surface = true;
                    }
                }
                if surface {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn dist2(a: [usize; 3], b: [usize; 3], s: [f64; 3]) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let d = (a[k] as f64 - b[k] as f64) * s[k];
        d2 += d * d;
    }
    d2
}

/// `(hausdorff, mad)` by comparing every surface voxel pair; `None` when
/// exactly one surface is empty.
pub fn brute_hd_mad(a: &LabelVolume, b: &LabelVolume, label: u8) -> Option<(f64, f64)> {
    let sa = brute_surface(a, label);
    let sb = brute_surface(b, label);
    match (sa.is_empty(), sb.is_empty()) {
        (true, true) => return Some((0.0, 0.0)),
        (false, false) => {}
        _ => return None,
    }
    let s = a.spacing();
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        let mut max = 0.0f64;
        let mut sum = 0.0;
        for &p in from {
            let best = to.iter().map(|&q| dist2(p, q, s)).fold(f64::INFINITY, f64::min).sqrt();
            max = max.max(best);
            sum += best;
        }
        (max, sum / from.len() as f64)
    };
    let (h1, m1) = directed(&sa, &sb);
    let (h2, m2) = directed(&sb, &sa);
    Some((h1.max(h2), 0.5 * (m1 + m2)))
}

/// Random 16³ label volume of overlapping boxes and balls with dyadic
/// anisotropic spacing (squared distances stay exact in f64).
pub fn random_volume(rng: &mut impl rand::Rng, spacing: [f64; 3]) -> LabelVolume {
    let geom = quadseg::Geometry::new([16, 16, 16], spacing, [0.0; 3]).unwrap();
    let mut v = LabelVolume::filled(geom, 0);
    let shapes = rng.gen_range(2..7);
    for _ in 0..shapes {
        let label = rng.gen_range(1..=4u8);
        let c: [i64; 3] = std::array::from_fn(|_| rng.gen_range(0..16));
        let r: [i64; 3] = std::array::from_fn(|_| rng.gen_range(1..6));
        let ball = rng.gen_bool(0.5);
        for z in 0..16i64 {
            for y in 0..16i64 {
                for x in 0..16i64 {
                    let d = [x - c[0], y - c[1], z - c[2]];
                    let inside = if ball {
                        (0..3).map(|k| (d[k] * d[k]) as f64 / (r[k] * r[k]) as f64).sum::<f64>() <= 1.0
                    } else {
                        (0..3).all(|k| d[k].abs() <= r[k])
                    };
                    if inside {
                        v.set(x as usize, y as usize, z as usize, label).unwrap();
                    }
                }
            }
        }
    }
    for _ in 0..rng.gen_range(0..20) {
        let p: [usize; 3] = std::array::from_fn(|_| rng.gen_range(0..16));
        v.set(p[0], p[1], p[2], rng.gen_range(0..=4u8)).unwrap();
    }
    v
}

/// Worst deviations from the brute-force oracle over `pairs` random pairs:
/// `(HD mismatches, max |ΔMAD|, compared label pairs)`.
pub fn metric_oracle_suite(seed: u64, pairs: usize) -> (usize, f64, usize) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let choices = [0.5, 0.75, 1.0, 1.25, 2.5, 3.0];
    let (mut hd_mismatch, mut mad_err, mut compared) = (0, 0.0f64, 0);
    for _ in 0..pairs {
        let spacing: [f64; 3] = std::array::from_fn(|_| choices[rng.gen_range(0..choices.len())]);
        let a = random_volume(&mut rng, spacing);
        let b = random_volume(&mut rng, spacing);
        for label in 1..=4u8 {
            let fast = quadseg::metrics::surface_distances(&a, &b, label).unwrap();
            let slow = brute_hd_mad(&a, &b, label);
            match (fast, slow) {
                (Some(f), Some((hd, mad))) => {
                    if f.hausdorff != hd {
                        hd_mismatch += 1;
                    }
                    mad_err = mad_err.max((f.mean_absolute - mad).abs());
                }
                (None, None) => {}
                _ => hd_mismatch += 1,
            }
            compared += 1;
        }
    }
    (hd_mismatch, mad_err, compared)
}

/// Dice of a 4³ cube against the same cube shifted by two voxels along x.
pub fn shifted_cube_dice() -> f64 {
    let geom = quadseg::Geometry::new([16, 16, 16], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
    let cube = |x0: usize| {
        LabelVolume::from_fn(geom.clone(), |x, y, z| {
            u8::from((x0..x0 + 4).contains(&x) && (4..8).contains(&y) && (4..8).contains(&z))
        })
        .unwrap()
    };
    quadseg::metrics::dice(&cube(4), &cube(6), 1).unwrap()
}
