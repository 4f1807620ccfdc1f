use std::time::Instant;

use quadseg::deform::{apply_warp, random_field, Interp, RegistrationParams};
use quadseg::jlf::{jlf_segment, warp_atlases, JlfParams};
use quadseg::metrics::dice;
use quadseg::phantom::{derive_seed, generate_phantom, preset};
use quadseg::{LabelVolume, Volume};

fn subject(seed: u64) -> (Volume, LabelVolume) {
    let p = preset("young_male").unwrap().jittered(0.04, seed);
    generate_phantom(&p, [64, 64, 32], [3.0, 3.0, 6.0]).unwrap()
}

#[test]
fn identical_atlases_register_to_identity() {
    let (v, l) = subject(1);
    let warped = warp_atlases(&[(v.clone(), l.clone()), (v.clone(), l.clone())], &v, &RegistrationParams::default()).unwrap();
    for w in &warped {
        for k in 1..=4 {
            assert!(dice(&w.labels, &l, k).unwrap() >= 0.99);
        }
        assert!(w.labels.data().iter().all(|&x| x <= 4));
    }
    assert!(warp_atlases(&[(v.clone(), l)], &v, &RegistrationParams::default()).is_err());
}

#[test]
fn fuses_warped_atlases_on_phantoms() {
    let atlases: Vec<_> = (0..3).map(|i| subject(derive_seed(5, i))).collect();
    let (base, base_labels) = subject(derive_seed(5, 99));
    let field = random_field(base.geom(), [48.0; 3], 9.0, 3).unwrap();
    let target = apply_warp(&base, &field, Interp::Linear).unwrap();
    let truth = apply_warp(&base_labels, &field, Interp::Nearest).unwrap();
    let warped = warp_atlases(&atlases, &target, &RegistrationParams::default()).unwrap();
    let t = Instant::now();
    let (seg, _) = jlf_segment(&target, &warped, &JlfParams::default()).unwrap();
    eprintln!("fusion {:?}", t.elapsed());
    for k in 1..=4 {
        let d = dice(&seg, &truth, k).unwrap();
        assert!(d >= 0.85, "head {k}: Dice {d}");
    }
}
