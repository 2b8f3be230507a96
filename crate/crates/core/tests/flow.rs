use proptest::prelude::*;
use rand::Rng;
use wildisp::flow::{
    decode_flo, encode_flo, fb_consistent, fb_mask, read_flo, synth_flow, warp, write_flo, FbConfig,
    FbSampling, FlowField, SynthFlow,
};
use wildisp::image::{MaskImage, RgbImage};
use wildisp::{rng, Error};

fn ramp(h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |c, _, x| (x as f32 + c as f32) / 10.0)
}

fn random_flow(r: &mut impl Rng, h: usize, w: usize, s: f32) -> FlowField {
    FlowField::from_fn(h, w, |_, _| (r.gen_range(-s..s), r.gen_range(-s..s))).unwrap()
}

#[test]
fn zero_flow_is_identity() {
    let img = ramp(5, 6);
    assert_eq!(warp(&img, &FlowField::zeros(5, 6)).unwrap(), img);
}

#[test]
fn unit_flow_shifts_with_replicated_border() {
    let img = ramp(4, 5);
    let out = warp(&img, &FlowField::constant(4, 5, 1.0, 0.0)).unwrap();
    for c in 0..3 {
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(out.at(c, y, x), img.at(c, y, (x + 1).min(4)));
            }
        }
    }
}

#[test]
fn half_pixel_flow_on_ramp_gives_midpoints() {
    let img = RgbImage::from_fn(3, 8, |_, _, x| x as f32 * 0.125);
    let out = warp(&img, &FlowField::constant(3, 8, 0.5, 0.0)).unwrap();
    for x in 0..7 {
        assert_eq!(out.at(0, 1, x), (x as f32 + 0.5) * 0.125);
    }
}

proptest! {
    #[test]
    fn integer_flow_is_index_shift(dx in -4i32..5, dy in -4i32..5, seed in 0u64..100) {
        let mut r = rng::seeded(seed);
        let img = RgbImage::from_fn(6, 7, |_, _, _| r.gen_range(0.0..1.0));
        let out = warp(&img, &FlowField::constant(6, 7, dx as f32, dy as f32)).unwrap();
        for c in 0..3 {
            for y in 0..6i32 {
                for x in 0..7i32 {
                    let sy = (y + dy).clamp(0, 5) as usize;
                    let sx = (x + dx).clamp(0, 6) as usize;
                    prop_assert_eq!(out.at(c, y as usize, x as usize), img.at(c, sy, sx));
                }
            }
        }
    }
}

#[test]
fn warp_dimension_mismatch() {
    assert!(matches!(warp(&ramp(4, 4), &FlowField::zeros(4, 5)), Err(Error::Dimension(_))));
}

#[test]
fn mask_worked_examples() {
    let cfg = FbConfig::default();
    let z = FlowField::zeros(3, 3);
    assert_eq!(fb_mask(&z, &z, &cfg).unwrap(), MaskImage::ones(3, 3));
    let f = FlowField::constant(3, 3, 2.5, -7.0);
    let b = FlowField::constant(3, 3, -2.5, 7.0);
    assert_eq!(fb_mask(&f, &b, &cfg).unwrap(), MaskImage::ones(3, 3));
    let f = FlowField::constant(3, 3, 10.0, 0.0);
    assert_eq!(fb_mask(&f, &z, &cfg).unwrap(), MaskImage::zeros(3, 3));
}

fn oracle(f: (f32, f32), b: (f32, f32)) -> bool {
    let l = (f.0 as f64 + b.0 as f64).powi(2) + (f.1 as f64 + b.1 as f64).powi(2);
    let rhs = 0.01 * ((f.0 as f64).powi(2) + (f.1 as f64).powi(2) + (b.0 as f64).powi(2) + (b.1 as f64).powi(2)) + 0.5;
    l < rhs
}

#[test]
fn mask_matches_direct_predicate_on_random_pairs() {
    let mut r = rng::seeded(42);
    for _ in 0..1000 {
        let f = random_flow(&mut r, 4, 4, 3.0);
        let b = FlowField::from_fn(4, 4, |y, x| {
            (-f.u(y, x) + r.gen_range(-1.0..1.0), -f.v(y, x) + r.gen_range(-1.0..1.0))
        })
        .unwrap();
        let m = fb_mask(&f, &b, &FbConfig::default()).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = oracle((f.u(y, x), f.v(y, x)), (b.u(y, x), b.v(y, x)));
                assert_eq!(m.get(y, x), want);
            }
        }
    }
}

proptest! {
    #[test]
    fn mask_is_symmetric_and_monotone(seed in 0u64..300, a2 in 0.0f64..3.0, a1 in 0.0f64..0.5) {
        let mut r = rng::seeded(seed);
        let (f, b) = (random_flow(&mut r, 5, 5, 2.0), random_flow(&mut r, 5, 5, 2.0));
        let cfg = FbConfig { alpha1: a1, alpha2: a2, ..Default::default() };
        let m = fb_mask(&f, &b, &cfg).unwrap();
        prop_assert_eq!(&m, &fb_mask(&b, &f, &cfg).unwrap());
        let more2 = fb_mask(&f, &b, &FbConfig { alpha2: a2 + 0.5, ..cfg.clone() }).unwrap();
        let more1 = fb_mask(&f, &b, &FbConfig { alpha1: a1 + 0.1, ..cfg.clone() }).unwrap();
        for (i, &v) in m.data().iter().enumerate() {
            if v == 1.0 {
                prop_assert_eq!(more2.data()[i], 1.0);
                prop_assert_eq!(more1.data()[i], 1.0);
            }
        }
    }
}

#[test]
fn predicate_is_computed_in_double_precision() {
    assert!(!fb_consistent((10.0, 0.0), (0.0, 0.0), 0.01, 0.5));
    assert!(fb_consistent((1.0, 0.0), (-1.0, 0.0), 0.0, 1e-30));
}

#[test]
fn flo_round_trip_and_size() {
    let mut r = rng::seeded(3);
    let f = random_flow(&mut r, 7, 9, 20.0);
    assert_eq!(decode_flo(&encode_flo(&f)).unwrap(), f);
    let one = encode_flo(&FlowField::zeros(1, 1));
    assert_eq!(one.len(), 20);
    assert_eq!(&one[..4], &202021.25f32.to_le_bytes());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.flo");
    write_flo(&p, &f).unwrap();
    assert_eq!(read_flo(&p).unwrap(), f);
}

#[test]
fn flo_layout_is_interleaved_row_major() {
    let f = FlowField::from_fn(2, 3, |y, x| (x as f32, 10.0 + y as f32)).unwrap();
    let b = encode_flo(&f);
    assert_eq!(i32::from_le_bytes(b[4..8].try_into().unwrap()), 3);
    assert_eq!(i32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
    let val = |k: usize| f32::from_le_bytes(b[12 + 4 * k..16 + 4 * k].try_into().unwrap());
    assert_eq!((val(2), val(3)), (1.0, 10.0));
    assert_eq!((val(6), val(7)), (0.0, 11.0));
}

#[test]
fn flo_rejects_bad_magic_and_truncation() {
    let mut b = encode_flo(&FlowField::zeros(2, 2));
    b[..4].copy_from_slice(&202021.26f32.to_le_bytes());
    assert!(matches!(decode_flo(&b), Err(Error::Format { offset: 0, .. })));
    let b = encode_flo(&FlowField::zeros(2, 2));
    assert!(matches!(decode_flo(&b[..b.len() - 2]), Err(Error::Format { .. })));
    assert!(decode_flo(&b[..6]).is_err());
}

#[test]
fn synthetic_translation() {
    let (f, b) = synth_flow(SynthFlow::Translation { dx: 3.0, dy: -2.0 }, 6, 8).unwrap();
    assert_eq!(f, FlowField::constant(6, 8, 3.0, -2.0));
    assert_eq!(b, FlowField::constant(6, 8, -3.0, 2.0));
    assert_eq!(fb_mask(&f, &b, &FbConfig::default()).unwrap(), MaskImage::ones(6, 8));
}

#[test]
fn unit_zoom_is_zero_flow_and_zero_zoom_fails() {
    let (f, b) = synth_flow(SynthFlow::Zoom { factor: 1.0 }, 5, 7).unwrap();
    assert_eq!(f, FlowField::zeros(5, 7));
    assert_eq!(b, FlowField::zeros(5, 7));
    assert!(matches!(synth_flow(SynthFlow::Zoom { factor: 0.0 }, 5, 7), Err(Error::Degenerate(_))));
}

#[test]
fn rotation_round_trip_on_smooth_image() {
    let (h, w) = (48, 48);
    let img = RgbImage::from_fn(h, w, |c, y, x| {
        let (fx, fy) = (x as f32 / w as f32, y as f32 / h as f32);
        0.5 + 0.25 * (3.0 * fx + c as f32).sin() * (2.0 * fy).cos()
    });
    let (f, b) = synth_flow(SynthFlow::Rotation { theta: 0.1 }, h, w).unwrap();
    let back = warp(&warp(&img, &f).unwrap(), &b).unwrap();
    let mut worst = 0.0f32;
    for c in 0..3 {
        for y in 12..36 {
            for x in 12..36 {
                worst = worst.max((back.at(c, y, x) - img.at(c, y, x)).abs());
            }
        }
    }
    assert!(worst < 2e-2, "{worst}");
    let m = fb_mask(&f, &b, &FbConfig::default()).unwrap();
    assert!(m.get(24, 24));
    let md = fb_mask(&f, &b, &FbConfig { sampling: FbSampling::Displaced, ..Default::default() }).unwrap();
    assert!((12..36).all(|y| (12..36).all(|x| md.get(y, x))));
}

#[test]
fn displaced_sampling_reads_bwd_at_target() {
    let f = FlowField::constant(1, 4, 1.0, 0.0);
    let b = FlowField::from_fn(1, 4, |_, x| (if x == 2 { -1.0 } else { 5.0 }, 0.0)).unwrap();
    let cfg = FbConfig { sampling: FbSampling::Displaced, ..Default::default() };
    let m = fb_mask(&f, &b, &cfg).unwrap();
    assert!(m.get(0, 1));
    assert!(!m.get(0, 0));
}

#[test]
fn upsampled_flow_doubles_displacement() {
    let f = FlowField::constant(2, 3, 1.5, -0.5);
    let u = f.upsample2();
    assert_eq!(u, FlowField::constant(4, 6, 3.0, -1.0));
}
