use proptest::prelude::*;
use rand::Rng;
use wildisp::grad::{finite_diff_check, FdOptions, Graph, Tensor};
use wildisp::image::{CoordMap, Planar, RawImage, RgbImage};
use wildisp::rawproc::{gamma_process, gamma_process_with, preprocess_forward, GammaConfig, PreprocessConfig, PreprocessNet, ProcessedRaw};
use wildisp::{rng, Error};

fn raw_from(planes: [Vec<f32>; 4], h: usize, w: usize) -> RawImage {
    RawImage::new(h, w, planes.concat()).unwrap()
}

#[test]
fn zero_raw_maps_to_zero() {
    let x = gamma_process(&RawImage::zeros(3, 5)).unwrap();
    assert!(x.data().iter().all(|&v| v == 0.0));
    assert_eq!(x.dims(), (3, 3, 5));
}

#[test]
fn red_plane_uses_its_max_above_floor() {
    let x = raw_from([vec![0.2, 0.8], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]], 1, 2);
    let p = gamma_process(&x).unwrap();
    let want = 0.25f64.powf(1.0 / 2.2);
    assert!((p.at(0, 0, 0) as f64 - want).abs() < 1e-6);
    assert!((want - 0.5325).abs() < 1e-4);
    assert_eq!(p.at(0, 0, 1), 1.0);
}

#[test]
fn red_plane_floor_branch() {
    let x = raw_from([vec![0.1, 0.05], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]], 1, 2);
    let p = gamma_process(&x).unwrap();
    let want = (0.1f64 / 0.4).powf(1.0 / 2.2);
    assert!((p.at(0, 0, 0) as f64 - want).abs() < 1e-6);
}

#[test]
fn second_green_is_ignored_and_floors_apply() {
    let x = raw_from([vec![0.0], vec![0.5], vec![0.9], vec![0.5]], 1, 1);
    let p = gamma_process(&x).unwrap();
    assert!((p.at(1, 0, 0) as f64 - 0.5f64.powf(1.0 / 2.2)).abs() < 1e-6);
    let want_b = (0.5f64 * 1.4).powf(1.0 / 2.2);
    assert!((p.at(2, 0, 0) as f64 - want_b).abs() < 1e-6);
    let y = raw_from([vec![0.0], vec![0.5], vec![0.0], vec![0.5]], 1, 1);
    assert_eq!(gamma_process(&y).unwrap(), p);
}

#[test]
fn green_below_unit_floor_is_not_stretched() {
    let x = raw_from([vec![0.0], vec![0.25], vec![0.0], vec![0.0]], 1, 1);
    let p = gamma_process(&x).unwrap();
    assert!((p.at(1, 0, 0) as f64 - 0.25f64.powf(1.0 / 2.2)).abs() < 1e-6);
}

#[test]
fn constants_are_overridable() {
    let cfg = GammaConfig {
        gamma: 1.0,
        floors: [1.0, 1.0, 1.0],
    };
    let x = raw_from([vec![0.3], vec![0.2], vec![0.0], vec![0.1]], 1, 1);
    let p = gamma_process_with(&x, &cfg).unwrap();
    assert_eq!([p.at(0, 0, 0), p.at(1, 0, 0), p.at(2, 0, 0)], [0.3, 0.2, 0.1]);
    let bad = GammaConfig { gamma: 0.0, ..cfg };
    assert!(gamma_process_with(&x, &bad).is_err());
}

#[test]
fn processed_raw_rejects_out_of_range() {
    assert!(matches!(ProcessedRaw::from_rgb(RgbImage::filled(1, 1, 1.5)), Err(Error::Domain(_))));
}

fn random_raw(seed: u64, h: usize, w: usize, scale: f32) -> RawImage {
    let mut r = rng::seeded(seed);
    RawImage::new(h, w, (0..4 * h * w).map(|_| r.gen_range(0.0..scale)).collect()).unwrap()
}

proptest! {
    #[test]
    fn gamma_is_monotone(seed in 0u64..1000, scale in 0.05f32..3.0) {
        let a = random_raw(seed, 4, 5, scale);
        let mut r = rng::seeded(seed + 7);
        let bump: Vec<f32> = a.data().iter().map(|&v| v + r.gen_range(0.0..0.3)).collect();
        let b = RawImage::new(4, 5, bump).unwrap();
        let (pa, pb) = (gamma_process(&a).unwrap(), gamma_process(&b).unwrap());
        // Monotone when both are normalized by the same divisor.
        let cfg = GammaConfig::default();
        for (c, plane) in [0usize, 1, 3].into_iter().enumerate() {
            let div_a = a.plane(plane).iter().copied().fold(0.0f32, f32::max).max(cfg.floors[c]);
            let div_b = b.plane(plane).iter().copied().fold(0.0f32, f32::max).max(cfg.floors[c]);
            if div_a == div_b {
                for (x, y) in pa.plane(c).iter().zip(pb.plane(c)) {
                    prop_assert!(x <= y);
                }
            }
        }
        // With a common divisor, Γ is pointwise monotone.
        let cfg1 = GammaConfig { floors: [10.0; 3], ..cfg };
        let (qa, qb) = (gamma_process_with(&a, &cfg1).unwrap(), gamma_process_with(&b, &cfg1).unwrap());
        for (x, y) in qa.data().iter().zip(qb.data()) {
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn plane_max_maps_to_at_most_one(seed in 0u64..1000, scale in 0.05f32..3.0) {
        let x = random_raw(seed, 3, 3, scale);
        let p = gamma_process(&x).unwrap();
        let floors = GammaConfig::default().floors;
        for (c, plane) in [0usize, 1, 3].into_iter().enumerate() {
            let m = x.plane(plane).iter().copied().fold(0.0f32, f32::max);
            let pm = p.plane(c).iter().copied().fold(0.0f32, f32::max);
            prop_assert!(pm <= 1.0);
            if m >= floors[c] {
                prop_assert_eq!(pm, 1.0);
            }
        }
    }
}

#[test]
fn zero_eta_is_identity() {
    let net = PreprocessNet::new(PreprocessConfig::default()).unwrap();
    let x = gamma_process(&random_raw(3, 6, 7, 1.0)).unwrap();
    let out = preprocess_forward(&x, &CoordMap::new(6, 7), &net, &net.zeros()).unwrap();
    assert_eq!(out, *x);
}

#[test]
fn output_shape_matches_input() {
    let net = PreprocessNet::new(PreprocessConfig::default()).unwrap();
    let params = net.init(&mut rng::seeded(1)).unwrap();
    for (h, w) in [(1, 1), (4, 9), (8, 8)] {
        let x = gamma_process(&random_raw(h as u64, h, w, 1.0)).unwrap();
        let out = preprocess_forward(&x, &CoordMap::new(h, w), &net, &params).unwrap();
        assert_eq!(out.dims(), (3, h, w));
    }
}

#[test]
fn coordinate_mismatch_is_dimension_error() {
    let net = PreprocessNet::new(PreprocessConfig::default()).unwrap();
    let x = gamma_process(&RawImage::zeros(4, 4)).unwrap();
    let r = preprocess_forward(&x, &CoordMap::new(4, 5), &net, &net.zeros());
    assert!(matches!(r, Err(Error::Dimension(_))));
}

#[test]
fn eta_gradients_match_finite_differences() {
    for seed in 0..5 {
        let net = PreprocessNet::new(PreprocessConfig { hidden: 4, ..Default::default() }).unwrap();
        let params = net.init::<f64>(&mut rng::stream(seed, "eta", 0)).unwrap();
        let x = gamma_process(&random_raw(seed, 5, 6, 1.0)).unwrap();
        let xt = Tensor::<f64>::from_planar(&x);
        let ct = Tensor::<f64>::from_planar(&CoordMap::new(5, 6));
        let mut r = rng::stream(seed, "weights", 0);
        let wt = Tensor::<f64>::from_fn(&[3, 5, 6], |_| r.gen_range(-1.0..1.0));
        let rep = finite_diff_check(
            &params,
            |g: &mut Graph<f64>, b| {
                let xv = g.constant(xt.clone());
                let cv = g.constant(ct.clone());
                let out = net.forward(g, b, xv, cv)?;
                let w = g.constant(wt.clone());
                let m = g.mul(out, w)?;
                let s = g.sum(m)?;
                g.mul(s, s)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(rep.max_rel_err() < 1e-4, "{:?}", rep.entries[0]);
        assert!(rep.checked() > 100);
    }
}

#[test]
fn planar_round_trip_through_tensor() {
    let p = Planar::from_fn(2, 3, 4, |c, y, x| (c * 12 + y * 4 + x) as f32);
    assert_eq!(Tensor::<f32>::from_planar(&p).to_planar().unwrap(), p);
}
