use proptest::prelude::*;
use rand::Rng;
use wildisp::datapipe::*;
use wildisp::flow::{fb_mask, FbConfig};
use wildisp::image::{downsample_bilinear_2x, Planar, RawImage, RgbImage};
use wildisp::rawproc::gamma_process;
use wildisp::{rng, Error};

fn random_rgb(seed: u64, h: usize, w: usize) -> RgbImage {
    let mut r = rng::seeded(seed);
    RgbImage::from_fn(h, w, |_, _, _| r.gen())
}

fn smooth_rgb(h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |c, y, x| {
        let (fx, fy) = (x as f32 / w as f32, y as f32 / h as f32);
        0.5 + 0.3 * ((3.0 * fx + c as f32).sin() * (2.0 * fy).cos())
    })
}

#[test]
fn crop_grid_counts() {
    let o = sliding_crops(960, 960, 320, 160).unwrap();
    assert_eq!(o.len(), 25);
    assert_eq!(o[0], (0, 0));
    assert_eq!(*o.last().unwrap(), (640, 640));
    assert_eq!(sliding_crops(480, 480, 160, 80).unwrap().len(), 25);
    assert_eq!(sliding_crops(320, 320, 320, 160).unwrap(), vec![(0, 0)]);
    assert_eq!(sliding_crops(100, 100, 60, 50).unwrap().len(), 1);
    assert!(sliding_crops(100, 300, 200, 10).unwrap().is_empty());
    assert!(matches!(sliding_crops(10, 10, 4, 0), Err(Error::Parameter(_))));
}

proptest! {
    #[test]
    fn crop_origins_are_ordered_and_inside(h in 1usize..200, w in 1usize..200, crop in 1usize..80, stride in 1usize..60) {
        let o = sliding_crops(h, w, crop, stride).unwrap();
        if crop <= h && crop <= w {
            prop_assert_eq!(o.len(), ((h - crop) / stride + 1) * ((w - crop) / stride + 1));
        } else {
            prop_assert!(o.is_empty());
        }
        for pair in o.windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
        for &(r, c) in &o {
            prop_assert!(r + crop <= h && c + crop <= w);
        }
    }

    #[test]
    fn ncc_ignores_positive_affine_changes(seed in 0u64..1000, s in 0.1f32..5.0, t in -2.0f32..2.0) {
        let a = random_rgb(seed, 8, 9);
        let b = random_rgb(seed + 1, 8, 9);
        let b2 = b.map(|v| s * v + t);
        prop_assert!((ncc(&a, &b).unwrap() - ncc(&a, &b2).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn capture_crops_pair_raw_and_target() {
    let raw = RawImage::new(48, 48, vec![0.3; 4 * 48 * 48]).unwrap();
    let target = random_rgb(1, 96, 96);
    let crops = crop_capture(&raw, &target, 16, 8).unwrap();
    assert_eq!(crops.len(), 25);
    let c = &crops[7];
    assert_eq!((c.row, c.col), (8, 16));
    assert_eq!(c.raw.dims(), (4, 16, 16));
    assert_eq!(c.target.dims(), (3, 32, 32));
    assert_eq!(c.target.at(1, 0, 0), target.at(1, 16, 32));
    assert_eq!(c.ncc, pair_ncc(&c.raw, &c.target).unwrap());
    assert!(crop_capture(&raw, &random_rgb(1, 96, 94), 16, 8).is_err());
}

#[test]
fn ncc_known_values() {
    let a = random_rgb(3, 10, 12);
    assert!((ncc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let mean = a.data().iter().map(|&v| v as f64).sum::<f64>() / a.data().len() as f64;
    let neg = a.map(|v| (2.0 * mean) as f32 - v);
    assert!((ncc(&a, &neg).unwrap() + 1.0).abs() < 1e-6);
    assert_eq!(ncc(&a, &RgbImage::filled(10, 12, 0.4)).unwrap(), 0.0);
    assert!(ncc(&a, &random_rgb(1, 10, 11)).is_err());
}

#[test]
fn ncc_matches_direct_summation() {
    for seed in 0..20 {
        let (a, b) = (random_rgb(seed, 17, 13), random_rgb(seed + 50, 17, 13));
        let (x, y): (Vec<f64>, Vec<f64>) = a.data().iter().zip(b.data()).map(|(&p, &q)| (p as f64, q as f64)).unzip();
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
        let sxx: f64 = x.iter().map(|p| p * p).sum();
        let syy: f64 = y.iter().map(|q| q * q).sum();
        let oracle = (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        assert!((ncc(&a, &b).unwrap() - oracle).abs() < 1e-6);
    }
}

fn max_abs(h: &Homography, g: &Homography) -> f64 {
    (0..9).map(|i| (h[i / 3][i % 3] - g[i / 3][i % 3]).abs()).fold(0.0, f64::max)
}

fn pairs_under(h: &Homography, pts: &[[f64; 2]]) -> Vec<PointPair> {
    pts.iter().map(|&p| (p, apply_homography(h, p))).collect()
}

fn random_h(seed: u64) -> Homography {
    let mut r = rng::seeded(seed);
    let mut j = |a: f64| r.gen_range(-a..a);
    [
        [1.0 + j(0.2), j(0.2), j(20.0)],
        [j(0.2), 1.0 + j(0.2), j(20.0)],
        [j(1e-3), j(1e-3), 1.0],
    ]
}

fn corner_error(h: &Homography, g: &Homography, size: f64) -> f64 {
    [[0.0, 0.0], [size, 0.0], [0.0, size], [size, size]]
        .iter()
        .map(|&p| {
            let (a, b) = (apply_homography(h, p), apply_homography(g, p));
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

const ID: Homography = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[test]
fn dlt_exact_models() {
    let pts = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0], [3.0, 7.0]];
    assert!(max_abs(&homography_dlt(&pairs_under(&ID, &pts)).unwrap(), &ID) < 1e-10);
    let t = [[1.0, 0.0, 4.5], [0.0, 1.0, -2.25], [0.0, 0.0, 1.0]];
    assert!(max_abs(&homography_dlt(&pairs_under(&t, &pts[..4])).unwrap(), &t) < 1e-8);
}

#[test]
fn dlt_recovers_random_homographies() {
    for seed in 0..50 {
        let h = random_h(seed);
        let mut r = rng::stream(seed, "pts", 0);
        let pts: Vec<[f64; 2]> = (0..8).map(|_| [r.gen_range(0.0..100.0), r.gen_range(0.0..100.0)]).collect();
        let est = homography_dlt(&pairs_under(&h, &pts)).unwrap();
        assert!(corner_error(&h, &est, 100.0) < 1e-6, "seed {seed}");
        assert_eq!(est[2][2], 1.0);
    }
}

fn mul(a: &Homography, b: &Homography) -> Homography {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|l| a[i][l] * b[l][k]).sum();
        }
    }
    m
}

#[test]
fn dlt_is_similarity_equivariant() {
    for seed in 0..20 {
        let h = random_h(seed);
        let mut r = rng::stream(seed, "sim", 0);
        let (th, s): (f64, f64) = (r.gen_range(-3.0..3.0), r.gen_range(0.5..2.0));
        let sim = [
            [s * th.cos(), -s * th.sin(), r.gen_range(-9.0..9.0)],
            [s * th.sin(), s * th.cos(), r.gen_range(-9.0..9.0)],
            [0.0, 0.0, 1.0],
        ];
        let pts: Vec<[f64; 2]> = (0..6).map(|_| [r.gen_range(0.0..50.0), r.gen_range(0.0..50.0)]).collect();
        let pairs = pairs_under(&h, &pts);
        let conj: Vec<PointPair> = pairs
            .iter()
            .map(|(a, b)| (apply_homography(&sim, *a), apply_homography(&sim, *b)))
            .collect();
        let est = homography_dlt(&conj).unwrap();
        let expect = mul(&mul(&sim, &h), &invert_homography(&sim).unwrap());
        assert!(corner_error(&est, &expect, 50.0) < 1e-6, "seed {seed}");
    }
}

#[test]
fn dlt_rejects_degenerate_input() {
    let col: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 2.0 * i as f64]).collect();
    assert!(matches!(homography_dlt(&pairs_under(&ID, &col)), Err(Error::Degenerate(_))));
    let rep = vec![([1.0, 1.0], [1.0, 1.0]); 4];
    assert!(matches!(homography_dlt(&rep), Err(Error::Degenerate(_))));
    assert!(matches!(homography_dlt(&rep[..3]), Err(Error::Parameter(_))));
}

#[test]
fn homography_warps() {
    let img = random_rgb(4, 12, 14);
    assert_eq!(warp_homography(&img, &ID).unwrap(), img);
    let ramp = RgbImage::from_fn(10, 10, |_, y, x| (x + 10 * y) as f32 / 100.0);
    let t = [[1.0, 0.0, 2.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]];
    let out = warp_homography(&ramp, &t).unwrap();
    for y in 1..10 {
        for x in 2..10 {
            assert!((out.at(0, y, x) - ramp.at(0, y - 1, x - 2)).abs() < 1e-6);
        }
    }
    let sing = [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(matches!(warp_homography(&img, &sing), Err(Error::Degenerate(_))));
}

#[test]
fn homography_round_trip_on_smooth_images() {
    let img = smooth_rgb(64, 64);
    let h = [[1.02, 0.03, 1.5], [-0.02, 0.99, -1.0], [1e-4, -5e-5, 1.0]];
    let back = warp_homography(&warp_homography(&img, &h).unwrap(), &invert_homography(&h).unwrap()).unwrap();
    let inner = |p: &RgbImage| p.crop(8, 8, 48, 48).unwrap();
    assert!(inner(&back).max_abs_diff(&inner(&img)) < 2e-2);
}

#[test]
fn point_pairs_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pts.json");
    std::fs::write(&p, "[[0,0,1,2],[3,4,5,6.5]]").unwrap();
    let pairs = read_point_pairs(&p).unwrap();
    assert_eq!(pairs[1], ([3.0, 4.0], [5.0, 6.5]));
    std::fs::write(&p, "[[0,0,1]]").unwrap();
    assert!(matches!(read_point_pairs(&p), Err(Error::Json(_))));
}

#[test]
fn identity_mode_reproduces_downsampled_target() {
    let cfg = SynthConfig::identity();
    for i in 0..5 {
        let s = synth_sample(&cfg, 11, i).unwrap();
        assert_eq!(s.target, s.aligned);
        let vis = gamma_process(&s.raw).unwrap().into_rgb();
        let down = downsample_bilinear_2x(&s.target).unwrap();
        let err = vis.max_abs_diff(&down);
        assert!(err < 1e-2, "sample {i}: {err}");
    }
}

#[test]
fn ground_truth_flow_is_consistent_except_at_occluders() {
    let cfg = SynthConfig::default();
    let s = synth_sample(&cfg, 5, 0).unwrap();
    let m = fb_mask(&s.flow_fwd, &s.flow_bwd, &FbConfig::default()).unwrap();
    assert_eq!(m.count(), m.pixels());

    let cfg = SynthConfig { occluders: 2, ..Default::default() };
    let s = synth_sample(&cfg, 5, 1).unwrap();
    let m = fb_mask(&s.flow_fwd, &s.flow_bwd, &FbConfig::default()).unwrap();
    assert!(s.occlusion.count() > 0);
    for y in 0..m.height() {
        for x in 0..m.width() {
            assert_eq!(m.get(y, x), !s.occlusion.get(y, x), "({y}, {x})");
        }
    }
}

#[test]
fn aligned_target_matches_flow_warp() {
    let cfg = SynthConfig { edges: 0, ..Default::default() };
    let s = synth_sample(&cfg, 2, 3).unwrap();
    let back = wildisp::flow::warp(&s.target, &s.flow_fwd).unwrap();
    let inner = |p: &Planar| p.crop(10, 10, 60, 60).unwrap();
    assert!(inner(&back).max_abs_diff(&inner(&s.aligned)) < 0.05);
}

fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        out.push((e.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

#[test]
fn dataset_is_deterministic_and_split_by_capture() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig { height: 8, width: 8, val: 1, test: 2, ..Default::default() };
    synth_dataset(6, 9, &cfg, a.path()).unwrap();
    synth_dataset(6, 9, &cfg, b.path()).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));

    let m = Manifest::load(a.path().join("manifest.json")).unwrap();
    assert_eq!(m.records.len(), 6);
    assert_eq!(m.split(Split::Train).count(), 3);
    assert_eq!(m.split(Split::Val).count(), 1);
    assert_eq!(m.split(Split::Test).count(), 2);
    let s = m.load_sample(&m.records[0]).unwrap();
    assert_eq!(s.raw.dims(), (4, 8, 8));
    assert_eq!(s.target.dims(), (3, 16, 16));
    assert!(s.flow_fwd.is_some() && s.aligned.is_some());
}

#[test]
fn manifest_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { height: 4, width: 4, test: 1, ..Default::default() };
    let mut m = synth_dataset(3, 1, &cfg, dir.path()).unwrap();
    m.records[2].capture = m.records[0].capture.clone();
    assert!(matches!(m.validate(), Err(Error::Contract(_))));
    m.records[2].capture = "x".into();
    m.records[1].raw = "missing.raw4".into();
    assert!(matches!(m.validate(), Err(Error::Io { .. })));
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"records": [], "extra": 1}"#).unwrap();
    assert!(matches!(Manifest::load(&path), Err(Error::Json(_))));
}

#[test]
fn filtering_by_ncc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { height: 16, width: 16, ..SynthConfig::identity() };
    let m = synth_dataset(5, 3, &cfg, dir.path()).unwrap();
    let (kept, stats) = filter_pairs(&m, 0.5);
    assert_eq!((kept.records.len(), stats.rejected), (5, 0));
    let noisy = SynthConfig { height: 16, width: 16, ..Default::default() };
    let m = synth_dataset(5, 3, &noisy, dir.path().join("n")).unwrap();
    let (kept, stats) = filter_pairs(&m, 1.0);
    assert_eq!((kept.records.len(), stats.rejected, kept.rejected), (0, 5, 5));
}

#[test]
fn unrelated_targets_are_rejected() {
    let cfg = SynthConfig { height: 20, width: 20, ..Default::default() };
    let rejected = (0..100)
        .filter(|&i| {
            let s = synth_sample(&cfg, 77, i).unwrap();
            pair_ncc(&s.raw, &random_rgb(1000 + i, 40, 40)).unwrap() < 0.5
        })
        .count();
    assert!(rejected >= 99, "{rejected}");
}
