use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use wildisp::colormap::{
    apply, fit, fit_masked, l1_residual, make_bins, soft_weights, BinAxis, ColorMapConfig, ColorMapModel, ColorMapOp,
    MapParams, Variant,
};
use wildisp::grad::{finite_diff_check, FdOptions, ParamSet, Tensor};
use wildisp::image::{MaskImage, RgbImage};
use wildisp::{rng, Error};

fn random_rgb(seed: u64, h: usize, w: usize) -> RgbImage {
    let mut r = rng::stream(seed, "cm-img", 0);
    RgbImage::from_fn(h, w, |_, _, _| r.gen_range(0.0..1.0))
}

fn cfg(variant: Variant, bins: usize) -> ColorMapConfig {
    ColorMapConfig {
        variant,
        bins,
        ..Default::default()
    }
}

#[test]
fn bins_partition_the_range() {
    let x = RgbImage::from_fn(1, 2, |_, _, xx| xx as f32);
    let k = make_bins(&x, 2).unwrap();
    for kj in &k {
        assert_eq!(kj, &vec![0.25, 0.75]);
    }
    let k1 = make_bins(&x, 1).unwrap();
    assert_eq!(k1[0], vec![0.5]);
    let c = RgbImage::filled(3, 3, 0.3);
    let kc = make_bins(&c, 5).unwrap();
    assert!(kc[1].iter().all(|&v| v == 0.3f32 as f64));
    assert!(make_bins(&c, 0).is_err());
}

#[test]
fn soft_weight_hand_example() {
    let x = RgbImage::zeros(1, 1);
    let k = [vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    let w = soft_weights(&x, &k, 0.25, BinAxis::OverBins);
    let e = (-4.0f64).exp();
    assert!((w.get(0, 0, 0) - 1.0 / (1.0 + e)).abs() < 1e-15);
    assert!((w.get(0, 0, 0) - 0.9820).abs() < 1e-4);
    assert!((w.get(0, 0, 1) - 0.0180).abs() < 1e-4);
    let mid = RgbImage::filled(1, 1, 0.5);
    let w = soft_weights(&mid, &k, 0.25, BinAxis::OverBins);
    assert_eq!(w.get(2, 0, 0), 0.5);
    assert_eq!(w.get(2, 0, 1), 0.5);
}

proptest! {
    #[test]
    fn soft_weights_are_normalized(seed in 0u64..500, bins in 1usize..20) {
        let x = random_rgb(seed, 5, 6);
        let k = make_bins(&x, bins).unwrap();
        let t = (1.0 / bins as f64).powi(2);
        let wb = soft_weights(&x, &k, t, BinAxis::OverBins);
        let wp = soft_weights(&x, &k, t, BinAxis::OverPixels);
        for j in 0..3 {
            for i in 0..30 {
                let s: f64 = (0..bins).map(|b| wb.get(j, i, b)).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
            for b in 0..bins {
                let s: f64 = (0..30).map(|i| wp.get(j, i, b)).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                prop_assert!((0..30).all(|i| wp.get(j, i, b) >= 0.0));
            }
        }
    }
}

#[test]
fn identity_pair_is_recovered() {
    for bins in [1, 5, 15] {
        for seed in 0..5 {
            let x = random_rgb(seed, 16, 16);
            let m = fit(&x, &x, &cfg(Variant::AffineDep, bins)).unwrap();
            let y = apply(&x, &m).unwrap();
            assert!(y.max_abs_diff(&x) < 1e-3, "B={bins}: {}", y.max_abs_diff(&x));
        }
    }
}

#[test]
fn constant_target_gives_constant_values() {
    let x = random_rgb(1, 8, 8);
    let c = RgbImage::filled(8, 8, 0.7);
    let m = fit(&x, &c, &cfg(Variant::ConstVal, 15)).unwrap();
    let MapParams::ConstVal(v) = &m.params else { panic!() };
    for vj in v {
        for &vb in vj {
            assert!((vb - 0.7f32 as f64).abs() < 1e-12);
        }
    }
}

/// Independent reference: explicit softmax over pixels, normal equations
/// with the same ridge, Gaussian elimination with partial pivoting.
fn oracle(x: &RgbImage, c: &RgbImage, bins: usize) -> Vec<Vec<[f64; 4]>> {
    oracle_keep(x, c, bins, |_| true)
}

/// Bins span all pixels; weights and sums use kept pixels only.
fn oracle_keep(x: &RgbImage, c: &RgbImage, bins: usize, keep: impl Fn(usize) -> bool) -> Vec<Vec<[f64; 4]>> {
    let n = x.pixels();
    let t = (1.0 / bins as f64).powi(2);
    let px = |j: usize, i: usize| x.data()[j * n + i] as f64;
    (0..3)
        .map(|j| {
            let lo = (0..n).map(|i| px(j, i)).fold(f64::INFINITY, f64::min);
            let hi = (0..n).map(|i| px(j, i)).fold(f64::NEG_INFINITY, f64::max);
            (0..bins)
                .map(|b| {
                    let k = lo + (b as f64 + 0.5) * (hi - lo) / bins as f64;
                    let e: Vec<f64> = (0..n)
                        .map(|i| if keep(i) { (-(px(j, i) - k).powi(2) / t).exp() } else { 0.0 })
                        .collect();
                    let z: f64 = e.iter().sum();
                    let mut a = [[0.0f64; 5]; 4];
                    for i in 0..n {
                        let wi = e[i] / z;
                        let row = [px(0, i), px(1, i), px(2, i), 1.0];
                        let y = c.data()[j * n + i] as f64;
                        for r in 0..4 {
                            for s in 0..4 {
                                a[r][s] += wi * row[r] * row[s];
                            }
                            a[r][4] += wi * row[r] * y;
                        }
                    }
                    for (r, row) in a.iter_mut().enumerate() {
                        row[r] += 1e-6 * 2.0;
                    }
                    for col in 0..4 {
                        let p = (col..4).max_by(|&u, &v| a[u][col].abs().total_cmp(&a[v][col].abs())).unwrap();
                        a.swap(col, p);
                        for r in col + 1..4 {
                            let f = a[r][col] / a[col][col];
                            for s in col..5 {
                                a[r][s] -= f * a[col][s];
                            }
                        }
                    }
                    let mut v = [0.0f64; 4];
                    for r in (0..4).rev() {
                        v[r] = (a[r][4] - (r + 1..4).map(|s| a[r][s] * v[s]).sum::<f64>()) / a[r][r];
                    }
                    v
                })
                .collect()
        })
        .collect()
}

#[test]
fn affine_dep_matches_normal_equation_oracle() {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (x, c) = (random_rgb(seed, 16, 16), random_rgb(seed + 1000, 16, 16));
        let m = fit(&x, &c, &cfg(Variant::AffineDep, 15)).unwrap();
        let MapParams::AffineDep(v) = &m.params else { panic!() };
        let o = oracle(&x, &c, 15);
        for j in 0..3 {
            for b in 0..15 {
                let scale = o[j][b].iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
                for e in 0..4 {
                    worst = worst.max((v[j][b][e] - o[j][b][e]).abs() / scale);
                }
            }
        }
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn masked_fit_matches_oracle_and_ignores_dropped_pixels() {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let (x, c) = (random_rgb(seed, 16, 16), random_rgb(seed + 1000, 16, 16));
        let mask = MaskImage::from_fn(16, 16, |y, xx| !(3..9).contains(&y) || !(5..12).contains(&xx));
        let m = fit_masked(&x, &c, &mask, &cfg(Variant::AffineDep, 5)).unwrap();
        let MapParams::AffineDep(v) = &m.params else { panic!() };
        let o = oracle_keep(&x, &c, 5, |i| mask.get(i / 16, i % 16));
        for j in 0..3 {
            for b in 0..5 {
                let scale = o[j][b].iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
                for e in 0..4 {
                    worst = worst.max((v[j][b][e] - o[j][b][e]).abs() / scale);
                }
            }
        }
        let mut rr = rng::stream(seed, "cm-garbage", 0);
        let garbage = RgbImage::from_fn(16, 16, |ch, y, xx| {
            if mask.get(y, xx) { c.data()[ch * 256 + y * 16 + xx] } else { rr.gen_range(0.0..1.0) }
        });
        for variant in [Variant::Linear3x3, Variant::ConstVal, Variant::AffineIndep, Variant::AffineDep] {
            let a = fit_masked(&x, &c, &mask, &cfg(variant, 5)).unwrap();
            let b = fit_masked(&x, &garbage, &mask, &cfg(variant, 5)).unwrap();
            assert_eq!(a.params, b.params, "{variant:?}");
        }
    }
    assert!(worst < 1e-8, "{worst}");
    let full = MaskImage::ones(16, 16);
    let (x, c) = (random_rgb(1, 16, 16), random_rgb(2, 16, 16));
    let a = fit_masked(&x, &c, &full, &cfg(Variant::AffineDep, 15)).unwrap();
    assert_eq!(a, fit(&x, &c, &cfg(Variant::AffineDep, 15)).unwrap());
}

#[test]
fn linear3x3_recovers_exact_matrix_and_scales() {
    let x = random_rgb(3, 10, 10);
    let m = [[0.9, 0.2, -0.1], [0.05, 1.1, 0.0], [-0.2, 0.1, 0.8]];
    let c = RgbImage::from_fn(10, 10, |j, y, xx| {
        (0..3).map(|k| m[j][k] as f32 * x.at(k, y, xx)).sum()
    });
    let model = fit(&x, &c, &cfg(Variant::Linear3x3, 15)).unwrap();
    assert!(apply(&x, &model).unwrap().max_abs_diff(&c) < 1e-5);
    let c2 = RgbImage::from_fn(10, 10, |j, y, xx| 2.5 * c.at(j, y, xx));
    let model2 = fit(&x, &c2, &cfg(Variant::Linear3x3, 15)).unwrap();
    let (MapParams::Linear3x3(a), MapParams::Linear3x3(b)) = (&model.params, &model2.params) else { panic!() };
    for r in 0..3 {
        for k in 0..3 {
            assert!((b[r][k] - 2.5 * a[r][k]).abs() < 1e-5);
        }
    }
}

#[test]
fn single_bin_is_a_global_affine_map() {
    let x = random_rgb(5, 12, 12);
    let c = random_rgb(6, 12, 12);
    let m = fit(&x, &c, &cfg(Variant::AffineDep, 1)).unwrap();
    let MapParams::AffineDep(v) = &m.params else { panic!() };
    let y = apply(&x, &m).unwrap();
    for j in 0..3 {
        let p = v[j][0];
        for i in 0..144 {
            let want = p[0] * x.plane(0)[i] as f64 + p[1] * x.plane(1)[i] as f64 + p[2] * x.plane(2)[i] as f64 + p[3];
            assert!((y.plane(j)[i] as f64 - want).abs() < 1e-6);
        }
    }
}

#[test]
fn nested_variants_order_residuals_on_random_pairs() {
    for seed in 0..30 {
        let (x, c) = (random_rgb(seed, 16, 16), random_rgb(seed + 500, 16, 16));
        let n = x.pixels() as f64;
        let r = |v| l1_residual(&apply(&x, &fit(&x, &c, &cfg(v, 15)).unwrap()).unwrap(), &c);
        let (rc, ri, rd) = (r(Variant::ConstVal), r(Variant::AffineIndep), r(Variant::AffineDep));
        assert!(rc + 1e-6 * n >= ri && ri + 1e-6 * n >= rd, "seed {seed}: {rc} {ri} {rd}");
    }
}

#[test]
fn permuting_pixels_permutes_output() {
    let (x, c) = (random_rgb(7, 6, 6), random_rgb(8, 6, 6));
    let perm: Vec<usize> = (0..36).map(|i| (i * 7 + 3) % 36).collect();
    let permute = |img: &RgbImage| {
        RgbImage::from_fn(6, 6, |j, y, xx| {
            let src = perm[y * 6 + xx];
            img.plane(j)[src]
        })
    };
    for v in [Variant::AffineDep, Variant::AffineIndep, Variant::ConstVal, Variant::Linear3x3] {
        let a = permute(&apply(&x, &fit(&x, &c, &cfg(v, 15)).unwrap()).unwrap());
        let (px, pc) = (permute(&x), permute(&c));
        let b = apply(&px, &fit(&px, &pc, &cfg(v, 15)).unwrap()).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-5, "{v}");
    }
}

#[test]
fn perturbing_one_pixel_is_local() {
    let (x, c) = (random_rgb(9, 6, 6), random_rgb(10, 6, 6));
    let m = fit(&x, &c, &cfg(Variant::AffineDep, 15)).unwrap();
    let mut data = x.data().to_vec();
    data[14] += 1e-4;
    let x2 = RgbImage::new(6, 6, data).unwrap();
    let (a, b) = (apply(&x, &m).unwrap(), apply(&x2, &m).unwrap());
    for j in 0..3 {
        for i in 0..36 {
            let d = (a.plane(j)[i] - b.plane(j)[i]).abs();
            if i == 14 {
                assert!(d < 1e-1);
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }
}

#[test]
fn color_blur_returns_blurred_target() {
    let (x, c) = (random_rgb(11, 12, 12), random_rgb(12, 12, 12));
    let m = fit(&x, &c, &cfg(Variant::ColorBlur, 15)).unwrap();
    let want = wildisp::image::gaussian_blur(&c, 9, 2.0).unwrap();
    assert_eq!(apply(&random_rgb(1, 12, 12), &m).unwrap(), want);
    assert!(matches!(apply(&random_rgb(1, 6, 6), &m), Err(Error::Dimension(_))));
}

#[test]
fn errors() {
    let m = ColorMapModel::unfitted(&ColorMapConfig::default()).unwrap();
    assert!(matches!(apply(&random_rgb(1, 4, 4), &m), Err(Error::State(_))));
    assert!(ColorMapOp::new(Arc::new(m)).is_err());
    let r = fit(&random_rgb(1, 4, 4), &random_rgb(1, 4, 5), &ColorMapConfig::default());
    assert!(matches!(r, Err(Error::Dimension(_))));
    let r = fit(&random_rgb(1, 1, 3), &random_rgb(1, 1, 3), &ColorMapConfig::default());
    assert!(matches!(r, Err(Error::Dimension(_))));
    assert!(fit(&random_rgb(1, 4, 4), &random_rgb(1, 4, 4), &cfg(Variant::AffineDep, 0)).is_err());
    assert!("affine_dep".parse::<Variant>().is_ok());
    assert!("affine".parse::<Variant>().is_err());
}

#[test]
fn json_round_trip() {
    let (x, c) = (random_rgb(13, 8, 8), random_rgb(14, 8, 8));
    for v in Variant::ALL {
        let m = fit(&x, &c, &cfg(v, 15)).unwrap();
        let back = ColorMapModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m, "{v}");
    }
    let m = fit(&x, &c, &cfg(Variant::AffineDep, 20)).unwrap();
    let s = m.to_json();
    assert!(!s.contains("[\n    0."));
    let back = ColorMapModel::from_json(&s).unwrap();
    assert!(apply(&x, &back).unwrap().max_abs_diff(&apply(&x, &m).unwrap()) < 1e-4);
    let un = ColorMapModel::unfitted(&ColorMapConfig::default()).unwrap();
    assert_eq!(ColorMapModel::from_json(&un.to_json()).unwrap(), un);
    assert!(ColorMapModel::from_json("{\"variant\":\"affine_dep\"}").is_err());
}

#[test]
fn op_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let x0 = random_rgb(seed, 5, 5);
        let c = random_rgb(seed + 50, 5, 5);
        let mut r = rng::stream(seed, "cm-w", 0);
        let wt = Tensor::<f64>::from_fn(&[3, 5, 5], |_| r.gen_range(-1.0..1.0));
        for v in [Variant::AffineDep, Variant::AffineIndep, Variant::ConstVal, Variant::Linear3x3] {
            let model = Arc::new(fit(&x0, &c, &cfg(v, 6)).unwrap());
            let mut p = ParamSet::new();
            p.insert("x", Tensor::<f64>::from_planar(&x0)).unwrap();
            let rep = finite_diff_check(
                &p,
                |g, b| {
                    let y = g.custom(Box::new(ColorMapOp::new(model.clone())?), &[b.get("x")?])?;
                    let w = g.constant(wt.clone());
                    let m = g.mul(y, w)?;
                    g.sum(m)
                },
                &FdOptions::default(),
            )
            .unwrap();
            assert!(rep.max_rel_err() < 1e-4, "{v}: {:?}", rep.entries[0]);
            let forward = {
                let mut g = wildisp::grad::Graph::<f32>::new();
                let xv = g.constant(Tensor::from_planar(&x0));
                let y = g.custom(Box::new(ColorMapOp::new(model.clone()).unwrap()), &[xv]).unwrap();
                g.value(y).to_planar().unwrap()
            };
            assert!(forward.max_abs_diff(&apply(&x0, &model).unwrap()) < 1e-6);
        }
    }
}
