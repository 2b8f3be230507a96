use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::{bilinear_sample, ImageKind, Planar};

/// Row-major 3x3 projective transform mapping source to destination points.
pub type Homography = [[f64; 3]; 3];

/// `(source, destination)` correspondence in pixel coordinates.
pub type PointPair = ([f64; 2], [f64; 2]);

fn to_na(h: &Homography) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| h[r][c])
}

fn from_na(m: &Matrix3<f64>) -> Homography {
    let mut h = [[0.0; 3]; 3];
    for (r, row) in h.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    h
}

pub fn apply_homography(h: &Homography, p: [f64; 2]) -> [f64; 2] {
    let x = h[0][0] * p[0] + h[0][1] * p[1] + h[0][2];
    let y = h[1][0] * p[0] + h[1][1] * p[1] + h[1][2];
    let w = h[2][0] * p[0] + h[2][1] * p[1] + h[2][2];
    [x / w, y / w]
}

pub fn invert_homography(h: &Homography) -> Result<Homography> {
    let m = to_na(h);
    let det = m.determinant();
    let scale = m.norm().powi(3);
    if !det.is_finite() || det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("singular homography".into()));
    }
    let inv = m.try_inverse().ok_or_else(|| Error::Degenerate("singular homography".into()))?;
    Ok(from_na(&normalize(inv)))
}

fn normalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let s = m[(2, 2)];
    if s.abs() > 1e-12 {
        m / s
    } else {
        m
    }
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn hartley(points: impl Iterator<Item = [f64; 2]> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (cx, cy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (cx / n, cy / n);
    let d = points.map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(d > 1e-12) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / d;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Normalized direct linear transform from at least four correspondences.
/// The result is scaled so that `h[2][2] == 1` when that entry is nonzero.
pub fn homography_dlt(pairs: &[PointPair]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::param(format!("homography needs >= 4 point pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|(a, b)| !a.iter().chain(b).all(|v| v.is_finite())) {
        return Err(Error::Domain("non-finite point coordinates".into()));
    }
    let t1 = hartley(pairs.iter().map(|p| p.0))?;
    let t2 = hartley(pairs.iter().map(|p| p.1))?;
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in pairs.iter().enumerate() {
        let p = t1 * Vector3::new(s[0], s[1], 1.0);
        let q = t2 * Vector3::new(d[0], d[1], 1.0);
        let (x, y, u, v) = (p.x / p.z, p.y / p.z, q.x / q.z, q.y / q.z);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    // A well-posed system has exactly one (near) zero singular value.
    if sv(7) <= 1e-9 * sv(0) {
        return Err(Error::Degenerate("rank-deficient correspondences (collinear or repeated points)".into()));
    }
    let null = vt.row(order[8]);
    let hn = Matrix3::from_fn(|r, c| null[3 * r + c]);
    let t2_inv = t2.try_inverse().ok_or_else(|| Error::Degenerate("normalization".into()))?;
    Ok(from_na(&normalize(t2_inv * hn * t1)))
}

/// `out(p) = img(H^-1 p)`, bilinear with replicate borders.
pub fn warp_homography<I: ImageKind>(img: &I, h: &Homography) -> Result<I> {
    let inv = invert_homography(h)?;
    let p = img.planar();
    let (c, hh, ww) = p.dims();
    let mut out = Planar::zeros(c, hh, ww);
    for y in 0..hh {
        for x in 0..ww {
            let [sx, sy] = apply_homography(&inv, [x as f64, y as f64]);
            for ch in 0..c {
                out.set(ch, y, x, bilinear_sample(p, ch, sx as f32, sy as f32));
            }
        }
    }
    I::from_planar(out)
}

/// Point pairs file: a JSON list of `[x1, y1, x2, y2]`.
pub fn read_point_pairs(path: impl AsRef<Path>) -> Result<Vec<PointPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<[f64; 4]> = serde_json::from_str(&text)?;
    Ok(rows.into_iter().map(|r| ([r[0], r[1]], [r[2], r[3]])).collect())
}

