//! Independent reference implementations used as test oracles.
//!
//! Everything here is written from first principles in `f64` and shares no
//! code with the library beyond plain data types.

#![allow(dead_code)]

pub mod gradcheck;

use irisloc::geometry::{Affine2, Circle, EllipseParams, Point};

/// Dense `f64` array with an NCHW-style shape.
#[derive(Debug, Clone)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Self {
        Self::new(shape, data.iter().map(|&v| f64::from(v)).collect())
    }
}

/// 3x3 cross-correlation, stride 1, zero padding 1, by direct summation.
pub fn conv3x3(x: &Arr, w: &Arr, b: &[f64]) -> Arr {
    let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let k = w.shape[0];
    let mut out = vec![0.0; n * k * h * wd];
    for ni in 0..n {
        for ki in 0..k {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[ki];
                    for ci in 0..c {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let sy = y as isize + dy as isize - 1;
                                let sx = xx as isize + dx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((ni * c + ci) * h + sy as usize) * wd + sx as usize];
                                let wv = w.data[((ki * c + ci) * 3 + dy) * 3 + dx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * k + ki) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    Arr::new(&[n, k, h, wd], out)
}

/// 2x2 max pool, stride 2, odd trailing rows/columns dropped.
pub fn maxpool2(x: &Arr) -> Arr {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| x.data[(p * h + 2 * y + dy) * w + 2 * xx + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    Arr::new(&[n, c, oh, ow], out)
}

pub fn relu(x: &Arr) -> Arr {
    Arr::new(&x.shape, x.data.iter().map(|v| v.max(0.0)).collect())
}

pub fn global_avg_pool(x: &Arr) -> Arr {
    let (n, c) = (x.shape[0], x.shape[1]);
    let hw = x.shape[2] * x.shape[3];
    let data = x
        .data
        .chunks(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    Arr::new(&[n, c], data)
}

/// `y[n, d] = sum_f x[n, f] w[d, f] + b[d]`.
pub fn linear(x: &Arr, w: &Arr, b: &[f64]) -> Arr {
    let (n, f) = (x.shape[0], x.shape[1]);
    let d = w.shape[0];
    let mut out = vec![0.0; n * d];
    for ni in 0..n {
        for di in 0..d {
            out[ni * d + di] = b[di]
                + (0..f)
                    .map(|fi| x.data[ni * f + fi] * w.data[di * f + fi])
                    .sum::<f64>();
        }
    }
    Arr::new(&[n, d], out)
}

/// Batch mean of per-row weighted absolute differences.
pub fn weighted_l1(pred: &Arr, target: &[f64], weights: &[f64]) -> f64 {
    let d = weights.len();
    let n = pred.data.len() / d;
    let total: f64 = pred
        .data
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (p, t))| weights[i % d] * (p - t).abs())
        .sum();
    total / n as f64
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + eps;
            let hi = f(&xp);
            xp[i] = orig - eps;
            let lo = f(&xp);
            xp[i] = orig;
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Hausdorff distance between two circles by sampling each boundary at
/// `n` points and taking the symmetric max-min over the samples.
pub fn sampled_circle_hausdorff(g: &Circle, c: &Circle, n: usize) -> f64 {
    let pts = |k: &Circle| -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                (k.x + k.r * t.cos(), k.y + k.r * t.sin())
            })
            .collect()
    };
    let (a, b) = (pts(g), pts(c));
    // Distance from a sample to the other circle is exact (|dist - r|), so
    // only one side is discretized per direction.
    let to_circle = |p: &(f64, f64), k: &Circle| ((p.0 - k.x).hypot(p.1 - k.y) - k.r).abs();
    let d1 = a.iter().map(|p| to_circle(p, c)).fold(0.0, f64::max);
    let d2 = b.iter().map(|p| to_circle(p, g)).fold(0.0, f64::max);
    d1.max(d2)
}

/// All-pairs point-set Hausdorff over sampled boundaries.
pub fn brute_point_hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p.0 - q.0).hypot(p.1 - q.1))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

pub fn circle_samples(k: &Circle, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            (k.x + k.r * t.cos(), k.y + k.r * t.sin())
        })
        .collect()
}

/// Even-odd ray casting: is `(px, py)` inside the closed polygon?
pub fn ray_cast_inside(poly: &[Point], px: f64, py: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > py) != (b.y > py) {
            let x = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
            if px < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Ellipse parameters of an affinely mapped circle, fitted from boundary
/// samples: the mapped points satisfy `(p - c)^T Q (p - c) = 1`; a least
/// squares fit of the conic coefficients recovers `Q`, whose eigen
/// decomposition gives the axes.
pub fn fit_mapped_circle(c: &Circle, map: &Affine2, samples: usize) -> EllipseParams {
    use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
    let pts: Vec<Point> = (0..samples)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / samples as f64;
            map.apply(Point::new(c.x + c.r * t.cos(), c.y + c.r * t.sin()))
        })
        .collect();
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / samples as f64;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / samples as f64;
    // A u^2 + 2B u v + C v^2 = 1 for centered u, v
    let a = DMatrix::from_fn(samples, 3, |i, j| {
        let (u, v) = (pts[i].x - cx, pts[i].y - cy);
        [u * u, 2.0 * u * v, v * v][j]
    });
    let rhs = DVector::from_element(samples, 1.0);
    let sol = a.svd(true, true).solve(&rhs, 1e-14).expect("least squares");
    let q = Matrix2::new(sol[0], sol[1], sol[1], sol[2]);
    let eig = SymmetricEigen::new(q);
    // smallest eigenvalue <-> major axis
    let (imin, imax) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let major = 1.0 / eig.eigenvalues[imin].sqrt();
    let minor = 1.0 / eig.eigenvalues[imax].sqrt();
    let dir = eig.eigenvectors.column(imin);
    // screen angle: counter-clockwise on screen with y pointing down
    let mut theta = (-dir[1]).atan2(dir[0]);
    while theta >= std::f64::consts::FRAC_PI_2 {
        theta -= std::f64::consts::PI;
    }
    while theta < -std::f64::consts::FRAC_PI_2 {
        theta += std::f64::consts::PI;
    }
    EllipseParams {
        x: cx,
        y: cy,
        a: major,
        b: minor,
        theta,
    }
}

/// Smallest difference between two axis angles modulo pi.
pub fn axis_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

/// Fraction of `errors` at or below each threshold, by direct counting.
pub fn ced_count(errors: &[f64], thresholds: &[f64]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|t| errors.iter().filter(|&&e| e <= *t).count() as f64 / errors.len() as f64)
        .collect()
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Does segment `a-b` meet the closed square `[x0, x0+1] x [y0, y0+1]`?
/// Liang-Barsky clipping of the parametric segment against the four slabs.
pub fn segment_touches_square(a: Point, b: Point, x0: f64, y0: f64) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-dx, a.x - x0),
        (dx, x0 + 1.0 - a.x),
        (-dy, a.y - y0),
        (dy, y0 + 1.0 - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    t0 <= t1
}

/// Pixel `(i, j)` belongs to a filled polygon if its center is inside by
/// ray casting or the outline touches the pixel's closed square.
pub fn polygon_pixel_oracle(poly: &[Point], i: usize, j: usize) -> bool {
    let (x, y) = (i as f64, j as f64);
    if ray_cast_inside(poly, x + 0.5, y + 0.5) {
        return true;
    }
    (0..poly.len()).any(|e| segment_touches_square(poly[e], poly[(e + 1) % poly.len()], x, y))
}
