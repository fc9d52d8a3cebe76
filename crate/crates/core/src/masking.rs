//! Eyelid polygon masks and interquartile anomaly masks.

use thiserror::Error;

use crate::geometry::{Circle, LandmarkSet, Point};
use crate::raster::{GrayF, Mask};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("eyelid point {0} is not finite")]
    NonFinite(usize),
    #[error("mask is {mask_w}x{mask_h} but the image is {image_w}x{image_h}")]
    SizeMismatch {
        mask_w: usize,
        mask_h: usize,
        image_w: usize,
        image_h: usize,
    },
    #[error("Tukey factor must be non-negative, got {0}")]
    BadFactor(f64),
}

/// Standard Tukey fence factor.
pub const TUKEY_FACTOR: f64 = 1.5;

/// Polygon vertex order over `P1..P8`: upper chain left to right, then the
/// lower chain right to left.
pub const POLYGON_ORDER: [usize; 8] = [0, 2, 3, 4, 1, 7, 6, 5];

#[derive(Debug, Clone)]
pub struct EyelidMask {
    pub mask: Mask,
    /// Two non-adjacent edges cross; the fill still follows the even-odd rule.
    pub self_intersecting: bool,
    /// Zero-area outline; the mask is empty.
    pub degenerate: bool,
}

fn polygon(points: &[Point; 8]) -> [Point; 8] {
    POLYGON_ORDER.map(|i| points[i])
}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn self_intersects(poly: &[Point]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in i + 1..n {
            // skip shared-vertex neighbours
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Marks every pixel whose closed unit square the segment touches, walking
/// the grid cell by cell.
fn mark_segment(mask: &mut Mask, a: Point, b: Point) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut set = |i: i64, j: i64| {
        if (0..w).contains(&i) && (0..h).contains(&j) {
            mask.set(i as usize, j as usize, true);
        }
    };
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (mut i, mut j) = (a.x.floor() as i64, a.y.floor() as i64);
    let (ie, je) = (b.x.floor() as i64, b.y.floor() as i64);
    let step_i = if dx > 0.0 { 1 } else { -1 };
    let step_j = if dy > 0.0 { 1 } else { -1 };
    let next = |p: f64, d: f64, cell: i64| -> f64 {
        if d == 0.0 {
            f64::INFINITY
        } else {
            let edge = if d > 0.0 { cell as f64 + 1.0 } else { cell as f64 };
            (edge - p) / d
        }
    };
    let mut t_x = next(a.x, dx, i);
    let mut t_y = next(a.y, dy, j);
    let dt_x = if dx == 0.0 { f64::INFINITY } else { 1.0 / dx.abs() };
    let dt_y = if dy == 0.0 { f64::INFINITY } else { 1.0 / dy.abs() };
    set(i, j);
    // one extra step of slack for rounding in the crossing parameters
    let limit = (ie - i).abs() + (je - j).abs() + 2;
    for _ in 0..limit {
        // stop once the next grid crossing lies beyond the segment end
        if t_x.min(t_y) > 1.0 + 1e-12 {
            break;
        }
        if (t_x - t_y).abs() < 1e-12 {
            // passes through a grid corner: the segment touches all four
            // cells around it
            set(i + step_i, j);
            set(i, j + step_j);
            i += step_i;
            j += step_j;
            t_x += dt_x;
            t_y += dt_y;
        } else if t_x < t_y {
            i += step_i;
            t_x += dt_x;
        } else {
            j += step_j;
            t_y += dt_y;
        }
        set(i, j);
    }
    // an axis-aligned segment lying on a grid line touches both cell rows
    // (or columns) along its whole length
    let span = |u: f64, v: f64| {
        let (lo, hi) = (u.min(v), u.max(v));
        let first = lo.floor() as i64 - i64::from(lo == lo.floor());
        first..=hi.floor() as i64
    };
    if dy == 0.0 && a.y == a.y.floor() {
        let row = a.y as i64;
        for ci in span(a.x, b.x) {
            set(ci, row);
            set(ci, row - 1);
        }
    }
    if dx == 0.0 && a.x == a.x.floor() {
        let col = a.x as i64;
        for cj in span(a.y, b.y) {
            set(col, cj);
            set(col - 1, cj);
        }
    }
    // endpoints lying exactly on a cell edge also touch the neighbour
    for p in [a, b] {
        let (fi, fj) = (p.x.floor(), p.y.floor());
        let on_x = p.x == fi;
        let on_y = p.y == fj;
        if on_x {
            set(fi as i64 - 1, fj as i64);
        }
        if on_y {
            set(fi as i64, fj as i64 - 1);
        }
        if on_x && on_y {
            set(fi as i64 - 1, fj as i64 - 1);
        }
    }
}

/// Fills the closed eyelid polygon with the even-odd rule at pixel centers
/// and adds every pixel the outline passes through.
pub fn eyelid_mask(points: &[Point; 8], width: usize, height: usize) -> Result<EyelidMask, MaskError> {
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(MaskError::NonFinite(i));
    }
    let poly = polygon(points);
    let mut mask = Mask::filled(width, height, false);
    let span = poly
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0f64, f64::max);
    if signed_area(&poly).abs() <= 1e-12 * span * span {
        return Ok(EyelidMask {
            mask,
            self_intersecting: false,
            degenerate: true,
        });
    }
    let mut xs = Vec::with_capacity(8);
    for j in 0..height {
        let y = j as f64 + 0.5;
        xs.clear();
        for e in 0..8 {
            let (a, b) = (poly[e], poly[(e + 1) % 8]);
            // half-open in y so shared vertices count once
            if (a.y <= y) != (b.y <= y) {
                xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // pixel centers i + 0.5 in [x0, x1)
            let i0 = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let i1 = (pair[1] - 0.5).ceil().clamp(0.0, width as f64) as usize;
            for i in i0..i1 {
                mask.set(i, j, true);
            }
        }
    }
    for e in 0..8 {
        mark_segment(&mut mask, poly[e], poly[(e + 1) % 8]);
    }
    Ok(EyelidMask {
        mask,
        self_intersecting: self_intersects(&poly),
        degenerate: false,
    })
}

/// Linear-interpolation quantile of sorted data (`(n - 1) p` positioning).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Closed interval of accepted intensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fences {
    pub q1: f64,
    pub q3: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Fences {
    pub fn from_values(values: &mut [f64], factor: f64) -> Option<Fences> {
        values.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(values, 0.25)?;
        let q3 = quantile_sorted(values, 0.75)?;
        let iqr = q3 - q1;
        Some(Fences {
            q1,
            q3,
            lo: q1 - factor * iqr,
            hi: q3 + factor * iqr,
        })
    }

    pub fn accepts(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskStatus {
    Ok,
    /// No pixel lies in the analysed region; the mask is all false.
    EmptyRegion,
}

#[derive(Debug, Clone)]
pub struct IqrMask {
    /// Usable iris pixels: region and inside the fences.
    pub mask: Mask,
    /// Pixels analysed (iris disc, inside the eyelids, outside the pupil).
    pub region: Mask,
    pub fences: Option<Fences>,
    pub status: MaskStatus,
}

/// Pixels whose center lies inside `iris`, inside `eyelid`, and outside
/// `pupil` when given.
pub fn iris_region(iris: &Circle, pupil: Option<&Circle>, eyelid: &Mask) -> Mask {
    let (w, h) = eyelid.dims();
    let mut region = Mask::filled(w, h, false);
    let j0 = (iris.y - iris.r - 1.0).floor().max(0.0) as usize;
    let j1 = ((iris.y + iris.r + 1.0).ceil().max(0.0) as usize).min(h);
    let i0 = (iris.x - iris.r - 1.0).floor().max(0.0) as usize;
    let i1 = ((iris.x + iris.r + 1.0).ceil().max(0.0) as usize).min(w);
    for j in j0..j1 {
        for i in i0..i1 {
            let p = Point::new(i as f64 + 0.5, j as f64 + 0.5);
            if eyelid.get(i, j) && iris.contains(p) && !pupil.is_some_and(|c| c.contains(p)) {
                region.set(i, j, true);
            }
        }
    }
    region
}

/// Keeps region pixels inside fixed fences.
pub fn apply_fences(image: &GrayF, region: &Mask, fences: &Fences) -> Mask {
    let mut out = Mask::filled(region.width(), region.height(), false);
    for (o, (&r, &v)) in out
        .data_mut()
        .iter_mut()
        .zip(region.data().iter().zip(image.data()))
    {
        *o = r && fences.accepts(f64::from(v));
    }
    out
}

/// Interquartile anomaly masking inside the eyelid-bounded iris (pupil
/// excluded). Values outside `[Q1 - f IQR, Q3 + f IQR]` are dropped.
pub fn iqr_anomaly_mask(
    image: &GrayF,
    iris: &Circle,
    pupil: Option<&Circle>,
    eyelid: &Mask,
    factor: f64,
) -> Result<IqrMask, MaskError> {
    if image.dims() != eyelid.dims() {
        return Err(MaskError::SizeMismatch {
            mask_w: eyelid.width(),
            mask_h: eyelid.height(),
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    if !(factor >= 0.0) {
        return Err(MaskError::BadFactor(factor));
    }
    let region = iris_region(iris, pupil, eyelid);
    let mut values: Vec<f64> = region
        .data()
        .iter()
        .zip(image.data())
        .filter(|(&r, _)| r)
        .map(|(_, &v)| f64::from(v))
        .collect();
    match Fences::from_values(&mut values, factor) {
        None => Ok(IqrMask {
            mask: Mask::filled(image.width(), image.height(), false),
            region,
            fences: None,
            status: MaskStatus::EmptyRegion,
        }),
        Some(f) => Ok(IqrMask {
            mask: apply_fences(image, &region, &f),
            region,
            fences: Some(f),
            status: MaskStatus::Ok,
        }),
    }
}

/// Eyelid polygon plus IQR masking for a localized eye.
pub fn recognition_mask(image: &GrayF, landmarks: &LandmarkSet) -> Result<(IqrMask, EyelidMask), MaskError> {
    let lid = eyelid_mask(&landmarks.eyelid, image.width(), image.height())?;
    let iqr = iqr_anomaly_mask(
        image,
        &landmarks.iris,
        Some(&landmarks.pupil),
        &lid.mask,
        TUKEY_FACTOR,
    )?;
    Ok((iqr, lid))
}
