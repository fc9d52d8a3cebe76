//! Circles, eyelid points, ellipses, Hausdorff metrics, affine maps and
//! rubber-sheet unwrapping.
//!
//! Angles are measured from the positive x-axis, counter-clockwise as seen
//! on screen. Because image y points down, the unit direction for angle
//! `theta` is `(cos theta, -sin theta)` in pixel coordinates.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::GrayF;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("circle radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("eye width must be positive, got {0}")]
    BadEyeWidth(f64),
    #[error("affine map is singular (det = {0:e})")]
    SingularAffine(f64),
    #[error("{what} must be at least {min}, got {got}")]
    TooFew {
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error("pupil center lies outside the iris circle")]
    PupilOutsideIris,
    #[error("pupil radius {pupil} is not smaller than iris radius {iris}")]
    PupilTooLarge { pupil: f64, iris: f64 },
    #[error("P1.x ({p1}) must be left of P2.x ({p2})")]
    CornersOutOfOrder { p1: f64, p2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl Circle {
    pub const fn new(x: f64, y: f64, r: f64) -> Self {
        Self { x, y, r }
    }

    pub fn center(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.x.is_finite() && self.y.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(GeometryError::BadRadius(self.r));
        }
        Ok(())
    }

    /// Boundary point at angle `theta`.
    pub fn boundary(&self, theta: f64) -> Point {
        Point::new(self.x + self.r * theta.cos(), self.y - self.r * theta.sin())
    }

    pub fn contains(&self, p: Point) -> bool {
        self.center().dist(p) <= self.r
    }

    pub fn to_ellipse(&self) -> EllipseParams {
        EllipseParams {
            x: self.x,
            y: self.y,
            a: self.r,
            b: self.r,
            theta: 0.0,
        }
    }
}

/// Pupil circle, iris circle and the eight eyelid points `P1..P8`.
///
/// `P1`/`P2` are the left/right image-side eye corners, `P3..P5` lie on the
/// upper lid and `P6..P8` on the lower lid, both ordered left to right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub pupil: Circle,
    pub iris: Circle,
    pub eyelid: [Point; 8],
}

impl LandmarkSet {
    /// Checks the ground-truth invariants. Predictions are not required to
    /// satisfy them.
    pub fn validate(&self) -> Result<(), GeometryError> {
        self.pupil.validate()?;
        self.iris.validate()?;
        if self.eyelid.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !self.iris.contains(self.pupil.center()) {
            return Err(GeometryError::PupilOutsideIris);
        }
        if self.pupil.r >= self.iris.r {
            return Err(GeometryError::PupilTooLarge {
                pupil: self.pupil.r,
                iris: self.iris.r,
            });
        }
        let (p1, p2) = (self.eyelid[0].x, self.eyelid[1].x);
        if p1 >= p2 {
            return Err(GeometryError::CornersOutOfOrder { p1, p2 });
        }
        Ok(())
    }

    pub fn eye_width(&self) -> Result<EyeWidth, GeometryError> {
        EyeWidth::new(self.eyelid[0].dist(self.eyelid[1]))
    }

    /// Applies a similarity map: centers and points map affinely, radii scale
    /// by `sqrt(|det|)`.
    pub fn transformed(&self, map: &Affine2) -> LandmarkSet {
        let s = map.det().abs().sqrt();
        let circ = |c: &Circle| {
            let p = map.apply(c.center());
            Circle::new(p.x, p.y, c.r * s)
        };
        LandmarkSet {
            pupil: circ(&self.pupil),
            iris: circ(&self.iris),
            eyelid: self.eyelid.map(|p| map.apply(p)),
        }
    }
}

/// Ellipse with semi-axes `a >= b > 0` and major-axis angle
/// `theta` in `[-pi/2, pi/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl EllipseParams {
    /// Builds an ellipse from possibly unordered axes, swapping them and
    /// rotating by a quarter turn when `b > a`, then wrapping the angle.
    pub fn canonical(x: f64, y: f64, a: f64, b: f64, theta: f64) -> Self {
        let (a, b, theta) = if b > a {
            (b, a, theta + FRAC_PI_2)
        } else {
            (a, b, theta)
        };
        Self {
            x,
            y,
            a,
            b,
            theta: wrap_half_turn(theta),
        }
    }

    /// Boundary point at parameter `t`.
    pub fn boundary(&self, t: f64) -> Point {
        let (ct, st) = (self.theta.cos(), self.theta.sin());
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        // major axis (ct, -st), minor axis (st, ct) in pixel coordinates
        Point::new(self.x + u * ct + v * st, self.y - u * st + v * ct)
    }

    /// Half width and half height of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        ((a2 * c * c + b2 * s * s).sqrt(), (a2 * s * s + b2 * c * c).sqrt())
    }

    pub fn boundary_points(&self, n: usize) -> Vec<Point> {
        (0..n)
            .map(|i| self.boundary(TAU * i as f64 / n as f64))
            .collect()
    }
}

/// Wraps an angle into `[-pi/2, pi/2)`.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let t = (theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if t >= FRAC_PI_2 {
        t - PI
    } else {
        t
    }
}

/// Ground-truth distance between eye corners `P1` and `P2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EyeWidth(f64);

impl EyeWidth {
    pub fn new(value: f64) -> Result<Self, GeometryError> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            Err(GeometryError::BadEyeWidth(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Row-major 2x3 affine map `p' = M[:, :2] p + M[:, 2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 3]; 2],
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn new(m: [[f64; 3]; 2]) -> Self {
        Self { m }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Self::new([[sx, 0.0, 0.0], [0.0, sy, 0.0]])
    }

    /// Counter-clockwise on screen by `theta` radians about the origin.
    pub fn rotation(theta: f64) -> Self {
        let (c, s) = (theta.cos(), theta.sin());
        // y points down, so on-screen CCW is (x, y) -> (c x + s y, -s x + c y)
        Self::new([[c, s, 0.0], [-s, c, 0.0]])
    }

    /// `map` conjugated so it acts about `center` instead of the origin.
    pub fn about(map: Affine2, center: Point) -> Self {
        Affine2::translation(center.x, center.y)
            .then_after(&map)
            .then_after(&Affine2::translation(-center.x, -center.y))
    }

    /// Composition `self ∘ inner` (apply `inner` first).
    pub fn then_after(&self, inner: &Affine2) -> Affine2 {
        let a = &self.m;
        let b = &inner.m;
        let mut m = [[0.0; 3]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            row[0] = a[i][0] * b[0][0] + a[i][1] * b[1][0];
            row[1] = a[i][0] * b[0][1] + a[i][1] * b[1][1];
            row[2] = a[i][0] * b[0][2] + a[i][1] * b[1][2] + a[i][2];
        }
        Affine2 { m }
    }

    /// Composition `outer ∘ self` (apply `self` first).
    pub fn then(&self, outer: &Affine2) -> Affine2 {
        outer.then_after(self)
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        Point::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        )
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let det = self.det();
        if !det.is_finite() || det.abs() < 1e-12 {
            return None;
        }
        let [[a, b, c], [d, e, f]] = self.m;
        let inv = 1.0 / det;
        let (ia, ib, id, ie) = (e * inv, -b * inv, -d * inv, a * inv);
        Some(Affine2::new([
            [ia, ib, -(ia * c + ib * f)],
            [id, ie, -(id * c + ie * f)],
        ]))
    }
}

/// Hausdorff distance between two circle boundaries.
///
/// For a point on `g` at distance `t` from the center of `c`, the distance
/// to `c`'s boundary is `|t - r_c|`, convex in `t`; `t` sweeps
/// `[|d - r_g|, d + r_g]`, so each directed supremum sits at an endpoint.
pub fn hausdorff_circles(g: &Circle, c: &Circle) -> f64 {
    let d = g.center().dist(c.center());
    let g_to_c = (d + g.r - c.r).abs().max(((d - g.r).abs() - c.r).abs());
    let c_to_g = (d + c.r - g.r).abs().max(((d - c.r).abs() - g.r).abs());
    g_to_c.max(c_to_g)
}

/// Circle Hausdorff distance divided by the ground-truth eye width.
pub fn normalized_hausdorff(g: &Circle, c: &Circle, width: EyeWidth) -> f64 {
    hausdorff_circles(g, c) / width.value()
}

/// Image of a circle under an affine map.
pub fn circle_under_affine(c: &Circle, map: &Affine2) -> Result<EllipseParams, GeometryError> {
    c.validate()?;
    let det = map.det();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(GeometryError::SingularAffine(det));
    }
    let [[a, b, _], [d, e, _]] = map.m;
    // L L^T = [[p, q], [q, s]]; its eigenvalues are the squared singular
    // values, its leading eigenvector the major-axis direction.
    let p = a * a + b * b;
    let q = a * d + b * e;
    let s = d * d + e * e;
    let mean = 0.5 * (p + s);
    let rad = (0.25 * (p - s) * (p - s) + q * q).sqrt();
    let s1 = (mean + rad).sqrt();
    let s2 = (mean - rad).max(0.0).sqrt();
    let center = map.apply(c.center());
    let theta = if rad <= 1e-12 * mean {
        0.0
    } else {
        // pixel-space direction angle phi, screen angle is -phi
        let phi = 0.5 * (2.0 * q).atan2(p - s);
        wrap_half_turn(-phi)
    };
    Ok(EllipseParams {
        x: center.x,
        y: center.y,
        a: c.r * s1,
        b: c.r * s2,
        theta,
    })
}

/// Symmetric discrete Hausdorff distance between two point sets.
pub fn point_set_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    fn directed(from: &[Point], to: &[Point]) -> f64 {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        let (dx, dy) = (p.x - q.x, p.y - q.y);
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
            .sqrt()
    }
    directed(a, b).max(directed(b, a))
}

/// Hausdorff distance between two ellipse boundaries, each sampled at
/// `samples` equally spaced parameters.
pub fn ellipse_boundary_hausdorff(
    g: &EllipseParams,
    c: &EllipseParams,
    samples: usize,
) -> Result<f64, GeometryError> {
    if samples < 64 {
        return Err(GeometryError::TooFew {
            what: "boundary samples",
            min: 64,
            got: samples,
        });
    }
    Ok(point_set_hausdorff(
        &g.boundary_points(samples),
        &c.boundary_points(samples),
    ))
}

/// Polar unwrapping of the pupil-iris annulus.
///
/// Row `i` holds radial fraction `rho_i = i / (n_rho - 1)` (0 at the pupil
/// boundary), column `j` angle `theta_j = 2 pi j / n_theta`. Each sample is
/// the bilinear value at `(1 - rho) * pupil(theta) + rho * iris(theta)`.
pub fn rubber_sheet(
    image: &GrayF,
    pupil: &Circle,
    iris: &Circle,
    n_theta: usize,
    n_rho: usize,
) -> Result<GrayF, GeometryError> {
    pupil.validate()?;
    iris.validate()?;
    for (what, got) in [("n_theta", n_theta), ("n_rho", n_rho)] {
        if got < 2 {
            return Err(GeometryError::TooFew { what, min: 2, got });
        }
    }
    let mut data = Vec::with_capacity(n_theta * n_rho);
    for i in 0..n_rho {
        let rho = i as f64 / (n_rho - 1) as f64;
        for j in 0..n_theta {
            let p = rubber_sheet_location(pupil, iris, TAU * j as f64 / n_theta as f64, rho);
            data.push(image.sample(p.x, p.y));
        }
    }
    Ok(GrayF::new(n_theta, n_rho, data).expect("extents checked above"))
}

/// The image location sampled for `(theta, rho)`.
pub fn rubber_sheet_location(pupil: &Circle, iris: &Circle, theta: f64, rho: f64) -> Point {
    let inner = pupil.boundary(theta);
    let outer = iris.boundary(theta);
    Point::new(
        (1.0 - rho) * inner.x + rho * outer.x,
        (1.0 - rho) * inner.y + rho * outer.y,
    )
}
