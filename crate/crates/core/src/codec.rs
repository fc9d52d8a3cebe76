//! Flat target vectors, their normalization, and the PRN crop frame.
//!
//! The 22-element landmark layout is
//! `[pupil.x, pupil.y, pupil.r, iris.x, iris.y, iris.r, P1.x, P1.y, ..., P8.x, P8.y]`
//! in 640x480 reference coordinates, independent of the network input scale.
//! The 25-element ellipse layout replaces each radius with the two axis
//! lengths of a shared affine shape:
//! `[pupil.x, pupil.y, pupil.ax, pupil.ay, iris.x, iris.y, iris.ax, iris.ay, tilt, P1.x, ..., P8.y]`
//! where `ax`/`ay` are semi-axes along the tilted x/y directions and
//! `tilt` is in `[-pi/4, pi/4)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Circle, EllipseParams, LandmarkSet, Point};

pub const LANDMARK_DIM: usize = 22;
pub const PRN_DIM: usize = 3;
pub const ELLIPSE_DIM: usize = 25;
/// PRN crops are resampled to this square size.
pub const ROI_SIZE: usize = 128;
/// Crop side as a multiple of the iris diameter.
pub const ROI_DIAMETER_FACTOR: f64 = 1.2;

pub const REFERENCE_WIDTH: usize = 640;
pub const REFERENCE_HEIGHT: usize = 480;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("sigma[{index}] = {value} must be positive")]
    BadSigma { index: usize, value: f64 },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("crop side must be positive, got {0}")]
    BadSide(f64),
    #[error("annotation line {line}: {message}")]
    Annotation { line: usize, message: String },
}

/// Output layouts a network head can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Landmarks,
    PupilRoi,
    Ellipses,
}

impl Layout {
    pub fn dim(self) -> usize {
        match self {
            Layout::Landmarks => LANDMARK_DIM,
            Layout::PupilRoi => PRN_DIM,
            Layout::Ellipses => ELLIPSE_DIM,
        }
    }

    pub fn from_dim(d: usize) -> Option<Layout> {
        match d {
            LANDMARK_DIM => Some(Layout::Landmarks),
            PRN_DIM => Some(Layout::PupilRoi),
            ELLIPSE_DIM => Some(Layout::Ellipses),
            _ => None,
        }
    }

    /// Element names in order; these define the layout.
    pub fn element_names(self) -> Vec<String> {
        let mut names: Vec<String> = match self {
            Layout::Landmarks => ["pupil.x", "pupil.y", "pupil.r", "iris.x", "iris.y", "iris.r"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            Layout::PupilRoi => {
                return ["roi.pupil.x", "roi.pupil.y", "roi.pupil.r"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect()
            }
            Layout::Ellipses => [
                "pupil.x", "pupil.y", "pupil.ax", "pupil.ay", "iris.x", "iris.y", "iris.ax",
                "iris.ay", "tilt",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        };
        for i in 1..=8 {
            names.push(format!("P{i}.x"));
            names.push(format!("P{i}.y"));
        }
        names
    }

    /// FNV-1a over the element names; stored in weight files so a model
    /// cannot be decoded with a different layout.
    pub fn hash(self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for name in self.element_names() {
            for b in name.bytes().chain(std::iter::once(b';')) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn default_stats(self) -> NormStats {
        match self {
            Layout::Landmarks => NormStats::iln(),
            Layout::PupilRoi => NormStats::prn(),
            Layout::Ellipses => NormStats::ellipse(),
        }
    }
}

/// 22-element landmark encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetVector(pub [f64; LANDMARK_DIM]);

impl TargetVector {
    pub fn from_landmarks(l: &LandmarkSet) -> Self {
        let mut v = [0.0; LANDMARK_DIM];
        v[..3].copy_from_slice(&[l.pupil.x, l.pupil.y, l.pupil.r]);
        v[3..6].copy_from_slice(&[l.iris.x, l.iris.y, l.iris.r]);
        for (i, p) in l.eyelid.iter().enumerate() {
            v[6 + 2 * i] = p.x;
            v[7 + 2 * i] = p.y;
        }
        Self(v)
    }

    pub fn to_landmarks(&self) -> LandmarkSet {
        let v = &self.0;
        let mut eyelid = [Point::default(); 8];
        for (i, p) in eyelid.iter_mut().enumerate() {
            *p = Point::new(v[6 + 2 * i], v[7 + 2 * i]);
        }
        LandmarkSet {
            pupil: Circle::new(v[0], v[1], v[2]),
            iris: Circle::new(v[3], v[4], v[5]),
            eyelid,
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, CodecError> {
        let arr: [f64; LANDMARK_DIM] = v.try_into().map_err(|_| CodecError::Length {
            expected: LANDMARK_DIM,
            got: v.len(),
        })?;
        Ok(Self(arr))
    }
}

/// Per-element mean and standard deviation: `k' = (k - mu) / sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NormStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self, CodecError> {
        if mu.len() != sigma.len() {
            return Err(CodecError::Length {
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        if let Some((index, &value)) = sigma
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(CodecError::BadSigma { index, value });
        }
        Ok(Self { mu, sigma })
    }

    /// Means 320/240 for every x/y element, 50 and 120 for the pupil and
    /// iris radii; sigma is one sixth of each mean.
    pub fn iln() -> Self {
        let mut mu = vec![0.0; LANDMARK_DIM];
        for (i, m) in mu.iter_mut().enumerate() {
            *m = match i {
                2 => 50.0,
                5 => 120.0,
                0 | 3 => 320.0,
                1 | 4 => 240.0,
                _ if (i - 6) % 2 == 0 => 320.0,
                _ => 240.0,
            };
        }
        let sigma = mu.iter().map(|m| m / 6.0).collect();
        Self { mu, sigma }
    }

    /// Crop-frame statistics: means (64, 64, 20), deviations (10, 10, 10).
    pub fn prn() -> Self {
        Self {
            mu: vec![64.0, 64.0, 20.0],
            sigma: vec![10.0, 10.0, 10.0],
        }
    }

    /// Ellipse layout: axis lengths reuse the radius statistics, the tilt is
    /// centered at zero with deviation pi/12.
    pub fn ellipse() -> Self {
        let iln = Self::iln();
        let mut mu = Vec::with_capacity(ELLIPSE_DIM);
        let mut sigma = Vec::with_capacity(ELLIPSE_DIM);
        let push = |mu: &mut Vec<f64>, sigma: &mut Vec<f64>, m: f64| {
            mu.push(m);
            sigma.push(m / 6.0);
        };
        for (cx, cy, r) in [(320.0, 240.0, 50.0), (320.0, 240.0, 120.0)] {
            for m in [cx, cy, r, r] {
                push(&mut mu, &mut sigma, m);
            }
        }
        mu.push(0.0);
        sigma.push(std::f64::consts::PI / 12.0);
        mu.extend_from_slice(&iln.mu[6..]);
        sigma.extend_from_slice(&iln.sigma[6..]);
        Self { mu, sigma }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    fn check(&self, got: usize) -> Result<(), CodecError> {
        if got != self.len() {
            return Err(CodecError::Length {
                expected: self.len(),
                got,
            });
        }
        if let Some((index, &value)) = self
            .sigma
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(CodecError::BadSigma { index, value });
        }
        Ok(())
    }

    pub fn normalize(&self, k: &[f64]) -> Result<Vec<f64>, CodecError> {
        self.check(k.len())?;
        Ok(k.iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn denormalize(&self, k: &[f64]) -> Result<Vec<f64>, CodecError> {
        self.check(k.len())?;
        Ok(k.iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }
}

pub fn normalize_targets(k: &TargetVector, stats: &NormStats) -> Result<Vec<f64>, CodecError> {
    stats.normalize(&k.0)
}

pub fn denormalize_targets(k: &[f64], stats: &NormStats) -> Result<TargetVector, CodecError> {
    if k.len() != LANDMARK_DIM {
        return Err(CodecError::Length {
            expected: LANDMARK_DIM,
            got: k.len(),
        });
    }
    TargetVector::from_slice(&stats.denormalize(k)?)
}

/// Square crop around the iris used as PRN input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiFrame {
    pub center: Point,
    pub side: f64,
    pub out_size: usize,
}

impl RoiFrame {
    pub fn new(center: Point, side: f64) -> Result<Self, CodecError> {
        if !(side.is_finite() && side > 0.0) {
            return Err(CodecError::BadSide(side));
        }
        Ok(Self {
            center,
            side,
            out_size: ROI_SIZE,
        })
    }

    /// Crop pixels per original pixel.
    pub fn scale(&self) -> f64 {
        self.out_size as f64 / self.side
    }

    /// Original pixels per crop pixel.
    pub fn inverse_scale(&self) -> f64 {
        self.side / self.out_size as f64
    }

    /// Map from original-image coordinates into crop coordinates.
    pub fn to_crop(&self) -> crate::geometry::Affine2 {
        let s = self.scale();
        let x0 = self.center.x - 0.5 * self.side;
        let y0 = self.center.y - 0.5 * self.side;
        crate::geometry::Affine2::new([[s, 0.0, -s * x0], [0.0, s, -s * y0]])
    }

    pub fn point_to_crop(&self, p: Point) -> Point {
        self.to_crop().apply(p)
    }
}

/// Crop centered on the iris with side `2 * 1.2 * r`.
pub fn make_roi(iris: &Circle) -> Result<RoiFrame, CodecError> {
    RoiFrame::new(iris.center(), 2.0 * ROI_DIAMETER_FACTOR * iris.r)
}

/// Pupil circle in crop coordinates, normalized with the PRN statistics.
pub fn to_roi_coords(pupil: &Circle, roi: &RoiFrame) -> [f64; PRN_DIM] {
    let p = roi.point_to_crop(pupil.center());
    let raw = [p.x, p.y, pupil.r * roi.scale()];
    let stats = NormStats::prn();
    let mut out = [0.0; PRN_DIM];
    for i in 0..PRN_DIM {
        out[i] = (raw[i] - stats.mu[i]) / stats.sigma[i];
    }
    out
}

/// Inverse of [`to_roi_coords`].
pub fn from_roi_coords(v: &[f64; PRN_DIM], roi: &RoiFrame) -> Circle {
    let stats = NormStats::prn();
    let raw: Vec<f64> = (0..PRN_DIM).map(|i| v[i] * stats.sigma[i] + stats.mu[i]).collect();
    let inv = roi.inverse_scale();
    let x0 = roi.center.x - 0.5 * roi.side;
    let y0 = roi.center.y - 0.5 * roi.side;
    Circle::new(x0 + raw[0] * inv, y0 + raw[1] * inv, raw[2] * inv)
}

/// Ellipse landmark encoding for the 25-element head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseLandmarks {
    pub pupil: EllipseParams,
    pub iris: EllipseParams,
    pub eyelid: [Point; 8],
}

impl EllipseLandmarks {
    /// Encodes with a shared tilt taken from the iris. Axis lengths are
    /// re-expressed along the tilted x/y directions so the tilt stays in
    /// `[-pi/4, pi/4)`.
    pub fn encode(&self) -> [f64; ELLIPSE_DIM] {
        use std::f64::consts::FRAC_PI_2;
        let to_xy = |e: &EllipseParams| -> (f64, f64, f64) {
            // theta in [-pi/2, pi/2); rotate a quarter turn to land in
            // [-pi/4, pi/4), swapping the axis roles.
            let t = e.theta;
            if t >= std::f64::consts::FRAC_PI_4 {
                (e.b, e.a, t - FRAC_PI_2)
            } else if t < -std::f64::consts::FRAC_PI_4 {
                (e.b, e.a, t + FRAC_PI_2)
            } else {
                (e.a, e.b, t)
            }
        };
        let (iax, iay, tilt) = to_xy(&self.iris);
        // pupil axes are read along the iris tilt
        let delta = crate::geometry::wrap_half_turn(self.pupil.theta - tilt);
        let (pax, pay) = if delta.abs() >= std::f64::consts::FRAC_PI_4 {
            (self.pupil.b, self.pupil.a)
        } else {
            (self.pupil.a, self.pupil.b)
        };
        let mut v = [0.0; ELLIPSE_DIM];
        v[..9].copy_from_slice(&[
            self.pupil.x,
            self.pupil.y,
            pax,
            pay,
            self.iris.x,
            self.iris.y,
            iax,
            iay,
            tilt,
        ]);
        for (i, p) in self.eyelid.iter().enumerate() {
            v[9 + 2 * i] = p.x;
            v[10 + 2 * i] = p.y;
        }
        v
    }

    pub fn decode(v: &[f64]) -> Result<Self, CodecError> {
        if v.len() != ELLIPSE_DIM {
            return Err(CodecError::Length {
                expected: ELLIPSE_DIM,
                got: v.len(),
            });
        }
        let tilt = v[8];
        let pupil = EllipseParams::canonical(v[0], v[1], v[2].abs(), v[3].abs(), tilt);
        let iris = EllipseParams::canonical(v[4], v[5], v[6].abs(), v[7].abs(), tilt);
        let mut eyelid = [Point::default(); 8];
        for (i, p) in eyelid.iter_mut().enumerate() {
            *p = Point::new(v[9 + 2 * i], v[10 + 2 * i]);
        }
        Ok(Self {
            pupil,
            iris,
            eyelid,
        })
    }
}

/// Which eye an image shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EyeSide {
    L,
    R,
}

/// One line of an annotation (or prediction) JSONL file. Coordinates are in
/// the 640x480 reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: String,
    pub pupil: [f64; 3],
    pub iris: [f64; 3],
    pub eyelid: [[f64; 2]; 8],
    pub eye: EyeSide,
    /// Present only in predictions from an ellipse model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipses: Option<EllipseRecord>,
}

/// Ellipse output: `[x, y, a, b, theta]` per boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseRecord {
    pub pupil: [f64; 5],
    pub iris: [f64; 5],
}

impl EllipseRecord {
    pub fn from_ellipses(pupil: &EllipseParams, iris: &EllipseParams) -> Self {
        let f = |e: &EllipseParams| [e.x, e.y, e.a, e.b, e.theta];
        Self {
            pupil: f(pupil),
            iris: f(iris),
        }
    }
}

impl AnnotationRecord {
    pub fn new(image: impl Into<String>, l: &LandmarkSet, eye: EyeSide) -> Self {
        let c = |c: &Circle| [c.x, c.y, c.r];
        Self {
            image: image.into(),
            pupil: c(&l.pupil),
            iris: c(&l.iris),
            eyelid: l.eyelid.map(|p| [p.x, p.y]),
            eye,
            ellipses: None,
        }
    }

    pub fn landmarks(&self) -> LandmarkSet {
        let c = |v: [f64; 3]| Circle::new(v[0], v[1], v[2]);
        LandmarkSet {
            pupil: c(self.pupil),
            iris: c(self.iris),
            eyelid: self.eyelid.map(|p| Point::new(p[0], p[1])),
        }
    }
}

/// Parses JSONL, skipping blank lines. Errors carry the 1-based line number.
pub fn read_jsonl(text: &str) -> Result<Vec<AnnotationRecord>, CodecError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CodecError::Annotation {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}
