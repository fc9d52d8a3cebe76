//! Synthetic eye scenes, image ingestion and label-consistent augmentation.
//!
//! Geometric augmentation is carried as a single [`Affine2`] that maps
//! original-frame coordinates to augmented-frame coordinates. Training
//! composes it with the network resize so each sample is resampled once,
//! straight from the full-resolution render to the network input.

use std::borrow::Cow;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    self, make_roi, to_roi_coords, AnnotationRecord, CodecError, EllipseLandmarks, EyeSide,
    RoiFrame, PRN_DIM, REFERENCE_HEIGHT, REFERENCE_WIDTH,
};
use crate::geometry::{circle_under_affine, Affine2, Circle, GeometryError, LandmarkSet, Point};
use crate::raster::{read_pgm, write_pgm, Gray8, GrayF, Mask, RasterError};

const W: f64 = REFERENCE_WIDTH as f64;
const H: f64 = REFERENCE_HEIGHT as f64;

/// Attempts at drawing an augmentation that keeps the iris inside the frame.
pub const MAX_AUGMENT_RETRIES: usize = 32;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("augmented iris left the frame in {0} attempts")]
    IrisOutOfFrame(usize),
    #[error("negative jitter std {0}")]
    NegativeStd(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus manifest: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Small bright reflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Specular {
    pub center: Point,
    pub radius: f64,
    pub intensity: f64,
}

/// Procedural eye. The eyelids are parabolic arcs through the two corners:
/// at fraction `t` of the corner-to-corner span the arc sits at
/// `baseline(t) + 4 sag t (1 - t)`; the upper sag is negative (upwards).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeScene {
    pub seed: u64,
    pub pupil: Circle,
    pub iris: Circle,
    pub corners: [Point; 2],
    pub upper_sag: f64,
    pub lower_sag: f64,
    pub pupil_level: f64,
    pub iris_level: f64,
    pub sclera_level: f64,
    pub skin_level: f64,
    /// Relative amplitude, angular frequency and phase of the iris texture.
    pub texture: (f64, f64, f64),
    pub speculars: Vec<Specular>,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub side: EyeSide,
}

/// Generator masks for region statistics and mask oracles.
#[derive(Debug, Clone)]
pub struct SceneRegions {
    pub aperture: Mask,
    pub pupil: Mask,
    /// Iris annulus visible through the aperture.
    pub iris: Mask,
    /// Aperture minus the iris disc.
    pub sclera: Mask,
    /// Pixels inside any specular disc within the aperture.
    pub specular: Mask,
}

const LID_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

impl EyeScene {
    /// Draws a random, valid scene from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r_i = rng.random_range(95.0..135.0);
        let iris = Circle::new(
            rng.random_range(270.0..370.0),
            rng.random_range(205.0..275.0),
            r_i,
        );
        let r_p = r_i * rng.random_range(0.3..0.55);
        let off = r_i * rng.random_range(0.0..0.1);
        let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let pupil = Circle::new(iris.x + off * ang.cos(), iris.y + off * ang.sin(), r_p);
        let side = if rng.random_bool(0.5) {
            EyeSide::L
        } else {
            EyeSide::R
        };
        // the inner (nasal) corner sits a little lower
        let (dy_l, dy_r) = match side {
            EyeSide::L => (0.0, 0.12),
            EyeSide::R => (0.12, 0.0),
        };
        let left = Point::new(
            (iris.x - r_i * rng.random_range(1.5..2.1)).max(4.0),
            iris.y + r_i * (rng.random_range(-0.15..0.15) + dy_l),
        );
        let right = Point::new(
            (iris.x + r_i * rng.random_range(1.5..2.1)).min(W - 4.0),
            iris.y + r_i * (rng.random_range(-0.15..0.15) + dy_r),
        );
        let base_mid = 0.5 * (left.y + right.y);
        let upper_apex = iris.y - r_i * rng.random_range(0.6..1.1);
        let lower_apex = iris.y + r_i * rng.random_range(0.7..1.1);
        let n_spec = rng.random_range(1..=3);
        let speculars = (0..n_spec)
            .map(|_| {
                let rr = rng.random_range(0.0..1.0) * (r_i - r_p) * 0.8 + r_p * 0.5;
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                Specular {
                    center: Point::new(pupil.x + rr * a.cos(), pupil.y + rr * a.sin()),
                    radius: rng.random_range(3.0..10.0),
                    intensity: rng.random_range(230.0..255.0f64).round(),
                }
            })
            .collect();
        Self {
            seed,
            pupil,
            iris,
            corners: [left, right],
            upper_sag: upper_apex - base_mid,
            lower_sag: lower_apex - base_mid,
            pupil_level: rng.random_range(8.0..35.0f64).round(),
            iris_level: rng.random_range(70.0..120.0f64).round(),
            sclera_level: rng.random_range(165.0..215.0f64).round(),
            skin_level: rng.random_range(110.0..160.0f64).round(),
            texture: (
                rng.random_range(0.04..0.14),
                rng.random_range(8.0..24.0f64).round(),
                rng.random_range(0.0..std::f64::consts::TAU),
            ),
            speculars,
            blur_sigma: rng.random_range(0.0..2.0),
            noise_sigma: rng.random_range(0.0..6.0),
            side,
        }
    }

    /// Scene with speculars, blur and noise removed.
    pub fn clean(mut self) -> Self {
        self.speculars.clear();
        self.blur_sigma = 0.0;
        self.noise_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidScene(m));
        self.iris.validate()?;
        self.pupil.validate()?;
        if self.pupil.r >= self.iris.r {
            return bad(format!("pupil r {} >= iris r {}", self.pupil.r, self.iris.r));
        }
        let off = self.pupil.center().dist(self.iris.center());
        if off > 0.3 * self.iris.r {
            return bad(format!("pupil offset {off:.2} exceeds 0.3 iris r"));
        }
        let [l, r] = self.corners;
        if !(l.x < self.iris.x - self.iris.r && r.x > self.iris.x + self.iris.r) {
            return bad("iris not inside the eyelid aperture horizontally".into());
        }
        if !(0.0..=W).contains(&l.x) || !(0.0..=W).contains(&r.x) {
            return bad("eye corners outside the frame".into());
        }
        if !(self.upper_sag < 0.0 && self.lower_sag > 0.0) {
            return bad("eyelid arcs do not open".into());
        }
        if !(self.pupil_level < self.iris_level && self.iris_level < self.sclera_level) {
            return bad("intensities must order pupil < iris < sclera".into());
        }
        if self.blur_sigma < 0.0 || self.noise_sigma < 0.0 {
            return bad("negative blur or noise".into());
        }
        Ok(())
    }

    fn arc_point(&self, t: f64, sag: f64) -> Point {
        let [l, r] = self.corners;
        Point::new(
            l.x + t * (r.x - l.x),
            l.y + t * (r.y - l.y) + 4.0 * sag * t * (1.0 - t),
        )
    }

    /// Exact labels: corners, then three points per lid at fixed fractions.
    pub fn landmarks(&self) -> LandmarkSet {
        let mut eyelid = [Point::default(); 8];
        eyelid[0] = self.corners[0];
        eyelid[1] = self.corners[1];
        for (k, &t) in LID_FRACTIONS.iter().enumerate() {
            eyelid[2 + k] = self.arc_point(t, self.upper_sag);
            eyelid[5 + k] = self.arc_point(t, self.lower_sag);
        }
        LandmarkSet {
            pupil: self.pupil,
            iris: self.iris,
            eyelid,
        }
    }

    /// Signed vertical distance outside the aperture (negative inside).
    fn aperture_distance(&self, x: f64, y: f64) -> f64 {
        let [l, r] = self.corners;
        let t = (x - l.x) / (r.x - l.x);
        if !(0.0..=1.0).contains(&t) {
            let dx = if t < 0.0 { l.x - x } else { x - r.x };
            return dx.max(0.5);
        }
        let up = self.arc_point(t, self.upper_sag).y;
        let lo = self.arc_point(t, self.lower_sag).y;
        (up - y).max(y - lo)
    }

    fn iris_texture(&self, x: f64, y: f64) -> f64 {
        let (amp, freq, phase) = self.texture;
        let dx = x - self.pupil.x;
        let dy = y - self.pupil.y;
        let theta = dy.atan2(dx);
        let rho = ((dx * dx + dy * dy).sqrt() - self.pupil.r) / (self.iris.r - self.pupil.r);
        let radial = 0.9 + 0.2 * rho.clamp(0.0, 1.0);
        let wave = (freq * theta + phase).sin() * (0.5 + 0.5 * (3.0 * rho * std::f64::consts::PI).cos());
        self.iris_level * radial * (1.0 + amp * wave)
    }

    /// Renders the scene: 640x480, values rounded to integers in `[0, 255]`.
    pub fn render(&self) -> Result<(GrayF, LandmarkSet)> {
        self.validate()?;
        let cov = |d: f64| (0.5 - d).clamp(0.0, 1.0);
        let mut img = GrayF::filled(REFERENCE_WIDTH, REFERENCE_HEIGHT, 0.0);
        for j in 0..REFERENCE_HEIGHT {
            let y = j as f64 + 0.5;
            for i in 0..REFERENCE_WIDTH {
                let x = i as f64 + 0.5;
                let ap = cov(self.aperture_distance(x, y));
                let mut v = self.skin_level;
                if ap > 0.0 {
                    let p = Point::new(x, y);
                    let mut inner = self.sclera_level;
                    let c_iris = cov(p.dist(self.iris.center()) - self.iris.r);
                    if c_iris > 0.0 {
                        inner += (self.iris_texture(x, y) - inner) * c_iris;
                    }
                    let c_pupil = cov(p.dist(self.pupil.center()) - self.pupil.r);
                    inner += (self.pupil_level - inner) * c_pupil;
                    for s in &self.speculars {
                        let c = cov(p.dist(s.center) - s.radius);
                        inner += (s.intensity - inner) * c;
                    }
                    v += (inner - v) * ap;
                }
                img.set(i, j, v as f32);
            }
        }
        if self.blur_sigma > 0.0 {
            img = img.gaussian_blur(self.blur_sigma);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6e6f_6973_655f_7631);
        let ns = self.noise_sigma;
        for v in img.data_mut() {
            let noise = if ns > 0.0 {
                rng.sample::<f64, _>(StandardNormal) * ns
            } else {
                0.0
            };
            *v = (f64::from(*v) + noise).round().clamp(0.0, 255.0) as f32;
        }
        Ok((img, self.landmarks()))
    }

    /// Hard region masks at pixel centers.
    pub fn regions(&self) -> SceneRegions {
        let (w, h) = (REFERENCE_WIDTH, REFERENCE_HEIGHT);
        let mut r = SceneRegions {
            aperture: Mask::filled(w, h, false),
            pupil: Mask::filled(w, h, false),
            iris: Mask::filled(w, h, false),
            sclera: Mask::filled(w, h, false),
            specular: Mask::filled(w, h, false),
        };
        for j in 0..h {
            for i in 0..w {
                let p = Point::new(i as f64 + 0.5, j as f64 + 0.5);
                if self.aperture_distance(p.x, p.y) > 0.0 {
                    continue;
                }
                r.aperture.set(i, j, true);
                let in_pupil = self.pupil.contains(p);
                let in_iris = self.iris.contains(p);
                r.pupil.set(i, j, in_pupil);
                r.iris.set(i, j, in_iris && !in_pupil);
                r.sclera.set(i, j, !in_iris);
                let spec = self
                    .speculars
                    .iter()
                    .any(|s| p.dist(s.center) <= s.radius);
                r.specular.set(i, j, spec);
            }
        }
        r
    }
}

/// Renders the scene drawn from `seed`.
pub fn render_scene(scene: &EyeScene) -> Result<(GrayF, LandmarkSet)> {
    scene.render()
}

/// Pads `image` to 4:3 by replicating its right columns (too narrow) or
/// bottom rows (too wide), then resizes to 640x480. Returns the map from
/// input pixel coordinates to output coordinates.
pub fn aspect_correct(image: &GrayF) -> Result<(GrayF, Affine2)> {
    let (w, h) = image.dims();
    let (pw, ph) = if w * 3 < h * 4 {
        (((h * 4) as f64 / 3.0).round() as usize, h)
    } else if w * 3 > h * 4 {
        (w, ((w * 3) as f64 / 4.0).round() as usize)
    } else {
        (w, h)
    };
    if (pw, ph) == (REFERENCE_WIDTH, REFERENCE_HEIGHT) && (w, h) == (pw, ph) {
        return Ok((image.clone(), Affine2::IDENTITY));
    }
    let mut padded = Vec::with_capacity(pw * ph);
    for j in 0..ph {
        for i in 0..pw {
            padded.push(image.get(i.min(w - 1), j.min(h - 1)));
        }
    }
    let padded = GrayF::new(pw, ph, padded)?;
    let map = Affine2::scale(W / pw as f64, H / ph as f64);
    Ok((padded.resize(REFERENCE_WIDTH, REFERENCE_HEIGHT), map))
}

/// Reads a PGM image and aspect-corrects it.
pub fn load_image(path: &Path) -> Result<(GrayF, Affine2)> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let img = read_pgm(BufReader::new(f))?;
    aspect_correct(&img.to_f32())
}

/// Augmentation ranges. Each operation fires independently with
/// probability `probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub probability: f64,
    /// Gaussian blur sigma in original-size pixels.
    pub blur: (f64, f64),
    /// Multiplicative brightness change, `v * (1 + b)`.
    pub brightness: f64,
    /// Contrast change about the image mean, `(v - mean) * (1 + c) + mean`.
    pub contrast: f64,
    pub scale: (f64, f64),
    /// Rotation range in degrees, symmetric.
    pub rotation_deg: f64,
    pub shift: bool,
    /// Optional anisotropic stretch `(k_min, k_max)`: one axis at a random
    /// angle is scaled by `k`. Off by default; ellipse training turns it on.
    pub stretch: Option<(f64, f64)>,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            probability: 0.5,
            blur: (1.0, 25.0),
            brightness: 0.2,
            contrast: 0.2,
            scale: (0.3, 2.0),
            rotation_deg: 20.0,
            shift: true,
            stretch: None,
        }
    }
}

impl AugmentParams {
    /// No augmentation at all.
    pub fn none() -> Self {
        Self {
            probability: 0.0,
            ..Self::default()
        }
    }

    /// The PRN family: identical ranges, no shift.
    pub fn without_shift(&self) -> Self {
        Self {
            shift: false,
            ..self.clone()
        }
    }
}

/// One concrete draw of augmentation operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPlan {
    pub blur: Option<f64>,
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    /// Original frame -> augmented frame.
    pub geometric: Affine2,
}

impl AugmentPlan {
    pub const IDENTITY: AugmentPlan = AugmentPlan {
        blur: None,
        brightness: None,
        contrast: None,
        geometric: Affine2::IDENTITY,
    };

    /// Applies the plan and resamples into `out_w x out_h`, where `out_map`
    /// sends augmented-frame coordinates to output coordinates.
    pub fn apply(&self, image: &GrayF, out_map: &Affine2, out_w: usize, out_h: usize) -> GrayF {
        let src: Cow<'_, GrayF> = match self.blur {
            Some(s) => Cow::Owned(image.gaussian_blur(s)),
            None => Cow::Borrowed(image),
        };
        let map = out_map.then_after(&self.geometric);
        let mut out = if map == Affine2::IDENTITY && src.dims() == (out_w, out_h) {
            src.into_owned()
        } else {
            src.warp(&map, out_w, out_h)
                .expect("augmentation maps are invertible")
        };
        if self.brightness.is_some() || self.contrast.is_some() {
            let b = 1.0 + self.brightness.unwrap_or(0.0) as f32;
            for v in out.data_mut() {
                *v *= b;
            }
            if let Some(c) = self.contrast {
                let mean = out.mean() as f32;
                let k = 1.0 + c as f32;
                for v in out.data_mut() {
                    *v = (*v - mean) * k + mean;
                }
            }
            for v in out.data_mut() {
                *v = v.clamp(0.0, 255.0);
            }
        }
        out
    }
}

/// Axis-aligned extent of the iris image under `map`.
fn iris_fits(iris: &Circle, map: &Affine2) -> bool {
    match circle_under_affine(iris, map) {
        Ok(e) => {
            let (hx, hy) = e.half_extents();
            e.x - hx >= 0.0 && e.x + hx <= W && e.y - hy >= 0.0 && e.y + hy <= H
        }
        Err(_) => false,
    }
}

/// Draws a plan whose geometric part keeps `iris` fully in frame; scale,
/// rotation (both about the image center) and shift are composed in that
/// order.
pub fn sample_plan<R: Rng + ?Sized>(
    params: &AugmentParams,
    iris: &Circle,
    rng: &mut R,
) -> Result<AugmentPlan> {
    let p = params.probability;
    let center = Point::new(0.5 * W, 0.5 * H);
    for _ in 0..MAX_AUGMENT_RETRIES {
        let fire = |rng: &mut R| p > 0.0 && rng.random_bool(p.min(1.0));
        let blur = fire(rng).then(|| rng.random_range(params.blur.0..=params.blur.1));
        let brightness =
            fire(rng).then(|| rng.random_range(-params.brightness..=params.brightness));
        let contrast = fire(rng).then(|| rng.random_range(-params.contrast..=params.contrast));
        let mut g = Affine2::IDENTITY;
        if fire(rng) {
            let s = rng.random_range(params.scale.0..=params.scale.1);
            g = Affine2::about(Affine2::scale(s, s), center);
        }
        if let Some((k0, k1)) = params.stretch {
            if fire(rng) {
                let k = rng.random_range(k0..=k1);
                let phi = rng.random_range(0.0..std::f64::consts::PI);
                let rot = Affine2::rotation(phi);
                let stretch = rot
                    .inverse()
                    .expect("rotation")
                    .then_after(&Affine2::scale(k, 1.0))
                    .then_after(&rot);
                g = Affine2::about(stretch, center).then_after(&g);
            }
        }
        if fire(rng) {
            let deg = rng.random_range(-params.rotation_deg..=params.rotation_deg);
            g = Affine2::about(Affine2::rotation(deg.to_radians()), center).then_after(&g);
        }
        if params.shift && fire(rng) {
            let e = match circle_under_affine(iris, &g) {
                Ok(e) => e,
                Err(_) => continue,
            };
            let (hx, hy) = e.half_extents();
            let (x0, x1) = (hx - e.x, W - hx - e.x);
            let (y0, y1) = (hy - e.y, H - hy - e.y);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let tx = rng.random_range(x0..=x1);
            let ty = rng.random_range(y0..=y1);
            g = Affine2::translation(tx, ty).then_after(&g);
        }
        if g != Affine2::IDENTITY && !iris_fits(iris, &g) {
            continue;
        }
        return Ok(AugmentPlan {
            blur,
            brightness,
            contrast,
            geometric: g,
        });
    }
    Err(DataError::IrisOutOfFrame(MAX_AUGMENT_RETRIES))
}

/// Full-resolution augmentation with label transport. Only similarity
/// maps are representable as circles; use [`augment_ellipse`] when
/// `params.stretch` is set.
pub fn augment<R: Rng + ?Sized>(
    image: &GrayF,
    labels: &LandmarkSet,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<(GrayF, LandmarkSet)> {
    let plan = sample_plan(params, &labels.iris, rng)?;
    let out = plan.apply(image, &Affine2::IDENTITY, REFERENCE_WIDTH, REFERENCE_HEIGHT);
    Ok((out, labels.transformed(&plan.geometric)))
}

/// Ellipse labels for circle labels seen through `map`.
pub fn ellipse_labels(labels: &LandmarkSet, map: &Affine2) -> Result<EllipseLandmarks> {
    Ok(EllipseLandmarks {
        pupil: circle_under_affine(&labels.pupil, map)?,
        iris: circle_under_affine(&labels.iris, map)?,
        eyelid: labels.eyelid.map(|p| map.apply(p)),
    })
}

/// Like [`augment`] but allows anisotropic maps; labels become ellipses.
pub fn augment_ellipse<R: Rng + ?Sized>(
    image: &GrayF,
    labels: &LandmarkSet,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<(GrayF, EllipseLandmarks)> {
    let plan = sample_plan(params, &labels.iris, rng)?;
    let out = plan.apply(image, &Affine2::IDENTITY, REFERENCE_WIDTH, REFERENCE_HEIGHT);
    Ok((out, ellipse_labels(labels, &plan.geometric)?))
}

/// Standard deviation of ILN iris errors, used to jitter PRN crops.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JitterStd {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl JitterStd {
    pub fn validate(&self) -> Result<()> {
        for v in [self.x, self.y, self.r] {
            if !(v >= 0.0) {
                return Err(DataError::NegativeStd(v));
            }
        }
        Ok(())
    }
}

/// Ground-truth iris perturbed by independent Gaussians. The radius is kept
/// at least one pixel.
pub fn jitter_iris<R: Rng + ?Sized>(iris: &Circle, std: &JitterStd, rng: &mut R) -> Circle {
    let mut n = || rng.sample::<f64, _>(StandardNormal);
    let (ex, ey, er) = (n(), n(), n());
    Circle::new(
        iris.x + std.x * ex,
        iris.y + std.y * ey,
        (iris.r + std.r * er).max(1.0),
    )
}

/// One PRN training sample: full-image augmentation without shift, then a
/// crop around the jittered ground-truth iris.
pub fn prn_crop_sample<R: Rng + ?Sized>(
    image: &GrayF,
    labels: &LandmarkSet,
    std: &JitterStd,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<(GrayF, [f64; PRN_DIM], RoiFrame)> {
    std.validate()?;
    labels.validate()?;
    let plan = sample_plan(&params.without_shift(), &labels.iris, rng)?;
    let moved = labels.transformed(&plan.geometric);
    let iris = jitter_iris(&moved.iris, std, rng);
    let roi = make_roi(&iris)?;
    let crop = plan.apply(image, &roi.to_crop(), roi.out_size, roi.out_size);
    Ok((crop, to_roi_coords(&moved.pupil, &roi), roi))
}

/// A rendered or loaded eye image with its labels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Gray8,
    pub labels: LandmarkSet,
    pub side: EyeSide,
}

impl Sample {
    pub fn from_scene(id: impl Into<String>, scene: &EyeScene) -> Result<Self> {
        let (img, labels) = scene.render()?;
        Ok(Self {
            id: id.into(),
            image: img.to_u8(),
            labels,
            side: scene.side,
        })
    }

    pub fn annotation(&self) -> AnnotationRecord {
        AnnotationRecord::new(format!("images/{}.pgm", self.id), &self.labels, self.side)
    }
}

/// Which part of a corpus a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

/// Seeds of a synthetic corpus and their split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub base_seed: u64,
    pub train: Vec<u64>,
    pub test: Vec<u64>,
    pub validation: Vec<u64>,
}

impl CorpusManifest {
    /// Draws `n_train + n_test` scene seeds, shuffles and splits them; the
    /// validation seeds come from an independent stream.
    pub fn synthetic(base_seed: u64, n_train: usize, n_test: usize, n_val: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        let mut seeds: Vec<u64> = (0..n_train + n_test).map(|_| rng.next_u64()).collect();
        seeds.shuffle(&mut rng);
        let test = seeds.split_off(n_train);
        let mut vrng = ChaCha8Rng::seed_from_u64(base_seed);
        vrng.set_stream(1);
        let validation = (0..n_val).map(|_| vrng.next_u64()).collect();
        Self {
            base_seed,
            train: seeds,
            test,
            validation,
        }
    }

    pub fn seeds(&self, split: Split) -> &[u64] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Validation => &self.validation,
        }
    }

    pub fn sample_id(split: Split, index: usize) -> String {
        format!("{}_{index:05}", split.as_str())
    }

    /// Renders one split.
    pub fn render(&self, split: Split) -> Result<Vec<Sample>> {
        self.seeds(split)
            .iter()
            .enumerate()
            .map(|(i, &s)| Sample::from_scene(Self::sample_id(split, i), &EyeScene::random(s)))
            .collect()
    }
}

/// Splits held in memory.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub validation: Vec<Sample>,
}

impl Corpus {
    pub fn synthesize(manifest: &CorpusManifest) -> Result<Self> {
        Ok(Self {
            train: manifest.render(Split::Train)?,
            test: manifest.render(Split::Test)?,
            validation: manifest.render(Split::Validation)?,
        })
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Validation => &self.validation,
        }
    }

    /// Writes `images/*.pgm`, `annotations.jsonl`, `split.txt` and (for
    /// synthetic corpora) `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path, manifest: Option<&CorpusManifest>) -> Result<()> {
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(io_err(&images))?;
        let mut records = Vec::new();
        let mut split_txt = String::new();
        for split in [Split::Train, Split::Test, Split::Validation] {
            for s in self.split(split) {
                let path = images.join(format!("{}.pgm", s.id));
                let mut buf = Vec::new();
                write_pgm(&mut buf, &s.image)?;
                fs::write(&path, buf).map_err(io_err(&path))?;
                let rec = s.annotation();
                split_txt.push_str(&format!("{} {}\n", rec.image, split.as_str()));
                records.push(rec);
            }
        }
        let ann = dir.join("annotations.jsonl");
        fs::write(&ann, codec::write_jsonl(&records)).map_err(io_err(&ann))?;
        let sp = dir.join("split.txt");
        fs::write(&sp, split_txt).map_err(io_err(&sp))?;
        if let Some(m) = manifest {
            let mp = dir.join("manifest.json");
            let text = serde_json::to_string_pretty(m).expect("manifest serializes");
            fs::write(&mp, text).map_err(io_err(&mp))?;
        }
        Ok(())
    }

    /// Loads a corpus directory written by [`Corpus::write`] or assembled by
    /// hand (annotations + split file, images of any size). Images and
    /// labels are brought to the 640x480 reference frame.
    pub fn load(dir: &Path) -> Result<Self> {
        let ann = dir.join("annotations.jsonl");
        let text = fs::read_to_string(&ann).map_err(io_err(&ann))?;
        let records = codec::read_jsonl(&text)?;
        let sp = dir.join("split.txt");
        let split_text = fs::read_to_string(&sp).map_err(io_err(&sp))?;
        let mut assignment = std::collections::HashMap::new();
        for (n, line) in split_text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (img, which) = line.rsplit_once(' ').ok_or_else(|| {
                DataError::Manifest(format!("split.txt line {}: expected '<image> <split>'", n + 1))
            })?;
            let split = match which {
                "train" => Split::Train,
                "test" => Split::Test,
                "validation" | "val" => Split::Validation,
                other => {
                    return Err(DataError::Manifest(format!(
                        "split.txt line {}: unknown split {other}",
                        n + 1
                    )))
                }
            };
            assignment.insert(img.to_string(), split);
        }
        let mut corpus = Corpus::default();
        for rec in records {
            let Some(&split) = assignment.get(&rec.image) else {
                continue;
            };
            let path = dir.join(&rec.image);
            let (img, map) = load_image(&path)?;
            let id = Path::new(&rec.image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| rec.image.clone());
            let sample = Sample {
                id,
                image: img.to_u8(),
                labels: rec.landmarks().transformed(&map),
                side: rec.eye,
            };
            match split {
                Split::Train => corpus.train.push(sample),
                Split::Test => corpus.test.push(sample),
                Split::Validation => corpus.validation.push(sample),
            }
        }
        Ok(corpus)
    }
}
