//! ILN and PRN: VGG-style regression networks, their losses and ensembling.
//!
//! Both networks share one body: five stages of
//! `conv3x3 -> relu -> conv3x3 -> relu -> maxpool2` with widths
//! `round(m * [64, 128, 256, 512, 512])` (at least 8), global average
//! pooling, and a linear head of length `d`. ILN sees the whole eye image
//! resized to `round(640 s) x round(480 s)`; PRN sees a 128x128 iris crop.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::codec::{
    self, from_roi_coords, make_roi, CodecError, EllipseLandmarks, Layout, NormStats, RoiFrame,
    TargetVector, REFERENCE_HEIGHT, REFERENCE_WIDTH, ROI_SIZE,
};
use crate::geometry::{Circle, LandmarkSet};
use crate::raster::GrayF;
use crate::tensor::{ops, NodeId, Tape, Tensor, TensorError};

pub const BASE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
pub const MIN_WIDTH: usize = 8;
pub const CONVS_PER_STAGE: usize = 2;

const MAGIC: &[u8; 4] = b"ILNW";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("weights file: {0}")]
    Format(String),
    #[error("unsupported output length {0}; expected 3, 22 or 25")]
    UnsupportedDim(usize),
    #[error("image must be {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    ImageSize {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("model layout {got:?} cannot serve this call (needs {expected:?})")]
    WrongLayout { expected: Layout, got: Layout },
    #[error("prediction and target lengths differ: {pred} vs {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("ensemble needs at least one prediction")]
    EmptyEnsemble,
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Scale `s`, width multiplier `m` and output length `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub scale: f64,
    pub width: f64,
    pub out_dim: usize,
}

impl ModelConfig {
    pub fn iln(scale: f64, width: f64) -> Self {
        Self {
            scale,
            width,
            out_dim: codec::LANDMARK_DIM,
        }
    }

    /// PRN has no scale parameter; `scale` is recorded as 1.
    pub fn prn(width: f64) -> Self {
        Self {
            scale: 1.0,
            width,
            out_dim: codec::PRN_DIM,
        }
    }

    pub fn ellipse(scale: f64, width: f64) -> Self {
        Self {
            scale,
            width,
            out_dim: codec::ELLIPSE_DIM,
        }
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::from_dim(self.out_dim).ok_or(NetError::UnsupportedDim(self.out_dim))
    }

    /// Network input `(width, height)`.
    pub fn input_dims(&self) -> (usize, usize) {
        if self.out_dim == codec::PRN_DIM {
            (ROI_SIZE, ROI_SIZE)
        } else {
            (
                (REFERENCE_WIDTH as f64 * self.scale).round() as usize,
                (REFERENCE_HEIGHT as f64 * self.scale).round() as usize,
            )
        }
    }

    pub fn stage_widths(&self) -> [usize; 5] {
        BASE_WIDTHS.map(|b| ((b as f64 * self.width).round() as usize).max(MIN_WIDTH))
    }

    /// Multiply-accumulates of one forward pass.
    pub fn forward_macs(&self) -> u64 {
        let (mut w, mut h) = self.input_dims();
        let mut cin = 1usize;
        let mut macs = 0u64;
        for cout in self.stage_widths() {
            for _ in 0..CONVS_PER_STAGE {
                macs += (w * h * cin * cout * 9) as u64;
                cin = cout;
            }
            w /= 2;
            h /= 2;
        }
        macs + (cin * self.out_dim) as u64
    }
}

/// Per-element loss weights `w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights(pub Vec<f32>);

impl LossWeights {
    /// 3.0 on the six circle elements, 1.0 on the eyelid points.
    pub fn iln() -> Self {
        Self::circles_weighted(3.0)
    }

    pub fn circles_weighted(circle_weight: f32) -> Self {
        let mut w = vec![1.0; codec::LANDMARK_DIM];
        w[..6].fill(circle_weight);
        Self(w)
    }

    pub fn prn() -> Self {
        Self(vec![1.0; codec::PRN_DIM])
    }

    /// Shape elements (both ellipses and the tilt) take the circle weight.
    pub fn ellipse() -> Self {
        let mut w = vec![1.0; codec::ELLIPSE_DIM];
        w[..9].fill(3.0);
        Self(w)
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0; d])
    }

    pub fn for_layout(layout: Layout) -> Self {
        match layout {
            Layout::Landmarks => Self::iln(),
            Layout::PupilRoi => Self::prn(),
            Layout::Ellipses => Self::ellipse(),
        }
    }
}

/// Named parameter tensors for one network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

fn conv_name(stage: usize, conv: usize, part: &str) -> String {
    format!("stage{}.conv{}.{part}", stage + 1, conv + 1)
}

impl NetworkParams {
    /// Fan-in scaled normal initialization: `sqrt(2 / fan_in)` for conv
    /// kernels, `sqrt(1 / fan_in)` for the head, zero biases. A zero head
    /// bias makes the untrained network predict the normalization means.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let normal = |n: usize, std: f64, rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..n)
                .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
                .collect()
        };
        let mut cin = 1usize;
        for (s, cout) in config.stage_widths().into_iter().enumerate() {
            for c in 0..CONVS_PER_STAGE {
                let fan_in = cin * 9;
                let w = normal(cout * fan_in, (2.0 / fan_in as f64).sqrt(), &mut rng);
                names.push(conv_name(s, c, "weight"));
                tensors.push(Tensor::new([cout, cin, 3, 3], w)?);
                names.push(conv_name(s, c, "bias"));
                tensors.push(Tensor::zeros([cout])?);
                cin = cout;
            }
        }
        let hw = normal(config.out_dim * cin, (1.0 / cin as f64).sqrt(), &mut rng);
        names.push("head.weight".into());
        tensors.push(Tensor::new([config.out_dim, cin], hw)?);
        names.push("head.bias".into());
        tensors.push(Tensor::zeros([config.out_dim])?);
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    /// A network whose output is the constant `normalized` vector: zero head
    /// weights, head bias set to the given values.
    pub fn constant_head(config: ModelConfig, normalized: &[f64]) -> Result<Self> {
        if normalized.len() != config.out_dim {
            return Err(NetError::LengthMismatch {
                pred: config.out_dim,
                target: normalized.len(),
            });
        }
        let mut p = Self::init(config, 0)?;
        let n = p.tensors.len();
        p.tensors[n - 2].data_mut().fill(0.0);
        p.tensors[n - 1]
            .data_mut()
            .iter_mut()
            .zip(normalized)
            .for_each(|(b, &v)| *b = v as f32);
        Ok(p)
    }

    /// Constant network reproducing a landmark set exactly.
    pub fn constant_landmarks(config: ModelConfig, landmarks: &LandmarkSet) -> Result<Self> {
        let k = TargetVector::from_landmarks(landmarks);
        let n = codec::normalize_targets(&k, &NormStats::iln())?;
        Self::constant_head(config, &n)
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn layout(&self) -> Layout {
        self.config.layout().expect("validated at construction")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Records a forward pass on `tape`. Returns the `[N, d]` output node and
    /// the parameter leaves in storage order.
    pub fn forward_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let leaves: Vec<NodeId> = self.tensors.iter().map(|t| tape.param(t)).collect();
        let mut x = input;
        let mut li = 0;
        for _ in 0..5 {
            for _ in 0..CONVS_PER_STAGE {
                x = tape.conv2d(x, leaves[li], leaves[li + 1])?;
                x = tape.relu(x)?;
                li += 2;
            }
            x = tape.maxpool2(x)?;
        }
        x = tape.global_avg_pool(x)?;
        let out = tape.linear(x, leaves[li], leaves[li + 1])?;
        Ok((out, leaves))
    }

    /// Tape-free forward pass over a `[N, 1, H, W]` batch.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let t = &self.tensors;
        let mut x = ops::relu(&ops::conv2d(input, &t[0], &t[1])?);
        let mut li = 2;
        for stage in 0..5 {
            let first = usize::from(stage == 0);
            for _ in first..CONVS_PER_STAGE {
                x = ops::relu(&ops::conv2d(&x, &t[li], &t[li + 1])?);
                li += 2;
            }
            x = ops::maxpool2(&x)?;
        }
        x = ops::global_avg_pool(&x)?;
        Ok(ops::linear(&x, &t[li], &t[li + 1])?)
    }

    /// Raw normalized outputs for one preprocessed input.
    pub fn predict_normalized(&self, input: &Tensor) -> Result<Vec<f64>> {
        let out = self.forward(input)?;
        Ok(out.data().iter().map(|&v| f64::from(v)).collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.config.scale.to_le_bytes())?;
        w.write_all(&self.config.width.to_le_bytes())?;
        w.write_all(&(self.config.out_dim as u32).to_le_bytes())?;
        w.write_all(&self.layout().hash().to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[t.rank() as u8])?;
            for &e in t.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(4 * t.numel());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)
                .map_err(|_| NetError::Format("truncated".into()))?;
            Ok(b)
        }
        if &take::<4, _>(&mut r)? != MAGIC {
            return Err(NetError::Format("bad magic, expected ILNW".into()));
        }
        let version = u16::from_le_bytes(take(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(NetError::Format(format!("unsupported version {version}")));
        }
        let scale = f64::from_le_bytes(take(&mut r)?);
        let width = f64::from_le_bytes(take(&mut r)?);
        let out_dim = u32::from_le_bytes(take(&mut r)?) as usize;
        let config = ModelConfig {
            scale,
            width,
            out_dim,
        };
        let layout = config.layout()?;
        let hash = u64::from_le_bytes(take(&mut r)?);
        if hash != layout.hash() {
            return Err(NetError::Format(format!(
                "layout hash {hash:#x} does not match {layout:?}"
            )));
        }
        // Rebuild the expected parameter list to validate names and shapes.
        let expected = Self::init(config, 0)?;
        let count = u32::from_le_bytes(take(&mut r)?) as usize;
        if count != expected.tensors.len() {
            return Err(NetError::Format(format!(
                "expected {} tensors, found {count}",
                expected.tensors.len()
            )));
        }
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for (ename, et) in expected.names.iter().zip(&expected.tensors) {
            let len = u16::from_le_bytes(take(&mut r)?) as usize;
            let mut nb = vec![0u8; len];
            r.read_exact(&mut nb)
                .map_err(|_| NetError::Format("truncated name".into()))?;
            let name = String::from_utf8(nb).map_err(|_| NetError::Format("bad name".into()))?;
            if &name != ename {
                return Err(NetError::Format(format!(
                    "expected tensor {ename}, found {name}"
                )));
            }
            let rank = take::<1, _>(&mut r)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut r)?) as usize);
            }
            if shape != et.shape() {
                return Err(NetError::Format(format!(
                    "{name}: shape {shape:?}, expected {:?}",
                    et.shape()
                )));
            }
            let numel = et.numel();
            let mut raw = vec![0u8; 4 * numel];
            r.read_exact(&mut raw)
                .map_err(|_| NetError::Format(format!("{name}: truncated data")))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

/// Image scaled to `[0, 1]` and resized to the network input, as `[1, 1, H, W]`.
pub fn preprocess(image: &GrayF, dims: (usize, usize)) -> Tensor {
    let unit = image.map(|v| v / 255.0);
    let resized = unit.resize(dims.0, dims.1);
    Tensor::new([1, 1, dims.1, dims.0], resized.into_data()).expect("positive extents")
}

fn check_reference_size(image: &GrayF) -> Result<()> {
    if image.dims() != (REFERENCE_WIDTH, REFERENCE_HEIGHT) {
        return Err(NetError::ImageSize {
            expected_w: REFERENCE_WIDTH,
            expected_h: REFERENCE_HEIGHT,
            got_w: image.width(),
            got_h: image.height(),
        });
    }
    Ok(())
}

fn expect_layout(params: &NetworkParams, layout: Layout) -> Result<()> {
    if params.layout() != layout {
        return Err(NetError::WrongLayout {
            expected: layout,
            got: params.layout(),
        });
    }
    Ok(())
}

/// Denormalized outputs of an ILN-style model on a 640x480 image.
pub fn iln_raw(image: &GrayF, params: &NetworkParams) -> Result<Vec<f64>> {
    check_reference_size(image)?;
    let input = preprocess(image, params.config().input_dims());
    let out = params.predict_normalized(&input)?;
    Ok(params.layout().default_stats().denormalize(&out)?)
}

/// Landmarks from a 640x480 image.
pub fn iln_forward(image: &GrayF, params: &NetworkParams) -> Result<TargetVector> {
    expect_layout(params, Layout::Landmarks)?;
    Ok(TargetVector::from_slice(&iln_raw(image, params)?)?)
}

/// Ellipse landmarks from a 640x480 image (25-element head).
pub fn ellipse_forward(image: &GrayF, params: &NetworkParams) -> Result<EllipseLandmarks> {
    expect_layout(params, Layout::Ellipses)?;
    Ok(EllipseLandmarks::decode(&iln_raw(image, params)?)?)
}

/// Crop `roi` out of `image` and resample to the 128x128 PRN input.
pub fn crop_roi(image: &GrayF, roi: &RoiFrame) -> GrayF {
    image
        .warp(&roi.to_crop(), roi.out_size, roi.out_size)
        .expect("crop map has positive scale")
}

/// Pupil circle in original coordinates, predicted from the crop around
/// `iris` (usually the ILN iris).
pub fn prn_forward(image: &GrayF, iris: &Circle, params: &NetworkParams) -> Result<Circle> {
    expect_layout(params, Layout::PupilRoi)?;
    check_reference_size(image)?;
    let roi = make_roi(iris)?;
    let crop = crop_roi(image, &roi);
    prn_forward_crop(&crop, &roi, params)
}

/// PRN on an already cropped 128x128 raster.
pub fn prn_forward_crop(crop: &GrayF, roi: &RoiFrame, params: &NetworkParams) -> Result<Circle> {
    expect_layout(params, Layout::PupilRoi)?;
    if crop.dims() != (ROI_SIZE, ROI_SIZE) {
        return Err(NetError::ImageSize {
            expected_w: ROI_SIZE,
            expected_h: ROI_SIZE,
            got_w: crop.width(),
            got_h: crop.height(),
        });
    }
    let input = preprocess(crop, (ROI_SIZE, ROI_SIZE));
    let out = params.predict_normalized(&input)?;
    Ok(from_roi_coords(&[out[0], out[1], out[2]], roi))
}

/// Replaces the pupil with the refined circle; iris and eyelid untouched.
pub fn refine_pupil(landmarks: &LandmarkSet, refined: Circle) -> LandmarkSet {
    LandmarkSet {
        pupil: refined,
        ..*landmarks
    }
}

/// Full ILN (+ optional PRN) localization of a 640x480 image.
pub fn localize(
    image: &GrayF,
    iln: &NetworkParams,
    prn: Option<&NetworkParams>,
) -> Result<LandmarkSet> {
    let coarse = iln_forward(image, iln)?.to_landmarks();
    match prn {
        Some(prn) if coarse.iris.r > 0.0 && coarse.iris.r.is_finite() => {
            let pupil = prn_forward(image, &coarse.iris, prn)?;
            Ok(refine_pupil(&coarse, pupil))
        }
        _ => Ok(coarse),
    }
}

/// Weighted L1 loss `sum_i w_i |pred_i - target_i|` (batch mean for
/// `[N, d]` predictions).
pub fn weighted_l1_loss<'a>(
    tape: &mut Tape<'a>,
    pred: NodeId,
    target: &[f32],
    weights: &LossWeights,
) -> Result<NodeId> {
    let p = tape.value(pred)?;
    let d = *p.shape().last().unwrap_or(&0);
    if d != weights.0.len() || target.len() != p.numel() {
        return Err(NetError::LengthMismatch {
            pred: p.numel(),
            target: target.len(),
        });
    }
    Ok(tape.weighted_l1(pred, target, &weights.0)?)
}

/// Elementwise mean of several landmark vectors.
pub fn ensemble_predict(outputs: &[TargetVector]) -> Result<TargetVector> {
    if outputs.is_empty() {
        return Err(NetError::EmptyEnsemble);
    }
    let mut acc = [0.0; codec::LANDMARK_DIM];
    for o in outputs {
        acc.iter_mut().zip(&o.0).for_each(|(a, v)| *a += v);
    }
    let n = outputs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(TargetVector(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn sample_landmarks() -> LandmarkSet {
        LandmarkSet {
            pupil: Circle::new(318.0, 242.0, 45.0),
            iris: Circle::new(321.0, 240.0, 112.0),
            eyelid: [
                Point::new(90.0, 250.0),
                Point::new(560.0, 245.0),
                Point::new(200.0, 150.0),
                Point::new(320.0, 120.0),
                Point::new(440.0, 150.0),
                Point::new(200.0, 330.0),
                Point::new(320.0, 350.0),
                Point::new(440.0, 330.0),
            ],
        }
    }

    #[test]
    fn config_dims_and_widths() {
        let c = ModelConfig::iln(0.2, 0.25);
        assert_eq!(c.input_dims(), (128, 96));
        assert_eq!(c.stage_widths(), [16, 32, 64, 128, 128]);
        assert_eq!(ModelConfig::iln(0.125, 0.125).stage_widths(), [8, 16, 32, 64, 64]);
        assert_eq!(ModelConfig::prn(0.25).input_dims(), (128, 128));
        assert_eq!(ModelConfig::iln(0.1, 1.0).input_dims(), (64, 48));
    }

    #[test]
    fn param_count_decreases_with_width() {
        let counts: Vec<usize> = [1.0, 0.5, 0.25, 0.125]
            .iter()
            .map(|&m| NetworkParams::init(ModelConfig::iln(0.2, m), 1).unwrap().param_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] > w[1]), "{counts:?}");
    }

    #[test]
    fn macs_scale_with_input_area() {
        let a = ModelConfig::iln(0.2, 0.25).forward_macs() as f64;
        let b = ModelConfig::iln(0.4, 0.25).forward_macs() as f64;
        assert!((b / a - 4.0).abs() < 0.1, "{}", b / a);
    }

    #[test]
    fn tape_and_direct_forward_agree() {
        let p = NetworkParams::init(ModelConfig::iln(0.1, 0.125), 3).unwrap();
        let img = GrayF::new(
            640,
            480,
            (0..640 * 480).map(|i| (i * 31 % 251) as f32).collect(),
        )
        .unwrap();
        let x = preprocess(&img, p.config().input_dims());
        let direct = p.forward(&x).unwrap();
        let mut tape = Tape::new();
        let xin = tape.constant(x);
        let (out, _) = p.forward_tape(&mut tape, xin).unwrap();
        let taped = tape.value(out).unwrap();
        for (a, b) in direct.data().iter().zip(taped.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(direct.shape(), &[1, 22]);
    }

    #[test]
    fn constant_head_reproduces_landmarks() {
        let l = sample_landmarks();
        let p = NetworkParams::constant_landmarks(ModelConfig::iln(0.2, 0.25), &l).unwrap();
        let img = GrayF::filled(640, 480, 90.0);
        let k = iln_forward(&img, &p).unwrap();
        let want = TargetVector::from_landmarks(&l);
        for (a, b) in k.0.iter().zip(&want.0) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        let again = iln_forward(&img, &p).unwrap();
        assert_eq!(k, again);
    }

    #[test]
    fn wrong_image_size_rejected() {
        let p = NetworkParams::init(ModelConfig::iln(0.1, 0.125), 0).unwrap();
        let img = GrayF::filled(320, 240, 0.0);
        assert!(matches!(
            iln_forward(&img, &p),
            Err(NetError::ImageSize { .. })
        ));
    }

    #[test]
    fn prn_constant_head_and_refinement_contract() {
        let l = sample_landmarks();
        let roi = make_roi(&l.iris).unwrap();
        let target = codec::to_roi_coords(&l.pupil, &roi);
        let prn = NetworkParams::constant_head(ModelConfig::prn(0.125), &target).unwrap();
        let img = GrayF::filled(640, 480, 120.0);
        let pupil = prn_forward(&img, &l.iris, &prn).unwrap();
        assert!((pupil.x - l.pupil.x).abs() < 1e-3);
        assert!((pupil.r - l.pupil.r).abs() < 1e-3);

        let mut coarse = l;
        coarse.pupil = Circle::new(300.0, 230.0, 60.0);
        let refined = refine_pupil(&coarse, pupil);
        assert_eq!(refined.iris, coarse.iris);
        assert_eq!(refined.eyelid, coarse.eyelid);
        assert_eq!(refined.pupil, pupil);

        let iln = NetworkParams::constant_landmarks(ModelConfig::iln(0.1, 0.125), &coarse).unwrap();
        let full = localize(&img, &iln, Some(&prn)).unwrap();
        assert!((full.pupil.x - l.pupil.x).abs() < 0.05, "{:?}", full.pupil);
        assert!((full.iris.x - coarse.iris.x).abs() < 1e-3);
    }

    #[test]
    fn weighted_loss_values() {
        let w = LossWeights::iln();
        assert_eq!(&w.0[..7], &[3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 1.0]);
        let mut tape = Tape::new();
        let mut pred = vec![0.0f32; 22];
        let target = vec![0.0f32; 22];
        let p = tape.leaf(Tensor::new([1, 22], pred.clone()).unwrap(), true);
        let l = weighted_l1_loss(&mut tape, p, &target, &w).unwrap();
        assert_eq!(tape.value(l).unwrap().data(), &[0.0]);
        pred[2] = 0.5;
        let p = tape.leaf(Tensor::new([1, 22], pred).unwrap(), true);
        let l = weighted_l1_loss(&mut tape, p, &target, &w).unwrap();
        assert_eq!(tape.value(l).unwrap().data(), &[1.5]);
        assert!(weighted_l1_loss(&mut tape, p, &target[..3], &w).is_err());
    }

    #[test]
    fn ensemble_means() {
        let a = TargetVector([10.0; 22]);
        let b = TargetVector([20.0; 22]);
        assert_eq!(ensemble_predict(&[a, a]).unwrap(), a);
        assert_eq!(ensemble_predict(&[a, b]).unwrap(), TargetVector([15.0; 22]));
        assert!(matches!(ensemble_predict(&[]), Err(NetError::EmptyEnsemble)));
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let p = NetworkParams::init(ModelConfig::iln(0.2, 0.125), 9).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"ILNW");
        let q = NetworkParams::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(bytes, q.to_bytes());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NetworkParams::from_bytes(&bad).is_err());
        assert!(NetworkParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        // corrupt the layout hash
        let mut bad = bytes;
        bad[26] ^= 0xff;
        assert!(NetworkParams::from_bytes(&bad).is_err());
    }
}
