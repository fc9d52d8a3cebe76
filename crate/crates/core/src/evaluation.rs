//! Error metrics, CED curves, report writers and the latency benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::geometry::{normalized_hausdorff, EyeWidth, LandmarkSet, Point};
use crate::raster::GrayF;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no errors to summarize")]
    Empty,
    #[error("thresholds must be sorted ascending")]
    UnsortedThresholds,
    #[error("benchmark needs at least 3 repetitions, got {0}")]
    TooFewReps(usize),
    #[error("benchmark needs at least one image")]
    NoImages,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Landmark names in [`per_point_l2`] order.
pub const POINT_NAMES: [&str; 10] = [
    "pupil_center",
    "iris_center",
    "P1",
    "P2",
    "P3",
    "P4",
    "P5",
    "P6",
    "P7",
    "P8",
];

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub predicted: LandmarkSet,
    pub truth: LandmarkSet,
    pub eye_width: EyeWidth,
    pub time_ms: Option<f64>,
}

impl EvalRecord {
    /// Eye width is taken from the ground-truth corners.
    pub fn new(id: impl Into<String>, predicted: LandmarkSet, truth: LandmarkSet) -> Option<Self> {
        let eye_width = truth.eye_width().ok()?;
        Some(Self {
            id: id.into(),
            predicted,
            truth,
            eye_width,
            time_ms: None,
        })
    }

    pub fn pupil_error(&self) -> f64 {
        normalized_hausdorff(&self.truth.pupil, &self.predicted.pupil, self.eye_width)
    }

    pub fn iris_error(&self) -> f64 {
        normalized_hausdorff(&self.truth.iris, &self.predicted.iris, self.eye_width)
    }

    /// Euclidean error of both centers and the eight eyelid points.
    pub fn point_errors(&self) -> [f64; 10] {
        let (p, t) = (&self.predicted, &self.truth);
        let mut e = [0.0; 10];
        e[0] = p.pupil.center().dist(t.pupil.center());
        e[1] = p.iris.center().dist(t.iris.center());
        for k in 0..8 {
            e[2 + k] = p.eyelid[k].dist(t.eyelid[k]);
        }
        e
    }
}

/// Fraction of `errors` at or below each threshold.
pub fn ced_curve(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedThresholds);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect())
}

/// Evenly spaced thresholds `0, step, .., max`.
pub fn thresholds(max: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|i| max * i as f64 / (count - 1) as f64)
        .collect()
}

/// Mean L2 error per landmark (centers first, then `P1..P8`).
pub fn per_point_l2(records: &[EvalRecord]) -> Result<[f64; 10]> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut acc = [0.0; 10];
    for r in records {
        acc.iter_mut()
            .zip(r.point_errors())
            .for_each(|(a, e)| *a += e);
    }
    let n = records.len() as f64;
    Ok(acc.map(|a| a / n))
}

/// Headline numbers for a set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub count: usize,
    pub mean_pupil: f64,
    pub mean_iris: f64,
    pub per_point: [f64; 10],
    pub mean_time_ms: Option<f64>,
}

pub fn summarize(records: &[EvalRecord]) -> Result<EvalSummary> {
    let per_point = per_point_l2(records)?;
    let n = records.len() as f64;
    let times: Vec<f64> = records.iter().filter_map(|r| r.time_ms).collect();
    Ok(EvalSummary {
        count: records.len(),
        mean_pupil: records.iter().map(EvalRecord::pupil_error).sum::<f64>() / n,
        mean_iris: records.iter().map(EvalRecord::iris_error).sum::<f64>() / n,
        per_point,
        mean_time_ms: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
    })
}

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut s = String::from("id,pupil_hd,iris_hd");
    for n in POINT_NAMES {
        let _ = write!(s, ",{n}_l2");
    }
    s.push_str(",time_ms\n");
    for r in records {
        let _ = write!(s, "{},{},{}", r.id, r.pupil_error(), r.iris_error());
        for e in r.point_errors() {
            let _ = write!(s, ",{e}");
        }
        match r.time_ms {
            Some(t) => {
                let _ = writeln!(s, ",{t}");
            }
            None => s.push_str(",\n"),
        }
    }
    s
}

pub fn summary_csv(summary: &EvalSummary) -> String {
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "count,{}", summary.count);
    let _ = writeln!(s, "mean_pupil_hd,{}", summary.mean_pupil);
    let _ = writeln!(s, "mean_iris_hd,{}", summary.mean_iris);
    for (n, v) in POINT_NAMES.iter().zip(summary.per_point) {
        let _ = writeln!(s, "mean_{n}_l2,{v}");
    }
    if let Some(t) = summary.mean_time_ms {
        let _ = writeln!(s, "mean_time_ms,{t}");
    }
    s
}

/// CED curves as a standalone SVG line plot. Output depends only on the
/// inputs.
pub fn ced_svg(title: &str, thresholds: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let (w, h, m) = (480.0, 360.0, 48.0);
    let xmax = thresholds.last().copied().unwrap_or(1.0).max(f64::EPSILON);
    let px = |x: f64| m + (w - 2.0 * m) * x / xmax;
    let py = |y: f64| h - m - (h - 2.0 * m) * y;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        b = h - m,
        r = w - m
    );
    for k in 0..=4 {
        let fx = xmax * k as f64 / 4.0;
        let fy = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{fx:.3}</text>"#,
            px(fx),
            h - m + 14.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{fy:.2}</text>"#,
            m - 4.0,
            py(fy) + 3.0
        );
    }
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = thresholds
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#,
            pts.join(" ")
        );
        let ly = m + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" font-family="sans-serif" font-size="11">{}</text>"#,
            w - m - 100.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Wall-clock latency statistics in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub samples: Vec<f64>,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// Times `run` once per image per repetition after `warmup` untimed
/// passes. The crate's kernels are single-threaded, so the timed region
/// runs on one worker.
pub fn bench_latency<F: FnMut(&GrayF)>(
    mut run: F,
    images: &[GrayF],
    warmup: usize,
    reps: usize,
) -> Result<LatencyStats> {
    if reps < 3 {
        return Err(EvalError::TooFewReps(reps));
    }
    if images.is_empty() {
        return Err(EvalError::NoImages);
    }
    for _ in 0..warmup {
        for img in images {
            run(img);
        }
    }
    let mut samples = Vec::with_capacity(reps * images.len());
    for _ in 0..reps {
        for img in images {
            let t = Instant::now();
            run(img);
            samples.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    let mean_ms = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(LatencyStats {
        mean_ms,
        p95_ms: percentile(&samples, 95.0),
        samples,
    })
}

/// Shifts every predicted location by `(dx, dy)`; radii are untouched.
pub fn shifted(l: &LandmarkSet, dx: f64, dy: f64) -> LandmarkSet {
    let mv = |p: Point| Point::new(p.x + dx, p.y + dy);
    let mut out = *l;
    out.pupil.x += dx;
    out.pupil.y += dy;
    out.iris.x += dx;
    out.iris.y += dy;
    out.eyelid = l.eyelid.map(mv);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Circle;

    fn truth() -> LandmarkSet {
        LandmarkSet {
            pupil: Circle::new(320.0, 240.0, 40.0),
            iris: Circle::new(322.0, 241.0, 110.0),
            eyelid: std::array::from_fn(|i| Point::new(100.0 + 60.0 * i as f64, 200.0)),
        }
    }

    #[test]
    fn ced_examples() {
        assert_eq!(ced_curve(&[0.1], &[0.05, 0.1, 0.2]).unwrap(), vec![0.0, 1.0, 1.0]);
        assert_eq!(
            ced_curve(&[0.3; 4], &[0.1, 0.3, 0.5]).unwrap(),
            vec![0.0, 1.0, 1.0]
        );
        assert_eq!(ced_curve(&[], &[0.1]), Err(EvalError::Empty));
        assert_eq!(ced_curve(&[0.1], &[0.2, 0.1]), Err(EvalError::UnsortedThresholds));
    }

    #[test]
    fn perfect_and_shifted_predictions() {
        let t = truth();
        let r = EvalRecord::new("a", t, t).unwrap();
        assert_eq!(per_point_l2(&[r.clone()]).unwrap(), [0.0; 10]);
        assert_eq!(r.pupil_error(), 0.0);
        let s = EvalRecord::new("b", shifted(&t, 3.0, 0.0), t).unwrap();
        for v in per_point_l2(&[s.clone(), s]).unwrap() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bench_rejects_few_reps() {
        let imgs = vec![GrayF::filled(4, 4, 0.0)];
        assert_eq!(
            bench_latency(|_| {}, &imgs, 0, 2).unwrap_err(),
            EvalError::TooFewReps(2)
        );
        let st = bench_latency(|_| {}, &imgs, 1, 3).unwrap();
        assert_eq!(st.samples.len(), 3);
        assert!(st.p95_ms >= 0.0);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[5.0], 95.0), 5.0);
    }

    #[test]
    fn svg_is_deterministic() {
        let th = thresholds(0.1, 11);
        let a = ced_svg("pupil", &th, &[("ILN", vec![0.5; 11])]);
        let b = ced_svg("pupil", &th, &[("ILN", vec![0.5; 11])]);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg") && a.contains("polyline"));
    }

    #[test]
    fn csv_shapes() {
        let t = truth();
        let r = EvalRecord::new("x", t, t).unwrap();
        let csv = records_csv(&[r.clone()]);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 14);
        let s = summarize(&[r]).unwrap();
        assert!(summary_csv(&s).contains("mean_pupil_hd,0"));
    }
}
