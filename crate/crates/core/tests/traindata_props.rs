use irisloc::geometry::{Circle, Point};
use irisloc::raster::GrayF;
use irisloc::traindata::{
    aspect_correct, augment, jitter_iris, prn_crop_sample, sample_plan, AugmentParams, Corpus,
    CorpusManifest, EyeScene, JitterStd, Split,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn label_transport_composes(seed in 0u64..10_000) {
        let scene = EyeScene::random(seed);
        let l = scene.landmarks();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = AugmentParams::default();
        let a = sample_plan(&p, &l.iris, &mut rng).unwrap();
        let la = l.transformed(&a.geometric);
        let b = sample_plan(&p, &la.iris, &mut rng).unwrap();
        let twice = la.transformed(&b.geometric);
        let once = l.transformed(&b.geometric.then_after(&a.geometric));
        let close = |u: f64, v: f64| (u - v).abs() < 1e-5;
        prop_assert!(close(twice.pupil.x, once.pupil.x) && close(twice.pupil.r, once.pupil.r));
        prop_assert!(close(twice.iris.y, once.iris.y) && close(twice.iris.r, once.iris.r));
        for (u, v) in twice.eyelid.iter().zip(once.eyelid.iter()) {
            prop_assert!(close(u.x, v.x) && close(u.y, v.y));
        }
    }

    #[test]
    fn augmented_iris_stays_in_frame(seed in 0u64..10_000) {
        let scene = EyeScene::random(seed);
        let l = scene.landmarks();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let plan = sample_plan(&AugmentParams::default(), &l.iris, &mut rng).unwrap();
        let m = l.transformed(&plan.geometric).iris;
        prop_assert!(m.x - m.r >= -1e-9 && m.x + m.r <= 640.0 + 1e-9);
        prop_assert!(m.y - m.r >= -1e-9 && m.y + m.r <= 480.0 + 1e-9);
    }

    #[test]
    fn aspect_correction_replicates_borders(w in 8usize..40, h in 8usize..40) {
        let data: Vec<f32> = (0..w * h).map(|i| (i % 251) as f32).collect();
        let img = GrayF::new(w, h, data).unwrap();
        let (out, map) = aspect_correct(&img).unwrap();
        prop_assert_eq!(out.dims(), (640, 480));
        // oracle: pad by replication to 4:3, then the map is a pure scale
        let (pw, ph) = if w * 3 < h * 4 {
            (((h * 4) as f64 / 3.0).round() as usize, h)
        } else if w * 3 > h * 4 {
            (w, ((w * 3) as f64 / 4.0).round() as usize)
        } else {
            (w, h)
        };
        let c = map.apply(Point::new(w as f64, h as f64));
        prop_assert!((c.x - 640.0 * w as f64 / pw as f64).abs() < 1e-9);
        prop_assert!((c.y - 480.0 * h as f64 / ph as f64).abs() < 1e-9);
        // the padded region holds a copy of the last input column / row
        let last = img.get(w - 1, h - 1);
        prop_assert!((out.get(639, 479) - last).abs() < 1e-3);
    }
}

#[test]
fn jitter_has_the_requested_spread() {
    let std = JitterStd { x: 4.0, y: 2.0, r: 3.0 };
    let iris = Circle::new(320.0, 240.0, 110.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let draws: Vec<Circle> = (0..n).map(|_| jitter_iris(&iris, &std, &mut rng)).collect();
    let stat = |f: &dyn Fn(&Circle) -> f64, mean: f64| {
        let m = draws.iter().map(f).sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|c| (f(c) - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((m - mean).abs() < 0.1, "mean {m}");
        sd
    };
    // the sample std of n normals is within ~3% of sigma at this n
    assert!((stat(&|c| c.x, 320.0) / 4.0 - 1.0).abs() < 0.03);
    assert!((stat(&|c| c.y, 240.0) / 2.0 - 1.0).abs() < 0.03);
    assert!((stat(&|c| c.r, 110.0) / 3.0 - 1.0).abs() < 0.03);
    assert!(JitterStd { x: -1.0, y: 0.0, r: 0.0 }.validate().is_err());
}

#[test]
fn photometric_only_augmentation_keeps_labels() {
    let scene = EyeScene::random(5);
    let (img, l) = scene.render().unwrap();
    let params = AugmentParams {
        probability: 1.0,
        scale: (1.0, 1.0),
        rotation_deg: 0.0,
        shift: false,
        ..AugmentParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (out, moved) = augment(&img, &l, &params, &mut rng).unwrap();
    assert_eq!(moved, l);
    assert_eq!(out.dims(), img.dims());
}

#[test]
fn prn_crop_target_is_the_transported_pupil() {
    let scene = EyeScene::random(11);
    let (img, l) = scene.render().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let std = JitterStd { x: 3.0, y: 3.0, r: 2.0 };
    let (crop, target, roi) = prn_crop_sample(&img, &l, &std, &AugmentParams::none(), &mut rng).unwrap();
    assert_eq!(crop.dims(), (128, 128));
    let back = irisloc::codec::from_roi_coords(&target, &roi);
    assert!((back.x - l.pupil.x).abs() < 1e-6 && (back.r - l.pupil.r).abs() < 1e-6);
    // the crop pixel at the pupil center shows the dark pupil
    let c = roi.point_to_crop(l.pupil.center());
    assert!(crop.sample(c.x, c.y) < 80.0);
}

#[test]
fn rendered_regions_have_ordered_intensities() {
    for seed in 0..10 {
        let scene = EyeScene::random(seed).clean();
        let regions = scene.regions();
        let (img, _) = scene.render().unwrap();
        let mean = |m: &irisloc::raster::Mask| {
            let (s, n) = img
                .data()
                .iter()
                .zip(m.data())
                .filter(|(_, &b)| b)
                .fold((0.0, 0usize), |(s, n), (&v, _)| (s + f64::from(v), n + 1));
            s / n.max(1) as f64
        };
        let (p, i, s) = (mean(&regions.pupil), mean(&regions.iris), mean(&regions.sclera));
        assert!(p < i && i < s, "seed {seed}: pupil {p} iris {i} sclera {s}");
    }
}

#[test]
fn clean_scene_center_pixel_is_the_pupil_level() {
    let scene = EyeScene::random(21).clean();
    let (img, _) = scene.render().unwrap();
    let v = img.get(scene.pupil.x as usize, scene.pupil.y as usize);
    assert_eq!(f64::from(v), scene.pupil_level);
}

#[test]
fn corpus_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let m = CorpusManifest::synthetic(4, 3, 2, 1);
    let c = Corpus::synthesize(&m).unwrap();
    c.write(dir.path(), Some(&m)).unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    for split in [Split::Train, Split::Test, Split::Validation] {
        let (a, b) = (c.split(split), back.split(split));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.image.data(), y.image.data());
            assert!((x.labels.iris.x - y.labels.iris.x).abs() < 1e-12);
        }
    }
    // same seed, same pixels
    let again = Corpus::synthesize(&m).unwrap();
    assert_eq!(again.train[0].image.data(), c.train[0].image.data());
}

#[test]
fn loaded_labels_follow_the_aspect_correction() {
    let dir = tempfile::tempdir().unwrap();
    let m = CorpusManifest::synthetic(6, 1, 0, 0);
    let c = Corpus::synthesize(&m).unwrap();
    c.write(dir.path(), Some(&m)).unwrap();
    // replace the image by an 800x480 one; labels stay in its pixels
    let rec = c.train[0].annotation();
    let wide = GrayF::new(800, 480, vec![120.0; 800 * 480]).unwrap().to_u8();
    let mut buf = Vec::new();
    irisloc::raster::write_pgm(&mut buf, &wide).unwrap();
    std::fs::write(dir.path().join(&rec.image), buf).unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    let (orig, got) = (&c.train[0].labels, &back.train[0].labels);
    assert_eq!(back.train[0].image.dims(), (640, 480));
    assert!((got.iris.x - 0.8 * orig.iris.x).abs() < 1e-9);
    assert!((got.iris.r - 0.8 * orig.iris.r).abs() < 1e-9);
    assert!((got.eyelid[5].y - 0.8 * orig.eyelid[5].y).abs() < 1e-9);
}
