mod oracles;

use irisloc::geometry::{
    circle_under_affine, hausdorff_circles, rubber_sheet, rubber_sheet_location, wrap_half_turn,
    Affine2, Circle, LandmarkSet, Point,
};
use irisloc::raster::GrayF;
use proptest::prelude::*;

fn circle() -> impl Strategy<Value = Circle> {
    (-200.0..200.0f64, -200.0..200.0f64, 1.0..150.0f64).prop_map(|(x, y, r)| Circle::new(x, y, r))
}

fn affine() -> impl Strategy<Value = Affine2> {
    (
        -3.0..3.0f64,
        0.4..2.5f64,
        0.4..2.5f64,
        -3.0..3.0f64,
        -50.0..50.0f64,
        -50.0..50.0f64,
    )
        .prop_map(|(phi, sx, sy, psi, tx, ty)| {
            Affine2::translation(tx, ty)
                .then_after(&Affine2::rotation(phi))
                .then_after(&Affine2::scale(sx, sy))
                .then_after(&Affine2::rotation(psi))
        })
}

proptest! {
    #[test]
    fn closed_form_hausdorff_matches_sampling(g in circle(), c in circle()) {
        let n = 4096;
        let exact = hausdorff_circles(&g, &c);
        let sampled = oracles::sampled_circle_hausdorff(&g, &c, n);
        let tol = std::f64::consts::TAU * g.r.max(c.r) / n as f64;
        prop_assert!((exact - sampled).abs() <= tol, "{exact} vs {sampled}");
    }

    #[test]
    fn hausdorff_is_a_symmetric_metric(a in circle(), b in circle(), c in circle()) {
        let ab = hausdorff_circles(&a, &b);
        prop_assert!((ab - hausdorff_circles(&b, &a)).abs() < 1e-9);
        prop_assert!(hausdorff_circles(&a, &a) == 0.0);
        prop_assert!(ab <= hausdorff_circles(&a, &c) + hausdorff_circles(&c, &b) + 1e-9);
    }

    #[test]
    fn mapped_circle_matches_boundary_fit(c in circle(), m in affine()) {
        let e = circle_under_affine(&c, &m).unwrap();
        let fit = oracles::fit_mapped_circle(&c, &m, 64);
        let scale = e.a.max(1.0);
        prop_assert!((e.x - fit.x).abs() / scale < 1e-6);
        prop_assert!((e.y - fit.y).abs() / scale < 1e-6);
        prop_assert!((e.a - fit.a).abs() / scale < 1e-6);
        prop_assert!((e.b - fit.b).abs() / scale < 1e-6);
        // orientation is only defined for visibly anisotropic ellipses
        if e.a - e.b > 1e-3 * e.a {
            prop_assert!(oracles::axis_angle_diff(e.theta, fit.theta) < 1e-4,
                "{} vs {}", e.theta, fit.theta);
        }
    }

    #[test]
    fn mapped_boundary_points_lie_on_the_ellipse(c in circle(), m in affine(), t in 0.0..6.28f64) {
        let e = circle_under_affine(&c, &m).unwrap();
        let p = m.apply(c.boundary(t));
        // express in the ellipse's own frame: screen angle theta is CCW on
        // screen, i.e. axis direction (cos theta, -sin theta) in pixels
        let (dx, dy) = (p.x - e.x, p.y - e.y);
        let (ct, st) = (e.theta.cos(), e.theta.sin());
        let u = dx * ct - dy * st;
        let v = dx * st + dy * ct;
        let q = (u / e.a).powi(2) + (v / e.b).powi(2);
        prop_assert!((q - 1.0).abs() < 1e-6, "{q}");
    }

    #[test]
    fn affine_composition_and_inverse(a in affine(), b in affine(), x in -100.0..100.0f64, y in -100.0..100.0f64) {
        let p = Point::new(x, y);
        let ab = a.then_after(&b).apply(p);
        let seq = a.apply(b.apply(p));
        prop_assert!((ab.x - seq.x).abs() < 1e-9 && (ab.y - seq.y).abs() < 1e-9);
        let back = a.inverse().unwrap().apply(a.apply(p));
        prop_assert!((back.x - x).abs() < 1e-8 && (back.y - y).abs() < 1e-8);
    }

    #[test]
    fn wrap_half_turn_lands_in_range(t in -50.0..50.0f64) {
        let w = wrap_half_turn(t);
        prop_assert!((-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&w));
        let k = (t - w) / std::f64::consts::PI;
        prop_assert!((k - k.round()).abs() < 1e-9);
    }

    #[test]
    fn similarity_transport_matches_point_mapping(
        s in 0.3..2.0f64, phi in -0.5..0.5f64, tx in -40.0..40.0f64, ty in -40.0..40.0f64, t in 0.0..6.28f64,
    ) {
        let l = LandmarkSet {
            pupil: Circle::new(320.0, 240.0, 40.0),
            iris: Circle::new(322.0, 241.0, 110.0),
            eyelid: [Point::new(100.0, 250.0); 8],
        };
        let m = Affine2::translation(tx, ty)
            .then_after(&Affine2::rotation(phi))
            .then_after(&Affine2::scale(s, s));
        let moved = l.transformed(&m);
        // a boundary point maps onto the transported circle
        let p = m.apply(l.iris.boundary(t));
        prop_assert!((p.dist(moved.iris.center()) - moved.iris.r).abs() < 1e-8);
    }
}

#[test]
fn rubber_sheet_rows_follow_the_boundaries() {
    // image whose value encodes the distance from a center
    let (cx, cy) = (320.0, 240.0);
    let data: Vec<f32> = (0..480)
        .flat_map(|j| {
            (0..640).map(move |i| {
                let (x, y) = (i as f64 + 0.5 - cx, j as f64 + 0.5 - cy);
                (x.hypot(y) as f32).min(255.0)
            })
        })
        .collect();
    let img = GrayF::new(640, 480, data).unwrap();
    let pupil = Circle::new(cx, cy, 30.0);
    let iris = Circle::new(cx, cy, 100.0);
    let sheet = rubber_sheet(&img, &pupil, &iris, 64, 8).unwrap();
    assert_eq!(sheet.dims(), (64, 8));
    for j in 0..8 {
        let rho = j as f64 / 7.0;
        let want = 30.0 + 70.0 * rho;
        for i in 0..64 {
            let got = f64::from(sheet.get(i, j));
            assert!((got - want).abs() < 1.0, "row {j} col {i}: {got} vs {want}");
        }
    }
    let p = rubber_sheet_location(&pupil, &iris, 0.0, 1.0);
    assert!((p.x - (cx + 100.0)).abs() < 1e-9);
}
