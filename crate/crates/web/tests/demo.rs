use policy_continuation_web::{landscapes, mirror_variance, optimization_trace};

#[test]
fn landscape_curves_have_one_point_per_theta() {
    let l = landscapes(-4.0, 1.0, 0.5, &[0.0, 2.0], 20, 1).unwrap();
    assert_eq!(l.curves.len(), 2);
    for c in &l.curves {
        assert_eq!(c.thetas.len(), 11);
        assert_eq!(c.means.len(), 11);
        assert!(c.maxima.iter().all(|m| c.thetas.contains(m)));
    }
}

#[test]
fn sampled_mirror_variance_tracks_closed_form() {
    let v = mirror_variance(-1.0, 1.0, -4.0, 1.5, 6, 4000, 3).unwrap();
    for ((x, a), b) in v.xs.iter().zip(&v.closed_form).zip(&v.sampled) {
        // Sample variance of Gaussian draws: relative sd is sqrt(2 / m).
        assert!((a - b).abs() <= 5.0 * (2.0f64 / 4000.0).sqrt() * a + 1e-12, "x {x}: {a} vs {b}");
    }
}

#[test]
fn trace_has_one_point_per_stage() {
    let t = optimization_trace("continuation", 1.0, 4, 30, 0).unwrap();
    assert_eq!(t.points.len(), 4);
    assert_eq!(t.points[0].theta, 1.0);
    assert_eq!(t.points[0].scale, 64.0);
    assert!(optimization_trace("newton", 1.0, 4, 30, 0).is_err());
}

#[test]
fn bad_arguments_are_errors() {
    assert!(mirror_variance(0.0, 1.0, 1.0, 0.0, 5, 10, 0).is_err());
    assert!(landscapes(1.0, 0.0, 0.5, &[0.0], 10, 0).is_err());
}
