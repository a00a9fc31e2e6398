use std::f64::consts::PI;

use ndarray::Array1;
use proptest::prelude::*;
use sclm_core::flux::{
    builtin_flux, check_geometry_compatibility, check_noise_assumptions, compatibility_tolerance,
    default_probes, Cutoff, FieldKind, FluxField, FluxParams, NoiseAmplitude, Profile,
    SeparableFlux, SeparableNoise,
};
use sclm_core::geometry::ChartedManifold;

fn catalog() -> Vec<(ChartedManifold, Profile, FieldKind)> {
    let mut out = Vec::new();
    for profile in [Profile::Transport, Profile::Burgers] {
        out.push((
            ChartedManifold::torus1d(64).unwrap(),
            profile,
            FieldKind::Constant,
        ));
        out.push((
            ChartedManifold::torus2d(32, 32).unwrap(),
            profile,
            FieldKind::Constant,
        ));
        out.push((
            ChartedManifold::torus2d(32, 32).unwrap(),
            profile,
            FieldKind::StreamFunction,
        ));
        out.push((
            ChartedManifold::sphere2(32, 64, 0.15).unwrap(),
            profile,
            FieldKind::Rotation,
        ));
    }
    out
}

#[test]
fn every_builtin_flux_is_geometry_compatible() {
    for (m, profile, field) in catalog() {
        let f = builtin_flux(&m, profile, field, FluxParams::default()).unwrap();
        let tol = compatibility_tolerance(&m);
        let r = check_geometry_compatibility(&m, &f, &default_probes(2.0), tol).unwrap();
        assert!(
            r.pass,
            "{profile:?} {field:?} on {}: {}",
            m.name(),
            r.max_residual
        );
        assert_eq!(r.probes, 33);
    }
}

#[test]
fn constant_transport_values() {
    let m = ChartedManifold::torus2d(16, 16).unwrap();
    let f = builtin_flux(
        &m,
        Profile::Transport,
        FieldKind::Constant,
        FluxParams::default(),
    )
    .unwrap();
    assert_eq!(f.flux(7, 0.3), [0.3, 0.0]);
    assert_eq!(f.speed(7, 0.3), [1.0, 0.0]);
    let r = check_geometry_compatibility(&m, &f, &default_probes(1.0), 0.0).unwrap();
    assert_eq!(r.max_residual, 0.0);
}

#[test]
fn stream_function_speed_is_rotated_gradient() {
    let m = ChartedManifold::torus2d(32, 32).unwrap();
    let f = builtin_flux(
        &m,
        Profile::Burgers,
        FieldKind::StreamFunction,
        FluxParams::default(),
    )
    .unwrap();
    for p in [3, 100, 517] {
        let [x1, x2] = m.coordinate(p);
        let xi = 0.7;
        let a = f.speed(p, xi);
        assert!((a[0] - x1.sin() * x2.cos() * xi).abs() < 1e-15);
        assert!((a[1] + x1.cos() * x2.sin() * xi).abs() < 1e-15);
    }
}

#[test]
fn rotation_flux_vanishes_at_band_edges() {
    let tm = 0.15;
    let s = ChartedManifold::sphere2(32, 32, tm).unwrap();
    let f = builtin_flux(
        &s,
        Profile::Transport,
        FieldKind::Rotation,
        FluxParams::default(),
    )
    .unwrap();
    let edge = f.flux(s.index([0, 3]), 1.0)[1];
    let h = s.axis(0).spacing;
    // w(θ) = sin²(π(θ − θ_min)/(π − 2θ_min)) at the first cell centre θ_min + h/2
    let expect = (PI * 0.5 * h / (PI - 2.0 * tm)).sin().powi(2);
    assert!((edge - expect).abs() < 1e-14);
    assert!(edge < 1e-2);
}

#[test]
fn compressible_flux_fails_the_check() {
    let m = ChartedManifold::torus2d(32, 32).unwrap();
    let field: Vec<[f64; 2]> = m.coordinates().iter().map(|x| [x[0].sin(), 0.0]).collect();
    let f = SeparableFlux::new(&m, field, Profile::Transport).unwrap();
    let r = check_geometry_compatibility(&m, &f, &default_probes(2.0), compatibility_tolerance(&m))
        .unwrap();
    assert!(!r.pass);
    // max |ξ cos x₁| at ξ = ±2, reduced by the centred-difference factor sin(h)/h
    let h = m.spacing();
    assert!((r.max_residual - 2.0 * h.sin() / h).abs() < 1e-12);
}

#[test]
fn zero_noise_report() {
    let m = ChartedManifold::torus1d(32).unwrap();
    let r = check_noise_assumptions(&m, &SeparableNoise::zero(&m), &SeparableFlux::zero(&m), 2.0)
        .unwrap();
    assert_eq!(r.envelope_integral, 0.0);
    assert_eq!(r.growth_constant, 0.0);
    assert!(r.support_ok && !r.growth_local_only);
}

#[test]
fn bump_envelope_matches_closed_form() {
    for m in [
        ChartedManifold::torus2d(16, 16).unwrap(),
        ChartedManifold::sphere2(24, 24, 0.15).unwrap(),
    ] {
        let (sigma, radius) = (0.3, 1.5);
        let spatial = m.sample(|x| 1.0 + 0.5 * x[0].cos());
        let noise = SeparableNoise::new(sigma, radius, spatial.clone(), Cutoff::Bump).unwrap();
        let r = check_noise_assumptions(&m, &noise, &SeparableFlux::zero(&m), 2.0).unwrap();
        // sup_r |r (1 − r²)²| = 16/(25√5) at r = 1/√5
        let peak = 16.0 / (25.0 * 5f64.sqrt());
        let exact = sigma * radius * peak * m.integrate(spatial.as_slice().unwrap());
        assert!(
            (r.envelope_integral - exact).abs() < 1e-6,
            "{} vs {exact}",
            r.envelope_integral
        );
        assert!(r.envelope_integral <= sigma * radius * 1.5 * m.volume());
        assert!(r.support_ok);
    }
}

#[test]
fn plateau_envelope_and_support() {
    let m = ChartedManifold::torus1d(16).unwrap();
    let noise =
        SeparableNoise::new(0.2, 1.0, Array1::ones(16), Cutoff::Plateau { inner: 0.5 }).unwrap();
    let r = check_noise_assumptions(&m, &noise, &SeparableFlux::zero(&m), 1.0).unwrap();
    assert!(r.support_ok);
    // the maximiser lies inside the smooth step, not at the plateau edge
    assert!(r.envelope_max > 0.2 * 0.5);
    assert!(r.envelope_max < 0.2);
    assert_eq!(noise.amplitude(0, 0.4), 0.2);
    assert_eq!(noise.amplitude(0, 1.0), 0.0);
}

#[test]
fn growth_flags() {
    let m = ChartedManifold::torus1d(32).unwrap();
    let zero = SeparableNoise::zero(&m);
    let burgers = builtin_flux(
        &m,
        Profile::Burgers,
        FieldKind::Constant,
        FluxParams::default(),
    )
    .unwrap();
    let transport = builtin_flux(
        &m,
        Profile::Transport,
        FieldKind::Constant,
        FluxParams::default(),
    )
    .unwrap();
    let mut constants = Vec::new();
    for radius in [2.0, 4.0, 8.0] {
        let r = check_noise_assumptions(&m, &zero, &burgers, radius).unwrap();
        assert!(r.growth_local_only);
        assert!(r.note.as_deref().unwrap().contains("only on"));
        assert!((r.growth_exponent - 2.0).abs() < 1e-9);
        // max ξ²/2/(1+ξ) over |ξ| ≤ R is attained at ξ = R
        assert!((r.growth_constant - radius * radius / (2.0 * (1.0 + radius))).abs() < 1e-9);
        constants.push(r.growth_constant);
    }
    assert!(constants.windows(2).all(|w| w[1] > 1.5 * w[0]));
    let r = check_noise_assumptions(&m, &zero, &transport, 4.0).unwrap();
    assert!(!r.growth_local_only);
    assert!(r.growth_constant <= 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn speed_matches_flux_differences(node in 0usize..1024, xi in -3.0f64..3.0, stream in any::<bool>()) {
        let m = ChartedManifold::torus2d(32, 32).unwrap();
        let field = if stream { FieldKind::StreamFunction } else { FieldKind::Constant };
        let params = FluxParams { direction: [0.6, -1.3], amplitude: 1.7 };
        let f = builtin_flux(&m, Profile::Burgers, field, params).unwrap();
        let d = 1e-4;
        let a = f.speed(node, xi);
        let hi = f.flux(node, xi + d);
        let lo = f.flux(node, xi - d);
        for k in 0..2 {
            let fd = (hi[k] - lo[k]) / (2.0 * d);
            prop_assert!((fd - a[k]).abs() <= 1e-6 * a[k].abs().max(1.0));
        }
    }

    #[test]
    fn noise_derivative_matches_differences(xi in -1.4f64..1.4, inner in 0.0f64..0.9) {
        for cutoff in [Cutoff::Bump, Cutoff::Plateau { inner }] {
            let n = SeparableNoise::new(0.4, 1.5, Array1::from_elem(8, 2.0), cutoff).unwrap();
            let d = 1e-5;
            let fd = (n.amplitude(1, xi + d) - n.amplitude(1, xi - d)) / (2.0 * d);
            prop_assert!((fd - n.derivative(1, xi)).abs() < 1e-4);
        }
    }
}
