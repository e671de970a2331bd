use powerdensity::fem::DirichletBc;
use powerdensity::forward::{add_noise, forward_map, power_density_elements, solve_potential, Conductivity};
use powerdensity::mesh::{build_disk_mesh, Mesh};
use powerdensity::phantom::radial_two_layer_oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// L² error of a per-element field against `exact`, by the edge-midpoint rule,
/// over the triangles selected by `keep`.
fn element_l2_error(mesh: &Mesh, values: &[f64], exact: impl Fn(f64, f64) -> f64, keep: impl Fn(f64, f64) -> bool) -> f64 {
    let nodes = mesh.nodes();
    let mut sum = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let c = mesh.centroid(t);
        if !keep(c[0], c[1]) {
            continue;
        }
        let mut s = 0.0;
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let (p, q) = (nodes[tri[i]], nodes[tri[j]]);
            let e = values[t] - exact(0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]));
            s += e * e;
        }
        sum += mesh.area(t) / 3.0 * s;
    }
    sum.sqrt()
}

#[test]
fn random_linear_boundary_data_give_constant_power_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mesh = build_disk_mesh(12).unwrap();
    let sigma = Conductivity::constant(&mesh, 1.0).unwrap();
    for _ in 0..5 {
        let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let data = forward_map(&mesh, &sigma, &[DirichletBc::Linear { a, b }]).unwrap();
        let expected = a * a + b * b;
        for v in &data.data[0] {
            assert!((v - expected).abs() <= 1e-10 * expected.max(1.0), "{v} vs {expected}");
        }
    }
}

#[test]
fn two_layer_power_density_converges() {
    let oracle = radial_two_layer_oracle(2.0, 1.0, 0.5).unwrap();
    let away = |x: f64, y: f64| (x.hypot(y) - 0.5).abs() > 0.1;
    let mut far = Vec::new();
    let mut global = Vec::new();
    for rings in [12, 24, 48] {
        let mesh = build_disk_mesh(rings).unwrap();
        let sigma = oracle.conductivity(&mesh).unwrap();
        let u = solve_potential(&mesh, &sigma, &DirichletBc::Linear { a: 1.0, b: 0.0 }).unwrap();
        let h = power_density_elements(&mesh, &sigma, &u).unwrap();
        let exact = |x: f64, y: f64| oracle.power_density(x, y);
        far.push(element_l2_error(&mesh, &h, exact, away));
        global.push(element_l2_error(&mesh, &h, exact, |_, _| true));
    }
    for w in far.windows(2) {
        assert!(w[0] / w[1] >= 1.8, "away from the interface: {far:?}");
    }
    for w in global.windows(2) {
        assert!(w[0] / w[1] >= 1.3, "global: {global:?}");
    }
}

#[test]
fn noise_has_requested_statistics_and_is_reproducible() {
    let mesh = build_disk_mesh(16).unwrap();
    let sigma = Conductivity::constant(&mesh, 1.0).unwrap();
    let clean = forward_map(&mesh, &sigma, &[DirichletBc::Linear { a: 1.0, b: 0.0 }]).unwrap();
    let noisy = add_noise(&clean, 0.5, 3).unwrap();
    assert_eq!(noisy, add_noise(&clean, 0.5, 3).unwrap());
    assert_ne!(noisy, add_noise(&clean, 0.5, 4).unwrap());

    let e: Vec<f64> = noisy.data[0].iter().zip(&clean.data[0]).map(|(a, b)| a - b).collect();
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    let std = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // n ≈ 800, so the standard errors are about 0.018 (mean) and 0.013 (std).
    assert!(mean.abs() < 0.07, "mean {mean}");
    assert!((std - 0.5).abs() < 0.05, "std {std}");
    assert_eq!(add_noise(&clean, 0.0, 3).unwrap().data, clean.data);
}
