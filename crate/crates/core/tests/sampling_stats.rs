//! Statistical checks of the domain samplers.

use std::f64::consts::PI;

use nslin::geometry::{BoundaryComponent, Domain};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn hole_annulus_fraction_matches_area_ratio() {
    let d = Domain::benchmark();
    let n = 100_000;
    let pts = d.sample_interior(n, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let hits = pts
        .iter()
        .filter(|p| (p[0] - 0.7).hypot(p[1] - 0.5) < 0.25)
        .count();
    let prob = (PI * 0.25 * 0.25 - PI * 0.2 * 0.2) / (2.0 - PI * 0.2 * 0.2);
    let mean = n as f64 * prob;
    let sd = (n as f64 * prob * (1.0 - prob)).sqrt();
    assert!((hits as f64 - mean).abs() < 3.0 * sd, "{hits} vs {mean} ± {sd}");
}

#[test]
fn boundary_hole_fraction_matches_perimeter_ratio() {
    let d = Domain::benchmark();
    let n = 100_000;
    let samples = d.sample_boundary(n, &mut ChaCha8Rng::seed_from_u64(11));
    let hole = samples
        .iter()
        .filter(|s| s.component == BoundaryComponent::Hole(0))
        .count();
    let prob = 0.4 * PI / (6.0 + 0.4 * PI);
    assert!((prob - 0.1732).abs() < 1e-4);
    let sd = (n as f64 * prob * (1.0 - prob)).sqrt();
    assert!((hole as f64 - n as f64 * prob).abs() < 3.0 * sd);
}

#[test]
fn interior_chi_squared_uniformity() {
    let d = Domain::benchmark();
    let (nx, ny) = (10, 5);
    let (cw, ch) = (0.2, 0.2);
    // A cell is usable when it does not meet the closed hole disk.
    let usable = |i: usize, j: usize| {
        let (x0, y0) = (i as f64 * cw, j as f64 * ch);
        let cx = 0.7f64.clamp(x0, x0 + cw);
        let cy = 0.5f64.clamp(y0, y0 + ch);
        (cx - 0.7).hypot(cy - 0.5) > 0.2
    };
    let pts = d.sample_interior(100_000, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    let mut counts = vec![0usize; nx * ny];
    for p in &pts {
        let i = ((p[0] / cw) as usize).min(nx - 1);
        let j = ((p[1] / ch) as usize).min(ny - 1);
        counts[j * nx + i] += 1;
    }
    let cells: Vec<usize> = (0..nx * ny).filter(|&k| usable(k % nx, k / nx)).collect();
    assert!(cells.len() >= 40);
    let total: usize = cells.iter().map(|&k| counts[k]).sum();
    let expected = total as f64 / cells.len() as f64;
    let chi2: f64 = cells
        .iter()
        .map(|&k| (counts[k] as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new((cells.len() - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}

#[test]
fn boundary_components_are_uniform_along_edges() {
    let d = Domain::benchmark();
    let samples = d.sample_boundary(60_000, &mut ChaCha8Rng::seed_from_u64(13));
    let bottom: Vec<f64> = samples
        .iter()
        .filter(|s| s.component == BoundaryComponent::Bottom)
        .map(|s| s.point[0])
        .collect();
    let mean = bottom.iter().sum::<f64>() / bottom.len() as f64;
    let sd = (4.0f64 / 12.0 / bottom.len() as f64).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * sd);
}
