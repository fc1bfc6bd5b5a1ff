//! Bundled synthetic tracks: a stadium oval and a wavy-circle S-curve
//! course. Generation is deterministic so the shipped track files can be
//! regenerated and byte-compared.

use crate::track::TrackModel;
use crate::vec2::Vec2;

/// Track row: position plus left/right half-widths, m.
pub type TrackRow = (Vec2<f64>, f64, f64);

/// Stadium oval: two 12 m straights joined by half-circles of radius 4 m,
/// half-width 1 m, sampled at uniform arc length, counterclockwise.
pub fn stadium_oval_rows() -> Vec<TrackRow> {
    let straight = 12.0f64;
    let radius = 4.0f64;
    let hw = 1.0f64;
    let n = 240usize;
    let half = straight / 2.0;
    let perimeter = 2.0 * straight + std::f64::consts::TAU * radius;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let s = i as f64 / n as f64 * perimeter;
        let pos = if s < straight {
            // Bottom straight, heading +x.
            Vec2::new(-half + s, -radius)
        } else if s < straight + std::f64::consts::PI * radius {
            // Right cap.
            let a = (s - straight) / radius - std::f64::consts::FRAC_PI_2;
            Vec2::new(half + radius * a.cos(), radius * a.sin())
        } else if s < 2.0 * straight + std::f64::consts::PI * radius {
            // Top straight, heading -x.
            let d = s - straight - std::f64::consts::PI * radius;
            Vec2::new(half - d, radius)
        } else {
            // Left cap.
            let d = s - 2.0 * straight - std::f64::consts::PI * radius;
            let a = d / radius + std::f64::consts::FRAC_PI_2;
            Vec2::new(-half + radius * a.cos(), radius * a.sin())
        };
        rows.push((pos, hw, hw));
    }
    rows
}

pub fn stadium_oval() -> TrackModel<f64> {
    TrackModel::new(&stadium_oval_rows()).expect("bundled oval is valid")
}

/// Wavy circle: r(phi) = 8 + 3 sin(3 phi), half-width 1 m, 256 points
/// uniform in phi. Three alternating left/right sweeps give it S-curve
/// sections while keeping centerline curvature inside the default steering
/// envelope.
pub fn wavy_circle_rows() -> Vec<TrackRow> {
    let base = 8.0f64;
    let amplitude = 3.0f64;
    let lobes = 3.0f64;
    let hw = 1.0f64;
    let n = 256usize;
    (0..n)
        .map(|i| {
            let phi = i as f64 / n as f64 * std::f64::consts::TAU;
            let r = base + amplitude * (lobes * phi).sin();
            (Vec2::new(r * phi.cos(), r * phi.sin()), hw, hw)
        })
        .collect()
}

pub fn wavy_circle() -> TrackModel<f64> {
    TrackModel::new(&wavy_circle_rows()).expect("bundled wavy circle is valid")
}

/// Bundled track lookup by name (the names accepted in experiment configs).
pub fn by_name(name: &str) -> Option<TrackModel<f64>> {
    match name {
        "oval" => Some(stadium_oval()),
        "scurve" => Some(wavy_circle()),
        _ => None,
    }
}
