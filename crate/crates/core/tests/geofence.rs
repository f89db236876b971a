//! Great-circle distance against an independent formula, and quarantine
//! fence behavior.

mod common;

use cdra_core::geo::{haversine_m, EARTH_RADIUS_M};
use cdra_core::quarantine::{evaluate_ping, LocationPing, PingOutcome, QuarantineMonitor, QuarantineTag};
use cdra_core::TimeWindow;
use chrono::NaiveDate;
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Distance via the chord between the two points as unit vectors, using
/// std trig rather than the crate's libm path.
fn chord_oracle(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let v = |lat: f64, lon: f64| {
        let (la, lo) = (lat.to_radians(), lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (a, b) = (v(lat1, lon1), v(lat2, lon2));
    let chord = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    // atan2 form stays accurate for both tiny and near-antipodal chords.
    let half = chord / 2.0;
    2.0 * EARTH_RADIUS_M * half.atan2((1.0 - half * half).max(0.0).sqrt())
}

#[test]
fn haversine_agrees_with_chord_oracle() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x6e0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p: [f64; 4] = [
            rng.gen_range(-90.0..=90.0),
            rng.gen_range(-180.0..=180.0),
            rng.gen_range(-90.0..=90.0),
            rng.gen_range(-180.0..=180.0),
        ];
        let err = (haversine_m(p[0], p[1], p[2], p[3]) - chord_oracle(p[0], p[1], p[2], p[3])).abs();
        worst = worst.max(err);
    }
    assert!(worst < 0.5, "worst disagreement {worst} m");
}

fn window() -> TimeWindow {
    TimeWindow::whole_days(
        NaiveDate::from_ymd_opt(2020, 5, 17).unwrap(),
        NaiveDate::from_ymd_opt(2020, 5, 31).unwrap(),
    )
    .unwrap()
}

fn ping(lat: f64, lon: f64, at: &str) -> LocationPing {
    LocationPing {
        subscriber: sub(FOCAL3),
        latitude: lat,
        longitude: lon,
        at: ts(at),
    }
}

const HOME: (f64, f64) = (33.6844, 72.98836);

#[test]
fn center_boundary_and_beyond() {
    let edge_point = (33.6855, 72.97736);
    let radius = haversine_m(HOME.0, HOME.1, edge_point.0, edge_point.1);
    let mut m = QuarantineMonitor::new();
    m.geo_tag(&sub(FOCAL3), HOME.0, HOME.1, radius, window()).unwrap();

    assert!(matches!(
        m.observe(&ping(HOME.0, HOME.1, "05/18/2020 08:00:00")).unwrap(),
        PingOutcome::Inside { .. }
    ));
    assert!(matches!(
        m.observe(&ping(edge_point.0, edge_point.1, "05/18/2020 09:00:00")).unwrap(),
        PingOutcome::Inside { .. }
    ));
    assert!(m.alerts().is_empty());

    // An excursion of three pings raises one alert.
    for hour in 10..13 {
        m.observe(&ping(33.5026, 73.1965, &format!("05/18/2020 {hour}:00:00"))).unwrap();
    }
    assert_eq!(m.alerts().len(), 1);
    m.observe(&ping(HOME.0, HOME.1, "05/18/2020 14:00:00")).unwrap();
    m.observe(&ping(33.5026, 73.1965, "05/18/2020 15:00:00")).unwrap();
    assert_eq!(m.alerts().len(), 2);
    assert_eq!(m.alerts()[1].at, ts("05/18/2020 15:00:00"));
}

proptest! {
    #[test]
    fn distance_is_symmetric(a in -90.0f64..=90.0, b in -180.0f64..=180.0,
                             c in -90.0f64..=90.0, d in -180.0f64..=180.0) {
        let (x, y) = (haversine_m(a, b, c, d), haversine_m(c, d, a, b));
        prop_assert!((x - y).abs() < 1e-6);
        prop_assert!((0.0..=std::f64::consts::PI * EARTH_RADIUS_M + 1e-6).contains(&x));
    }

    /// Shrinking the fence never turns a violation into compliance.
    #[test]
    fn alerts_monotone_in_radius(dlat in -0.05f64..0.05, dlon in -0.05f64..0.05,
                                 r1 in 1.0f64..8000.0, r2 in 1.0f64..8000.0) {
        let (small, large) = (r1.min(r2), r1.max(r2));
        let p = ping(HOME.0 + dlat, HOME.1 + dlon, "05/20/2020 12:00:00");
        let tag = |r| QuarantineTag::new(1, sub(FOCAL3), HOME.0, HOME.1, r, window()).unwrap();
        let big_alert = evaluate_ping(&tag(large), &p).unwrap().is_some();
        let small_alert = evaluate_ping(&tag(small), &p).unwrap().is_some();
        prop_assert!(!big_alert || small_alert);
    }
}
