//! Movement paths from cell-site coordinates, their GeoJSON form, and
//! public path advisories.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::cdr::{CdrRecord, Subscriber};

/// Mean Earth radius used for great-circle distances, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Default lifetime of a published path advisory.
pub const DEFAULT_ADVISORY_TTL_DAYS: u32 = 14;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("cannot publish an empty path")]
    EmptyPath,
    #[error("advisory lifetime must be at least one day")]
    ZeroTtl,
    #[error("GeoJSON: {0}")]
    GeoJson(String),
}

/// Great-circle distance in meters between two (latitude, longitude)
/// points given in degrees, on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let d_phi = (lat2 - lat1).to_radians();
    let d_lambda = (lon2 - lon1).to_radians();
    let s_phi = libm::sin(d_phi / 2.0);
    let s_lambda = libm::sin(d_lambda / 2.0);
    let h = s_phi * s_phi + libm::cos(phi1) * libm::cos(phi2) * s_lambda * s_lambda;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.clamp(0.0, 1.0)))
}

/// A stay at one cell site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub cell_site: String,
    pub latitude: f64,
    pub longitude: f64,
    pub arrived: NaiveDateTime,
    pub departed: NaiveDateTime,
    /// CDR rows folded into this stay.
    pub records: usize,
}

impl Waypoint {
    fn same_site(&self, latitude: f64, longitude: f64) -> bool {
        self.latitude == latitude && self.longitude == longitude
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    pub subscriber: Option<Subscriber>,
    pub waypoints: Vec<Waypoint>,
}

impl PathTrace {
    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }
}

/// Collapses normalized records into stays.
///
/// Each maximal run of consecutive records at the same coordinates becomes
/// one waypoint spanning the first to the last record of the run. Sites are
/// compared by exact coordinates, never by address text.
pub fn reconstruct_path(records: &[CdrRecord]) -> PathTrace {
    let mut waypoints: Vec<Waypoint> = Vec::new();
    for record in records {
        match waypoints.last_mut() {
            Some(last) if last.same_site(record.latitude, record.longitude) => {
                last.departed = last.departed.max(record.timestamp);
                last.records += 1;
            }
            _ => waypoints.push(Waypoint {
                cell_site: record.cell_site.clone(),
                latitude: record.latitude,
                longitude: record.longitude,
                arrived: record.timestamp,
                departed: record.timestamp,
                records: 1,
            }),
        }
    }
    PathTrace {
        subscriber: records.first().map(|r| r.a_party.clone()),
        waypoints,
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureCollection {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<Feature>,
}

#[derive(Serialize, Deserialize)]
struct Feature {
    #[serde(rename = "type")]
    kind: String,
    geometry: Geometry,
    properties: Properties,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
enum Geometry {
    LineString { coordinates: Vec<[f64; 2]> },
    Point { coordinates: [f64; 2] },
}

#[derive(Serialize, Deserialize, Default)]
struct Properties {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seq: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cell_site: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arrived: Option<NaiveDateTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    departed: Option<NaiveDateTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    records: Option<usize>,
}

/// Renders waypoints as a GeoJSON FeatureCollection (longitude first).
///
/// A path of two or more stays gets a LineString feature ahead of one Point
/// feature per stay. The subscriber is never written.
pub fn export_geojson(waypoints: &[Waypoint]) -> String {
    let mut features = Vec::with_capacity(waypoints.len() + 1);
    if waypoints.len() >= 2 {
        features.push(Feature {
            kind: "Feature".into(),
            geometry: Geometry::LineString {
                coordinates: waypoints.iter().map(|w| [w.longitude, w.latitude]).collect(),
            },
            properties: Properties {
                role: Some("path".into()),
                ..Properties::default()
            },
        });
    }
    for (i, w) in waypoints.iter().enumerate() {
        features.push(Feature {
            kind: "Feature".into(),
            geometry: Geometry::Point {
                coordinates: [w.longitude, w.latitude],
            },
            properties: Properties {
                role: Some("waypoint".into()),
                seq: Some(i + 1),
                cell_site: Some(w.cell_site.clone()),
                arrived: Some(w.arrived),
                departed: Some(w.departed),
                records: Some(w.records),
            },
        });
    }
    let doc = FeatureCollection {
        kind: "FeatureCollection".into(),
        features,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("geojson");
    text.push('\n');
    text
}

/// Reads waypoints back from a document written by [`export_geojson`].
pub fn parse_geojson(text: &str) -> Result<Vec<Waypoint>, PathError> {
    let doc: FeatureCollection =
        serde_json::from_str(text).map_err(|e| PathError::GeoJson(e.to_string()))?;
    if doc.kind != "FeatureCollection" {
        return Err(PathError::GeoJson(format!("unexpected type {}", doc.kind)));
    }
    let mut out = Vec::new();
    for feature in doc.features {
        let Geometry::Point { coordinates } = feature.geometry else {
            continue;
        };
        let p = feature.properties;
        let (Some(arrived), Some(departed)) = (p.arrived, p.departed) else {
            return Err(PathError::GeoJson("waypoint without arrival/departure".into()));
        };
        out.push(Waypoint {
            cell_site: p.cell_site.unwrap_or_default(),
            latitude: coordinates[1],
            longitude: coordinates[0],
            arrived,
            departed,
            records: p.records.unwrap_or(1),
        });
    }
    Ok(out)
}

/// A public warning to avoid a patient's route. Carries no subscriber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAdvisory {
    pub advisory_id: String,
    pub waypoints: Vec<Waypoint>,
    pub published_at: NaiveDateTime,
    pub valid_until: NaiveDateTime,
    pub message: String,
}

impl PathAdvisory {
    pub fn is_active(&self, now: NaiveDateTime) -> bool {
        now <= self.valid_until
    }

    pub fn geojson(&self) -> String {
        export_geojson(&self.waypoints)
    }
}

pub fn publish_advisory(
    advisory_id: &str,
    path: &PathTrace,
    ttl_days: u32,
    now: NaiveDateTime,
) -> Result<PathAdvisory, PathError> {
    if path.is_empty() {
        return Err(PathError::EmptyPath);
    }
    if ttl_days == 0 {
        return Err(PathError::ZeroTtl);
    }
    let valid_until = now + Duration::days(i64::from(ttl_days));
    let message = format!(
        "A confirmed patient passed through {} location(s) on this route. Avoid it until {}. \
         Locations are cell-tower positions and may be off by several hundred meters.",
        path.len(),
        valid_until.format("%Y-%m-%d %H:%M")
    );
    Ok(PathAdvisory {
        advisory_id: advisory_id.to_string(),
        waypoints: path.waypoints.clone(),
        published_at: now,
        valid_until,
        message,
    })
}
