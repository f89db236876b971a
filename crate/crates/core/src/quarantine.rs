//! Quarantine geofences: each patient is tagged with a center and radius,
//! and location pings outside the fence raise alerts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::cdr::{CdrError, Subscriber, TimeWindow};
use crate::geo::haversine_m;

/// Tower-resolution pings make tighter fences meaningless.
pub const DEFAULT_RADIUS_M: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuarantineError {
    #[error("radius must be positive, got {0} m")]
    BadRadius(f64),
    #[error(transparent)]
    Coordinates(#[from] CdrError),
    #[error("ping from {ping} checked against the tag of {tag}")]
    SubscriberMismatch { tag: Subscriber, ping: Subscriber },
    #[error("{0} has no quarantine tag")]
    NotTagged(Subscriber),
}

fn check_coordinates(latitude: f64, longitude: f64) -> Result<(), CdrError> {
    if !(-90.0..=90.0).contains(&latitude) {
        return Err(CdrError::CoordinateOutOfRange("latitude"));
    }
    if !(-180.0..=180.0).contains(&longitude) {
        return Err(CdrError::CoordinateOutOfRange("longitude"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineTag {
    pub tag_id: u64,
    pub subscriber: Subscriber,
    pub center_lat: f64,
    pub center_lon: f64,
    pub radius_m: f64,
    pub active_from: NaiveDateTime,
    pub active_to: NaiveDateTime,
}

impl QuarantineTag {
    pub fn new(
        tag_id: u64,
        subscriber: Subscriber,
        center_lat: f64,
        center_lon: f64,
        radius_m: f64,
        window: TimeWindow,
    ) -> Result<Self, QuarantineError> {
        if !(radius_m > 0.0 && radius_m.is_finite()) {
            return Err(QuarantineError::BadRadius(radius_m));
        }
        check_coordinates(center_lat, center_lon)?;
        Ok(QuarantineTag {
            tag_id,
            subscriber,
            center_lat,
            center_lon,
            radius_m,
            active_from: window.start(),
            active_to: window.end(),
        })
    }

    pub fn is_active(&self, at: NaiveDateTime) -> bool {
        self.active_from <= at && at <= self.active_to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPing {
    pub subscriber: Subscriber,
    pub latitude: f64,
    pub longitude: f64,
    pub at: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationAlert {
    pub subscriber: Subscriber,
    pub at: NaiveDateTime,
    pub distance_m: f64,
    pub tag_id: u64,
}

/// Checks one ping against a tag. Pings outside the tag's active window are
/// ignored. Standing exactly on the fence is not a violation.
pub fn evaluate_ping(tag: &QuarantineTag, ping: &LocationPing) -> Result<Option<ViolationAlert>, QuarantineError> {
    if tag.subscriber != ping.subscriber {
        return Err(QuarantineError::SubscriberMismatch {
            tag: tag.subscriber.clone(),
            ping: ping.subscriber.clone(),
        });
    }
    check_coordinates(ping.latitude, ping.longitude)?;
    if !tag.is_active(ping.at) {
        return Ok(None);
    }
    let distance_m = haversine_m(tag.center_lat, tag.center_lon, ping.latitude, ping.longitude);
    Ok((distance_m > tag.radius_m).then(|| ViolationAlert {
        subscriber: ping.subscriber.clone(),
        at: ping.at,
        distance_m,
        tag_id: tag.tag_id,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TagEvent {
    Tagged { tag: QuarantineTag },
    Superseded { previous: QuarantineTag, by: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PingOutcome {
    /// Outside the tag's active window.
    Ignored,
    Inside { distance_m: f64 },
    /// First ping of a new violation episode.
    Alert(ViolationAlert),
    /// Still outside; the episode already raised its alert.
    Continuing { distance_m: f64 },
}

/// Tag store with one active tag per subscriber and episode tracking, so a
/// continuous excursion raises one alert.
#[derive(Debug, Clone, Default)]
pub struct QuarantineMonitor {
    tags: BTreeMap<Subscriber, QuarantineTag>,
    next_tag: u64,
    violating: BTreeSet<Subscriber>,
    history: Vec<TagEvent>,
    alerts: Vec<ViolationAlert>,
}

impl QuarantineMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tags a subscriber, replacing any earlier tag.
    pub fn geo_tag(
        &mut self,
        subscriber: &Subscriber,
        center_lat: f64,
        center_lon: f64,
        radius_m: f64,
        window: TimeWindow,
    ) -> Result<&QuarantineTag, QuarantineError> {
        let tag = QuarantineTag::new(
            self.next_tag + 1,
            subscriber.clone(),
            center_lat,
            center_lon,
            radius_m,
            window,
        )?;
        self.next_tag += 1;
        if let Some(previous) = self.tags.remove(subscriber) {
            self.history.push(TagEvent::Superseded {
                previous,
                by: tag.tag_id,
            });
        }
        self.violating.remove(subscriber);
        self.history.push(TagEvent::Tagged { tag: tag.clone() });
        Ok(self.tags.entry(subscriber.clone()).or_insert(tag))
    }

    pub fn tag(&self, subscriber: &Subscriber) -> Option<&QuarantineTag> {
        self.tags.get(subscriber)
    }

    pub fn tags(&self) -> impl Iterator<Item = &QuarantineTag> {
        self.tags.values()
    }

    pub fn history(&self) -> &[TagEvent] {
        &self.history
    }

    pub fn alerts(&self) -> &[ViolationAlert] {
        &self.alerts
    }

    pub fn observe(&mut self, ping: &LocationPing) -> Result<PingOutcome, QuarantineError> {
        let tag = self
            .tags
            .get(&ping.subscriber)
            .ok_or_else(|| QuarantineError::NotTagged(ping.subscriber.clone()))?;
        if !tag.is_active(ping.at) {
            check_coordinates(ping.latitude, ping.longitude)?;
            return Ok(PingOutcome::Ignored);
        }
        match evaluate_ping(tag, ping)? {
            Some(alert) if self.violating.contains(&ping.subscriber) => Ok(PingOutcome::Continuing {
                distance_m: alert.distance_m,
            }),
            Some(alert) => {
                self.violating.insert(ping.subscriber.clone());
                self.alerts.push(alert.clone());
                Ok(PingOutcome::Alert(alert))
            }
            None => {
                self.violating.remove(&ping.subscriber);
                let distance_m = haversine_m(tag.center_lat, tag.center_lon, ping.latitude, ping.longitude);
                Ok(PingOutcome::Inside { distance_m })
            }
        }
    }
}

impl core::fmt::Display for PingOutcome {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PingOutcome::Ignored => f.write_str("ignored"),
            PingOutcome::Inside { distance_m } => write!(f, "inside ({distance_m:.1} m)"),
            PingOutcome::Alert(a) => write!(f, "ALERT ({:.1} m)", a.distance_m),
            PingOutcome::Continuing { distance_m } => write!(f, "still outside ({distance_m:.1} m)"),
        }
    }
}

impl PingOutcome {
    pub fn alert(&self) -> Option<&ViolationAlert> {
        match self {
            PingOutcome::Alert(a) => Some(a),
            _ => None,
        }
    }
}
