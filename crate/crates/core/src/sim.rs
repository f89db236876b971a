//! Deterministic discrete-time simulator: devices move on a plane, swap
//! their current keys when within radio range, and later match their logs
//! against published diagnosis keys.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ens::{
    active_key, generate_key_schedule, match_exposures, AnyToken, DiagnosisRegistry,
    DiagnosisUpload, EncounterLog, EnsError, EphemeralKey, KeyValue, RotationRange, ScheduleConfig,
    DEFAULT_KEY_DIGITS, DEFAULT_MIN_EXPOSURE_MINUTES,
};

pub const DEFAULT_PROXIMITY_RADIUS_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario {path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Ens(#[from] EnsError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// Position of a device at a given tick; the device moves in a straight
/// line between consecutive points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptPoint {
    pub tick: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceScript {
    pub id: String,
    pub waypoints: Vec<ScriptPoint>,
    #[serde(default)]
    pub infected_at: Option<u64>,
    #[serde(default)]
    pub consent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDiagnosis {
    pub device: String,
    pub tick: u64,
}

fn default_tick_minutes() -> u32 {
    1
}

fn default_radius() -> f64 {
    DEFAULT_PROXIMITY_RADIUS_M
}

fn default_min_minutes() -> u32 {
    DEFAULT_MIN_EXPOSURE_MINUTES
}

fn default_digits() -> u8 {
    DEFAULT_KEY_DIGITS
}

fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 5, 1)
        .and_then(|d| d.and_hms_opt(9, 0, 0))
        .expect("valid epoch")
}

/// A scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    #[serde(default)]
    pub name: Option<String>,
    pub devices: Vec<DeviceScript>,
    #[serde(default)]
    pub diagnose: Vec<ScriptedDiagnosis>,
    pub check_every: u64,
    pub ticks: u64,
    pub seed: u64,
    #[serde(default = "default_tick_minutes")]
    pub tick_minutes: u32,
    #[serde(default = "default_radius")]
    pub proximity_radius_m: f64,
    #[serde(default = "default_min_minutes")]
    pub min_minutes: u32,
    #[serde(default = "default_digits")]
    pub key_digits: u8,
    #[serde(default)]
    pub rotation: RotationRange,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
}

impl ScenarioScript {
    /// Parses and validates a scenario document.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let script: ScenarioScript = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.tick_minutes == 0 {
            return Err(invalid("tick_minutes", "must be at least 1"));
        }
        if self.check_every == 0 {
            return Err(invalid("check_every", "must be at least 1"));
        }
        if !(self.proximity_radius_m >= 0.0 && self.proximity_radius_m.is_finite()) {
            return Err(invalid("proximity_radius_m", "must be a non-negative distance"));
        }
        RotationRange::new(self.rotation.min_minutes, self.rotation.max_minutes)?;
        let mut seen = BTreeMap::new();
        for (i, device) in self.devices.iter().enumerate() {
            if seen.insert(device.id.as_str(), i).is_some() {
                return Err(invalid(format!("devices[{i}].id"), format!("duplicate id {:?}", device.id)));
            }
            if device.waypoints.is_empty() {
                return Err(invalid(format!("devices[{i}].waypoints"), "needs at least one point"));
            }
            if device.waypoints.windows(2).any(|w| w[0].tick >= w[1].tick) {
                return Err(invalid(format!("devices[{i}].waypoints"), "ticks must strictly increase"));
            }
            if device.waypoints.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
                return Err(invalid(format!("devices[{i}].waypoints"), "coordinates must be finite"));
            }
        }
        for (i, d) in self.diagnose.iter().enumerate() {
            let Some(&idx) = seen.get(d.device.as_str()) else {
                return Err(invalid(format!("diagnose[{i}].device"), format!("unknown device {:?}", d.device)));
            };
            match self.devices[idx].infected_at {
                Some(t) if t <= d.tick => {}
                _ => {
                    return Err(invalid(
                        format!("diagnose[{i}]"),
                        format!("device {:?} is not infected by tick {}", d.device, d.tick),
                    ))
                }
            }
            if d.tick >= self.ticks {
                return Err(invalid(format!("diagnose[{i}].tick"), "beyond the last tick"));
            }
        }
        Ok(())
    }
}

/// One simulated phone.
#[derive(Debug, Clone)]
pub struct SimDevice {
    pub id: String,
    pub position: (f64, f64),
    pub script: Vec<ScriptPoint>,
    pub schedule: Vec<EphemeralKey>,
    pub log: EncounterLog,
    pub infected_at: Option<u64>,
    pub infected: bool,
    pub consent: bool,
    rng: ChaCha8Rng,
}

impl SimDevice {
    fn position_at(&self, tick: u64) -> (f64, f64) {
        let pts = &self.script;
        let idx = pts.partition_point(|p| p.tick <= tick);
        match (idx.checked_sub(1).map(|i| pts[i]), pts.get(idx)) {
            (None, Some(first)) => (first.x, first.y),
            (Some(last), None) => (last.x, last.y),
            (Some(a), Some(b)) => {
                let f = (tick - a.tick) as f64 / (b.tick - a.tick) as f64;
                (a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
            }
            (None, None) => self.position,
        }
    }

    fn extend_schedule(&mut self, until: NaiveDateTime, config: &ScheduleConfig, from: NaiveDateTime) {
        let tail = self.schedule.last().map_or(from, |k| k.valid_to);
        if tail > until {
            return;
        }
        let horizon = until - tail + Duration::minutes(1);
        let more = generate_key_schedule(&mut self.rng, tail, horizon, config)
            .expect("schedule config validated at world construction");
        self.schedule.extend(more);
    }

    /// Key broadcast at `at`, or `None` before the schedule starts.
    pub fn key_at(&self, at: NaiveDateTime) -> Option<&KeyValue> {
        active_key(&self.schedule, at).map(|k| &k.value)
    }

    /// Keys in use up to `until`, as a diagnosed user would upload them.
    pub fn keys_until(&self, until: NaiveDateTime) -> Vec<EphemeralKey> {
        self.schedule
            .iter()
            .filter(|k| k.valid_from < until)
            .cloned()
            .collect()
    }
}

/// The simulated world.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub devices: Vec<SimDevice>,
    pub tick_minutes: u32,
    pub proximity_radius_m: f64,
    pub rng_seed: u64,
    pub tick: u64,
    pub start: NaiveDateTime,
    pub schedule: ScheduleConfig,
}

impl SimWorld {
    pub fn new(
        devices: &[DeviceScript],
        tick_minutes: u32,
        proximity_radius_m: f64,
        rng_seed: u64,
        start: NaiveDateTime,
        schedule: ScheduleConfig,
    ) -> Result<Self, ScenarioError> {
        if tick_minutes == 0 {
            return Err(invalid("tick_minutes", "must be at least 1"));
        }
        // Validate key settings once so schedule extension cannot fail later.
        generate_key_schedule(&mut ChaCha8Rng::seed_from_u64(0), start, Duration::zero(), &schedule)?;
        let devices = devices
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                rng.set_stream(i as u64);
                let first = d.waypoints.first().map_or((0.0, 0.0), |p| (p.x, p.y));
                SimDevice {
                    id: d.id.clone(),
                    position: first,
                    script: d.waypoints.clone(),
                    schedule: Vec::new(),
                    log: EncounterLog::new(),
                    infected_at: d.infected_at,
                    infected: false,
                    consent: d.consent,
                    rng,
                }
            })
            .collect();
        Ok(SimWorld {
            devices,
            tick_minutes,
            proximity_radius_m,
            rng_seed,
            tick: 0,
            start,
            schedule,
        })
    }

    pub fn from_script(script: &ScenarioScript) -> Result<Self, ScenarioError> {
        SimWorld::new(
            &script.devices,
            script.tick_minutes,
            script.proximity_radius_m,
            script.seed,
            script.start,
            ScheduleConfig {
                digits: script.key_digits,
                rotation: script.rotation,
            },
        )
    }

    fn tick_length(&self) -> Duration {
        Duration::minutes(i64::from(self.tick_minutes))
    }

    /// Clock time at the start of the current tick.
    pub fn now(&self) -> NaiveDateTime {
        self.start + self.tick_length() * (self.tick as i32)
    }

    pub fn device(&self, id: &str) -> Option<&SimDevice> {
        self.devices.iter().find(|d| d.id == id)
    }

    /// Index pairs currently within radio range.
    pub fn pairs_in_range(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.devices.len() {
            for j in i + 1..self.devices.len() {
                let (ax, ay) = self.devices[i].position;
                let (bx, by) = self.devices[j].position;
                let d = libm::hypot(ax - bx, ay - by);
                if d <= self.proximity_radius_m {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    /// Advances one tick in place: move, exchange keys with everyone in
    /// range, then move the clock forward.
    pub fn advance(&mut self) {
        let now = self.now();
        let dwell = self.tick_length();
        let until = now + dwell;
        let tick = self.tick;
        let config = self.schedule;
        let start = self.start;
        for device in &mut self.devices {
            device.position = device.position_at(tick);
            device.infected = device.infected_at.is_some_and(|t| t <= tick);
            device.extend_schedule(until, &config, start);
        }
        for (i, j) in self.pairs_in_range() {
            let key_i = self.devices[i].key_at(now).cloned();
            let key_j = self.devices[j].key_at(now).cloned();
            if let (Some(key_i), Some(key_j)) = (key_i, key_j) {
                self.devices[i].log.record_sighting(&key_j, now, dwell);
                self.devices[j].log.record_sighting(&key_i, now, dwell);
            }
        }
        self.tick += 1;
    }

    /// Pure form of [`SimWorld::advance`].
    pub fn step(&self) -> SimWorld {
        let mut next = self.clone();
        next.advance();
        next
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationReport {
    /// Tick of the check that first raised it.
    pub tick: u64,
    pub upload: u64,
    pub matched_keys: Vec<KeyValue>,
    pub exposure_start: NaiveDateTime,
    pub exposure_end: NaiveDateTime,
    pub cumulative_minutes: u32,
    /// The health department hears about it only with consent.
    pub department_notified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub device: String,
    pub tick: u64,
    pub upload: u64,
    pub keys_published: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub id: String,
    pub encounter_records: usize,
    pub contact_minutes: i64,
    pub notifications: Vec<NotificationReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: Option<String>,
    pub seed: u64,
    pub ticks: u64,
    pub registry_size: usize,
    pub diagnoses: Vec<DiagnosisReport>,
    pub devices: Vec<DeviceReport>,
}

impl ScenarioReport {
    pub fn notified(&self) -> Vec<&str> {
        self.devices
            .iter()
            .filter(|d| !d.notifications.is_empty())
            .map(|d| d.id.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report json");
        text.push('\n');
        text
    }
}

/// Runs a scenario end to end.
///
/// Each tick: step the world, publish the keys of devices diagnosed at
/// this tick, then on check ticks (`tick % check_every == 0`) match every
/// device's log against the registry.
pub fn run_scenario(script: &ScenarioScript) -> Result<ScenarioReport, ScenarioError> {
    script.validate()?;
    let mut world = SimWorld::from_script(script)?;
    let mut registry = DiagnosisRegistry::new();
    let mut diagnoses = Vec::new();
    let mut seen: Vec<BTreeMap<u64, NotificationReport>> = alloc::vec![BTreeMap::new(); world.devices.len()];

    for tick in 0..script.ticks {
        world.advance();
        let now = world.now();
        for d in script.diagnose.iter().filter(|d| d.tick == tick) {
            let device = world.device(&d.device).expect("validated device id");
            let upload = DiagnosisUpload {
                keys: device.keys_until(now),
                verification_token: format!("sim-{}-{}", d.device, tick),
                uploaded_at: now,
            };
            let report = registry.publish(&upload, &AnyToken)?;
            diagnoses.push(DiagnosisReport {
                device: d.device.clone(),
                tick,
                upload: report.upload,
                keys_published: report.accepted,
            });
        }
        if tick % script.check_every != 0 {
            continue;
        }
        for (device, found) in world.devices.iter().zip(seen.iter_mut()) {
            for n in match_exposures(&device.log, &registry, script.min_minutes) {
                found.entry(n.upload).or_insert_with(|| NotificationReport {
                    tick,
                    upload: n.upload,
                    matched_keys: n.matched_keys,
                    exposure_start: n.exposure_start,
                    exposure_end: n.exposure_end,
                    cumulative_minutes: n.cumulative_minutes,
                    department_notified: device.consent,
                });
            }
        }
    }

    Ok(ScenarioReport {
        name: script.name.clone(),
        seed: script.seed,
        ticks: script.ticks,
        registry_size: registry.len(),
        diagnoses,
        devices: world
            .devices
            .iter()
            .zip(seen)
            .map(|(d, found)| DeviceReport {
                id: d.id.clone(),
                encounter_records: d.log.len(),
                contact_minutes: d.log.total_contact_seconds() / 60,
                notifications: found.into_values().collect(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn still(id: &str, x: f64) -> DeviceScript {
        DeviceScript {
            id: id.into(),
            waypoints: vec![ScriptPoint { tick: 0, x, y: 0.0 }],
            infected_at: None,
            consent: false,
        }
    }

    fn world(devices: &[DeviceScript]) -> SimWorld {
        SimWorld::new(devices, 1, DEFAULT_PROXIMITY_RADIUS_M, 42, default_start(), ScheduleConfig::default()).unwrap()
    }

    #[test]
    fn near_devices_swap_keys() {
        let w = world(&[still("a", 0.0), still("b", 5.0)]).step();
        let t = w.start;
        let a_key = w.devices[0].key_at(t).unwrap();
        let b_key = w.devices[1].key_at(t).unwrap();
        assert_eq!(w.devices[0].log.records()[0].observed_key, *b_key);
        assert_eq!(w.devices[1].log.records()[0].observed_key, *a_key);
        assert_eq!(w.tick, 1);
    }

    #[test]
    fn far_devices_do_not() {
        let w = world(&[still("a", 0.0), still("b", 50.0)]).step();
        assert!(w.devices.iter().all(|d| d.log.is_empty()));
    }

    #[test]
    fn queue_of_ten_minutes_is_one_encounter() {
        let mut w = world(&[still("a", 0.0), still("b", 2.0)]);
        for _ in 0..10 {
            w.advance();
        }
        for d in &w.devices {
            assert_eq!(d.log.total_contact_seconds(), 600);
        }
    }

    #[test]
    fn interpolates_between_points() {
        let d = DeviceScript {
            id: "m".into(),
            waypoints: vec![ScriptPoint { tick: 0, x: 0.0, y: 0.0 }, ScriptPoint { tick: 10, x: 100.0, y: 50.0 }],
            infected_at: None,
            consent: true,
        };
        let w = world(&[d]);
        assert_eq!(w.devices[0].position_at(5), (50.0, 25.0));
        assert_eq!(w.devices[0].position_at(20), (100.0, 50.0));
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = ScenarioScript::parse("{\n  \"devices\": [,]\n}").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 2, .. }), "{err:?}");
        let err = ScenarioScript::parse(
            r#"{"devices":[{"id":"a","waypoints":[{"tick":0,"x":0,"y":0}]}],
                "diagnose":[{"device":"a","tick":1}],"check_every":1,"ticks":5,"seed":1}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { ref path, .. } if path == "diagnose[0]"));
    }

    #[test]
    fn nobody_infected_nobody_notified() {
        let script = ScenarioScript::parse(
            r#"{"devices":[{"id":"a","waypoints":[{"tick":0,"x":0,"y":0}]},
                           {"id":"b","waypoints":[{"tick":0,"x":1,"y":0}]}],
                "check_every":1,"ticks":30,"seed":9}"#,
        )
        .unwrap();
        let report = run_scenario(&script).unwrap();
        assert!(report.notified().is_empty());
        assert_eq!(report.registry_size, 0);
    }
}
