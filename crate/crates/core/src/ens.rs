//! Exposure notification: rotating ephemeral keys, device-local encounter
//! logs, the published diagnosis-key registry, and on-device matching.
//!
//! Nothing in the registry ever refers to a person, a place, or an
//! encounter; matching reads the registry and never writes to it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use chrono::{Duration, NaiveDateTime};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_KEY_DIGITS: u8 = 4;
/// Largest key length whose keyspace fits a `u64`.
pub const MAX_KEY_DIGITS: u8 = 18;
pub const ROTATION_MIN_MINUTES: u32 = 10;
pub const ROTATION_MAX_MINUTES: u32 = 20;
pub const REGISTRY_RETENTION_DAYS: i64 = 14;
pub const DEFAULT_MIN_EXPOSURE_MINUTES: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnsError {
    #[error("key length must be 1-{MAX_KEY_DIGITS} digits, got {0}")]
    BadKeyLength(u8),
    #[error("rotation range {min}-{max} min is empty or zero")]
    BadRotation { min: u32, max: u32 },
    #[error("malformed key {0:?}")]
    MalformedKey(String),
    #[error("diagnosis upload has no keys")]
    EmptyUpload,
    #[error("diagnosis upload has no verification token")]
    MissingToken,
    #[error("verification token rejected")]
    TokenRejected,
}

/// A broadcast key value: a fixed-width decimal digit string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KeyValue(String);

impl KeyValue {
    pub fn parse(text: &str) -> Result<Self, EnsError> {
        let ok = (1..=usize::from(MAX_KEY_DIGITS)).contains(&text.len())
            && text.bytes().all(|b| b.is_ascii_digit());
        if ok {
            Ok(KeyValue(text.to_string()))
        } else {
            Err(EnsError::MalformedKey(text.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn digits(&self) -> usize {
        self.0.len()
    }

    /// Numeric value of the key.
    pub fn value(&self) -> u64 {
        self.0.parse().expect("validated digits")
    }
}

impl fmt::Display for KeyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for KeyValue {
    type Error = EnsError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        KeyValue::parse(&value)
    }
}

impl From<KeyValue> for String {
    fn from(value: KeyValue) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EphemeralKey {
    pub value: KeyValue,
    pub valid_from: NaiveDateTime,
    pub valid_to: NaiveDateTime,
}

impl EphemeralKey {
    pub fn is_active(&self, at: NaiveDateTime) -> bool {
        self.valid_from <= at && at < self.valid_to
    }
}

/// Inclusive range of key lifetimes in whole minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationRange {
    pub min_minutes: u32,
    pub max_minutes: u32,
}

impl RotationRange {
    pub fn new(min_minutes: u32, max_minutes: u32) -> Result<Self, EnsError> {
        if min_minutes == 0 || min_minutes > max_minutes {
            return Err(EnsError::BadRotation {
                min: min_minutes,
                max: max_minutes,
            });
        }
        Ok(RotationRange {
            min_minutes,
            max_minutes,
        })
    }

    pub fn fixed(minutes: u32) -> Result<Self, EnsError> {
        Self::new(minutes, minutes)
    }
}

impl Default for RotationRange {
    fn default() -> Self {
        RotationRange {
            min_minutes: ROTATION_MIN_MINUTES,
            max_minutes: ROTATION_MAX_MINUTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub digits: u8,
    pub rotation: RotationRange,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            digits: DEFAULT_KEY_DIGITS,
            rotation: RotationRange::default(),
        }
    }
}

/// Draws a run of back-to-back keys starting at `start`.
///
/// Keys are issued while their start lies inside the horizon, so the last
/// one may outlive it; every key keeps a lifetime inside the rotation
/// range. Lifetimes are uniform over whole minutes of the range and values
/// uniform over the `10^digits` keyspace.
pub fn generate_key_schedule<R: Rng + ?Sized>(
    rng: &mut R,
    start: NaiveDateTime,
    horizon: Duration,
    config: &ScheduleConfig,
) -> Result<Vec<EphemeralKey>, EnsError> {
    if config.digits == 0 || config.digits > MAX_KEY_DIGITS {
        return Err(EnsError::BadKeyLength(config.digits));
    }
    let rotation = RotationRange::new(config.rotation.min_minutes, config.rotation.max_minutes)?;
    let keyspace = 10u64.pow(u32::from(config.digits));
    let width = usize::from(config.digits);
    let end = start + horizon;

    let mut keys = Vec::new();
    let mut from = start;
    while from < end {
        let minutes = rng.gen_range(rotation.min_minutes..=rotation.max_minutes);
        let to = from + Duration::minutes(i64::from(minutes));
        let value = rng.gen_range(0..keyspace);
        keys.push(EphemeralKey {
            value: KeyValue(format!("{value:0width$}")),
            valid_from: from,
            valid_to: to,
        });
        from = to;
    }
    Ok(keys)
}

/// The key a device broadcasts at `at`.
pub fn active_key(schedule: &[EphemeralKey], at: NaiveDateTime) -> Option<&EphemeralKey> {
    let idx = schedule.partition_point(|k| k.valid_to <= at);
    schedule.get(idx).filter(|k| k.is_active(at))
}

/// A foreign key heard nearby. Lives only on the observing device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub observed_key: KeyValue,
    pub first_seen: NaiveDateTime,
    pub last_seen: NaiveDateTime,
    /// Accumulated time in contact, in seconds.
    pub contact_seconds: i64,
}

/// Device-local log of observed keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterLog {
    records: Vec<EncounterRecord>,
    coalesce_minutes: u32,
}

impl Default for EncounterLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EncounterLog {
    /// Sightings of one key within the longest key lifetime belong together.
    pub fn new() -> Self {
        Self::with_coalescing(ROTATION_MAX_MINUTES)
    }

    pub fn with_coalescing(minutes: u32) -> Self {
        EncounterLog {
            records: Vec::new(),
            coalesce_minutes: minutes,
        }
    }

    pub fn records(&self) -> &[EncounterRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Total contact time over all records, in seconds.
    pub fn total_contact_seconds(&self) -> i64 {
        self.records.iter().map(|r| r.contact_seconds).sum()
    }

    /// Logs an instantaneous sighting. Consecutive point sightings of one
    /// key count the time between them as contact.
    pub fn record_encounter(&mut self, key: &str, at: NaiveDateTime) -> Result<(), EnsError> {
        let key = KeyValue::parse(key)?;
        self.record_sighting(&key, at, Duration::zero());
        Ok(())
    }

    /// Logs contact with `key` lasting `dwell` from `at`.
    ///
    /// Extends the key's latest record when the sighting starts within the
    /// coalescing window of it; otherwise opens a new record.
    pub fn record_sighting(&mut self, key: &KeyValue, at: NaiveDateTime, dwell: Duration) {
        let until = at + dwell.max(Duration::zero());
        let window = Duration::minutes(i64::from(self.coalesce_minutes));
        let recent = self
            .records
            .iter_mut()
            .rev()
            .find(|r| r.observed_key == *key)
            .filter(|r| at >= r.first_seen && at - r.last_seen <= window);
        match recent {
            Some(record) => {
                let added = if dwell > Duration::zero() {
                    dwell
                } else {
                    (at - record.last_seen).max(Duration::zero())
                };
                record.contact_seconds += added.num_seconds();
                record.last_seen = record.last_seen.max(until);
            }
            None => self.records.push(EncounterRecord {
                observed_key: key.clone(),
                first_seen: at,
                last_seen: until,
                contact_seconds: (until - at).num_seconds(),
            }),
        }
    }
}

/// A positive user's self-declaration: their recent keys plus proof of the
/// diagnosis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisUpload {
    pub keys: Vec<EphemeralKey>,
    pub verification_token: String,
    pub uploaded_at: NaiveDateTime,
}

/// One key in the public registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedKey {
    /// Position in the registry, starting at 1.
    pub seq: u64,
    /// Which upload the key arrived in.
    pub upload: u64,
    pub value: KeyValue,
    pub valid_from: NaiveDateTime,
    pub valid_to: NaiveDateTime,
    pub published_at: NaiveDateTime,
}

impl PublishedKey {
    fn overlaps(&self, from: NaiveDateTime, to: NaiveDateTime) -> bool {
        self.valid_from <= to && from <= self.valid_to
    }
}

/// Decides whether a verification token proves a diagnosis.
pub trait TokenVerifier {
    fn verify(&self, token: &str) -> bool;
}

impl<F: Fn(&str) -> bool> TokenVerifier for F {
    fn verify(&self, token: &str) -> bool {
        self(token)
    }
}

/// Accepts every non-empty token.
pub struct AnyToken;

impl TokenVerifier for AnyToken {
    fn verify(&self, _token: &str) -> bool {
        true
    }
}

/// Read access to published diagnosis keys. Matching needs nothing more.
pub trait DiagnosisKeySource {
    fn published_keys(&self) -> &[PublishedKey];
}

impl DiagnosisKeySource for [PublishedKey] {
    fn published_keys(&self) -> &[PublishedKey] {
        self
    }
}

impl DiagnosisKeySource for Vec<PublishedKey> {
    fn published_keys(&self) -> &[PublishedKey] {
        self
    }
}

/// Append-only registry of diagnosis keys.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRegistry {
    keys: Vec<PublishedKey>,
    uploads: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishReport {
    pub upload: u64,
    pub accepted: usize,
    pub excluded: Vec<String>,
}

impl DiagnosisRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn uploads(&self) -> u64 {
        self.uploads
    }

    /// Keys with `seq > since`, for incremental sync.
    pub fn since(&self, since: u64) -> &[PublishedKey] {
        let idx = self.keys.partition_point(|k| k.seq <= since);
        &self.keys[idx..]
    }

    /// Validates an upload and appends its keys.
    ///
    /// Keys that expired more than the retention horizon before the upload
    /// are dropped with a diagnostic.
    pub fn publish(
        &mut self,
        upload: &DiagnosisUpload,
        verifier: &dyn TokenVerifier,
    ) -> Result<PublishReport, EnsError> {
        let (keep, excluded) = self.admit(upload, verifier)?;
        self.uploads += 1;
        let upload_id = self.uploads;
        for key in &keep {
            let seq = self.keys.len() as u64 + 1;
            self.keys.push(PublishedKey {
                seq,
                upload: upload_id,
                value: key.value.clone(),
                valid_from: key.valid_from,
                valid_to: key.valid_to,
                published_at: upload.uploaded_at,
            });
        }
        Ok(PublishReport {
            upload: upload_id,
            accepted: keep.len(),
            excluded,
        })
    }

    #[allow(clippy::type_complexity)]
    fn admit<'u>(
        &self,
        upload: &'u DiagnosisUpload,
        verifier: &dyn TokenVerifier,
    ) -> Result<(Vec<&'u EphemeralKey>, Vec<String>), EnsError> {
        if upload.verification_token.trim().is_empty() {
            return Err(EnsError::MissingToken);
        }
        if upload.keys.is_empty() {
            return Err(EnsError::EmptyUpload);
        }
        if !verifier.verify(&upload.verification_token) {
            return Err(EnsError::TokenRejected);
        }
        let cutoff = upload.uploaded_at - Duration::days(REGISTRY_RETENTION_DAYS);
        let mut keep = Vec::new();
        let mut excluded = Vec::new();
        for key in &upload.keys {
            if key.valid_to < cutoff {
                excluded.push(format!(
                    "key valid until {} is older than {} days",
                    key.valid_to, REGISTRY_RETENTION_DAYS
                ));
            } else {
                keep.push(key);
            }
        }
        Ok((keep, excluded))
    }
}

impl DiagnosisKeySource for DiagnosisRegistry {
    fn published_keys(&self) -> &[PublishedKey] {
        &self.keys
    }
}

/// Free-function form of [`DiagnosisRegistry::publish`].
pub fn publish_diagnosis(
    registry: &mut DiagnosisRegistry,
    upload: &DiagnosisUpload,
    verifier: &dyn TokenVerifier,
) -> Result<PublishReport, EnsError> {
    registry.publish(upload, verifier)
}

/// An on-device alert that logged keys match a diagnosed user's keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureNotification {
    pub upload: u64,
    pub matched_key: KeyValue,
    #[serde(default)]
    pub matched_keys: Vec<KeyValue>,
    pub exposure_start: NaiveDateTime,
    pub exposure_end: NaiveDateTime,
    pub cumulative_minutes: u32,
}

/// Compares a device's log against published keys.
///
/// Matches are grouped per upload, since one diagnosed user's keys rotate
/// during a single meeting. A group notifies when its summed contact is at
/// least `min_minutes` and non-zero.
pub fn match_exposures<S>(log: &EncounterLog, published: &S, min_minutes: u32) -> Vec<ExposureNotification>
where
    S: DiagnosisKeySource + ?Sized,
{
    let keys = published.published_keys();
    if keys.is_empty() || log.is_empty() {
        return Vec::new();
    }
    let mut by_value: BTreeMap<&KeyValue, Vec<&PublishedKey>> = BTreeMap::new();
    for key in keys {
        by_value.entry(&key.value).or_default().push(key);
    }

    struct Group {
        keys: Vec<KeyValue>,
        start: NaiveDateTime,
        end: NaiveDateTime,
        seconds: i64,
    }
    let mut groups: BTreeMap<u64, Group> = BTreeMap::new();
    for record in log.records() {
        let Some(candidates) = by_value.get(&record.observed_key) else {
            continue;
        };
        let mut uploads: Vec<u64> = candidates
            .iter()
            .filter(|k| k.overlaps(record.first_seen, record.last_seen))
            .map(|k| k.upload)
            .collect();
        uploads.dedup();
        for upload in uploads {
            let group = groups.entry(upload).or_insert_with(|| Group {
                keys: Vec::new(),
                start: record.first_seen,
                end: record.last_seen,
                seconds: 0,
            });
            if !group.keys.contains(&record.observed_key) {
                group.keys.push(record.observed_key.clone());
            }
            group.start = group.start.min(record.first_seen);
            group.end = group.end.max(record.last_seen);
            group.seconds += record.contact_seconds;
        }
    }

    let threshold = i64::from(min_minutes) * 60;
    groups
        .into_iter()
        .filter(|(_, g)| g.seconds > 0 && g.seconds >= threshold)
        .map(|(upload, g)| ExposureNotification {
            upload,
            matched_key: g.keys[0].clone(),
            matched_keys: g.keys,
            exposure_start: g.start,
            exposure_end: g.end,
            cumulative_minutes: u32::try_from(g.seconds / 60).unwrap_or(u32::MAX).max(1),
        })
        .collect()
}
