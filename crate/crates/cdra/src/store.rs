//! File-backed event store. Every accepted mutation is appended as one JSON
//! line and synced to disk before it is acknowledged; opening a store
//! replays the logs to rebuild all state.
//!
//! Layout under the root directory:
//! `cases/<id>.jsonl` (audit entries), `registry.jsonl` (diagnosis uploads),
//! `advisories.jsonl`, `quarantine.jsonl` (tags and pings; alerts are
//! derived on replay).

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::NaiveDateTime;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cdra_core::ens::{AnyToken, DiagnosisRegistry, DiagnosisUpload, EnsError, PublishReport, PublishedKey};
use cdra_core::geo::{PathAdvisory, PathError};
use cdra_core::investigation::{open_case, AuditEntry};
use cdra_core::quarantine::{
    LocationPing, PingOutcome, QuarantineError, QuarantineMonitor, QuarantineTag, ViolationAlert,
};
use cdra_core::{CaseError, CdrRecord, InvestigationCase, Subscriber, TimeWindow};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("case id {0:?} may only use letters, digits, '-', '_' and '.'")]
    BadCaseId(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Ens(#[from] EnsError),
    #[error(transparent)]
    Quarantine(#[from] QuarantineError),
    #[error(transparent)]
    Path(#[from] PathError),
}

type Result<T, E = StoreError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// An append-only JSON-lines file.
#[derive(Debug)]
struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens `path`, returning its complete entries. A final line without
    /// its newline was never acknowledged and is cut off.
    fn open<T: DeserializeOwned>(path: &Path) -> Result<(Journal, Vec<T>)> {
        let text = match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(path)(e)),
        };
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        let mut entries = Vec::new();
        for (i, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        if complete < text.len() {
            file.set_len(complete as u64).map_err(io_err(path))?;
            file.sync_data().map_err(io_err(path))?;
        }
        Ok((
            Journal {
                path: path.to_path_buf(),
                file,
            },
            entries,
        ))
    }

    /// Writes the entries and syncs before returning.
    fn append<T: Serialize>(&mut self, entries: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        for entry in entries {
            serde_json::to_writer(&mut buf, entry).expect("store entries serialize");
            buf.push(b'\n');
        }
        self.file.write_all(&buf).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }
}

#[derive(Debug)]
struct CaseSlot {
    journal: Mutex<Journal>,
    snapshot: RwLock<Arc<InvestigationCase>>,
}

/// One line of `quarantine.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum QuarantineEntry {
    Tag {
        subscriber: Subscriber,
        center_lat: f64,
        center_lon: f64,
        radius_m: f64,
        window: TimeWindow,
    },
    Ping(LocationPing),
}

#[derive(Debug)]
struct Quarantine {
    journal: Journal,
    monitor: QuarantineMonitor,
    events: usize,
}

#[derive(Debug)]
struct Registry {
    journal: Journal,
    registry: DiagnosisRegistry,
}

#[derive(Debug)]
struct Advisories {
    journal: Journal,
    items: Vec<PathAdvisory>,
}

/// Counts of durable mutations, by log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationCounts {
    pub case_entries: usize,
    pub diagnosis_uploads: usize,
    pub advisories: usize,
    pub quarantine_events: usize,
}

impl MutationCounts {
    pub fn total(&self) -> usize {
        self.case_entries + self.diagnosis_uploads + self.advisories + self.quarantine_events
    }
}

/// The service's state. Writers are serialized per case and per log;
/// readers get snapshots.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    cases: RwLock<BTreeMap<String, Arc<CaseSlot>>>,
    creating: Mutex<()>,
    registry: Mutex<Registry>,
    advisories: Mutex<Advisories>,
    quarantine: Mutex<Quarantine>,
}

pub fn valid_case_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl Store {
    /// Opens or creates a store, replaying everything in it.
    pub fn open(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        let case_dir = root.join("cases");
        fs::create_dir_all(&case_dir).map_err(io_err(&case_dir))?;

        let mut cases = BTreeMap::new();
        let mut names: Vec<PathBuf> = fs::read_dir(&case_dir)
            .map_err(io_err(&case_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        names.sort();
        for path in names {
            let (journal, audit) = Journal::open::<AuditEntry>(&path)?;
            if audit.is_empty() {
                continue;
            }
            let case = InvestigationCase::replay(&audit).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            cases.insert(
                case.case_id.clone(),
                Arc::new(CaseSlot {
                    journal: Mutex::new(journal),
                    snapshot: RwLock::new(Arc::new(case)),
                }),
            );
        }

        let path = root.join("registry.jsonl");
        let (journal, uploads) = Journal::open::<DiagnosisUpload>(&path)?;
        let mut registry = DiagnosisRegistry::new();
        for (i, upload) in uploads.iter().enumerate() {
            registry.publish(upload, &AnyToken).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }

        let (adv_journal, items) = Journal::open::<PathAdvisory>(&root.join("advisories.jsonl"))?;

        let path = root.join("quarantine.jsonl");
        let (q_journal, entries) = Journal::open::<QuarantineEntry>(&path)?;
        let mut monitor = QuarantineMonitor::new();
        for (i, entry) in entries.iter().enumerate() {
            apply_quarantine(&mut monitor, entry).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }

        Ok(Store {
            root,
            cases: RwLock::new(cases),
            creating: Mutex::new(()),
            registry: Mutex::new(Registry { journal, registry }),
            advisories: Mutex::new(Advisories {
                journal: adv_journal,
                items,
            }),
            quarantine: Mutex::new(Quarantine {
                journal: q_journal,
                monitor,
                events: entries.len(),
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn case(&self, case_id: &str) -> Option<Arc<InvestigationCase>> {
        let slot = self.cases.read().unwrap().get(case_id).cloned()?;
        let snapshot = slot.snapshot.read().unwrap().clone();
        Some(snapshot)
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.read().unwrap().keys().cloned().collect()
    }

    pub fn open_case(
        &self,
        case_id: &str,
        index: &Subscriber,
        records: &[CdrRecord],
        window: TimeWindow,
        at: NaiveDateTime,
    ) -> Result<Arc<InvestigationCase>> {
        let case_id = case_id.trim();
        if !valid_case_id(case_id) {
            return Err(StoreError::BadCaseId(case_id.to_string()));
        }
        let _guard = self.creating.lock().unwrap();
        if self.cases.read().unwrap().contains_key(case_id) {
            return Err(CaseError::DuplicateCase(case_id.to_string()).into());
        }
        let case = open_case(case_id, index, records, window, at)?;
        let path = self.root.join("cases").join(format!("{case_id}.jsonl"));
        let (mut journal, existing) = Journal::open::<serde_json::Value>(&path)?;
        if !existing.is_empty() {
            return Err(CaseError::DuplicateCase(case_id.to_string()).into());
        }
        journal.append(&case.audit)?;
        let case = Arc::new(case);
        self.cases.write().unwrap().insert(
            case_id.to_string(),
            Arc::new(CaseSlot {
                journal: Mutex::new(journal),
                snapshot: RwLock::new(case.clone()),
            }),
        );
        Ok(case)
    }

    /// Runs one case transition under the case's writer lock, persisting
    /// the audit entries it adds before publishing the new state.
    pub fn update_case<F>(&self, case_id: &str, transition: F) -> Result<Arc<InvestigationCase>>
    where
        F: FnOnce(&InvestigationCase) -> std::result::Result<InvestigationCase, CaseError>,
    {
        let slot = self
            .cases
            .read()
            .unwrap()
            .get(case_id)
            .cloned()
            .ok_or_else(|| CaseError::UnknownCase(case_id.to_string()))?;
        let mut journal = slot.journal.lock().unwrap();
        let current = slot.snapshot.read().unwrap().clone();
        let next = transition(&current)?;
        journal.append(&next.audit[current.audit.len()..])?;
        let next = Arc::new(next);
        *slot.snapshot.write().unwrap() = next.clone();
        Ok(next)
    }

    /// Publishes an already verified upload.
    pub fn publish_upload(&self, upload: &DiagnosisUpload) -> Result<PublishReport> {
        // Dry run on an empty registry rejects bad uploads before logging.
        DiagnosisRegistry::new().publish(upload, &AnyToken)?;
        let mut reg = self.registry.lock().unwrap();
        reg.journal.append(std::slice::from_ref(upload))?;
        Ok(reg.registry.publish(upload, &AnyToken)?)
    }

    pub fn published_since(&self, since: u64) -> Vec<PublishedKey> {
        self.registry.lock().unwrap().registry.since(since).to_vec()
    }

    pub fn publish_advisory(&self, advisory: PathAdvisory) -> Result<PathAdvisory> {
        let mut adv = self.advisories.lock().unwrap();
        adv.journal.append(std::slice::from_ref(&advisory))?;
        adv.items.push(advisory.clone());
        Ok(advisory)
    }

    pub fn advisories(&self) -> Vec<PathAdvisory> {
        self.advisories.lock().unwrap().items.clone()
    }

    pub fn geo_tag(
        &self,
        subscriber: &Subscriber,
        center_lat: f64,
        center_lon: f64,
        radius_m: f64,
        window: TimeWindow,
    ) -> Result<QuarantineTag> {
        QuarantineTag::new(0, subscriber.clone(), center_lat, center_lon, radius_m, window)?;
        let entry = QuarantineEntry::Tag {
            subscriber: subscriber.clone(),
            center_lat,
            center_lon,
            radius_m,
            window,
        };
        let mut q = self.quarantine.lock().unwrap();
        q.journal.append(std::slice::from_ref(&entry))?;
        q.events += 1;
        let tag = q
            .monitor
            .geo_tag(subscriber, center_lat, center_lon, radius_m, window)?
            .clone();
        Ok(tag)
    }

    pub fn ping(&self, ping: &LocationPing) -> Result<PingOutcome> {
        let mut q = self.quarantine.lock().unwrap();
        // Everything observe() can reject, checked before logging.
        let tag = q
            .monitor
            .tag(&ping.subscriber)
            .ok_or_else(|| QuarantineError::NotTagged(ping.subscriber.clone()))?;
        cdra_core::quarantine::evaluate_ping(tag, ping)?;
        q.journal.append(&[QuarantineEntry::Ping(ping.clone())])?;
        q.events += 1;
        Ok(q.monitor.observe(ping)?)
    }

    /// Alerts numbered from 1, those after `since`.
    pub fn alerts_since(&self, since: usize) -> Vec<(usize, ViolationAlert)> {
        let q = self.quarantine.lock().unwrap();
        q.monitor
            .alerts()
            .iter()
            .enumerate()
            .skip(since)
            .map(|(i, a)| (i + 1, a.clone()))
            .collect()
    }

    pub fn tag(&self, subscriber: &Subscriber) -> Option<QuarantineTag> {
        self.quarantine.lock().unwrap().monitor.tag(subscriber).cloned()
    }

    pub fn mutation_counts(&self) -> MutationCounts {
        let case_entries = self
            .cases
            .read()
            .unwrap()
            .values()
            .map(|slot| slot.snapshot.read().unwrap().audit.len())
            .sum();
        MutationCounts {
            case_entries,
            diagnosis_uploads: self.registry.lock().unwrap().registry.uploads() as usize,
            advisories: self.advisories.lock().unwrap().items.len(),
            quarantine_events: self.quarantine.lock().unwrap().events,
        }
    }
}

fn apply_quarantine(monitor: &mut QuarantineMonitor, entry: &QuarantineEntry) -> Result<(), QuarantineError> {
    match entry {
        QuarantineEntry::Tag {
            subscriber,
            center_lat,
            center_lon,
            radius_m,
            window,
        } => monitor
            .geo_tag(subscriber, *center_lat, *center_lon, *radius_m, *window)
            .map(|_| ()),
        QuarantineEntry::Ping(ping) => monitor.observe(ping).map(|_| ()),
    }
}
