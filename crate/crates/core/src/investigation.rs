//! The trace loop: open a case on a positive, label interview-confirmed
//! contacts as suspects, record test results, pull the CDR of every new
//! patient, and fold in exposure-notification contacts until no CDR
//! analysis is pending.
//!
//! Every transition is a pure function from one case state to the next,
//! and every accepted transition appends one [`AuditEntry`] carrying the
//! command that produced it, so [`InvestigationCase::replay`] can rebuild a
//! case from its log alone.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::cdr::{filter_window, normalize_records, CdrRecord, Subscriber, TimeWindow};
use crate::ens::ExposureNotification;
use crate::graph::{build_graph, merge_graphs, ContactGraph, GraphError, NodeStatus};

/// Version stamped into serialized case documents.
pub const CASE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CaseError {
    #[error("case {0} already exists")]
    DuplicateCase(String),
    #[error("no case {0}")]
    UnknownCase(String),
    #[error("case id must not be empty")]
    EmptyCaseId,
    #[error("{0} is not a patient in this case")]
    NotPatient(String),
    #[error("{subscriber} is not a contact of {patient}")]
    NotNeighbor { patient: String, subscriber: String },
    #[error("{0} is not in the contact web")]
    UnknownSubscriber(String),
    #[error("{0} has no pending CDR analysis")]
    NotPending(String),
    #[error("CDR mixes subjects {0} and {1}")]
    MixedSubjects(String, String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("audit log must start with an open entry")]
    MissingOpen,
    #[error("audit entry {seq} does not replay: {reason}")]
    ReplayDiverged { seq: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestResult {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestEvent {
    pub subscriber: Subscriber,
    pub result: TestResult,
    pub reported_at: NaiveDateTime,
}

/// An exposure match routed to the investigation. The contact number is
/// only usable when the device owner consented to share it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureContact {
    pub notification: ExposureNotification,
    #[serde(default)]
    pub subscriber: Option<Subscriber>,
    #[serde(default)]
    pub consent: bool,
}

impl ExposureContact {
    /// The subscriber, if one was supplied and may be used.
    pub fn resolvable(&self) -> Option<&Subscriber> {
        self.subscriber.as_ref().filter(|_| self.consent)
    }
}

/// The input of one transition, recorded verbatim for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CaseCommand {
    Open {
        case_id: String,
        index: Subscriber,
        window: TimeWindow,
        records: Vec<CdrRecord>,
    },
    ConfirmContacts {
        patient: Subscriber,
        confirmed: Vec<Subscriber>,
    },
    RecordTest {
        event: TestEvent,
    },
    AttachCdra {
        patient: Subscriber,
        window: TimeWindow,
        records: Vec<CdrRecord>,
    },
    MergeExposures {
        source: Subscriber,
        exposures: Vec<ExposureContact>,
    },
}

/// What a transition did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    Status {
        subscriber: Subscriber,
        from: Option<NodeStatus>,
        to: NodeStatus,
    },
    /// A cleared contact pulled back in as a suspect.
    Repromoted { subscriber: Subscriber },
    Enqueued { subscriber: Subscriber },
    Dequeued { subscriber: Subscriber },
    /// The CDR handed in for `patient` belongs to another number of theirs.
    Linked { patient: Subscriber, subject: Subscriber },
    NodesAdded { count: usize },
    Unchanged { subscriber: Subscriber, reason: String },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: NaiveDateTime,
    #[serde(flatten)]
    pub command: CaseCommand,
    pub effects: Vec<Effect>,
}

/// One investigation: its contact web, CDR work queue, and history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigationCase {
    pub schema_version: u32,
    pub case_id: String,
    pub index_patient: Subscriber,
    pub window: TimeWindow,
    pub web: ContactGraph,
    pub pending_cdra: VecDeque<Subscriber>,
    pub test_log: Vec<TestEvent>,
    pub audit: Vec<AuditEntry>,
}

/// Opens a case for a confirmed positive and runs the first CDR analysis.
///
/// The index patient's records are window-filtered and normalized before
/// the web is built. Its own analysis is done, so nothing is pending.
pub fn open_case(
    case_id: &str,
    index: &Subscriber,
    records: &[CdrRecord],
    window: TimeWindow,
    at: NaiveDateTime,
) -> Result<InvestigationCase, CaseError> {
    let case_id = case_id.trim();
    if case_id.is_empty() {
        return Err(CaseError::EmptyCaseId);
    }
    let prepared = normalize_records(&filter_window(records, &window));
    let web = build_graph(index, &prepared)?;
    let mut case = InvestigationCase {
        schema_version: CASE_SCHEMA_VERSION,
        case_id: case_id.to_string(),
        index_patient: index.clone(),
        window,
        web,
        pending_cdra: VecDeque::new(),
        test_log: Vec::new(),
        audit: Vec::new(),
    };
    let effects = vec![
        Effect::Status {
            subscriber: index.clone(),
            from: None,
            to: NodeStatus::Patient,
        },
        Effect::NodesAdded {
            count: case.web.node_count() - 1,
        },
    ];
    case.push_audit(
        at,
        CaseCommand::Open {
            case_id: case.case_id.clone(),
            index: index.clone(),
            window,
            records: records.to_vec(),
        },
        effects,
    );
    Ok(case)
}

impl InvestigationCase {
    fn push_audit(&mut self, at: NaiveDateTime, command: CaseCommand, effects: Vec<Effect>) {
        let seq = self.audit.len() as u64 + 1;
        let at = self.audit.last().map_or(at, |last| last.at.max(at));
        self.audit.push(AuditEntry {
            seq,
            at,
            command,
            effects,
        });
    }

    fn require_node(&self, who: &Subscriber) -> Result<NodeStatus, CaseError> {
        self.web
            .status(who)
            .ok_or_else(|| CaseError::UnknownSubscriber(who.to_string()))
    }

    fn require_patient(&self, who: &Subscriber) -> Result<(), CaseError> {
        match self.web.status(who) {
            Some(NodeStatus::Patient) => Ok(()),
            _ => Err(CaseError::NotPatient(who.to_string())),
        }
    }

    /// Labels the contacts a patient admits meeting as suspects.
    ///
    /// Only graph neighbors of the patient can be confirmed. Unknown and
    /// cleared contacts become suspects; patients and existing suspects
    /// are left alone and the no-op is noted.
    pub fn confirm_contacts(
        &self,
        patient: &Subscriber,
        confirmed: &BTreeSet<Subscriber>,
        at: NaiveDateTime,
    ) -> Result<Self, CaseError> {
        self.require_patient(patient)?;
        if let Some(stranger) = confirmed.iter().find(|c| !self.web.is_neighbor(patient, c)) {
            return Err(CaseError::NotNeighbor {
                patient: patient.to_string(),
                subscriber: stranger.to_string(),
            });
        }
        let mut next = self.clone();
        let mut effects = Vec::new();
        for contact in confirmed {
            next.promote_to_suspect(contact, &mut effects);
        }
        if confirmed.is_empty() {
            effects.push(Effect::Skipped {
                reason: "no contacts confirmed".into(),
            });
        }
        next.push_audit(
            at,
            CaseCommand::ConfirmContacts {
                patient: patient.clone(),
                confirmed: confirmed.iter().cloned().collect(),
            },
            effects,
        );
        Ok(next)
    }

    fn promote_to_suspect(&mut self, who: &Subscriber, effects: &mut Vec<Effect>) {
        match self.web.status(who) {
            Some(from @ (NodeStatus::Unknown | NodeStatus::Cleared)) => {
                self.web.set_status(who, NodeStatus::Suspect);
                effects.push(Effect::Status {
                    subscriber: who.clone(),
                    from: Some(from),
                    to: NodeStatus::Suspect,
                });
                if from == NodeStatus::Cleared {
                    effects.push(Effect::Repromoted {
                        subscriber: who.clone(),
                    });
                }
            }
            Some(status) => effects.push(Effect::Unchanged {
                subscriber: who.clone(),
                reason: format!("already {status}"),
            }),
            None => {}
        }
    }

    /// Applies a test result. A positive makes the subscriber a patient and
    /// queues their CDR analysis once; a negative clears a suspect.
    pub fn record_test_result(&self, event: &TestEvent) -> Result<Self, CaseError> {
        let who = &event.subscriber;
        let status = self.require_node(who)?;
        let mut next = self.clone();
        let mut effects = Vec::new();
        match (event.result, status) {
            (TestResult::Positive, NodeStatus::Patient) => effects.push(Effect::Unchanged {
                subscriber: who.clone(),
                reason: "duplicate positive".into(),
            }),
            (TestResult::Positive, from) => {
                next.web.set_status(who, NodeStatus::Patient);
                effects.push(Effect::Status {
                    subscriber: who.clone(),
                    from: Some(from),
                    to: NodeStatus::Patient,
                });
                if !next.pending_cdra.contains(who) {
                    next.pending_cdra.push_back(who.clone());
                    effects.push(Effect::Enqueued {
                        subscriber: who.clone(),
                    });
                }
            }
            (TestResult::Negative, NodeStatus::Suspect) => {
                next.web.set_status(who, NodeStatus::Cleared);
                effects.push(Effect::Status {
                    subscriber: who.clone(),
                    from: Some(NodeStatus::Suspect),
                    to: NodeStatus::Cleared,
                });
            }
            (TestResult::Negative, status) => effects.push(Effect::Unchanged {
                subscriber: who.clone(),
                reason: format!("negative result leaves {status} unchanged"),
            }),
        }
        next.test_log.push(event.clone());
        next.push_audit(
            event.reported_at,
            CaseCommand::RecordTest {
                event: event.clone(),
            },
            effects,
        );
        Ok(next)
    }

    /// Merges a pending patient's CDR analysis into the web.
    ///
    /// The CDR normally belongs to `patient`. When every row carries one
    /// other A party, that number is treated as a second SIM of the same
    /// person: it joins the web as a patient with an identity link.
    pub fn attach_cdra(
        &self,
        patient: &Subscriber,
        records: &[CdrRecord],
        window: TimeWindow,
        at: NaiveDateTime,
    ) -> Result<Self, CaseError> {
        let slot = self
            .pending_cdra
            .iter()
            .position(|p| p == patient)
            .ok_or_else(|| CaseError::NotPending(patient.to_string()))?;
        let prepared = normalize_records(&filter_window(records, &window));
        let subject = cdr_subject(&prepared)?.unwrap_or(patient).clone();

        let mut graph = build_graph(&subject, &prepared)?;
        let mut effects = Vec::new();
        if subject != *patient {
            graph.ensure_node(patient, NodeStatus::Patient);
            graph.add_identity_link(patient, &subject);
            effects.push(Effect::Linked {
                patient: patient.clone(),
                subject: subject.clone(),
            });
        }

        let mut next = self.clone();
        let before: BTreeMap<Subscriber, NodeStatus> = next
            .web
            .nodes()
            .map(|n| (n.subscriber.clone(), n.status))
            .collect();
        next.web = merge_graphs(&next.web, &graph);
        let added = next.web.node_count() - before.len();
        for node in next.web.nodes() {
            let from = before.get(&node.subscriber).copied();
            if from.is_some_and(|f| f != node.status) || (from.is_none() && node.status == NodeStatus::Patient) {
                effects.push(Effect::Status {
                    subscriber: node.subscriber.clone(),
                    from,
                    to: node.status,
                });
            }
        }
        effects.push(Effect::NodesAdded { count: added });
        next.pending_cdra.remove(slot);
        effects.push(Effect::Dequeued {
            subscriber: patient.clone(),
        });
        next.push_audit(
            at,
            CaseCommand::AttachCdra {
                patient: patient.clone(),
                window,
                records: records.to_vec(),
            },
            effects,
        );
        Ok(next)
    }

    /// Pulls exposure-notification contacts of `source` into the web.
    ///
    /// Consenting exposed subscribers are added if absent and promoted to
    /// suspect; the link is a proximity edge with no call tallies.
    /// Exposures without a usable subscriber are skipped and noted.
    pub fn merge_exposure_contacts(
        &self,
        source: &Subscriber,
        exposures: &[ExposureContact],
        at: NaiveDateTime,
    ) -> Result<Self, CaseError> {
        self.require_node(source)?;
        let mut next = self.clone();
        let mut effects = Vec::new();
        for (i, exposure) in exposures.iter().enumerate() {
            let Some(who) = exposure.resolvable() else {
                effects.push(Effect::Skipped {
                    reason: format!("exposure {} has no consented contact number", i + 1),
                });
                continue;
            };
            if who == source {
                effects.push(Effect::Skipped {
                    reason: format!("exposure {} names the source itself", i + 1),
                });
                continue;
            }
            if !next.web.contains(who) {
                next.web.ensure_node(who, NodeStatus::Unknown);
                effects.push(Effect::Status {
                    subscriber: who.clone(),
                    from: None,
                    to: NodeStatus::Unknown,
                });
            }
            next.web.add_proximity(
                source,
                who,
                exposure.notification.exposure_start,
                exposure.notification.exposure_end,
            );
            next.promote_to_suspect(who, &mut effects);
        }
        if exposures.is_empty() {
            effects.push(Effect::Skipped {
                reason: "no exposures".into(),
            });
        }
        next.push_audit(
            at,
            CaseCommand::MergeExposures {
                source: source.clone(),
                exposures: exposures.to_vec(),
            },
            effects,
        );
        Ok(next)
    }

    /// Applies one recorded command as a fresh transition.
    pub fn apply(&self, command: &CaseCommand, at: NaiveDateTime) -> Result<Self, CaseError> {
        match command {
            CaseCommand::Open { case_id, .. } => Err(CaseError::DuplicateCase(case_id.clone())),
            CaseCommand::ConfirmContacts { patient, confirmed } => {
                self.confirm_contacts(patient, &confirmed.iter().cloned().collect(), at)
            }
            CaseCommand::RecordTest { event } => self.record_test_result(event),
            CaseCommand::AttachCdra {
                patient,
                window,
                records,
            } => self.attach_cdra(patient, records, *window, at),
            CaseCommand::MergeExposures { source, exposures } => {
                self.merge_exposure_contacts(source, exposures, at)
            }
        }
    }

    /// Rebuilds a case from its audit log, checking that every entry
    /// reproduces the effects it recorded.
    pub fn replay(log: &[AuditEntry]) -> Result<Self, CaseError> {
        let (first, rest) = log.split_first().ok_or(CaseError::MissingOpen)?;
        let CaseCommand::Open {
            case_id,
            index,
            window,
            records,
        } = &first.command
        else {
            return Err(CaseError::MissingOpen);
        };
        let mut case = open_case(case_id, index, records, *window, first.at)?;
        check_entry(&case, first)?;
        for entry in rest {
            case = case
                .apply(&entry.command, entry.at)
                .map_err(|e| CaseError::ReplayDiverged {
                    seq: entry.seq,
                    reason: e.to_string(),
                })?;
            check_entry(&case, entry)?;
        }
        Ok(case)
    }

    /// True when no CDR analysis is outstanding.
    /// CDR rows placed by `subscriber` across every analysis of the case,
    /// each analysis limited to its window, normalized.
    pub fn records_of(&self, subscriber: &Subscriber) -> Vec<CdrRecord> {
        let mut out = Vec::new();
        for entry in &self.audit {
            let (window, records) = match &entry.command {
                CaseCommand::Open { window, records, .. } => (window, records),
                CaseCommand::AttachCdra { window, records, .. } => (window, records),
                _ => continue,
            };
            out.extend(
                filter_window(records, window)
                    .into_iter()
                    .filter(|r| r.a_party == *subscriber),
            );
        }
        normalize_records(&out)
    }

    pub fn is_exhausted(&self) -> bool {
        self.pending_cdra.is_empty()
    }

    /// Subscribers that are patients because of a positive test, the index
    /// case, or an identity link to one of those.
    pub fn expected_patients(&self) -> BTreeSet<Subscriber> {
        let mut expected: BTreeSet<Subscriber> = self
            .test_log
            .iter()
            .filter(|t| t.result == TestResult::Positive)
            .map(|t| t.subscriber.clone())
            .collect();
        expected.insert(self.index_patient.clone());
        for edge in self.web.edges().filter(|e| e.identity) {
            expected.insert(edge.source.clone());
            expected.insert(edge.target.clone());
        }
        expected
    }

    /// Checks the structural invariants of a case; returns the first breach.
    pub fn check_invariants(&self) -> Result<(), String> {
        for p in &self.pending_cdra {
            if self.web.status(p) != Some(NodeStatus::Patient) {
                return Err(format!("pending {p} is not a patient"));
            }
        }
        for (i, entry) in self.audit.iter().enumerate() {
            if entry.seq != i as u64 + 1 {
                return Err(format!("audit seq {} at position {i}", entry.seq));
            }
            if i > 0 && entry.at < self.audit[i - 1].at {
                return Err(format!("audit entry {} goes back in time", entry.seq));
            }
        }
        let patients: BTreeSet<Subscriber> = self.web.with_status(NodeStatus::Patient).cloned().collect();
        if patients != self.expected_patients() {
            return Err("patient set differs from positives plus index".into());
        }
        Ok(())
    }
}

fn check_entry(case: &InvestigationCase, recorded: &AuditEntry) -> Result<(), CaseError> {
    match case.audit.last() {
        Some(replayed) if replayed == recorded => Ok(()),
        _ => Err(CaseError::ReplayDiverged {
            seq: recorded.seq,
            reason: "effects differ from the recorded entry".into(),
        }),
    }
}

fn cdr_subject(records: &[CdrRecord]) -> Result<Option<&Subscriber>, CaseError> {
    let Some(first) = records.first() else {
        return Ok(None);
    };
    if let Some(other) = records.iter().find(|r| r.a_party != first.a_party) {
        return Err(CaseError::MixedSubjects(
            first.a_party.to_string(),
            other.a_party.to_string(),
        ));
    }
    Ok(Some(&first.a_party))
}

/// A set of cases with unique identifiers.
#[derive(Debug, Clone, Default)]
pub struct CaseBook {
    cases: BTreeMap<String, InvestigationCase>,
}

impl CaseBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(
        &mut self,
        case_id: &str,
        index: &Subscriber,
        records: &[CdrRecord],
        window: TimeWindow,
        at: NaiveDateTime,
    ) -> Result<&InvestigationCase, CaseError> {
        if self.cases.contains_key(case_id.trim()) {
            return Err(CaseError::DuplicateCase(case_id.trim().to_string()));
        }
        let case = open_case(case_id, index, records, window, at)?;
        Ok(self.cases.entry(case.case_id.clone()).or_insert(case))
    }

    pub fn get(&self, case_id: &str) -> Option<&InvestigationCase> {
        self.cases.get(case_id)
    }

    /// Runs a transition and keeps the result only if it succeeds.
    pub fn update<F>(&mut self, case_id: &str, transition: F) -> Result<&InvestigationCase, CaseError>
    where
        F: FnOnce(&InvestigationCase) -> Result<InvestigationCase, CaseError>,
    {
        let slot = self
            .cases
            .get_mut(case_id)
            .ok_or_else(|| CaseError::UnknownCase(case_id.to_string()))?;
        *slot = transition(slot)?;
        Ok(slot)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cases.keys().map(String::as_str)
    }
}
