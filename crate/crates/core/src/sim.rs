//! In-process simulation of organisations, pseudonym registration, and
//! data-minimised cross-organisation queries.
//!
//! Each organisation holds its own identifier per subject and registers a
//! pseudonym only after verifying an ownership proof against that
//! identifier. Registration messages travel over a trusted in-process
//! channel tagged with the true subject handle, standing in for an
//! authenticated transport; no PKI is modeled. Without a subject's active
//! cross-proof, no two organisations can associate their pseudonyms.
//!
//! Scenarios are declarative JSON files executed deterministically (keys
//! come from a seeded ChaCha20 stream), so transcripts are byte-stable and
//! suitable for golden tests. Every transcript line can be audited for
//! leaked identifier or key material.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::identifier::Identifier;
use crate::proof::{self, OwnershipProof, Verdict};
use crate::suite::{HashSuite, MacKey, KEY_LEN};
use crate::tree::{Pseudonym, PseudonymTree, TreeError};

#[derive(Debug, thiserror::Error)]
pub struct ScenarioError {
    pub step: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.step {
            Some(i) => write!(f, "step {i}: {}", self.message),
            None => write!(f, "setup: {}", self.message),
        }
    }
}

impl ScenarioError {
    fn at(step: usize, message: impl Into<String>) -> Self {
        ScenarioError {
            step: Some(step),
            message: message.into(),
        }
    }

    fn setup(message: impl Into<String>) -> Self {
        ScenarioError {
            step: None,
            message: message.into(),
        }
    }
}

/// Attribute values an organisation may hold about a subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Text(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegisterOutcome {
    Accepted,
    Rejected(RegisterReject),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegisterReject {
    UnknownSubject,
    BadProof,
    AlreadyRegistered,
}

impl RegisterOutcome {
    pub fn token(self) -> &'static str {
        match self {
            RegisterOutcome::Accepted => "accepted",
            RegisterOutcome::Rejected(RegisterReject::UnknownSubject) => "rejected:unknown_subject",
            RegisterOutcome::Rejected(RegisterReject::BadProof) => "rejected:bad_proof",
            RegisterOutcome::Rejected(RegisterReject::AlreadyRegistered) => {
                "rejected:already_registered"
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryOutcome {
    Above,
    AtOrBelow,
    Refused(QueryRefusal),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryRefusal {
    UnknownPseudonym,
    UnknownAttribute,
}

impl QueryOutcome {
    pub fn token(self) -> &'static str {
        match self {
            QueryOutcome::Above => "above",
            QueryOutcome::AtOrBelow => "at_or_below",
            QueryOutcome::Refused(QueryRefusal::UnknownPseudonym) => "refused:unknown_pseudonym",
            QueryOutcome::Refused(QueryRefusal::UnknownAttribute) => "refused:unknown_attribute",
        }
    }
}

/// A stored registration: the subject handle and the proof that was
/// verified when the pseudonym was accepted.
#[derive(Clone, Debug)]
pub struct Registration {
    pub subject: String,
    pub proof: OwnershipProof,
}

/// One organisation's view of the world: its own identifiers per subject,
/// its registered pseudonyms, its subject data, and pseudonym-keyed data
/// received from other organisations.
#[derive(Debug, Default)]
pub struct OrgRegistry {
    pub org_id: String,
    known_identifiers: BTreeMap<String, Identifier>,
    registered: BTreeMap<Pseudonym, Registration>,
    subject_data: BTreeMap<String, BTreeMap<String, AttrValue>>,
    received: BTreeMap<Pseudonym, BTreeMap<String, AttrValue>>,
}

impl OrgRegistry {
    pub fn new(org_id: impl Into<String>) -> Self {
        OrgRegistry {
            org_id: org_id.into(),
            ..Default::default()
        }
    }

    pub fn add_subject(&mut self, handle: impl Into<String>, identifier: Identifier) {
        self.known_identifiers.insert(handle.into(), identifier);
    }

    pub fn set_attribute(&mut self, handle: &str, name: impl Into<String>, value: AttrValue) {
        self.subject_data
            .entry(handle.to_owned())
            .or_default()
            .insert(name.into(), value);
    }

    pub fn identifier_for(&self, handle: &str) -> Option<&Identifier> {
        self.known_identifiers.get(handle)
    }

    /// Registers `pseudonym` for `subject` iff the proof verifies against
    /// the identifier this organisation already holds for the subject.
    /// Also the receiving half of a cross-organisation proof: proving a
    /// foreign pseudonym to this organisation runs the identical check.
    pub fn register(
        &mut self,
        subject: &str,
        pseudonym: &Pseudonym,
        proof: &OwnershipProof,
    ) -> RegisterOutcome {
        let Some(identifier) = self.known_identifiers.get(subject) else {
            return RegisterOutcome::Rejected(RegisterReject::UnknownSubject);
        };
        if self.registered.contains_key(pseudonym) {
            return RegisterOutcome::Rejected(RegisterReject::AlreadyRegistered);
        }
        match proof::verify(pseudonym, identifier, proof) {
            Verdict::Accept => {
                self.registered.insert(
                    *pseudonym,
                    Registration {
                        subject: subject.to_owned(),
                        proof: proof.clone(),
                    },
                );
                RegisterOutcome::Accepted
            }
            Verdict::Reject(_) => RegisterOutcome::Rejected(RegisterReject::BadProof),
        }
    }

    /// Answers a single-bit threshold question about a registered
    /// pseudonym: strictly above, or at-or-below. The raw value never
    /// leaves this organisation.
    pub fn threshold_query(
        &self,
        pseudonym: &Pseudonym,
        attribute: &str,
        threshold: i64,
    ) -> QueryOutcome {
        let Some(registration) = self.registered.get(pseudonym) else {
            return QueryOutcome::Refused(QueryRefusal::UnknownPseudonym);
        };
        let value = self
            .subject_data
            .get(&registration.subject)
            .and_then(|table| table.get(attribute));
        match value {
            Some(AttrValue::Int(v)) => {
                if *v > threshold {
                    QueryOutcome::Above
                } else {
                    QueryOutcome::AtOrBelow
                }
            }
            // Non-numeric data cannot answer a threshold question.
            Some(AttrValue::Text(_)) | None => {
                QueryOutcome::Refused(QueryRefusal::UnknownAttribute)
            }
        }
    }

    /// Stores pseudonym-keyed data delivered by another organisation.
    pub fn receive_delivery(
        &mut self,
        pseudonym: &Pseudonym,
        attribute: impl Into<String>,
        value: AttrValue,
    ) {
        self.received
            .entry(*pseudonym)
            .or_default()
            .insert(attribute.into(), value);
    }

    pub fn received_value(&self, pseudonym: &Pseudonym, attribute: &str) -> Option<&AttrValue> {
        self.received.get(pseudonym).and_then(|t| t.get(attribute))
    }

    pub fn delete_attribute(&mut self, subject: &str, attribute: &str) -> bool {
        self.subject_data
            .get_mut(subject)
            .map(|table| table.remove(attribute).is_some())
            .unwrap_or(false)
    }

    pub fn attribute(&self, subject: &str, name: &str) -> Option<&AttrValue> {
        self.subject_data.get(subject).and_then(|t| t.get(name))
    }

    pub fn registered_pseudonyms(&self) -> impl Iterator<Item = &Pseudonym> {
        self.registered.keys()
    }

    pub fn registration(&self, pseudonym: &Pseudonym) -> Option<&Registration> {
        self.registered.get(pseudonym)
    }
}

/// The user-side agent: holds the identifiers and the private trees, and
/// builds proofs on demand. Keys and trees never leave the agent.
#[derive(Debug)]
pub struct UserAgent {
    pub handle: String,
    /// (org id, identifier) pairs in declaration order; the order is the
    /// leaf order of every tree this agent builds.
    identifiers: Vec<(String, Identifier)>,
    trees: BTreeMap<String, PseudonymTree>,
}

impl UserAgent {
    pub fn new(handle: impl Into<String>, identifiers: Vec<(String, Identifier)>) -> Self {
        UserAgent {
            handle: handle.into(),
            identifiers,
            trees: BTreeMap::new(),
        }
    }

    pub fn identifiers(&self) -> &[(String, Identifier)] {
        &self.identifiers
    }

    /// Builds (or rebuilds) the tree for `context` over all of this agent's
    /// identifiers with the given key, and returns the pseudonym.
    pub fn create_pseudonym(
        &mut self,
        context: &str,
        suite: HashSuite,
        key: MacKey,
    ) -> Result<Pseudonym, TreeError> {
        let ids: Vec<Identifier> = self.identifiers.iter().map(|(_, id)| id.clone()).collect();
        let tree = PseudonymTree::build(suite, key, ids)?;
        let pseudonym = tree.root();
        self.trees.insert(context.to_owned(), tree);
        Ok(pseudonym)
    }

    pub fn pseudonym(&self, context: &str) -> Option<Pseudonym> {
        self.trees.get(context).map(|t| t.root())
    }

    pub fn tree(&self, context: &str) -> Option<&PseudonymTree> {
        self.trees.get(context)
    }

    /// Proof that the `context` pseudonym covers the identifier known to
    /// `org_id` — the path for that organisation's own identifier, never
    /// any other.
    pub fn prove_for_org(
        &self,
        context: &str,
        org_id: &str,
    ) -> Result<OwnershipProof, ScenarioError> {
        let tree = self.trees.get(context).ok_or_else(|| {
            ScenarioError::setup(format!(
                "{:?} has no pseudonym for context {context:?}",
                self.handle
            ))
        })?;
        let index = self
            .identifiers
            .iter()
            .position(|(org, _)| org == org_id)
            .ok_or_else(|| {
                ScenarioError::setup(format!(
                    "{:?} has no identifier for organisation {org_id:?}",
                    self.handle
                ))
            })?;
        proof::prove(tree, index)
            .map_err(|e| ScenarioError::setup(format!("proof construction failed: {e}")))
    }
}

/// End-to-end proof of ownership against one organisation: the user builds
/// the path for `target_org`'s own identifier from their `context` tree and
/// the organisation runs the registration check on it. Registering at the
/// pseudonym's home organisation is the same flow with `context` naming
/// that organisation.
pub fn cross_prove(
    user: &UserAgent,
    target_org: &mut OrgRegistry,
    context: &str,
) -> Result<(Pseudonym, OwnershipProof, RegisterOutcome), ScenarioError> {
    let pseudonym = user.pseudonym(context).ok_or_else(|| {
        ScenarioError::setup(format!(
            "{:?} has no pseudonym for context {context:?}",
            user.handle
        ))
    })?;
    let proof = user.prove_for_org(context, &target_org.org_id)?;
    let outcome = target_org.register(&user.handle, &pseudonym, &proof);
    Ok((pseudonym, proof, outcome))
}

// ---------------------------------------------------------------------------
// Declarative scenarios

/// A scripted multi-organisation flow. Parsed from JSON:
///
/// ```json
/// {
///   "seed": 1,
///   "suite": "mp-sha256",
///   "orgs": ["university", "finmin"],
///   "subjects": [{
///     "handle": "alice",
///     "identifiers": [
///       {"org": "university", "domain": "...", "attributes": ["..."]}
///     ],
///     "data": {"finmin": {"annual_income": 12000}}
///   }],
///   "steps": [{"op": "register", "subject": "alice", "org": "finmin",
///              "context": "finmin"}, {"op": "expect", "outcome": "accepted"}]
/// }
/// ```
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_suite_token")]
    pub suite: String,
    pub orgs: Vec<String>,
    pub subjects: Vec<SubjectDecl>,
    pub steps: Vec<Step>,
}

fn default_suite_token() -> String {
    "mp-sha256".to_owned()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectDecl {
    pub handle: String,
    pub identifiers: Vec<IdentifierDecl>,
    #[serde(default)]
    pub data: BTreeMap<String, BTreeMap<String, AttrValue>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifierDecl {
    pub org: String,
    pub domain: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// User builds the tree for `context` over all their identifiers.
    CreatePseudonym { subject: String, context: String },
    /// User registers the `context` pseudonym at `org` (proving with the
    /// identifier `org` already knows).
    Register {
        subject: String,
        org: String,
        context: String,
    },
    /// User proves ownership of the `context` pseudonym to `target_org`,
    /// an organisation other than the one the pseudonym was made for.
    CrossProve {
        subject: String,
        context: String,
        target_org: String,
    },
    /// `asker` asks `answerer` whether the subject's attribute is strictly
    /// above `threshold`, referring to the subject only by pseudonym.
    ThresholdQuery {
        asker: String,
        answerer: String,
        subject: String,
        context: String,
        attribute: String,
        threshold: i64,
    },
    /// `from` submits a pseudonym-keyed value to `to` (e.g. a computed
    /// score), revealing nothing but the pseudonym and the value.
    Deliver {
        from: String,
        to: String,
        subject: String,
        context: String,
        attribute: String,
        value: AttrValue,
    },
    /// An organisation erases one of its own subject attributes.
    DeleteAttribute {
        org: String,
        subject: String,
        attribute: String,
    },
    /// Asserts the outcome token of the previous step.
    Expect { outcome: String },
}

/// One transcript line. Every field an organisation sees is inside this
/// structure, so byte-searching serialized events is a faithful audit of
/// what crossed each (simulated) channel.
#[derive(Debug, Serialize)]
pub struct TranscriptEvent {
    pub step: usize,
    pub op: String,
    pub parties: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub org: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<AttrValue>,
    /// Canonical pseudonym wire JSON, when the message carries one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudonym: Option<String>,
    /// Canonical proof wire JSON, when the message carries one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proof: Option<String>,
    pub outcome: String,
}

impl TranscriptEvent {
    fn involves_org(&self, org_id: &str) -> bool {
        self.parties.iter().any(|p| p == &format!("org:{org_id}"))
    }
}

#[derive(Debug, Default)]
pub struct Transcript {
    pub events: Vec<TranscriptEvent>,
}

impl Transcript {
    /// JSON-lines rendering, one event per line. Byte-stable for a given
    /// scenario file.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("transcript event serializes"));
            out.push('\n');
        }
        out
    }

    /// The events organisation `org_id` participated in.
    pub fn org_view(&self, org_id: &str) -> Vec<&TranscriptEvent> {
        self.events
            .iter()
            .filter(|e| e.involves_org(org_id))
            .collect()
    }
}

/// The world state after a scenario run, kept for audits and assertions.
#[derive(Debug)]
pub struct ScenarioRun {
    pub transcript: Transcript,
    pub orgs: BTreeMap<String, OrgRegistry>,
    pub users: BTreeMap<String, UserAgent>,
}

#[derive(Debug, thiserror::Error)]
#[error("leakage: org {org:?} transcript (step {step}) contains {what}")]
pub struct AuditViolation {
    pub org: String,
    pub step: usize,
    pub what: String,
}

impl ScenarioRun {
    /// Verifies that no organisation's transcript view contains identifier
    /// bytes it does not already know (raw attribute bytes, the canonical
    /// encoding, or its hex form) nor any user key (raw or hex).
    pub fn leakage_audit(&self) -> Result<(), AuditViolation> {
        // Patterns per org: everything foreign to it.
        for (org_id, org) in &self.orgs {
            let own: BTreeSet<Vec<u8>> = org
                .known_identifiers
                .values()
                .map(|id| id.encode())
                .collect();
            let mut forbidden: Vec<(String, Vec<u8>)> = Vec::new();
            for agent in self.users.values() {
                for (_, id) in agent.identifiers() {
                    let enc = id.encode();
                    if own.contains(&enc) {
                        continue;
                    }
                    let tag = format!("identifier {:?}", id.domain_label());
                    forbidden.push((format!("{tag} (encoded)"), enc.clone()));
                    forbidden.push((format!("{tag} (hex)"), hex::encode(&enc).into_bytes()));
                    for attr in id.attributes() {
                        forbidden.push((format!("{tag} (attribute bytes)"), attr.clone()));
                    }
                }
                for (context, tree) in &agent.trees {
                    let tag = format!("key for context {context:?}");
                    forbidden.push((format!("{tag} (raw)"), tree.key_bytes().to_vec()));
                    forbidden.push((
                        format!("{tag} (hex)"),
                        hex::encode(tree.key_bytes()).into_bytes(),
                    ));
                }
            }
            for event in self.transcript.org_view(org_id) {
                let line = serde_json::to_string(event)
                    .expect("transcript event serializes")
                    .into_bytes();
                for (what, needle) in &forbidden {
                    if contains(&line, needle) {
                        return Err(AuditViolation {
                            org: org_id.clone(),
                            step: event.step,
                            what: what.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Executes a scenario deterministically and returns the transcript plus
/// the final world state.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun, ScenarioError> {
    let suite = HashSuite::from_token(&scenario.suite)
        .ok_or_else(|| ScenarioError::setup(format!("unknown suite {:?}", scenario.suite)))?;

    // World setup from declarations.
    let mut orgs: BTreeMap<String, OrgRegistry> = scenario
        .orgs
        .iter()
        .map(|id| (id.clone(), OrgRegistry::new(id.clone())))
        .collect();
    let mut users: BTreeMap<String, UserAgent> = BTreeMap::new();
    for decl in &scenario.subjects {
        let mut identifiers = Vec::with_capacity(decl.identifiers.len());
        for idecl in &decl.identifiers {
            let org = orgs.get_mut(&idecl.org).ok_or_else(|| {
                ScenarioError::setup(format!(
                    "subject {:?} references undeclared organisation {:?}",
                    decl.handle, idecl.org
                ))
            })?;
            let attrs: Vec<&str> = idecl.attributes.iter().map(String::as_str).collect();
            let identifier = Identifier::from_strings(idecl.domain.clone(), &attrs)
                .map_err(|e| ScenarioError::setup(format!("bad identifier: {e}")))?;
            org.add_subject(decl.handle.clone(), identifier.clone());
            identifiers.push((idecl.org.clone(), identifier));
        }
        for (org_id, table) in &decl.data {
            let org = orgs.get_mut(org_id).ok_or_else(|| {
                ScenarioError::setup(format!(
                    "subject {:?} declares data for undeclared organisation {org_id:?}",
                    decl.handle
                ))
            })?;
            for (name, value) in table {
                org.set_attribute(&decl.handle, name.clone(), value.clone());
            }
        }
        if users
            .insert(decl.handle.clone(), UserAgent::new(decl.handle.clone(), identifiers))
            .is_some()
        {
            return Err(ScenarioError::setup(format!(
                "duplicate subject handle {:?}",
                decl.handle
            )));
        }
    }

    // Deterministic key stream; one draw per create_pseudonym step.
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
    let mut transcript = Transcript::default();
    let mut last_outcome: Option<String> = None;

    for (step, op) in scenario.steps.iter().enumerate() {
        match op {
            Step::CreatePseudonym { subject, context } => {
                let agent = users
                    .get_mut(subject)
                    .ok_or_else(|| ScenarioError::at(step, format!("unknown subject {subject:?}")))?;
                let mut key_bytes = vec![0u8; KEY_LEN];
                rng.fill_bytes(&mut key_bytes);
                let pseudonym = agent
                    .create_pseudonym(context, suite, MacKey::new(key_bytes))
                    .map_err(|e| ScenarioError::at(step, e.to_string()))?;
                let outcome = "created".to_owned();
                last_outcome = Some(outcome.clone());
                transcript.events.push(TranscriptEvent {
                    step,
                    op: "create_pseudonym".into(),
                    parties: vec![format!("user:{subject}")],
                    subject: Some(subject.clone()),
                    context: Some(context.clone()),
                    org: None,
                    attribute: None,
                    threshold: None,
                    value: None,
                    pseudonym: Some(pseudonym.to_json()),
                    proof: None,
                    outcome,
                });
            }
            Step::Register {
                subject,
                org,
                context,
            }
            | Step::CrossProve {
                subject,
                context,
                target_org: org,
            } => {
                let is_cross = matches!(op, Step::CrossProve { .. });
                let agent = users
                    .get(subject)
                    .ok_or_else(|| ScenarioError::at(step, format!("unknown subject {subject:?}")))?;
                let registry = orgs
                    .get_mut(org)
                    .ok_or_else(|| ScenarioError::at(step, format!("unknown organisation {org:?}")))?;
                let (pseudonym, proof, outcome) = cross_prove(agent, registry, context)
                    .map_err(|e| ScenarioError::at(step, e.message))?;
                last_outcome = Some(outcome.token().to_owned());
                transcript.events.push(TranscriptEvent {
                    step,
                    op: if is_cross { "cross_prove" } else { "register" }.into(),
                    parties: vec![format!("user:{subject}"), format!("org:{org}")],
                    subject: Some(subject.clone()),
                    context: Some(context.clone()),
                    org: Some(org.clone()),
                    attribute: None,
                    threshold: None,
                    value: None,
                    pseudonym: Some(pseudonym.to_json()),
                    proof: Some(proof.to_json()),
                    outcome: outcome.token().to_owned(),
                });
            }
            Step::ThresholdQuery {
                asker,
                answerer,
                subject,
                context,
                attribute,
                threshold,
            } => {
                if !orgs.contains_key(asker) {
                    return Err(ScenarioError::at(step, format!("unknown organisation {asker:?}")));
                }
                let agent = users
                    .get(subject)
                    .ok_or_else(|| ScenarioError::at(step, format!("unknown subject {subject:?}")))?;
                let pseudonym = agent.pseudonym(context).ok_or_else(|| {
                    ScenarioError::at(step, format!("no pseudonym for context {context:?}"))
                })?;
                let registry = orgs.get(answerer).ok_or_else(|| {
                    ScenarioError::at(step, format!("unknown organisation {answerer:?}"))
                })?;
                let outcome = registry.threshold_query(&pseudonym, attribute, *threshold);
                last_outcome = Some(outcome.token().to_owned());
                transcript.events.push(TranscriptEvent {
                    step,
                    op: "threshold_query".into(),
                    parties: vec![format!("org:{asker}"), format!("org:{answerer}")],
                    subject: None,
                    context: None,
                    org: Some(answerer.clone()),
                    attribute: Some(attribute.clone()),
                    threshold: Some(*threshold),
                    value: None,
                    pseudonym: Some(pseudonym.to_json()),
                    proof: None,
                    outcome: outcome.token().to_owned(),
                });
            }
            Step::Deliver {
                from,
                to,
                subject,
                context,
                attribute,
                value,
            } => {
                let agent = users
                    .get(subject)
                    .ok_or_else(|| ScenarioError::at(step, format!("unknown subject {subject:?}")))?;
                let pseudonym = agent.pseudonym(context).ok_or_else(|| {
                    ScenarioError::at(step, format!("no pseudonym for context {context:?}"))
                })?;
                let sender = orgs
                    .get(from)
                    .ok_or_else(|| ScenarioError::at(step, format!("unknown organisation {from:?}")))?;
                if sender.registration(&pseudonym).is_none() {
                    return Err(ScenarioError::at(
                        step,
                        format!("organisation {from:?} has no registration for that pseudonym"),
                    ));
                }
                let receiver = orgs
                    .get_mut(to)
                    .ok_or_else(|| ScenarioError::at(step, format!("unknown organisation {to:?}")))?;
                receiver.receive_delivery(&pseudonym, attribute.clone(), value.clone());
                let outcome = "delivered".to_owned();
                last_outcome = Some(outcome.clone());
                transcript.events.push(TranscriptEvent {
                    step,
                    op: "deliver".into(),
                    parties: vec![format!("org:{from}"), format!("org:{to}")],
                    subject: None,
                    context: None,
                    org: Some(to.clone()),
                    attribute: Some(attribute.clone()),
                    threshold: None,
                    value: Some(value.clone()),
                    pseudonym: Some(pseudonym.to_json()),
                    proof: None,
                    outcome,
                });
            }
            Step::DeleteAttribute {
                org,
                subject,
                attribute,
            } => {
                let registry = orgs
                    .get_mut(org)
                    .ok_or_else(|| ScenarioError::at(step, format!("unknown organisation {org:?}")))?;
                if !registry.delete_attribute(subject, attribute) {
                    return Err(ScenarioError::at(
                        step,
                        format!("organisation {org:?} holds no {attribute:?} for {subject:?}"),
                    ));
                }
                let outcome = "deleted".to_owned();
                last_outcome = Some(outcome.clone());
                transcript.events.push(TranscriptEvent {
                    step,
                    op: "delete_attribute".into(),
                    parties: vec![format!("org:{org}")],
                    subject: Some(subject.clone()),
                    context: None,
                    org: Some(org.clone()),
                    attribute: Some(attribute.clone()),
                    threshold: None,
                    value: None,
                    pseudonym: None,
                    proof: None,
                    outcome,
                });
            }
            Step::Expect { outcome } => {
                let actual = last_outcome.clone().ok_or_else(|| {
                    ScenarioError::at(step, "expect with no preceding step".to_owned())
                })?;
                if &actual != outcome {
                    return Err(ScenarioError::at(
                        step,
                        format!("expected outcome {outcome:?}, got {actual:?}"),
                    ));
                }
                transcript.events.push(TranscriptEvent {
                    step,
                    op: "expect".into(),
                    parties: vec![],
                    subject: None,
                    context: None,
                    org: None,
                    attribute: None,
                    threshold: None,
                    value: None,
                    pseudonym: None,
                    proof: None,
                    outcome: outcome.clone(),
                });
            }
        }
    }

    Ok(ScenarioRun {
        transcript,
        orgs,
        users,
    })
}

/// Parses a scenario from JSON.
pub fn parse_scenario(data: &str) -> Result<Scenario, ScenarioError> {
    serde_json::from_str(data).map_err(|e| ScenarioError::setup(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proof::prove;

    fn id(domain: &str, attr: &str) -> Identifier {
        Identifier::from_strings(domain, &[attr]).unwrap()
    }

    fn key(byte: u8) -> MacKey {
        MacKey::new(vec![byte; KEY_LEN])
    }

    fn two_org_world() -> (OrgRegistry, OrgRegistry, UserAgent) {
        let id_uni = id("org.university.students", "student-no-4711");
        let id_fin = id("org.finmin.vat", "vat-el-99887766");
        let mut university = OrgRegistry::new("university");
        university.add_subject("alice", id_uni.clone());
        let mut finmin = OrgRegistry::new("finmin");
        finmin.add_subject("alice", id_fin.clone());
        finmin.set_attribute("alice", "annual_income", AttrValue::Int(12000));
        let agent = UserAgent::new(
            "alice",
            vec![
                ("university".to_owned(), id_uni),
                ("finmin".to_owned(), id_fin),
            ],
        );
        (university, finmin, agent)
    }

    #[test]
    fn honest_registration_is_accepted() {
        let (mut university, _, mut agent) = two_org_world();
        let p = agent
            .create_pseudonym("university", HashSuite::Classical256, key(1))
            .unwrap();
        let proof = agent.prove_for_org("university", "university").unwrap();
        assert_eq!(
            university.register("alice", &p, &proof),
            RegisterOutcome::Accepted
        );
        assert!(university.registration(&p).is_some());
    }

    #[test]
    fn replayed_registration_is_rejected() {
        let (mut university, _, mut agent) = two_org_world();
        let p = agent
            .create_pseudonym("university", HashSuite::Classical256, key(1))
            .unwrap();
        let proof = agent.prove_for_org("university", "university").unwrap();
        university.register("alice", &p, &proof);
        assert_eq!(
            university.register("alice", &p, &proof),
            RegisterOutcome::Rejected(RegisterReject::AlreadyRegistered)
        );
    }

    #[test]
    fn unknown_subject_is_rejected() {
        let (mut university, _, mut agent) = two_org_world();
        let p = agent
            .create_pseudonym("university", HashSuite::Classical256, key(1))
            .unwrap();
        let proof = agent.prove_for_org("university", "university").unwrap();
        assert_eq!(
            university.register("mallory", &p, &proof),
            RegisterOutcome::Rejected(RegisterReject::UnknownSubject)
        );
    }

    #[test]
    fn tree_lacking_org_identifier_is_rejected() {
        // A tree built without the university's identifier cannot produce
        // an accepted registration there, whatever index is proven.
        let (mut university, _, _) = two_org_world();
        let stranger_tree = PseudonymTree::build(
            HashSuite::Classical256,
            key(3),
            vec![id("org.finmin.vat", "vat-el-99887766"), id("org.other", "x")],
        )
        .unwrap();
        let p = stranger_tree.root();
        for index in 0..2 {
            let proof = prove(&stranger_tree, index).unwrap();
            assert_eq!(
                university.register("alice", &p, &proof),
                RegisterOutcome::Rejected(RegisterReject::BadProof)
            );
        }
    }

    #[test]
    fn cross_prove_uses_own_identifier_only() {
        // The university accepts the finmin pseudonym when given the path
        // for the student number; the VAT-side path is useless to it.
        let (mut university, _, mut agent) = two_org_world();
        let p_fin = agent
            .create_pseudonym("finmin", HashSuite::Classical256, key(2))
            .unwrap();
        let student_path = agent.prove_for_org("finmin", "university").unwrap();
        assert_eq!(
            university.register("alice", &p_fin, &student_path),
            RegisterOutcome::Accepted
        );

        let mut fresh_university = OrgRegistry::new("university");
        fresh_university.add_subject("alice", id("org.university.students", "student-no-4711"));
        let vat_path = agent.prove_for_org("finmin", "finmin").unwrap();
        assert_eq!(
            fresh_university.register("alice", &p_fin, &vat_path),
            RegisterOutcome::Rejected(RegisterReject::BadProof)
        );
    }

    #[test]
    fn cross_prove_links_foreign_pseudonym() {
        let (mut university, mut finmin, mut agent) = two_org_world();
        agent
            .create_pseudonym("finmin", HashSuite::Classical256, key(2))
            .unwrap();
        let (p, _, outcome) = cross_prove(&agent, &mut finmin, "finmin").unwrap();
        assert_eq!(outcome, RegisterOutcome::Accepted);
        // Same pseudonym, proven cross-context to the university.
        let (p2, proof, outcome) = cross_prove(&agent, &mut university, "finmin").unwrap();
        assert_eq!(outcome, RegisterOutcome::Accepted);
        assert_eq!(p, p2);
        assert_eq!(proof.identifier_index, 0, "university identifier is first");
        assert_eq!(university.registration(&p).unwrap().subject, "alice");
    }

    #[test]
    fn threshold_query_semantics() {
        let (_, mut finmin, mut agent) = two_org_world();
        let p = agent
            .create_pseudonym("finmin", HashSuite::Classical256, key(2))
            .unwrap();
        let proof = agent.prove_for_org("finmin", "finmin").unwrap();
        assert_eq!(finmin.register("alice", &p, &proof), RegisterOutcome::Accepted);

        assert_eq!(finmin.threshold_query(&p, "annual_income", 10_000), QueryOutcome::Above);
        // Boundary: equal is not strictly above.
        assert_eq!(
            finmin.threshold_query(&p, "annual_income", 12_000),
            QueryOutcome::AtOrBelow
        );
        assert_eq!(
            finmin.threshold_query(&p, "shoe_size", 40),
            QueryOutcome::Refused(QueryRefusal::UnknownAttribute)
        );

        let unknown = Pseudonym {
            suite: HashSuite::Classical256,
            leaf_count: 4,
            root: HashSuite::Classical256.hash(b"nobody"),
        };
        assert_eq!(
            finmin.threshold_query(&unknown, "annual_income", 10_000),
            QueryOutcome::Refused(QueryRefusal::UnknownPseudonym)
        );
    }

    #[test]
    fn empty_scenario_yields_empty_transcript() {
        let scenario = parse_scenario(r#"{"orgs":[],"subjects":[],"steps":[]}"#).unwrap();
        let run = run_scenario(&scenario).unwrap();
        assert!(run.transcript.events.is_empty());
        assert_eq!(run.transcript.to_jsonl(), "");
        run.leakage_audit().unwrap();
    }

    #[test]
    fn scenario_is_deterministic() {
        let json = r#"{
            "seed": 7,
            "orgs": ["a", "b"],
            "subjects": [{
                "handle": "u",
                "identifiers": [
                    {"org": "a", "domain": "org.a", "attributes": ["id-at-a"]},
                    {"org": "b", "domain": "org.b", "attributes": ["id-at-b"]}
                ]
            }],
            "steps": [
                {"op": "create_pseudonym", "subject": "u", "context": "a"},
                {"op": "register", "subject": "u", "org": "a", "context": "a"},
                {"op": "expect", "outcome": "accepted"}
            ]
        }"#;
        let t1 = run_scenario(&parse_scenario(json).unwrap()).unwrap();
        let t2 = run_scenario(&parse_scenario(json).unwrap()).unwrap();
        assert_eq!(t1.transcript.to_jsonl(), t2.transcript.to_jsonl());
        assert!(!t1.transcript.to_jsonl().is_empty());
    }

    #[test]
    fn no_cross_prove_means_no_shared_pseudonyms() {
        let json = r#"{
            "seed": 9,
            "orgs": ["a", "b"],
            "subjects": [{
                "handle": "u",
                "identifiers": [
                    {"org": "a", "domain": "org.a", "attributes": ["id-at-a"]},
                    {"org": "b", "domain": "org.b", "attributes": ["id-at-b"]}
                ]
            }],
            "steps": [
                {"op": "create_pseudonym", "subject": "u", "context": "a"},
                {"op": "register", "subject": "u", "org": "a", "context": "a"},
                {"op": "expect", "outcome": "accepted"},
                {"op": "create_pseudonym", "subject": "u", "context": "b"},
                {"op": "register", "subject": "u", "org": "b", "context": "b"},
                {"op": "expect", "outcome": "accepted"}
            ]
        }"#;
        let run = run_scenario(&parse_scenario(json).unwrap()).unwrap();
        let a: BTreeSet<_> = run.orgs["a"].registered_pseudonyms().collect();
        let b: BTreeSet<_> = run.orgs["b"].registered_pseudonyms().collect();
        assert_eq!(a.len(), 1);
        assert_eq!(b.len(), 1);
        assert!(a.intersection(&b).next().is_none());
        run.leakage_audit().unwrap();
    }

    #[test]
    fn expect_mismatch_fails_with_step_index() {
        let json = r#"{
            "orgs": ["a"],
            "subjects": [{
                "handle": "u",
                "identifiers": [{"org": "a", "domain": "org.a", "attributes": ["id-at-a"]}]
            }],
            "steps": [
                {"op": "create_pseudonym", "subject": "u", "context": "a"},
                {"op": "expect", "outcome": "rejected:bad_proof"}
            ]
        }"#;
        let err = run_scenario(&parse_scenario(json).unwrap()).unwrap_err();
        assert_eq!(err.step, Some(1));
    }

    #[test]
    fn bad_references_fail_with_step_index() {
        let json = r#"{
            "orgs": ["a"],
            "subjects": [],
            "steps": [{"op": "create_pseudonym", "subject": "ghost", "context": "a"}]
        }"#;
        let err = run_scenario(&parse_scenario(json).unwrap()).unwrap_err();
        assert_eq!(err.step, Some(0));

        let bad_decl = r#"{
            "orgs": [],
            "subjects": [{
                "handle": "u",
                "identifiers": [{"org": "ghost", "domain": "d", "attributes": ["x"]}]
            }],
            "steps": []
        }"#;
        let err = run_scenario(&parse_scenario(bad_decl).unwrap()).unwrap_err();
        assert_eq!(err.step, None);
    }

    #[test]
    fn registration_soundness_is_stored() {
        let (mut university, _, mut agent) = two_org_world();
        let p = agent
            .create_pseudonym("university", HashSuite::Classical256, key(1))
            .unwrap();
        let proof = agent.prove_for_org("university", "university").unwrap();
        university.register("alice", &p, &proof);
        let stored = university.registration(&p).unwrap();
        let own = university.identifier_for(&stored.subject).unwrap();
        assert_eq!(proof::verify(&p, own, &stored.proof), Verdict::Accept);
    }
}
