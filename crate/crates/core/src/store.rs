//! Content-addressed, access-controlled contribution store with a full
//! provenance chronology.
//!
//! Everything shareable — datasets, processors, models, hypotheses, flow
//! definitions, results, experiments — is a [`Contribution`]: identified by a
//! `fracti://` URI plus the SHA-256 of its payload bytes, classified by
//! [`ContributionKind`], guarded by an [`AccessPolicy`], and chronicled by an
//! append-only sequence of [`ProvenanceRecord`]s ordered by a store-wide
//! monotonic counter (wall clock is recorded but informational).
//!
//! On-disk layout under the store root (`$FRACTI_HOME`, default `./.fracti`):
//!
//! ```text
//! objects/<first2-hex>/<hash>     payload bytes
//! refs/<namespace>/<name>@<ver>   content hash for the uri
//! provenance.log                  one canonical-text record per line
//! principals                      canonical-text table
//! policies                        canonical-text table (kind + access policy)
//! snapshots.log                   configuration snapshots (see metamodel)
//! executions.log                  execution records (see metamodel)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::canonical::{self, digest_bytes, Value};
use crate::metamodel::{ConfigurationSnapshot, ExecutionRecord};

pub const FRACTI_HOME_ENV: &str = "FRACTI_HOME";
pub const DEFAULT_STORE_DIR: &str = ".fracti";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("malformed uri `{0}`: expected fracti://<namespace>/<name>@<version>")]
    MalformedUri(String),
    #[error("uri `{uri}` already bound to a different payload (existing {existing}, new {new})")]
    UriConflict {
        uri: String,
        existing: String,
        new: String,
    },
    #[error("empty payload rejected")]
    EmptyPayload,
    #[error("unknown principal `{0}`")]
    UnknownPrincipal(String),
    #[error("unknown parent contribution `{0}`")]
    UnknownParent(String),
    #[error("principal `{principal}` denied access to `{uri}`")]
    AccessDenied { principal: String, uri: String },
    #[error("contribution `{0}` not found")]
    NotFound(String),
    #[error("store corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Parsed form of `fracti://<namespace>/<name>@<version>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContributionUri {
    pub namespace: String,
    pub name: String,
    pub version: u64,
}

impl ContributionUri {
    pub fn new(namespace: &str, name: &str, version: u64) -> Result<Self> {
        let uri = Self {
            namespace: namespace.to_string(),
            name: name.to_string(),
            version,
        };
        if !valid_segment(namespace) || !valid_segment(name) || version == 0 {
            return Err(StoreError::MalformedUri(uri.to_string()));
        }
        Ok(uri)
    }
}

impl fmt::Display for ContributionUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fracti://{}/{}@{}", self.namespace, self.name, self.version)
    }
}

impl FromStr for ContributionUri {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || StoreError::MalformedUri(s.to_string());
        let rest = s.strip_prefix("fracti://").ok_or_else(bad)?;
        let (namespace, rest) = rest.split_once('/').ok_or_else(bad)?;
        let (name, version) = rest.rsplit_once('@').ok_or_else(bad)?;
        let version: u64 = version.parse().map_err(|_| bad())?;
        if !valid_segment(namespace) || !valid_segment(name) || version == 0 {
            return Err(bad());
        }
        Ok(Self {
            namespace: namespace.to_string(),
            name: name.to_string(),
            version,
        })
    }
}

/// Identity of a contribution: its uri plus the content hash of its payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContributionId {
    pub uri: ContributionUri,
    pub content_hash: String,
}

impl fmt::Display for ContributionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.uri, self.content_hash)
    }
}

impl FromStr for ContributionId {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        let (uri, hash) = s
            .split_once('#')
            .ok_or_else(|| StoreError::MalformedUri(s.to_string()))?;
        if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()) {
            return Err(StoreError::MalformedUri(s.to_string()));
        }
        Ok(Self {
            uri: uri.parse()?,
            content_hash: hash.to_string(),
        })
    }
}

/// The seven contribution kinds fixed by this engine's taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ContributionKind {
    Dataset,
    Processor,
    Model,
    Hypothesis,
    FlowDefinition,
    Result,
    Experiment,
}

/// The three macro functions contributions serve.
///
/// `Visualization` is reserved for plot contributions, which no fixed kind
/// maps to here (plots are exported as CSV instead).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroFunction {
    Storage,
    Processing,
    Visualization,
}

impl ContributionKind {
    pub const ALL: [ContributionKind; 7] = [
        ContributionKind::Dataset,
        ContributionKind::Processor,
        ContributionKind::Model,
        ContributionKind::Hypothesis,
        ContributionKind::FlowDefinition,
        ContributionKind::Result,
        ContributionKind::Experiment,
    ];

    /// Total, fixed kind → macro-function mapping.
    pub fn macro_function(self) -> MacroFunction {
        match self {
            ContributionKind::Dataset
            | ContributionKind::Result
            | ContributionKind::Hypothesis
            | ContributionKind::Experiment => MacroFunction::Storage,
            ContributionKind::Processor
            | ContributionKind::Model
            | ContributionKind::FlowDefinition => MacroFunction::Processing,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContributionKind::Dataset => "dataset",
            ContributionKind::Processor => "processor",
            ContributionKind::Model => "model",
            ContributionKind::Hypothesis => "hypothesis",
            ContributionKind::FlowDefinition => "flow_definition",
            ContributionKind::Result => "result",
            ContributionKind::Experiment => "experiment",
        }
    }
}

impl FromStr for ContributionKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dataset" => ContributionKind::Dataset,
            "processor" => ContributionKind::Processor,
            "model" => ContributionKind::Model,
            "hypothesis" => ContributionKind::Hypothesis,
            "flow_definition" => ContributionKind::FlowDefinition,
            "result" => ContributionKind::Result,
            "experiment" => ContributionKind::Experiment,
            other => return Err(StoreError::Corrupt(format!("unknown kind `{other}`"))),
        })
    }
}

impl fmt::Display for ContributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub id: String,
    pub display_name: String,
    /// Flagged auditors may read any contribution whose policy opts in.
    pub auditor: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessPolicy {
    pub owner: String,
    pub readers: BTreeSet<String>,
    pub auditor_access: bool,
}

impl AccessPolicy {
    fn owned_by(owner: &str) -> Self {
        Self {
            owner: owner.to_string(),
            readers: BTreeSet::new(),
            auditor_access: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProvenanceEvent {
    Created,
    Derived,
    Transferred,
    ExecutedWith,
}

impl ProvenanceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            ProvenanceEvent::Created => "created",
            ProvenanceEvent::Derived => "derived",
            ProvenanceEvent::Transferred => "transferred",
            ProvenanceEvent::ExecutedWith => "executed_with",
        }
    }
}

impl FromStr for ProvenanceEvent {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "created" => ProvenanceEvent::Created,
            "derived" => ProvenanceEvent::Derived,
            "transferred" => ProvenanceEvent::Transferred,
            "executed_with" => ProvenanceEvent::ExecutedWith,
            other => return Err(StoreError::Corrupt(format!("unknown event `{other}`"))),
        })
    }
}

/// One event in the chronology of a contribution. Ordering is by `seq`, a
/// store-wide gap-free counter; `timestamp_ms` is informational only.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceRecord {
    pub seq: u64,
    pub event: ProvenanceEvent,
    pub timestamp_ms: i64,
    pub principal: String,
    pub subject: ContributionId,
    pub parents: Vec<ContributionId>,
    /// Free-form annotation, e.g. `grant:reader:<id>` or `reproduced:<exec>`.
    pub detail: Option<String>,
}

impl ProvenanceRecord {
    pub fn to_value(&self) -> Value {
        let mut v = Value::map();
        v.set("seq", Value::from(self.seq));
        v.set("event", Value::text(self.event.as_str()));
        v.set("timestamp_ms", Value::from(self.timestamp_ms));
        v.set("principal", Value::text(&self.principal));
        v.set("subject", Value::text(self.subject.to_string()));
        v.set(
            "parents",
            Value::List(
                self.parents
                    .iter()
                    .map(|p| Value::text(p.to_string()))
                    .collect(),
            ),
        );
        if let Some(d) = &self.detail {
            v.set("detail", Value::text(d));
        }
        v
    }

    pub fn from_value(v: &Value) -> Result<Self> {
        let corrupt = |e: canonical::CanonicalError| StoreError::Corrupt(e.to_string());
        let parents = v
            .req_list("parents")
            .map_err(corrupt)?
            .iter()
            .map(|p| {
                p.as_str()
                    .ok_or_else(|| StoreError::Corrupt("parent not a string".into()))
                    .and_then(ContributionId::from_str)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seq: v.req_u64("seq").map_err(corrupt)?,
            event: v.req_str("event").map_err(corrupt)?.parse()?,
            timestamp_ms: v.req_i64("timestamp_ms").map_err(corrupt)?,
            principal: v.req_str("principal").map_err(corrupt)?.to_string(),
            subject: v.req_str("subject").map_err(corrupt)?.parse()?,
            parents,
            detail: v.get("detail").and_then(|d| d.as_str()).map(String::from),
        })
    }
}

/// A full contribution as returned by [`Store::fetch`]. Payload bytes are read
/// from disk at fetch time, so out-of-band tampering is visible to `verify`.
#[derive(Debug, Clone)]
pub struct Contribution {
    pub id: ContributionId,
    pub kind: ContributionKind,
    pub payload: Vec<u8>,
    pub policy: AccessPolicy,
    pub provenance: Vec<ProvenanceRecord>,
}

#[derive(Debug, Clone)]
struct ContributionMeta {
    kind: ContributionKind,
    content_hash: String,
    policy: AccessPolicy,
}

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Single-writer store: all mutations go through `&mut Store`; reads hand out
/// immutable snapshots.
pub struct Store {
    root: PathBuf,
    principals: BTreeMap<String, Principal>,
    meta: BTreeMap<String, ContributionMeta>,
    provenance: Vec<ProvenanceRecord>,
    by_subject: BTreeMap<String, Vec<usize>>,
    snapshots: BTreeMap<String, ConfigurationSnapshot>,
    executions: BTreeMap<String, ExecutionRecord>,
    exec_seq: u64,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("objects"))?;
        fs::create_dir_all(root.join("refs"))?;
        let mut store = Self {
            root,
            principals: BTreeMap::new(),
            meta: BTreeMap::new(),
            provenance: Vec::new(),
            by_subject: BTreeMap::new(),
            snapshots: BTreeMap::new(),
            executions: BTreeMap::new(),
            exec_seq: 0,
        };
        store.load()?;
        Ok(store)
    }

    /// Opens the store named by `$FRACTI_HOME`, defaulting to `./.fracti`.
    pub fn open_env() -> Result<Self> {
        let root = std::env::var(FRACTI_HOME_ENV).unwrap_or_else(|_| DEFAULT_STORE_DIR.to_string());
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn load(&mut self) -> Result<()> {
        if let Ok(text) = fs::read_to_string(self.root.join("principals")) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let v = canonical::parse(line).map_err(|e| StoreError::Corrupt(e.to_string()))?;
                let corrupt = |e: canonical::CanonicalError| StoreError::Corrupt(e.to_string());
                let p = Principal {
                    id: v.req_str("id").map_err(corrupt)?.to_string(),
                    display_name: v.req_str("display_name").map_err(corrupt)?.to_string(),
                    auditor: v.req_bool("auditor").map_err(corrupt)?,
                };
                self.principals.insert(p.id.clone(), p);
            }
        }
        if let Ok(text) = fs::read_to_string(self.root.join("policies")) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let v = canonical::parse(line).map_err(|e| StoreError::Corrupt(e.to_string()))?;
                let corrupt = |e: canonical::CanonicalError| StoreError::Corrupt(e.to_string());
                let uri = v.req_str("uri").map_err(corrupt)?.to_string();
                let readers = v
                    .req_list("readers")
                    .map_err(corrupt)?
                    .iter()
                    .filter_map(|r| r.as_str().map(String::from))
                    .collect();
                let meta = ContributionMeta {
                    kind: v.req_str("kind").map_err(corrupt)?.parse()?,
                    content_hash: v.req_str("hash").map_err(corrupt)?.to_string(),
                    policy: AccessPolicy {
                        owner: v.req_str("owner").map_err(corrupt)?.to_string(),
                        readers,
                        auditor_access: v.req_bool("auditor_access").map_err(corrupt)?,
                    },
                };
                self.meta.insert(uri, meta);
            }
        }
        if let Ok(text) = fs::read_to_string(self.root.join("provenance.log")) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let v = canonical::parse(line).map_err(|e| StoreError::Corrupt(e.to_string()))?;
                let rec = ProvenanceRecord::from_value(&v)?;
                if rec.seq != self.provenance.len() as u64 {
                    return Err(StoreError::Corrupt(format!(
                        "provenance sequence gap at {}",
                        rec.seq
                    )));
                }
                self.by_subject
                    .entry(rec.subject.uri.to_string())
                    .or_default()
                    .push(self.provenance.len());
                self.provenance.push(rec);
            }
        }
        if let Ok(text) = fs::read_to_string(self.root.join("snapshots.log")) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let v = canonical::parse(line).map_err(|e| StoreError::Corrupt(e.to_string()))?;
                let snap = ConfigurationSnapshot::from_value(&v)
                    .map_err(|e| StoreError::Corrupt(e.to_string()))?;
                self.snapshots.insert(snap.id.clone(), snap);
            }
        }
        if let Ok(text) = fs::read_to_string(self.root.join("executions.log")) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let v = canonical::parse(line).map_err(|e| StoreError::Corrupt(e.to_string()))?;
                let rec = ExecutionRecord::from_value(&v)
                    .map_err(|e| StoreError::Corrupt(e.to_string()))?;
                self.exec_seq = self.exec_seq.max(rec.run_seq + 1);
                self.executions.insert(rec.id.clone(), rec);
            }
        }
        Ok(())
    }

    fn save_principals(&self) -> Result<()> {
        let mut out = String::new();
        for p in self.principals.values() {
            let mut v = Value::map();
            v.set("id", Value::text(&p.id));
            v.set("display_name", Value::text(&p.display_name));
            v.set("auditor", Value::from(p.auditor));
            out.push_str(&canonical::render(&v));
            out.push('\n');
        }
        fs::write(self.root.join("principals"), out)?;
        Ok(())
    }

    fn save_policies(&self) -> Result<()> {
        let mut out = String::new();
        for (uri, meta) in &self.meta {
            let mut v = Value::map();
            v.set("uri", Value::text(uri));
            v.set("kind", Value::text(meta.kind.as_str()));
            v.set("hash", Value::text(&meta.content_hash));
            v.set("owner", Value::text(&meta.policy.owner));
            v.set(
                "readers",
                Value::List(meta.policy.readers.iter().map(Value::text).collect()),
            );
            v.set("auditor_access", Value::from(meta.policy.auditor_access));
            out.push_str(&canonical::render(&v));
            out.push('\n');
        }
        fs::write(self.root.join("policies"), out)?;
        Ok(())
    }

    fn append_line(&self, file: &str, line: &str) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(file))?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    fn append_provenance(
        &mut self,
        event: ProvenanceEvent,
        principal: &str,
        subject: ContributionId,
        parents: Vec<ContributionId>,
        detail: Option<String>,
    ) -> Result<()> {
        let rec = ProvenanceRecord {
            seq: self.provenance.len() as u64,
            event,
            timestamp_ms: now_ms(),
            principal: principal.to_string(),
            subject,
            parents,
            detail,
        };
        self.append_line("provenance.log", &canonical::render(&rec.to_value()))?;
        self.by_subject
            .entry(rec.subject.uri.to_string())
            .or_default()
            .push(self.provenance.len());
        self.provenance.push(rec);
        Ok(())
    }

    // ---- principals ----

    pub fn add_principal(&mut self, id: &str, display_name: &str, auditor: bool) -> Result<()> {
        if id.is_empty() {
            return Err(StoreError::UnknownPrincipal(String::new()));
        }
        let p = Principal {
            id: id.to_string(),
            display_name: display_name.to_string(),
            auditor,
        };
        self.principals.insert(id.to_string(), p);
        self.save_principals()
    }

    /// Registers the principal if absent; leaves an existing entry untouched.
    pub fn ensure_principal(&mut self, id: &str) -> Result<()> {
        if self.principals.contains_key(id) {
            return Ok(());
        }
        self.add_principal(id, id, false)
    }

    pub fn principal(&self, id: &str) -> Option<&Principal> {
        self.principals.get(id)
    }

    pub fn principals(&self) -> impl Iterator<Item = &Principal> {
        self.principals.values()
    }

    // ---- object plumbing ----

    fn object_path(&self, hash: &str) -> PathBuf {
        self.root.join("objects").join(&hash[..2]).join(hash)
    }

    fn ref_path(&self, uri: &ContributionUri) -> PathBuf {
        self.root
            .join("refs")
            .join(&uri.namespace)
            .join(format!("{}@{}", uri.name, uri.version))
    }

    fn write_object(&self, hash: &str, payload: &[u8]) -> Result<()> {
        let path = self.object_path(hash);
        if path.exists() {
            return Ok(());
        }
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(path, payload)?;
        Ok(())
    }

    // ---- core operations ----

    /// Registers a fresh contribution. Idempotent over identical
    /// `(uri, payload, kind)`; conflicting payloads for a bound uri are
    /// rejected so versions stay immutable.
    pub fn register(
        &mut self,
        payload: &[u8],
        kind: ContributionKind,
        principal: &str,
        uri: &str,
    ) -> Result<ContributionId> {
        self.put_contribution(payload, kind, principal, uri, None)
    }

    /// Derives a new contribution from existing parents, recording a
    /// `derived` provenance record that preserves parent order. The kind is
    /// inherited from the first parent.
    pub fn derive(
        &mut self,
        parents: &[ContributionId],
        payload: &[u8],
        principal: &str,
        uri: &str,
    ) -> Result<ContributionId> {
        let first = parents
            .first()
            .ok_or_else(|| StoreError::UnknownParent("empty parent list".into()))?;
        let kind = self
            .meta
            .get(&first.uri.to_string())
            .ok_or_else(|| StoreError::UnknownParent(first.to_string()))?
            .kind;
        self.derive_with_kind(parents, payload, kind, principal, uri)
    }

    /// `derive` with an explicit kind for the child.
    pub fn derive_with_kind(
        &mut self,
        parents: &[ContributionId],
        payload: &[u8],
        kind: ContributionKind,
        principal: &str,
        uri: &str,
    ) -> Result<ContributionId> {
        if parents.is_empty() {
            return Err(StoreError::UnknownParent("empty parent list".into()));
        }
        for parent in parents {
            let meta = self
                .meta
                .get(&parent.uri.to_string())
                .ok_or_else(|| StoreError::UnknownParent(parent.to_string()))?;
            if meta.content_hash != parent.content_hash {
                return Err(StoreError::UnknownParent(parent.to_string()));
            }
            self.check_read(&meta.policy, principal, &parent.uri.to_string())?;
        }
        self.put_contribution(payload, kind, principal, uri, Some(parents))
    }

    fn put_contribution(
        &mut self,
        payload: &[u8],
        kind: ContributionKind,
        principal: &str,
        uri: &str,
        parents: Option<&[ContributionId]>,
    ) -> Result<ContributionId> {
        let uri: ContributionUri = uri.parse()?;
        if payload.is_empty() {
            return Err(StoreError::EmptyPayload);
        }
        if !self.principals.contains_key(principal) {
            return Err(StoreError::UnknownPrincipal(principal.to_string()));
        }
        let hash = digest_bytes(payload);
        let uri_key = uri.to_string();
        if let Some(existing) = self.meta.get(&uri_key) {
            if existing.content_hash == hash && existing.kind == kind {
                // idempotent re-registration: same id, no new provenance
                return Ok(ContributionId {
                    uri,
                    content_hash: hash,
                });
            }
            return Err(StoreError::UriConflict {
                uri: uri_key,
                existing: format!("{}:{}", existing.kind, existing.content_hash),
                new: format!("{}:{}", kind, hash),
            });
        }

        self.write_object(&hash, payload)?;
        let ref_path = self.ref_path(&uri);
        fs::create_dir_all(ref_path.parent().unwrap())?;
        fs::write(ref_path, format!("{hash}\n"))?;

        self.meta.insert(
            uri_key,
            ContributionMeta {
                kind,
                content_hash: hash.clone(),
                policy: AccessPolicy::owned_by(principal),
            },
        );
        self.save_policies()?;

        let id = ContributionId {
            uri,
            content_hash: hash,
        };
        match parents {
            None => {
                self.append_provenance(ProvenanceEvent::Created, principal, id.clone(), vec![], None)?
            }
            Some(ps) => self.append_provenance(
                ProvenanceEvent::Derived,
                principal,
                id.clone(),
                ps.to_vec(),
                None,
            )?,
        }
        Ok(id)
    }

    fn check_read(&self, policy: &AccessPolicy, principal: &str, uri: &str) -> Result<()> {
        if policy.owner == principal || policy.readers.contains(principal) {
            return Ok(());
        }
        if policy.auditor_access {
            if let Some(p) = self.principals.get(principal) {
                if p.auditor {
                    return Ok(());
                }
            }
        }
        Err(StoreError::AccessDenied {
            principal: principal.to_string(),
            uri: uri.to_string(),
        })
    }

    /// Resolves a uri to the id it is currently bound to.
    pub fn resolve(&self, uri: &str) -> Result<ContributionId> {
        let parsed: ContributionUri = uri.parse()?;
        let meta = self
            .meta
            .get(&parsed.to_string())
            .ok_or_else(|| StoreError::NotFound(uri.to_string()))?;
        Ok(ContributionId {
            uri: parsed,
            content_hash: meta.content_hash.clone(),
        })
    }

    pub fn exists(&self, id: &ContributionId) -> bool {
        self.meta
            .get(&id.uri.to_string())
            .is_some_and(|m| m.content_hash == id.content_hash)
    }

    pub fn kind_of(&self, id: &ContributionId) -> Result<ContributionKind> {
        self.meta
            .get(&id.uri.to_string())
            .filter(|m| m.content_hash == id.content_hash)
            .map(|m| m.kind)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    /// Fetches the full contribution if `principal` is the owner, a reader,
    /// or a flagged auditor on a policy that grants auditor access.
    pub fn fetch(&self, id: &ContributionId, principal: &str) -> Result<Contribution> {
        let uri_key = id.uri.to_string();
        let meta = self
            .meta
            .get(&uri_key)
            .filter(|m| m.content_hash == id.content_hash)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        self.check_read(&meta.policy, principal, &uri_key)?;
        let payload = fs::read(self.object_path(&id.content_hash))
            .map_err(|_| StoreError::NotFound(format!("payload bytes for {id}")))?;
        Ok(Contribution {
            id: id.clone(),
            kind: meta.kind,
            payload,
            policy: meta.policy.clone(),
            provenance: self.chain(id)?,
        })
    }

    /// True iff the digest recomputed from the stored payload bytes equals the
    /// id's content hash. A missing or unreadable payload is a failed check,
    /// not an error.
    pub fn verify(&self, id: &ContributionId) -> Result<bool> {
        if !self.exists(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        match fs::read(self.object_path(&id.content_hash)) {
            Ok(bytes) => Ok(digest_bytes(&bytes) == id.content_hash),
            Err(_) => Ok(false),
        }
    }

    /// The subject's own provenance records, root-first. Ancestor traversal
    /// lives in `metamodel::lineage`.
    pub fn chain(&self, id: &ContributionId) -> Result<Vec<ProvenanceRecord>> {
        if !self.exists(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Ok(self
            .by_subject
            .get(&id.uri.to_string())
            .map(|idxs| idxs.iter().map(|&i| self.provenance[i].clone()).collect())
            .unwrap_or_default())
    }

    /// Grants read access; only the owner may grant. Re-granting an existing
    /// reader is a no-op that appends no provenance.
    pub fn grant(
        &mut self,
        id: &ContributionId,
        owner: &str,
        grantee: &str,
    ) -> Result<AccessPolicy> {
        let uri_key = id.uri.to_string();
        if !self.exists(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        if !self.principals.contains_key(grantee) {
            return Err(StoreError::UnknownPrincipal(grantee.to_string()));
        }
        let meta = self.meta.get_mut(&uri_key).unwrap();
        if meta.policy.owner != owner {
            return Err(StoreError::AccessDenied {
                principal: owner.to_string(),
                uri: uri_key,
            });
        }
        if !meta.policy.readers.insert(grantee.to_string()) {
            return Ok(meta.policy.clone());
        }
        let policy = meta.policy.clone();
        self.save_policies()?;
        self.append_provenance(
            ProvenanceEvent::Transferred,
            owner,
            id.clone(),
            vec![],
            Some(format!("grant:reader:{grantee}")),
        )?;
        Ok(policy)
    }

    /// Toggles the auditor-access flag; only the owner may change it.
    pub fn set_auditor_access(
        &mut self,
        id: &ContributionId,
        owner: &str,
        on: bool,
    ) -> Result<AccessPolicy> {
        let uri_key = id.uri.to_string();
        if !self.exists(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let meta = self.meta.get_mut(&uri_key).unwrap();
        if meta.policy.owner != owner {
            return Err(StoreError::AccessDenied {
                principal: owner.to_string(),
                uri: uri_key,
            });
        }
        meta.policy.auditor_access = on;
        let policy = meta.policy.clone();
        self.save_policies()?;
        Ok(policy)
    }

    /// Appends an `executed_with` record linking outputs of a reproduction to
    /// the inputs it was re-executed against.
    pub fn record_executed_with(
        &mut self,
        subject: &ContributionId,
        parents: Vec<ContributionId>,
        principal: &str,
        detail: String,
    ) -> Result<()> {
        if !self.exists(subject) {
            return Err(StoreError::NotFound(subject.to_string()));
        }
        self.append_provenance(
            ProvenanceEvent::ExecutedWith,
            principal,
            subject.clone(),
            parents,
            Some(detail),
        )
    }

    pub fn contribution_ids(&self) -> impl Iterator<Item = ContributionId> + '_ {
        self.meta.iter().map(|(uri, m)| ContributionId {
            uri: uri.parse().expect("stored uris are well-formed"),
            content_hash: m.content_hash.clone(),
        })
    }

    pub fn provenance_log(&self) -> &[ProvenanceRecord] {
        &self.provenance
    }

    pub fn policy_of(&self, id: &ContributionId) -> Result<AccessPolicy> {
        self.meta
            .get(&id.uri.to_string())
            .filter(|m| m.content_hash == id.content_hash)
            .map(|m| m.policy.clone())
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    // ---- metamodel persistence (snapshots and execution records) ----

    pub fn put_snapshot(&mut self, snap: ConfigurationSnapshot) -> Result<()> {
        if self.snapshots.contains_key(&snap.id) {
            return Ok(());
        }
        self.append_line("snapshots.log", &canonical::render(&snap.to_value()))?;
        self.snapshots.insert(snap.id.clone(), snap);
        Ok(())
    }

    pub fn get_snapshot(&self, id: &str) -> Option<&ConfigurationSnapshot> {
        self.snapshots.get(id)
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &ConfigurationSnapshot> {
        self.snapshots.values()
    }

    pub fn next_run_seq(&mut self) -> u64 {
        let seq = self.exec_seq;
        self.exec_seq += 1;
        seq
    }

    pub fn put_execution(&mut self, rec: ExecutionRecord) -> Result<()> {
        if self.executions.contains_key(&rec.id) {
            return Ok(());
        }
        self.exec_seq = self.exec_seq.max(rec.run_seq + 1);
        self.append_line("executions.log", &canonical::render(&rec.to_value()))?;
        self.executions.insert(rec.id.clone(), rec);
        Ok(())
    }

    pub fn get_execution(&self, id: &str) -> Option<&ExecutionRecord> {
        self.executions.get(id)
    }

    pub fn executions(&self) -> impl Iterator<Item = &ExecutionRecord> {
        self.executions.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn store() -> (TempDir, Store) {
        let dir = TempDir::new().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        s.add_principal("a", "Researcher A", false).unwrap();
        s.add_principal("b", "Researcher B", false).unwrap();
        s.add_principal("aud", "Market Authority", true).unwrap();
        (dir, s)
    }

    #[test]
    fn uri_parsing_and_display() {
        let uri: ContributionUri = "fracti://a/prices@1".parse().unwrap();
        assert_eq!(uri.namespace, "a");
        assert_eq!(uri.name, "prices");
        assert_eq!(uri.version, 1);
        assert_eq!(uri.to_string(), "fracti://a/prices@1");

        for bad in [
            "http://a/b@1",
            "fracti://a/b@0",
            "fracti://a/b",
            "fracti:///b@1",
            "fracti://a/@1",
            "fracti://a b/c@1",
        ] {
            assert!(bad.parse::<ContributionUri>().is_err(), "{bad}");
        }
    }

    #[test]
    fn kind_macro_function_mapping_is_total() {
        use ContributionKind::*;
        for kind in ContributionKind::ALL {
            let mf = kind.macro_function();
            match kind {
                Dataset | Result | Hypothesis | Experiment => {
                    assert_eq!(mf, MacroFunction::Storage)
                }
                Processor | Model | FlowDefinition => assert_eq!(mf, MacroFunction::Processing),
            }
        }
    }

    #[test]
    fn register_hashes_payload_and_creates_single_record() {
        let (_d, mut s) = store();
        let id = s
            .register(b"1,2,3", ContributionKind::Dataset, "a", "fracti://a/prices@1")
            .unwrap();
        assert_eq!(id.content_hash, digest_bytes(b"1,2,3"));
        let chain = s.chain(&id).unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain[0].event, ProvenanceEvent::Created);
        assert!(chain[0].parents.is_empty());
    }

    #[test]
    fn register_is_idempotent_over_identical_uri_and_payload() {
        let (_d, mut s) = store();
        let id1 = s
            .register(b"1,2,3", ContributionKind::Dataset, "a", "fracti://a/prices@1")
            .unwrap();
        let id2 = s
            .register(b"1,2,3", ContributionKind::Dataset, "a", "fracti://a/prices@1")
            .unwrap();
        assert_eq!(id1, id2);
        assert_eq!(s.chain(&id1).unwrap().len(), 1);
    }

    #[test]
    fn register_rejects_conflicting_payload_for_bound_uri() {
        let (_d, mut s) = store();
        s.register(b"1,2,3", ContributionKind::Dataset, "a", "fracti://a/prices@1")
            .unwrap();
        let err = s
            .register(b"4,5,6", ContributionKind::Dataset, "a", "fracti://a/prices@1")
            .unwrap_err();
        assert!(matches!(err, StoreError::UriConflict { .. }));
    }

    #[test]
    fn register_rejects_empty_payload_and_bad_uri() {
        let (_d, mut s) = store();
        assert!(matches!(
            s.register(b"", ContributionKind::Dataset, "a", "fracti://a/x@1"),
            Err(StoreError::EmptyPayload)
        ));
        assert!(matches!(
            s.register(b"x", ContributionKind::Dataset, "a", "not-a-uri"),
            Err(StoreError::MalformedUri(_))
        ));
        assert!(matches!(
            s.register(b"x", ContributionKind::Dataset, "ghost", "fracti://a/x@1"),
            Err(StoreError::UnknownPrincipal(_))
        ));
    }

    #[test]
    fn two_hypotheses_get_distinct_ids() {
        let (_d, mut s) = store();
        let h = s
            .register(
                b"H: adaptive step learns fastest",
                ContributionKind::Hypothesis,
                "a",
                "fracti://a/h@1",
            )
            .unwrap();
        let h0 = s
            .register(
                b"H0: no method difference",
                ContributionKind::Hypothesis,
                "a",
                "fracti://a/h0@1",
            )
            .unwrap();
        assert_ne!(h, h0);
        assert_eq!(s.kind_of(&h).unwrap(), ContributionKind::Hypothesis);
        assert_eq!(s.kind_of(&h0).unwrap(), ContributionKind::Hypothesis);
    }

    #[test]
    fn derive_preserves_parent_order_and_rejects_empty_parents() {
        let (_d, mut s) = store();
        let x = s
            .register(b"x", ContributionKind::Dataset, "a", "fracti://a/x@1")
            .unwrap();
        let y = s
            .register(b"y", ContributionKind::Dataset, "a", "fracti://a/y@1")
            .unwrap();
        let child = s
            .derive(&[x.clone(), y.clone()], b"xy", "a", "fracti://a/xy@1")
            .unwrap();
        let chain = s.chain(&child).unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain[0].event, ProvenanceEvent::Derived);
        assert_eq!(chain[0].parents, vec![x, y]);

        assert!(matches!(
            s.derive(&[], b"z", "a", "fracti://a/z@1"),
            Err(StoreError::UnknownParent(_))
        ));
    }

    #[test]
    fn derive_requires_readable_parents() {
        let (_d, mut s) = store();
        let x = s
            .register(b"x", ContributionKind::Model, "a", "fracti://a/m@1")
            .unwrap();
        let err = s.derive(&[x.clone()], b"m2", "b", "fracti://b/m@2").unwrap_err();
        assert!(matches!(err, StoreError::AccessDenied { .. }));
        s.grant(&x, "a", "b").unwrap();
        let child = s.derive(&[x.clone()], b"m2", "b", "fracti://b/m@2").unwrap();
        assert_eq!(s.kind_of(&child).unwrap(), ContributionKind::Model);
    }

    #[test]
    fn access_soundness_over_all_role_flag_combinations() {
        // roles: owner, reader, auditor-principal, stranger  x  auditor_access flag
        for auditor_access in [false, true] {
            let (_d, mut s) = store();
            let id = s
                .register(b"p", ContributionKind::Dataset, "a", "fracti://a/p@1")
                .unwrap();
            s.grant(&id, "a", "b").unwrap();
            s.set_auditor_access(&id, "a", auditor_access).unwrap();
            s.add_principal("stranger", "Outsider", false).unwrap();

            assert!(s.fetch(&id, "a").is_ok(), "owner always reads");
            assert!(s.fetch(&id, "b").is_ok(), "reader always reads");
            assert_eq!(
                s.fetch(&id, "aud").is_ok(),
                auditor_access,
                "auditor reads iff flag set"
            );
            assert!(
                matches!(s.fetch(&id, "stranger"), Err(StoreError::AccessDenied { .. })),
                "stranger never reads"
            );
        }
    }

    #[test]
    fn grant_twice_appends_single_transfer_record() {
        let (_d, mut s) = store();
        let id = s
            .register(b"p", ContributionKind::Dataset, "a", "fracti://a/p@1")
            .unwrap();
        let before = s.chain(&id).unwrap().len();
        let p1 = s.grant(&id, "a", "b").unwrap();
        let p2 = s.grant(&id, "a", "b").unwrap();
        assert_eq!(p1.readers, p2.readers);
        let chain = s.chain(&id).unwrap();
        assert_eq!(chain.len(), before + 1);
        assert_eq!(chain.last().unwrap().event, ProvenanceEvent::Transferred);
        assert_eq!(
            chain.last().unwrap().detail.as_deref(),
            Some("grant:reader:b")
        );
    }

    #[test]
    fn non_owner_cannot_grant() {
        let (_d, mut s) = store();
        let id = s
            .register(b"p", ContributionKind::Dataset, "a", "fracti://a/p@1")
            .unwrap();
        assert!(matches!(
            s.grant(&id, "b", "aud"),
            Err(StoreError::AccessDenied { .. })
        ));
    }

    #[test]
    fn verify_detects_out_of_band_tampering() {
        let (dir, mut s) = store();
        let id = s
            .register(b"pristine", ContributionKind::Dataset, "a", "fracti://a/p@1")
            .unwrap();
        assert!(s.verify(&id).unwrap());

        let obj = dir
            .path()
            .join("objects")
            .join(&id.content_hash[..2])
            .join(&id.content_hash);
        fs::write(&obj, b"tampered").unwrap();
        assert!(!s.verify(&id).unwrap());
    }

    #[test]
    fn provenance_sequence_is_gap_free_and_monotonic_per_subject() {
        let (_d, mut s) = store();
        let x = s
            .register(b"x", ContributionKind::Dataset, "a", "fracti://a/x@1")
            .unwrap();
        let y = s
            .register(b"y", ContributionKind::Dataset, "a", "fracti://a/y@1")
            .unwrap();
        s.grant(&x, "a", "b").unwrap();
        s.grant(&y, "a", "b").unwrap();

        let log = s.provenance_log();
        for (i, rec) in log.iter().enumerate() {
            assert_eq!(rec.seq, i as u64, "store-wide counter is gap-free");
        }
        for id in [&x, &y] {
            let chain = s.chain(id).unwrap();
            for pair in chain.windows(2) {
                assert!(pair[0].seq < pair[1].seq);
            }
        }
    }

    #[test]
    fn store_reloads_from_disk() {
        let dir = TempDir::new().unwrap();
        let id = {
            let mut s = Store::open(dir.path()).unwrap();
            s.add_principal("a", "A", false).unwrap();
            let id = s
                .register(b"persisted", ContributionKind::Dataset, "a", "fracti://a/p@3")
                .unwrap();
            s.grant(&id, "a", "a").ok();
            id
        };
        let s = Store::open(dir.path()).unwrap();
        assert!(s.exists(&id));
        assert!(s.verify(&id).unwrap());
        let fetched = s.fetch(&id, "a").unwrap();
        assert_eq!(fetched.payload, b"persisted");
        assert_eq!(fetched.kind, ContributionKind::Dataset);
        assert_eq!(fetched.provenance.len(), 1);
    }
}
