//! Append-only preference dataset on disk.
//!
//! ```text
//! <root>/records.jsonl       one PreferenceRecord per line
//! <root>/manifest.json       counts, blob digests, config snapshot, log checksum
//! <root>/blobs/ab/ab…ef.png  images addressed by SHA-256
//! ```
//!
//! Records are appended with a single `O_APPEND` write followed by
//! `fsync`, so readers never observe a partial line from a completed append.
//! The manifest is replaced by write-then-rename after each append.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use synthalign_core::seeding::content_digest;
use synthalign_core::selection::{same_scale, AttributeScores};

pub const SCHEMA_VERSION: u32 = 1;
pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOBS_DIR: &str = "blobs";

/// Sample sizes at which topic drift is checked.
pub const DRIFT_CHECK_MIN: usize = 1000;
pub const DRIFT_TOLERANCE_PP: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("prompt {prompt_id} already stored for pipeline version {pipeline_version}")]
    Duplicate {
        prompt_id: String,
        pipeline_version: String,
    },
    #[error("record rejected: {0}")]
    Invariant(String),
    #[error("store is inconsistent: {0}; run `synthalign validate` for details")]
    Corrupt(String),
    #[error("store fails validation with {violations} violation(s); run `synthalign validate` for details")]
    Invalid { violations: usize },
    #[error("{0}")]
    Domain(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateScore {
    pub responder_id: String,
    pub scalar: f64,
    pub attributes: AttributeScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageProvenance {
    pub guidance_scale: f64,
    /// `(guidance_scale, score)` for every configured scale, ascending.
    pub all_image_scores: Vec<(f64, f64)>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceRecord {
    pub record_id: u64,
    pub prompt_id: String,
    pub t2i_prompt: String,
    pub topic: String,
    pub instruction: String,
    pub image_digest: String,
    /// Relative to the store root.
    pub image_path: String,
    pub chosen_text: String,
    pub rejected_text: String,
    pub chosen_scalar: f64,
    pub rejected_scalar: f64,
    pub chosen_attributes: AttributeScores,
    pub rejected_attributes: AttributeScores,
    pub all_candidate_scores: Vec<CandidateScore>,
    pub image_provenance: ImageProvenance,
    /// Responders asked, in configured order.
    pub responder_ids: Vec<String>,
    pub created_at: String,
    pub pipeline_version: String,
    pub chosen_responder_id: String,
    pub rejected_responder_id: String,
    pub instruction_used_image: bool,
    pub scorer_saw_image: bool,
}

/// What a store is created for; fixed for its lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSpec {
    pub guidance_scales: Vec<f64>,
    pub topics: Vec<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub record_count: u64,
    pub topic_counts: BTreeMap<String, u64>,
    pub blob_digests: BTreeSet<String>,
    pub guidance_scales: Vec<f64>,
    pub topics: Vec<String>,
    pub config: serde_json::Value,
    /// `sha256:` digest of the full record log.
    pub log_checksum: String,
}

impl Manifest {
    fn empty(spec: &StoreSpec) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            record_count: 0,
            topic_counts: BTreeMap::new(),
            blob_digests: BTreeSet::new(),
            guidance_scales: spec.guidance_scales.clone(),
            topics: spec.topics.clone(),
            config: spec.config.clone(),
            log_checksum: content_digest(b""),
        }
    }

    pub fn spec(&self) -> StoreSpec {
        StoreSpec {
            guidance_scales: self.guidance_scales.clone(),
            topics: self.topics.clone(),
            config: self.config.clone(),
        }
    }
}

/// `blobs/<first two hex>/<hex>.png` for a `sha256:<hex>` digest.
pub fn blob_rel_path(digest: &str) -> Option<String> {
    let hex = digest.strip_prefix("sha256:")?;
    if hex.len() != 64 || !hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return None;
    }
    Some(format!("{BLOBS_DIR}/{}/{hex}.png", &hex[..2]))
}

/// Checks the invariants a single record must satisfy in a store with the
/// given scales and topics.
pub fn check_record(rec: &PreferenceRecord, scales: &[f64], topics: &[String]) -> Result<(), String> {
    if rec.prompt_id.is_empty() {
        return Err("prompt_id is empty".into());
    }
    if !topics.contains(&rec.topic) {
        return Err(format!("topic {:?} is not configured", rec.topic));
    }
    if rec.instruction.trim().is_empty() || rec.chosen_text.is_empty() || rec.rejected_text.is_empty() {
        return Err("instruction and response texts must be non-empty".into());
    }
    if !(rec.chosen_scalar.is_finite() && rec.rejected_scalar.is_finite()) {
        return Err("scalars must be finite".into());
    }
    if rec.chosen_scalar <= rec.rejected_scalar {
        return Err(format!(
            "chosen_scalar {} is not greater than rejected_scalar {}",
            rec.chosen_scalar, rec.rejected_scalar
        ));
    }
    if rec.all_candidate_scores.len() < 2 {
        return Err("fewer than 2 candidate scores".into());
    }
    let max = rec.all_candidate_scores.iter().map(|c| c.scalar).fold(f64::NEG_INFINITY, f64::max);
    let min = rec.all_candidate_scores.iter().map(|c| c.scalar).fold(f64::INFINITY, f64::min);
    if max != rec.chosen_scalar || min != rec.rejected_scalar {
        return Err("chosen/rejected scalars are not the candidate max/min".into());
    }
    let by_id = |id: &str| rec.all_candidate_scores.iter().find(|c| c.responder_id == id);
    match (by_id(&rec.chosen_responder_id), by_id(&rec.rejected_responder_id)) {
        (Some(c), Some(r)) if c.scalar == rec.chosen_scalar && r.scalar == rec.rejected_scalar => {}
        _ => return Err("chosen/rejected responder ids do not match the candidate scores".into()),
    }
    if rec
        .all_candidate_scores
        .iter()
        .any(|c| !rec.responder_ids.contains(&c.responder_id))
    {
        return Err("candidate from a responder not listed in responder_ids".into());
    }
    let p = &rec.image_provenance;
    if p.all_image_scores.len() != scales.len()
        || !scales
            .iter()
            .all(|s| p.all_image_scores.iter().any(|(g, _)| same_scale(*g, *s)))
    {
        return Err("all_image_scores needs exactly one entry per configured scale".into());
    }
    if p.all_image_scores.iter().any(|(_, v)| !v.is_finite()) {
        return Err("non-finite image score".into());
    }
    if !scales.iter().any(|s| same_scale(*s, p.guidance_scale)) {
        return Err(format!("winning scale {} is not configured", p.guidance_scale));
    }
    match blob_rel_path(&rec.image_digest) {
        Some(rel) if rel == rec.image_path => Ok(()),
        Some(_) => Err("image_path does not match image_digest".into()),
        None => Err(format!("malformed image_digest {:?}", rec.image_digest)),
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_manifest(root: &Path) -> Result<Manifest, StoreError> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))
}

/// Single-writer handle on a store.
pub struct DatasetStore {
    root: PathBuf,
    manifest: Manifest,
    hasher: Sha256,
    keys: BTreeMap<(String, String), u64>,
}

impl DatasetStore {
    /// Opens the store at `root`, creating it if absent. An existing store
    /// must have been created with the same scales and topics.
    pub fn create_or_open(root: &Path, spec: &StoreSpec) -> Result<Self, StoreError> {
        if root.join(MANIFEST_FILE).exists() {
            let store = Self::open(root)?;
            let m = &store.manifest;
            let same_scales = m.guidance_scales.len() == spec.guidance_scales.len()
                && m.guidance_scales.iter().zip(&spec.guidance_scales).all(|(a, b)| same_scale(*a, *b));
            if !same_scales || m.topics != spec.topics {
                return Err(StoreError::Domain(format!(
                    "{} was created with different guidance scales or topics",
                    root.display()
                )));
            }
            return Ok(store);
        }
        fs::create_dir_all(root.join(BLOBS_DIR)).map_err(io_err(root))?;
        let log = root.join(RECORDS_FILE);
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(io_err(&log))?;
        if fs::metadata(&log).map_err(io_err(&log))?.len() != 0 {
            return Err(StoreError::Corrupt(format!("{} exists without a manifest", log.display())));
        }
        let store = Self {
            root: root.to_path_buf(),
            manifest: Manifest::empty(spec),
            hasher: Sha256::new(),
            keys: BTreeMap::new(),
        };
        store.write_manifest()?;
        Ok(store)
    }

    /// Opens an existing store, checking the log against the manifest.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let manifest = read_manifest(root)?;
        let log = root.join(RECORDS_FILE);
        let bytes = fs::read(&log).map_err(io_err(&log))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        if content_digest(&bytes) != manifest.log_checksum {
            return Err(StoreError::Corrupt("record log checksum does not match the manifest".into()));
        }
        let mut keys = BTreeMap::new();
        let mut count = 0u64;
        for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let rec: PreferenceRecord = serde_json::from_slice(line)
                .map_err(|e| StoreError::Corrupt(format!("line {}: {e}", i + 1)))?;
            keys.insert((rec.prompt_id, rec.pipeline_version), rec.record_id);
            count += 1;
        }
        if count != manifest.record_count {
            return Err(StoreError::Corrupt("record count does not match the manifest".into()));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            hasher,
            keys,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> u64 {
        self.manifest.record_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record id already holding `(prompt_id, pipeline_version)`.
    pub fn find(&self, prompt_id: &str, pipeline_version: &str) -> Option<u64> {
        self.keys.get(&(prompt_id.to_string(), pipeline_version.to_string())).copied()
    }

    /// Whether a non-empty file can be created in the store root.
    pub fn check_writable(&self) -> Result<(), StoreError> {
        let probe = self.root.join(".write-probe");
        fs::write(&probe, b"ok").map_err(io_err(&probe))?;
        fs::remove_file(&probe).map_err(io_err(&probe))
    }

    /// Stores image bytes under their digest; returns `(digest, relative path)`.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<(String, String), StoreError> {
        put_blob(&self.root, bytes)
    }

    pub fn blob_path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Appends `rec` with the next record id, which is returned. The blob must
    /// already be stored.
    pub fn append(&mut self, mut rec: PreferenceRecord) -> Result<u64, StoreError> {
        let key = (rec.prompt_id.clone(), rec.pipeline_version.clone());
        if self.keys.contains_key(&key) {
            return Err(StoreError::Duplicate {
                prompt_id: key.0,
                pipeline_version: key.1,
            });
        }
        rec.record_id = self.manifest.record_count;
        check_record(&rec, &self.manifest.guidance_scales, &self.manifest.topics).map_err(StoreError::Invariant)?;
        let blob = self.root.join(&rec.image_path);
        let bytes = fs::read(&blob).map_err(|_| StoreError::Invariant(format!("blob {} is not stored", rec.image_digest)))?;
        if content_digest(&bytes) != rec.image_digest {
            return Err(StoreError::Invariant(format!("blob {} does not match its digest", rec.image_digest)));
        }

        let mut line = serde_json::to_vec(&rec).expect("record serializes");
        line.push(b'\n');
        let log = self.root.join(RECORDS_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).map_err(io_err(&log))?;
        f.write_all(&line).map_err(io_err(&log))?;
        f.sync_data().map_err(io_err(&log))?;

        self.hasher.update(&line);
        let m = &mut self.manifest;
        m.record_count += 1;
        *m.topic_counts.entry(rec.topic.clone()).or_insert(0) += 1;
        m.blob_digests.insert(rec.image_digest.clone());
        m.log_checksum = format!("sha256:{}", hex(&self.hasher.clone().finalize()));
        self.keys.insert(key, rec.record_id);
        self.write_manifest()?;
        Ok(rec.record_id)
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomically(&self.root.join(MANIFEST_FILE), &bytes)
    }
}

/// Stores image bytes under their digest in the store at `root`; returns
/// `(digest, relative path)`. Safe to call concurrently with the writer.
pub fn put_blob(root: &Path, bytes: &[u8]) -> Result<(String, String), StoreError> {
    let digest = content_digest(bytes);
    let rel = blob_rel_path(&digest).expect("fresh digest is well-formed");
    let path = root.join(&rel);
    if !path.exists() {
        let dir = path.parent().expect("blob has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        static NEXT: AtomicU64 = AtomicU64::new(0);
        let n = NEXT.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{}.{}.{n}.tmp", &digest[7..], std::process::id()));
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
    }
    Ok((digest, rel))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads every record; fails on the first malformed line.
pub fn read_records(root: &Path) -> Result<Vec<PreferenceRecord>, StoreError> {
    let log = root.join(RECORDS_FILE);
    let f = File::open(&log).map_err(io_err(&log))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(&log))?;
        if line.is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ViolationKind {
    ManifestMissing,
    ManifestUnreadable,
    Parse { line: usize, column: usize },
    RecordIdSequence,
    RecordCount,
    Checksum,
    TopicCount,
    BlobList,
    RecordInvariant,
    DuplicatePrompt,
    MissingBlob { digest: String },
    DigestMismatch { digest: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_id: Option<u64>,
    #[serde(flatten)]
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub records_checked: u64,
    pub violations: Vec<Violation>,
}

/// Checks the log, manifest and blobs under `root`. Only an unreadable store
/// is an error; every inconsistency is reported as a violation.
pub fn validate_dataset(root: &Path) -> Result<ValidationReport, StoreError> {
    let log_path = root.join(RECORDS_FILE);
    let log = fs::read(&log_path).map_err(io_err(&log_path))?;
    let mut violations = Vec::new();
    let mut push = |record_id: Option<u64>, kind: ViolationKind, detail: String| {
        violations.push(Violation {
            record_id,
            kind,
            detail,
        })
    };

    let manifest = match fs::read(root.join(MANIFEST_FILE)) {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            push(None, ViolationKind::ManifestMissing, "manifest.json not found".into());
            None
        }
        Err(e) => return Err(io_err(&root.join(MANIFEST_FILE))(e)),
        Ok(bytes) => match serde_json::from_slice::<Manifest>(&bytes) {
            Ok(m) => Some(m),
            Err(e) => {
                push(None, ViolationKind::ManifestUnreadable, e.to_string());
                None
            }
        },
    };

    let mut records = Vec::new();
    let text = String::from_utf8_lossy(&log);
    let mut lines = text.split('\n').enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        if line.is_empty() && lines.peek().is_none() {
            break;
        }
        match serde_json::from_str::<PreferenceRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) => push(
                None,
                ViolationKind::Parse {
                    line: i + 1,
                    column: e.column(),
                },
                e.to_string(),
            ),
        }
    }
    let mut keys = BTreeSet::new();
    let mut topic_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut digests = BTreeSet::new();
    for (i, rec) in records.iter().enumerate() {
        let id = Some(rec.record_id);
        if rec.record_id != i as u64 {
            push(id, ViolationKind::RecordIdSequence, format!("expected record_id {i}"));
        }
        if let Some(m) = &manifest {
            if let Err(why) = check_record(rec, &m.guidance_scales, &m.topics) {
                push(id, ViolationKind::RecordInvariant, why);
            }
        }
        if !keys.insert((rec.prompt_id.as_str(), rec.pipeline_version.as_str())) {
            push(id, ViolationKind::DuplicatePrompt, format!("prompt {} stored twice", rec.prompt_id));
        }
        *topic_counts.entry(rec.topic.clone()).or_insert(0) += 1;
        digests.insert(rec.image_digest.clone());
        if let Some(rel) = blob_rel_path(&rec.image_digest) {
            match fs::read(root.join(&rel)) {
                Err(_) => push(
                    id,
                    ViolationKind::MissingBlob {
                        digest: rec.image_digest.clone(),
                    },
                    format!("{rel} not found"),
                ),
                Ok(bytes) if content_digest(&bytes) != rec.image_digest => push(
                    id,
                    ViolationKind::DigestMismatch {
                        digest: rec.image_digest.clone(),
                    },
                    format!("{rel} content does not match its digest"),
                ),
                Ok(_) => {}
            }
        }
    }

    if let Some(m) = &manifest {
        let lines = log.iter().filter(|&&b| b == b'\n').count() as u64;
        if m.record_count != lines || m.record_count != records.len() as u64 {
            push(
                None,
                ViolationKind::RecordCount,
                format!("manifest lists {} records; log has {lines} lines, {} parseable", m.record_count, records.len()),
            );
        }
        if content_digest(&log) != m.log_checksum {
            push(None, ViolationKind::Checksum, "record log checksum does not match the manifest".into());
        }
        if m.topic_counts != topic_counts {
            push(None, ViolationKind::TopicCount, "per-topic counts differ from the manifest".into());
        }
        if m.blob_digests != digests {
            push(None, ViolationKind::BlobList, "manifest blob list differs from the records".into());
        }
    }

    Ok(ValidationReport {
        passed: violations.is_empty(),
        records_checked: records.len() as u64,
        violations,
    })
}

fn require_valid(root: &Path) -> Result<(), StoreError> {
    let report = validate_dataset(root)?;
    if report.passed {
        Ok(())
    } else {
        Err(StoreError::Invalid {
            violations: report.violations.len(),
        })
    }
}

/// One line of the flat DPO export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoExample {
    pub image: String,
    pub instruction: String,
    pub chosen: String,
    pub rejected: String,
}

/// Writes `{image, instruction, chosen, rejected}` lines in record order.
/// `image` is the blob path relative to the store root. Refuses stores that
/// fail validation.
pub fn export_dpo(root: &Path, out: &Path) -> Result<usize, StoreError> {
    require_valid(root)?;
    let records = read_records(root)?;
    let mut buf = Vec::new();
    for r in &records {
        let ex = DpoExample {
            image: r.image_path.clone(),
            instruction: r.instruction.clone(),
            chosen: r.chosen_text.clone(),
            rejected: r.rejected_text.clone(),
        };
        serde_json::to_writer(&mut buf, &ex).expect("example serializes");
        buf.push(b'\n');
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_atomically(out, &buf)?;
    Ok(records.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub parent_records: u64,
    pub sampled: u64,
    /// Parent record ids kept, ascending.
    pub parent_record_ids: Vec<u64>,
    /// Topics whose share moved by more than the tolerance, in percentage
    /// points.
    pub topic_drift: BTreeMap<String, f64>,
}

/// Draws `n` records uniformly without replacement into a new store at `out`.
/// Kept records stay in parent order and are renumbered from 0.
pub fn sample_subset(root: &Path, n: usize, seed: u64, out: &Path) -> Result<SampleReport, StoreError> {
    require_valid(root)?;
    let manifest = read_manifest(root)?;
    let records = read_records(root)?;
    if n > records.len() {
        return Err(StoreError::Domain(format!("cannot sample {n} of {} records", records.len())));
    }
    if out.join(MANIFEST_FILE).exists() || out.join(RECORDS_FILE).exists() {
        return Err(StoreError::Domain(format!("{} already holds a store", out.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, records.len(), n).into_vec();
    picked.sort_unstable();

    let mut sub = DatasetStore::create_or_open(out, &manifest.spec())?;
    for &i in &picked {
        let rec = &records[i];
        let bytes = fs::read(root.join(&rec.image_path)).map_err(io_err(&root.join(&rec.image_path)))?;
        sub.put_blob(&bytes)?;
        sub.append(rec.clone())?;
    }

    let mut topic_drift = BTreeMap::new();
    if n >= DRIFT_CHECK_MIN {
        let share = |count: u64, total: usize| 100.0 * count as f64 / total as f64;
        for topic in &manifest.topics {
            let parent = share(manifest.topic_counts.get(topic).copied().unwrap_or(0), records.len());
            let child = share(sub.manifest().topic_counts.get(topic).copied().unwrap_or(0), n);
            if (child - parent).abs() > DRIFT_TOLERANCE_PP {
                tracing::warn!(topic, parent, child, "sampled topic share drifts from the parent");
                topic_drift.insert(topic.clone(), child - parent);
            }
        }
    }
    Ok(SampleReport {
        parent_records: records.len() as u64,
        sampled: n as u64,
        parent_record_ids: picked.iter().map(|&i| records[i].record_id).collect(),
        topic_drift,
    })
}
