//! Two-stage pipeline driver.
//!
//! Per prompt: sweep the guidance scales, score and pick the best image, then
//! write an instruction, fan out to every responder, score the responses and
//! build the preference pair. Prompts run concurrently; records are appended
//! by a single writer in input order, so the dataset does not depend on
//! scheduling. Every stage is checkpointed and a rerun with the same run id
//! resumes where each prompt stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use synthalign_core::seeding::candidate_seed;
use synthalign_core::selection::{
    select_best_image, select_preference_pair, ImageCandidate, ImageCandidateSet, PreferencePair, ResponseCandidate,
    SelectedImage,
};
use synthalign_core::Error as CoreError;

use crate::config::PipelineConfig;
use crate::gateway::{Gateway, GatewayError, GeneratedImage, ImageBlob};
use crate::protocol::GenerateImageRequest;
use crate::store::{self, CandidateScore, DatasetStore, ImageProvenance, PreferenceRecord, StoreError};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SUMMARY_FILE: &str = "run-summary.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompt {
    pub prompt_id: String,
    pub text: String,
    pub topic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StagePayload {
    Generated {
        candidates: Vec<ImageCandidate>,
    },
    ImageSelected {
        selected: SelectedImage,
        image_path: String,
    },
    Responded {
        instruction: String,
        instruction_used_image: bool,
        candidates: Vec<ResponseCandidate>,
        failed_responders: Vec<String>,
    },
    Paired {
        record_id: u64,
    },
    SkippedDegenerate {
        candidates: Vec<ResponseCandidate>,
    },
    Failed {
        cause: String,
    },
}

impl StagePayload {
    /// Position in the stage order; all terminal stages share the last rank.
    pub fn rank(&self) -> u8 {
        match self {
            StagePayload::Generated { .. } => 0,
            StagePayload::ImageSelected { .. } => 1,
            StagePayload::Responded { .. } => 2,
            _ => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StagePayload::Generated { .. } => "generated",
            StagePayload::ImageSelected { .. } => "image_selected",
            StagePayload::Responded { .. } => "responded",
            StagePayload::Paired { .. } => "paired",
            StagePayload::SkippedDegenerate { .. } => "skipped_degenerate",
            StagePayload::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCheckpoint {
    pub prompt_id: String,
    #[serde(flatten)]
    pub payload: StagePayload,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid prompts: {0}")]
    Prompts(String),
    #[error("checkpoint log: {0}")]
    Checkpoint(String),
}

/// What each prompt has reached in previous attempts of a run.
#[derive(Debug, Clone, Default)]
struct Progress {
    selected: Option<(SelectedImage, String)>,
    responded: Option<StagePayload>,
    terminal: Option<StagePayload>,
    rank: Option<u8>,
}

/// Append-only per-run checkpoint log, shared by the prompt tasks.
pub struct CheckpointLog {
    path: PathBuf,
    inner: Mutex<(File, BTreeMap<String, Progress>)>,
}

impl CheckpointLog {
    /// Opens (or creates) `<dir>/<run_id>.jsonl` and replays it. A torn final
    /// line from an interrupted run is dropped.
    pub fn open(dir: &Path, run_id: &str) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(|source| RunError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(format!("{run_id}.jsonl"));
        let io = |source| RunError::Io {
            path: path.clone(),
            source,
        };
        let mut progress: BTreeMap<String, Progress> = BTreeMap::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            let mut lines = reader.split(b'\n').peekable();
            let mut offset = 0u64;
            while let Some(line) = lines.next() {
                let line = line.map_err(|source| RunError::Io {
                    path: path.clone(),
                    source,
                })?;
                let last = lines.peek().is_none();
                match serde_json::from_slice::<StageCheckpoint>(&line) {
                    Ok(cp) => {
                        offset += line.len() as u64 + 1;
                        valid_len = offset;
                        apply(&mut progress, cp).map_err(RunError::Checkpoint)?;
                    }
                    Err(_) if last => {
                        tracing::warn!(path = %path.display(), "dropping torn checkpoint line");
                    }
                    Err(e) => return Err(RunError::Checkpoint(format!("{}: {e}", path.display()))),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(|source| RunError::Io {
                path: path.clone(),
                source,
            })?;
        file.set_len(valid_len).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?;
        let file = OpenOptions::new().append(true).open(&path).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(Self {
            path,
            inner: Mutex::new((file, progress)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn progress(&self, prompt_id: &str) -> Progress {
        let guard = self.inner.lock().expect("checkpoint lock");
        guard.1.get(prompt_id).cloned().unwrap_or_default()
    }

    /// Last stage recorded for `prompt_id`, if any.
    pub fn last_stage(&self, prompt_id: &str) -> Option<&'static str> {
        let p = self.progress(prompt_id);
        p.terminal
            .as_ref()
            .map(StagePayload::name)
            .or_else(|| p.responded.as_ref().map(StagePayload::name))
            .or(p.selected.as_ref().map(|_| "image_selected"))
            .or(p.rank.map(|_| "generated"))
    }

    pub fn record(&self, prompt_id: &str, payload: StagePayload) -> Result<(), RunError> {
        let cp = StageCheckpoint {
            prompt_id: prompt_id.to_string(),
            payload,
        };
        let mut line = serde_json::to_vec(&cp).expect("checkpoint serializes");
        line.push(b'\n');
        let mut guard = self.inner.lock().expect("checkpoint lock");
        let (file, progress) = &mut *guard;
        apply(progress, cp).map_err(RunError::Checkpoint)?;
        file.write_all(&line).map_err(|source| RunError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// Stage transitions must move forward; a failed prompt may start over, and
/// a prompt stopped right after generation regenerates its images.
fn apply(progress: &mut BTreeMap<String, Progress>, cp: StageCheckpoint) -> Result<(), String> {
    let p = progress.entry(cp.prompt_id.clone()).or_default();
    let rank = cp.payload.rank();
    let restart = matches!(p.terminal, Some(StagePayload::Failed { .. }));
    if restart {
        *p = Progress::default();
    }
    let regenerated = matches!(cp.payload, StagePayload::Generated { .. }) && p.rank == Some(rank);
    if let Some(prev) = p.rank {
        if rank <= prev && !regenerated {
            return Err(format!(
                "prompt {}: stage {} after a later stage",
                cp.prompt_id,
                cp.payload.name()
            ));
        }
    }
    p.rank = Some(rank);
    match cp.payload {
        StagePayload::Generated { .. } => {}
        StagePayload::ImageSelected { selected, image_path } => p.selected = Some((selected, image_path)),
        r @ StagePayload::Responded { .. } => p.responded = Some(r),
        t => p.terminal = Some(t),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFailure {
    pub prompt_id: String,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub prompts: u64,
    pub paired: u64,
    pub degenerate: u64,
    pub failed: u64,
    /// Prompts that were already terminal and needed no work.
    pub skipped: u64,
    pub new_records: u64,
    /// Backend attempts made by this run, retries included.
    pub backend_calls: u64,
    pub failures: Vec<PromptFailure>,
}

impl RunSummary {
    pub fn conserved(&self) -> bool {
        self.prompts == self.paired + self.degenerate + self.failed
    }
}

/// Result of one prompt task, handed to the writer.
enum Outcome {
    Record(Box<PreferenceRecord>),
    Degenerate(Vec<ResponseCandidate>),
    Failed(String),
    DonePaired,
    DoneDegenerate,
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Selection(#[from] CoreError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Checkpoint(#[from] RunError),
    #[error("only {got} of {need} required responses succeeded ({failures})")]
    TooFewResponses {
        got: usize,
        need: usize,
        failures: String,
    },
}

/// Generates and scores one image per guidance scale and selects the best.
/// Returns the selection and the winning image.
pub async fn run_image_stage(
    prompt: &Prompt,
    cfg: &PipelineConfig,
    gateway: &Gateway,
    on_generated: impl FnOnce(&[ImageCandidate]) -> Result<(), RunError>,
) -> Result<(SelectedImage, ImageBlob), StageError> {
    let generated: Vec<GeneratedImage> = futures::future::try_join_all(cfg.guidance_scales.iter().map(|&g| {
        let req = GenerateImageRequest {
            prompt: prompt.text.clone(),
            guidance_scale: g,
            seed: candidate_seed(cfg.global_seed, &prompt.prompt_id, g),
            width: cfg.image_width,
            height: cfg.image_height,
        };
        async move { gateway.generate_image(&prompt.prompt_id, &req).await }
    }))
    .await?;
    let unscored: Vec<ImageCandidate> = generated.iter().map(|g| g.candidate.clone()).collect();
    on_generated(&unscored)?;

    let scores = futures::future::try_join_all(
        generated
            .iter()
            .map(|g| gateway.score_image(&prompt.text, &g.blob)),
    )
    .await?;
    let mut set = ImageCandidateSet {
        prompt_id: prompt.prompt_id.clone(),
        candidates: unscored,
    };
    for (c, s) in set.candidates.iter_mut().zip(scores) {
        c.score = Some(s);
    }
    set.validate(&cfg.guidance_scales)?;
    let selected = select_best_image(&set)?;
    let blob = generated
        .into_iter()
        .find(|g| g.blob.image_ref == selected.winner.image_ref)
        .expect("winner comes from the generated set")
        .blob;
    Ok((selected, blob))
}

/// Instruction plus scored responses of one selected image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    pub instruction: String,
    pub instruction_used_image: bool,
    /// Successful candidates in configured responder order.
    pub candidates: Vec<ResponseCandidate>,
    pub failed_responders: Vec<String>,
}

/// Writes the instruction, queries every responder and scores each response.
/// Tolerates failed responders as long as `min_responses` succeed.
pub async fn run_response_stage(
    prompt: &Prompt,
    image: &ImageBlob,
    cfg: &PipelineConfig,
    gateway: &Gateway,
) -> Result<ResponseSet, StageError> {
    let instruction = gateway
        .make_instruction(&prompt.text, cfg.instruction_uses_image.then_some(image))
        .await?;
    let scorer_image = cfg.scorer_sees_image.then_some(image);
    let results = futures::future::join_all(cfg.responder_ids.iter().map(|id| {
        let instruction = &instruction;
        async move {
            let text = gateway.generate_response(instruction, image, id).await?;
            let payload = gateway.score_response(instruction, &text, scorer_image).await?;
            Ok::<_, GatewayError>(ResponseCandidate {
                responder_id: id.clone(),
                text,
                attribute_scores: payload.attributes,
                scalar_score: payload.scalar,
            })
        }
    }))
    .await;
    let mut candidates = Vec::new();
    let mut failed = Vec::new();
    let mut causes = Vec::new();
    for (id, r) in cfg.responder_ids.iter().zip(results) {
        match r {
            Ok(c) => candidates.push(c),
            Err(e) => {
                tracing::warn!(prompt = %prompt.prompt_id, responder = %id, error = %e, "responder failed");
                causes.push(format!("{id}: {e}"));
                failed.push(id.clone());
            }
        }
    }
    if candidates.len() < cfg.min_responses {
        return Err(StageError::TooFewResponses {
            got: candidates.len(),
            need: cfg.min_responses,
            failures: causes.join("; "),
        });
    }
    Ok(ResponseSet {
        instruction,
        instruction_used_image: cfg.instruction_uses_image,
        candidates,
        failed_responders: failed,
    })
}

fn build_record(
    prompt: &Prompt,
    cfg: &PipelineConfig,
    selected: &SelectedImage,
    image_path: &str,
    responses: &ResponseSet,
    pair: &PreferencePair,
) -> PreferenceRecord {
    let score = |c: &ResponseCandidate| CandidateScore {
        responder_id: c.responder_id.clone(),
        scalar: c.scalar_score,
        attributes: c.attribute_scores,
    };
    PreferenceRecord {
        record_id: 0,
        prompt_id: prompt.prompt_id.clone(),
        t2i_prompt: prompt.text.clone(),
        topic: prompt.topic.clone(),
        instruction: responses.instruction.clone(),
        image_digest: selected.winner.image_ref.clone(),
        image_path: image_path.to_string(),
        chosen_text: pair.chosen.text.clone(),
        rejected_text: pair.rejected.text.clone(),
        chosen_scalar: pair.chosen.scalar_score,
        rejected_scalar: pair.rejected.scalar_score,
        chosen_attributes: pair.chosen.attribute_scores,
        rejected_attributes: pair.rejected.attribute_scores,
        all_candidate_scores: responses.candidates.iter().map(score).collect(),
        image_provenance: ImageProvenance {
            guidance_scale: selected.winner.guidance_scale,
            all_image_scores: selected.all_scores(),
            seed: selected.winner.seed,
        },
        responder_ids: cfg.responder_ids.clone(),
        created_at: cfg.created_at.clone(),
        pipeline_version: cfg.pipeline_version.clone(),
        chosen_responder_id: pair.chosen.responder_id.clone(),
        rejected_responder_id: pair.rejected.responder_id.clone(),
        instruction_used_image: responses.instruction_used_image,
        scorer_saw_image: cfg.scorer_sees_image,
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    gateway: &'a Gateway,
    log: &'a CheckpointLog,
    store_root: &'a Path,
}

fn pair_outcome(
    ctx: &Ctx<'_>,
    prompt: &Prompt,
    selected: &SelectedImage,
    image_path: &str,
    responses: &ResponseSet,
) -> Result<Outcome, StageError> {
    match select_preference_pair(
        &prompt.prompt_id,
        &selected.winner.image_ref,
        &responses.instruction,
        &responses.candidates,
    ) {
        Ok(pair) => Ok(Outcome::Record(Box::new(build_record(
            prompt, ctx.cfg, selected, image_path, responses, &pair,
        )))),
        Err(CoreError::DegeneratePair { .. }) => Ok(Outcome::Degenerate(responses.candidates.clone())),
        Err(e) => Err(e.into()),
    }
}

async fn process(ctx: &Ctx<'_>, prompt: &Prompt) -> Outcome {
    let progress = ctx.log.progress(&prompt.prompt_id);
    match &progress.terminal {
        Some(StagePayload::Paired { .. }) => return Outcome::DonePaired,
        Some(StagePayload::SkippedDegenerate { .. }) => return Outcome::DoneDegenerate,
        _ => {}
    }
    let failed = matches!(progress.terminal, Some(StagePayload::Failed { .. }));
    match advance(ctx, prompt, if failed { Progress::default() } else { progress }).await {
        Ok(o) => o,
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

async fn advance(ctx: &Ctx<'_>, prompt: &Prompt, progress: Progress) -> Result<Outcome, StageError> {
    let pid = &prompt.prompt_id;
    let (selected, image_path, blob) = match progress.selected {
        Some((selected, image_path)) => {
            if let Some(StagePayload::Responded {
                instruction,
                instruction_used_image,
                candidates,
                failed_responders,
            }) = progress.responded
            {
                let responses = ResponseSet {
                    instruction,
                    instruction_used_image,
                    candidates,
                    failed_responders,
                };
                return pair_outcome(ctx, prompt, &selected, &image_path, &responses);
            }
            let path = ctx.store_root.join(&image_path);
            let bytes = fs::read(&path).map_err(|source| RunError::Io { path, source })?;
            let blob = ImageBlob {
                image_ref: selected.winner.image_ref.clone(),
                data: Some(Arc::new(bytes)),
                path: Some(ctx.store_root.join(&image_path)),
            };
            (selected, image_path, blob)
        }
        None => {
            let (selected, mut blob) = run_image_stage(prompt, ctx.cfg, ctx.gateway, |cands| {
                ctx.log.record(
                    pid,
                    StagePayload::Generated {
                        candidates: cands.to_vec(),
                    },
                )
            })
            .await?;
            let data = blob.data.clone().expect("generated images carry bytes");
            let (_, rel) = store::put_blob(ctx.store_root, &data)?;
            blob.path = Some(ctx.store_root.join(&rel));
            ctx.log.record(
                pid,
                StagePayload::ImageSelected {
                    selected: selected.clone(),
                    image_path: rel.clone(),
                },
            )?;
            (selected, rel, blob)
        }
    };
    let responses = run_response_stage(prompt, &blob, ctx.cfg, ctx.gateway).await?;
    ctx.log.record(
        pid,
        StagePayload::Responded {
            instruction: responses.instruction.clone(),
            instruction_used_image: responses.instruction_used_image,
            candidates: responses.candidates.clone(),
            failed_responders: responses.failed_responders.clone(),
        },
    )?;
    pair_outcome(ctx, prompt, &selected, &image_path, &responses)
}

/// Checks ids are unique and texts and topics valid.
pub fn check_prompts(prompts: &[Prompt], cfg: &PipelineConfig) -> Result<(), RunError> {
    let mut seen = BTreeSet::new();
    for p in prompts {
        if p.prompt_id.is_empty() || p.prompt_id.contains('\n') {
            return Err(RunError::Prompts(format!("bad prompt id {:?}", p.prompt_id)));
        }
        if !seen.insert(p.prompt_id.as_str()) {
            return Err(RunError::Prompts(format!("prompt id {} appears twice", p.prompt_id)));
        }
        if p.text.trim().is_empty() {
            return Err(RunError::Prompts(format!("prompt {} has empty text", p.prompt_id)));
        }
        if !cfg.topics.contains(&p.topic) {
            return Err(RunError::Prompts(format!(
                "prompt {} has unconfigured topic {:?}",
                p.prompt_id, p.topic
            )));
        }
    }
    Ok(())
}

/// Runs every prompt to a terminal stage and appends the pairs to `store`.
/// Checkpoints go to `<checkpoint_dir>/<run_id>.jsonl`.
pub async fn run_pipeline(
    run_id: &str,
    prompts: &[Prompt],
    cfg: &PipelineConfig,
    gateway: &Gateway,
    store: &mut DatasetStore,
    checkpoint_dir: &Path,
) -> Result<RunSummary, RunError> {
    check_prompts(prompts, cfg)?;
    store.check_writable()?;
    let log = CheckpointLog::open(checkpoint_dir, run_id)?;
    let calls_before = gateway.stats().total_attempts();
    let store_root = store.root().to_path_buf();
    let ctx = Ctx {
        cfg,
        gateway,
        log: &log,
        store_root: &store_root,
    };

    let mut summary = RunSummary {
        run_id: run_id.to_string(),
        prompts: prompts.len() as u64,
        paired: 0,
        degenerate: 0,
        failed: 0,
        skipped: 0,
        new_records: 0,
        backend_calls: 0,
        failures: Vec::new(),
    };
    let ctx_ref = &ctx;
    let mut outcomes = stream::iter(prompts.iter().map(|p| async move { (p, process(ctx_ref, p).await) }))
        .buffered(cfg.max_concurrent_prompts);
    while let Some((prompt, outcome)) = outcomes.next().await {
        let pid = &prompt.prompt_id;
        let terminal = match outcome {
            Outcome::DonePaired => {
                summary.paired += 1;
                summary.skipped += 1;
                continue;
            }
            Outcome::DoneDegenerate => {
                summary.degenerate += 1;
                summary.skipped += 1;
                continue;
            }
            Outcome::Record(rec) => match store.append(*rec) {
                Ok(record_id) => {
                    summary.paired += 1;
                    summary.new_records += 1;
                    StagePayload::Paired { record_id }
                }
                Err(StoreError::Duplicate {
                    prompt_id,
                    pipeline_version,
                }) => {
                    summary.paired += 1;
                    let record_id = store
                        .find(&prompt_id, &pipeline_version)
                        .expect("duplicate key is present");
                    StagePayload::Paired { record_id }
                }
                Err(e @ StoreError::Invariant(_)) => {
                    summary.failed += 1;
                    summary.failures.push(PromptFailure {
                        prompt_id: pid.clone(),
                        cause: e.to_string(),
                    });
                    StagePayload::Failed { cause: e.to_string() }
                }
                Err(e) => return Err(e.into()),
            },
            Outcome::Degenerate(candidates) => {
                summary.degenerate += 1;
                StagePayload::SkippedDegenerate { candidates }
            }
            Outcome::Failed(cause) => {
                tracing::warn!(prompt = %pid, %cause, "prompt failed");
                summary.failed += 1;
                summary.failures.push(PromptFailure {
                    prompt_id: pid.clone(),
                    cause: cause.clone(),
                });
                StagePayload::Failed { cause }
            }
        };
        log.record(pid, terminal)?;
    }
    summary.backend_calls = gateway.stats().total_attempts() - calls_before;
    Ok(summary)
}

/// Writes the summary as pretty JSON to `<out>/run-summary.json`.
pub fn write_summary(out: &Path, summary: &RunSummary) -> Result<PathBuf, RunError> {
    let path = out.join(SUMMARY_FILE);
    let mut bytes = serde_json::to_vec_pretty(summary).expect("summary serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
