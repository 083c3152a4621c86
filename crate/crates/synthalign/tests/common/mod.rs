#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use synthalign::config::{PipelineConfig, RunConfig};
use synthalign::gateway::{Gateway, RetryPolicy};
use synthalign::mock::{MockBackend, MockConfig};
use synthalign::orchestrator::{run_pipeline, Prompt, RunSummary, CHECKPOINT_DIR};
use synthalign::prompts::demo_prompts;
use synthalign::store::{DatasetStore, StoreSpec};

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares `actual` with a frozen golden file. `SYNTHALIGN_BLESS=1`
/// rewrites the file instead.
pub fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("SYNTHALIGN_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden file {name} differs");
}

pub fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        base: Duration::from_millis(1),
        factor: 2.0,
        jitter: 0.2,
        cap: Duration::from_millis(10),
    }
}

pub struct Harness {
    pub mock: Arc<MockBackend>,
    pub gateway: Gateway,
}

pub fn harness(mock_cfg: MockConfig, seed: u64, timeout: Duration, max_retries: u32, max_inflight: usize) -> Harness {
    let mock = Arc::new(MockBackend::new(mock_cfg, seed));
    let mut b = Gateway::builder().retry_policy(fast_retry());
    for role in synthalign::protocol::Role::ALL {
        let ep = synthalign::gateway::BackendEndpoint::new(role, "mock:", timeout, max_retries).unwrap();
        b = b.bind(ep, mock.clone(), max_inflight);
    }
    Harness {
        gateway: b.build(),
        mock,
    }
}

pub fn default_harness(seed: u64) -> Harness {
    harness(MockConfig::default(), seed, Duration::from_secs(10), 3, 4)
}

pub fn pipeline(seed: u64) -> PipelineConfig {
    PipelineConfig {
        global_seed: seed,
        ..PipelineConfig::default()
    }
}

pub fn spec(cfg: &PipelineConfig) -> StoreSpec {
    StoreSpec {
        guidance_scales: cfg.guidance_scales.clone(),
        topics: cfg.topics.clone(),
        config: serde_json::to_value(cfg).unwrap(),
    }
}

pub fn prompts(n: usize, cfg: &PipelineConfig) -> Vec<Prompt> {
    demo_prompts(n, &cfg.topics, cfg.global_seed)
}

/// Runs the pipeline into `out` with an existing gateway.
pub async fn run_into(out: &Path, run_id: &str, prompts: &[Prompt], cfg: &PipelineConfig, gateway: &Gateway) -> RunSummary {
    let mut store = DatasetStore::create_or_open(out, &spec(cfg)).unwrap();
    run_pipeline(run_id, prompts, cfg, gateway, &mut store, &out.join(CHECKPOINT_DIR))
        .await
        .unwrap()
}

/// Full mock run of `n` demo prompts; returns the summary.
pub async fn mock_run(out: &Path, n: usize, seed: u64) -> RunSummary {
    let cfg = pipeline(seed);
    let h = default_harness(seed);
    run_into(out, "run", &prompts(n, &cfg), &cfg, &h.gateway).await
}

pub fn mock_run_config() -> RunConfig {
    RunConfig::mock()
}

pub fn sha256_file(path: &Path) -> String {
    synthalign_core::seeding::content_digest(&std::fs::read(path).unwrap())
}

/// One recorded exchange. `request` is the raw body so malformed input can be
/// captured as well.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub name: String,
    pub route: String,
    pub request: String,
    pub status: u16,
    pub response: serde_json::Value,
}

pub const FIXTURE_SEED: u64 = 42;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/conformance")
}

pub fn load_fixtures() -> Vec<Fixture> {
    let mut paths: Vec<_> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap())
        .collect()
}

pub fn fixture_backend() -> Arc<MockBackend> {
    Arc::new(MockBackend::new(MockConfig::default(), FIXTURE_SEED))
}

pub async fn post(client: &reqwest::Client, base: &str, route: &str, body: &str) -> (u16, serde_json::Value) {
    let r = client.post(format!("{base}{route}")).body(body.to_string()).send().await.unwrap();
    let status = r.status().as_u16();
    (status, serde_json::from_slice(&r.bytes().await.unwrap()).unwrap())
}

/// Replays every fixture over HTTP and in process; returns one line per
/// mismatch.
pub async fn replay_fixtures(fixtures: &[Fixture]) -> Vec<String> {
    use synthalign::mock::MockServer;
    use synthalign::protocol::Role;

    let server = MockServer::spawn("127.0.0.1:0".parse().unwrap(), fixture_backend()).await.unwrap();
    let client = reqwest::Client::new();
    let local = fixture_backend();
    let mut diffs = Vec::new();
    for fx in fixtures {
        let (status, body) = post(&client, &server.base_url(), &fx.route, &fx.request).await;
        if (status, &body) != (fx.status, &fx.response) {
            diffs.push(format!("{} over http: {status} {body}", fx.name));
        }
        if let Some(role) = Role::from_route(&fx.route) {
            let (status, bytes) = local.handle(role, fx.request.as_bytes());
            let body: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            if (status, &body) != (fx.status, &fx.response) {
                diffs.push(format!("{} in process: {status} {body}", fx.name));
            }
        }
        if fx.status != 200
            && serde_json::from_value::<synthalign::protocol::ErrorEnvelope>(fx.response.clone()).is_err()
        {
            diffs.push(format!("{}: error reply is not an envelope", fx.name));
        }
    }
    server.shutdown().await.unwrap();
    diffs
}
