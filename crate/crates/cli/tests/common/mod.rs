//! Shared helpers for the CLI test binaries: invoking the built binary,
//! building deterministic corpora, a minimal chat-completions server, and
//! the bundled-fixture generator.

#![allow(dead_code)] // each test binary uses a different subset

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use consensus_dx_core::corpus::{save_corpus, ClinicalNote, Corpus, GroundTruthPair};
use consensus_dx_core::gateway::{
    CallContext, CacheEntry, CompletionRequest, Gateway, GatewayError, Provider, ProviderKind,
    ResponseCache, RetryPolicy,
};
use consensus_dx_core::grid::{full_grid, turn_by_id, TurnConfig};
use consensus_dx_core::predictor::{run_matrix, PredictionStore, PredictorOptions};
use consensus_dx_core::prompts::parse_summary_prompt;
use consensus_dx_core::summarizer::{Summarizer, SummarizerOptions};

/// The compiled binary under test.
pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_consensus-dx"))
}

/// Run the binary with args against a corpus/output pair, returning output.
pub fn run_cli(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Repo root (two levels above this crate).
pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .expect("crate lives two levels under the repo root")
        .to_path_buf()
}

pub fn fixtures_dir() -> PathBuf {
    repo_root().join("fixtures/demo")
}

/// A deterministic corpus: `notes` notes with `meds_per_note` medications
/// each, one accepted diagnosis per medication, note text of `text_len`
/// characters. Diagnoses cycle through a fixed list of distinct conditions.
pub fn synthetic_corpus(notes: usize, meds_per_note: usize, text_len: usize) -> Corpus {
    const DIAGNOSES: [&str; 12] = [
        "hypertension",
        "type 2 diabetes mellitus",
        "congestive heart failure",
        "atrial fibrillation",
        "community acquired pneumonia",
        "gastroesophageal reflux disease",
        "iron deficiency anemia",
        "chronic kidney disease",
        "major depressive disorder",
        "asthma",
        "hypothyroidism",
        "osteoarthritis",
    ];
    let mut clinical_notes = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..notes {
        let note_id = format!("note{i:04}");
        let sentence = format!("Patient {i} remains stable on the current regimen. ");
        let text: String = sentence
            .chars()
            .cycle()
            .take(text_len)
            .collect();
        let mut medications = Vec::new();
        for m in 0..meds_per_note {
            let which = (i * meds_per_note + m) % DIAGNOSES.len();
            let medication = format!("medication-{i:04}-{m}");
            medications.push(medication.clone());
            pairs.push(GroundTruthPair {
                note_id: note_id.clone(),
                medication,
                accepted_diagnoses: vec![DIAGNOSES[which].to_string()],
            });
        }
        clinical_notes.push(ClinicalNote {
            note_id,
            text,
            medications,
        });
    }
    Corpus::new(clinical_notes, pairs).expect("synthetic corpus is valid")
}

pub fn write_corpus(corpus: &Corpus, path: &Path) {
    save_corpus(corpus, path).expect("corpus writes");
}

// ---------------------------------------------------------------------------
// Minimal chat-completions server
// ---------------------------------------------------------------------------

/// A threaded HTTP server answering every POST with a fixed chat-completions
/// body; counts requests. Stops when dropped (listener poll loop checks a
/// deadline on accept timeouts).
pub struct MockServer {
    pub base_url: String,
    hits: Arc<AtomicUsize>,
    shutdown: Arc<AtomicUsize>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    /// Serve `content` as every completion's message content.
    pub fn serve(content: &str) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        listener.set_nonblocking(true).expect("nonblocking");
        let addr = listener.local_addr().expect("addr");
        let hits = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicUsize::new(0));
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string();
        let handle = {
            let hits = Arc::clone(&hits);
            let shutdown = Arc::clone(&shutdown);
            std::thread::spawn(move || loop {
                if shutdown.load(Ordering::SeqCst) != 0 {
                    return;
                }
                match listener.accept() {
                    Ok((stream, _)) => {
                        hits.fetch_add(1, Ordering::SeqCst);
                        respond(stream, &body);
                    }
                    Err(err) if err.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(std::time::Duration::from_millis(5));
                    }
                    Err(_) => return,
                }
            })
        };
        MockServer {
            base_url: format!("http://{addr}"),
            hits,
            shutdown,
            handle: Some(handle),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(1, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn respond(mut stream: TcpStream, body: &str) {
    // Drain the request: headers, then Content-Length bytes of body.
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some(rest) = trimmed
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
        {
            content_length = rest.trim().parse().unwrap_or(0);
        }
    }
    let mut request_body = vec![0u8; content_length];
    let _ = reader.read_exact(&mut request_body);
    let response = format!(
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        body.len(),
        body
    );
    let _ = stream.write_all(response.as_bytes());
}

// ---------------------------------------------------------------------------
// Bundled fixture generation (two documented medication rows)
// ---------------------------------------------------------------------------

pub const DEMO_TURNS: [u8; 5] = [2, 7, 10, 13, 14];
pub const DEMO_MODEL: &str = "gpt-3.5-turbo";

pub fn enalapril_note_text() -> String {
    let para = "Admission note: patient with long-standing elevated blood pressure, \
                on enalapril maleate at home; renal function monitored given stage 3 \
                chronic kidney disease history; blood pressures in the 160s systolic \
                on arrival, improving with resumption of home antihypertensives. ";
    let text: String = para.chars().cycle().take(2600).collect();
    text
}

pub fn ondansetron_note_text() -> String {
    let para = "Admission note: patient reporting abdominal bloating and persistent \
                nausea with several episodes of emesis; imaging shows marked gastric \
                distension; ondansetron given with partial relief; diet advanced \
                slowly as symptoms permit. ";
    let text: String = para.chars().cycle().take(2600).collect();
    text
}

fn demo_summary(note_id: &str) -> &'static str {
    match note_id {
        "demo-enalapril" => {
            "Patient with long-standing elevated blood pressure on home enalapril \
             maleate; stage 3 chronic kidney disease monitored; pressures improved \
             after resuming antihypertensives."
        }
        "demo-ondansetron" => {
            "Patient with abdominal bloating, nausea, and emesis; imaging shows \
             marked gastric distension; ondansetron gave partial relief."
        }
        other => panic!("unexpected note {other}"),
    }
}

/// (turn, medication) → scripted diagnosis answer. Correctness patterns over
/// turns (2, 7, 10, 13, 14): enalapril 0,1,1,1,0 and ondansetron 1,0,1,1,0.
fn demo_answer(turn_id: u8, medication: &str) -> &'static str {
    match (turn_id, medication) {
        (2, "Enalapril Maleate") => "chronic kidney disease",
        (7, "Enalapril Maleate") => "hypertension",
        (10, "Enalapril Maleate") => "hypertension",
        (13, "Enalapril Maleate") => "hypertension",
        (14, "Enalapril Maleate") => "heart failure",
        (2, "Ondansetron") => "gastric distension",
        (7, "Ondansetron") => "nausea",
        (10, "Ondansetron") => "gastric distension",
        (13, "Ondansetron") => "gastric distension",
        (14, "Ondansetron") => "vomiting",
        other => panic!("unexpected cell {other:?}"),
    }
}

pub fn demo_corpus() -> Corpus {
    Corpus::new(
        vec![
            ClinicalNote {
                note_id: "demo-enalapril".into(),
                text: enalapril_note_text(),
                medications: vec!["Enalapril Maleate".into()],
            },
            ClinicalNote {
                note_id: "demo-ondansetron".into(),
                text: ondansetron_note_text(),
                medications: vec!["Ondansetron".into()],
            },
        ],
        vec![
            GroundTruthPair {
                note_id: "demo-enalapril".into(),
                medication: "Enalapril Maleate".into(),
                accepted_diagnoses: vec!["hypertension".into()],
            },
            GroundTruthPair {
                note_id: "demo-ondansetron".into(),
                medication: "Ondansetron".into(),
                accepted_diagnoses: vec!["gastric distension".into()],
            },
        ],
    )
    .expect("fixture corpus is valid")
}

/// Plays the documented answers; recorded through a caching gateway so the
/// fixture cache holds exactly the requests the real pipeline issues.
struct DemoProvider;

impl Provider for DemoProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Http
    }

    fn complete(
        &self,
        request: &CompletionRequest,
        context: &CallContext,
    ) -> Result<String, GatewayError> {
        match context {
            CallContext::Summarize => {
                let (_, note) = parse_summary_prompt(&request.prompt)
                    .ok_or_else(|| GatewayError::Protocol("not a summary prompt".into()))?;
                let note_id = if note == enalapril_note_text() {
                    "demo-enalapril"
                } else {
                    "demo-ondansetron"
                };
                Ok(demo_summary(note_id).to_string())
            }
            CallContext::Predict { turn_id, item, .. } => {
                Ok(demo_answer(*turn_id, item.medication()).to_string())
            }
            CallContext::Plain => Err(GatewayError::Protocol("unexpected plain call".into())),
        }
    }
}

pub fn demo_grid_subset() -> Vec<TurnConfig> {
    let grid = full_grid();
    DEMO_TURNS
        .iter()
        .map(|&id| turn_by_id(&grid, id).expect("turn in grid").clone())
        .collect()
}

/// Generate the complete fixture set into `dir`: corpus.jsonl, config.json,
/// and cache/ with timestamp-free replay entries. Deterministic byte-for-byte.
pub fn generate_demo_fixtures(dir: &Path) {
    std::fs::create_dir_all(dir).expect("fixture dir");
    let corpus = demo_corpus();
    write_corpus(&corpus, &dir.join("corpus.jsonl"));

    let cache_dir = dir.join("cache");
    if cache_dir.exists() {
        std::fs::remove_dir_all(&cache_dir).expect("clear stale cache");
    }
    let cache = ResponseCache::create(&cache_dir).expect("cache dir");
    let gateway = Gateway::new(
        Box::new(DemoProvider),
        Some(ResponseCache::create(&cache_dir).expect("cache dir")),
        RetryPolicy::default(),
        None,
    );

    let summarizer_options = SummarizerOptions {
        model_name: DEMO_MODEL.to_string(),
        workers: 1,
        ..SummarizerOptions::default()
    };
    let run = Summarizer::new(&gateway, summarizer_options)
        .summarize_corpus(&corpus, &[2000, 4000])
        .expect("fixture summaries");
    assert!(run.is_complete(), "fixture summarization must not fail");

    let store_dir = tempfile::tempdir().expect("temp store");
    let store = PredictionStore::create(store_dir.path()).expect("store");
    let matrix = run_matrix(
        &gateway,
        &corpus,
        &run.summaries,
        &demo_grid_subset(),
        &store,
        &PredictorOptions {
            model_name: DEMO_MODEL.to_string(),
            workers: 1,
            ..PredictorOptions::default()
        },
    )
    .expect("fixture predictions");
    assert_eq!(matrix.error_count(), 0, "fixture cells must all succeed");

    // Pin created_at to 0 so the committed files are byte-stable.
    let mut rewritten = 0;
    for entry in std::fs::read_dir(&cache_dir).expect("cache listing") {
        let path = entry.expect("entry").path();
        let text = std::fs::read_to_string(&path).expect("cache file");
        let mut parsed: CacheEntry = serde_json::from_str(&text).expect("cache entry parses");
        parsed.created_at = 0;
        let key = parsed.request.cache_key();
        cache.put_entry(&key, &parsed).expect("rewrite entry");
        rewritten += 1;
    }
    // 2 summaries (length 2000 only; 4000 passes through) + 5 turns × 2 items.
    assert_eq!(rewritten, 12, "fixture cache should hold 12 responses");

    let config = serde_json::json!({
        "corpus": "fixtures/demo/corpus.jsonl",
        "output_dir": "demo-artifacts",
        "cache_dir": "fixtures/demo/cache",
        "provider": {
            "kind": "replay",
            "model_name": DEMO_MODEL,
        },
        "split": {"fraction": 1.0},
    });
    let mut body = serde_json::to_string_pretty(&config).expect("config serializes");
    body.push('\n');
    std::fs::write(dir.join("config.json"), body).expect("config writes");
}

/// All fixture files as path-relative name → bytes, for byte comparisons.
pub fn fixture_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for name in ["corpus.jsonl", "config.json"] {
        let path = dir.join(name);
        files.insert(name.to_string(), std::fs::read(&path).expect("fixture file"));
    }
    for entry in std::fs::read_dir(dir.join("cache")).expect("cache dir") {
        let path = entry.expect("entry").path();
        let name = format!(
            "cache/{}",
            path.file_name().expect("name").to_string_lossy()
        );
        files.insert(name, std::fs::read(&path).expect("cache file"));
    }
    files
}
