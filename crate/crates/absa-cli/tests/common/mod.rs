//! Shared fixture and process helpers for the CLI test suites.
#![allow(dead_code)] // each test target uses a subset

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use absa::corpus::write_dataset;
use absa::fixtures::{self, TriggerConfig};
use absa::train::split_documents;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_absa")
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test_syn: PathBuf,
    pub embeddings: PathBuf,
    pub catalog: PathBuf,
}

/// Trigger-token corpus (160/24/24 split) plus a random embedding file and
/// the 4-aspect catalog, all written into a temp directory.
pub fn setup_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TriggerConfig {
        n_train: 160,
        n_dev: 24,
        n_test: 24,
        seed: 7,
        ..TriggerConfig::default()
    };
    let (docs, catalog) = fixtures::trigger_dataset(&cfg);
    let (train_docs, dev_docs, test_syn_docs, _) = split_documents(docs);

    let write = |name: &str, docs: &[absa::corpus::Document]| -> PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, write_dataset(docs, &catalog)).unwrap();
        path
    };
    let train = write("train.tsv", &train_docs);
    let dev = write("dev.tsv", &dev_docs);
    let test_syn = write("test_syn.tsv", &test_syn_docs);

    let embeddings = dir.path().join("embeddings.vec");
    fixtures::trigger_table(cfg.n_aspects, 16, 7, 8.0)
        .save(&embeddings)
        .unwrap();

    let catalog_path = dir.path().join("aspects.txt");
    std::fs::write(&catalog_path, catalog.names().join("\n")).unwrap();

    Fixture {
        dir,
        train,
        dev,
        test_syn,
        embeddings,
        catalog: catalog_path,
    }
}

/// Standard fast-training arguments for the fixture.
pub fn train_args(fixture: &Fixture, out: &Path, seed: u64) -> Vec<String> {
    [
        "train",
        "--train",
        fixture.train.to_str().unwrap(),
        "--dev",
        fixture.dev.to_str().unwrap(),
        "--test-syn",
        fixture.test_syn.to_str().unwrap(),
        "--embeddings",
        fixture.embeddings.to_str().unwrap(),
        "--catalog",
        fixture.catalog.to_str().unwrap(),
        "--arch",
        "e2e-cnn",
        "--lr",
        "0.3",
        "--epochs",
        "200",
        "--filters",
        "8",
        "--hidden",
        "8",
        "--out",
        out.to_str().unwrap(),
        "--seed",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([seed.to_string()])
    .collect()
}

pub fn run(args: &[String]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to run absa binary")
}

pub fn run_str(args: &[&str]) -> Output {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    run(&owned)
}

pub fn run_with_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = Command::new(bin())
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("failed to spawn absa binary");
    child.stdin.as_mut().unwrap().write_all(input).unwrap();
    child.wait_with_output().unwrap()
}

/// Spawns `absa serve` and returns the child plus the bound address parsed
/// from its stdout.
pub fn spawn_server(model: &Path, extra: &[&str]) -> (Child, String) {
    let mut child = Command::new(bin())
        .arg("serve")
        .arg("--model")
        .arg(model)
        .arg("--port")
        .arg("0")
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("failed to spawn server");
    let stdout = child.stdout.as_mut().unwrap();
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = stdout.read(&mut byte).unwrap();
        assert!(n > 0, "server exited before printing its address");
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
    }
    let line = String::from_utf8(line).unwrap();
    let addr = line
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected server banner {line:?}"))
        .trim()
        .to_string();
    (child, addr)
}

/// Minimal HTTP/1.1 client: one request per connection.
pub fn http(addr: &str, method: &str, path: &str, body: &[u8]) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).expect("connecting to test server");
    let request = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(request.as_bytes()).unwrap();
    stream.write_all(body).unwrap();
    let mut response = Vec::new();
    stream.read_to_end(&mut response).unwrap();
    let text = String::from_utf8_lossy(&response).to_string();
    let status: u16 = text
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("malformed response {text:?}"));
    let payload = text
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .unwrap_or_default();
    (status, payload)
}

/// Decodes a chunked or plain HTTP body into the JSON value it carries.
pub fn body_json(payload: &str) -> serde_json::Value {
    // hyper responds with content-length bodies here; chunked framing would
    // still parse after stripping the hex size lines.
    if let Ok(v) = serde_json::from_str(payload) {
        return v;
    }
    let stripped: String = payload
        .lines()
        .filter(|l| !l.chars().all(|c| c.is_ascii_hexdigit()) || l.contains('{'))
        .collect();
    serde_json::from_str(&stripped).expect("response body is not JSON")
}
