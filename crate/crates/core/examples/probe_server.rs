//! Serves the example claims over the `/v1` probe API and walks through one
//! probe: list claims, mask a token, read predictions, record a verdict.
//!
//! ```text
//! cargo run -p clozecheck --example probe_server            # demo, then exit
//! cargo run -p clozecheck --example probe_server -- --serve # keep serving on :8080
//! ```

use std::path::Path;
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use clozecheck::cloze::{load_mock_table, ClozeBackend, MockBackend, RemoteBackend};
use clozecheck::dataset::load_claimset;
use clozecheck::masking::LexiconNer;
use clozecheck::service::{self, ServiceState};
use clozecheck::session::SessionStore;

fn state() -> clozecheck::Result<ServiceState> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let (table, _) = load_mock_table(fixtures.join("cloze_mock.jsonl"))?;
    let ner = LexiconNer::load(fixtures.join("ner_lexicon.jsonl"))?;
    let (claims, _) = load_claimset(fixtures.join("claims.jsonl"), "examples")?;
    let sessions = SessionStore::open(std::env::temp_dir().join("clozecheck-sessions"))?;
    Ok(ServiceState::new(Arc::new(MockBackend::new(table, None)), Arc::new(ner), sessions).with_split(claims))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let serve_forever = std::env::args().any(|a| a == "--serve");
    let state = Arc::new(state()?);
    let addr = if serve_forever { "127.0.0.1:8080" } else { "127.0.0.1:0" };

    let (tx, rx) = std::sync::mpsc::channel();
    let server = thread::spawn(move || -> std::io::Result<()> {
        let rt = tokio::runtime::Runtime::new()?;
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            tx.send(listener.local_addr()?).expect("main thread waits");
            service::serve(listener, state).await
        })
    });
    let base = format!("http://{}", rx.recv()?);
    println!("serving {base}/v1");
    if serve_forever {
        return server.join().expect("server thread").map_err(Into::into);
    }

    let http = reqwest::blocking::Client::new();
    let call = |req: reqwest::blocking::RequestBuilder| -> reqwest::Result<Value> { req.send()?.json() };

    let page = call(http.get(format!("{base}/v1/claims?limit=2")))?;
    println!("GET /claims      -> {} of {}", page["claims"].as_array().map_or(0, Vec::len), page["total"]);

    let masked = call(
        http.post(format!("{base}/v1/mask"))
            .json(&json!({"claim_id": 2, "strategy": "LAST_ENTITY"})),
    )?;
    println!("POST /mask       -> {}", masked["masked_text"]);

    let preds = call(
        http.post(format!("{base}/v1/predict"))
            .json(&json!({"masked_text": masked["masked_text"], "k": 3})),
    )?;
    println!("POST /predict    -> {}", preds["predictions"]);

    let session = call(http.post(format!("{base}/v1/sessions")).json(&json!({})))?;
    let id = session["session_id"].as_str().unwrap_or_default();
    let tally = call(
        http.post(format!("{base}/v1/sessions/{id}/verdicts"))
            .json(&json!({"claim_id": 2, "verdict": "SUPPORTS", "shown": ["Boyle"]})),
    )?;
    println!(
        "POST /verdicts   -> {}/{} correct, running accuracy {}",
        tally["correct"], tally["scored"], tally["running_accuracy"]
    );

    let missing = call(http.get(format!("{base}/v1/sessions/no-such-session")))?;
    println!("GET unknown      -> {}", missing["error"]);

    // the same API doubles as a cloze backend for batch runs
    let remote = RemoteBackend::new(base.clone(), None)?;
    let top = remote.query_topk("Tim Roth was born in [MASK]", 1)?;
    println!("RemoteBackend    -> {} ({})", top[0].token, top[0].score);
    Ok(())
}
