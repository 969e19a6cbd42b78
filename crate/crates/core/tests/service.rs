mod common;

use std::path::Path;
use std::sync::Arc;
use std::thread;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::oneshot;

use clozecheck::cloze::{load_mock_table, ClozeBackend, MockBackend, RemoteBackend, Vocabulary};
use clozecheck::dataset::load_claimset;
use clozecheck::masking::LexiconNer;
use clozecheck::zeroshot::normalize_token;
use clozecheck::service::{self, ServiceState};
use clozecheck::session::SessionStore;

use common::fixture;

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl Server {
    fn start(sessions: SessionStore) -> Self {
        let (table, _) = load_mock_table(fixture("cloze_mock.jsonl")).unwrap();
        let ner = LexiconNer::load(fixture("ner_lexicon.jsonl")).unwrap();
        let (claims, _) = load_claimset(fixture("claims.jsonl"), "examples").unwrap();
        let state = ServiceState::new(Arc::new(MockBackend::new(table, None)), Arc::new(ner), sessions)
            .with_split(claims);
        let (stop_tx, stop_rx) = oneshot::channel();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let thread = thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                service::serve_with_shutdown(listener, Arc::new(state), async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Server {
            base: format!("http://{addr}"),
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1{path}", self.base)
    }

    fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            t.join().unwrap();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn get(c: &Client, url: &str) -> (StatusCode, Value) {
    let r = c.get(url).send().unwrap();
    (r.status(), r.json().unwrap())
}

fn post(c: &Client, url: &str, body: Value) -> (StatusCode, Value) {
    let r = c.post(url).json(&body).send().unwrap();
    (r.status(), r.json().unwrap())
}

fn new_session(c: &Client, s: &Server) -> String {
    let (st, v) = post(c, &s.url("/sessions"), json!({}));
    assert_eq!(st, StatusCode::OK);
    v["session_id"].as_str().unwrap().to_string()
}

#[test]
fn claims_are_paged_and_carry_no_gold() {
    let s = Server::start(SessionStore::in_memory());
    let c = Client::new();
    let (st, v) = get(&c, &s.url("/claims?offset=1&limit=2"));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["total"], 5);
    let ids: Vec<u64> = v["claims"].as_array().unwrap().iter().map(|c| c["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, [2, 3]);
    assert!(!v.to_string().contains("SUPPORTS"));

    let (st, v) = get(&c, &s.url("/claims/4"));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["text"], "Chile is a country.");
    assert_eq!(v["tokens"].as_array().unwrap().len(), 5);

    let (st, v) = get(&c, &s.url("/claims/99"));
    assert_eq!((st, v["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (st, v) = get(&c, &s.url("/claims?limit=0"));
    assert_eq!((st, v["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_input")));
}

#[test]
fn last_entity_mask_hides_the_surname() {
    let s = Server::start(SessionStore::in_memory());
    let c = Client::new();
    let (st, v) = post(&c, &s.url("/mask"), json!({"claim_id": 2, "strategy": "LAST_ENTITY"}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["masked_text"], "The Beach's director was Danny [MASK].");
    assert_eq!(v["gold_token"], "Boyle");
    assert!(v["source"]["gold_label"].is_null());

    let (st, v) = post(&c, &s.url("/mask"), json!({"claim_id": 4, "strategy": "MANUAL", "token_index": 3}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["masked_text"], "Chile is a [MASK].");

    let (st, v) = post(&c, &s.url("/mask"), json!({"claim_id": 4, "strategy": "MANUAL", "token_index": 999}));
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "token_index_out_of_range");
    let (st, v) = post(&c, &s.url("/mask"), json!({"claim_id": 4, "strategy": "SIDEWAYS"}));
    assert_eq!((st, v["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_input")));
}

#[test]
fn predict_returns_ranked_fillers() {
    let s = Server::start(SessionStore::in_memory());
    let c = Client::new();
    let (st, v) = post(&c, &s.url("/predict"), json!({"masked_text": "The Beach's director was Danny [MASK].", "k": 2}));
    assert_eq!(st, StatusCode::OK);
    let preds = v["predictions"].as_array().unwrap();
    assert_eq!(preds.len(), 2);
    assert_eq!(preds[0]["token"], "Boyle");

    let (st, v) = post(&c, &s.url("/predict"), json!({"masked_text": "Nobody [MASK].", "k": 1}));
    assert_eq!((st, v["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("no_prediction")));
    let (st, v) = post(&c, &s.url("/predict"), json!({"masked_text": "no mask", "k": 1}));
    assert_eq!((st, v["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_input")));
    let r = c.post(s.url("/predict")).body("{not json").send().unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    assert_eq!(r.json::<Value>().unwrap()["error"]["code"], "malformed_json");
}

#[test]
fn verdicts_update_the_running_accuracy() {
    let s = Server::start(SessionStore::in_memory());
    let c = Client::new();
    let id = new_session(&c, &s);
    let url = s.url(&format!("/sessions/{id}/verdicts"));
    let (st, v) = post(&c, &url, json!({"claim_id": 1, "verdict": "SUPPORTS"}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!((v["correct"].as_u64(), v["scored"].as_u64()), (Some(1), Some(1)));
    assert_eq!(v["running_accuracy"], 1.0);
    let (_, v) = post(&c, &url, json!({"claim_id": 3, "verdict": "refutes", "token_index": 5, "shown": ["London"]}));
    assert_eq!(v["running_accuracy"], 0.5);
    assert_eq!(v["records"][1]["shown"][0], "London");

    let (st, v) = post(&c, &url, json!({"claim_id": 1, "verdict": "MAYBE"}));
    assert_eq!((st, v["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("unknown_label")));
    let (_, v) = get(&c, &s.url(&format!("/sessions/{id}")));
    assert_eq!(v["records"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_session_is_not_found() {
    let s = Server::start(SessionStore::in_memory());
    let c = Client::new();
    let (st, v) = get(&c, &s.url("/sessions/nope"));
    assert_eq!((st, v["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (st, _) = post(&c, &s.url("/sessions/nope/verdicts"), json!({"claim_id": 1, "verdict": "NEI"}));
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = get(&c, &s.url("/nothing-here"));
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[test]
fn restarting_with_the_same_store_preserves_tallies() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new();
    let s = Server::start(SessionStore::open(dir.path()).unwrap());
    let id = new_session(&c, &s);
    post(&c, &s.url(&format!("/sessions/{id}/verdicts")), json!({"claim_id": 1, "verdict": "SUPPORTS"}));
    post(&c, &s.url(&format!("/sessions/{id}/verdicts")), json!({"claim_id": 5, "verdict": "REFUTES"}));
    s.stop();

    let s = Server::start(SessionStore::open(dir.path()).unwrap());
    let (st, v) = get(&c, &s.url(&format!("/sessions/{id}")));
    assert_eq!(st, StatusCode::OK);
    assert_eq!((v["correct"].as_u64(), v["scored"].as_u64()), (Some(1), Some(2)));
    assert!(Path::new(&dir.path().join(format!("{id}.jsonl"))).exists());
}

#[test]
fn concurrent_verdicts_on_one_session_are_all_counted() {
    let s = Server::start(SessionStore::in_memory());
    let c = Client::new();
    let id = new_session(&c, &s);
    let url = s.url(&format!("/sessions/{id}/verdicts"));
    thread::scope(|scope| {
        for t in 0..8 {
            let (c, url) = (c.clone(), url.clone());
            scope.spawn(move || {
                for i in 0..10 {
                    let verdict = if (t + i) % 2 == 0 { "SUPPORTS" } else { "REFUTES" };
                    let (st, _) = post(&c, &url, json!({"claim_id": 1, "verdict": verdict}));
                    assert_eq!(st, StatusCode::OK);
                }
            });
        }
    });
    let (_, v) = get(&c, &s.url(&format!("/sessions/{id}")));
    assert_eq!(v["records"].as_array().unwrap().len(), 80);
    assert_eq!(v["correct"], 40);
    assert_eq!(v["running_accuracy"], 0.5);
}

#[test]
fn remote_backend_talks_to_the_service() {
    let s = Server::start(SessionStore::in_memory());
    let vocab: Vocabulary = ["boyle"].into_iter().collect();
    let remote = RemoteBackend::new(s.base.clone(), Some(vocab)).unwrap();
    let preds = remote.query_topk("Kuching is the capital of [MASK].", 3).unwrap();
    assert_eq!(preds[0].token, "Sarawak");
    assert_eq!(preds[0].rank, 1);
    assert_eq!(preds.len(), 3);
    assert!(matches!(
        remote.query_topk("Nobody [MASK].", 1),
        Err(clozecheck::Error::NoPrediction { .. })
    ));
    assert!(remote.vocab_contains("Boyle."));
    assert!(!remote.vocab_contains("Sarawak"));
}

/// Scripted probe: a participant masks each claim's last token, reads the
/// top prediction and answers SUPPORTS only when it restores the claim.
#[test]
fn scripted_probe_over_the_example_claims() {
    let s = Server::start(SessionStore::in_memory());
    let c = Client::new();
    let id = new_session(&c, &s);
    let mut last = Value::Null;
    for claim_id in 1..=5 {
        let (_, claim) = get(&c, &s.url(&format!("/claims/{claim_id}")));
        let index = claim["tokens"]
            .as_array()
            .unwrap()
            .iter()
            .rev()
            .find(|t| t["punctuation"] == false)
            .unwrap()["index"]
            .as_u64()
            .unwrap();
        let (st, masked) = post(
            &c,
            &s.url("/mask"),
            json!({"claim_id": claim_id, "strategy": "MANUAL", "token_index": index}),
        );
        assert_eq!(st, StatusCode::OK);
        let (st, preds) = post(&c, &s.url("/predict"), json!({"masked_text": masked["masked_text"], "k": 3}));
        assert_eq!(st, StatusCode::OK);
        let shown: Vec<String> = preds["predictions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["token"].as_str().unwrap().to_string())
            .collect();
        let gold = masked["gold_token"].as_str().unwrap();
        let verdict = if normalize_token(&shown[0]) == normalize_token(gold) {
            "SUPPORTS"
        } else {
            "REFUTES"
        };
        let (st, v) = post(
            &c,
            &s.url(&format!("/sessions/{id}/verdicts")),
            json!({"claim_id": claim_id, "verdict": verdict, "token_index": index, "shown": shown, "masked_text": masked["masked_text"]}),
        );
        assert_eq!(st, StatusCode::OK);
        last = v;
    }
    assert_eq!(last["scored"], 5);
    assert_eq!(last["correct"], 2);
    assert_eq!(last["running_accuracy"], 0.4);
}
