#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use sha2::{Digest, Sha256};
use vlnmem::agent::compose_output;
use vlnmem::simulator::ActionType;

/// Local HTTP server answering every request through `handler(path, body) -> (status, body)`.
pub struct Stub {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
}

impl Stub {
    pub fn serve<F>(handler: F) -> Stub
    where
        F: Fn(&str, &[u8]) -> (u16, Vec<u8>) + Send + Sync + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let hits = Arc::new(AtomicUsize::new(0));
        let (s, h) = (server.clone(), hits.clone());
        let thread = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                h.fetch_add(1, Ordering::SeqCst);
                let mut body = Vec::new();
                let _ = req.as_reader().read_to_end(&mut body);
                let (status, out) = handler(req.url(), &body);
                let _ = req.respond(tiny_http::Response::from_data(out).with_status_code(status));
            }
        });
        Stub { url: format!("http://127.0.0.1:{port}"), hits, server, thread: Some(thread) }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Canned decide replies. The reply for a request is picked by hashing its body, so the
/// same request always gets the same reply regardless of arrival order.
pub fn recorded_responses() -> Vec<String> {
    let a = ActionType::Forward;
    vec![
        compose_output("open field ahead", "path is clear", "move ahead", a),
        compose_output("nothing recalled", "trees on the left", "keep walking", a),
        compose_output("the barn was to the left", "fence ahead", "turn left", ActionType::LeftRotate),
        compose_output("rows of crops", "clear lane", "continue", a),
        compose_output("nothing recalled", "obstacle right", "turn right", ActionType::RightRotate),
        compose_output("start area", "open ground", "go forward", a),
        compose_output("goal landmark seen", "landmark close", "stop here; subtask complete", ActionType::Stop),
    ]
}

pub fn recorded_policy_stub() -> Stub {
    let replies = recorded_responses();
    Stub::serve(move |path, body| {
        if !path.ends_with("/decide") {
            return (404, b"{}".to_vec());
        }
        let d = Sha256::digest(body);
        // weight STOP low so episodes last a while
        let idx = if d[0] < 8 { replies.len() - 1 } else { d[1] as usize % (replies.len() - 1) };
        (200, serde_json::to_vec(&serde_json::json!({ "text": replies[idx] })).unwrap())
    })
}
