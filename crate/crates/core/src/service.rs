//! HTTP/JSON feedback console backend.
//!
//! The trainer thread blocks inside [`InteractiveHandler::run_session`] while
//! the server thread answers requests. Labels for the trajectory on screen
//! are staged until the operator skips to the next one, the budget fills, or
//! the session times out; then they are written to the feedback buffer in
//! the order they were first given.

use std::net::SocketAddr;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::Deserialize;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Response, Server};

use crate::buffers::{FeedbackSource, FeedbackTarget, Label, Trajectory};
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::trainer::{FeedbackKinds, FeedbackSession, SessionHandler};

/// Longest a request for the current trajectory waits for a skip to land.
const ADVANCE_WAIT: Duration = Duration::from_secs(5);

struct Board {
    session_seq: u64,
    open: bool,
    env_id: EnvId,
    action_names: Vec<String>,
    trajectory: Option<Trajectory>,
    staged: IndexMap<(usize, FeedbackTarget), Label>,
    committed: usize,
    budget: usize,
    kinds: FeedbackKinds,
    skip_requested: bool,
    last_activity: Instant,
}

impl Board {
    fn collected(&self) -> usize {
        self.committed + self.staged.len()
    }

    fn session_id(&self) -> String {
        if self.session_seq == 0 {
            String::new()
        } else {
            format!("session-{}", self.session_seq)
        }
    }
}

struct Shared {
    board: Mutex<Board>,
    wake: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Board> {
        self.board.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Running console server. Dropping it stops the listener thread.
pub struct FeedbackServer {
    shared: Arc<Shared>,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
    addr: SocketAddr,
    timeout: Duration,
}

impl FeedbackServer {
    /// Binds `bind` (for example `127.0.0.1:8700`; port 0 picks a free one).
    pub fn start(bind: &str, env_id: EnvId, action_names: Vec<String>, timeout: Duration) -> Result<Self> {
        let server = Server::http(bind).map_err(|e| Error::usage(format!("cannot bind {bind}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::usage(format!("{bind} is not an IP address")))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            board: Mutex::new(Board {
                session_seq: 0,
                open: false,
                env_id,
                action_names,
                trajectory: None,
                staged: IndexMap::new(),
                committed: 0,
                budget: 0,
                kinds: FeedbackKinds::Both,
                skip_requested: false,
                last_activity: Instant::now(),
            }),
            wake: Condvar::new(),
        });
        let thread = {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            std::thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    let mut body = String::new();
                    let (status, payload) = match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => route(&shared, request.method(), request.url(), &body),
                        Err(e) => (400, Some(json!({ "accepted": false, "reason": e.to_string() }))),
                    };
                    let _ = request.respond(respond(status, payload));
                }
            })
        };
        Ok(FeedbackServer { shared, server, thread: Some(thread), addr, timeout })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn handler(&self) -> InteractiveHandler {
        InteractiveHandler { shared: Arc::clone(&self.shared), timeout: self.timeout }
    }
}

impl Drop for FeedbackServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header")
}

fn respond(status: u16, payload: Option<Value>) -> Response<std::io::Cursor<Vec<u8>>> {
    let body = payload.map(|v| v.to_string()).unwrap_or_default();
    Response::from_data(body.into_bytes())
        .with_status_code(status)
        .with_header(header("Content-Type", "application/json"))
        .with_header(header("Access-Control-Allow-Origin", "*"))
        .with_header(header("Access-Control-Allow-Methods", "GET, POST, OPTIONS"))
        .with_header(header("Access-Control-Allow-Headers", "Content-Type"))
}

#[derive(Deserialize)]
struct LabelRequest {
    step_index: usize,
    target: String,
    label: String,
}

fn rejected(status: u16, reason: impl Into<String>, collected: usize) -> (u16, Option<Value>) {
    (status, Some(json!({ "accepted": false, "reason": reason.into(), "labels_collected": collected })))
}

fn route(shared: &Shared, method: &Method, url: &str, body: &str) -> (u16, Option<Value>) {
    let path = url.split('?').next().unwrap_or(url);
    match (method, path) {
        (Method::Options, _) => (204, None),
        (Method::Get, "/api/session") => {
            let b = shared.lock();
            (
                200,
                Some(json!({
                    "session_id": b.session_id(),
                    "open": b.open,
                    "env_id": b.env_id,
                    "action_names": b.action_names,
                    "labels_collected": b.collected(),
                    "budget": b.budget,
                })),
            )
        }
        (Method::Get, "/api/trajectory/current") => {
            let mut b = shared.lock();
            let deadline = Instant::now() + ADVANCE_WAIT;
            while b.open && b.skip_requested && Instant::now() < deadline {
                b = shared.wake.wait_timeout(b, ADVANCE_WAIT).unwrap_or_else(|p| p.into_inner()).0;
            }
            match (&b.trajectory, b.open) {
                (Some(t), true) => (200, Some(trajectory_payload(t, &b.action_names))),
                _ => (409, Some(json!({ "error": "no open session" }))),
            }
        }
        (Method::Post, "/api/feedback") => post_label(shared, body),
        (Method::Post, "/api/trajectory/skip") => {
            let mut b = shared.lock();
            if !b.open || b.trajectory.is_none() {
                return (409, Some(json!({ "accepted": false, "reason": "no open session" })));
            }
            b.skip_requested = true;
            b.last_activity = Instant::now();
            shared.wake.notify_all();
            (200, Some(json!({ "accepted": true })))
        }
        _ => (404, Some(json!({ "error": format!("no route for {path}") }))),
    }
}

fn trajectory_payload(t: &Trajectory, action_names: &[String]) -> Value {
    let steps: Vec<Value> = t
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            json!({
                "index": i,
                "render": s.render,
                "next_render": s.next_render,
                "action": s.action,
                "action_name": action_names.get(s.action).cloned().unwrap_or_default(),
                "env_reward": s.env_reward,
            })
        })
        .collect();
    json!({ "trajectory_id": t.trajectory_id, "total_return": t.total_return, "steps": steps })
}

fn post_label(shared: &Shared, body: &str) -> (u16, Option<Value>) {
    let mut b = shared.lock();
    let collected = b.collected();
    let req: LabelRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return rejected(400, format!("malformed request: {e}"), collected),
    };
    if !b.open {
        return rejected(409, "no open session", collected);
    }
    if b.skip_requested {
        return rejected(409, "advancing to the next trajectory", collected);
    }
    let Some(len) = b.trajectory.as_ref().map(|t| t.steps.len()) else {
        return rejected(409, "no trajectory on screen", collected);
    };
    if req.step_index >= len {
        return rejected(400, format!("step_index {} is outside 0..{len}", req.step_index), collected);
    }
    let target = match req.target.as_str() {
        "action" => FeedbackTarget::Action,
        "state" => FeedbackTarget::State,
        other => return rejected(400, format!("unknown target {other:?}"), collected),
    };
    let allowed = match target {
        FeedbackTarget::Action => b.kinds.wants_actions(),
        FeedbackTarget::State => b.kinds.wants_states(),
    };
    if !allowed {
        return rejected(400, format!("this session does not collect {} feedback", target.as_str()), collected);
    }
    let label = match req.label.as_str() {
        "good" => Some(Label::Good),
        "bad" => Some(Label::Bad),
        "not_sure" => None,
        other => return rejected(400, format!("unknown label {other:?}"), collected),
    };
    let key = (req.step_index, target);
    let mut warning = None;
    match label {
        Some(l) => {
            if let Some(old) = b.staged.get_mut(&key) {
                *old = l;
                warning = Some("replaced an earlier label for this step");
            } else if b.collected() >= b.budget {
                return rejected(409, "session budget reached", collected);
            } else {
                b.staged.insert(key, l);
            }
        }
        None => {
            if b.staged.shift_remove(&key).is_some() {
                warning = Some("withdrew an earlier label for this step");
            }
        }
    }
    b.last_activity = Instant::now();
    shared.wake.notify_all();
    let mut out = json!({ "accepted": true, "labels_collected": b.collected() });
    if let Some(w) = warning {
        out["warning"] = json!(w);
    }
    (200, Some(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Skipped,
    BudgetReached,
    TimedOut,
}

/// Fills trainer sessions with labels from the console.
pub struct InteractiveHandler {
    shared: Arc<Shared>,
    timeout: Duration,
}

impl InteractiveHandler {
    fn wait(&self) -> Outcome {
        let mut b = self.shared.lock();
        loop {
            if b.skip_requested {
                return Outcome::Skipped;
            }
            if b.collected() >= b.budget {
                return Outcome::BudgetReached;
            }
            let idle = b.last_activity.elapsed();
            if idle >= self.timeout {
                return Outcome::TimedOut;
            }
            b = self.shared.wake.wait_timeout(b, self.timeout - idle).unwrap_or_else(|p| p.into_inner()).0;
        }
    }
}

impl SessionHandler for InteractiveHandler {
    fn run_session(&mut self, session: &mut FeedbackSession<'_>) -> Result<()> {
        {
            let mut b = self.shared.lock();
            b.session_seq += 1;
            b.open = true;
            b.committed = 0;
            b.budget = session.budget();
            b.kinds = session.kinds();
            b.staged.clear();
            b.trajectory = None;
            b.last_activity = Instant::now();
        }
        log::info!("feedback session open, budget {}", session.budget());
        let result = self.fill(session);
        let mut b = self.shared.lock();
        b.open = false;
        b.trajectory = None;
        b.staged.clear();
        b.skip_requested = false;
        b.committed = session.appended();
        self.shared.wake.notify_all();
        result
    }
}

impl InteractiveHandler {
    fn fill(&mut self, session: &mut FeedbackSession<'_>) -> Result<()> {
        while session.remaining() > 0 {
            let Some(meta) = session.next_trajectory() else { break };
            let trajectory = session.materialize(meta.trajectory_id)?;
            {
                let mut b = self.shared.lock();
                b.trajectory = Some(trajectory.clone());
                b.staged.clear();
                b.skip_requested = false;
                b.committed = session.appended();
                b.last_activity = Instant::now();
                self.shared.wake.notify_all();
            }
            let outcome = self.wait();
            let staged = {
                let mut b = self.shared.lock();
                b.trajectory = None;
                std::mem::take(&mut b.staged)
            };
            for ((index, target), label) in staged {
                let step = &trajectory.steps[index];
                let (obs, action) = match target {
                    FeedbackTarget::State => (step.next_observation.clone(), None),
                    FeedbackTarget::Action => (step.observation.clone(), Some(step.action)),
                };
                session.store(target, obs, action, label, FeedbackSource::Human)?;
            }
            session.mark_reviewed(meta.trajectory_id);
            self.shared.lock().committed = session.appended();
            if outcome != Outcome::Skipped {
                if outcome == Outcome::TimedOut {
                    log::warn!("feedback session timed out with {} labels", session.appended());
                }
                break;
            }
        }
        Ok(())
    }
}
