use std::time::{Duration, Instant};

use fresh::buffers::{FeedbackSource, FeedbackTarget, Label};
use fresh::envs::EnvId;
use fresh::service::FeedbackServer;
use fresh::trainer::{FeedbackSourceKind, TrainRunConfig, Trainer};
use serde_json::{json, Value};

struct Client {
    base: String,
}

impl Client {
    fn call(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        let req = ureq::request(method, &format!("{}{path}", self.base)).timeout(Duration::from_secs(20));
        let result = match body {
            Some(b) => req.send_string(&b.to_string()),
            None => req.call(),
        };
        let resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => panic!("{method} {path}: {e}"),
        };
        let status = resp.status();
        let text = resp.into_string().unwrap();
        (status, if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() })
    }

    fn get(&self, path: &str) -> (u16, Value) {
        self.call("GET", path, None)
    }

    fn label(&self, step: usize, target: &str, label: &str) -> (u16, Value) {
        self.call("POST", "/api/feedback", Some(json!({ "step_index": step, "target": target, "label": label })))
    }
}

fn interactive_config() -> TrainRunConfig {
    let mut c = TrainRunConfig::for_env(EnvId::GateRun);
    c.feedback_source = FeedbackSourceKind::Interactive;
    c.n_i = 3;
    c.m_i = Some(5);
    c.initial_fnn_epochs = 2;
    c.fnn.heads_action = 2;
    c.fnn.heads_state = 2;
    c.oracle.session_budget = 5;
    c
}

fn wait_open(client: &Client) -> Value {
    let start = Instant::now();
    loop {
        let (status, s) = client.get("/api/session");
        assert_eq!(status, 200);
        if s["open"] == json!(true) {
            return s;
        }
        assert!(start.elapsed() < Duration::from_secs(30), "session never opened");
        std::thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn labels_round_trip_into_the_feedback_buffer() {
    let config = interactive_config();
    let names: Vec<String> = ["noop", "left", "right"].map(String::from).to_vec();
    let server = FeedbackServer::start("127.0.0.1:0", EnvId::GateRun, names, Duration::from_secs(60)).unwrap();
    let client = Client { base: format!("http://{}", server.addr()) };

    let (status, idle) = client.get("/api/session");
    assert_eq!(status, 200);
    assert_eq!(idle["open"], json!(false));
    assert_eq!(idle["session_id"], json!(""));
    assert_eq!(client.get("/api/trajectory/current").0, 409);
    assert_eq!(client.label(0, "state", "good").0, 409);
    assert_eq!(client.call("POST", "/api/trajectory/skip", None).0, 409);

    let mut handler = server.handler();
    let worker = std::thread::spawn(move || {
        let mut trainer = Trainer::new(config).unwrap();
        trainer.run_until(0, Some(&mut handler)).unwrap();
        trainer
    });

    let session = wait_open(&client);
    assert_eq!(session["session_id"], json!("session-1"));
    assert_eq!(session["env_id"], json!("gaterun"));
    assert_eq!(session["action_names"], json!(["noop", "left", "right"]));
    assert_eq!(session["budget"], json!(5));
    assert_eq!(session["labels_collected"], json!(0));

    let (status, first) = client.get("/api/trajectory/current");
    assert_eq!(status, 200);
    let steps = first["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 40);
    let total: f64 = steps.iter().map(|s| s["env_reward"].as_f64().unwrap()).sum();
    assert_eq!(total, first["total_return"].as_f64().unwrap());
    for (i, s) in steps.iter().enumerate() {
        assert_eq!(s["index"], json!(i));
        assert!(s["render"]["cells"].is_array() && s["next_render"]["cells"].is_array());
    }

    assert_eq!(client.call("POST", "/api/feedback", Some(json!("not an object"))).0, 400);
    assert_eq!(client.label(400, "state", "good").0, 400);
    assert_eq!(client.label(0, "trajectory", "good").0, 400);
    assert_eq!(client.label(0, "state", "great").0, 400);

    let (status, r) = client.label(0, "state", "good");
    assert_eq!((status, r["labels_collected"].clone()), (200, json!(1)));
    let (_, r) = client.label(0, "state", "bad");
    assert_eq!(r["labels_collected"], json!(1));
    assert!(r["warning"].is_string());
    assert_eq!(client.label(1, "action", "good").1["labels_collected"], json!(2));
    let (status, r) = client.label(2, "action", "not_sure");
    assert_eq!((status, r["labels_collected"].clone()), (200, json!(2)));
    assert!(r.get("warning").is_none());
    let (_, r) = client.label(1, "action", "not_sure");
    assert_eq!(r["labels_collected"], json!(1));
    assert!(r["warning"].is_string());
    assert_eq!(client.label(1, "action", "bad").1["labels_collected"], json!(2));

    let (status, r) = client.call("POST", "/api/trajectory/skip", None);
    assert_eq!((status, r["accepted"].clone()), (200, json!(true)));
    let (status, second) = client.get("/api/trajectory/current");
    assert_eq!(status, 200);
    assert_ne!(second["trajectory_id"], first["trajectory_id"]);
    assert_eq!(client.get("/api/session").1["labels_collected"], json!(2));

    assert_eq!(client.label(0, "state", "good").0, 200);
    assert_eq!(client.label(3, "action", "good").0, 200);
    assert_eq!(client.label(5, "state", "bad").0, 200);
    assert_eq!(client.label(6, "state", "bad").0, 409);

    let trainer = worker.join().unwrap();
    let records = trainer.feedback().records();
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|r| r.source == FeedbackSource::Human));
    let expected = [
        (&first, 0, FeedbackTarget::State, Label::Bad),
        (&first, 1, FeedbackTarget::Action, Label::Bad),
        (&second, 0, FeedbackTarget::State, Label::Good),
        (&second, 3, FeedbackTarget::Action, Label::Good),
        (&second, 5, FeedbackTarget::State, Label::Bad),
    ];
    for (record, (traj, index, target, label)) in records.iter().zip(expected) {
        let id = traj["trajectory_id"].as_u64().unwrap();
        let stored = &trainer.replay().transitions().filter(|t| t.trajectory_id == id).nth(index).unwrap();
        assert_eq!((record.target, record.label), (target, label));
        match target {
            FeedbackTarget::State => {
                assert_eq!(record.observation, stored.next_observation);
                assert_eq!(record.action, None);
            }
            FeedbackTarget::Action => {
                assert_eq!(record.observation, stored.observation);
                assert_eq!(record.action, Some(stored.action));
                assert_eq!(json!(stored.action), traj["steps"][index]["action"]);
            }
        }
    }

    let (_, closed) = client.get("/api/session");
    assert_eq!(closed["open"], json!(false));
    assert_eq!(closed["session_id"], json!("session-1"));
    assert_eq!(client.get("/api/trajectory/current").0, 409);
    assert_eq!(client.label(0, "state", "good").0, 409);
}

#[test]
fn cors_and_unknown_routes() {
    let server = FeedbackServer::start("127.0.0.1:0", EnvId::AimLine, vec!["a".into(), "b".into()], Duration::from_secs(1)).unwrap();
    let base = format!("http://{}", server.addr());
    let resp = ureq::request("OPTIONS", &format!("{base}/api/feedback")).call().unwrap();
    assert_eq!(resp.status(), 204);
    assert_eq!(resp.header("Access-Control-Allow-Origin"), Some("*"));
    match ureq::get(&format!("{base}/api/nothing")).call() {
        Err(ureq::Error::Status(404, r)) => assert_eq!(r.header("Access-Control-Allow-Origin"), Some("*")),
        other => panic!("expected 404, got {other:?}"),
    }
}

#[test]
fn idle_session_times_out_with_what_it_has() {
    let mut config = interactive_config();
    config.env_id = EnvId::AimLine;
    config.m_i = Some(3);
    let names: Vec<String> = ["noop", "up", "down", "fire"].map(String::from).to_vec();
    let server = FeedbackServer::start("127.0.0.1:0", EnvId::AimLine, names, Duration::from_millis(300)).unwrap();
    let client = Client { base: format!("http://{}", server.addr()) };
    let mut handler = server.handler();
    let worker = std::thread::spawn(move || {
        let mut trainer = Trainer::new(config).unwrap();
        trainer.run_until(0, Some(&mut handler)).unwrap();
        trainer
    });
    wait_open(&client);
    assert_eq!(client.label(0, "action", "good").0, 200);
    let trainer = worker.join().unwrap();
    assert_eq!(trainer.feedback().len(), 1);
}
