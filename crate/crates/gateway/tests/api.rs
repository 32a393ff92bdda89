use std::time::{Duration, Instant};

use asafeplace_core::biofeedback::BreathFrame;
use asafeplace_core::session::cohort::{BUNDLED_PB_CONTEXT, BUNDLED_PB_REPLAY};
use asafeplace_core::session::{Action, Phase, SessionMachine};
use asafeplace_gateway::{Server, ServiceConfig};
use futures_util::StreamExt;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

struct Harness {
    server: Server,
    http: Client,
    token: Option<String>,
    _dir: tempfile::TempDir,
}

impl Harness {
    async fn new(token: Option<&str>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fixtures = dir.path().join("fixtures");
        std::fs::create_dir_all(&fixtures).unwrap();
        std::fs::write(fixtures.join("pb_replay.jsonl"), BUNDLED_PB_REPLAY).unwrap();
        let cfg = ServiceConfig {
            http_port: 0,
            records_dir: dir.path().join("records"),
            fixtures_dir: fixtures,
            auth_token: token.map(str::to_string),
            ..ServiceConfig::default()
        };
        Self {
            server: Server::spawn(cfg).await.unwrap(),
            http: Client::new(),
            token: token.map(str::to_string),
            _dir: dir,
        }
    }

    fn req(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        let r = self.http.request(method, self.server.url(path));
        match &self.token {
            Some(t) => r.bearer_auth(t),
            None => r,
        }
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .req(reqwest::Method::POST, path)
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.req(reqwest::Method::GET, path).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn create(&self, body: Value) -> String {
        let (s, v) = self.post("/sessions", body).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    async fn act(&self, id: &str, action: &str) -> (StatusCode, Value) {
        self.post(&format!("/sessions/{id}/{action}"), json!({}))
            .await
    }

    async fn phase(&self, id: &str) -> String {
        self.get(&format!("/sessions/{id}")).await.1["phase"]
            .as_str()
            .unwrap()
            .to_string()
    }

    async fn wait_for(&self, id: &str, phase: &str, limit: Duration) {
        let t0 = Instant::now();
        while self.phase(id).await != phase {
            assert!(t0.elapsed() < limit, "{id} never reached {phase}");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    async fn wait_streaming(&self, id: &str) {
        let t0 = Instant::now();
        loop {
            let (_, v) = self.get(&format!("/sessions/{id}/live")).await;
            if v["streaming"] == json!(true) {
                return;
            }
            assert!(
                t0.elapsed() < Duration::from_secs(20),
                "stream never started"
            );
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    async fn subscribe(
        &self,
        id: &str,
    ) -> tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>
    {
        let mut url = format!("ws://{}/sessions/{id}/frames", self.server.addr);
        if let Some(t) = &self.token {
            url.push_str(&format!("?token={t}"));
        }
        tokio_tungstenite::connect_async(url).await.unwrap().0
    }
}

fn pb_body(participant: &str) -> Value {
    let mut v: Value = serde_json::from_str(BUNDLED_PB_CONTEXT).unwrap();
    v["participant"] = json!(participant);
    v
}

fn nn_body(participant: &str) -> Value {
    json!({ "participant": participant, "condition": "NN" })
}

async fn next_text<S>(ws: &mut S, limit: Duration) -> Option<String>
where
    S: futures_util::Stream<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        match tokio::time::timeout(limit, ws.next()).await {
            Ok(Some(Ok(Message::Text(t)))) => return Some(t.to_string()),
            Ok(Some(Ok(_))) => continue,
            _ => return None,
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn create_then_get_echoes_condition() {
    let h = Harness::new(None).await;
    let (s, v) = h
        .post(
            "/sessions",
            json!({ "participant": "p01", "condition": "PN" }),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["condition"], "PN");
    assert_eq!(v["phase"], "setup");
    let id = v["id"].as_str().unwrap();
    let (s, got) = h.get(&format!("/sessions/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        got["record"]["condition"],
        json!({ "personalization": true, "biofeedback": false })
    );
    assert_eq!(got["record"]["participant"], "p01");
    // the same participant and seed twice is a conflict
    let (s, _) = h
        .post(
            "/sessions",
            json!({ "participant": "p01", "condition": "PN" }),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_condition_is_assigned() {
    let h = Harness::new(None).await;
    let (s, v) = h
        .post("/sessions", json!({ "participant": "p07", "seed": 3 }))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(["PB", "PN", "NB", "NN"].contains(&v["condition"].as_str().unwrap()));
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_requests_get_json_errors() {
    let h = Harness::new(None).await;
    for body in [
        json!({ "participant": "x", "condition": "ZZ" }),
        json!({ "who": 1 }),
        json!({ "participant": "a/b" }),
    ] {
        let (s, v) = h.post("/sessions", body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert!(v["error"].is_string());
    }
    let (s, _) = h
        .post(
            "/sessions",
            json!({ "participant": "r1", "condition": "NN", "replay": "../secret.jsonl" }),
        )
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_ids_are_404() {
    let h = Harness::new(None).await;
    for path in [
        "/sessions/nope",
        "/sessions/nope/live",
        "/sessions/nope/assets/script",
    ] {
        assert_eq!(h.get(path).await.0, StatusCode::NOT_FOUND, "{path}");
    }
    assert_eq!(h.act("nope", "start").await.0, StatusCode::NOT_FOUND);
    assert_eq!(h.get("/no/such/route").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn token_guards_everything_but_health() {
    let h = Harness::new(Some("s3cret")).await;
    let bare = Client::new();
    let r = bare.get(h.server.url("/health")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let r = bare.get(h.server.url("/sessions")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    let r = bare
        .get(h.server.url("/sessions"))
        .bearer_auth("wrong")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    let r = bare
        .post(h.server.url("/sessions"))
        .json(&nn_body("p01"))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    assert_eq!(h.get("/sessions").await.0, StatusCode::OK);
    let id = h.create(nn_body("p01")).await;
    // the frame stream accepts the token as a query parameter
    let mut ws = h.subscribe(&id).await;
    let msg = next_text(&mut ws, Duration::from_secs(2)).await.unwrap();
    assert!(msg.contains("inactive"));
    let unauth = format!("ws://{}/sessions/{id}/frames", h.server.addr);
    assert!(tokio_tungstenite::connect_async(unauth).await.is_err());
}

#[tokio::test(flavor = "multi_thread")]
async fn advance_past_done_is_409() {
    let h = Harness::new(None).await;
    let id = h.create(nn_body("p01")).await;
    assert_eq!(h.act(&id, "start").await.1["phase"], "s1");
    for expect in ["s2", "s3", "done"] {
        let (s, v) = h.act(&id, "advance").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["phase"], expect);
    }
    let (s, v) = h.act(&id, "advance").await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["phase"], "done");
}

/// Every (phase, action) pair: the API accepts exactly what the state
/// machine allows, and a rejection leaves the phase unchanged.
#[tokio::test(flavor = "multi_thread")]
async fn exhaustive_transition_table() {
    let h = Harness::new(None).await;
    let paths: [(Phase, &[&str]); 6] = [
        (Phase::Setup, &[]),
        (Phase::S1, &["start"]),
        (Phase::S2, &["start", "advance"]),
        (Phase::S3, &["start", "advance", "advance"]),
        (Phase::Done, &["start", "advance", "advance", "advance"]),
        (Phase::Aborted, &["start", "abort"]),
    ];
    let mut n = 0;
    for (from, path) in paths {
        for action in Action::ALL {
            n += 1;
            let id = h.create(nn_body(&format!("t{n:02}"))).await;
            for step in path {
                assert_eq!(h.act(&id, step).await.0, StatusCode::OK);
            }
            let before = serde_json::to_value(from).unwrap();
            assert_eq!(h.phase(&id).await, before.as_str().unwrap());
            let (s, v) = h.act(&id, &action.to_string()).await;
            match SessionMachine::next(from, action) {
                Some(to) => {
                    assert_eq!(s, StatusCode::OK, "{from} {action}");
                    assert_eq!(v["phase"], serde_json::to_value(to).unwrap());
                }
                None => {
                    assert_eq!(s, StatusCode::CONFLICT, "{from} {action}");
                    assert_eq!(v["phase"], before);
                    assert_eq!(h.phase(&id).await, before.as_str().unwrap());
                }
            }
        }
    }
    assert_eq!(n, 18);
}

#[tokio::test(flavor = "multi_thread")]
async fn personalized_start_without_script_is_refused() {
    let h = Harness::new(None).await;
    let id = h
        .create(json!({ "participant": "p01", "condition": "PB" }))
        .await;
    let (s, v) = h.act(&id, "start").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(h.phase(&id).await, "setup");
}

#[tokio::test(flavor = "multi_thread")]
async fn stroop_answers_only_in_s2() {
    let h = Harness::new(None).await;
    let id = h.create(nn_body("p01")).await;
    let answer = json!({ "kind": "stroop_answer", "correct": true, "rt_ms": 640 });
    h.act(&id, "start").await;
    let (s, v) = h
        .post(&format!("/sessions/{id}/events"), answer.clone())
        .await;
    assert_eq!((s, v["phase"].clone()), (StatusCode::CONFLICT, json!("s1")));
    h.act(&id, "advance").await;
    let (s, _) = h
        .post(&format!("/sessions/{id}/events"), answer.clone())
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = h
        .post(
            &format!("/sessions/{id}/events"),
            json!({ "kind": "session_end" }),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    h.act(&id, "advance").await;
    let (s, _) = h.post(&format!("/sessions/{id}/events"), answer).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let rec = h.get(&format!("/sessions/{id}")).await.1;
    let stroop = rec["record"]["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["kind"] == "stroop_answer")
        .count();
    assert_eq!(stroop, 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn assets_have_content_types() {
    let h = Harness::new(None).await;
    let nn = h.create(nn_body("p01")).await;
    let pb = h.create(pb_body("pb01")).await;
    for (id, kind, ctype) in [
        (&nn, "script", "text/plain; charset=utf-8"),
        (&nn, "panorama", "image/png"),
        (&nn, "audio", "audio/wav"),
        (&pb, "script", "text/plain; charset=utf-8"),
    ] {
        let r = h
            .req(
                reqwest::Method::GET,
                &format!("/sessions/{id}/assets/{kind}"),
            )
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), StatusCode::OK, "{id} {kind}");
        assert_eq!(r.headers()["content-type"], ctype);
        let body = r.bytes().await.unwrap();
        match kind {
            "panorama" => assert_eq!(&body[1..4], b"PNG"),
            "audio" => assert_eq!(&body[..4], b"RIFF"),
            _ => assert!(!std::str::from_utf8(&body).unwrap().contains('{')),
        }
    }
    let pb_script = h
        .req(
            reqwest::Method::GET,
            &format!("/sessions/{pb}/assets/script"),
        )
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let ctx: Value = serde_json::from_str(BUNDLED_PB_CONTEXT).unwrap();
    assert_eq!(pb_script, ctx["script"]["text"].as_str().unwrap());
    assert_eq!(
        h.get(&format!("/sessions/{nn}/assets/video")).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn export_after_two_sessions_has_two_rows() {
    let h = Harness::new(None).await;
    let r = h
        .req(reqwest::Method::GET, "/export.csv")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    for pid in ["pb01", "pb02"] {
        let mut body = pb_body(pid);
        body["replay"] = json!("pb_replay.jsonl");
        body["speed"] = json!(0.0);
        let id = h.create(body).await;
        assert_eq!(h.act(&id, "start").await.0, StatusCode::OK);
        h.wait_for(&id, "done", Duration::from_secs(60)).await;
        let v = h.get(&format!("/sessions/{id}")).await.1;
        assert_eq!(v["valid"], true, "{}", v["violations"]);
    }
    // an aborted session is listed but not exported
    let id = h.create(nn_body("p09")).await;
    h.act(&id, "start").await;
    h.act(&id, "abort").await;
    let r = h
        .req(reqwest::Method::GET, "/export.csv")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.headers()["content-type"]
        .to_str()
        .unwrap()
        .starts_with("text/csv"));
    assert!(r.headers()["x-skipped-records"]
        .to_str()
        .unwrap()
        .contains("p09"));
    let csv = r.text().await.unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let listed = h.get("/sessions").await.1;
    let sessions = listed["sessions"].as_array().unwrap();
    assert_eq!(sessions.len(), 3);
    let invalid: Vec<_> = sessions.iter().filter(|s| s["valid"] == false).collect();
    assert_eq!(invalid.len(), 1);
    assert_eq!(invalid[0]["phase"], "aborted");
}

#[tokio::test(flavor = "multi_thread")]
async fn nn_subscriber_sees_only_inactive_status() {
    let h = Harness::new(None).await;
    let mut body = nn_body("nn01");
    body["replay"] = json!("pb_replay.jsonl");
    body["auto_advance"] = json!(false);
    let id = h.create(body).await;
    h.act(&id, "start").await;
    h.act(&id, "advance").await;
    h.act(&id, "advance").await;
    assert_eq!(h.phase(&id).await, "s3");
    let mut ws = h.subscribe(&id).await;
    let t0 = Instant::now();
    let mut n = 0;
    while t0.elapsed() < Duration::from_millis(1600) {
        let Some(m) = next_text(&mut ws, Duration::from_secs(2)).await else {
            break;
        };
        let v: Value = serde_json::from_str(&m).unwrap();
        assert_eq!(v, json!({ "status": "inactive", "phase": "s3" }));
        n += 1;
    }
    assert!(n >= 3, "{n} status messages");
}

/// Wall-clock check of the PB stream: rate, schema, broadcast equality and
/// a subscriber that never reads.
#[tokio::test(flavor = "multi_thread")]
async fn pb_stream_rate_schema_and_fanout() {
    let h = Harness::new(None).await;
    let mut body = pb_body("pb01");
    body["replay"] = json!("pb_replay.jsonl");
    body["speed"] = json!(1.0);
    body["plan"] = json!({ "baseline_s": 1.0, "stress_s": 1.0, "relax_s": 60.0 });
    let id = h.create(body).await;

    // before S3 the stream only reports status
    let mut early = h.subscribe(&id).await;
    let m = next_text(&mut early, Duration::from_secs(2)).await.unwrap();
    assert_eq!(
        serde_json::from_str::<Value>(&m).unwrap()["status"],
        "inactive"
    );
    drop(early);

    assert_eq!(h.act(&id, "start").await.0, StatusCode::OK);
    h.wait_streaming(&id).await;

    // never polled: its socket buffers fill while the session keeps time
    let _stalled = h.subscribe(&id).await;
    let a = h.subscribe(&id).await;
    let b = h.subscribe(&id).await;

    let collect = |mut ws: tokio_tungstenite::WebSocketStream<_>| async move {
        let mut frames = Vec::new();
        let mut first = None;
        loop {
            let m = next_text(&mut ws, Duration::from_secs(2))
                .await
                .expect("stream stalled");
            let f = BreathFrame::from_wire(&m).unwrap_or_else(|e| panic!("{m}: {e}"));
            frames.push(f);
            let start = *first.get_or_insert_with(Instant::now);
            if start.elapsed() >= Duration::from_secs(10) {
                return (frames, start.elapsed());
            }
        }
    };
    let (ra, rb) = tokio::join!(collect(a), collect(b));
    let (fa, ela) = ra;
    let (fb, _) = rb;

    let rate = (fa.len() - 1) as f64 / ela.as_secs_f64();
    assert!(rate >= 28.0, "{rate:.2} frames/s");
    for w in fa.windows(2) {
        assert!(w[1].t > w[0].t);
    }
    let lo = fa[0].t.max(fb[0].t);
    let hi = fa.last().unwrap().t.min(fb.last().unwrap().t);
    let span = |f: &[BreathFrame]| {
        f.iter()
            .filter(|x| (lo..=hi).contains(&x.t))
            .copied()
            .collect::<Vec<_>>()
    };
    let (sa, sb) = (span(&fa), span(&fb));
    assert!(sa.len() > 250);
    assert_eq!(sa, sb);

    let live = h.get(&format!("/sessions/{id}/live")).await.1;
    let lag = live["max_lag_ms"].as_f64().unwrap();
    assert!(lag < 250.0, "driver lag {lag} ms");
    assert_eq!(h.act(&id, "abort").await.0, StatusCode::OK);
    h.server.shutdown().await.unwrap();
}

/// A client with a tiny receive window that stops reading: it loses frames,
/// while the session clock and other subscribers carry on.
#[tokio::test(flavor = "multi_thread")]
async fn stalled_client_drops_to_latest() {
    let h = Harness::new(None).await;
    let mut body = pb_body("pb01");
    body["replay"] = json!("pb_replay.jsonl");
    body["speed"] = json!(10.0);
    body["plan"] = json!({ "baseline_s": 1.0, "stress_s": 1.0, "relax_s": 100.0 });
    let id = h.create(body).await;
    h.act(&id, "start").await;
    h.wait_streaming(&id).await;

    let sock = tokio::net::TcpSocket::new_v4().unwrap();
    sock.set_recv_buffer_size(2048).unwrap();
    let tcp = sock.connect(h.server.addr).await.unwrap();
    let url = format!("ws://{}/sessions/{id}/frames", h.server.addr);
    let (mut stalled, _) = tokio_tungstenite::client_async(url, tcp).await.unwrap();
    let mut healthy = h.subscribe(&id).await;

    let t0 = Instant::now();
    let mut n = 0;
    while t0.elapsed() < Duration::from_secs(5) {
        let m = next_text(&mut healthy, Duration::from_secs(2))
            .await
            .unwrap();
        BreathFrame::from_wire(&m).unwrap();
        n += 1;
    }
    // ten times real time: about 300 frames per second
    assert!(n as f64 / t0.elapsed().as_secs_f64() >= 250.0, "{n} frames");

    let mut ts = Vec::new();
    while let Some(m) = next_text(&mut stalled, Duration::from_millis(300)).await {
        match BreathFrame::from_wire(&m) {
            Ok(f) => ts.push(f.t),
            Err(_) => break,
        }
        if ts.len() > 20_000 {
            break;
        }
    }
    assert!(ts.windows(2).all(|w| w[1] > w[0]));
    let widest = ts.windows(2).map(|w| w[1] - w[0]).max().unwrap();
    assert!(
        widest > 1000,
        "no frames were skipped (widest gap {widest} ms)"
    );
    let lag = h.get(&format!("/sessions/{id}/live")).await.1["max_lag_ms"]
        .as_f64()
        .unwrap();
    assert!(lag < 250.0, "driver lag {lag} ms");
    h.act(&id, "abort").await;
}

#[tokio::test(flavor = "multi_thread")]
async fn late_subscriber_gets_latest_frame_first() {
    let h = Harness::new(None).await;
    let mut body = pb_body("pb01");
    body["replay"] = json!("pb_replay.jsonl");
    body["plan"] = json!({ "baseline_s": 1.0, "stress_s": 1.0, "relax_s": 60.0 });
    let id = h.create(body).await;
    h.act(&id, "start").await;
    h.wait_streaming(&id).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    let mut ws = h.subscribe(&id).await;
    let t_connect = h.get(&format!("/sessions/{id}/live")).await.1["readout"]["t"]
        .as_u64()
        .unwrap();
    let first = next_text(&mut ws, Duration::from_millis(500))
        .await
        .unwrap();
    let f = BreathFrame::from_wire(&first).unwrap();
    // the first message is the newest frame, not the start of the stream
    assert!(
        t_connect.saturating_sub(f.t) < 200,
        "{} vs {t_connect}",
        f.t
    );

    // shutdown closes open streams instead of waiting on them
    let Harness { server, _dir, .. } = h;
    tokio::time::timeout(Duration::from_secs(5), server.shutdown())
        .await
        .expect("shutdown hung")
        .unwrap();
    let ended = tokio::time::timeout(Duration::from_secs(2), async {
        while let Some(Ok(m)) = ws.next().await {
            if m.is_close() {
                break;
            }
        }
    })
    .await;
    assert!(ended.is_ok());
}
