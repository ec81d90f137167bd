//! Annotation campaign: pair assignment, vote validation and the HTTP API.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::crowd::{load_votes, Choice, PairKey, RawVote};
use crate::pose::{PoseExample, Skeleton};
use crate::{Error, Result};

pub const DEFAULT_VOTES_PER_PAIR: usize = 5;
pub const DEFAULT_MIN_DELAY_MS: u64 = 800;
pub const DEFAULT_RESERVATION_MS: u64 = 10 * 60 * 1000;
/// Marker colours for joint `j` and joint `k` of a task.
pub const PAIR_COLORS: [&str; 2] = ["#d62728", "#1f77b4"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub votes_per_pair: usize,
    pub min_delay_ms: u64,
    pub reservation_ms: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            votes_per_pair: DEFAULT_VOTES_PER_PAIR,
            min_delay_ms: DEFAULT_MIN_DELAY_MS,
            reservation_ms: DEFAULT_RESERVATION_MS,
        }
    }
}

/// What an annotator is shown for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub token: String,
    pub image_id: String,
    pub j: usize,
    pub k: usize,
    pub joint_names: [String; 2],
    pub colors: [String; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    /// Root-centred 2D keypoints so imageless campaigns can draw a stick figure.
    pub joints2d: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
    pub bones: Vec<[usize; 2]>,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRequest {
    pub token: String,
    pub choice: Choice,
    pub elapsed_ms: u64,
    /// Optional; when present it must match the annotator holding the token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteAck {
    pub image_id: String,
    pub j: usize,
    pub k: usize,
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total_pairs: usize,
    pub pairs_complete: usize,
    pub votes_collected: usize,
    pub active_reservations: usize,
    pub per_annotator: BTreeMap<String, usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum VoteRejection {
    #[error("token is unknown, expired or already used")]
    StaleToken,
    #[error("token belongs to another annotator")]
    ForeignToken,
    #[error("answered after {elapsed_ms} ms, minimum is {min_delay_ms} ms")]
    TooFast { elapsed_ms: u64, min_delay_ms: u64 },
    #[error(transparent)]
    Storage(#[from] Error),
}

#[derive(Debug)]
struct Slot {
    key: PairKey,
    j: usize,
    k: usize,
    example: usize,
    voters: HashSet<String>,
    reserved: usize,
}

#[derive(Debug, Clone)]
struct Reservation {
    slot: usize,
    annotator: String,
    expires_at: u64,
}

#[derive(Debug)]
struct ImageView {
    joints2d: Vec<[f64; 2]>,
    visibility: Vec<bool>,
    image_url: Option<String>,
}

/// Campaign state. All mutation goes through `&mut self`; the server wraps it
/// in a mutex so assignment and vote append are serialized.
#[derive(Debug)]
pub struct Campaign {
    config: CampaignConfig,
    images: Vec<ImageView>,
    joint_names: Vec<String>,
    bones: Vec<[usize; 2]>,
    slots: Vec<Slot>,
    by_key: HashMap<PairKey, usize>,
    reservations: HashMap<String, Reservation>,
    by_annotator: HashMap<String, String>,
    per_annotator: BTreeMap<String, usize>,
    votes_collected: usize,
    next_token: u64,
    /// Random per-process prefix so tokens issued before a restart never
    /// match new reservations.
    token_prefix: u64,
    log: Option<File>,
}

impl Campaign {
    /// One slot per annotated pair of every example. Pair orientation is kept
    /// as stored in the dataset.
    pub fn new(examples: &[PoseExample], skeleton: Option<&Skeleton>, config: CampaignConfig) -> Result<Self> {
        if config.votes_per_pair == 0 {
            return Err(Error::InvalidInput("votes per pair must be at least 1".into()));
        }
        let mut images = Vec::with_capacity(examples.len());
        let mut slots = Vec::new();
        let mut by_key = HashMap::new();
        let mut ids = HashSet::new();
        for (e, ex) in examples.iter().enumerate() {
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::validation(format!("duplicate example id {}", ex.id)));
            }
            images.push(ImageView {
                joints2d: ex.joints2d.coords().to_vec(),
                visibility: ex.joints2d.visibility().to_vec(),
                image_url: ex.image_url.clone(),
            });
            for p in ex.annotations.pairs() {
                let key = PairKey { image_id: ex.id.clone(), a: p.j.min(p.k), b: p.j.max(p.k) };
                by_key.insert(key.clone(), slots.len());
                slots.push(Slot { key, j: p.j, k: p.k, example: e, voters: HashSet::new(), reserved: 0 });
            }
        }
        let num_joints = examples.first().map_or(0, |e| e.num_joints());
        let (joint_names, bones) = match skeleton {
            Some(s) if s.num_joints() == num_joints => {
                (s.joint_names().to_vec(), s.bones().iter().map(|b| [b.a, b.b]).collect())
            }
            _ => ((0..num_joints).map(|i| format!("joint {i}")).collect(), Vec::new()),
        };
        Ok(Self {
            config,
            images,
            joint_names,
            bones,
            slots,
            by_key,
            reservations: HashMap::new(),
            by_annotator: HashMap::new(),
            per_annotator: BTreeMap::new(),
            votes_collected: 0,
            next_token: 0,
            token_prefix: rand::random(),
            log: None,
        })
    }

    /// Replays any votes already in `path`, then appends every accepted vote
    /// to it.
    pub fn with_log(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            for (i, vote) in load_votes(path)?.into_iter().enumerate() {
                self.replay(vote).map_err(|e| e.at_line(i + 1))?;
            }
        }
        self.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(self)
    }

    /// Applies an already-logged vote without writing it again.
    pub fn replay(&mut self, vote: RawVote) -> Result<()> {
        let key = PairKey { image_id: vote.image_id.clone(), a: vote.j.min(vote.k), b: vote.j.max(vote.k) };
        let slot = *self
            .by_key
            .get(&key)
            .ok_or_else(|| Error::validation(format!("vote for unknown pair {} ({}, {})", key.image_id, key.a, key.b)))?;
        let s = &self.slots[slot];
        if s.voters.contains(&vote.annotator_id) {
            return Err(Error::validation(format!("{} voted twice on {} ({}, {})", vote.annotator_id, key.image_id, key.a, key.b)));
        }
        if s.voters.len() >= self.config.votes_per_pair {
            return Err(Error::validation(format!("pair {} ({}, {}) already has enough votes", key.image_id, key.a, key.b)));
        }
        self.record(slot, &vote.annotator_id);
        Ok(())
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn num_pairs(&self) -> usize {
        self.slots.len()
    }

    fn record(&mut self, slot: usize, annotator: &str) {
        self.slots[slot].voters.insert(annotator.to_string());
        *self.per_annotator.entry(annotator.to_string()).or_default() += 1;
        self.votes_collected += 1;
    }

    fn release(&mut self, token: &str) -> Option<Reservation> {
        let r = self.reservations.remove(token)?;
        self.slots[r.slot].reserved -= 1;
        self.by_annotator.remove(&r.annotator);
        Some(r)
    }

    fn expire(&mut self, now_ms: u64) {
        let stale: Vec<String> =
            self.reservations.iter().filter(|(_, r)| r.expires_at <= now_ms).map(|(t, _)| t.clone()).collect();
        for t in stale {
            self.release(&t);
        }
    }

    fn task(&self, token: &str, r: &Reservation) -> Task {
        let s = &self.slots[r.slot];
        let img = &self.images[s.example];
        let name = |i: usize| self.joint_names.get(i).cloned().unwrap_or_else(|| format!("joint {i}"));
        Task {
            token: token.to_string(),
            image_id: s.key.image_id.clone(),
            j: s.j,
            k: s.k,
            joint_names: [name(s.j), name(s.k)],
            colors: PAIR_COLORS.map(String::from),
            image_url: img.image_url.clone(),
            joints2d: img.joints2d.clone(),
            visibility: img.visibility.clone(),
            bones: self.bones.clone(),
            expires_at: r.expires_at,
        }
    }

    /// Least-covered pair this annotator has not voted on, counting live
    /// reservations as coverage; ties go to dataset order. An annotator that
    /// already holds a live reservation gets the same task back.
    pub fn next_task(&mut self, annotator: &str, now_ms: u64) -> Option<Task> {
        self.expire(now_ms);
        if let Some(token) = self.by_annotator.get(annotator) {
            return Some(self.task(token, &self.reservations[token]));
        }
        let target = self.config.votes_per_pair;
        let slot = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.voters.len() + s.reserved < target && !s.voters.contains(annotator))
            .min_by_key(|(i, s)| (s.voters.len() + s.reserved, *i))
            .map(|(i, _)| i)?;
        let token = format!("{:016x}{:08x}-{slot}", self.token_prefix, self.next_token);
        self.next_token += 1;
        let r = Reservation {
            slot,
            annotator: annotator.to_string(),
            expires_at: now_ms.saturating_add(self.config.reservation_ms),
        };
        self.slots[slot].reserved += 1;
        self.by_annotator.insert(annotator.to_string(), token.clone());
        let task = self.task(&token, &r);
        self.reservations.insert(token, r);
        Some(task)
    }

    /// Validates the token and delay, appends the vote to the log, then
    /// updates state. A too-fast answer keeps the reservation so the
    /// annotator can retry.
    pub fn submit_vote(&mut self, req: &VoteRequest, now_ms: u64) -> std::result::Result<VoteAck, VoteRejection> {
        self.expire(now_ms);
        let r = self.reservations.get(&req.token).ok_or(VoteRejection::StaleToken)?;
        if req.annotator.as_ref().is_some_and(|a| *a != r.annotator) {
            return Err(VoteRejection::ForeignToken);
        }
        if req.elapsed_ms < self.config.min_delay_ms {
            return Err(VoteRejection::TooFast { elapsed_ms: req.elapsed_ms, min_delay_ms: self.config.min_delay_ms });
        }
        let slot = r.slot;
        let s = &self.slots[slot];
        let vote = RawVote {
            image_id: s.key.image_id.clone(),
            j: s.j,
            k: s.k,
            annotator_id: r.annotator.clone(),
            choice: req.choice,
            timestamp: now_ms,
            elapsed_ms: req.elapsed_ms,
        };
        if let Some(log) = self.log.as_mut() {
            let mut line = serde_json::to_vec(&vote).map_err(Error::from)?;
            line.push(b'\n');
            log.write_all(&line).and_then(|_| log.flush()).map_err(Error::from)?;
        }
        self.release(&req.token);
        self.record(slot, &vote.annotator_id);
        Ok(VoteAck { image_id: vote.image_id, j: vote.j, k: vote.k, votes: self.slots[slot].voters.len() })
    }

    pub fn progress(&self) -> Progress {
        Progress {
            total_pairs: self.slots.len(),
            pairs_complete: self.slots.iter().filter(|s| s.voters.len() >= self.config.votes_per_pair).count(),
            votes_collected: self.votes_collected,
            active_reservations: self.reservations.len(),
            per_annotator: self.per_annotator.clone(),
        }
    }
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64))
}

#[derive(Clone)]
pub struct AppState {
    pub campaign: Arc<Mutex<Campaign>>,
    pub clock: Clock,
}

impl AppState {
    pub fn new(campaign: Campaign, clock: Clock) -> Self {
        Self { campaign: Arc::new(Mutex::new(campaign)), clock }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Campaign> {
        self.campaign.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    annotator: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    retry_after_ms: Option<u64>,
}

async fn get_task(State(app): State<AppState>, Query(q): Query<TaskQuery>) -> Response {
    if q.annotator.trim().is_empty() {
        let body = ErrorBody { error: "annotator id is empty".into(), retry_after_ms: None };
        return (StatusCode::BAD_REQUEST, Json(body)).into_response();
    }
    let now = (app.clock)();
    match app.lock().next_task(&q.annotator, now) {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn post_vote(State(app): State<AppState>, Json(req): Json<VoteRequest>) -> Response {
    let now = (app.clock)();
    let result = app.lock().submit_vote(&req, now);
    match result {
        Ok(ack) => Json(ack).into_response(),
        Err(e @ VoteRejection::TooFast { elapsed_ms, min_delay_ms }) => {
            let wait = min_delay_ms - elapsed_ms;
            let body = ErrorBody { error: e.to_string(), retry_after_ms: Some(wait) };
            let secs = wait.div_ceil(1000).to_string();
            (StatusCode::TOO_EARLY, [(header::RETRY_AFTER, secs)], Json(body)).into_response()
        }
        Err(e @ (VoteRejection::StaleToken | VoteRejection::ForeignToken)) => {
            (StatusCode::CONFLICT, Json(ErrorBody { error: e.to_string(), retry_after_ms: None })).into_response()
        }
        Err(VoteRejection::Storage(e)) => {
            log::error!("vote log write failed: {e}");
            let body = ErrorBody { error: "vote could not be stored".into(), retry_after_ms: None };
            (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response()
        }
    }
}

async fn get_progress(State(app): State<AppState>) -> Json<Progress> {
    Json(app.lock().progress())
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

/// API routes plus the annotation page. With `static_dir` the page assets are
/// served from disk instead of the built-in page.
pub fn router(app: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/task", get(get_task))
        .route("/api/vote", post(post_vote))
        .route("/api/progress", get(get_progress))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

pub async fn serve(addr: SocketAddr, app: AppState, static_dir: Option<PathBuf>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

const INDEX_HTML: &str = r##"<!doctype html>
<html lang="en">
<head><meta charset="utf-8"><title>Which point is closer?</title>
<style>
body { font-family: sans-serif; max-width: 720px; margin: 2em auto; }
canvas { border: 1px solid #ccc; }
button { font-size: 1.1em; margin: .5em; padding: .4em 1em; }
</style></head>
<body>
<h1>Which point is closer to the camera?</h1>
<p id="status">Loading...</p>
<canvas id="view" width="480" height="480"></canvas>
<div><button id="b1" disabled>1: red</button><button id="b2" disabled>2: blue</button></div>
<script>
const who = new URLSearchParams(location.search).get("annotator") || "anon-" + Math.random().toString(36).slice(2, 8);
let task = null, shown = 0;
const minDelay = 800;
function draw(t) {
  const c = document.getElementById("view").getContext("2d");
  c.clearRect(0, 0, 480, 480);
  const xs = t.joints2d.map(p => p[0]), ys = t.joints2d.map(p => p[1]);
  const span = Math.max(...xs) - Math.min(...xs), tall = Math.max(...ys) - Math.min(...ys);
  const s = 400 / Math.max(span, tall, 1e-9);
  const cx = (Math.max(...xs) + Math.min(...xs)) / 2, cy = (Math.max(...ys) + Math.min(...ys)) / 2;
  const at = i => [240 + s * (t.joints2d[i][0] - cx), 240 + s * (t.joints2d[i][1] - cy)];
  c.strokeStyle = "#888"; c.lineWidth = 3;
  for (const [a, b] of t.bones) { c.beginPath(); c.moveTo(...at(a)); c.lineTo(...at(b)); c.stroke(); }
  [[t.j, t.colors[0]], [t.k, t.colors[1]]].forEach(([i, col]) => {
    c.fillStyle = col; c.beginPath(); c.arc(...at(i), 9, 0, 2 * Math.PI); c.fill();
  });
}
async function next() {
  const r = await fetch("/api/task?annotator=" + encodeURIComponent(who));
  if (r.status === 204) { document.getElementById("status").textContent = "All done, thank you."; return; }
  task = await r.json(); draw(task); shown = performance.now();
  document.getElementById("status").textContent = `${task.joint_names[0]} (red) or ${task.joint_names[1]} (blue)?`;
  setButtons(false); setTimeout(() => setButtons(true), minDelay);
}
function setButtons(on) { ["b1", "b2"].forEach(id => document.getElementById(id).disabled = !on); }
async function vote(choice) {
  if (!task || document.getElementById("b1").disabled) return;
  setButtons(false);
  const elapsed_ms = Math.round(performance.now() - shown);
  const r = await fetch("/api/vote", { method: "POST", headers: { "content-type": "application/json" },
    body: JSON.stringify({ token: task.token, choice, elapsed_ms, annotator: who }) });
  if (r.status === 425) { setButtons(true); return; }
  next();
}
document.getElementById("b1").onclick = () => vote("j_closer");
document.getElementById("b2").onclick = () => vote("k_closer");
document.addEventListener("keydown", e => { if (e.key === "1") vote("j_closer"); if (e.key === "2") vote("k_closer"); });
next();
</script>
</body>
</html>
"##;
