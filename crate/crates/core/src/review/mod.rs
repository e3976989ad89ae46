//! Human review of weak-label candidates.
//!
//! Sessions and decisions live under `r{N}/review/` in the experiment
//! directory: one JSON file per session and an append-only
//! `decisions.jsonl` that is the source of truth for verdicts. Any process
//! can reconstruct the state of a recursion's review from those files.

pub mod http;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::ClassTaxonomy;
use crate::error::{Error, IoContext, Result, ReviewError};
use crate::weaklabel::{CandidateMeta, CandidateStore, ConfidenceStats};
use crate::util::{append_line, write_atomic};

pub const DECISIONS_FILE: &str = "decisions.jsonl";

pub fn round_dir(exp_dir: &Path, recursion: u32) -> PathBuf {
    exp_dir.join(format!("r{recursion}"))
}

pub fn candidates_dir(exp_dir: &Path, recursion: u32) -> PathBuf {
    round_dir(exp_dir, recursion).join("candidates")
}

pub fn pseudolabel_dir(exp_dir: &Path, recursion: u32) -> PathBuf {
    round_dir(exp_dir, recursion).join("pseudolabels")
}

pub fn review_dir(exp_dir: &Path, recursion: u32) -> PathBuf {
    round_dir(exp_dir, recursion).join("review")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

/// One reviewer verdict. Carries no mask data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub sample_id: String,
    pub verdict: Verdict,
    pub reviewer: String,
    /// RFC 3339.
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub sample_id: String,
    /// Foreground disagrees with the image label.
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub accepted: Vec<String>,
    pub rejected: Vec<String>,
    pub undecided: Vec<String>,
}

/// Persisted session record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFile {
    pub session_id: String,
    pub recursion_index: u32,
    pub queue: Vec<QueueItem>,
    pub status: SessionStatus,
    pub opened_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct LogLine {
    session_id: String,
    decision: ReviewDecision,
}

/// In-memory view of a session: the file plus its replayed decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewSession {
    pub file: SessionFile,
    pub decided: BTreeMap<String, ReviewDecision>,
}

impl ReviewSession {
    pub fn id(&self) -> &str {
        &self.file.session_id
    }

    pub fn is_open(&self) -> bool {
        self.file.status == SessionStatus::Open
    }

    pub fn summary(&self) -> SessionSummary {
        let mut s = SessionSummary::default();
        for item in &self.file.queue {
            match self.decided.get(&item.sample_id).map(|d| d.verdict) {
                Some(Verdict::Accept) => s.accepted.push(item.sample_id.clone()),
                Some(Verdict::Reject) => s.rejected.push(item.sample_id.clone()),
                None => s.undecided.push(item.sample_id.clone()),
            }
        }
        s
    }
}

fn session_path(exp_dir: &Path, recursion: u32, session_id: &str) -> PathBuf {
    review_dir(exp_dir, recursion).join("sessions").join(format!("{session_id}.json"))
}

/// Recursion index encoded in a session id of the form `r{N}-s{M}`.
fn parse_session_id(id: &str) -> Option<(u32, u32)> {
    let rest = id.strip_prefix('r')?;
    let (r, s) = rest.split_once("-s")?;
    Some((r.parse().ok()?, s.parse().ok()?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Replays the decision log of one recursion, grouped by session.
pub fn replay_decisions(exp_dir: &Path, recursion: u32) -> Result<BTreeMap<String, BTreeMap<String, ReviewDecision>>> {
    let path = review_dir(exp_dir, recursion).join(DECISIONS_FILE);
    let mut out: BTreeMap<String, BTreeMap<String, ReviewDecision>> = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let text = std::fs::read_to_string(&path).at(&path)?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogLine = match serde_json::from_str(line) {
            Ok(e) => e,
            // A torn final line was never acknowledged.
            Err(_) if i + 1 == text.lines().count() && !text.ends_with('\n') => break,
            Err(e) => {
                return Err(Error::Parse {
                    path,
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        };
        out.entry(entry.session_id)
            .or_default()
            .entry(entry.decision.sample_id.clone())
            .or_insert(entry.decision);
    }
    Ok(out)
}

/// All sessions recorded for a recursion, ordered by id sequence.
pub fn load_sessions(exp_dir: &Path, recursion: u32) -> Result<Vec<ReviewSession>> {
    let dir = review_dir(exp_dir, recursion).join("sessions");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut decisions = replay_decisions(exp_dir, recursion)?;
    let mut files: Vec<SessionFile> = Vec::new();
    for entry in std::fs::read_dir(&dir).at(&dir)? {
        let path = entry.at(&dir)?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            files.push(read_json(&path)?);
        }
    }
    files.sort_by_key(|f| parse_session_id(&f.session_id).map(|(_, s)| s).unwrap_or(u32::MAX));
    Ok(files
        .into_iter()
        .map(|file| {
            let decided = decisions.remove(&file.session_id).unwrap_or_default();
            ReviewSession { file, decided }
        })
        .collect())
}

/// Outcome of a recursion's review as seen by the controller.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundStatus {
    pub open_session: Option<String>,
    pub closed_sessions: usize,
    /// Accepted sample id → deciding session.
    pub accepted: BTreeMap<String, String>,
    pub rejected: BTreeSet<String>,
}

impl RoundStatus {
    /// At least one session closed and none open.
    pub fn is_complete(&self) -> bool {
        self.open_session.is_none() && self.closed_sessions > 0
    }
}

pub fn round_status(exp_dir: &Path, recursion: u32) -> Result<RoundStatus> {
    let mut st = RoundStatus::default();
    for s in load_sessions(exp_dir, recursion)? {
        if s.is_open() {
            st.open_session = Some(s.id().to_string());
            continue;
        }
        st.closed_sessions += 1;
        let summary = s.summary();
        for id in summary.accepted {
            st.accepted.insert(id, s.id().to_string());
        }
        st.rejected.extend(summary.rejected);
    }
    Ok(st)
}

/// Candidate as shown to a reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePayload {
    pub session_id: String,
    pub sample_id: String,
    /// 1-based queue position.
    pub position: usize,
    pub queue_len: usize,
    /// Grayscale PNG, base64.
    pub image_png: String,
    /// Indexed-colour PNG of the refined mask, base64.
    pub mask_png: String,
    pub image_label: Option<u8>,
    pub image_label_name: Option<String>,
    pub classes: Vec<String>,
    pub confidence: Option<ConfidenceStats>,
    pub foreground_area: usize,
    pub consistent_with_image_label: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextItem {
    Candidate(Box<CandidatePayload>),
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub sample_id: String,
    pub verdict: Verdict,
    pub reviewer: String,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub sample_id: String,
    pub verdict: Verdict,
    pub decided: usize,
    pub queue_len: usize,
    /// The same verdict had already been recorded.
    pub duplicate: bool,
}

/// File-backed review service for one experiment directory.
pub struct ReviewService {
    exp_dir: PathBuf,
    taxonomy: ClassTaxonomy,
    sessions: Mutex<HashMap<String, ReviewSession>>,
}

impl ReviewService {
    pub fn new(exp_dir: impl Into<PathBuf>, taxonomy: ClassTaxonomy) -> Self {
        Self {
            exp_dir: exp_dir.into(),
            taxonomy,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn exp_dir(&self) -> &Path {
        &self.exp_dir
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, ReviewSession>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Loads a session from disk into the cache if needed.
    fn with_session<T>(
        &self,
        session_id: &str,
        f: impl FnOnce(&mut ReviewSession) -> Result<T>,
    ) -> Result<T> {
        let mut map = self.lock();
        if !map.contains_key(session_id) {
            let unknown = || Error::Review(ReviewError::UnknownSession(session_id.to_string()));
            let (r, _) = parse_session_id(session_id).ok_or_else(unknown)?;
            let path = session_path(&self.exp_dir, r, session_id);
            if !path.exists() {
                return Err(unknown());
            }
            let file: SessionFile = read_json(&path)?;
            let decided = replay_decisions(&self.exp_dir, r)?
                .remove(session_id)
                .unwrap_or_default();
            map.insert(session_id.to_string(), ReviewSession { file, decided });
        }
        f(map.get_mut(session_id).expect("inserted above"))
    }

    pub fn open_session(&self, recursion: u32) -> Result<ReviewSession> {
        let _guard = self.lock();
        let store = CandidateStore::new(candidates_dir(&self.exp_dir, recursion));
        if !store.exists() {
            return Err(ReviewError::MissingCandidates(recursion).into());
        }
        let existing = load_sessions(&self.exp_dir, recursion)?;
        if let Some(open) = existing.iter().find(|s| s.is_open()) {
            return Err(ReviewError::ConcurrentSession(recursion, open.id().to_string()).into());
        }
        let decided: BTreeSet<&String> = existing.iter().flat_map(|s| s.decided.keys()).collect();
        let queue: Vec<QueueItem> = store
            .read_index()?
            .into_iter()
            .filter(|m| !decided.contains(&m.sample_id))
            .map(|m| QueueItem {
                flagged: !m.consistent_with_image_label,
                sample_id: m.sample_id,
            })
            .collect();
        let seq = existing
            .iter()
            .filter_map(|s| parse_session_id(s.id()).map(|(_, n)| n))
            .max()
            .map_or(1, |n| n + 1);
        let file = SessionFile {
            session_id: format!("r{recursion}-s{seq}"),
            recursion_index: recursion,
            queue,
            status: SessionStatus::Open,
            opened_at: now(),
            closed_at: None,
            summary: None,
        };
        let path = session_path(&self.exp_dir, recursion, &file.session_id);
        std::fs::create_dir_all(path.parent().expect("has parent")).at(&path)?;
        write_atomic(&path, &serde_json::to_vec_pretty(&file)?)?;
        tracing::info!(session = %file.session_id, queue = file.queue.len(), "review session opened");
        Ok(ReviewSession {
            file,
            decided: BTreeMap::new(),
        })
    }

    pub fn session(&self, session_id: &str) -> Result<ReviewSession> {
        self.with_session(session_id, |s| Ok(s.clone()))
    }

    pub fn fetch_next(&self, session_id: &str) -> Result<NextItem> {
        let (session, item_pos) = self.with_session(session_id, |s| {
            if !s.is_open() {
                return Err(ReviewError::Closed(session_id.to_string()).into());
            }
            let pos = s.file.queue.iter().position(|q| !s.decided.contains_key(&q.sample_id));
            Ok((s.clone(), pos))
        })?;
        let Some(pos) = item_pos else {
            return Ok(NextItem::Done);
        };
        let item = &session.file.queue[pos];
        let store = CandidateStore::new(candidates_dir(&self.exp_dir, session.file.recursion_index));
        let meta = store
            .read_index()?
            .into_iter()
            .find(|m| m.sample_id == item.sample_id)
            .ok_or_else(|| ReviewError::UnknownSample(item.sample_id.clone()))?;
        Ok(NextItem::Candidate(Box::new(self.payload(&session, pos, &store, &meta)?)))
    }

    fn payload(
        &self,
        session: &ReviewSession,
        pos: usize,
        store: &CandidateStore,
        meta: &CandidateMeta,
    ) -> Result<CandidatePayload> {
        let b64 = |name: &str| -> Result<String> {
            let p = store.dir().join(name);
            Ok(base64::engine::general_purpose::STANDARD.encode(std::fs::read(&p).at(&p)?))
        };
        Ok(CandidatePayload {
            session_id: session.id().to_string(),
            sample_id: meta.sample_id.clone(),
            position: pos + 1,
            queue_len: session.file.queue.len(),
            image_png: b64(&meta.image_file)?,
            mask_png: b64(&meta.mask_file)?,
            image_label: meta.image_label,
            image_label_name: meta
                .image_label
                .and_then(|l| self.taxonomy.name(l as usize).map(str::to_string)),
            classes: self.taxonomy.classes().to_vec(),
            confidence: meta.confidence,
            foreground_area: meta.foreground_area,
            consistent_with_image_label: meta.consistent_with_image_label,
            flagged: session.file.queue[pos].flagged,
        })
    }

    /// Records a verdict. The decision is on disk before this returns.
    pub fn submit_decision(&self, session_id: &str, req: DecisionRequest) -> Result<Ack> {
        let exp_dir = self.exp_dir.clone();
        self.with_session(session_id, |s| {
            if !s.is_open() {
                return Err(ReviewError::Closed(session_id.to_string()).into());
            }
            if !s.file.queue.iter().any(|q| q.sample_id == req.sample_id) {
                return Err(ReviewError::UnknownSample(req.sample_id.clone()).into());
            }
            let queue_len = s.file.queue.len();
            if let Some(prev) = s.decided.get(&req.sample_id) {
                if prev.verdict != req.verdict {
                    return Err(ReviewError::Conflict(req.sample_id.clone()).into());
                }
                return Ok(Ack {
                    sample_id: req.sample_id,
                    verdict: req.verdict,
                    decided: s.decided.len(),
                    queue_len,
                    duplicate: true,
                });
            }
            let decision = ReviewDecision {
                sample_id: req.sample_id.clone(),
                verdict: req.verdict,
                reviewer: req.reviewer,
                timestamp: req.timestamp.unwrap_or_else(now),
                note: req.note,
            };
            let line = serde_json::to_string(&LogLine {
                session_id: session_id.to_string(),
                decision: decision.clone(),
            })?;
            let dir = review_dir(&exp_dir, s.file.recursion_index);
            append_line(&dir.join(DECISIONS_FILE), &line)?;
            s.decided.insert(decision.sample_id.clone(), decision);
            Ok(Ack {
                sample_id: req.sample_id,
                verdict: req.verdict,
                decided: s.decided.len(),
                queue_len,
                duplicate: false,
            })
        })
    }

    /// Closes the session and copies accepted masks, byte for byte, into
    /// the recursion's pseudo-label store.
    pub fn close_session(&self, session_id: &str) -> Result<SessionSummary> {
        let exp_dir = self.exp_dir.clone();
        self.with_session(session_id, |s| {
            if !s.is_open() {
                return Err(ReviewError::Closed(session_id.to_string()).into());
            }
            let r = s.file.recursion_index;
            let summary = s.summary();
            if !summary.accepted.is_empty() {
                let store = CandidateStore::new(candidates_dir(&exp_dir, r));
                let index: HashMap<String, CandidateMeta> = store
                    .read_index()?
                    .into_iter()
                    .map(|m| (m.sample_id.clone(), m))
                    .collect();
                let out = pseudolabel_dir(&exp_dir, r);
                std::fs::create_dir_all(&out).at(&out)?;
                for id in &summary.accepted {
                    let meta = index
                        .get(id)
                        .ok_or_else(|| ReviewError::UnknownSample(id.clone()))?;
                    let src = store.mask_path(meta);
                    let bytes = std::fs::read(&src).at(&src)?;
                    write_atomic(&out.join(&meta.mask_file), &bytes)?;
                }
            }
            let mut file = s.file.clone();
            file.status = SessionStatus::Closed;
            file.closed_at = Some(now());
            file.summary = Some(summary.clone());
            let path = session_path(&exp_dir, r, session_id);
            write_atomic(&path, &serde_json::to_vec_pretty(&file)?)?;
            s.file = file;
            tracing::info!(
                session = session_id,
                accepted = summary.accepted.len(),
                rejected = summary.rejected.len(),
                undecided = summary.undecided.len(),
                "review session closed"
            );
            Ok(summary)
        })
    }

    pub fn summary(&self, session_id: &str) -> Result<SessionSummary> {
        self.with_session(session_id, |s| Ok(s.summary()))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{GrayImage, SegmentationMask};
    use crate::util::sha256_file;
    use crate::weaklabel::{RefinePolicy, WeakLabelCandidate};

    fn seed_store(dir: &Path, r: u32, n: usize) -> Vec<CandidateMeta> {
        let img = GrayImage::filled(4, 4, 0.5);
        let cands: Vec<WeakLabelCandidate> = (0..n)
            .map(|i| {
                let mut m = SegmentationMask::background(4, 4);
                m.data[i % 16] = 1 + (i % 2) as u8;
                WeakLabelCandidate {
                    sample_id: format!("s{i}"),
                    image_label: Some(1),
                    predicted_mask: m.clone(),
                    raw_mask: m.clone(),
                    confidence: None,
                    foreground_area: 1,
                    consistent_with_image_label: m.data.iter().all(|&v| v <= 1),
                    recursion_born: r,
                }
            })
            .collect();
        let imgs: Vec<&GrayImage> = vec![&img; n];
        CandidateStore::new(candidates_dir(dir, r))
            .write(&cands, &imgs, &RefinePolicy::default(), "ck")
            .unwrap()
    }

    fn decide(sample: &str, verdict: Verdict) -> DecisionRequest {
        DecisionRequest {
            sample_id: sample.into(),
            verdict,
            reviewer: "rev".into(),
            note: None,
            timestamp: None,
        }
    }

    fn service(dir: &Path) -> ReviewService {
        ReviewService::new(dir, ClassTaxonomy::hemorrhage())
    }

    #[test]
    fn open_requires_candidates_and_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let svc = service(dir.path());
        assert_eq!(
            svc.open_session(0).unwrap_err().to_string(),
            Error::Review(ReviewError::MissingCandidates(0)).to_string()
        );
        seed_store(dir.path(), 0, 10);
        let s = svc.open_session(0).unwrap();
        assert_eq!(s.file.queue.len(), 10);
        assert_eq!(s.file.queue.iter().filter(|q| q.flagged).count(), 5);
        assert!(matches!(
            svc.open_session(0),
            Err(Error::Review(ReviewError::ConcurrentSession(0, _)))
        ));
    }

    #[test]
    fn fetch_decide_close_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let metas = seed_store(dir.path(), 2, 3);
        let before: Vec<String> = metas.iter().map(|m| sha256_file(&candidates_dir(dir.path(), 2).join(&m.mask_file)).unwrap()).collect();
        let svc = service(dir.path());
        let id = svc.open_session(2).unwrap().file.session_id;
        let first = svc.fetch_next(&id).unwrap();
        assert_eq!(svc.fetch_next(&id).unwrap(), first);
        let NextItem::Candidate(p) = first else { panic!() };
        assert_eq!((p.sample_id.as_str(), p.position, p.queue_len), ("s0", 1, 3));
        assert_eq!(p.image_label_name.as_deref(), Some("epidural"));

        let ack = svc.submit_decision(&id, decide("s0", Verdict::Accept)).unwrap();
        assert_eq!((ack.decided, ack.duplicate), (1, false));
        let ack = svc.submit_decision(&id, decide("s0", Verdict::Accept)).unwrap();
        assert_eq!((ack.decided, ack.duplicate), (1, true));
        assert!(matches!(
            svc.submit_decision(&id, decide("s0", Verdict::Reject)),
            Err(Error::Review(ReviewError::Conflict(_)))
        ));
        assert!(matches!(
            svc.submit_decision(&id, decide("nope", Verdict::Reject)),
            Err(Error::Review(ReviewError::UnknownSample(_)))
        ));
        let NextItem::Candidate(p) = svc.fetch_next(&id).unwrap() else { panic!() };
        assert_eq!(p.sample_id, "s1");
        svc.submit_decision(&id, decide("s1", Verdict::Accept)).unwrap();
        svc.submit_decision(&id, decide("s2", Verdict::Reject)).unwrap();
        assert_eq!(svc.fetch_next(&id).unwrap(), NextItem::Done);

        let sum = svc.close_session(&id).unwrap();
        assert_eq!((sum.accepted.len(), sum.rejected.len(), sum.undecided.len()), (2, 1, 0));
        assert!(matches!(svc.close_session(&id), Err(Error::Review(ReviewError::Closed(_)))));
        assert!(matches!(
            svc.submit_decision(&id, decide("s2", Verdict::Reject)),
            Err(Error::Review(ReviewError::Closed(_)))
        ));
        for (m, h) in metas.iter().zip(&before) {
            let src = candidates_dir(dir.path(), 2).join(&m.mask_file);
            assert_eq!(&sha256_file(&src).unwrap(), h);
            let dst = pseudolabel_dir(dir.path(), 2).join(&m.mask_file);
            if sum.accepted.contains(&m.sample_id) {
                assert_eq!(std::fs::read(dst).unwrap(), std::fs::read(src).unwrap());
            } else {
                assert!(!dst.exists());
            }
        }
        let st = round_status(dir.path(), 2).unwrap();
        assert!(st.is_complete());
        assert_eq!(st.accepted.len(), 2);
    }

    #[test]
    fn reopen_holds_only_undecided_and_restart_replays() {
        let dir = tempfile::tempdir().unwrap();
        seed_store(dir.path(), 0, 4);
        let id = {
            let svc = service(dir.path());
            let id = svc.open_session(0).unwrap().file.session_id;
            svc.submit_decision(&id, decide("s1", Verdict::Reject)).unwrap();
            svc.submit_decision(&id, decide("s3", Verdict::Accept)).unwrap();
            id
        };
        // A fresh service sees every acknowledged decision.
        let svc = service(dir.path());
        let s = svc.session(&id).unwrap();
        assert_eq!(s.decided.len(), 2);
        let replayed = replay_decisions(dir.path(), 0).unwrap();
        assert_eq!(replayed[&id], s.decided);
        let sum = svc.close_session(&id).unwrap();
        assert_eq!(sum.undecided, vec!["s0".to_string(), "s2".to_string()]);

        let again = svc.open_session(0).unwrap();
        let ids: Vec<_> = again.file.queue.iter().map(|q| q.sample_id.as_str()).collect();
        assert_eq!(ids, ["s0", "s2"]);
        assert_ne!(again.file.session_id, id);
        let st = round_status(dir.path(), 0).unwrap();
        assert_eq!(st.open_session.as_deref(), Some(again.id()));
        assert!(!st.is_complete());
    }

    #[test]
    fn torn_last_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        seed_store(dir.path(), 0, 2);
        let svc = service(dir.path());
        let id = svc.open_session(0).unwrap().file.session_id;
        svc.submit_decision(&id, decide("s0", Verdict::Accept)).unwrap();
        let log = review_dir(dir.path(), 0).join(DECISIONS_FILE);
        let mut f = std::fs::OpenOptions::new().append(true).open(&log).unwrap();
        std::io::Write::write_all(&mut f, b"{\"session_id\":\"r0-s1\",\"deci").unwrap();
        assert_eq!(replay_decisions(dir.path(), 0).unwrap()[&id].len(), 1);
    }

    #[test]
    fn unknown_session() {
        let dir = tempfile::tempdir().unwrap();
        let svc = service(dir.path());
        for id in ["bogus", "r0-s9"] {
            assert!(matches!(svc.fetch_next(id), Err(Error::Review(ReviewError::UnknownSession(_)))));
        }
    }
}
