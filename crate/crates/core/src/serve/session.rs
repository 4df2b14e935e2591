//! Event-sourced labeling sessions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::store::{self, Event, EventLog};
use super::ServeError;
use crate::config::AppConfig;
use crate::mil::{rank_bags, train, MilError, MilModel};
use crate::model::{read_jsonl, validate_manifest, Bag, DatasetManifest, Label, MicroClip, PrincipalShot};
use crate::pipeline;
use crate::shots::bags_from_shots;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueueEntry {
    pub clip_id: String,
    pub score: f64,
    pub media_ref: Option<String>,
}

/// Read-only snapshot of a session as last committed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub session_id: String,
    pub dataset_ref: String,
    pub clip_count: usize,
    pub labeled_count: usize,
    pub labels: BTreeMap<String, Label>,
    pub model_ref: Option<String>,
    pub min_labels: usize,
    pub events: u64,
    pub queue: Vec<QueueEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelAck {
    pub acknowledged: bool,
    /// Sequence number of the recorded event; absent when the submission
    /// repeated the clip's current label and nothing was recorded.
    pub seq: Option<u64>,
    pub labeled_count: usize,
    pub retrained: bool,
    pub model_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RetrainSummary {
    pub model_ref: String,
    pub algorithm: crate::mil::Algorithm,
    pub training_bags: usize,
    pub queue: Vec<QueueEntry>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateSession {
    pub manifest_path: Option<PathBuf>,
    pub manifest: Option<serde_json::Value>,
    pub config: Option<serde_json::Value>,
    pub session_id: Option<String>,
}

struct State {
    log: EventLog,
    next_seq: u64,
    labels: BTreeMap<String, (Label, String)>,
    model_ref: Option<String>,
    queue: Vec<QueueEntry>,
}

pub struct Session {
    id: String,
    dir: PathBuf,
    manifest: DatasetManifest,
    config: AppConfig,
    features: Vec<MicroClip>,
    shots: Vec<PrincipalShot>,
    bags: Vec<Bag>,
    state: Mutex<State>,
    retraining: AtomicBool,
    view: RwLock<Arc<SessionView>>,
}

/// Holds the session's retrain slot; released on drop.
pub struct RetrainGuard<'a>(&'a AtomicBool);

impl Drop for RetrainGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

pub fn model_ref(model: &MilModel) -> String {
    let digest = Sha256::digest(model.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn io(e: std::io::Error) -> ServeError {
    ServeError::Internal(e.to_string())
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn view(&self) -> Arc<SessionView> {
        self.view.read().unwrap().clone()
    }

    pub fn queue(&self) -> Vec<QueueEntry> {
        self.view().queue.clone()
    }

    pub fn clip_features(&self, clip_id: &str) -> Option<(Vec<&MicroClip>, Vec<&PrincipalShot>)> {
        self.manifest.clip(clip_id)?;
        Some((
            self.features.iter().filter(|m| m.clip_id == clip_id).collect(),
            self.shots.iter().filter(|s| s.clip_id == clip_id).collect(),
        ))
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn media_ref(&self, clip_id: &str) -> Option<String> {
        let c = self.manifest.clip(clip_id)?;
        c.media_path.as_ref().map(|_| format!("/api/clips/{clip_id}/media?session={}", self.id))
    }

    fn initial_queue(&self) -> Vec<QueueEntry> {
        self.manifest
            .clips()
            .iter()
            .map(|c| QueueEntry { clip_id: c.clip_id.clone(), score: 0.0, media_ref: self.media_ref(&c.clip_id) })
            .collect()
    }

    fn has_both_classes(labels: &BTreeMap<String, (Label, String)>) -> bool {
        labels.values().any(|(l, _)| *l == Label::Positive) && labels.values().any(|(l, _)| *l == Label::Negative)
    }

    fn auto_retrain_due(&self, labels: &BTreeMap<String, (Label, String)>) -> bool {
        labels.len() >= self.config.serve.min_labels && Self::has_both_classes(labels)
    }

    /// Trains on `labels` and ranks every clip not in `labels`.
    fn train_and_rank(&self, labels: &BTreeMap<String, (Label, String)>) -> Result<(MilModel, Vec<QueueEntry>), ServeError> {
        let mut training = Vec::new();
        let mut pending = Vec::new();
        for b in &self.bags {
            match labels.get(&b.clip_id) {
                Some((l, _)) => training.push(Bag { label: Some(*l), ..b.clone() }),
                None => pending.push(b.clone()),
            }
        }
        let model = train(&training, &self.config.mil).map_err(|e| match e {
            MilError::MissingClass => ServeError::MissingClass,
            other => ServeError::Internal(other.to_string()),
        })?;
        let ranked = rank_bags(&model, &pending).map_err(|e| ServeError::Internal(e.to_string()))?;
        let queue = ranked
            .into_iter()
            .map(|(clip_id, score)| {
                let media_ref = self.media_ref(&clip_id);
                QueueEntry { clip_id, score, media_ref }
            })
            .collect();
        Ok((model, queue))
    }

    fn commit_model(&self, st: &mut State, model: &MilModel, queue: Vec<QueueEntry>) -> Result<(), ServeError> {
        let json = model.to_json();
        store::write_atomic(&self.dir.join(store::MODEL_FILE), json.as_bytes()).map_err(io)?;
        st.model_ref = Some(model_ref(model));
        st.queue = queue;
        Ok(())
    }

    fn publish(&self, st: &State) -> Result<(), ServeError> {
        let view = SessionView {
            session_id: self.id.clone(),
            dataset_ref: self.dir.join(store::MANIFEST_FILE).display().to_string(),
            clip_count: self.manifest.clips().len(),
            labeled_count: st.labels.len(),
            labels: st.labels.iter().map(|(c, (l, _))| (c.clone(), *l)).collect(),
            model_ref: st.model_ref.clone(),
            min_labels: self.config.serve.min_labels,
            events: st.next_seq - 1,
            queue: st.queue.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&view.queue).expect("queue serializes");
        store::write_atomic(&self.dir.join(store::QUEUE_FILE), &bytes).map_err(io)?;
        *self.view.write().unwrap() = Arc::new(view);
        Ok(())
    }

    pub fn submit_label(&self, clip_id: &str, label: Label, coder_id: &str) -> Result<LabelAck, ServeError> {
        if self.manifest.clip(clip_id).is_none() {
            return Err(ServeError::UnknownClip(clip_id.to_string()));
        }
        let mut st = self.lock();
        if st.labels.get(clip_id).is_some_and(|(l, c)| *l == label && c == coder_id) {
            return Ok(LabelAck {
                acknowledged: true,
                seq: None,
                labeled_count: st.labels.len(),
                retrained: false,
                model_ref: st.model_ref.clone(),
            });
        }
        let seq = st.next_seq;
        let event = Event::Label {
            seq,
            timestamp_ms: store::now_ms(),
            clip_id: clip_id.to_string(),
            label,
            coder_id: coder_id.to_string(),
        };
        st.log.append(&event).map_err(io)?;
        st.next_seq += 1;
        st.labels.insert(clip_id.to_string(), (label, coder_id.to_string()));
        st.queue.retain(|e| e.clip_id != clip_id);

        let mut retrained = false;
        if self.auto_retrain_due(&st.labels) {
            let (model, queue) = self.train_and_rank(&st.labels)?;
            self.commit_model(&mut st, &model, queue)?;
            retrained = true;
        }
        self.publish(&st)?;
        Ok(LabelAck {
            acknowledged: true,
            seq: Some(seq),
            labeled_count: st.labels.len(),
            retrained,
            model_ref: st.model_ref.clone(),
        })
    }

    /// Claims the retrain slot, failing if another retrain holds it.
    pub fn begin_retrain(&self) -> Result<RetrainGuard<'_>, ServeError> {
        if self.retraining.swap(true, Ordering::AcqRel) {
            return Err(ServeError::RetrainInProgress);
        }
        Ok(RetrainGuard(&self.retraining))
    }

    pub fn retrain(&self) -> Result<RetrainSummary, ServeError> {
        let _guard = self.begin_retrain()?;
        let mut st = self.lock();
        if !Self::has_both_classes(&st.labels) {
            return Err(ServeError::MissingClass);
        }
        let seq = st.next_seq;
        st.log.append(&Event::Retrain { seq, timestamp_ms: store::now_ms() }).map_err(io)?;
        st.next_seq += 1;
        let (model, queue) = self.train_and_rank(&st.labels)?;
        self.commit_model(&mut st, &model, queue)?;
        self.publish(&st)?;
        Ok(RetrainSummary {
            model_ref: st.model_ref.clone().unwrap_or_default(),
            algorithm: model.algorithm(),
            training_bags: st.labels.len(),
            queue: st.queue.clone(),
        })
    }

    /// Loads a session directory and rebuilds its state from the event log.
    pub fn open(dir: &Path) -> Result<Session, ServeError> {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| ServeError::Internal(format!("bad session dir {}", dir.display())))?
            .to_string();
        let manifest = DatasetManifest::load(&dir.join(store::MANIFEST_FILE))
            .map_err(|e| ServeError::InvalidManifest(e.to_string()))?;
        let config = AppConfig::load(&dir.join(store::CONFIG_FILE)).map_err(|e| ServeError::Internal(e.to_string()))?;
        let shots: Vec<PrincipalShot> =
            read_jsonl(&dir.join(store::SHOTS_FILE)).map_err(|e| ServeError::Internal(e.to_string()))?;
        let features: Vec<MicroClip> =
            read_jsonl(&dir.join(store::FEATURES_FILE)).map_err(|e| ServeError::Internal(e.to_string()))?;
        let bags = bags_from_shots(&manifest, &shots, None).map_err(|e| ServeError::Internal(e.to_string()))?;
        let events = store::read_events(&dir.join(store::EVENTS_FILE)).map_err(io)?;
        let log = EventLog::open(&dir.join(store::EVENTS_FILE)).map_err(io)?;

        let session = Session {
            id,
            dir: dir.to_path_buf(),
            manifest,
            config,
            features,
            shots,
            bags,
            state: Mutex::new(State { log, next_seq: 1, labels: BTreeMap::new(), model_ref: None, queue: Vec::new() }),
            retraining: AtomicBool::new(false),
            view: RwLock::new(Arc::new(SessionView {
                session_id: String::new(),
                dataset_ref: String::new(),
                clip_count: 0,
                labeled_count: 0,
                labels: BTreeMap::new(),
                model_ref: None,
                min_labels: 0,
                events: 0,
                queue: Vec::new(),
            })),
        };
        session.replay(events)?;
        Ok(session)
    }

    fn replay(&self, events: Vec<Event>) -> Result<(), ServeError> {
        let mut st = self.lock();
        st.queue = self.initial_queue();
        // only the last retrain matters: training is a pure function of the labels
        let mut last_retrain: Option<BTreeMap<String, (Label, String)>> = None;
        for ev in &events {
            match ev {
                Event::Label { clip_id, label, coder_id, .. } => {
                    if self.manifest.clip(clip_id).is_none() {
                        return Err(ServeError::Internal(format!("event log names unknown clip {clip_id:?}")));
                    }
                    st.labels.insert(clip_id.clone(), (*label, coder_id.clone()));
                    if self.auto_retrain_due(&st.labels) {
                        last_retrain = Some(st.labels.clone());
                    }
                }
                Event::Retrain { .. } => {
                    if Self::has_both_classes(&st.labels) {
                        last_retrain = Some(st.labels.clone());
                    }
                }
            }
            st.next_seq = ev.seq() + 1;
        }
        if let Some(snapshot) = last_retrain {
            let (model, queue) = self.train_and_rank(&snapshot)?;
            self.commit_model(&mut st, &model, queue)?;
        }
        let labels = std::mem::take(&mut st.labels);
        st.queue.retain(|e| !labels.contains_key(&e.clip_id));
        st.labels = labels;
        self.publish(&st)
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// All sessions under one root directory.
pub struct SessionManager {
    root: PathBuf,
    defaults: AppConfig,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    creating: Mutex<()>,
}

impl SessionManager {
    /// Opens every session found under `root`, replaying its log.
    pub fn open(root: &Path, defaults: AppConfig) -> Result<Self, ServeError> {
        std::fs::create_dir_all(root).map_err(io)?;
        let mut sessions = BTreeMap::new();
        for id in store::list_sessions(root).map_err(io)? {
            let s = Session::open(&store::session_dir(root, &id))?;
            log::info!("recovered session {id} ({} labels)", s.view().labeled_count);
            sessions.insert(id, Arc::new(s));
        }
        Ok(SessionManager { root: root.to_path_buf(), defaults, sessions: RwLock::new(sessions), creating: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, ServeError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ServeError::UnknownSession(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().unwrap().keys().cloned().collect()
    }

    /// First session, in id order, whose dataset contains `clip_id`.
    pub fn find_clip(&self, clip_id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap().values().find(|s| s.manifest.clip(clip_id).is_some()).cloned()
    }

    pub fn create(&self, req: CreateSession) -> Result<Arc<Session>, ServeError> {
        let manifest = match (&req.manifest_path, &req.manifest) {
            (Some(p), None) => DatasetManifest::load(p).map_err(|e| ServeError::InvalidManifest(e.to_string()))?,
            (None, Some(v)) => {
                let raw = serde_json::from_value(v.clone()).map_err(|e| ServeError::InvalidManifest(e.to_string()))?;
                validate_manifest(raw).map_err(|e| ServeError::InvalidManifest(e.to_string()))?
            }
            _ => return Err(ServeError::BadRequest("give exactly one of manifestPath and manifest".into())),
        };
        let mut cfg_value = serde_json::to_value(&self.defaults).expect("config serializes");
        if let Some(over) = &req.config {
            merge(&mut cfg_value, over);
        }
        let config: AppConfig =
            serde_json::from_value(cfg_value).map_err(|e| ServeError::BadRequest(format!("config: {e}")))?;
        let id = match req.session_id {
            Some(id) if valid_id(&id) => id,
            Some(id) => return Err(ServeError::BadRequest(format!("invalid session id {id:?}"))),
            None => uuid::Uuid::new_v4().to_string(),
        };

        let _creating = self.creating.lock().unwrap_or_else(|e| e.into_inner());
        if self.sessions.read().unwrap().contains_key(&id) || store::session_dir(&self.root, &id).exists() {
            return Err(ServeError::SessionExists(id));
        }
        let prepared =
            pipeline::run(&manifest, &config).map_err(|e| ServeError::FeaturePipelineFailure(e.to_string()))?;

        // snapshot with absolute media paths so the session outlives the caller's cwd
        let mut raw = manifest.raw().clone();
        for c in &mut raw.clips {
            c.frame_path = absolute(&manifest.resolve(&c.frame_path));
            c.wav_path = absolute(&manifest.resolve(&c.wav_path));
            c.external_channel_path = c.external_channel_path.as_ref().map(|p| absolute(&manifest.resolve(p)));
            c.media_path = c.media_path.as_ref().map(|p| absolute(&manifest.resolve(p)));
        }
        let snapshot = validate_manifest(raw).map_err(|e| ServeError::InvalidManifest(e.to_string()))?;

        let staging = self.root.join(format!(".{id}.partial"));
        let _ = std::fs::remove_dir_all(&staging);
        std::fs::create_dir_all(&staging).map_err(io)?;
        let write = || -> Result<(), ServeError> {
            snapshot.save(&staging.join(store::MANIFEST_FILE)).map_err(|e| ServeError::Internal(e.to_string()))?;
            let cfg = serde_json::to_string_pretty(&config).expect("config serializes");
            std::fs::write(staging.join(store::CONFIG_FILE), cfg).map_err(io)?;
            pipeline::save_shots(&staging.join(store::SHOTS_FILE), &prepared.shots)
                .map_err(|e| ServeError::Internal(e.to_string()))?;
            pipeline::save_feature_store(&staging.join(store::FEATURES_FILE), &prepared.features)
                .map_err(|e| ServeError::Internal(e.to_string()))?;
            std::fs::File::create(staging.join(store::EVENTS_FILE)).and_then(|f| f.sync_all()).map_err(io)?;
            Ok(())
        };
        write()?;
        let dir = store::session_dir(&self.root, &id);
        std::fs::rename(&staging, &dir).map_err(io)?;
        let session = Arc::new(Session::open(&dir)?);
        self.sessions.write().unwrap().insert(id, session.clone());
        Ok(session)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
