//! Scene sessions, job records and optional on-disk persistence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use arapgs_core::render::SH_C0;
use arapgs_core::splat_io::{encode_ply, read_cameras, read_ply, write_cameras, write_ply};
use arapgs_core::{Camera, GaussianScene, PipelineConfig};
use serde::{Deserialize, Serialize};

/// Upper bound on points in the preview cloud.
pub const PREVIEW_LIMIT: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Deform,
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub scene_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub report: Option<serde_json::Value>,
    pub error: Option<String>,
}

impl JobRecord {
    fn advance(&mut self, status: JobStatus) {
        debug_assert!(self.status as u8 <= status as u8 || status == JobStatus::Failed);
        self.status = status;
    }

    pub fn start(&mut self) {
        self.advance(JobStatus::Running);
    }

    pub fn finish(&mut self, report: serde_json::Value) {
        self.advance(JobStatus::Done);
        self.progress = 1.0;
        self.report = Some(report);
    }

    pub fn fail(&mut self, error: String) {
        self.advance(JobStatus::Failed);
        self.error = Some(error);
    }
}

pub type SharedJob = Arc<Mutex<JobRecord>>;

/// One uploaded scene. The original scene and cameras never change; the
/// deformed scene is an immutable snapshot replaced as a whole.
pub struct Session {
    pub id: String,
    pub original: Arc<GaussianScene>,
    pub cameras: Arc<Vec<Camera>>,
    deformed: RwLock<Option<Arc<GaussianScene>>>,
    active_job: Mutex<Option<String>>,
    preview: Vec<u8>,
    dir: Option<PathBuf>,
}

/// Exclusive right to mutate a session, released on drop.
pub struct MutationGuard {
    session: Arc<Session>,
}

impl Drop for MutationGuard {
    fn drop(&mut self) {
        *self.session.active_job.lock().expect("session lock") = None;
    }
}

impl MutationGuard {
    pub fn session(&self) -> &Arc<Session> {
        &self.session
    }
}

impl Session {
    fn new(id: String, original: GaussianScene, cameras: Vec<Camera>, deformed: Option<GaussianScene>, dir: Option<PathBuf>) -> Self {
        let preview = point_cloud_bytes(&original);
        Self {
            id,
            original: Arc::new(original),
            cameras: Arc::new(cameras),
            deformed: RwLock::new(deformed.map(Arc::new)),
            active_job: Mutex::new(None),
            preview,
            dir,
        }
    }

    pub fn deformed(&self) -> Option<Arc<GaussianScene>> {
        self.deformed.read().expect("session lock").clone()
    }

    pub fn active_job(&self) -> Option<String> {
        self.active_job.lock().expect("session lock").clone()
    }

    /// Claims the session for `job_id`, or returns the job already holding it.
    pub fn try_begin(self: &Arc<Self>, job_id: &str) -> Result<MutationGuard, String> {
        let mut active = self.active_job.lock().expect("session lock");
        if let Some(existing) = active.as_ref() {
            return Err(existing.clone());
        }
        *active = Some(job_id.to_string());
        Ok(MutationGuard { session: self.clone() })
    }

    /// Publishes a new deformed scene; readers see either the old or the new one.
    pub fn install(&self, _guard: &MutationGuard, scene: GaussianScene) -> std::io::Result<()> {
        if let Some(dir) = &self.dir {
            let tmp = dir.join("deformed.ply.tmp");
            std::fs::write(&tmp, encode_ply(&scene))?;
            std::fs::rename(&tmp, dir.join("deformed.ply"))?;
        }
        *self.deformed.write().expect("session lock") = Some(Arc::new(scene));
        Ok(())
    }

    pub fn preview(&self) -> &[u8] {
        &self.preview
    }

    fn save_job(&self, job: &JobRecord) {
        let Some(dir) = &self.dir else { return };
        let jobs = dir.join("jobs");
        let result = std::fs::create_dir_all(&jobs)
            .and_then(|_| std::fs::write(jobs.join(format!("{}.json", job.id)), serde_json::to_vec_pretty(job).unwrap_or_default()));
        if let Err(err) = result {
            log::warn!("could not persist job {}: {err}", job.id);
        }
    }
}

/// `u32` count, then per point three `f32` coordinates and three `u8`
/// colors, all little-endian. At most [`PREVIEW_LIMIT`] evenly strided points.
pub fn point_cloud_bytes(scene: &GaussianScene) -> Vec<u8> {
    let stride = scene.len().div_ceil(PREVIEW_LIMIT).max(1);
    let picked: Vec<usize> = (0..scene.len()).step_by(stride).collect();
    let mut out = Vec::with_capacity(4 + picked.len() * 15);
    out.extend_from_slice(&(picked.len() as u32).to_le_bytes());
    for i in picked {
        for v in scene.centers[i] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in scene.sh_dc[i] {
            out.push(arapgs_core::image::quantize((0.5 + SH_C0 * c as f64) as f32));
        }
    }
    out
}

pub struct AppState {
    pub config: PipelineConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    jobs: RwLock<HashMap<String, SharedJob>>,
    data_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            config,
            sessions: RwLock::default(),
            jobs: RwLock::default(),
            data_dir: None,
        }
    }

    /// State persisted under `dir`, reloading any sessions already there.
    pub fn with_data_dir(config: PipelineConfig, dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let state = Self {
            data_dir: Some(dir.to_path_buf()),
            ..Self::new(config)
        };
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.filter_map(Result::ok).map(|e| e.path()).collect();
        entries.sort();
        for path in entries.into_iter().filter(|p| p.join("scene.ply").is_file()) {
            match state.rehydrate(&path) {
                Ok(id) => log::info!("restored session {id}"),
                Err(err) => log::warn!("skipping {}: {err}", path.display()),
            }
        }
        Ok(state)
    }

    fn rehydrate(&self, path: &Path) -> Result<String, String> {
        let id = path.file_name().and_then(|n| n.to_str()).ok_or("bad directory name")?.to_string();
        let scene = read_ply(path.join("scene.ply")).map_err(|e| e.to_string())?;
        let cameras = read_cameras(path.join("cameras.json")).map_err(|e| e.to_string())?;
        let deformed_path = path.join("deformed.ply");
        let deformed = if deformed_path.is_file() {
            Some(read_ply(&deformed_path).map_err(|e| e.to_string())?)
        } else {
            None
        };
        if let Ok(files) = std::fs::read_dir(path.join("jobs")) {
            for file in files.filter_map(Result::ok) {
                let record = std::fs::read(file.path())
                    .ok()
                    .and_then(|b| serde_json::from_slice::<JobRecord>(&b).ok());
                if let Some(mut record) = record {
                    if matches!(record.status, JobStatus::Queued | JobStatus::Running) {
                        record.fail("interrupted by service restart".into());
                    }
                    self.jobs.write().expect("jobs lock").insert(record.id.clone(), Arc::new(Mutex::new(record)));
                }
            }
        }
        let session = Session::new(id.clone(), scene, cameras, deformed, Some(path.to_path_buf()));
        self.sessions.write().expect("sessions lock").insert(id.clone(), Arc::new(session));
        Ok(id)
    }

    pub fn create_session(&self, scene: GaussianScene, cameras: Vec<Camera>) -> std::io::Result<Arc<Session>> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = match &self.data_dir {
            Some(root) => {
                let dir = root.join(&id);
                std::fs::create_dir_all(&dir)?;
                write_ply(&scene, dir.join("scene.ply")).map_err(std::io::Error::other)?;
                write_cameras(&cameras, dir.join("cameras.json")).map_err(std::io::Error::other)?;
                Some(dir)
            }
            None => None,
        };
        let session = Arc::new(Session::new(id.clone(), scene, cameras, None, dir));
        self.sessions.write().expect("sessions lock").insert(id, session.clone());
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("sessions lock").get(id).cloned()
    }

    pub fn new_job(&self, id: &str, session: &Session, kind: JobKind) -> SharedJob {
        let record = JobRecord {
            id: id.to_string(),
            scene_id: session.id.clone(),
            kind,
            status: JobStatus::Queued,
            progress: 0.0,
            report: None,
            error: None,
        };
        session.save_job(&record);
        let job = Arc::new(Mutex::new(record));
        self.jobs.write().expect("jobs lock").insert(id.to_string(), job.clone());
        job
    }

    pub fn job(&self, id: &str) -> Option<JobRecord> {
        self.jobs.read().expect("jobs lock").get(id).map(|j| j.lock().expect("job lock").clone())
    }

    /// Persists the job's current record next to its session.
    pub fn save_job(&self, session: &Session, job: &SharedJob) {
        let record = job.lock().expect("job lock").clone();
        session.save_job(&record);
    }
}
