use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{Result, ServiceError};
use crate::registry::ModelRegistry;
use crate::session::Session;

/// All sessions plus the shared model registry. Each session has its own
/// lock, so work on one never blocks another.
pub struct Workbench {
    registry: ModelRegistry,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    created: Mutex<HashMap<String, String>>,
    data_dir: Option<PathBuf>,
}

impl Workbench {
    /// With `data_dir`, sessions persist under `data_dir/<id>/` and any
    /// found there are restored.
    pub fn new(registry: ModelRegistry, data_dir: Option<PathBuf>) -> Result<Self> {
        let mut sessions = BTreeMap::new();
        if let Some(dir) = &data_dir {
            std::fs::create_dir_all(dir)?;
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    let s = Session::load(&path, &registry)?;
                    sessions.insert(s.id().to_owned(), Arc::new(Mutex::new(s)));
                }
            }
        }
        Ok(Self {
            registry,
            sessions: RwLock::new(sessions),
            created: Mutex::new(HashMap::new()),
            data_dir,
        })
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn create_session(&self, model: &str, request_id: Option<String>) -> Result<String> {
        let mut created = self.created.lock().expect("lock");
        if let Some(id) = request_id.as_ref().and_then(|r| created.get(r)) {
            return Ok(id.clone());
        }
        let seg = self.registry.get(model)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.data_dir.as_ref().map(|d| d.join(&id));
        let session = Session::create(id.clone(), model.to_owned(), seg, dir)?;
        self.sessions.write().expect("lock").insert(id.clone(), Arc::new(Mutex::new(session)));
        if let Some(r) = request_id {
            created.insert(r, id.clone());
        }
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("lock").keys().cloned().collect()
    }
}
