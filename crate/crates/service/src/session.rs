//! Annotation sessions as event-sourced state.
//!
//! Every mutation is an [`Event`]; the live state is whatever replaying the
//! log produces. Undo truncates the log and replays.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use nuclick_core::postproc::{self, ObjectResult, RleObject};
use nuclick_core::signals::{GuideInput, GuidingSignal, PatchSpec};
use nuclick_core::{io, LabelMap};
use nuclick_pipeline::Segmenter;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Result, ServiceError};
use crate::registry::ModelRegistry;

const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";
/// A snapshot is written after every this many events.
pub const SNAPSHOT_EVERY: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        model: String,
    },
    Image {
        request_id: Option<String>,
        /// Name of the stored PNG.
        blob: String,
    },
    Annotate {
        request_id: Option<String>,
        object_id: u32,
        guide: GuideInput,
    },
    Revise {
        request_id: Option<String>,
        object_id: u32,
        guide: GuideInput,
    },
    Delete {
        request_id: Option<String>,
        object_id: u32,
    },
}

impl Event {
    fn request_id(&self) -> Option<&str> {
        match self {
            Event::Created { .. } => None,
            Event::Image { request_id, .. }
            | Event::Annotate { request_id, .. }
            | Event::Revise { request_id, .. }
            | Event::Delete { request_id, .. } => request_id.as_deref(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResultStatus {
    Ok,
    /// Nothing survived post-processing.
    EmptyResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionObject {
    pub object_id: u32,
    pub guide: GuideInput,
    pub result: ObjectResult,
}

impl SessionObject {
    pub fn status(&self) -> ResultStatus {
        if self.result.mask.any() {
            ResultStatus::Ok
        } else {
            ResultStatus::EmptyResult
        }
    }
}

/// Everything derived from the log, in a form that can be snapshotted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Derived {
    image_blob: Option<String>,
    objects: Vec<SessionObject>,
    revision: u64,
    next_object_id: u32,
    responses: HashMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    events: usize,
    state: Derived,
}

/// Client-facing view of one object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub object_id: u32,
    pub guide: GuideInput,
    pub status: ResultStatus,
    pub patch: PatchSpec,
    /// Run-length encoding over the full image, row-major.
    pub rle: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub model: String,
    pub revision: u64,
    pub image_size: Option<(usize, usize)>,
    pub objects: Vec<ObjectView>,
}

pub struct Session {
    id: String,
    model: String,
    seg: Arc<Segmenter>,
    events: Vec<Event>,
    blobs: HashMap<String, Vec<u8>>,
    image: Option<RgbImage>,
    state: Derived,
    dir: Option<PathBuf>,
}

impl Session {
    /// A new empty session; with `dir` the log is persisted there.
    pub fn create(id: String, model: String, seg: Arc<Segmenter>, dir: Option<PathBuf>) -> Result<Self> {
        let mut s = Self::empty(id.clone(), model.clone(), seg, dir);
        if let Some(d) = &s.dir {
            fs::create_dir_all(d)?;
        }
        s.record(Event::Created { session_id: id, model })?;
        Ok(s)
    }

    fn empty(id: String, model: String, seg: Arc<Segmenter>, dir: Option<PathBuf>) -> Self {
        Self {
            id,
            model,
            seg,
            events: Vec::new(),
            blobs: HashMap::new(),
            image: None,
            state: Derived {
                image_blob: None,
                objects: Vec::new(),
                revision: 0,
                next_object_id: 1,
                responses: HashMap::new(),
            },
            dir,
        }
    }

    /// Rebuilds a session by applying `events` from scratch.
    pub fn replay(events: &[Event], blobs: HashMap<String, Vec<u8>>, registry: &ModelRegistry) -> Result<Self> {
        let Some(Event::Created { session_id, model }) = events.first() else {
            return Err(ServiceError::Invalid("event log must start with a creation event".into()));
        };
        let mut s = Self::empty(session_id.clone(), model.clone(), registry.get(model)?, None);
        s.blobs = blobs;
        s.events.push(events[0].clone());
        for e in &events[1..] {
            s.apply(e)?;
            s.events.push(e.clone());
        }
        Ok(s)
    }

    /// Loads a persisted session, resuming from its snapshot when present.
    pub fn load(dir: &Path, registry: &ModelRegistry) -> Result<Self> {
        let text = fs::read_to_string(dir.join(EVENTS_FILE))?;
        let events: Vec<Event> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        let mut blobs = HashMap::new();
        for e in &events {
            if let Event::Image { blob, .. } = e {
                blobs.insert(blob.clone(), fs::read(dir.join(blob))?);
            }
        }
        let snapshot: Option<Snapshot> = fs::read(dir.join(SNAPSHOT_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .filter(|s: &Snapshot| s.events >= 1 && s.events <= events.len());
        let mut s = match snapshot {
            Some(snap) => {
                let Some(Event::Created { session_id, model }) = events.first() else {
                    return Err(ServiceError::Invalid("event log must start with a creation event".into()));
                };
                let mut s = Self::empty(session_id.clone(), model.clone(), registry.get(model)?, None);
                s.blobs = blobs;
                s.image = match &snap.state.image_blob {
                    Some(b) => Some(io::decode_rgb_png(&s.blobs[b])?),
                    None => None,
                };
                s.state = snap.state;
                s.events = events[..snap.events].to_vec();
                for e in &events[snap.events..] {
                    s.apply(e)?;
                    s.events.push(e.clone());
                }
                s
            }
            None => Self::replay(&events, blobs, registry)?,
        };
        s.dir = Some(dir.to_path_buf());
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn revision(&self) -> u64 {
        self.state.revision
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn blobs(&self) -> &HashMap<String, Vec<u8>> {
        &self.blobs
    }

    pub fn objects(&self) -> &[SessionObject] {
        &self.state.objects
    }

    fn image_size(&self) -> Option<(usize, usize)> {
        self.image.as_ref().map(|i| (i.width() as usize, i.height() as usize))
    }

    fn cached(&self, request_id: Option<&str>) -> Option<Value> {
        request_id.and_then(|r| self.state.responses.get(r).cloned())
    }

    /// Validates and applies one event to the derived state, returning the
    /// client response.
    fn apply(&mut self, event: &Event) -> Result<Value> {
        let response = match event {
            Event::Created { .. } => return Err(ServiceError::Invalid("duplicate creation event".into())),
            Event::Image { blob, .. } => {
                if !self.state.objects.is_empty() {
                    return Err(ServiceError::Conflict("delete all objects before replacing the image".into()));
                }
                let bytes = self
                    .blobs
                    .get(blob)
                    .ok_or_else(|| ServiceError::Internal(format!("missing blob {blob}")))?;
                let img = io::decode_rgb_png(bytes)?;
                if img.width() == 0 || img.height() == 0 {
                    return Err(ServiceError::Invalid("empty image".into()));
                }
                self.image = Some(img);
                self.state.image_blob = Some(blob.clone());
                self.state.revision += 1;
                json!({ "revision": self.state.revision, "width": self.image_size().map(|s| s.0), "height": self.image_size().map(|s| s.1) })
            }
            Event::Annotate { object_id, guide, .. } => {
                let result = self.infer(guide, None, *object_id)?;
                self.state.objects.push(SessionObject {
                    object_id: *object_id,
                    guide: guide.clone(),
                    result,
                });
                self.state.next_object_id = self.state.next_object_id.max(object_id + 1);
                self.state.revision += 1;
                self.object_response(*object_id)
            }
            Event::Revise { object_id, guide, .. } => {
                let pos = self.position(*object_id)?;
                let result = self.infer(guide, Some(pos), *object_id)?;
                self.state.objects[pos] = SessionObject {
                    object_id: *object_id,
                    guide: guide.clone(),
                    result,
                };
                self.state.revision += 1;
                self.object_response(*object_id)
            }
            Event::Delete { object_id, .. } => {
                let pos = self.position(*object_id)?;
                self.state.objects.remove(pos);
                self.state.revision += 1;
                json!({ "revision": self.state.revision })
            }
        };
        if let Some(r) = event.request_id() {
            self.state.responses.insert(r.to_owned(), response.clone());
        }
        Ok(response)
    }

    fn position(&self, object_id: u32) -> Result<usize> {
        self.state
            .objects
            .iter()
            .position(|o| o.object_id == object_id)
            .ok_or_else(|| ServiceError::NotFound(format!("object {object_id}")))
    }

    /// The guide list the model sees for `guide`: every other object's guide,
    /// then `guide` itself last. `replacing` skips the object being revised.
    fn context(&self, guide: &GuideInput, replacing: Option<usize>) -> Result<(&RgbImage, Vec<GuideInput>)> {
        let image = self
            .image
            .as_ref()
            .ok_or_else(|| ServiceError::Conflict("upload an image first".into()))?;
        guide
            .validate((image.width() as usize, image.height() as usize))
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let mut context: Vec<GuideInput> = self
            .state
            .objects
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != replacing)
            .map(|(_, o)| o.guide.clone())
            .collect();
        context.push(guide.clone());
        Ok((image, context))
    }

    fn infer(&self, guide: &GuideInput, replacing: Option<usize>, object_id: u32) -> Result<ObjectResult> {
        let (image, context) = self.context(guide, replacing)?;
        let mut results = self.seg.segment_targets(image, &context, &[context.len() - 1])?;
        let mut r = results.pop().expect("one target");
        r.object_id = object_id;
        Ok(r)
    }

    /// The window and guiding signal that annotating `guide` now (or revising
    /// `replacing` with it) would feed the model.
    pub fn signal_for(&self, guide: &GuideInput, replacing: Option<u32>) -> Result<(PatchSpec, GuidingSignal)> {
        let pos = replacing.map(|id| self.position(id)).transpose()?;
        let (image, context) = self.context(guide, pos)?;
        let size = (image.width() as usize, image.height() as usize);
        let window = self.seg.window(size, guide)?;
        let signal = self.seg.signal(&context, context.len() - 1, &window)?;
        Ok((window, signal))
    }

    fn view(&self, o: &SessionObject) -> ObjectView {
        let size = self.image_size().unwrap_or((0, 0));
        ObjectView {
            object_id: o.object_id,
            guide: o.guide.clone(),
            status: o.status(),
            patch: o.result.patch,
            rle: postproc::rle_encode(&o.result.to_image(size)),
        }
    }

    fn object_response(&self, object_id: u32) -> Value {
        let o = self.state.objects.iter().find(|o| o.object_id == object_id).expect("object just stored");
        let v = self.view(o);
        json!({ "object_id": v.object_id, "rle": v.rle, "revision": self.state.revision, "status": v.status })
    }

    /// Applies a new event and appends it to the log. A request id seen
    /// before returns the original response without mutating anything.
    fn commit(&mut self, event: Event) -> Result<Value> {
        if let Some(v) = self.cached(event.request_id()) {
            return Ok(v);
        }
        let response = self.apply(&event)?;
        self.record(event)?;
        Ok(response)
    }

    fn record(&mut self, event: Event) -> Result<()> {
        if let Some(dir) = &self.dir {
            if let Event::Image { blob, .. } = &event {
                fs::write(dir.join(blob), &self.blobs[blob])?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS_FILE))?;
            writeln!(f, "{}", serde_json::to_string(&event)?)?;
        }
        self.events.push(event);
        if self.events.len().is_multiple_of(SNAPSHOT_EVERY) {
            self.write_snapshot()?;
        }
        Ok(())
    }

    fn write_snapshot(&self) -> Result<()> {
        if let Some(dir) = &self.dir {
            let snap = Snapshot {
                events: self.events.len(),
                state: self.state.clone(),
            };
            fs::write(dir.join(SNAPSHOT_FILE), serde_json::to_vec(&snap)?)?;
        }
        Ok(())
    }

    pub fn set_image(&mut self, png: Vec<u8>, request_id: Option<String>) -> Result<Value> {
        if let Some(v) = self.cached(request_id.as_deref()) {
            return Ok(v);
        }
        io::decode_rgb_png(&png).map_err(|e| ServiceError::Invalid(format!("image is not a PNG: {e}")))?;
        let blob = format!("image-{:04}.png", self.events.len());
        self.blobs.insert(blob.clone(), png);
        let out = self.commit(Event::Image { request_id, blob: blob.clone() });
        if out.is_err() {
            self.blobs.remove(&blob);
        }
        out
    }

    pub fn annotate(&mut self, guide: GuideInput, request_id: Option<String>) -> Result<Value> {
        let object_id = self.state.next_object_id;
        self.commit(Event::Annotate {
            request_id,
            object_id,
            guide,
        })
    }

    pub fn revise(&mut self, object_id: u32, guide: GuideInput, request_id: Option<String>) -> Result<Value> {
        self.commit(Event::Revise {
            request_id,
            object_id,
            guide,
        })
    }

    pub fn delete(&mut self, object_id: u32, request_id: Option<String>) -> Result<Value> {
        self.commit(Event::Delete { request_id, object_id })
    }

    /// Drops the most recent mutation by truncating the log and replaying.
    pub fn undo(&mut self, registry: &ModelRegistry) -> Result<Value> {
        if self.events.len() <= 1 {
            return Err(ServiceError::Conflict("nothing to undo".into()));
        }
        let kept = &self.events[..self.events.len() - 1];
        let mut blobs = self.blobs.clone();
        if let Some(Event::Image { blob, .. }) = self.events.last() {
            blobs.remove(blob);
        }
        let mut fresh = Self::replay(kept, blobs, registry)?;
        fresh.dir = self.dir.take();
        if let Some(dir) = &fresh.dir {
            let mut text = String::new();
            for e in &fresh.events {
                text.push_str(&serde_json::to_string(e)?);
                text.push('\n');
            }
            fs::write(dir.join(EVENTS_FILE), text)?;
            if let Some(Event::Image { blob, .. }) = self.events.last() {
                let _ = fs::remove_file(dir.join(blob));
            }
            let _ = fs::remove_file(dir.join(SNAPSHOT_FILE));
            fresh.write_snapshot()?;
        }
        *self = fresh;
        Ok(json!({ "revision": self.state.revision }))
    }

    /// Objects painted in insertion order, later objects winning overlaps.
    pub fn label_map(&self) -> LabelMap {
        let size = self.image_size().unwrap_or((0, 0));
        let results: Vec<ObjectResult> = self.state.objects.iter().map(|o| o.result.clone()).collect();
        postproc::assemble(&results, size)
    }

    pub fn label_map_png(&self) -> Result<Vec<u8>> {
        if self.image.is_none() {
            return Err(ServiceError::Conflict("no image uploaded".into()));
        }
        Ok(io::encode_labels_png(&self.label_map())?)
    }

    pub fn export_rle(&self) -> Vec<RleObject> {
        postproc::label_map_rle(&self.label_map())
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            session_id: self.id.clone(),
            model: self.model.clone(),
            revision: self.state.revision,
            image_size: self.image_size(),
            objects: self.state.objects.iter().map(|o| self.view(o)).collect(),
        }
    }
}
