//! Annotation sessions over HTTP, and the library side of the `nuclick`
//! command-line tool.

pub mod api;
pub mod error;
pub mod registry;
pub mod session;
pub mod workbench;

use std::sync::Arc;

use nuclick_core::signals::GuideInput;
use nuclick_pipeline::Segmenter;

pub use error::{Result, ServiceError};
pub use registry::ModelRegistry;
pub use session::{Event, Session, SessionState};
pub use workbench::Workbench;

/// Label map PNG produced by annotating `guides` one after another in a
/// fresh in-memory session, exactly as the HTTP service would.
pub fn segment_headless(seg: Segmenter, image_png: Vec<u8>, guides: &[GuideInput]) -> Result<Vec<u8>> {
    let mut session = Session::create("headless".into(), "headless".into(), Arc::new(seg), None)?;
    session.set_image(image_png, None)?;
    for g in guides {
        session.annotate(g.clone(), None)?;
    }
    session.label_map_png()
}
