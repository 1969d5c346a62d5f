//! Blinded real/synthetic perceptual study.
//!
//! A session is a seeded random sequence of real and synthetic slices shown
//! one at a time. The rater labels each as real or synthetic; truth and
//! provenance stay server-side until the session is scored.

pub mod error;
pub mod pool;
pub mod report;
pub mod server;
pub mod session;
pub mod store;

pub use error::{Error, Result};
pub use pool::{ImagePool, PoolImage};
pub use report::{score_session, tally, ConfusionCell, FoolingRate, PerceptualReport};
pub use server::{router, AppState};
pub use session::{create_session, Composition, Label, RatingRecord, StudyItem, StudySession};
pub use store::Store;
