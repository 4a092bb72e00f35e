//! Toolkit for building and scoring episodic-memory dialogue data.
//!
//! * [`calendar`]: exact Gregorian date-time arithmetic.
//! * [`persona`]: character cards, plots and prompt rendering.
//! * [`dialogue`]: the two-agent generation loop and training serialization.
//! * [`backends`]: chat and embedding providers, plus offline stand-ins.
//! * [`temporal_qa`]: temporal-reasoning QA synthesis and keyword grading.
//! * [`emtest`]: benchmark datasets, validation and statistics.
//! * [`eval`]: similarity scoring, correlation and report aggregation.

pub mod backends;
pub mod calendar;
pub mod dialogue;
pub mod emtest;
pub mod eval;
pub mod jsonl;
pub mod persona;
pub mod temporal_qa;
