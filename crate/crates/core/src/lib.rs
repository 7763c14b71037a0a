//! Lossless compression of downlink control information (DCI) messages.
//!
//! The crate covers the whole chain: a bitfield [`schema`] with segment
//! tokenization, a synthetic scheduler that produces correlated DCI traces
//! ([`tracegen`]), entropy [`coders`], learned and counting probability
//! [`models`], the end-to-end compression [`pipeline`], and a polar-coded
//! control-channel link simulator ([`pdcch`]) that measures what shorter
//! payloads buy in reliability.

pub mod coders;
pub mod error;
pub mod models;
pub mod pdcch;
pub mod pipeline;
pub mod schema;
pub mod tracegen;

pub use error::{Error, Result};
pub use schema::{DciMessage, DciSchema, FieldSpec, SegmentPlan};
