//! Operational surface for memory-boosted serving: an HTTP gateway
//! ([`http`]) and a benchmark runner ([`runner`]) that replays Zipf query
//! streams and emits step logs, summaries, and plot-ready series
//! ([`report`]). Both assemble the same serving stack from a
//! [`config::ControllerSpec`], which keeps their decisions in lockstep.

pub mod config;
pub mod http;
pub mod report;
pub mod runner;
