//! Real-time reading metrics from eye-tracker gaze streams.
//!
//! Pipeline: gaze samples are classified into fixations and saccades
//! ([`ivt`]), fixations are mapped onto word areas of interest ([`aoi`]) and
//! folded into per-word reading measures ([`metrics`]). [`session`] ties the
//! stages together with persistence and live fan-out; [`server`] exposes it
//! over WebSocket.

pub mod aoi;
pub mod export;
pub mod ivt;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod server;
pub mod session;
pub mod toolkit;
