//! Content-centric routing over Wi-Fi Direct multi-group networks.
//!
//! The crate models the Android delivery constraints of multi-group
//! Wi-Fi Direct, builds the tunnel backbone that works around them, runs
//! the content routing protocol on top and reproduces the testbed
//! experiments on a deterministic single-channel simulator.

pub mod backbone;
pub mod configs;
pub mod content_routing;
pub mod netmodel;
pub mod scenarios;
pub mod time;
pub mod topology;
