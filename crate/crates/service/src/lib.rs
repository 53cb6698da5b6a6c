//! Session service for nudge-assisted body-machine-interface training: artifact and
//! trial-log formats, configuration, the live-session state machine, its WebSocket
//! endpoint and the `skillnudge` command-line verbs.

pub mod analyze;
pub mod cli;
pub mod config;
pub mod model_file;
pub mod protocol;
pub mod server;
pub mod session;
pub mod store;
pub mod trial_log;
