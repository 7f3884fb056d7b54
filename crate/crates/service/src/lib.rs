//! Request-lifecycle service for the virtual entanglement-distribution testbed: users
//! authenticate, queue for a channel pair, are matched to one by the allocator, run
//! measurements against the (virtual) time tagger and release the pair.
//!
//! State lives in an append-only journal; [`service::Service::open`] replays it, so a
//! restarted service picks up exactly where the old one stopped.

pub mod auth;
pub mod backend;
pub mod bench;
pub mod bus;
pub mod cli;
pub mod clock;
pub mod config;
pub mod http;
pub mod journal;
pub mod measure;
pub mod notify;
pub mod service;
pub mod store;

pub use config::ServiceConfig;
pub use service::{Service, ServiceError};
