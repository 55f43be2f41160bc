//! Streaming runtime around `retarget-core`.
//!
//! A typed in-process [`broker`] connects the [`runtime`] pipeline thread to
//! the outside world: a length-prefixed TCP [`transport`], a WebSocket
//! [`bridge`] for the browser UI, log [`replay`] and [`record`]ing. The
//! `retarget` binary exposes all of it on the command line.

pub mod analysis;
pub mod bridge;
pub mod broker;
pub mod calibrator;
pub mod config;
pub mod messages;
pub mod pipeline;
pub mod record;
pub mod replay;
pub mod runtime;
pub mod transport;
pub mod ui;

pub use broker::{Broker, BrokerError, Publisher, QueuePolicy, Subscription};
pub use config::ServiceConfig;
pub use messages::{MapMode, Message, Payload};
pub use pipeline::{Pipeline, PipelineConfig};
pub use runtime::Service;
