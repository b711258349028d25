//! Client side of the crossarm inspection pipeline: a typed async client
//! for the service API and the local commands behind the `polescan` tool.

pub mod client;
pub mod local;

pub use client::{ClientError, ServiceClient, DEFAULT_SERVER};
