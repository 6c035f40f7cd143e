//! The storage contract over TCP.

mod client;
pub mod frame;
mod server;

pub use client::{RemoteStore, SentFrame};
pub use frame::Frame;
pub use server::{dispatch, spawn, ServerHandle};
