//! Multi-task recurrent LSTMP networks: an ASR tower and a language
//! recognition tower coupled by inter-task recurrent links.

pub mod checkpoint;
pub mod corpus;
pub mod dd;
pub mod error;
pub mod gradcheck;
pub mod lstmp;
pub mod multitask;
pub mod network;
pub mod numkit;
pub mod params;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};
