//! Power-aware file-downloading schedulers.
//!
//! A server delivers files to N users over slotted time. Each user alternates
//! between downloading a file and idling for a geometric period, and the
//! server may transmit to at most M users per slot subject to a time-average
//! power budget. This crate provides
//!
//! * the optimal single-user drift-plus-penalty ratio policy
//!   ([`single_user`]),
//! * the multi-user Lyapunov indexing heuristic ([`multi_user`]),
//! * an exact occupation-measure linear program with a built-in dense simplex
//!   for small systems ([`oracle`]),
//! * a seeded slot simulator with memoryless and packet-based file length
//!   models ([`sim`]), and
//! * experiment drivers producing result tables ([`experiment`]).

pub mod config;
pub mod error;
pub mod experiment;
pub mod model;
pub mod multi_user;
pub mod oracle;
pub mod sim;
pub mod single_user;

pub use error::{Error, Result};
pub use model::{
    baseline_system, dpp_reward, expected_frame_length, phi_from_exponential, phi_from_geometric, ActionId,
    FileLengthModel, FileState, SubsystemSpec, SystemSpec, VirtualQueueState,
};
