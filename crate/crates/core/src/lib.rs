//! Link-level simulator and analytical calculator for the multi-user massive
//! MIMO uplink with per-user carrier frequency offsets.
//!
//! The processing chain per frame is: draw the channel and CFOs
//! ([`channel`]), estimate the CFOs from impulse pilots ([`cfo`]), estimate
//! the compensated channel with MMSE ([`estimation`]), then detect data with a
//! ZF or MRC receiver ([`detection`]). [`rates`] holds the closed-form SINR and
//! rate expressions together with the random-matrix moment identities they
//! rest on, and [`experiments`] sweeps them.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod cfo;
pub mod channel;
pub mod config;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod montecarlo;
pub mod rates;

pub use cfo::{CfoEstimate, CfoMode, CfoPilotSchedule};
pub use channel::{CMatrix, ChannelRealization, ReceivedBlock};
pub use config::{ConfigFile, RandomSource, SystemConfig};
pub use detection::{ComponentPowers, Detector, ReceiverKind};
pub use error::{Error, Result};
pub use estimation::ChannelEstimate;
pub use experiments::{ExperimentId, ExperimentResult, SweepSpec};
pub use rates::RateReport;
