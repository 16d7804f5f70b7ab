//! Behavioral simulator and analysis toolkit for a low-power integer-N PLL
//! frequency synthesizer.
//!
//! The crate is organised bottom-up: unit newtypes and seeded random streams,
//! the loop blocks (PFD, charge pump, loop filter), VCO, dividers and lock
//! detector, the event-driven [`engine`], and on top of it the offline
//! [`analysis`], closed-form [`design`] math and the [`progif`] planner and
//! register map.

pub mod analysis;
pub mod config;
pub mod design;
pub mod dividers;
pub mod edges;
pub mod engine;
pub mod lockdet;
pub mod loop_blocks;
pub mod noise;
pub mod progif;
pub mod rng;
pub mod units;
pub mod vco;

pub use config::{validate_config, PllConfig, Violation};
pub use edges::{EdgeEvent, EdgeSink, EdgeStream, Polarity, Signal};
pub use engine::{simulate, simulate_open_vco, simulate_with, SimError, SimSummary, SimTrace};
pub use units::{Amperes, Dbc, DbcPerHz, Farads, Hertz, Ohms, Seconds, Volts};
