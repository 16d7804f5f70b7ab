//! Timestamped signal transitions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::units::Seconds;

/// Named nets of the synthesizer whose transitions can be recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Signal {
    Ref,
    Div,
    Clk,
    Vco,
    Quad,
    OutA,
    OutB,
    Up,
    Dn,
    Lock,
}

impl Signal {
    pub const ALL: [Signal; 10] = [
        Signal::Ref,
        Signal::Div,
        Signal::Clk,
        Signal::Vco,
        Signal::Quad,
        Signal::OutA,
        Signal::OutB,
        Signal::Up,
        Signal::Dn,
        Signal::Lock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Signal::Ref => "REF",
            Signal::Div => "DIV",
            Signal::Clk => "CLK",
            Signal::Vco => "VCO",
            Signal::Quad => "QUAD",
            Signal::OutA => "OUT_A",
            Signal::OutB => "OUT_B",
            Signal::Up => "UP",
            Signal::Dn => "DN",
            Signal::Lock => "LOCK",
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Signal::ALL
            .into_iter()
            .find(|sig| sig.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown signal name {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Rising,
    Falling,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Rising => "rising",
            Polarity::Falling => "falling",
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rising" | "r" | "1" => Ok(Polarity::Rising),
            "falling" | "f" | "0" => Ok(Polarity::Falling),
            _ => Err(format!("unknown polarity {s:?}")),
        }
    }
}

/// One transition of one signal.
///
/// `index` is the cycle index of the edge within its signal: the k-th rising
/// edge carries index k, and a falling edge carries the index of the rising
/// edge that precedes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub signal: Signal,
    pub polarity: Polarity,
    pub index: u64,
    pub time: Seconds,
}

impl EdgeEvent {
    pub fn rising(signal: Signal, index: u64, time: f64) -> Self {
        Self {
            signal,
            polarity: Polarity::Rising,
            index,
            time: Seconds(time),
        }
    }

    pub fn falling(signal: Signal, index: u64, time: f64) -> Self {
        Self {
            signal,
            polarity: Polarity::Falling,
            index,
            time: Seconds(time),
        }
    }

    pub fn t(&self) -> f64 {
        self.time.0
    }

    pub fn is_rising(&self) -> bool {
        self.polarity == Polarity::Rising
    }
}

/// Ordered transitions of a single signal.
pub type EdgeStream = Vec<EdgeEvent>;

/// Times of the rising edges in a stream.
pub fn rising_times(edges: &[EdgeEvent]) -> Vec<f64> {
    edges.iter().filter(|e| e.is_rising()).map(|e| e.t()).collect()
}

/// True when the times are strictly increasing.
pub fn is_monotone(edges: &[EdgeEvent]) -> bool {
    edges.windows(2).all(|w| w[1].t() > w[0].t())
}

/// Consumer of edges as the simulator produces them.
///
/// Long runs attach streaming consumers instead of retaining every edge.
pub trait EdgeSink {
    fn on_edge(&mut self, edge: &EdgeEvent);
}

/// Discards everything.
pub struct NullSink;

impl EdgeSink for NullSink {
    fn on_edge(&mut self, _edge: &EdgeEvent) {}
}

impl<F: FnMut(&EdgeEvent)> EdgeSink for F {
    fn on_edge(&mut self, edge: &EdgeEvent) {
        self(edge)
    }
}
