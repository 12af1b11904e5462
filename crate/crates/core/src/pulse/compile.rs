use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LaserPurpose, ResolvedElement, ResolvedSequence};

/// Pulse-generator and optical-switch timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareProfile {
    pub tick_ns: f64,
    /// Command-to-light latency of the AOM.
    pub aom_delay_ns: f64,
    /// Optical rise time; inserted as a guard after every laser pulse.
    pub aom_rise_ns: f64,
    pub pump_duration_ns: f64,
    pub readout_duration_ns: f64,
    pub mw_switch_delay_ns: f64,
    /// Time origin of the first element. The default leaves room for the
    /// full AOM switching time so a leading pump pulse can be compensated.
    pub lead_in_ns: f64,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        Self {
            tick_ns: 3.3,
            aom_delay_ns: 130.0,
            aom_rise_ns: 35.0,
            pump_duration_ns: 350_000.0,
            readout_duration_ns: 10_000.0,
            mw_switch_delay_ns: 0.0,
            lead_in_ns: 165.0,
        }
    }
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<(), CompileError> {
        if !(self.tick_ns > 0.0) {
            return Err(CompileError::InvalidProfile("tick must be positive".into()));
        }
        let non_negative = [
            self.aom_delay_ns,
            self.aom_rise_ns,
            self.pump_duration_ns,
            self.readout_duration_ns,
            self.mw_switch_delay_ns,
            self.lead_in_ns,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0)) {
            return Err(CompileError::InvalidProfile("delays and durations must be non-negative".into()));
        }
        Ok(())
    }

    /// Nearest tick, ties toward +∞.
    pub fn to_ticks(&self, ns: f64) -> i64 {
        // The small bias keeps exact half-ticks from rounding down through
        // representation error in `ns / tick`.
        (ns / self.tick_ns + 0.5 + 1e-9).floor() as i64
    }

    pub fn to_ns(&self, ticks: i64) -> f64 {
        ticks as f64 * self.tick_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Mw,
    Laser,
    Camera,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Mw => "MW",
            Channel::Laser => "LASER",
            Channel::Camera => "CAMERA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start_tick: u64,
    pub end_tick: u64,
}

impl Interval {
    pub fn len(&self) -> u64 {
        self.end_tick - self.start_tick
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which of the three acquisitions of a measurement block to compile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageVariant {
    /// Microwave and light.
    Full,
    /// Same timing, microwave suppressed.
    NoMw,
    /// Same timing, microwave and light suppressed; only the camera runs.
    Background,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("invalid hardware profile: {0}")]
    InvalidProfile(String),
    #[error("{channel} command would start at {start_ns:.2} ns; the sequence begins too early to absorb the switching delay")]
    NegativeStart { channel: Channel, start_ns: f64 },
    #[error("overlapping {channel} intervals at tick {tick}")]
    Overlap { channel: Channel, tick: u64 },
    #[error("microwave pulse of {0} ns is shorter than half a tick")]
    MwBelowTick(f64),
}

/// Tick-quantized per-channel schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub tick_ns: f64,
    pub mw: Vec<Interval>,
    pub laser: Vec<Interval>,
    pub camera: Vec<Interval>,
    pub total_ticks: u64,
    /// Requested optical arrival tick of every laser pulse, in order.
    pub optical_requests: Vec<u64>,
}

impl TimingTable {
    fn empty(tick_ns: f64) -> Self {
        Self {
            tick_ns,
            mw: Vec::new(),
            laser: Vec::new(),
            camera: Vec::new(),
            total_ticks: 0,
            optical_requests: Vec::new(),
        }
    }

    pub fn channel(&self, c: Channel) -> &[Interval] {
        match c {
            Channel::Mw => &self.mw,
            Channel::Laser => &self.laser,
            Channel::Camera => &self.camera,
        }
    }

    fn push(&mut self, channel: Channel, start: i64, end: i64, tick_ns: f64) -> Result<(), CompileError> {
        if start < 0 {
            return Err(CompileError::NegativeStart {
                channel,
                start_ns: start as f64 * tick_ns,
            });
        }
        let list = match channel {
            Channel::Mw => &mut self.mw,
            Channel::Laser => &mut self.laser,
            Channel::Camera => &mut self.camera,
        };
        let iv = Interval {
            start_tick: start as u64,
            end_tick: end as u64,
        };
        if let Some(last) = list.last() {
            if iv.start_tick < last.end_tick {
                return Err(CompileError::Overlap {
                    channel,
                    tick: iv.start_tick,
                });
            }
        }
        list.push(iv);
        self.total_ticks = self.total_ticks.max(iv.end_tick);
        Ok(())
    }

    /// Rows `channel, start_tick, end_tick, start_ns, end_ns`, sorted by
    /// start tick then channel, under a `# tick_ns` header.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(Channel, Interval)> = Vec::new();
        for c in [Channel::Mw, Channel::Laser, Channel::Camera] {
            rows.extend(self.channel(c).iter().map(|iv| (c, *iv)));
        }
        rows.sort_by_key(|(c, iv)| (iv.start_tick, *c));
        let mut out = String::new();
        let _ = writeln!(out, "# tick_ns {:.2}", self.tick_ns);
        let _ = writeln!(out, "# total_ticks {}", self.total_ticks);
        out.push_str("channel, start_tick, end_tick, start_ns, end_ns\n");
        for (c, iv) in rows {
            let _ = writeln!(
                out,
                "{c}, {}, {}, {:.2}, {:.2}",
                iv.start_tick,
                iv.end_tick,
                iv.start_tick as f64 * self.tick_ns,
                iv.end_tick as f64 * self.tick_ns
            );
        }
        out
    }
}

/// Compiles the full (microwave + light) acquisition.
pub fn compile(seq: &ResolvedSequence, hw: &HardwareProfile) -> Result<TimingTable, CompileError> {
    compile_variant(seq, hw, ImageVariant::Full)
}

/// Compiles one acquisition of the three-image block. Every variant shares
/// the same element timing; suppressed channels are simply not emitted.
pub fn compile_variant(
    seq: &ResolvedSequence,
    hw: &HardwareProfile,
    variant: ImageVariant,
) -> Result<TimingTable, CompileError> {
    hw.validate()?;
    let emit_mw = variant == ImageVariant::Full;
    let emit_laser = variant != ImageVariant::Background;
    let mut table = TimingTable::empty(hw.tick_ns);
    let mut cursor = hw.to_ticks(hw.lead_in_ns);
    let mw_shift = hw.to_ticks(hw.mw_switch_delay_ns);
    let rise = hw.to_ticks(hw.aom_rise_ns);
    for e in &seq.elements {
        match e {
            ResolvedElement::Mw { duration_ns, .. } => {
                let len = hw.to_ticks(*duration_ns);
                if len <= 0 {
                    return Err(CompileError::MwBelowTick(*duration_ns));
                }
                if emit_mw {
                    table.push(Channel::Mw, cursor - mw_shift, cursor - mw_shift + len, hw.tick_ns)?;
                }
                cursor += len;
            }
            ResolvedElement::Delay { duration_ns } => cursor += hw.to_ticks(*duration_ns),
            ResolvedElement::Camera { duration_ns } => {
                let len = hw.to_ticks(*duration_ns);
                table.push(Channel::Camera, cursor, cursor + len, hw.tick_ns)?;
                cursor += len;
            }
            ResolvedElement::Laser(purpose) => {
                let duration = match purpose {
                    LaserPurpose::Pump => hw.pump_duration_ns,
                    LaserPurpose::Readout => hw.readout_duration_ns,
                };
                let len = hw.to_ticks(duration);
                let command = hw.to_ticks(hw.to_ns(cursor) - hw.aom_delay_ns);
                if command < 0 {
                    return Err(CompileError::NegativeStart {
                        channel: Channel::Laser,
                        start_ns: hw.to_ns(cursor) - hw.aom_delay_ns,
                    });
                }
                if emit_laser {
                    table.push(Channel::Laser, command, command + len, hw.tick_ns)?;
                    table.optical_requests.push(cursor as u64);
                }
                if *purpose == LaserPurpose::Readout {
                    table.push(Channel::Camera, cursor, cursor + len, hw.tick_ns)?;
                }
                cursor += len + rise;
            }
        }
    }
    table.total_ticks = table.total_ticks.max(cursor.max(0) as u64);
    Ok(table)
}
