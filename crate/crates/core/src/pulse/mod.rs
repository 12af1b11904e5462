//! Pulse sequences: a small text language, canonical builders and a
//! compiler to tick-quantized channel timing tables.
//!
//! The language is a `;`-separated list of elements:
//!
//! ```text
//! sequence := element (";" element)* ;
//! element  := "pump" | "readout" | "camera" "(" duration ")"
//!           | "tau" | "delay" "(" duration | symbol ")" | mw ;
//! mw       := ("pi" | "pi/2" | "mw" "(" duration | symbol ")") [ "@" phase_deg ] ;
//! duration := number unit ; unit := "ns" | "us" | "ms" ;
//! symbol   := identifier starting with "tau"
//! ```
//!
//! For instance the Hahn echo reads `pump; pi/2; tau; pi; tau; pi/2; readout`.

mod compile;
mod parse;

use std::fmt;

pub use compile::{compile, compile_variant, Channel, CompileError, HardwareProfile, ImageVariant, Interval, TimingTable};
pub use parse::{parse, ParseError, ParseErrorKind};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the default sweep variable.
pub const TAU: &str = "tau";

/// A duration that is either fixed (ns) or bound to a sweep variable.
#[derive(Debug, Clone, PartialEq)]
pub enum DurationSpec {
    Fixed(f64),
    Symbol(String),
}

impl DurationSpec {
    pub fn tau() -> Self {
        DurationSpec::Symbol(TAU.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MwAngle {
    Pi,
    HalfPi,
    Explicit(DurationSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaserPurpose {
    Pump,
    Readout,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    /// Microwave pulse; the phase is carried but not used by the signal models.
    Mw { angle: MwAngle, phase_deg: f64 },
    Delay(DurationSpec),
    /// Laser pulse whose duration comes from the hardware profile.
    Laser(LaserPurpose),
    CameraWindow { duration_ns: f64 },
}

impl Element {
    pub fn mw(angle: MwAngle) -> Self {
        Element::Mw { angle, phase_deg: 0.0 }
    }

    fn symbol(&self) -> Option<&str> {
        match self {
            Element::Mw {
                angle: MwAngle::Explicit(DurationSpec::Symbol(s)),
                ..
            }
            | Element::Delay(DurationSpec::Symbol(s)) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("sequence is empty")]
    Empty,
    #[error("more than one sweep variable: {0:?}")]
    MultipleSweepVariables(Vec<String>),
    #[error("sweep variable `{0}` is unbound")]
    Unbound(String),
    #[error("sequence uses pi / pi/2 pulses but no pi-pulse duration was given")]
    MissingPiTime,
    #[error("invalid duration {0} ns")]
    InvalidDuration(f64),
    #[error("microwave pulse must have positive duration, got {0} ns")]
    NonPositiveMw(f64),
    #[error("invalid builder parameter: {0}")]
    InvalidParameter(String),
}

/// An ordered, non-empty list of sequence elements with at most one sweep
/// variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    elements: Vec<Element>,
}

impl PulseSequence {
    pub fn new(elements: Vec<Element>) -> Result<Self, SequenceError> {
        if elements.is_empty() {
            return Err(SequenceError::Empty);
        }
        let mut names: Vec<String> = Vec::new();
        for e in &elements {
            if let Some(s) = e.symbol() {
                if !names.iter().any(|n| n == s) {
                    names.push(s.to_string());
                }
            }
            match e {
                Element::Delay(DurationSpec::Fixed(d))
                | Element::Mw {
                    angle: MwAngle::Explicit(DurationSpec::Fixed(d)),
                    ..
                }
                | Element::CameraWindow { duration_ns: d }
                    if !(d.is_finite() && *d >= 0.0) =>
                {
                    return Err(SequenceError::InvalidDuration(*d));
                }
                _ => {}
            }
        }
        if names.len() > 1 {
            return Err(SequenceError::MultipleSweepVariables(names));
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn sweep_variable(&self) -> Option<&str> {
        self.elements.iter().find_map(Element::symbol)
    }

    /// Substitutes the sweep variable and the π-pulse duration.
    pub fn resolve(&self, bindings: &Bindings) -> Result<ResolvedSequence, SequenceError> {
        let dur = |d: &DurationSpec| match d {
            DurationSpec::Fixed(v) => Ok(*v),
            DurationSpec::Symbol(s) => match bindings.sweep_ns {
                Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
                Some(v) => Err(SequenceError::InvalidDuration(v)),
                None => Err(SequenceError::Unbound(s.clone())),
            },
        };
        let t_pi = || bindings.t_pi_ns.ok_or(SequenceError::MissingPiTime);
        let mut out = Vec::with_capacity(self.elements.len());
        for e in &self.elements {
            let r = match e {
                Element::Mw { angle, phase_deg } => {
                    let d = match angle {
                        MwAngle::Pi => t_pi()?,
                        MwAngle::HalfPi => 0.5 * t_pi()?,
                        MwAngle::Explicit(d) => dur(d)?,
                    };
                    if !(d > 0.0) {
                        return Err(SequenceError::NonPositiveMw(d));
                    }
                    ResolvedElement::Mw {
                        duration_ns: d,
                        phase_deg: *phase_deg,
                    }
                }
                Element::Delay(d) => ResolvedElement::Delay { duration_ns: dur(d)? },
                Element::Laser(p) => ResolvedElement::Laser(*p),
                Element::CameraWindow { duration_ns } => ResolvedElement::Camera {
                    duration_ns: *duration_ns,
                },
            };
            out.push(r);
        }
        Ok(ResolvedSequence { elements: out })
    }
}

impl fmt::Display for PulseSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

/// Values substituted into a sequence before compilation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub t_pi_ns: Option<f64>,
    pub sweep_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedElement {
    Mw { duration_ns: f64, phase_deg: f64 },
    Delay { duration_ns: f64 },
    Laser(LaserPurpose),
    Camera { duration_ns: f64 },
}

/// A sequence with every duration known.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSequence {
    pub elements: Vec<ResolvedElement>,
}

impl ResolvedSequence {
    pub fn mw_durations(&self) -> Vec<f64> {
        self.elements
            .iter()
            .filter_map(|e| match e {
                ResolvedElement::Mw { duration_ns, .. } => Some(*duration_ns),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SequenceKind {
    Rabi,
    T1,
    HahnEcho,
    Odmr,
}

impl SequenceKind {
    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::Rabi => "Rabi",
            SequenceKind::T1 => "T1",
            SequenceKind::HahnEcho => "HahnEcho",
            SequenceKind::Odmr => "Odmr",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rabi" => Some(SequenceKind::Rabi),
            "t1" => Some(SequenceKind::T1),
            "hahnecho" | "hahn_echo" | "echo" | "t2" => Some(SequenceKind::HahnEcho),
            "odmr" => Some(SequenceKind::Odmr),
            _ => None,
        }
    }
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The swept quantity handed to a builder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSpec {
    Fixed(f64),
    Symbolic,
}

impl TauSpec {
    fn duration(self) -> Result<DurationSpec, SequenceError> {
        match self {
            TauSpec::Fixed(v) if v.is_finite() && v >= 0.0 => Ok(DurationSpec::Fixed(v)),
            TauSpec::Fixed(v) => Err(SequenceError::InvalidDuration(v)),
            TauSpec::Symbolic => Ok(DurationSpec::tau()),
        }
    }
}

/// Canonical sequences: pump, microwave block, readout.
///
/// The π/2 pulse is half the π-pulse duration at the same drive amplitude.
/// `t_pi_ns` is not used by the Rabi sequence, whose single pulse is the
/// swept quantity.
pub fn build(kind: SequenceKind, t_pi_ns: f64, tau: TauSpec) -> Result<(PulseSequence, Bindings), SequenceError> {
    use Element::*;
    let tau_d = tau.duration()?;
    let needs_pi = kind != SequenceKind::Rabi;
    if needs_pi && !(t_pi_ns > 0.0 && t_pi_ns.is_finite()) {
        return Err(SequenceError::InvalidParameter(format!("t_pi must be positive, got {t_pi_ns}")));
    }
    let elements = match kind {
        SequenceKind::Rabi => vec![Laser(LaserPurpose::Pump), Element::mw(MwAngle::Explicit(tau_d)), Laser(LaserPurpose::Readout)],
        SequenceKind::T1 => vec![Laser(LaserPurpose::Pump), Element::mw(MwAngle::Pi), Delay(tau_d), Laser(LaserPurpose::Readout)],
        SequenceKind::HahnEcho => vec![
            Laser(LaserPurpose::Pump),
            Element::mw(MwAngle::HalfPi),
            Delay(tau_d.clone()),
            Element::mw(MwAngle::Pi),
            Delay(tau_d),
            Element::mw(MwAngle::HalfPi),
            Laser(LaserPurpose::Readout),
        ],
        SequenceKind::Odmr => vec![Laser(LaserPurpose::Pump), Element::mw(MwAngle::Pi), Laser(LaserPurpose::Readout)],
    };
    let bindings = Bindings {
        t_pi_ns: needs_pi.then_some(t_pi_ns),
        sweep_ns: match tau {
            TauSpec::Fixed(v) => Some(v),
            TauSpec::Symbolic => None,
        },
    };
    Ok((PulseSequence::new(elements)?, bindings))
}

fn fmt_duration(d: &DurationSpec) -> String {
    match d {
        DurationSpec::Fixed(v) => format!("{v}ns"),
        DurationSpec::Symbol(s) => s.clone(),
    }
}

/// Source text for a sequence; `parse(&render(s)) == Ok(s)`.
pub fn render(seq: &PulseSequence) -> String {
    let parts: Vec<String> = seq
        .elements
        .iter()
        .map(|e| match e {
            Element::Laser(LaserPurpose::Pump) => "pump".to_string(),
            Element::Laser(LaserPurpose::Readout) => "readout".to_string(),
            Element::CameraWindow { duration_ns } => format!("camera({duration_ns}ns)"),
            Element::Delay(DurationSpec::Symbol(s)) if s == TAU => TAU.to_string(),
            Element::Delay(d) => format!("delay({})", fmt_duration(d)),
            Element::Mw { angle, phase_deg } => {
                let base = match angle {
                    MwAngle::Pi => "pi".to_string(),
                    MwAngle::HalfPi => "pi/2".to_string(),
                    MwAngle::Explicit(d) => format!("mw({})", fmt_duration(d)),
                };
                if *phase_deg == 0.0 {
                    base
                } else {
                    format!("{base} @ {phase_deg}")
                }
            }
        })
        .collect();
    parts.join("; ")
}
