//! Warmup-stable-decay learning-rate schedules.

use crate::error::{Error, Result};

/// Shape of a decay ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayShape {
    #[default]
    Linear,
    Cosine,
}

/// One decay ramp from the current level down to `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPhase {
    pub start: f64,
    pub len: f64,
    pub floor: f64,
}

/// Linear warmup from 0 to `peak`, then the stable level, then any number of
/// decay ramps. Step positions are real so schedules can be rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct WsdSchedule {
    pub warmup: f64,
    pub peak: f64,
    pub decays: Vec<DecayPhase>,
    pub shape: DecayShape,
}

impl WsdSchedule {
    pub fn new(warmup: f64, peak: f64, decays: Vec<DecayPhase>) -> Result<Self> {
        let s = Self {
            warmup,
            peak,
            decays,
            shape: DecayShape::Linear,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(peak: f64) -> Self {
        Self {
            warmup: 0.0,
            peak,
            decays: Vec::new(),
            shape: DecayShape::Linear,
        }
    }

    pub fn with_shape(mut self, shape: DecayShape) -> Self {
        self.shape = shape;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSchedule(msg));
        if self.warmup.is_nan() || self.warmup < 0.0 || !self.peak.is_finite() || self.peak < 0.0 {
            return bad(format!("warmup {} / peak {}", self.warmup, self.peak));
        }
        let mut prev_end = self.warmup;
        for d in &self.decays {
            let ordered = d.start >= prev_end && d.len >= 0.0;
            if !ordered || !d.floor.is_finite() || d.floor < 0.0 {
                return bad(format!(
                    "decay from {} over {} must start at or after {prev_end}",
                    d.start, d.len
                ));
            }
            prev_end = d.start + d.len;
        }
        Ok(())
    }

    pub fn lr(&self, step: usize) -> f64 {
        let s = step as f64;
        if s < self.warmup {
            return self.peak * s / self.warmup;
        }
        let mut level = self.peak;
        for d in &self.decays {
            if s < d.start {
                return level;
            }
            if s < d.start + d.len {
                let frac = (s - d.start) / d.len;
                let w = match self.shape {
                    DecayShape::Linear => frac,
                    DecayShape::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * frac).cos()),
                };
                return level + (d.floor - level) * w;
            }
            level = d.floor;
        }
        level
    }

    /// Maps step positions by `new_total / old_total` and learning rates by
    /// `new_peak / peak`. Warmup stays at least one step if it was nonzero.
    pub fn rescaled(&self, old_total: f64, new_total: f64, new_peak: f64) -> Self {
        let k = new_total / old_total;
        let r = if self.peak > 0.0 { new_peak / self.peak } else { 0.0 };
        let warmup = if self.warmup > 0.0 { (self.warmup * k).max(1.0) } else { 0.0 };
        Self {
            warmup,
            peak: new_peak,
            decays: self
                .decays
                .iter()
                .map(|d| DecayPhase {
                    start: (d.start * k).max(warmup),
                    len: d.len * k,
                    floor: d.floor * r,
                })
                .collect(),
            shape: self.shape,
        }
    }
}

/// Single-ramp schedule evaluated at `step`.
pub fn wsd_schedule(
    step: usize,
    warmup_steps: usize,
    peak: f64,
    decay_start: usize,
    decay_len: usize,
    floor: f64,
) -> Result<f64> {
    let s = WsdSchedule::new(
        warmup_steps as f64,
        peak,
        vec![DecayPhase {
            start: decay_start as f64,
            len: decay_len as f64,
            floor,
        }],
    )?;
    Ok(s.lr(step))
}

/// Reference training length, in steps, that the presets are defined over.
pub const PRESET_TOTAL_STEPS: f64 = 30_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Lr1,
    Lr2,
    Lr3,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Lr1, Preset::Lr2, Preset::Lr3];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Lr1 => "LR1",
            Preset::Lr2 => "LR2",
            Preset::Lr3 => "LR3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }

    /// The schedule at its reference length and peak.
    pub fn schedule(self) -> WsdSchedule {
        let lr2 = DecayPhase {
            start: 9000.0,
            len: 2000.0,
            floor: 5e-6,
        };
        let lr3 = DecayPhase {
            start: 19000.0,
            len: 1000.0,
            floor: 1e-6,
        };
        let decays = match self {
            Preset::Lr1 => vec![],
            Preset::Lr2 => vec![lr2],
            Preset::Lr3 => vec![lr2, lr3],
        };
        WsdSchedule::new(50.0, 3e-5, decays).expect("preset intervals are ordered")
    }

    /// The schedule squeezed into `total_steps` with the given peak.
    pub fn scaled(self, total_steps: usize, peak: f64) -> WsdSchedule {
        self.schedule().rescaled(PRESET_TOTAL_STEPS, total_steps as f64, peak)
    }
}
