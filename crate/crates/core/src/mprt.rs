//! Maximum power reference tracking (MPRT) controllers.
//!
//! All three methods share the perturb-and-observe curtailment skeleton and
//! emit a dc-link voltage reference once per sample:
//!
//! - above the reference (plus deadband) the voltage reference is raised,
//!   moving the operating point to the right of the MPP;
//! - below the reference (minus deadband) the controller hill-climbs towards
//!   the MPP;
//! - inside the deadband the reference is held.
//!
//! They differ only in the step size. [`Method::Fixed`] uses two constant
//! steps, [`Method::Adaptive`] scales the step with the power error and
//! [`Method::Proposed`] additionally adapts the gain when the MPP sits below
//! the reference and adds an accumulator term to cut overshoots during
//! irradiance recovery.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MprtError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("start voltage {v_start} V is below the minimum dc-link voltage {vdc_min} V")]
    StartBelowMinimum { v_start: f64, vdc_min: f64 },
    #[error("power reference must be positive for gain adaptation (got {0} W)")]
    NonPositiveReference(f64),
    #[error("controller state does not match config: {0}")]
    StateMismatch(String),
    #[error("sample time {t} s does not follow {t_prev} s at the configured rate")]
    SampleTiming { t: f64, t_prev: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Method 1: fixed transient and steady-state steps.
    Fixed,
    /// Method 2: step proportional to the power error.
    Adaptive,
    /// Method 3: adaptive step with gain adjustment and accumulator.
    Proposed,
}

impl Method {
    pub fn number(self) -> u8 {
        match self {
            Method::Fixed => 1,
            Method::Adaptive => 2,
            Method::Proposed => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Method::Fixed),
            2 => Some(Method::Adaptive),
            3 => Some(Method::Proposed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Fixed => "fixed",
            Method::Adaptive => "adaptive",
            Method::Proposed => "proposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MprtConfig {
    pub method: Method,
    /// Controller sampling frequency, Hz.
    pub f_sample: f64,
    /// Base adaptive gain, V/W.
    pub k_base: f64,
    pub c_min: f64,
    pub k_acc: f64,
    pub v_step_min: f64,
    pub v_step_max: f64,
    /// Gain-reset margin below the reference, W.
    pub tau1: f64,
    /// Gain-reset deviation from the moving average, W.
    pub tau2: f64,
    /// Power moving-average window.
    pub n_avg: usize,
    /// Error-variation moving-average window.
    pub m_avg: usize,
    /// Consecutive mean crossings before the gain is adjusted.
    pub ct_max: u32,
    /// Accumulator resetting rate.
    pub lambda_r: f64,
    /// Transient step of the fixed-step method, V.
    pub v_step_transient_fixed: f64,
    /// Hold band around the reference, W.
    pub deadband: f64,
    /// Transient/steady-state classifier threshold on |p_err|, W.
    pub transient_threshold: f64,
    /// Lowest dc-link voltage reference the controller may emit, V.
    pub vdc_min: f64,
    /// Enables the gain adjustment of the proposed method.
    pub adaptive_gain: bool,
    /// Enables the accumulator of the proposed method.
    pub accumulator: bool,
}

impl Default for MprtConfig {
    fn default() -> Self {
        Self {
            method: Method::Proposed,
            f_sample: 5.0,
            k_base: 6e-5,
            c_min: 0.2,
            k_acc: 0.3,
            v_step_min: 0.3,
            v_step_max: 12.0,
            tau1: 10e3,
            tau2: 7.5e3,
            n_avg: 4,
            m_avg: 3,
            ct_max: 3,
            lambda_r: 0.5,
            v_step_transient_fixed: 4.0,
            deadband: 1e3,
            transient_threshold: 5e3,
            vdc_min: 300.0,
            adaptive_gain: true,
            accumulator: true,
        }
    }
}

impl MprtConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f_sample
    }

    pub fn validate(&self) -> Result<(), MprtError> {
        let bad = |msg: String| Err(MprtError::InvalidConfig(msg));
        let finite = [
            ("f_sample", self.f_sample),
            ("k_base", self.k_base),
            ("c_min", self.c_min),
            ("k_acc", self.k_acc),
            ("v_step_min", self.v_step_min),
            ("v_step_max", self.v_step_max),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("lambda_r", self.lambda_r),
            ("v_step_transient_fixed", self.v_step_transient_fixed),
            ("deadband", self.deadband),
            ("transient_threshold", self.transient_threshold),
            ("vdc_min", self.vdc_min),
        ];
        if let Some((name, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{name} must be finite"));
        }
        if self.f_sample <= 0.0 {
            return bad("f_sample must be positive".into());
        }
        if self.k_base <= 0.0 {
            return bad("k_base must be positive".into());
        }
        if !(self.c_min > 0.0 && self.c_min <= 1.0) {
            return bad("c_min must lie in (0, 1]".into());
        }
        if self.k_acc < 0.0 {
            return bad("k_acc must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.lambda_r) {
            return bad("lambda_r must lie in [0, 1)".into());
        }
        if !(self.v_step_min > 0.0 && self.v_step_min <= self.v_step_max) {
            return bad("requires 0 < v_step_min <= v_step_max".into());
        }
        if self.n_avg < 1 || self.m_avg < 1 || self.ct_max < 1 {
            return bad("n_avg, m_avg and ct_max must be at least 1".into());
        }
        if self.tau2 > self.tau1 {
            return bad("tau2 must not exceed tau1".into());
        }
        if self.deadband < 0.0 || self.transient_threshold < 0.0 {
            return bad("deadband and transient_threshold must be non-negative".into());
        }
        if self.v_step_transient_fixed <= 0.0 {
            return bad("v_step_transient_fixed must be positive".into());
        }
        if self.vdc_min <= 0.0 {
            return bad("vdc_min must be positive".into());
        }
        Ok(())
    }
}

/// One controller input frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MprtSample {
    pub p_pv: f64,
    pub p_ref: f64,
    pub v_dc: f64,
    pub t: f64,
}

/// Fixed-capacity moving window, seeded with the first value it sees.
#[derive(Debug, Clone, PartialEq)]
pub struct RingBuffer {
    values: VecDeque<f64>,
    capacity: usize,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            values: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.values.clear();
        self.values
            .extend(std::iter::repeat_n(value, self.capacity));
    }

    pub fn push(&mut self, value: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MprtState {
    pub v_dc_ref: f64,
    pub k_tr: f64,
    /// Consecutive crossings of the power moving average.
    pub c_t: u32,
    /// Accumulator, V.
    pub gamma: f64,
    pub p_pv_buf: RingBuffer,
    pub dperr_buf: RingBuffer,
    pub p_err_prev: f64,
    pub p_pv_prev: f64,
    pub p_pv_prev2: f64,
    pub last_v_step: f64,
    /// Signed change applied to the reference at the last sample.
    pub last_dv: f64,
    pub po_direction: f64,
    pub alpha: u8,
    t_prev: Option<f64>,
}

/// Creates a fresh controller state with the reference at `v_dc_start`.
pub fn init(cfg: &MprtConfig, v_dc_start: f64) -> Result<MprtState, MprtError> {
    cfg.validate()?;
    if !(v_dc_start >= cfg.vdc_min) {
        return Err(MprtError::StartBelowMinimum {
            v_start: v_dc_start,
            vdc_min: cfg.vdc_min,
        });
    }
    Ok(MprtState {
        v_dc_ref: v_dc_start,
        k_tr: cfg.k_base,
        c_t: 0,
        gamma: 0.0,
        p_pv_buf: RingBuffer::new(cfg.n_avg),
        dperr_buf: RingBuffer::new(cfg.m_avg),
        p_err_prev: 0.0,
        p_pv_prev: 0.0,
        p_pv_prev2: 0.0,
        last_v_step: cfg.v_step_min,
        last_dv: 0.0,
        po_direction: 1.0,
        alpha: 0,
        t_prev: None,
    })
}

/// Transient (0) / steady-state (1) classification with 20 % hysteresis:
/// leaving steady state needs `|p_err| > threshold`, re-entering it needs
/// `|p_err| <= 0.8 * threshold`.
pub fn classify_transient(p_err: f64, prev_alpha: u8, cfg: &MprtConfig) -> u8 {
    let e = p_err.abs();
    if prev_alpha == 1 {
        u8::from(e <= cfg.transient_threshold)
    } else {
        u8::from(e <= 0.8 * cfg.transient_threshold)
    }
}

/// Adaptive voltage step, clamped to `[v_step_min, v_step_max + gamma_add]`.
pub fn compute_step_size(
    p_err: f64,
    k_tr: f64,
    alpha: u8,
    gamma_add: f64,
    cfg: &MprtConfig,
) -> f64 {
    let a = f64::from(alpha);
    let raw = a * cfg.v_step_min + (1.0 - a) * k_tr * p_err.abs() + gamma_add;
    raw.clamp(cfg.v_step_min, cfg.v_step_max + gamma_add)
}

impl MprtState {
    fn check(&self, cfg: &MprtConfig) -> Result<(), MprtError> {
        if self.p_pv_buf.capacity() != cfg.n_avg || self.dperr_buf.capacity() != cfg.m_avg {
            return Err(MprtError::StateMismatch(format!(
                "buffer sizes {}/{} vs config {}/{}",
                self.p_pv_buf.capacity(),
                self.dperr_buf.capacity(),
                cfg.n_avg,
                cfg.m_avg
            )));
        }
        Ok(())
    }

    /// Records the sample in the moving windows. The first sample seeds both
    /// windows and the history.
    pub fn observe(&mut self, sample: &MprtSample) {
        let p_err = sample.p_pv - sample.p_ref;
        if self.p_pv_buf.is_empty() {
            self.p_pv_buf.fill(sample.p_pv);
            self.dperr_buf.fill(0.0);
            self.p_pv_prev = sample.p_pv;
            self.p_pv_prev2 = sample.p_pv;
            self.p_err_prev = p_err;
            return;
        }
        self.p_pv_buf.push(sample.p_pv);
        self.dperr_buf.push(p_err.abs() - self.p_err_prev.abs());
    }

    /// Gain adjustment. Expects the current sample already in `p_pv_buf`
    /// (see [`MprtState::observe`]) and the previous one in `p_pv_prev`.
    pub fn update_ktr(&mut self, sample: &MprtSample, cfg: &MprtConfig) -> Result<(), MprtError> {
        if !(sample.p_ref > 0.0) {
            return Err(MprtError::NonPositiveReference(sample.p_ref));
        }
        let mean = self.p_pv_buf.mean();
        let p = sample.p_pv;
        // A zero product (sample on the mean) counts as a crossing.
        if (p - mean) * (self.p_pv_prev - mean) > 0.0 {
            self.c_t = 0;
        } else {
            self.c_t = (self.c_t + 1).min(cfg.ct_max);
        }
        if p > sample.p_ref - cfg.tau1 || (p - mean).abs() > cfg.tau2 {
            self.k_tr = cfg.k_base;
        } else if self.c_t >= cfg.ct_max {
            let ratio = mean / sample.p_ref;
            self.k_tr = (cfg.c_min * cfg.k_base).max(cfg.k_base * ratio * ratio);
            self.c_t = 0;
        }
        Ok(())
    }

    /// Accumulator update. Returns the extra step to add this sample, which
    /// is the accumulator value when an overshoot is detected and zero
    /// otherwise.
    pub fn update_accumulator(&mut self, sample: &MprtSample, cfg: &MprtConfig) -> f64 {
        let mean_dperr = self.dperr_buf.mean();
        let p = sample.p_pv;
        if mean_dperr > 0.0 && p > sample.p_ref {
            self.gamma
        } else if p > self.p_pv_prev && self.p_pv_prev > self.p_pv_prev2 {
            self.gamma += cfg.k_acc * cfg.k_base * (p - sample.p_ref).abs();
            0.0
        } else {
            self.gamma *= cfg.lambda_r;
            0.0
        }
    }

    /// Runs one controller sample and returns the new dc-link voltage
    /// reference.
    pub fn step(&mut self, sample: &MprtSample, cfg: &MprtConfig) -> Result<f64, MprtError> {
        self.check(cfg)?;
        if let Some(t_prev) = self.t_prev {
            let period = cfg.period();
            if !(sample.t > t_prev) || ((sample.t - t_prev) - period).abs() > 1e-6 * period {
                return Err(MprtError::SampleTiming {
                    t: sample.t,
                    t_prev,
                });
            }
        }
        self.observe(sample);

        let p = sample.p_pv;
        let p_err = p - sample.p_ref;
        self.alpha = classify_transient(p_err, self.alpha, cfg);

        let step = match cfg.method {
            Method::Fixed => {
                if self.alpha == 0 {
                    cfg.v_step_transient_fixed
                } else {
                    cfg.v_step_min
                }
            }
            Method::Adaptive => compute_step_size(p_err, cfg.k_base, self.alpha, 0.0, cfg),
            Method::Proposed => {
                if cfg.adaptive_gain {
                    if sample.p_ref > 0.0 {
                        self.update_ktr(sample, cfg)?;
                    } else {
                        self.k_tr = cfg.k_base;
                    }
                }
                let gamma_add = if cfg.accumulator {
                    self.update_accumulator(sample, cfg)
                } else {
                    0.0
                };
                compute_step_size(p_err, self.k_tr, self.alpha, gamma_add, cfg)
            }
        };

        let dv = if p_err > cfg.deadband {
            step
        } else if p_err < -cfg.deadband {
            // Hill climbing: keep the last direction while power rises.
            if self.last_dv != 0.0 {
                let last = self.last_dv.signum();
                self.po_direction = if p >= self.p_pv_prev { last } else { -last };
            }
            self.po_direction * step
        } else {
            0.0
        };

        let target = self.v_dc_ref + dv;
        let next = target.max(cfg.vdc_min);
        if next > target {
            self.po_direction = 1.0;
        }
        self.last_dv = next - self.v_dc_ref;
        self.v_dc_ref = next;
        self.last_v_step = step;
        self.p_pv_prev2 = self.p_pv_prev;
        self.p_pv_prev = p;
        self.p_err_prev = p_err;
        self.t_prev = Some(sample.t);
        Ok(self.v_dc_ref)
    }

    /// Applies an upper plant limit (e.g. the array open-circuit voltage) to
    /// the reference after a step.
    pub fn limit_reference(&mut self, v_max: f64) {
        if self.v_dc_ref > v_max {
            let cut = self.v_dc_ref - v_max;
            self.v_dc_ref = v_max;
            self.last_dv -= cut;
            self.po_direction = -1.0;
        }
    }
}

/// Functional form of [`MprtState::step`].
pub fn mprt_step(
    state: &MprtState,
    sample: &MprtSample,
    cfg: &MprtConfig,
) -> Result<(MprtState, f64), MprtError> {
    let mut next = state.clone();
    let v = next.step(sample, cfg)?;
    Ok((next, v))
}
