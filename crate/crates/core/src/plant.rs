//! Closed-loop electrical plant of a single-stage PV inverter.
//!
//! Two fidelity levels share the same controller gains and limits:
//!
//! - [`PlantState::step_full`]: averaged two-level VSC in the synchronous dq
//!   frame with decoupled current control, an outer dc-voltage PI and the
//!   filter plus transformer leakage feeding a stiff grid. The grid voltage
//!   defines the d axis.
//! - [`PlantState::step_reduced`]: dc-link energy balance with the inner
//!   current loop replaced by a first-order lag.
//!
//! Sign convention: positive `i_d` exports active power, so raising `i_d`
//! discharges the dc link. The dc-voltage PI therefore acts on
//! `v_dc - v_dc_ref`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pv_array::{IvCurve, OperatingConditions, PvArrayParams, PvError};

pub const MAX_DT_FULL: f64 = 200e-6;
pub const MAX_DT_REDUCED: f64 = 5e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
    #[error("time step {dt} s exceeds the limit {max} s")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("dc link collapsed at t = {t} s (v_dc = {v_dc} V)")]
    Collapse { t: f64, v_dc: f64 },
    #[error("non-finite {field} at t = {t} s")]
    NumericFault { t: f64, field: &'static str },
    #[error(transparent)]
    Pv(#[from] PvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    pub c_dc: f64,
    pub l_f: f64,
    pub r_l: f64,
    /// Nominal angular frequency, rad/s.
    pub omega: f64,
    /// Low-side line-to-line rms grid voltage.
    pub v_grid_ll_rms: f64,
    pub x_leak_pu: f64,
    pub r_loss_pu: f64,
    /// Magnetizing branch, kept for reference only (not simulated).
    pub l_m_pu: f64,
    pub r_m_pu: f64,
    pub s_rated: f64,
    pub kp_vdc: f64,
    pub ki_vdc: f64,
    pub kp_i: f64,
    pub ki_i: f64,
    /// Converter current magnitude limit, A (peak, dq).
    pub i_limit: f64,
    pub vdc_min: f64,
    /// Modulation index bound.
    pub m_max: f64,
    /// Adds the array power, converted to d-axis current, to the output of
    /// the dc-voltage PI.
    pub power_feedforward: bool,
    /// Low-pass time constant of the feed-forward, s (0 = unfiltered).
    pub feedforward_tau: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            c_dc: 5000e-6,
            l_f: 100e-6,
            r_l: 3e-3,
            omega: 2.0 * std::f64::consts::PI * 60.0,
            v_grid_ll_rms: 200.0,
            x_leak_pu: 0.06,
            r_loss_pu: 0.0024,
            l_m_pu: 200.0,
            r_m_pu: 200.0,
            s_rated: 500e3,
            kp_vdc: 1.0,
            ki_vdc: 250.0,
            kp_i: 0.7,
            ki_i: 50.0,
            i_limit: 3000.0,
            vdc_min: 300.0,
            m_max: 1.15,
            power_feedforward: true,
            feedforward_tau: 0.8e-3,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |msg: String| Err(PlantError::InvalidParams(msg));
        let positive = [
            ("c_dc", self.c_dc),
            ("l_f", self.l_f),
            ("r_l", self.r_l),
            ("omega", self.omega),
            ("v_grid_ll_rms", self.v_grid_ll_rms),
            ("x_leak_pu", self.x_leak_pu),
            ("r_loss_pu", self.r_loss_pu),
            ("s_rated", self.s_rated),
            ("kp_vdc", self.kp_vdc),
            ("ki_vdc", self.ki_vdc),
            ("kp_i", self.kp_i),
            ("ki_i", self.ki_i),
            ("i_limit", self.i_limit),
            ("vdc_min", self.vdc_min),
            ("m_max", self.m_max),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return bad(format!("{name} must be finite and positive (got {v})"));
        }
        if !(self.feedforward_tau.is_finite() && self.feedforward_tau >= 0.0) {
            return bad(format!(
                "feedforward_tau must be finite and >= 0 (got {})",
                self.feedforward_tau
            ));
        }
        let v_ll_peak = self.v_grid_ll_rms * 2f64.sqrt();
        if self.vdc_min <= v_ll_peak {
            return bad(format!(
                "vdc_min {} V must exceed the peak line-to-line grid voltage {v_ll_peak:.1} V",
                self.vdc_min
            ));
        }
        Ok(())
    }

    /// d-axis current at which the converter draws `p_pv` from the dc link,
    /// series losses included: `1.5 (v_gd i_d + r (i_d² + i_q²)) = p_pv`.
    pub fn balance_current(&self, p_pv: f64, i_q: f64) -> f64 {
        let r = self.r_eq();
        let vg = self.v_grid_d();
        let c = r * i_q * i_q - p_pv / 1.5;
        // Rationalised root, well conditioned for small r.
        -2.0 * c / (vg + (vg * vg - 4.0 * r * c).sqrt())
    }

    /// Feed-forward part of the d-axis reference; zero when disabled.
    pub fn feedforward_current(&self, p_pv: f64, i_q: f64) -> f64 {
        if self.power_feedforward {
            self.balance_current(p_pv, i_q)
        } else {
            0.0
        }
    }

    fn z_base(&self) -> f64 {
        self.v_grid_ll_rms * self.v_grid_ll_rms / self.s_rated
    }

    /// Transformer series resistance referred to the low side.
    pub fn r_tx(&self) -> f64 {
        self.r_loss_pu * self.z_base()
    }

    /// Transformer leakage inductance referred to the low side.
    pub fn l_tx(&self) -> f64 {
        self.x_leak_pu * self.z_base() / self.omega
    }

    pub fn l_eq(&self) -> f64 {
        self.l_f + self.l_tx()
    }

    pub fn r_eq(&self) -> f64 {
        self.r_l + self.r_tx()
    }

    /// Grid phase-voltage amplitude (d-axis component).
    pub fn v_grid_d(&self) -> f64 {
        self.v_grid_ll_rms * (2.0f64 / 3.0).sqrt()
    }

    /// Closed current-loop time constant used by the reduced model.
    pub fn current_loop_tau(&self) -> f64 {
        self.l_eq() / self.kp_i
    }

    /// Active power delivered to the grid for a given dq current.
    pub fn grid_power(&self, i_d: f64) -> f64 {
        1.5 * self.v_grid_d() * i_d
    }

    /// Reactive power at the grid for a given q current (d-axis aligned).
    pub fn grid_reactive_power(&self, i_q: f64) -> f64 {
        -1.5 * self.v_grid_d() * i_q
    }

    fn i_q_ref(&self, q_ref: f64) -> f64 {
        -q_ref / (1.5 * self.v_grid_d())
    }
}

/// Running energy accounts, joules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub pv: f64,
    pub grid: f64,
    pub losses: f64,
    pub stored_initial: f64,
}

impl EnergyLedger {
    /// Balance residual `E_pv - E_grid - E_loss - ΔE_stored` and the
    /// throughput it should be compared against.
    pub fn residual(&self, stored_now: f64) -> (f64, f64) {
        let residual = self.pv - self.grid - self.losses - (stored_now - self.stored_initial);
        let throughput = self.pv.abs().max(self.grid.abs());
        (residual, throughput)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub v_dc: f64,
    pub i_d: f64,
    pub i_q: f64,
    /// dc-voltage PI integral term, A.
    pub int_vdc: f64,
    /// Filtered power feed-forward, A.
    pub i_ff: f64,
    /// Current PI integral terms, V.
    pub int_id: f64,
    pub int_iq: f64,
    pub v_sd: f64,
    pub v_sq: f64,
    pub m_d: f64,
    pub m_q: f64,
    pub u_d: f64,
    pub u_q: f64,
    pub t: f64,
    /// PV array current at the current `v_dc`, A.
    pub i_pv: f64,
    pub energy: EnergyLedger,
}

impl PlantState {
    /// Operating point in equilibrium at `v_dc`: the converter exports the
    /// array power net of series losses and all controllers sit at their
    /// steady-state outputs.
    pub fn steady(
        v_dc: f64,
        q_ref: f64,
        curve: &IvCurve,
        params: &PlantParams,
    ) -> Result<Self, PlantError> {
        let i_pv = curve.current(v_dc)?;
        let p_pv = v_dc * i_pv;
        let i_q = params.i_q_ref(q_ref);
        let i_d = params.balance_current(p_pv, i_q);
        let i_ff = params.feedforward_current(p_pv, i_q);
        let mut state = Self {
            v_dc,
            i_d,
            i_q,
            int_vdc: i_d - i_ff,
            i_ff,
            int_id: 0.0,
            int_iq: 0.0,
            v_sd: 0.0,
            v_sq: 0.0,
            m_d: 0.0,
            m_q: 0.0,
            u_d: 0.0,
            u_q: 0.0,
            t: 0.0,
            i_pv,
            energy: EnergyLedger::default(),
        };
        state.update_terminal_voltages(params);
        let v_td = state.v_sd - params.omega * params.l_f * i_q + params.r_l * i_d;
        let v_tq = state.v_sq + params.omega * params.l_f * i_d + params.r_l * i_q;
        state.m_d = 2.0 * v_td / v_dc;
        state.m_q = 2.0 * v_tq / v_dc;
        state.energy.stored_initial = state.stored_energy(params);
        Ok(state)
    }

    pub fn p_pv(&self) -> f64 {
        self.v_dc * self.i_pv
    }

    /// Active power into the grid.
    pub fn p_out(&self, params: &PlantParams) -> f64 {
        params.grid_power(self.i_d)
    }

    /// Energy in the dc-link capacitor and the series inductance.
    pub fn stored_energy(&self, params: &PlantParams) -> f64 {
        0.5 * params.c_dc * self.v_dc * self.v_dc
            + 0.75 * params.l_eq() * (self.i_d * self.i_d + self.i_q * self.i_q)
    }

    /// Energy-balance residual as a fraction of throughput energy.
    pub fn energy_residual_fraction(&self, params: &PlantParams) -> f64 {
        let (residual, throughput) = self.energy.residual(self.stored_energy(params));
        if throughput > 0.0 {
            residual.abs() / throughput
        } else {
            residual.abs()
        }
    }

    /// Transformer secondary voltage from the quasi-steady leakage drop.
    fn update_terminal_voltages(&mut self, params: &PlantParams) {
        let w_ltx = params.omega * params.l_tx();
        self.v_sd = params.v_grid_d() + params.r_tx() * self.i_d - w_ltx * self.i_q;
        self.v_sq = params.r_tx() * self.i_q + w_ltx * self.i_d;
    }

    /// dc-voltage PI (plus optional array-power feed-forward) with magnitude
    /// limiting (angle preserved) and conditional integration. Returns the dq
    /// current references.
    fn dc_voltage_loop(
        &mut self,
        v_dc_ref: f64,
        i_q_ref: f64,
        p_pv: f64,
        params: &PlantParams,
        dt: f64,
    ) -> (f64, f64) {
        let e = self.v_dc - v_dc_ref;
        let ff = params.feedforward_current(p_pv, i_q_ref);
        self.i_ff += lag_blend(dt, params.feedforward_tau) * (ff - self.i_ff);
        let i_d_raw = params.kp_vdc * e + self.int_vdc + self.i_ff;
        let mag = i_d_raw.hypot(i_q_ref);
        let (i_d_ref, i_q_ref, saturated) = if mag > params.i_limit {
            let s = params.i_limit / mag;
            (i_d_raw * s, i_q_ref * s, true)
        } else {
            (i_d_raw, i_q_ref, false)
        };
        if !(saturated && e * i_d_raw > 0.0) {
            self.int_vdc =
                (self.int_vdc + params.ki_vdc * e * dt).clamp(-params.i_limit, params.i_limit);
        }
        (i_d_ref, i_q_ref)
    }

    fn check(&self, params: &PlantParams) -> Result<(), PlantError> {
        let fields = [
            ("v_dc", self.v_dc),
            ("i_d", self.i_d),
            ("i_q", self.i_q),
            ("int_vdc", self.int_vdc),
            ("int_id", self.int_id),
            ("int_iq", self.int_iq),
        ];
        if let Some((field, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(PlantError::NumericFault { t: self.t, field });
        }
        if self.v_dc < 0.5 * params.vdc_min {
            return Err(PlantError::Collapse {
                t: self.t,
                v_dc: self.v_dc,
            });
        }
        Ok(())
    }

    /// Advances the full dq model by `dt` (semi-implicit Euler: explicit in
    /// the currents and controllers, linearly implicit in `v_dc`).
    pub fn step_full(
        &mut self,
        v_dc_ref: f64,
        q_ref: f64,
        curve: &IvCurve,
        params: &PlantParams,
        dt: f64,
    ) -> Result<(), PlantError> {
        if !(dt > 0.0 && dt <= MAX_DT_FULL) {
            return Err(PlantError::StepTooLarge {
                dt,
                max: MAX_DT_FULL,
            });
        }
        let v = self.v_dc;
        let (i_pv, g) = curve.current_and_slope(v)?;
        self.i_pv = i_pv;

        let (i_d_ref, i_q_ref) =
            self.dc_voltage_loop(v_dc_ref, params.i_q_ref(q_ref), v * i_pv, params, dt);

        // Current loops with feed-forward decoupling.
        let e_d = i_d_ref - self.i_d;
        let e_q = i_q_ref - self.i_q;
        self.u_d = params.kp_i * e_d + self.int_id;
        self.u_q = params.kp_i * e_q + self.int_iq;
        self.update_terminal_voltages(params);
        let w_lf = params.omega * params.l_f;
        let mut m_d = 2.0 / v * (self.v_sd - w_lf * self.i_q + params.r_l * self.i_d + self.u_d);
        let mut m_q = 2.0 / v * (self.v_sq + w_lf * self.i_d + params.r_l * self.i_q + self.u_q);
        let m_mag = m_d.hypot(m_q);
        let saturated = m_mag > params.m_max;
        if saturated {
            m_d *= params.m_max / m_mag;
            m_q *= params.m_max / m_mag;
        }
        if !saturated {
            let cap = params.m_max * v / 2.0;
            self.int_id = (self.int_id + params.ki_i * e_d * dt).clamp(-cap, cap);
            self.int_iq = (self.int_iq + params.ki_i * e_q * dt).clamp(-cap, cap);
        }
        self.m_d = m_d;
        self.m_q = m_q;

        let v_td = 0.5 * v * m_d;
        let v_tq = 0.5 * v * m_q;
        let l = params.l_eq();
        let r = params.r_eq();
        let wl = params.omega * l;
        let (i_d, i_q) = (self.i_d, self.i_q);
        let p_conv = 1.5 * (v_td * i_d + v_tq * i_q);

        self.energy.pv += dt * v * i_pv;
        self.energy.grid += dt * params.grid_power(i_d);
        self.energy.losses += dt * 1.5 * r * (i_d * i_d + i_q * i_q);

        self.i_d += dt / l * (v_td + wl * i_q - r * i_d - params.v_grid_d());
        self.i_q += dt / l * (v_tq - wl * i_d - r * i_q);
        let i_conv = p_conv / v;
        self.v_dc += dt * (i_pv - i_conv) / (params.c_dc - dt * g);
        self.t += dt;
        self.check(params)
    }

    /// Advances the reduced energy-balance model by `dt`.
    pub fn step_reduced(
        &mut self,
        v_dc_ref: f64,
        curve: &IvCurve,
        params: &PlantParams,
        dt: f64,
    ) -> Result<(), PlantError> {
        if !(dt > 0.0 && dt <= MAX_DT_REDUCED) {
            return Err(PlantError::StepTooLarge {
                dt,
                max: MAX_DT_REDUCED,
            });
        }
        let v = self.v_dc;
        let (i_pv, g) = curve.current_and_slope(v)?;
        self.i_pv = i_pv;
        let p_pv = v * i_pv;

        let (i_d_ref, _) = self.dc_voltage_loop(v_dc_ref, 0.0, p_pv, params, dt);
        // Exact discretisation of the current-loop lag, applied before the
        // dc-link update so the converter power reflects this step's command.
        let blend = lag_blend(dt, params.current_loop_tau());
        self.i_d += blend * (i_d_ref - self.i_d);
        self.i_q = 0.0;
        let r = params.r_eq();
        let i_d = self.i_d;
        let p_conv = params.grid_power(i_d) + 1.5 * r * i_d * i_d;

        self.energy.pv += dt * p_pv;
        self.energy.grid += dt * params.grid_power(i_d);
        self.energy.losses += dt * 1.5 * r * i_d * i_d;

        // (C/2) dw/dt = p_pv - p_conv with w = v². Only the stabilising part
        // of dp_pv/dw is taken implicitly.
        let tracked = if params.power_feedforward {
            lag_blend(dt, params.feedforward_tau) * blend
        } else {
            0.0
        };
        let dp_dw = (1.0 - tracked) * ((i_pv + v * g) / (2.0 * v)).min(0.0);
        let w = v * v;
        let dw = dt * (p_pv - p_conv) / (0.5 * params.c_dc - dt * dp_dw);
        let w_next = w + dw;
        if !(w_next > 0.0) {
            self.v_dc = 0.0;
            self.t += dt;
            return Err(PlantError::Collapse {
                t: self.t,
                v_dc: 0.0,
            });
        }
        self.v_dc = w_next.sqrt();
        self.t += dt;
        self.check(params)
    }
}

/// Step-invariant gain of a first-order lag; 1 for a zero time constant.
fn lag_blend(dt: f64, tau: f64) -> f64 {
    if tau > 0.0 {
        1.0 - (-dt / tau).exp()
    } else {
        1.0
    }
}

/// Functional form of [`PlantState::step_full`].
#[allow(clippy::too_many_arguments)]
pub fn step_full(
    state: &PlantState,
    v_dc_ref: f64,
    q_ref: f64,
    cond: OperatingConditions,
    params: &PlantParams,
    array: &PvArrayParams,
    dt: f64,
) -> Result<PlantState, PlantError> {
    let mut next = state.clone();
    next.step_full(v_dc_ref, q_ref, &array.at(cond), params, dt)?;
    Ok(next)
}

/// Functional form of [`PlantState::step_reduced`].
pub fn step_reduced(
    state: &PlantState,
    v_dc_ref: f64,
    cond: OperatingConditions,
    params: &PlantParams,
    array: &PvArrayParams,
    dt: f64,
) -> Result<PlantState, PlantError> {
    let mut next = state.clone();
    next.step_reduced(v_dc_ref, &array.at(cond), params, dt)?;
    Ok(next)
}

/// Controller-visible measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementFrame {
    pub p_pv: f64,
    pub v_pv: f64,
    pub i_pv: f64,
    pub v_dc: f64,
    pub t: f64,
}

impl MeasurementFrame {
    pub fn from_state(state: &PlantState) -> Self {
        Self {
            p_pv: state.v_dc * state.i_pv,
            v_pv: state.v_dc,
            i_pv: state.i_pv,
            v_dc: state.v_dc,
            t: state.t,
        }
    }
}

/// Rated value of each noisy channel; the noise sigma is referenced to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRatings {
    pub v_pv: f64,
    pub i_pv: f64,
    pub v_dc: f64,
}

impl ChannelRatings {
    /// Ratings taken from the array MPP at STC.
    pub fn from_array(array: &PvArrayParams) -> Result<Self, PvError> {
        let (v, p) = array.at(OperatingConditions::STC).mpp()?;
        Ok(Self {
            v_pv: v,
            i_pv: p / v,
            v_dc: v,
        })
    }
}

pub fn noise_sigma(rated: f64, snr_db: f64) -> f64 {
    rated / 10f64.powf(snr_db / 20.0)
}

/// Adds independent zero-mean Gaussian noise to `v_pv`, `i_pv` and `v_dc`
/// and recomputes `p_pv`. An infinite SNR disables noise and leaves the
/// random stream untouched.
pub fn add_noise<R: Rng + ?Sized>(
    frame: MeasurementFrame,
    snr_db: f64,
    ratings: &ChannelRatings,
    rng: &mut R,
) -> MeasurementFrame {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return frame;
    }
    let mut draw = |rated: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        z * noise_sigma(rated, snr_db)
    };
    let v_pv = frame.v_pv + draw(ratings.v_pv);
    let i_pv = frame.i_pv + draw(ratings.i_pv);
    let v_dc = frame.v_dc + draw(ratings.v_dc);
    MeasurementFrame {
        p_pv: v_pv * i_pv,
        v_pv,
        i_pv,
        v_dc,
        t: frame.t,
    }
}
