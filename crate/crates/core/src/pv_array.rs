//! Single-diode (five-parameter) PV array model.
//!
//! The module equation, with `vm = v / n_series` and `im = i / n_parallel`:
//!
//! ```text
//! im = I_ph - I_0 * (exp((vm + im*R_s) / a) - 1) - (vm + im*R_s) / R_sh
//! ```
//!
//! Parameters are extracted from datasheet values at STC and scaled to the
//! operating irradiance and cell temperature: `I_ph` linearly in irradiance
//! with the short-circuit temperature coefficient, `I_0` with the cubic
//! temperature / band-gap law and `a` proportionally to absolute temperature.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boltzmann constant in eV/K.
const K_BOLTZMANN_EV: f64 = 8.617_333_262e-5;
/// Silicon band gap used for the saturation-current temperature law, eV.
const BAND_GAP_EV: f64 = 1.121;
const T_REF_K: f64 = 298.15;
const G_REF: f64 = 1000.0;
const KELVIN: f64 = 273.15;

const SOLVE_REL_TOL: f64 = 1e-9;
const SOLVE_MAX_ITER: usize = 100;

/// Temperature offset used for the open-circuit temperature-coefficient
/// condition of the parameter extraction.
const EXTRACTION_DELTA_T: f64 = 25.0;
const EXTRACTION_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PvError {
    #[error("invalid datasheet: {0}")]
    InvalidDatasheet(String),
    #[error("invalid array parameters: {0}")]
    InvalidParams(String),
    #[error("invalid operating conditions: {0}")]
    InvalidConditions(String),
    #[error("parameter extraction did not converge after {iterations} iterations (residual {residual:e})")]
    ExtractionFailed { residual: f64, iterations: usize },
    #[error("current solve did not converge at v = {v} V (bracket [{lo}, {hi}] A)")]
    SolverFailed { v: f64, lo: f64, hi: f64 },
}

/// Module datasheet values at standard test conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleDatasheet {
    pub v_oc_stc: f64,
    pub i_sc_stc: f64,
    pub v_mp_stc: f64,
    pub i_mp_stc: f64,
    /// Short-circuit current temperature coefficient, A/°C.
    pub alpha_isc: f64,
    /// Open-circuit voltage temperature coefficient, V/°C.
    pub beta_voc: f64,
    pub n_cells: u32,
}

impl ModuleDatasheet {
    /// Canadian Solar CS6P-250P (60 polycrystalline cells).
    pub fn cs6p_250p() -> Self {
        Self {
            v_oc_stc: 37.2,
            i_sc_stc: 8.87,
            v_mp_stc: 30.1,
            i_mp_stc: 8.30,
            alpha_isc: 0.00065 * 8.87,
            beta_voc: -0.0034 * 37.2,
            n_cells: 60,
        }
    }

    pub fn validate(&self) -> Result<(), PvError> {
        let bad = |msg: &str| Err(PvError::InvalidDatasheet(msg.to_string()));
        let all = [
            self.v_oc_stc,
            self.i_sc_stc,
            self.v_mp_stc,
            self.i_mp_stc,
            self.alpha_isc,
            self.beta_voc,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("non-finite value");
        }
        if !(self.v_mp_stc > 0.0 && self.v_mp_stc < self.v_oc_stc) {
            return bad("requires 0 < v_mp_stc < v_oc_stc");
        }
        if !(self.i_mp_stc > 0.0 && self.i_mp_stc < self.i_sc_stc) {
            return bad("requires 0 < i_mp_stc < i_sc_stc");
        }
        if self.n_cells < 1 {
            return bad("n_cells must be at least 1");
        }
        Ok(())
    }
}

/// Five single-diode parameters (module level, STC) plus array topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvArrayParams {
    pub i_ph_stc: f64,
    pub i_0_stc: f64,
    pub r_s: f64,
    pub r_sh: f64,
    /// Modified ideality factor `n k T N_cells / q` at STC, volts.
    pub a: f64,
    pub n_series: u32,
    pub n_parallel: u32,
    pub alpha_isc: f64,
    pub beta_voc: f64,
}

impl PvArrayParams {
    pub fn validate(&self) -> Result<(), PvError> {
        let bad = |msg: &str| Err(PvError::InvalidParams(msg.to_string()));
        if !(self.i_ph_stc > 0.0 && self.i_0_stc > 0.0 && self.r_sh > 0.0 && self.a > 0.0) {
            return bad("i_ph_stc, i_0_stc, r_sh and a must be strictly positive");
        }
        if !(self.r_s >= 0.0) {
            return bad("r_s must be non-negative");
        }
        if self.i_0_stc / self.i_ph_stc >= 1e-3 {
            return bad("i_0_stc must be much smaller than i_ph_stc");
        }
        if self.n_series < 1 || self.n_parallel < 1 {
            return bad("n_series and n_parallel must be at least 1");
        }
        if !(self.alpha_isc.is_finite() && self.beta_voc.is_finite()) {
            return bad("temperature coefficients must be finite");
        }
        Ok(())
    }

    /// Scales the module parameters to the given conditions.
    pub fn at(&self, cond: OperatingConditions) -> IvCurve {
        let t = cond.cell_temperature + KELVIN;
        let dt = cond.cell_temperature - 25.0;
        let i_ph = (cond.irradiance / G_REF) * (self.i_ph_stc + self.alpha_isc * dt);
        let i_0 = self.i_0_stc
            * (t / T_REF_K).powi(3)
            * (BAND_GAP_EV / K_BOLTZMANN_EV * (1.0 / T_REF_K - 1.0 / t)).exp();
        let mut curve = IvCurve {
            i_ph: i_ph.max(0.0),
            i_0,
            a: self.a * t / T_REF_K,
            r_s: self.r_s,
            r_sh: self.r_sh,
            n_series: f64::from(self.n_series),
            n_parallel: f64::from(self.n_parallel),
            voc: 0.0,
        };
        curve.voc = curve.module_voc() * curve.n_series;
        curve
    }
}

/// Irradiance (W/m²) and cell temperature (°C).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingConditions {
    pub irradiance: f64,
    pub cell_temperature: f64,
}

impl OperatingConditions {
    pub const STC: Self = Self {
        irradiance: 1000.0,
        cell_temperature: 25.0,
    };

    pub fn new(irradiance: f64, cell_temperature: f64) -> Result<Self, PvError> {
        let cond = Self {
            irradiance,
            cell_temperature,
        };
        cond.validate()?;
        Ok(cond)
    }

    pub fn validate(&self) -> Result<(), PvError> {
        if !(self.irradiance >= 0.0 && self.irradiance.is_finite()) {
            return Err(PvError::InvalidConditions(format!(
                "irradiance {} W/m² must be finite and non-negative",
                self.irradiance
            )));
        }
        if !(-40.0..=90.0).contains(&self.cell_temperature) {
            return Err(PvError::InvalidConditions(format!(
                "cell temperature {} °C outside [-40, 90]",
                self.cell_temperature
            )));
        }
        Ok(())
    }
}

/// The array I-V characteristic at fixed operating conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvCurve {
    pub i_ph: f64,
    pub i_0: f64,
    pub a: f64,
    pub r_s: f64,
    pub r_sh: f64,
    n_series: f64,
    n_parallel: f64,
    voc: f64,
}

impl IvCurve {
    /// Module current at module voltage `vm`, without clamping.
    fn module_current(&self, vm: f64) -> Result<f64, PvError> {
        if self.i_ph <= 0.0 {
            return Ok(0.0);
        }
        let f = |i: f64| {
            let vd = vm + i * self.r_s;
            let e = (vd / self.a).exp();
            let value = self.i_ph - self.i_0 * (e - 1.0) - vd / self.r_sh - i;
            let slope = -(self.i_0 * self.r_s / self.a * e + self.r_s / self.r_sh + 1.0);
            (value, slope)
        };
        // f is concave and decreasing in i; Newton started right of the root
        // descends monotonically. The bracket guards against round-off.
        let mut lo = -self.i_ph;
        let mut hi = self.i_ph;
        let mut i = hi;
        for _ in 0..SOLVE_MAX_ITER {
            let (value, slope) = f(i);
            if value == 0.0 {
                return Ok(i);
            }
            if value > 0.0 {
                lo = lo.max(i);
            } else {
                hi = hi.min(i);
            }
            let mut next = i - value / slope;
            if !next.is_finite() || next <= lo || next >= hi {
                next = 0.5 * (lo + hi);
            }
            let tol = SOLVE_REL_TOL * next.abs().max(1e-6 * self.i_ph);
            if (next - i).abs() <= tol {
                return Ok(next);
            }
            i = next;
        }
        Err(PvError::SolverFailed {
            v: vm * self.n_series,
            lo: lo * self.n_parallel,
            hi: hi * self.n_parallel,
        })
    }

    /// Module open-circuit voltage.
    fn module_voc(&self) -> f64 {
        if self.i_ph <= 0.0 {
            return 0.0;
        }
        // Concave decreasing in vm; start from the shunt-free root, which
        // lies to the right of the true root.
        let mut vm = self.a * (self.i_ph / self.i_0 + 1.0).ln();
        for _ in 0..SOLVE_MAX_ITER {
            let e = (vm / self.a).exp();
            let value = self.i_ph - self.i_0 * (e - 1.0) - vm / self.r_sh;
            let slope = -(self.i_0 / self.a * e + 1.0 / self.r_sh);
            let next = vm - value / slope;
            if (next - vm).abs() <= 1e-12 * vm.abs().max(1.0) {
                return next;
            }
            vm = next;
        }
        vm
    }

    /// Array open-circuit voltage.
    pub fn open_circuit_voltage(&self) -> f64 {
        self.voc
    }

    /// Array short-circuit current.
    pub fn short_circuit_current(&self) -> Result<f64, PvError> {
        self.current(0.0)
    }

    /// Array current at array voltage `v`; voltages outside `[0, V_oc]` are
    /// clamped to the nearest boundary.
    pub fn current(&self, v: f64) -> Result<f64, PvError> {
        if v >= self.voc {
            return Ok(0.0);
        }
        let vm = v.max(0.0) / self.n_series;
        Ok(self.module_current(vm)?.max(0.0) * self.n_parallel)
    }

    /// Array current and its voltage derivative `dI/dV` (zero outside the
    /// operating range, where the current is clamped).
    pub fn current_and_slope(&self, v: f64) -> Result<(f64, f64), PvError> {
        if v >= self.voc || v < 0.0 {
            return Ok((self.current(v)?, 0.0));
        }
        let vm = v / self.n_series;
        let im = self.module_current(vm)?.max(0.0);
        let d = self.i_0 / self.a * ((vm + im * self.r_s) / self.a).exp() + 1.0 / self.r_sh;
        let dim_dvm = -d / (1.0 + self.r_s * d);
        Ok((
            im * self.n_parallel,
            dim_dvm * self.n_parallel / self.n_series,
        ))
    }

    pub fn power(&self, v: f64) -> Result<f64, PvError> {
        Ok(v.clamp(0.0, self.voc) * self.current(v)?)
    }

    /// Maximum power point `(v_mpp, p_mpp)`: coarse grid bracket followed by
    /// golden-section search.
    pub fn mpp(&self) -> Result<(f64, f64), PvError> {
        let voc = self.open_circuit_voltage();
        if voc <= 0.0 {
            return Ok((0.0, 0.0));
        }
        const GRID: usize = 64;
        let h = voc / GRID as f64;
        let mut best = (0usize, 0.0f64);
        for k in 0..=GRID {
            let p = self.power(k as f64 * h)?;
            if p > best.1 {
                best = (k, p);
            }
        }
        let mut lo = (best.0.saturating_sub(1)) as f64 * h;
        let mut hi = ((best.0 + 1).min(GRID)) as f64 * h;
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut p1 = self.power(x1)?;
        let mut p2 = self.power(x2)?;
        while hi - lo > 1e-7 * voc {
            if p1 < p2 {
                lo = x1;
                x1 = x2;
                p1 = p2;
                x2 = lo + inv_phi * (hi - lo);
                p2 = self.power(x2)?;
            } else {
                hi = x2;
                x2 = x1;
                p2 = p1;
                x1 = hi - inv_phi * (hi - lo);
                p1 = self.power(x1)?;
            }
        }
        let v = 0.5 * (lo + hi);
        let p = self.power(v)?;
        Ok((v, p))
    }

    /// Voltage on the right of the MPP where the array delivers `p`; the MPP
    /// itself when `p` is at or above the maximum power.
    pub fn curtailed_voltage(&self, p: f64) -> Result<f64, PvError> {
        let (v_mpp, p_mpp) = self.mpp()?;
        if p >= p_mpp {
            return Ok(v_mpp);
        }
        let (mut lo, mut hi) = (v_mpp, self.voc);
        while hi - lo > 1e-9 * self.voc {
            let mid = 0.5 * (lo + hi);
            if self.power(mid)? > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Array current at voltage `v` under `cond`.
pub fn array_current(
    v: f64,
    cond: OperatingConditions,
    params: &PvArrayParams,
) -> Result<f64, PvError> {
    params.at(cond).current(v)
}

/// Array maximum power point `(v_mpp, p_mpp)` under `cond`.
pub fn find_mpp(cond: OperatingConditions, params: &PvArrayParams) -> Result<(f64, f64), PvError> {
    params.at(cond).mpp()
}

/// Module parameters for a given `(a, r_s)` pair: the short-circuit,
/// open-circuit and MPP equations are linear in `(I_ph, I_0, 1/R_sh)`.
fn linear_params(ds: &ModuleDatasheet, a: f64, r_s: f64) -> Option<(f64, f64, f64)> {
    let row = |v: f64, i: f64| {
        let vd = v + i * r_s;
        [1.0, -((vd / a).exp() - 1.0), -vd]
    };
    let m = [
        row(0.0, ds.i_sc_stc),
        row(ds.v_oc_stc, 0.0),
        row(ds.v_mp_stc, ds.i_mp_stc),
    ];
    let b = [ds.i_sc_stc, 0.0, ds.i_mp_stc];
    let x = solve3(m, b)?;
    let (i_ph, i_0, g_sh) = (x[0], x[1], x[2]);
    if i_ph > 0.0 && i_0 > 0.0 && g_sh > 0.0 && x.iter().all(|v| v.is_finite()) {
        Some((i_ph, i_0, 1.0 / g_sh))
    } else {
        None
    }
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (col, xc) in x.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *xc = det(&mc) / d;
    }
    Some(x)
}

/// Remaining two conditions of the STC system for a trial `(a, r_s)`:
/// zero power derivative at the MPP and the open-circuit point at a
/// shifted temperature predicted by `beta_voc`.
fn extraction_residual(ds: &ModuleDatasheet, a: f64, r_s: f64) -> Option<[f64; 2]> {
    let (i_ph, i_0, r_sh) = linear_params(ds, a, r_s)?;
    let d = i_0 / a * ((ds.v_mp_stc + ds.i_mp_stc * r_s) / a).exp() + 1.0 / r_sh;
    let didv = -d / (1.0 + r_s * d);
    let r_mpp = ds.i_mp_stc + ds.v_mp_stc * didv;

    let module = PvArrayParams {
        i_ph_stc: i_ph,
        i_0_stc: i_0,
        r_s,
        r_sh,
        a,
        n_series: 1,
        n_parallel: 1,
        alpha_isc: ds.alpha_isc,
        beta_voc: ds.beta_voc,
    };
    let hot = module.at(OperatingConditions {
        irradiance: G_REF,
        cell_temperature: 25.0 + EXTRACTION_DELTA_T,
    });
    let voc_hot = ds.v_oc_stc + ds.beta_voc * EXTRACTION_DELTA_T;
    let r_voc = hot.i_ph - hot.i_0 * ((voc_hot / hot.a).exp() - 1.0) - voc_hot / hot.r_sh;
    let r = [r_mpp, r_voc];
    r.iter().all(|v| v.is_finite()).then_some(r)
}

/// Extracts the five single-diode parameters from a module datasheet and
/// attaches the array topology.
///
/// Solves the STC system with a damped Newton iteration over `(a, R_s)`;
/// the remaining three unknowns follow from a linear solve at each trial
/// point.
pub fn extract_params(
    datasheet: &ModuleDatasheet,
    n_series: u32,
    n_parallel: u32,
) -> Result<PvArrayParams, PvError> {
    datasheet.validate()?;
    if n_series < 1 || n_parallel < 1 {
        return Err(PvError::InvalidParams(
            "n_series and n_parallel must be at least 1".into(),
        ));
    }
    let ds = datasheet;
    let v_th = K_BOLTZMANN_EV * T_REF_K;
    let mut x = [
        1.3 * f64::from(ds.n_cells) * v_th,
        0.25 * (ds.v_oc_stc - ds.v_mp_stc) / ds.i_mp_stc,
    ];
    let norm = |r: &[f64; 2]| r[0].hypot(r[1]);
    let scale = ds.i_sc_stc;
    // Shrink the series-resistance seed until the linear sub-solve yields a
    // physical point (positive shunt conductance).
    let mut seed = None;
    for _ in 0..20 {
        if let Some(r) = extraction_residual(ds, x[0], x[1]) {
            seed = Some(r);
            break;
        }
        x[1] *= 0.5;
    }
    if seed.is_none() {
        x[1] = 0.0;
        seed = extraction_residual(ds, x[0], x[1]);
    }
    let mut r = seed.ok_or(PvError::ExtractionFailed {
        residual: f64::INFINITY,
        iterations: 0,
    })?;

    for iter in 0..EXTRACTION_MAX_ITER {
        if norm(&r) < 1e-11 * scale {
            let (i_ph, i_0, r_sh) = linear_params(ds, x[0], x[1]).expect("feasible point");
            let params = PvArrayParams {
                i_ph_stc: i_ph,
                i_0_stc: i_0,
                r_s: x[1],
                r_sh,
                a: x[0],
                n_series,
                n_parallel,
                alpha_isc: ds.alpha_isc,
                beta_voc: ds.beta_voc,
            };
            params.validate()?;
            return Ok(params);
        }
        // Central-difference Jacobian.
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let h = 1e-6 * x[k].abs().max(1e-3);
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (rp, rm) = match (
                extraction_residual(ds, xp[0], xp[1]),
                extraction_residual(ds, xm[0], xm[1]),
            ) {
                (Some(rp), Some(rm)) => (rp, rm),
                _ => {
                    return Err(PvError::ExtractionFailed {
                        residual: norm(&r),
                        iterations: iter,
                    })
                }
            };
            for row in 0..2 {
                jac[row][k] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(PvError::ExtractionFailed {
                residual: norm(&r),
                iterations: iter,
            });
        }
        let dx = [
            -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
        ];
        // Backtracking: accept the first step that stays feasible and
        // reduces the residual norm.
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-6 {
            let trial = [x[0] + lambda * dx[0], x[1] + lambda * dx[1]];
            if trial[0] > 0.0 && trial[1] >= 0.0 {
                if let Some(rt) = extraction_residual(ds, trial[0], trial[1]) {
                    if norm(&rt) < norm(&r) {
                        x = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(PvError::ExtractionFailed {
                residual: norm(&r),
                iterations: iter,
            });
        }
    }
    Err(PvError::ExtractionFailed {
        residual: norm(&r),
        iterations: EXTRACTION_MAX_ITER,
    })
}
