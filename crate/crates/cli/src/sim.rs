//! The closed-loop simulation: plant at the fast step, controller at its
//! sampling rate, trace at the record rate.

use std::collections::HashMap;

use pvcurtail_core::metrics::{MetricsError, MetricsSummary, TraceRecord};
use pvcurtail_core::mprt::{self, MprtConfig, MprtError, MprtSample};
use pvcurtail_core::plant::{
    add_noise, ChannelRatings, MeasurementFrame, PlantError, PlantParams, PlantState,
};
use pvcurtail_core::pv_array::{find_mpp, IvCurve, PvArrayParams, PvError};
use pvcurtail_core::scenario::{Fidelity, ScenarioError, ScenarioInputs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, MethodEntry, RunConfig, SimulationConfig};

/// RNG stream used for measurement noise.
pub const NOISE_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("array: {0}")]
    Pv(#[from] PvError),
    #[error("plant at t = {t:.4} s: {source}")]
    Plant {
        t: f64,
        #[source]
        source: PlantError,
    },
    #[error("controller at t = {t:.4} s: {source}")]
    Mprt {
        t: f64,
        #[source]
        source: MprtError,
    },
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

/// Everything shared by the runs of one scenario: array, inputs and the
/// per-sample operating points.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub array: PvArrayParams,
    pub plant: PlantParams,
    pub sim: SimulationConfig,
    pub inputs: ScenarioInputs,
    pub fidelity: Fidelity,
    pub duration: f64,
    pub snr_db: f64,
    pub cell_temperature: f64,
    pub ratings: ChannelRatings,
    curves: Vec<IvCurve>,
    mpp: Vec<(f64, f64)>,
}

impl Prepared {
    pub fn new(cfg: &RunConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let array = cfg.array.build()?;
        let inputs = cfg.scenario.build(&array)?;
        let temp = cfg.scenario.cell_temperature;
        let irr = &inputs.irradiance;
        let mut memo: HashMap<(u64, u64), (IvCurve, (f64, f64))> = HashMap::new();
        let mut curves = Vec::with_capacity(irr.len());
        let mut mpp = Vec::with_capacity(irr.len());
        for k in 0..irr.len() {
            let cond = irr.conditions_at_index(k, temp)?;
            let key = (cond.irradiance.to_bits(), cond.cell_temperature.to_bits());
            let (curve, point) = match memo.get(&key) {
                Some(hit) => *hit,
                None => {
                    let entry = (array.at(cond), find_mpp(cond, &array)?);
                    memo.insert(key, entry);
                    entry
                }
            };
            curves.push(curve);
            mpp.push(point);
        }
        Ok(Self {
            array,
            plant: cfg.plant.clone(),
            sim: cfg.simulation.clone(),
            ratings: ChannelRatings::from_array(&array)?,
            inputs,
            fidelity: cfg.scenario.fidelity,
            duration: cfg.scenario.duration,
            snr_db: cfg.scenario.snr_db,
            cell_temperature: temp,
            curves,
            mpp,
        })
    }

    /// Curve and true MPP held at time `t`.
    pub fn operating_point(&self, t: f64) -> (&IvCurve, (f64, f64)) {
        let k = self.inputs.irradiance.index_at(t);
        (&self.curves[k], self.mpp[k])
    }

    pub fn dt(&self) -> f64 {
        self.sim.dt(self.fidelity)
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub label: String,
    pub mprt: MprtConfig,
    pub trace: Vec<TraceRecord>,
    pub summary: MetricsSummary,
    pub energy_residual: f64,
    /// Plant state at the end of the run.
    pub plant_final: PlantState,
}

/// Runs one controller over the prepared scenario. The noise realisation
/// depends only on `seed`, so methods sharing a seed see the same noise.
pub fn simulate(prep: &Prepared, method: &MethodEntry, seed: u64) -> Result<MethodRun, SimError> {
    let cfg = &method.mprt;
    let dt = prep.dt();
    let n_steps = (prep.duration / dt).round() as u64;
    let ctrl_every = (cfg.period() / dt).round() as u64;
    let trace_every = (prep.sim.trace_period / dt).round() as u64;
    let params = &prep.plant;

    let (curve0, _) = prep.operating_point(0.0);
    let v_start = match prep.sim.v_dc_start {
        Some(v) => v,
        None => curve0
            .curtailed_voltage(prep.inputs.reference.at(0.0))
            .map_err(|source| SimError::Plant {
                t: 0.0,
                source: PlantError::Pv(source),
            })?,
    }
    .max(params.vdc_min)
    .max(cfg.vdc_min);
    let mut plant = PlantState::steady(v_start, 0.0, curve0, params)
        .map_err(|source| SimError::Plant { t: 0.0, source })?;
    let mut ctrl = mprt::init(cfg, v_start).map_err(|source| SimError::Mprt { t: 0.0, source })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);

    let mut trace = Vec::with_capacity((n_steps / trace_every + 1) as usize);
    let reference = &prep.inputs.reference;
    for k in 0..=n_steps {
        let t = k as f64 * dt;
        let (curve, (_, p_mpp)) = prep.operating_point(t);
        let p_ref = reference.at(t);
        let pv_err = |source| SimError::Plant {
            t,
            source: PlantError::Pv(source),
        };

        if k % ctrl_every == 0 {
            let i_pv = curve.current(plant.v_dc).map_err(pv_err)?;
            let frame = MeasurementFrame {
                p_pv: plant.v_dc * i_pv,
                v_pv: plant.v_dc,
                i_pv,
                v_dc: plant.v_dc,
                t,
            };
            let noisy = add_noise(frame, prep.snr_db, &prep.ratings, &mut rng);
            let sample = MprtSample {
                p_pv: noisy.p_pv,
                p_ref,
                v_dc: noisy.v_dc,
                t,
            };
            ctrl.step(&sample, cfg)
                .map_err(|source| SimError::Mprt { t, source })?;
            ctrl.limit_reference(curve.open_circuit_voltage().max(cfg.vdc_min));
        }

        if k % trace_every == 0 {
            let i_pv = curve.current(plant.v_dc).map_err(pv_err)?;
            trace.push(TraceRecord {
                t,
                p_pv: plant.v_dc * i_pv,
                p_ref,
                p_mpp_truth: p_mpp,
                v_dc: plant.v_dc,
                v_dc_ref: ctrl.v_dc_ref,
                k_tr: ctrl.k_tr,
                gamma: ctrl.gamma,
                v_step: ctrl.last_v_step,
                alpha: ctrl.alpha,
            });
        }

        if k < n_steps {
            let v_ref = ctrl.v_dc_ref;
            match prep.fidelity {
                Fidelity::Full => plant.step_full(v_ref, prep.sim.q_ref, curve, params, dt),
                Fidelity::Reduced => plant.step_reduced(v_ref, curve, params, dt),
            }
            .map_err(|source| SimError::Plant { t, source })?;
        }
    }

    let summary =
        MetricsSummary::from_trace(&trace, &prep.sim.bin_edges, prep.sim.overshoot_deadband)?;
    Ok(MethodRun {
        label: method.label.clone(),
        mprt: cfg.clone(),
        energy_residual: plant.energy_residual_fraction(params),
        trace,
        summary,
        plant_final: plant,
    })
}

/// Runs every configured method on identical inputs and noise, seeded from
/// the scenario seed.
pub fn run_all(cfg: &RunConfig) -> Result<(Prepared, Vec<MethodRun>), SimError> {
    let prep = Prepared::new(cfg)?;
    let seed = cfg.scenario.seed;
    let runs = cfg
        .methods
        .iter()
        .map(|m| simulate(&prep, m, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((prep, runs))
}
