//! Run inputs: irradiance series, available-power estimate, power reference
//! and the synthetic profile generators.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pv_array::{find_mpp, OperatingConditions, PvArrayParams, PvError};

/// RNG stream used for irradiance synthesis.
pub const IRRADIANCE_STREAM: u64 = 1;
/// RNG stream used for the synthetic regulation signal.
pub const REGULATION_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Pv(#[from] PvError),
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_times(t: &[f64]) -> Result<(), ScenarioError> {
    if t.is_empty() {
        return Err(invalid("t", "series is empty"));
    }
    if let Some(k) = t.iter().position(|x| !x.is_finite()) {
        return Err(invalid("t", format!("sample {k} is not finite")));
    }
    if let Some(k) = t.windows(2).position(|w| w[1] <= w[0]) {
        return Err(invalid(
            "t",
            format!("not strictly increasing at sample {}", k + 1),
        ));
    }
    Ok(())
}

/// Index of the last sample at or before `t`, or 0 before the first sample.
fn hold_index(times: &[f64], t: f64) -> usize {
    times.partition_point(|&x| x <= t).saturating_sub(1)
}

/// Zero-order-hold resampling of `(t_src, x_src)` onto `t_dst`.
pub fn resample_zoh(t_src: &[f64], x_src: &[f64], t_dst: &[f64]) -> Vec<f64> {
    t_dst.iter().map(|&t| x_src[hold_index(t_src, t)]).collect()
}

/// Uniform time grid `0, dt, ..., duration`.
pub fn time_grid(duration: f64, dt: f64) -> Vec<f64> {
    let n = (duration / dt).round() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceSeries {
    pub t: Vec<f64>,
    pub g: Vec<f64>,
    pub temp: Option<Vec<f64>>,
}

impl IrradianceSeries {
    pub fn new(t: Vec<f64>, g: Vec<f64>, temp: Option<Vec<f64>>) -> Result<Self, ScenarioError> {
        let s = Self { t, g, temp };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        check_times(&self.t)?;
        if self.g.len() != self.t.len() {
            return Err(invalid("g", "length differs from t"));
        }
        if let Some(k) = self.g.iter().position(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(invalid(
                "g",
                format!("sample {k} is negative or not finite"),
            ));
        }
        if let Some(temp) = &self.temp {
            if temp.len() != self.t.len() {
                return Err(invalid("temp", "length differs from t"));
            }
            if let Some(k) = temp.iter().position(|x| !(-40.0..=90.0).contains(x)) {
                return Err(invalid("temp", format!("sample {k} outside [-40, 90] °C")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index of the sample held at time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        hold_index(&self.t, t)
    }

    /// Held operating conditions at time `t`.
    pub fn conditions_at(&self, t: f64, default_temp: f64) -> Result<OperatingConditions, PvError> {
        self.conditions_at_index(self.index_at(t), default_temp)
    }

    pub fn conditions_at_index(
        &self,
        k: usize,
        default_temp: f64,
    ) -> Result<OperatingConditions, PvError> {
        let temp = self.temp.as_ref().map_or(default_temp, |v| v[k]);
        OperatingConditions::new(self.g[k], temp)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ScenarioError> {
        let io = |e: csv::Error| ScenarioError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        if let Some(temp) = &self.temp {
            w.write_record(["t_s", "g_wm2", "temp_c"]).map_err(io)?;
            for k in 0..self.len() {
                w.write_record([
                    self.t[k].to_string(),
                    self.g[k].to_string(),
                    temp[k].to_string(),
                ])
                .map_err(io)?;
            }
        } else {
            w.write_record(["t_s", "g_wm2"]).map_err(io)?;
            for k in 0..self.len() {
                w.write_record([self.t[k].to_string(), self.g[k].to_string()])
                    .map_err(io)?;
            }
        }
        w.flush().map_err(|e| ScenarioError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Reads a headered numeric CSV whose columns match `names` (each entry lists
/// accepted header aliases). Trailing optional columns may be absent.
fn read_columns(
    path: &Path,
    names: &[&[&str]],
    required: usize,
) -> Result<Vec<Vec<f64>>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => ScenarioError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => ScenarioError::Parse {
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let header = reader.headers().map_err(|e| ScenarioError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let width = header.len();
    if width < required || width > names.len() {
        return Err(ScenarioError::Parse {
            line: 1,
            message: format!(
                "expected {required} to {} columns, found {width}",
                names.len()
            ),
        });
    }
    for (k, h) in header.iter().enumerate() {
        if !names[k].contains(&h) {
            return Err(ScenarioError::Parse {
                line: 1,
                message: format!("column {} should be `{}`, found `{h}`", k + 1, names[k][0]),
            });
        }
    }
    let mut cols = vec![Vec::new(); width];
    for rec in reader.records() {
        let rec = rec.map_err(|e| ScenarioError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(ScenarioError::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (k, field) in rec.iter().enumerate() {
            let x: f64 = field.parse().map_err(|_| ScenarioError::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            cols[k].push(x);
        }
    }
    Ok(cols)
}

/// Loads an irradiance CSV with header `t_s,g_wm2[,temp_c]`.
pub fn load_irradiance(path: &Path) -> Result<IrradianceSeries, ScenarioError> {
    let mut cols = read_columns(
        path,
        &[&["t_s", "t"], &["g_wm2", "g"], &["temp_c", "temp"]],
        2,
    )?;
    let temp = (cols.len() == 3).then(|| cols.pop().unwrap());
    let g = cols.pop().unwrap();
    let t = cols.pop().unwrap();
    IrradianceSeries::new(t, g, temp)
}

/// Regulation signal in [0, 1], held between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulationSeries {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
}

impl RegulationSeries {
    pub fn new(t: Vec<f64>, r: Vec<f64>) -> Result<Self, ScenarioError> {
        check_times(&t)?;
        if r.len() != t.len() {
            return Err(invalid("r", "length differs from t"));
        }
        if let Some(k) = r.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(invalid("r", format!("sample {k} outside [0, 1]")));
        }
        Ok(Self { t, r })
    }

    pub fn constant(r: f64) -> Result<Self, ScenarioError> {
        Self::new(vec![0.0], vec![r])
    }
}

/// Loads a regulation CSV with header `t_s,r`.
pub fn load_regulation(path: &Path) -> Result<RegulationSeries, ScenarioError> {
    let mut cols = read_columns(path, &[&["t_s", "t"], &["r"]], 2)?;
    let r = cols.pop().unwrap();
    let t = cols.pop().unwrap();
    RegulationSeries::new(t, r)
}

/// Bounded random walk in [0, 1], reflected at the bounds, updated every
/// `period` seconds.
pub fn synth_regulation(
    duration: f64,
    period: f64,
    step_sigma: f64,
    seed: u64,
) -> Result<RegulationSeries, ScenarioError> {
    if !(period > 0.0 && duration >= 0.0 && step_sigma >= 0.0) {
        return Err(invalid(
            "regulation",
            "period must be positive, duration and step_sigma non-negative",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(REGULATION_STREAM);
    let t = time_grid(duration, period);
    let mut r = Vec::with_capacity(t.len());
    let mut x: f64 = rng.random();
    for _ in 0..t.len() {
        r.push(x);
        let z: f64 = rng.sample(StandardNormal);
        x += step_sigma * z;
        // Reflect until inside; a large step may bounce more than once.
        while !(0.0..=1.0).contains(&x) {
            x = if x < 0.0 { -x } else { 2.0 - x };
        }
    }
    RegulationSeries::new(t, r)
}

/// Power series held between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSeries {
    pub t: Vec<f64>,
    pub p_ref: Vec<f64>,
}

impl ReferenceSeries {
    pub fn new(t: Vec<f64>, p_ref: Vec<f64>) -> Result<Self, ScenarioError> {
        check_times(&t)?;
        if p_ref.len() != t.len() {
            return Err(invalid("p_ref", "length differs from t"));
        }
        if let Some(k) = p_ref.iter().position(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(invalid(
                "p_ref",
                format!("sample {k} is negative or not finite"),
            ));
        }
        Ok(Self { t, p_ref })
    }

    pub fn constant(p_ref: f64) -> Result<Self, ScenarioError> {
        Self::new(vec![0.0], vec![p_ref])
    }

    pub fn at(&self, t: f64) -> f64 {
        self.p_ref[hold_index(&self.t, t)]
    }
}

/// Memoised `find_mpp` keyed on the exact conditions.
#[derive(Debug)]
pub struct MppCache<'a> {
    array: &'a PvArrayParams,
    memo: HashMap<(u64, u64), (f64, f64)>,
}

impl<'a> MppCache<'a> {
    pub fn new(array: &'a PvArrayParams) -> Self {
        Self {
            array,
            memo: HashMap::new(),
        }
    }

    pub fn get(&mut self, cond: OperatingConditions) -> Result<(f64, f64), PvError> {
        let key = (cond.irradiance.to_bits(), cond.cell_temperature.to_bits());
        if let Some(hit) = self.memo.get(&key) {
            return Ok(*hit);
        }
        let mpp = find_mpp(cond, self.array)?;
        self.memo.insert(key, mpp);
        Ok(mpp)
    }
}

/// First-order low-pass filter of irradiance, discretised exactly for an
/// input held between samples. Starts at the first sample.
pub fn filter_irradiance(series: &IrradianceSeries, tau_filter: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut y = series.g[0];
    out.push(y);
    for k in 1..series.len() {
        let a = (-(series.t[k] - series.t[k - 1]) / tau_filter).exp();
        y = series.g[k - 1] + (y - series.g[k - 1]) * a;
        out.push(y);
    }
    out
}

/// Available-power estimate: MPP power at the low-pass-filtered irradiance.
pub fn estimate_available_power(
    series: &IrradianceSeries,
    array: &PvArrayParams,
    tau_filter: f64,
    default_temp: f64,
) -> Result<ReferenceSeries, ScenarioError> {
    if !(tau_filter > 0.0 && tau_filter.is_finite()) {
        return Err(invalid("tau_filter", "must be positive and finite"));
    }
    let g_filt = filter_irradiance(series, tau_filter);
    let mut cache = MppCache::new(array);
    let mut p = Vec::with_capacity(series.len());
    for (k, g) in g_filt.into_iter().enumerate() {
        let temp = series.temp.as_ref().map_or(default_temp, |v| v[k]);
        let (_, p_mpp) = cache.get(OperatingConditions::new(g, temp)?)?;
        p.push(p_mpp);
    }
    ReferenceSeries::new(series.t.clone(), p)
}

/// `p_ref = max(0, p̂ - depth·r)` on the union of both time grids.
pub fn build_reference(
    p_hat: &ReferenceSeries,
    reg: &RegulationSeries,
    depth: f64,
) -> Result<ReferenceSeries, ScenarioError> {
    if !(depth >= 0.0 && depth.is_finite()) {
        return Err(invalid("depth", "must be non-negative"));
    }
    if let Some(k) = reg.r.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(invalid("r", format!("sample {k} outside [0, 1]")));
    }
    let mut t: Vec<f64> = p_hat.t.iter().chain(&reg.t).copied().collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    let p = resample_zoh(&p_hat.t, &p_hat.p_ref, &t);
    let r = resample_zoh(&reg.t, &reg.r, &t);
    let p_ref = p
        .iter()
        .zip(&r)
        .map(|(p, r)| (p - depth * r).max(0.0))
        .collect();
    ReferenceSeries::new(t, p_ref)
}

fn default_dt() -> f64 {
    1.0
}

fn default_ou_clip() -> f64 {
    1200.0
}

/// Synthetic irradiance presets. All times in seconds, irradiance in W/m².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfilePreset {
    Constant {
        g: f64,
        duration: f64,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    Step {
        g0: f64,
        g1: f64,
        t_step: f64,
        duration: f64,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    Ramp {
        g0: f64,
        g1: f64,
        t_start: f64,
        t_end: f64,
        duration: f64,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    /// High irradiance, cosine-shaped drop to `low_fraction·g_high`, plateau,
    /// cosine-shaped recovery.
    CloudTransient {
        g_high: f64,
        low_fraction: f64,
        t_drop: f64,
        drop_time: f64,
        plateau: f64,
        recovery_time: f64,
        duration: f64,
        dt: f64,
    },
    /// Clearness index following an Ornstein-Uhlenbeck process, multiplied
    /// by a half-sine clear-sky curve and clipped to `[0, clip]`.
    Ou {
        clear_sky_peak: f64,
        /// Sunrise-to-sunset length; `None` keeps the clear sky at its peak.
        day_length: Option<f64>,
        /// Time after sunrise at which the series starts.
        #[serde(default)]
        t_offset: f64,
        k_mean: f64,
        k_sigma: f64,
        tau: f64,
        duration: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_ou_clip")]
        clip: f64,
    },
}

impl ProfilePreset {
    pub fn duration(&self) -> f64 {
        match *self {
            Self::Constant { duration, .. }
            | Self::Step { duration, .. }
            | Self::Ramp { duration, .. }
            | Self::CloudTransient { duration, .. }
            | Self::Ou { duration, .. } => duration,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let (duration, dt) = match *self {
            Self::Constant { duration, dt, .. }
            | Self::Step { duration, dt, .. }
            | Self::Ramp { duration, dt, .. }
            | Self::CloudTransient { duration, dt, .. }
            | Self::Ou { duration, dt, .. } => (duration, dt),
        };
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(invalid("duration", "must be positive"));
        }
        if !(dt > 0.0 && dt <= duration) {
            return Err(invalid("dt", "must be positive and not exceed duration"));
        }
        let non_negative = |field: &str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, "must be non-negative"))
            }
        };
        match *self {
            Self::Constant { g, .. } => non_negative("g", g),
            Self::Step { g0, g1, t_step, .. } => {
                non_negative("g0", g0)?;
                non_negative("g1", g1)?;
                non_negative("t_step", t_step)
            }
            Self::Ramp {
                g0,
                g1,
                t_start,
                t_end,
                ..
            } => {
                non_negative("g0", g0)?;
                non_negative("g1", g1)?;
                non_negative("t_start", t_start)?;
                if t_end <= t_start {
                    return Err(invalid("t_end", "must be after t_start"));
                }
                Ok(())
            }
            Self::CloudTransient {
                g_high,
                low_fraction,
                t_drop,
                drop_time,
                plateau,
                recovery_time,
                ..
            } => {
                non_negative("g_high", g_high)?;
                if !(0.0..=1.0).contains(&low_fraction) {
                    return Err(invalid("low_fraction", "must be in [0, 1]"));
                }
                non_negative("t_drop", t_drop)?;
                non_negative("plateau", plateau)?;
                if !(drop_time > 0.0 && recovery_time > 0.0) {
                    return Err(invalid(
                        "drop_time",
                        "drop and recovery times must be positive",
                    ));
                }
                Ok(())
            }
            Self::Ou {
                clear_sky_peak,
                day_length,
                t_offset,
                k_mean,
                k_sigma,
                tau,
                clip,
                ..
            } => {
                non_negative("clear_sky_peak", clear_sky_peak)?;
                non_negative("t_offset", t_offset)?;
                non_negative("k_mean", k_mean)?;
                non_negative("k_sigma", k_sigma)?;
                if day_length.is_some_and(|d| d <= 0.0) {
                    return Err(invalid("day_length", "must be positive"));
                }
                if !(tau > 0.0) {
                    return Err(invalid("tau", "must be positive"));
                }
                if !(clip > 0.0) {
                    return Err(invalid("clip", "must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// Half-cosine blend from 0 to 1 over `x` in [0, 1].
fn smooth(x: f64) -> f64 {
    0.5 - 0.5 * (PI * x.clamp(0.0, 1.0)).cos()
}

/// Generates the preset's irradiance series. Deterministic in `seed`.
pub fn synth_profile(preset: &ProfilePreset, seed: u64) -> Result<IrradianceSeries, ScenarioError> {
    preset.validate()?;
    let series = match *preset {
        ProfilePreset::Constant { g, duration, dt } => {
            let t = time_grid(duration, dt);
            let g = vec![g; t.len()];
            (t, g)
        }
        ProfilePreset::Step {
            g0,
            g1,
            t_step,
            duration,
            dt,
        } => {
            let t = time_grid(duration, dt);
            let g = t
                .iter()
                .map(|&x| if x < t_step { g0 } else { g1 })
                .collect();
            (t, g)
        }
        ProfilePreset::Ramp {
            g0,
            g1,
            t_start,
            t_end,
            duration,
            dt,
        } => {
            let t = time_grid(duration, dt);
            let g = t
                .iter()
                .map(|&x| g0 + (g1 - g0) * ((x - t_start) / (t_end - t_start)).clamp(0.0, 1.0))
                .collect();
            (t, g)
        }
        ProfilePreset::CloudTransient {
            g_high,
            low_fraction,
            t_drop,
            drop_time,
            plateau,
            recovery_time,
            duration,
            dt,
        } => {
            let t = time_grid(duration, dt);
            let t_rise = t_drop + drop_time + plateau;
            let g = t
                .iter()
                .map(|&x| {
                    let down = smooth((x - t_drop) / drop_time);
                    let up = smooth((x - t_rise) / recovery_time);
                    g_high * (1.0 - (1.0 - low_fraction) * (down - up))
                })
                .collect();
            (t, g)
        }
        ProfilePreset::Ou {
            clear_sky_peak,
            day_length,
            t_offset,
            k_mean,
            k_sigma,
            tau,
            duration,
            dt,
            clip,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(IRRADIANCE_STREAM);
            let t = time_grid(duration, dt);
            let decay = (-dt / tau).exp();
            let kick = k_sigma * (1.0 - decay * decay).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            let mut k = k_mean + k_sigma * z;
            let mut g = Vec::with_capacity(t.len());
            for &x in &t {
                let clear = match day_length {
                    Some(len) => clear_sky_peak * (PI * (x + t_offset) / len).sin().max(0.0),
                    None => clear_sky_peak,
                };
                g.push((k * clear).clamp(0.0, clip));
                let z: f64 = rng.sample(StandardNormal);
                k = k_mean + (k - k_mean) * decay + kick * z;
            }
            (t, g)
        }
    };
    IrradianceSeries::new(series.0, series.1, None)
}

/// Where the irradiance of a scenario comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum IrradianceSource {
    File { path: PathBuf },
    Synthetic(ProfilePreset),
}

fn default_regulation_period() -> f64 {
    2.0
}

fn default_regulation_sigma() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegulationSource {
    Constant {
        r: f64,
    },
    File {
        path: PathBuf,
    },
    Synthetic {
        #[serde(default = "default_regulation_period")]
        period: f64,
        #[serde(default = "default_regulation_sigma")]
        step_sigma: f64,
    },
}

fn default_tau_filter() -> f64 {
    60.0
}

fn default_depth() -> f64 {
    200e3
}

fn default_regulation() -> RegulationSource {
    RegulationSource::Synthetic {
        period: default_regulation_period(),
        step_sigma: default_regulation_sigma(),
    }
}

/// How the power reference is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceRecipe {
    Constant {
        p_ref: f64,
    },
    /// Filtered available power minus a downward regulation band.
    Regulated {
        #[serde(default = "default_tau_filter")]
        tau_filter: f64,
        #[serde(default = "default_depth")]
        depth: f64,
        #[serde(default = "default_regulation")]
        regulation: RegulationSource,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Full,
    Reduced,
}

fn default_temp() -> f64 {
    25.0
}

fn default_snr() -> f64 {
    71.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub irradiance: IrradianceSource,
    pub reference: ReferenceRecipe,
    /// Cell temperature when the irradiance series carries none.
    #[serde(default = "default_temp")]
    pub cell_temperature: f64,
    /// Measurement SNR in dB; `inf` disables noise.
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    pub duration: f64,
    pub fidelity: Fidelity,
    #[serde(default)]
    pub seed: u64,
}

/// Materialised inputs of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioInputs {
    pub irradiance: IrradianceSeries,
    pub reference: ReferenceSeries,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", "must be positive"));
        }
        if !(self.snr_db > 0.0) {
            return Err(invalid("snr_db", "must be positive (inf disables noise)"));
        }
        OperatingConditions::new(0.0, self.cell_temperature)?;
        if let IrradianceSource::Synthetic(p) = &self.irradiance {
            p.validate()?;
        }
        match &self.reference {
            ReferenceRecipe::Constant { p_ref } => {
                if !(*p_ref >= 0.0 && p_ref.is_finite()) {
                    return Err(invalid("p_ref", "must be non-negative"));
                }
            }
            ReferenceRecipe::Regulated {
                tau_filter,
                depth,
                regulation,
            } => {
                if !(*tau_filter > 0.0) {
                    return Err(invalid("tau_filter", "must be positive"));
                }
                if !(*depth >= 0.0) {
                    return Err(invalid("depth", "must be non-negative"));
                }
                match regulation {
                    RegulationSource::Constant { r } if !(0.0..=1.0).contains(r) => {
                        return Err(invalid("r", "must be in [0, 1]"));
                    }
                    RegulationSource::Synthetic { period, step_sigma }
                        if !(*period > 0.0 && *step_sigma >= 0.0) =>
                    {
                        return Err(invalid("regulation", "period must be positive"));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Loads or synthesises the irradiance and builds the reference.
    pub fn build(&self, array: &PvArrayParams) -> Result<ScenarioInputs, ScenarioError> {
        self.validate()?;
        let irradiance = match &self.irradiance {
            IrradianceSource::File { path } => load_irradiance(path)?,
            IrradianceSource::Synthetic(p) => synth_profile(p, self.seed)?,
        };
        let first = irradiance.t[0];
        let last = irradiance.t[irradiance.len() - 1];
        if first > 0.0 || last < self.duration - 1e-9 {
            return Err(invalid(
                "duration",
                format!(
                    "irradiance covers [{first}, {last}] s, run needs [0, {}] s",
                    self.duration
                ),
            ));
        }
        let reference = match &self.reference {
            ReferenceRecipe::Constant { p_ref } => ReferenceSeries::constant(*p_ref)?,
            ReferenceRecipe::Regulated {
                tau_filter,
                depth,
                regulation,
            } => {
                let p_hat = estimate_available_power(
                    &irradiance,
                    array,
                    *tau_filter,
                    self.cell_temperature,
                )?;
                let reg = match regulation {
                    RegulationSource::Constant { r } => RegulationSeries::constant(*r)?,
                    RegulationSource::File { path } => load_regulation(path)?,
                    RegulationSource::Synthetic { period, step_sigma } => {
                        synth_regulation(self.duration, *period, *step_sigma, self.seed)?
                    }
                };
                build_reference(&p_hat, &reg, *depth)?
            }
        };
        Ok(ScenarioInputs {
            irradiance,
            reference,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pv_array::{extract_params, ModuleDatasheet};
    use std::io::Write;

    fn array() -> PvArrayParams {
        extract_params(&ModuleDatasheet::cs6p_250p(), 16, 153).unwrap()
    }

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_short_csv() {
        let f = csv_file("t,g\n0,500\n1,510\n");
        let s = load_irradiance(f.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.g, vec![500.0, 510.0]);
        assert!(s.temp.is_none());

        let f = csv_file("t_s,g_wm2,temp_c\n0,500,30\n1,510,31\n");
        let s = load_irradiance(f.path()).unwrap();
        assert_eq!(s.temp, Some(vec![30.0, 31.0]));
    }

    #[test]
    fn rejects_bad_rows() {
        let f = csv_file("t_s,g_wm2\n0,500\n1,-3\n");
        match load_irradiance(f.path()) {
            Err(ScenarioError::Invalid { field, .. }) => assert_eq!(field, "g"),
            other => panic!("{other:?}"),
        }
        let f = csv_file("t_s,g_wm2\n0,500\n0,510\n");
        match load_irradiance(f.path()) {
            Err(ScenarioError::Invalid { field, .. }) => assert_eq!(field, "t"),
            other => panic!("{other:?}"),
        }
        let f = csv_file("t_s,g_wm2\n0,500\n1,abc\n");
        match load_irradiance(f.path()) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let f = csv_file("time,g_wm2\n0,500\n");
        assert!(matches!(
            load_irradiance(f.path()),
            Err(ScenarioError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_irradiance(Path::new("/nonexistent/irradiance.csv")),
            Err(ScenarioError::Io { .. })
        ));
    }

    #[test]
    fn regulation_loader() {
        let f = csv_file("t_s,r\n0,0.2\n2,0.8\n");
        let r = load_regulation(f.path()).unwrap();
        assert_eq!(r.r, vec![0.2, 0.8]);
        let f = csv_file("t_s,r\n0,1.2\n");
        assert!(load_regulation(f.path()).is_err());
    }

    #[test]
    fn constant_irradiance_settles_to_mpp_power() {
        let array = array();
        let preset = ProfilePreset::Constant {
            g: 1000.0,
            duration: 400.0,
            dt: 1.0,
        };
        let s = synth_profile(&preset, 0).unwrap();
        let p_hat = estimate_available_power(&s, &array, 60.0, 25.0).unwrap();
        let (_, p_mpp) = find_mpp(OperatingConditions::STC, &array).unwrap();
        assert!(p_hat.p_ref.iter().all(|&p| p == p_mpp));
        assert!((p_mpp - 611.6e3).abs() <= 0.01 * 611.6e3);
    }

    #[test]
    fn filter_step_response_is_first_order() {
        let preset = ProfilePreset::Step {
            g0: 500.0,
            g1: 1000.0,
            t_step: 60.0,
            duration: 600.0,
            dt: 1.0,
        };
        let s = synth_profile(&preset, 0).unwrap();
        let tau = 60.0;
        let g_f = filter_irradiance(&s, tau);
        for (t, g) in s.t.iter().zip(&g_f) {
            // The held 1000 W/m² input starts driving the filter at t = 60 s.
            let expected = if *t <= 60.0 {
                500.0
            } else {
                1000.0 - 500.0 * (-(t - 60.0) / tau).exp()
            };
            assert!(
                (g - expected).abs() <= 0.01 * expected,
                "t {t}: {g} vs {expected}"
            );
        }
    }

    #[test]
    fn reference_formula() {
        let p_hat = ReferenceSeries::new(vec![0.0, 1.0], vec![600e3, 100e3]).unwrap();
        let zero = RegulationSeries::constant(0.0).unwrap();
        assert_eq!(
            build_reference(&p_hat, &zero, 200e3).unwrap().p_ref,
            p_hat.p_ref
        );
        let full = RegulationSeries::constant(1.0).unwrap();
        let r = build_reference(&p_hat, &full, 200e3).unwrap();
        assert_eq!(r.p_ref, vec![400e3, 0.0]);
        let bad = RegulationSeries {
            t: vec![0.0],
            r: vec![1.5],
        };
        assert!(build_reference(&p_hat, &bad, 200e3).is_err());
    }

    #[test]
    fn step_preset_is_two_level() {
        let preset = ProfilePreset::Step {
            g0: 500.0,
            g1: 1000.0,
            t_step: 60.0,
            duration: 120.0,
            dt: 1.0,
        };
        let s = synth_profile(&preset, 0).unwrap();
        for (t, g) in s.t.iter().zip(&s.g) {
            assert_eq!(*g, if *t < 60.0 { 500.0 } else { 1000.0 });
        }
    }

    #[test]
    fn cloud_transient_shape() {
        let preset = ProfilePreset::CloudTransient {
            g_high: 1000.0,
            low_fraction: 0.3,
            t_drop: 10.0,
            drop_time: 5.0,
            plateau: 20.0,
            recovery_time: 5.0,
            duration: 60.0,
            dt: 0.1,
        };
        let s = synth_profile(&preset, 0).unwrap();
        let at = |t: f64| s.g[s.index_at(t + 1e-9)];
        assert_eq!(at(5.0), 1000.0);
        assert!((at(15.0) - 300.0).abs() < 1e-9);
        assert!((at(30.0) - 300.0).abs() < 1e-9);
        assert!((at(45.0) - 1000.0).abs() < 1e-9);
        // At least a 50 % drop inside 10 s.
        assert!(at(20.0) <= 0.5 * at(10.0));
    }

    #[test]
    fn ou_preset_bounds_and_correlation_time() {
        let tau = 10.0;
        let preset = ProfilePreset::Ou {
            clear_sky_peak: 1000.0,
            day_length: None,
            t_offset: 0.0,
            k_mean: 0.6,
            k_sigma: 0.15,
            tau,
            duration: 9999.0,
            dt: 1.0,
            clip: 1200.0,
        };
        let s = synth_profile(&preset, 42).unwrap();
        assert_eq!(s.len(), 10_000);
        assert!(s.g.iter().all(|g| (0.0..=1200.0).contains(g)));
        let n = s.len() as f64;
        let mean = s.g.iter().sum::<f64>() / n;
        let var = s.g.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
        let cov =
            s.g.windows(2)
                .map(|w| (w[0] - mean) * (w[1] - mean))
                .sum::<f64>()
                / (n - 1.0);
        let tau_hat = -1.0 / (cov / var).ln();
        assert!((tau_hat - tau).abs() <= 0.2 * tau, "tau_hat {tau_hat}");
    }

    #[test]
    fn generators_are_deterministic() {
        let preset = ProfilePreset::Ou {
            clear_sky_peak: 900.0,
            day_length: Some(43_200.0),
            t_offset: 3600.0,
            k_mean: 0.7,
            k_sigma: 0.2,
            tau: 30.0,
            duration: 600.0,
            dt: 1.0,
            clip: 1200.0,
        };
        assert_eq!(
            synth_profile(&preset, 9).unwrap(),
            synth_profile(&preset, 9).unwrap()
        );
        assert_ne!(
            synth_profile(&preset, 9).unwrap(),
            synth_profile(&preset, 10).unwrap()
        );
        let a = synth_regulation(300.0, 2.0, 0.1, 5).unwrap();
        assert_eq!(a, synth_regulation(300.0, 2.0, 0.1, 5).unwrap());
        assert!(a.r.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn zoh_round_trip() {
        let t = vec![0.0, 1.0, 2.5, 4.0];
        let x = vec![3.0, -1.0, 7.0, 2.0];
        let clock = time_grid(5.0, 0.5);
        let fine = resample_zoh(&t, &x, &clock);
        assert_eq!(resample_zoh(&clock, &fine, &t), x);
        assert_eq!(fine[3], -1.0); // t = 1.5 holds the t = 1 sample
    }

    #[test]
    fn csv_write_then_load_roundtrips() {
        let preset = ProfilePreset::Ramp {
            g0: 200.0,
            g1: 800.0,
            t_start: 10.0,
            t_end: 40.0,
            duration: 60.0,
            dt: 1.0,
        };
        let f = csv_file("");
        let s = synth_profile(&preset, 0).unwrap();
        s.write_csv(f.path()).unwrap();
        assert_eq!(load_irradiance(f.path()).unwrap(), s);
    }
}
