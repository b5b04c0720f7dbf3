//! Scenario configuration, end-to-end runs, CSV export and run metrics.
//!
//! A scenario is a TOML document. It may name a built-in preset with
//! `preset = "..."`, in which case the document only needs the fields it
//! overrides:
//!
//! ```toml
//! preset = "paper-fig3"
//! t_end = 20.0
//!
//! [observer]
//! variant = "decoupled"
//!
//! [noise]
//! magnetometer = 0.0
//! ```
//!
//! Matrices are given as a scalar (scaled identity), a list (diagonal) or a
//! list of rows.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observability::{pe_sweep, PeSweep, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::observer::{reconstruct_attitude, recover_inertial, ObserverConfig, RiccatiObserver, Variant, Weight};
use crate::simulator::{
    run_truth, BodyFrameState, Environment, NoiseSpec, SensorFrame, Signal3, TrajectorySpec, TruthFrame,
};
use crate::so3::{rotation_angle_error, Rotation, Vec3};

pub const PRESETS: &[&str] = &["paper-fig3", "stationary", "radial"];

pub const CSV_HEADER: [&str; 25] = [
    "t", "p_true_x", "p_true_y", "p_true_z", "v_true_x", "v_true_y", "v_true_z", "p_est_x", "p_est_y", "p_est_z",
    "v_est_x", "v_est_y", "v_est_z", "att_err_rad", "g_est_B_x", "g_est_B_y", "g_est_B_z", "m_meas_B_x",
    "m_meas_B_y", "m_meas_B_z", "m_est_B_x", "m_est_B_y", "m_est_B_z", "pos_err_norm", "vel_err_norm",
];

/// Where the vehicle goes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    FigureEight,
    Stationary {
        position: Vec3,
        #[serde(default = "Vec3::zeros")]
        attitude: Vec3,
    },
    /// Straight line through the landmark; negative speed approaches it.
    Radial {
        start: Vec3,
        speed: f64,
        #[serde(default)]
        angular_velocity: Signal3,
    },
    Random {
        seed: u64,
    },
    Custom(TrajectorySpec),
}

impl TrajectoryConfig {
    pub fn spec(&self) -> TrajectorySpec {
        match self {
            TrajectoryConfig::FigureEight => TrajectorySpec::figure_eight(),
            TrajectoryConfig::Stationary { position, attitude } => TrajectorySpec::stationary(*position, *attitude),
            TrajectoryConfig::Radial {
                start,
                speed,
                angular_velocity,
            } => TrajectorySpec::radial(*start, *speed, angular_velocity.clone()),
            TrajectoryConfig::Random { seed } => TrajectorySpec::random(*seed),
            TrajectoryConfig::Custom(spec) => spec.clone(),
        }
    }
}

/// Per-sample noise variances; the scenario seed drives the generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevels {
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub accel: f64,
    #[serde(default)]
    pub bearing: f64,
    #[serde(default)]
    pub magnetometer: f64,
}

impl NoiseLevels {
    pub fn spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            omega: self.omega,
            accel: self.accel,
            bearing: self.bearing,
            magnetometer: self.magnetometer,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, n: usize) -> std::result::Result<DMatrix<f64>, String> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(n, n) * *s),
            MatrixSpec::Diagonal(d) if d.len() == n => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            MatrixSpec::Diagonal(d) => Err(format!("diagonal has {} entries, expected {n}", d.len())),
            MatrixSpec::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(format!("expected {n} rows of {n} entries"));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSettings {
    pub variant: Variant,
    /// Initial estimate. Nine entries are accepted for the 12-state variants;
    /// the `m` block then starts at the first measurement.
    pub x0: Vec<f64>,
    pub p0: MatrixSpec,
    pub v: MatrixSpec,
    pub q: MatrixSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    /// Position-error norm below which the run counts as converged, m.
    pub convergence_threshold: f64,
    /// How long the error must stay below the threshold before `t_end`, s.
    pub hold: f64,
    /// The decay-rate fit stops once the position error drops below this.
    pub decay_floor: f64,
    pub pe_window: f64,
    pub pe_stride: f64,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        MetricsSettings {
            convergence_threshold: 0.05,
            hold: 1.0,
            decay_floor: 1e-8,
            pe_window: DEFAULT_WINDOW,
            pe_stride: DEFAULT_STRIDE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Preset this document was layered on, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub t_end: f64,
    /// Sensor and observer step, s.
    pub dt: f64,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub environment: Environment,
    #[serde(default)]
    pub noise: NoiseLevels,
    pub observer: ObserverSettings,
    #[serde(default)]
    pub metrics: MetricsSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

fn config_error(field: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Config {
        field: field.to_string(),
        message: e.to_string(),
    }
}

fn require(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config {
            field: field.to_string(),
            message: message.to_string(),
        })
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.t_end > 0.0 && self.t_end.is_finite(), "t_end", "must be positive and finite")?;
        require(self.dt > 0.0 && self.dt.is_finite(), "dt", "must be positive and finite")?;
        require(self.dt <= self.t_end, "dt", "must not exceed t_end")?;
        self.trajectory.spec().validate().map_err(config_error("trajectory"))?;
        self.environment.validate().map_err(config_error("environment"))?;
        self.noise.spec(self.seed).validate().map_err(config_error("noise"))?;
        let m = &self.metrics;
        require(m.convergence_threshold > 0.0, "metrics.convergence_threshold", "must be positive")?;
        require(m.hold >= 0.0, "metrics.hold", "must be non-negative")?;
        require(m.decay_floor > 0.0, "metrics.decay_floor", "must be positive")?;
        require(m.pe_window > 0.0, "metrics.pe_window", "must be positive")?;
        require(m.pe_stride > 0.0, "metrics.pe_stride", "must be positive")?;
        let n = self.observer.variant.state_dim();
        let x0_ok = self.observer.x0.len() == n || (n == 12 && self.observer.x0.len() == 9);
        let expected = if n == 12 { "9 or 12 entries" } else { "9 entries" };
        require(x0_ok, "observer.x0", expected)?;
        require(self.observer.x0.iter().all(|v| v.is_finite()), "observer.x0", "non-finite entry")?;
        self.observer_config()?.validate().map_err(config_error("observer"))
    }

    /// Observer tuning at the dimensions of the configured variant.
    pub fn observer_config(&self) -> Result<ObserverConfig> {
        let variant = self.observer.variant;
        let matrix = |spec: &MatrixSpec, n: usize, field: &str| {
            spec.to_matrix(n).map_err(|message| Error::Config {
                field: format!("observer.{field}"),
                message,
            })
        };
        let n = variant.state_dim();
        Ok(ObserverConfig {
            variant,
            p0: matrix(&self.observer.p0, n, "p0")?,
            v: Weight::Constant(matrix(&self.observer.v, n, "v")?),
            q: Weight::Constant(matrix(&self.observer.q, variant.output_dim(), "q")?),
            dt: self.dt,
            g_i: self.environment.g_i,
            m_i: self.environment.m_i,
        })
    }

    /// `x̂(0)`, completing a 9-entry estimate with the first `m^B` reading.
    pub fn initial_estimate(&self, first: &SensorFrame) -> Result<DVector<f64>> {
        let x0 = &self.observer.x0;
        let n = self.observer.variant.state_dim();
        if x0.len() == n {
            return Ok(DVector::from_column_slice(x0));
        }
        if n == 12 && x0.len() == 9 {
            return Ok(DVector::from_iterator(12, x0.iter().copied().chain(first.m_b.iter().copied())));
        }
        Err(Error::Dimension {
            what: "observer.x0",
            expected: n.to_string(),
            got: x0.len().to_string(),
        })
    }
}

/// A built-in scenario by name.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let paper_observer = ObserverSettings {
        variant: Variant::Reduced,
        x0: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 4.9, 4.9, 4.9],
        p0: MatrixSpec::Scalar(1.0),
        v: MatrixSpec::Scalar(36.0),
        q: MatrixSpec::Scalar(1.0),
    };
    let base = ScenarioConfig {
        preset: Some(name.to_string()),
        seed: 0,
        t_end: 30.0,
        dt: 1e-3,
        trajectory: TrajectoryConfig::FigureEight,
        environment: Environment::default(),
        noise: NoiseLevels {
            magnetometer: 1e-2,
            ..Default::default()
        },
        observer: paper_observer,
        metrics: MetricsSettings::default(),
        output: OutputSettings::default(),
    };
    match name {
        "paper-fig3" => Ok(base),
        "stationary" => Ok(ScenarioConfig {
            t_end: 10.0,
            trajectory: TrajectoryConfig::Stationary {
                position: Vec3::new(1.0, 2.0, -1.0),
                attitude: Vec3::new(0.1, -0.2, 0.3),
            },
            noise: NoiseLevels::default(),
            ..base
        }),
        "radial" => Ok(ScenarioConfig {
            t_end: 8.0,
            trajectory: TrajectoryConfig::Radial {
                start: Vec3::new(3.0, 4.0, 0.0),
                speed: -0.5,
                angular_velocity: Signal3::default(),
            },
            noise: NoiseLevels::default(),
            ..base
        }),
        other => Err(Error::Config {
            field: "preset".to_string(),
            message: format!("unknown preset `{other}` (available: {})", PRESETS.join(", ")),
        }),
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else is
/// replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Parses a scenario document. `preset_override` takes precedence over a
/// `preset` key in the document.
pub fn parse_scenario(text: &str, preset_override: Option<&str>) -> Result<ScenarioConfig> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
        field: "<document>".to_string(),
        message: e.message().to_string(),
    })?;
    let preset_name = match (preset_override, doc.get("preset")) {
        (Some(name), _) => Some(name.to_string()),
        (None, Some(toml::Value::String(name))) => Some(name.clone()),
        (None, Some(_)) => {
            return Err(Error::Config {
                field: "preset".to_string(),
                message: "must be a string".to_string(),
            })
        }
        (None, None) => None,
    };
    let mut table = match &preset_name {
        Some(name) => toml::Table::try_from(preset(name)?).expect("presets serialize to TOML"),
        None => toml::Table::new(),
    };
    merge(&mut table, doc);
    if let Some(name) = preset_name {
        table.insert("preset".to_string(), toml::Value::String(name));
    }
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            field: if path == "." { "<root>".to_string() } else { path },
            message: e.into_inner().message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    parse_scenario(&fs::read_to_string(path)?, None)
}

/// One exported sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Row {
    pub t: f64,
    pub p_true: Vec3,
    pub v_true: Vec3,
    pub p_est: Vec3,
    pub v_est: Vec3,
    pub att_err: f64,
    pub g_est_b: Vec3,
    pub m_meas_b: Vec3,
    /// `None` for the reduced variant.
    pub m_est_b: Option<Vec3>,
    pub g_true_b: Vec3,
    pub m_true_b: Vec3,
}

impl Row {
    pub fn pos_err(&self) -> f64 {
        (self.p_est - self.p_true).norm()
    }

    pub fn vel_err(&self) -> f64 {
        (self.v_est - self.v_true).norm()
    }

    pub fn g_err(&self) -> f64 {
        (self.g_est_b - self.g_true_b).norm()
    }

    pub fn m_err(&self) -> Option<f64> {
        self.m_est_b.map(|m| (m - self.m_true_b).norm())
    }

    fn fields(&self) -> Vec<f64> {
        let nan = Vec3::repeat(f64::NAN);
        let mut out = vec![self.t];
        for v in [self.p_true, self.v_true, self.p_est, self.v_est] {
            out.extend(v.iter());
        }
        out.push(self.att_err);
        for v in [self.g_est_b, self.m_meas_b, self.m_est_b.unwrap_or(nan)] {
            out.extend(v.iter());
        }
        out.extend([self.pos_err(), self.vel_err()]);
        out
    }
}

/// Full simulator-observer-reconstruction pass over a scenario.
#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub rows: Vec<Row>,
    pub metrics: RunMetrics,
}

/// Drives the observer over the simulated frames. The attitude estimate
/// starts at the identity and is rebuilt from `ĝ^B` and `m̂^B` (the measured
/// `m^B` for the reduced variant) after every step, keeping the previous
/// estimate whenever the reconstruction is degenerate.
pub fn run_frames(cfg: &ScenarioConfig, frames: &[TruthFrame]) -> Result<Vec<Row>> {
    let env = &cfg.environment;
    let first = &frames
        .first()
        .ok_or_else(|| Error::invalid("frames", "no samples"))?
        .frame;
    let mut observer = RiccatiObserver::new(cfg.observer_config()?, cfg.initial_estimate(first)?, first)?;
    let mut r_hat = Rotation::identity();
    let mut rows = Vec::with_capacity(frames.len());
    for (k, tf) in frames.iter().enumerate() {
        if k > 0 {
            observer.step(&tf.frame)?;
            let state = observer.state();
            let m_for_attitude = state.m_b().unwrap_or(tf.frame.m_b);
            if let Ok(est) = reconstruct_attitude(&state.g_b(), &m_for_attitude, env) {
                r_hat = est.rotation;
            }
        }
        let state = observer.state();
        let truth = &tf.truth.state;
        let body = BodyFrameState::from_truth(truth, env);
        let (p_est, v_est) = recover_inertial(state, &r_hat, env);
        rows.push(Row {
            t: tf.frame.t,
            p_true: truth.p_i,
            v_true: truth.v_i,
            p_est,
            v_est,
            att_err: rotation_angle_error(&r_hat, &truth.attitude),
            g_est_b: state.g_b(),
            m_meas_b: tf.frame.m_b,
            m_est_b: state.m_b(),
            g_true_b: body.g_b,
            m_true_b: body.m_b,
        });
    }
    Ok(rows)
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let spec = cfg.trajectory.spec();
    let frames = run_truth(&spec, &cfg.environment, &cfg.noise.spec(cfg.seed), cfg.t_end, cfg.dt)?;
    let rows = run_frames(cfg, &frames)?;
    let series: Vec<ErrorSample> = rows.iter().map(ErrorSample::from).collect();
    let tracking = tracking_metrics(&series, &cfg.metrics)?;
    let pe = inertial_bearing_sweep(cfg, &frames, cfg.metrics.pe_window, cfg.metrics.pe_stride)
        .ok()
        .map(PeSummary::from);
    Ok(ScenarioRun {
        config: cfg.clone(),
        rows,
        metrics: RunMetrics {
            variant: cfg.observer.variant,
            seed: cfg.seed,
            tracking,
            pe,
        },
    })
}

fn inertial_bearing_sweep(cfg: &ScenarioConfig, frames: &[TruthFrame], delta: f64, stride: f64) -> Result<PeSweep> {
    let eta_i: Vec<Vec3> = frames
        .iter()
        .map(|f| (f.truth.state.p_i - cfg.environment.landmark).normalize())
        .collect();
    pe_sweep(&eta_i, frames[0].frame.t, cfg.dt, delta, stride)
}

/// Persistent-excitation sweep of the true inertial bearing over the
/// configured trajectory.
pub fn pe_audit(cfg: &ScenarioConfig, delta: f64) -> Result<PeSweep> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", format!("window must be positive, got {delta}")));
    }
    cfg.validate()?;
    let frames = run_truth(
        &cfg.trajectory.spec(),
        &cfg.environment,
        &NoiseSpec::noiseless(),
        cfg.t_end,
        cfg.dt,
    )?;
    inertial_bearing_sweep(cfg, &frames, delta, cfg.metrics.pe_stride)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeSummary {
    pub delta: f64,
    pub stride: f64,
    pub windows: usize,
    pub min_mu: f64,
    pub min_mu_at: f64,
    pub pe_satisfied: bool,
}

impl From<PeSweep> for PeSummary {
    fn from(s: PeSweep) -> Self {
        PeSummary {
            delta: s.delta,
            stride: s.stride,
            windows: s.windows.len(),
            min_mu: s.min_mu,
            min_mu_at: s.min_mu_at,
            pe_satisfied: s.pe_satisfied,
        }
    }
}

/// Metrics that depend only on the exported error columns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackingMetrics {
    pub samples: usize,
    pub t_end: f64,
    pub converged: bool,
    /// Start of the final stretch with position error below the threshold.
    pub convergence_time: Option<f64>,
    /// RMSE is taken from the convergence time on, or over the whole run
    /// when the run did not converge.
    pub rmse_from: f64,
    pub rmse_position: f64,
    pub rmse_velocity: f64,
    pub rmse_attitude: f64,
    pub final_position_error: f64,
    pub final_velocity_error: f64,
    pub final_attitude_error: f64,
    pub max_attitude_error: f64,
    pub mean_attitude_error: f64,
    /// Least-squares slope of `ln |p̃|` from the convergence time until the
    /// error drops below the decay floor, 1/s.
    pub decay_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub variant: Variant,
    pub seed: u64,
    pub tracking: TrackingMetrics,
    pub pe: Option<PeSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorSample {
    pub t: f64,
    pub pos: f64,
    pub vel: f64,
    pub att: f64,
}

impl From<&Row> for ErrorSample {
    fn from(r: &Row) -> Self {
        ErrorSample {
            t: r.t,
            pos: r.pos_err(),
            vel: r.vel_err(),
            att: r.att_err,
        }
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn tracking_metrics(series: &[ErrorSample], settings: &MetricsSettings) -> Result<TrackingMetrics> {
    let last = series.last().ok_or_else(|| Error::invalid("series", "no samples"))?;
    let t_end = last.t;
    let threshold = settings.convergence_threshold;
    let start = match series.iter().rposition(|s| !(s.pos < threshold)) {
        None => Some(0),
        Some(i) if i + 1 < series.len() => Some(i + 1),
        Some(_) => None,
    };
    let convergence_time = start
        .map(|i| series[i].t)
        .filter(|&t| t_end - t >= settings.hold - 1e-9);
    let from = match convergence_time {
        Some(_) => start.unwrap_or(0),
        None => 0,
    };
    let window = &series[from..];
    let decay_rate = start.filter(|_| convergence_time.is_some()).and_then(|i| {
        let points: Vec<(f64, f64)> = series[i..]
            .iter()
            .take_while(|s| s.pos >= settings.decay_floor)
            .map(|s| (s.t, s.pos.ln()))
            .collect();
        slope(&points)
    });
    let atts = series.iter().map(|s| s.att);
    Ok(TrackingMetrics {
        samples: series.len(),
        t_end,
        converged: convergence_time.is_some(),
        convergence_time,
        rmse_from: window[0].t,
        rmse_position: rms(window.iter().map(|s| s.pos)),
        rmse_velocity: rms(window.iter().map(|s| s.vel)),
        rmse_attitude: rms(window.iter().map(|s| s.att)),
        final_position_error: last.pos,
        final_velocity_error: last.vel,
        final_attitude_error: last.att,
        max_attitude_error: atts.clone().fold(0.0, f64::max),
        mean_attitude_error: atts.sum::<f64>() / series.len() as f64,
        decay_rate,
    })
}

/// Writes the time series with a fixed header, `\n` line endings and
/// shortest round-trip decimal formatting.
pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.fields().iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Error series read back from an exported CSV.
pub fn read_error_series<R: Read>(input: R) -> Result<Vec<ErrorSample>> {
    let mut reader = csv::Reader::from_reader(input);
    let csv_err = |e: csv::Error| Error::Io(e.into());
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::invalid("csv", "unexpected header"));
    }
    let col = |name: &str| CSV_HEADER.iter().position(|h| *h == name).expect("known column");
    let (it, ipos, ivel, iatt) = (col("t"), col("pos_err_norm"), col("vel_err_norm"), col("att_err_rad"));
    let mut series = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let get = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| Error::invalid("csv", format!("bad number `{}`", &record[i])))
        };
        series.push(ErrorSample {
            t: get(it)?,
            pos: get(ipos)?,
            vel: get(ivel)?,
            att: get(iatt)?,
        });
    }
    Ok(series)
}

pub fn metrics_from_csv(path: &Path, settings: &MetricsSettings) -> Result<TrackingMetrics> {
    tracking_metrics(&read_error_series(fs::File::open(path)?)?, settings)
}

/// Writes `timeseries.csv` and `metrics.json` into `dir`.
pub fn write_outputs(run: &ScenarioRun, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("timeseries.csv");
    let json_path = dir.join("metrics.json");
    write_csv(&run.rows, std::io::BufWriter::new(fs::File::create(&csv_path)?))?;
    let json = serde_json::to_string_pretty(&run.metrics).expect("metrics serialize");
    fs::write(&json_path, json + "\n")?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn paper_preset_values() {
        let cfg = parse_scenario("preset = \"paper-fig3\"", None).unwrap();
        assert_eq!(cfg.environment.g_i, Vec3::new(0.0, 0.0, 9.81));
        assert_eq!(&cfg.observer.x0[6..], &[4.9, 4.9, 4.9]);
        assert_eq!(cfg.observer.variant, Variant::Reduced);
        assert_eq!(cfg.noise.magnetometer, 1e-2);
        let oc = cfg.observer_config().unwrap();
        assert_eq!(oc.p0, DMatrix::identity(9, 9));
        assert_eq!(oc.v.at(0.0), DMatrix::identity(9, 9) * 36.0);
        assert_eq!(oc.q.at(0.0), DMatrix::identity(3, 3));
        assert_eq!(cfg, preset("paper-fig3").unwrap());
    }

    #[test]
    fn overrides_merge_into_preset() {
        let text = "preset = \"paper-fig3\"\nt_end = 5\n[observer]\nvariant = \"full\"\nq = [1, 1, 1, 2, 2, 2]\n[noise]\nmagnetometer = 0.0\n";
        let cfg = parse_scenario(text, None).unwrap();
        assert_eq!(cfg.t_end, 5.0);
        assert_eq!(cfg.observer.variant, Variant::Full);
        assert_eq!(cfg.observer.x0.len(), 9);
        assert_eq!(cfg.noise.magnetometer, 0.0);
        assert_eq!(cfg.observer_config().unwrap().q.at(0.0)[(4, 4)], 2.0);
        assert_eq!(cfg.trajectory, TrajectoryConfig::FigureEight);

        let cfg = parse_scenario(text, Some("stationary")).unwrap();
        assert!(matches!(cfg.trajectory, TrajectoryConfig::Stationary { .. }));
    }

    fn config_field(text: &str) -> String {
        match parse_scenario(text, None) {
            Err(Error::Config { field, message }) => format!("{field}: {message}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        let msg = config_field("t_end = 1.0\ndt = 0.01\n[trajectory]\nkind = \"figure-eight\"\n");
        assert!(msg.contains("observer"), "{msg}");
        let msg = config_field("preset = \"paper-fig3\"\n[observer]\nvariant = \"sideways\"\n");
        assert!(msg.starts_with("observer.variant"), "{msg}");
        let msg = config_field("preset = \"paper-fig3\"\n[observer]\nx0 = [1, 2]\n");
        assert!(msg.starts_with("observer.x0"), "{msg}");
        let msg = config_field("preset = \"paper-fig3\"\nt_end = -1\n");
        assert!(msg.starts_with("t_end"), "{msg}");
        let msg = config_field("preset = \"paper-fig3\"\n[observer]\nv = [1, 2]\n");
        assert!(msg.starts_with("observer.v"), "{msg}");
        let msg = config_field("preset = \"paper-fig3\"\nbogus = 1\n");
        assert!(msg.contains("bogus"), "{msg}");
        let msg = config_field("preset = \"paper-fig3\"\n[noise]\nmagnetometer = -1.0\n");
        assert!(msg.starts_with("noise"), "{msg}");
        let msg = config_field("preset = \"paper-fig3\"\n[observer]\nvariant = \"decoupled\"\nv = [[1, 0], [0, 1]]\n");
        assert!(msg.starts_with("observer.v"), "{msg}");
    }

    #[test]
    fn custom_trajectory_round_trips() {
        let mut cfg = preset("paper-fig3").unwrap();
        cfg.trajectory = TrajectoryConfig::Custom(TrajectorySpec::random(3));
        cfg.preset = None;
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse_scenario(&text, None).unwrap(), cfg);
    }

    #[test]
    fn nine_entry_estimate_is_completed() {
        let mut cfg = preset("paper-fig3").unwrap();
        cfg.observer.variant = Variant::Decoupled;
        let frame = SensorFrame {
            t: 0.0,
            omega: Vec3::zeros(),
            a_b: Vec3::zeros(),
            eta_b: Vec3::x(),
            m_b: Vec3::new(0.1, 0.2, 0.3),
        };
        let x0 = cfg.initial_estimate(&frame).unwrap();
        assert_eq!(x0.len(), 12);
        assert_eq!(x0.fixed_rows::<3>(9).into_owned(), frame.m_b);
    }

    fn sample(t: f64, pos: f64) -> ErrorSample {
        ErrorSample { t, pos, vel: pos, att: 0.0 }
    }

    #[test]
    fn convergence_time_rules() {
        let settings = MetricsSettings::default();
        let decaying: Vec<_> = (0..=100).map(|k| sample(k as f64 * 0.1, (-(k as f64) * 0.1).exp())).collect();
        let m = tracking_metrics(&decaying, &settings).unwrap();
        // e^{-t} < 0.05 first at t = 3.0.
        assert_eq!(m.convergence_time, Some(3.0));
        assert!((m.decay_rate.unwrap() + 1.0).abs() < 1e-9);

        let late: Vec<_> = (0..=100).map(|k| sample(k as f64 * 0.1, if k < 95 { 1.0 } else { 0.0 })).collect();
        let m = tracking_metrics(&late, &settings).unwrap();
        assert!(!m.converged && m.convergence_time.is_none());
        assert_eq!(m.rmse_from, 0.0);

        let always: Vec<_> = (0..=20).map(|k| sample(k as f64 * 0.1, 0.0)).collect();
        assert_eq!(tracking_metrics(&always, &settings).unwrap().convergence_time, Some(0.0));
    }

    #[test]
    fn csv_round_trip() {
        let mut cfg = preset("paper-fig3").unwrap();
        cfg.t_end = 1.0;
        let run = run_scenario(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&run.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next().unwrap().split(',').count(), CSV_HEADER.len());
        assert_eq!(text.lines().count(), run.rows.len() + 1);
        let series = read_error_series(buf.as_slice()).unwrap();
        assert_eq!(tracking_metrics(&series, &cfg.metrics).unwrap(), run.metrics.tracking);
    }
}
