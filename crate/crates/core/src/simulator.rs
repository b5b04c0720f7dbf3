//! Ground-truth rigid-body trajectories and synthetic sensor measurements.
//!
//! Positions and angular velocities are closed-form sums of polynomial and
//! sinusoidal terms, so velocity and acceleration come from analytic
//! differentiation. The attitude is path dependent and is integrated from
//! `R(0)` with exponential steps.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{check_unit, exp_so3, Rotation, Vec3};

/// Closest approach to the landmark for which a bearing is still defined.
pub const MIN_LANDMARK_DISTANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidBodyState {
    pub t: f64,
    pub p_i: Vec3,
    pub v_i: Vec3,
    pub attitude: Rotation,
}

/// One synchronized set of measurements.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorFrame {
    pub t: f64,
    /// Gyroscope, rad/s.
    pub omega: Vec3,
    /// Accelerometer (specific force), m/s².
    pub a_b: Vec3,
    /// Unit bearing from the landmark to the vehicle, body frame.
    pub eta_b: Vec3,
    /// Body-frame observation of the known inertial direction `m_i`.
    pub m_b: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub g_i: Vec3,
    pub m_i: Vec3,
    pub landmark: Vec3,
}

impl Default for Environment {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Environment {
            g_i: Vec3::new(0.0, 0.0, 9.81),
            m_i: Vec3::new(s, 0.0, s),
            landmark: Vec3::zeros(),
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        check_unit(&self.m_i)?;
        let cross = self.g_i.cross(&self.m_i).norm();
        if cross <= 1e-9 * self.g_i.norm().max(1.0) {
            return Err(Error::invalid(
                "environment",
                "gravity and the reference direction m_i must not be collinear",
            ));
        }
        Ok(())
    }
}

/// `A sin(frequency t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Scalar signal `offset + rate t + accel t²/2 + Σ harmonics`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signal {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub accel: f64,
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
}

impl Signal {
    pub fn constant(offset: f64) -> Self {
        Signal {
            offset,
            ..Default::default()
        }
    }

    pub fn sine(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Signal {
            harmonics: vec![Harmonic {
                amplitude,
                frequency,
                phase,
            }],
            ..Default::default()
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.offset
            + self.rate * t
            + 0.5 * self.accel * t * t
            + self
                .harmonics
                .iter()
                .map(|h| h.amplitude * (h.frequency * t + h.phase).sin())
                .sum::<f64>()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.rate
            + self.accel * t
            + self
                .harmonics
                .iter()
                .map(|h| h.amplitude * h.frequency * (h.frequency * t + h.phase).cos())
                .sum::<f64>()
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        self.accel
            - self
                .harmonics
                .iter()
                .map(|h| h.amplitude * h.frequency * h.frequency * (h.frequency * t + h.phase).sin())
                .sum::<f64>()
    }

    fn is_finite(&self) -> bool {
        [self.offset, self.rate, self.accel].iter().all(|v| v.is_finite())
            && self
                .harmonics
                .iter()
                .all(|h| h.amplitude.is_finite() && h.frequency.is_finite() && h.phase.is_finite())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signal3 {
    pub x: Signal,
    pub y: Signal,
    pub z: Signal,
}

impl Signal3 {
    pub fn new(x: Signal, y: Signal, z: Signal) -> Self {
        Signal3 { x, y, z }
    }

    pub fn value(&self, t: f64) -> Vec3 {
        Vec3::new(self.x.value(t), self.y.value(t), self.z.value(t))
    }

    pub fn derivative(&self, t: f64) -> Vec3 {
        Vec3::new(self.x.derivative(t), self.y.derivative(t), self.z.derivative(t))
    }

    pub fn second_derivative(&self, t: f64) -> Vec3 {
        Vec3::new(
            self.x.second_derivative(t),
            self.y.second_derivative(t),
            self.z.second_derivative(t),
        )
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Position profile, body angular-velocity profile and initial attitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Inertial position, m.
    pub position: Signal3,
    /// Body-frame angular velocity, rad/s.
    #[serde(default)]
    pub angular_velocity: Signal3,
    /// `R(0)` as a rotation vector (axis times angle, rad).
    #[serde(default = "Vec3::zeros")]
    pub initial_attitude: Vec3,
}

impl TrajectorySpec {
    /// Figure-eight flight around a landmark at the origin with slowly
    /// varying body rates, starting pitched by a quarter turn about `e2`.
    pub fn figure_eight() -> Self {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};
        let s3 = 3f64.sqrt();
        TrajectorySpec {
            position: Signal3::new(
                Signal::sine(1.0, 5.0, FRAC_PI_2),
                Signal::sine(0.25, 10.0, 0.0),
                Signal::sine(-s3 / 4.0, 10.0, 0.0),
            ),
            angular_velocity: Signal3::new(
                Signal::sine(1.0, 0.1, PI),
                Signal::sine(0.5, 0.2, 0.0),
                Signal::sine(0.1, 0.3, FRAC_PI_3),
            ),
            initial_attitude: Vec3::new(0.0, FRAC_PI_2, 0.0),
        }
    }

    /// Vehicle at rest at `p` with constant attitude.
    pub fn stationary(p: Vec3, initial_attitude: Vec3) -> Self {
        TrajectorySpec {
            position: Signal3::new(
                Signal::constant(p.x),
                Signal::constant(p.y),
                Signal::constant(p.z),
            ),
            angular_velocity: Signal3::default(),
            initial_attitude,
        }
    }

    /// Constant-velocity flight along the line through the landmark at the
    /// origin, starting at `start` and moving with speed `speed` (negative
    /// speed flies toward the landmark).
    pub fn radial(start: Vec3, speed: f64, angular_velocity: Signal3) -> Self {
        let dir = start.normalize();
        let line = |i: usize| Signal {
            offset: start[i],
            rate: speed * dir[i],
            ..Default::default()
        };
        TrajectorySpec {
            position: Signal3::new(line(0), line(1), line(2)),
            angular_velocity,
            initial_attitude: Vec3::zeros(),
        }
    }

    /// Smooth random trajectory that stays at least about 1.5 m from the
    /// origin.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        while offset.norm() < 0.2 {
            offset = Vec3::new(rng.random_range(-1.0..1.0), 1.0, 0.5);
        }
        let offset = 4.0 * offset.normalize();
        let mut axis = |center: f64, amp: f64, fmin: f64, fmax: f64, n: usize| Signal {
            offset: center,
            harmonics: (0..n)
                .map(|_| Harmonic {
                    amplitude: rng.random_range(0.2 * amp..amp),
                    frequency: rng.random_range(fmin..fmax),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                })
                .collect(),
            ..Default::default()
        };
        let position = Signal3::new(
            axis(offset.x, 0.6, 0.5, 3.0, 2),
            axis(offset.y, 0.6, 0.5, 3.0, 2),
            axis(offset.z, 0.6, 0.5, 3.0, 2),
        );
        let angular_velocity = Signal3::new(
            axis(0.0, 1.0, 0.1, 1.0, 1),
            axis(0.0, 1.0, 0.1, 1.0, 1),
            axis(0.0, 1.0, 0.1, 1.0, 1),
        );
        let initial_attitude = Vec3::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        );
        TrajectorySpec {
            position,
            angular_velocity,
            initial_attitude,
        }
    }

    pub fn initial_rotation(&self) -> Rotation {
        Rotation::from_rotation_vector(&self.initial_attitude)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite()
            || !self.angular_velocity.is_finite()
            || !self.initial_attitude.iter().all(|v| v.is_finite())
        {
            return Err(Error::invalid("trajectory", "non-finite coefficient"));
        }
        Ok(())
    }
}

/// Gaussian white-noise variances per sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub accel: f64,
    /// Added before renormalization.
    #[serde(default)]
    pub bearing: f64,
    #[serde(default)]
    pub magnetometer: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise.omega", self.omega),
            ("noise.accel", self.accel),
            ("noise.bearing", self.bearing),
            ("noise.magnetometer", self.magnetometer),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field: name.into(),
                    message: format!("noise power must be finite and non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Truth at one instant together with the quantities needed to synthesize
/// sensor readings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub state: RigidBodyState,
    /// Inertial acceleration `p̈`.
    pub accel_i: Vec3,
    pub omega: Vec3,
}

/// One attitude step of `Ṙ = R [ω]_x` from `t` to `t + h`.
///
/// Fourth-order Magnus expansion with two Gauss-Legendre nodes; each step is
/// an exact rotation.
fn attitude_step(spec: &TrajectorySpec, r: &Rotation, t: f64, h: f64) -> Rotation {
    let c = 3f64.sqrt() / 6.0;
    let w1 = spec.angular_velocity.value(t + (0.5 - c) * h);
    let w2 = spec.angular_velocity.value(t + (0.5 + c) * h);
    let phi = 0.5 * h * (w1 + w2) + (3f64.sqrt() / 12.0) * h * h * w1.cross(&w2);
    r * &exp_so3(&phi, 1.0)
}

/// Steps through truth samples `t_k = k dt`, `k = 0, 1, ...`.
#[derive(Clone, Debug)]
pub struct TruthSampler<'a> {
    spec: &'a TrajectorySpec,
    dt: f64,
    k: u64,
    attitude: Rotation,
}

impl<'a> TruthSampler<'a> {
    pub fn new(spec: &'a TrajectorySpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        Ok(TruthSampler {
            spec,
            dt,
            k: 0,
            attitude: spec.initial_rotation(),
        })
    }

    fn sample(&self, t: f64) -> TruthSample {
        TruthSample {
            state: RigidBodyState {
                t,
                p_i: self.spec.position.value(t),
                v_i: self.spec.position.derivative(t),
                attitude: self.attitude,
            },
            accel_i: self.spec.position.second_derivative(t),
            omega: self.spec.angular_velocity.value(t),
        }
    }
}

impl Iterator for TruthSampler<'_> {
    type Item = TruthSample;

    fn next(&mut self) -> Option<TruthSample> {
        let t = self.k as f64 * self.dt;
        let out = self.sample(t);
        self.attitude = attitude_step(self.spec, &self.attitude, t, self.dt);
        self.k += 1;
        Some(out)
    }
}

/// Truth at time `t`, integrating the attitude from 0 with step `dt` (the
/// final step is shortened to land exactly on `t`).
pub fn eval_truth(spec: &TrajectorySpec, t: f64, dt: f64) -> Result<TruthSample> {
    if !(t >= 0.0) {
        return Err(Error::invalid("t", format!("must be non-negative, got {t}")));
    }
    let mut sampler = TruthSampler::new(spec, dt)?;
    let full = (t / dt).floor() as u64;
    let mut attitude = sampler.attitude;
    for k in 0..full {
        attitude = attitude_step(spec, &attitude, k as f64 * dt, dt);
    }
    let rest = t - full as f64 * dt;
    if rest > 0.0 {
        attitude = attitude_step(spec, &attitude, full as f64 * dt, rest);
    }
    sampler.attitude = attitude;
    Ok(sampler.sample(t))
}

/// Noise-free sensor readings for a truth sample.
pub fn ideal_sensors(sample: &TruthSample, env: &Environment) -> Result<SensorFrame> {
    let s = &sample.state;
    let r = &s.attitude;
    let rel = s.p_i - env.landmark;
    let distance = rel.norm();
    if !(distance > MIN_LANDMARK_DISTANCE) {
        return Err(Error::BearingUndefined { t: s.t, distance });
    }
    Ok(SensorFrame {
        t: s.t,
        omega: sample.omega,
        a_b: r.inverse_transform(&(sample.accel_i - env.g_i)),
        eta_b: r.inverse_transform(&rel) / distance,
        m_b: r.inverse_transform(&env.m_i),
    })
}

fn gaussian<R: Rng>(rng: &mut R, variance: f64) -> Vec3 {
    if variance == 0.0 {
        return Vec3::zeros();
    }
    let sigma = variance.sqrt();
    Vector3::from_fn(|_, _| {
        let n: f64 = StandardNormal.sample(rng);
        sigma * n
    })
}

/// Sensor readings for a truth sample, perturbed according to `noise`.
pub fn synth_sensors<R: Rng>(
    sample: &TruthSample,
    env: &Environment,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<SensorFrame> {
    let mut frame = ideal_sensors(sample, env)?;
    frame.omega += gaussian(rng, noise.omega);
    frame.a_b += gaussian(rng, noise.accel);
    if noise.bearing > 0.0 {
        let perturbed = frame.eta_b + gaussian(rng, noise.bearing);
        let n = perturbed.norm();
        if n > 0.0 {
            frame.eta_b = perturbed / n;
        }
    }
    frame.m_b += gaussian(rng, noise.magnetometer);
    Ok(frame)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthFrame {
    pub truth: TruthSample,
    pub frame: SensorFrame,
}

/// Number of samples `floor(t_end / dt) + 1` on `[0, t_end]`.
pub fn sample_count(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) * (1.0 + 1e-12)).floor() as usize + 1
}

/// Uniformly sampled truth and measurements on `[0, t_end]`.
pub fn run_truth(
    spec: &TrajectorySpec,
    env: &Environment,
    noise: &NoiseSpec,
    t_end: f64,
    dt: f64,
) -> Result<Vec<TruthFrame>> {
    if !(dt > 0.0) || !(t_end >= dt) {
        return Err(Error::invalid(
            "t_end",
            format!("need dt > 0 and t_end >= dt (t_end = {t_end}, dt = {dt})"),
        ));
    }
    env.validate()?;
    spec.validate()?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    TruthSampler::new(spec, dt)?
        .take(sample_count(t_end, dt))
        .map(|truth| {
            let frame = synth_sensors(&truth, env, noise, &mut rng)?;
            Ok(TruthFrame { truth, frame })
        })
        .collect()
}

/// True body-frame state `(p^B, v^B, g^B, m^B)` with `p` taken relative to
/// the landmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyFrameState {
    pub p_b: Vec3,
    pub v_b: Vec3,
    pub g_b: Vec3,
    pub m_b: Vec3,
}

impl BodyFrameState {
    pub fn from_truth(state: &RigidBodyState, env: &Environment) -> Self {
        let r = &state.attitude;
        BodyFrameState {
            p_b: r.inverse_transform(&(state.p_i - env.landmark)),
            v_b: r.inverse_transform(&state.v_i),
            g_b: r.inverse_transform(&env.g_i),
            m_b: r.inverse_transform(&env.m_i),
        }
    }

    /// Stacked `[p; v; g; m]`, truncated to `dim` (9 or 12) entries.
    pub fn to_vector(&self, dim: usize) -> nalgebra::DVector<f64> {
        let all = [self.p_b, self.v_b, self.g_b, self.m_b];
        nalgebra::DVector::from_iterator(dim, all.iter().flat_map(|v| v.iter().copied()).take(dim))
    }
}
