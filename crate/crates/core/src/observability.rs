//! Transition matrices, windowed observability Gramians and the
//! persistent-excitation margin of the inertial bearing.
//!
//! Everything here works on uniformly sampled signals. The Gramian is
//! available through two independent routes: direct integration of the
//! transition matrix of `A(t)`, and the change of variables `z = T(t) x`
//! that turns the dynamics into the constant nilpotent chain `ż = Ā z`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::observer::{build_matrices, unit_bearing, LtvMatrices, Variant};
use crate::simulator::TruthFrame;
use crate::so3::{check_unit, projector_unchecked, skew, Mat3, Rotation, Vec3};

/// Smallest eigenvalue (of the Gramian, or of the averaged bearing
/// projector) above which a window counts as exciting.
pub const PE_THRESHOLD: f64 = 1e-4;

/// Default window length and stride for sweeps, seconds.
pub const DEFAULT_WINDOW: f64 = 2.0;
pub const DEFAULT_STRIDE: f64 = 0.5;

#[derive(Clone, Debug, Serialize)]
pub struct GramianReport {
    pub t_start: f64,
    pub delta: f64,
    #[serde(skip)]
    pub w: DMatrix<f64>,
    pub min_eig: f64,
    /// Bearing excitation margin over the same window; needs attitudes.
    pub mu_pe: Option<f64>,
    /// `min_eig > PE_THRESHOLD`.
    pub pe_satisfied: bool,
}

/// Uniformly sampled gyro rates and body bearings, optionally with the true
/// attitude at every sample.
#[derive(Clone, Debug)]
pub struct SampledSystem {
    t0: f64,
    dt: f64,
    variant: Variant,
    omega: Vec<Vec3>,
    eta_b: Vec<Vec3>,
    attitude: Option<Vec<Rotation>>,
}

/// Index of `t` on the grid `t0 + k dt`, `k < len`.
fn grid_index(t0: f64, dt: f64, len: usize, t: f64) -> Result<usize> {
    let end = t0 + dt * (len.saturating_sub(1)) as f64;
    let out = Error::OutOfHorizon { t, start: t0, end };
    let k = ((t - t0) / dt).round();
    if !k.is_finite() || k < 0.0 || k as usize >= len {
        return Err(out);
    }
    if (t0 + k * dt - t).abs() > 1e-6 * dt {
        return Err(out);
    }
    Ok(k as usize)
}

fn window_bounds(t0: f64, dt: f64, len: usize, t: f64, delta: f64) -> Result<(usize, usize)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", format!("window must be positive, got {delta}")));
    }
    let k0 = grid_index(t0, dt, len, t)?;
    let k1 = grid_index(t0, dt, len, t + delta)?;
    if k1 <= k0 {
        return Err(Error::invalid("delta", "window shorter than one sample"));
    }
    Ok((k0, k1))
}

/// Value halfway between samples `k` and `k + 1`, by cubic interpolation on
/// the four nearest samples (linear when fewer exist).
fn midpoint(values: &[Vec3], k: usize) -> Vec3 {
    let n = values.len();
    if n < 4 {
        return 0.5 * (values[k] + values[k + 1]);
    }
    let (first, w): (usize, [f64; 4]) = if k == 0 {
        (0, [0.3125, 0.9375, -0.3125, 0.0625])
    } else if k + 2 >= n {
        (n - 4, [0.0625, -0.3125, 0.9375, 0.3125])
    } else {
        (k - 1, [-0.0625, 0.5625, 0.5625, -0.0625])
    };
    (0..4).map(|i| w[i] * values[first + i]).sum()
}

fn block_diag_rotation(r: &Mat3, blocks: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(3 * blocks, 3 * blocks);
    for i in 0..blocks {
        t.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(r);
    }
    t
}

fn state_a(omega: &Vec3, blocks: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(3 * blocks, 3 * blocks);
    let w = -skew(omega);
    for i in 0..blocks {
        a.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(&w);
    }
    a.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    a.fixed_view_mut::<3, 3>(3, 6).fill_with_identity();
    a
}

/// `blkdiag(Π, 0, 0[, I])`, i.e. `CᵀC` for projector block `Π`.
fn output_weight(proj: &Mat3, blocks: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(3 * blocks, 3 * blocks);
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(proj);
    if blocks == 4 {
        m.fixed_view_mut::<3, 3>(9, 9).fill_with_identity();
    }
    m
}

/// `exp(Ā τ)` for the chain `p <- v <- g` (and an inert `m` block).
pub fn nilpotent_chain_exp(tau: f64, blocks: usize) -> DMatrix<f64> {
    let mut e = DMatrix::identity(3 * blocks, 3 * blocks);
    e.fixed_view_mut::<3, 3>(0, 3).fill_diagonal(tau);
    e.fixed_view_mut::<3, 3>(3, 6).fill_diagonal(tau);
    e.fixed_view_mut::<3, 3>(0, 6).fill_diagonal(0.5 * tau * tau);
    e
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    ((m + m.transpose()) * 0.5).symmetric_eigenvalues().min()
}

impl SampledSystem {
    pub fn new(t0: f64, dt: f64, variant: Variant, omega: Vec<Vec3>, eta_b: Vec<Vec3>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if omega.len() != eta_b.len() || omega.len() < 2 {
            return Err(Error::Dimension {
                what: "sampled signals",
                expected: format!("equal lengths >= 2 (omega has {})", omega.len()),
                got: eta_b.len().to_string(),
            });
        }
        let eta_b = eta_b.iter().map(unit_bearing).collect::<Result<Vec<_>>>()?;
        Ok(SampledSystem {
            t0,
            dt,
            variant,
            omega,
            eta_b,
            attitude: None,
        })
    }

    /// Sampled system from simulator output, carrying the true attitudes.
    pub fn from_truth(frames: &[TruthFrame], variant: Variant) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid("frames", "need at least two samples"));
        }
        let dt = frames[1].frame.t - frames[0].frame.t;
        let sys = SampledSystem::new(
            frames[0].frame.t,
            dt,
            variant,
            frames.iter().map(|f| f.frame.omega).collect(),
            frames.iter().map(|f| f.frame.eta_b).collect(),
        )?;
        sys.with_attitudes(frames.iter().map(|f| f.truth.state.attitude).collect())
    }

    pub fn with_attitudes(mut self, attitude: Vec<Rotation>) -> Result<Self> {
        if attitude.len() != self.omega.len() {
            return Err(Error::Dimension {
                what: "attitudes",
                expected: self.omega.len().to_string(),
                got: attitude.len().to_string(),
            });
        }
        self.attitude = Some(attitude);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    fn blocks(&self) -> usize {
        self.variant.state_dim() / 3
    }

    pub fn matrices(&self, k: usize) -> LtvMatrices {
        build_matrices(&self.omega[k], &self.eta_b[k], self.variant).expect("bearings validated on construction")
    }

    /// Inertial bearings `R η^B`, when attitudes are known.
    pub fn inertial_bearings(&self) -> Option<Vec<Vec3>> {
        self.attitude.as_ref().map(|att| {
            att.iter()
                .zip(&self.eta_b)
                .map(|(r, eta)| (r * eta).normalize())
                .collect()
        })
    }

    /// `φ(s, t)`: maps the state at `t` to the state at `s`. Either order of
    /// `s` and `t` is accepted.
    pub fn transition_matrix(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        let ks = grid_index(self.t0, self.dt, self.len(), s)?;
        let kt = grid_index(self.t0, self.dt, self.len(), t)?;
        let n = self.variant.state_dim();
        let mut phi = DMatrix::identity(n, n);
        if ks >= kt {
            for k in kt..ks {
                phi = self.rk4_forward(&phi, k);
            }
        } else {
            for k in (ks..kt).rev() {
                phi = self.rk4_backward(&phi, k);
            }
        }
        Ok(phi)
    }

    fn stage_a(&self, k: usize) -> [DMatrix<f64>; 3] {
        let b = self.blocks();
        [
            state_a(&self.omega[k], b),
            state_a(&midpoint(&self.omega, k), b),
            state_a(&self.omega[k + 1], b),
        ]
    }

    fn rk4_forward(&self, phi: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let [a0, am, a1] = self.stage_a(k);
        rk4_linear(phi, &a0, &am, &a1, self.dt)
    }

    fn rk4_backward(&self, phi: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let [a0, am, a1] = self.stage_a(k);
        rk4_linear(phi, &a1, &am, &a0, -self.dt)
    }

    /// Windowed observability Gramian
    /// `W = (1/δ) ∫ φᵀ(s,t) Cᵀ(s) C(s) φ(s,t) ds` by the trapezoidal rule.
    pub fn gramian(&self, t: f64, delta: f64) -> Result<GramianReport> {
        let (k0, k1) = window_bounds(self.t0, self.dt, self.len(), t, delta)?;
        let n = self.variant.state_dim();
        let blocks = self.blocks();
        let mut phi = DMatrix::identity(n, n);
        let mut w = DMatrix::zeros(n, n);
        for k in k0..=k1 {
            if k > k0 {
                phi = self.rk4_forward(&phi, k - 1);
            }
            let ctc = output_weight(&projector_unchecked(&self.eta_b[k]), blocks);
            let weight = if k == k0 || k == k1 { 0.5 } else { 1.0 };
            w += phi.transpose() * ctc * &phi * weight;
        }
        w *= self.dt / delta;
        let w = (&w + w.transpose()) * 0.5;
        let min_eig = min_symmetric_eigenvalue(&w);
        let mu_pe = match self.inertial_bearings() {
            Some(eta_i) => Some(pe_margin(&eta_i, self.t0, self.dt, t, delta)?),
            None => None,
        };
        let pe_satisfied = min_eig > PE_THRESHOLD;
        Ok(GramianReport {
            t_start: t,
            delta,
            w,
            min_eig,
            mu_pe,
            pe_satisfied,
        })
    }

    /// The same Gramian through `φ(s,t) = Tᵀ(s) exp(Ā(s-t)) T(t)` with
    /// `T = blkdiag(R, ..., R)`, using the true attitudes and the inertial
    /// bearing.
    pub fn gramian_via_factorization(&self, t: f64, delta: f64) -> Result<DMatrix<f64>> {
        let attitude = self
            .attitude
            .as_ref()
            .ok_or_else(|| Error::invalid("attitudes", "factorized Gramian needs true attitudes"))?;
        let (k0, k1) = window_bounds(self.t0, self.dt, self.len(), t, delta)?;
        let n = self.variant.state_dim();
        let blocks = self.blocks();
        let mut inner = DMatrix::zeros(n, n);
        for (k, (r, eta_b)) in attitude.iter().zip(&self.eta_b).enumerate().take(k1 + 1).skip(k0) {
            let tau = (k - k0) as f64 * self.dt;
            let chain = nilpotent_chain_exp(tau, blocks);
            let eta_i = (r.matrix() * eta_b).normalize();
            let sigma = output_weight(&projector_unchecked(&eta_i), blocks);
            let weight = if k == k0 || k == k1 { 0.5 } else { 1.0 };
            inner += chain.transpose() * sigma * &chain * weight;
        }
        inner *= self.dt / delta;
        let big_t = block_diag_rotation(attitude[k0].matrix(), blocks);
        let w = big_t.transpose() * inner * big_t;
        Ok((&w + w.transpose()) * 0.5)
    }

    /// Gramian reports for windows starting every `stride` seconds.
    pub fn gramian_sweep(&self, delta: f64, stride: f64) -> Result<Vec<GramianReport>> {
        window_starts(self.t0, self.end_time(), delta, stride, self.dt)?
            .into_iter()
            .map(|t| self.gramian(t, delta))
            .collect()
    }
}

/// One RK4 step of `Φ' = A Φ` with `A` given at the start, middle and end.
fn rk4_linear(phi: &DMatrix<f64>, a0: &DMatrix<f64>, am: &DMatrix<f64>, a1: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let k1 = a0 * phi;
    let k2 = am * (phi + &k1 * (h / 2.0));
    let k3 = am * (phi + &k2 * (h / 2.0));
    let k4 = a1 * (phi + &k3 * h);
    phi + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Grid-aligned window starts `t0, t0 + stride, ...` with `start + delta <= end`.
pub fn window_starts(t0: f64, end: f64, delta: f64, stride: f64, dt: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", format!("window must be positive, got {delta}")));
    }
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(Error::invalid("stride", format!("must be positive, got {stride}")));
    }
    if t0 + delta > end + 1e-9 {
        return Err(Error::invalid(
            "delta",
            format!("window of {delta} s exceeds the sampled horizon of {} s", end - t0),
        ));
    }
    let snap = |t: f64| t0 + ((t - t0) / dt).round() * dt;
    let mut starts = Vec::new();
    let mut i = 0usize;
    loop {
        let t = snap(t0 + i as f64 * stride);
        if t + delta > end + 1e-9 {
            break;
        }
        starts.push(t);
        i += 1;
    }
    Ok(starts)
}

/// Smallest eigenvalue of `(1/δ) ∫ Π_{η(s)} ds` over `[t, t + δ]`, with
/// `η` sampled at `t0 + k dt`.
pub fn pe_margin(eta_i: &[Vec3], t0: f64, dt: f64, t: f64, delta: f64) -> Result<f64> {
    let (k0, k1) = window_bounds(t0, dt, eta_i.len(), t, delta)?;
    let mut avg = Mat3::zeros();
    for (k, eta) in eta_i.iter().enumerate().take(k1 + 1).skip(k0) {
        check_unit(eta)?;
        let weight = if k == k0 || k == k1 { 0.5 } else { 1.0 };
        avg += projector_unchecked(eta) * weight;
    }
    avg *= dt / delta;
    let avg = (avg + avg.transpose()) * 0.5;
    Ok(avg.symmetric_eigenvalues().min())
}

#[derive(Clone, Debug, Serialize)]
pub struct PeWindow {
    pub t_start: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PeSweep {
    pub delta: f64,
    pub stride: f64,
    pub windows: Vec<PeWindow>,
    pub min_mu: f64,
    pub min_mu_at: f64,
    pub pe_satisfied: bool,
}

/// [`pe_margin`] over windows starting every `stride` seconds.
pub fn pe_sweep(eta_i: &[Vec3], t0: f64, dt: f64, delta: f64, stride: f64) -> Result<PeSweep> {
    if eta_i.is_empty() {
        return Err(Error::invalid("eta_i", "no samples"));
    }
    let end = t0 + (eta_i.len() - 1) as f64 * dt;
    let windows = window_starts(t0, end, delta, stride, dt)?
        .into_iter()
        .map(|t| Ok(PeWindow { t_start: t, mu: pe_margin(eta_i, t0, dt, t, delta)? }))
        .collect::<Result<Vec<_>>>()?;
    let worst = windows
        .iter()
        .min_by(|a, b| a.mu.total_cmp(&b.mu))
        .expect("at least one window");
    Ok(PeSweep {
        delta,
        stride,
        min_mu: worst.mu,
        min_mu_at: worst.t_start,
        pe_satisfied: worst.mu > PE_THRESHOLD,
        windows,
    })
}
