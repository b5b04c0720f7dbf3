//! Riccati observer on the body-frame linear time-varying model.
//!
//! State layout is `x = [p^B; v^B; g^B; m^B]` (12 entries) for the full and
//! decoupled variants and `[p^B; v^B; g^B]` (9 entries) for the reduced one.
//! The model is
//!
//! ```text
//! ẋ = A(t) x + B a^B,    y = C(t) x
//! A = blocks(-[ω]x on the diagonal, I at (p,v) and (v,g))
//! C = [[Π_η, 0, 0, 0], [0, 0, 0, I]]      y = [0; m^B]
//! ```
//!
//! where the first output row is the virtual measurement `Π_η p^B = 0`. The
//! gain is `K = P Cᵀ Q` with `Ṗ = A P + P Aᵀ - P Cᵀ Q C P + V`. Both the
//! estimate and `P` are integrated with one classical RK4 step per sensor
//! frame; inputs at the half step are interpolated from recent frames.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{Environment, SensorFrame};
use crate::so3::{project_to_rotation, projector_unchecked, skew, Mat3, Rotation, Vec3};

/// Tolerance on the bearing norm accepted by [`build_matrices`].
pub const BEARING_NORM_TOL: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// 12 states, one Riccati equation over the whole state.
    Full,
    /// 12 states with block-diagonal tuning; `(p, v, g)` and `m` are
    /// propagated as two independent Riccati observers.
    Decoupled,
    /// 9 states `(p, v, g)` from IMU and bearing only.
    Reduced,
}

impl Variant {
    pub fn state_dim(self) -> usize {
        match self {
            Variant::Full | Variant::Decoupled => 12,
            Variant::Reduced => 9,
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            Variant::Full | Variant::Decoupled => 6,
            Variant::Reduced => 3,
        }
    }

    pub fn has_vector_state(self) -> bool {
        self != Variant::Reduced
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Decoupled => "decoupled",
            Variant::Reduced => "reduced",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "decoupled" => Ok(Variant::Decoupled),
            "reduced" => Ok(Variant::Reduced),
            other => Err(Error::invalid(
                "variant",
                format!("expected full, decoupled or reduced, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LtvMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

fn set_block(m: &mut DMatrix<f64>, row: usize, col: usize, block: &Mat3) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(block);
}

pub(crate) fn unit_bearing(eta_b: &Vec3) -> Result<Vec3> {
    let norm = eta_b.norm();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::Degenerate("zero bearing vector".into()));
    }
    if (norm - 1.0).abs() > BEARING_NORM_TOL {
        return Err(Error::NotUnitVector { norm });
    }
    Ok(eta_b / norm)
}

/// System matrices for one instant of the body-frame model.
///
/// The decoupled variant shares the full variant's matrices.
pub fn build_matrices(omega: &Vec3, eta_b: &Vec3, variant: Variant) -> Result<LtvMatrices> {
    let eta = unit_bearing(eta_b)?;
    let n = variant.state_dim();
    let blocks = n / 3;
    let w = -skew(omega);
    let eye = Mat3::identity();

    let mut a = DMatrix::zeros(n, n);
    for i in 0..blocks {
        set_block(&mut a, 3 * i, 3 * i, &w);
    }
    set_block(&mut a, 0, 3, &eye);
    set_block(&mut a, 3, 6, &eye);

    let mut b = DMatrix::zeros(n, 3);
    set_block(&mut b, 3, 0, &eye);

    let mut c = DMatrix::zeros(variant.output_dim(), n);
    set_block(&mut c, 0, 0, &projector_unchecked(&eta));
    if variant.has_vector_state() {
        set_block(&mut c, 3, 9, &eye);
    }
    Ok(LtvMatrices { a, b, c })
}

/// Tuning matrix that is either constant or a function of time.
#[derive(Clone)]
pub enum Weight {
    Constant(DMatrix<f64>),
    TimeVarying(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>),
}

impl Weight {
    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        Weight::Constant(DMatrix::identity(n, n) * scale)
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        match self {
            Weight::Constant(m) => m.clone(),
            Weight::TimeVarying(f) => f(t),
        }
    }
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weight::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Weight::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

impl From<DMatrix<f64>> for Weight {
    fn from(m: DMatrix<f64>) -> Self {
        Weight::Constant(m)
    }
}

#[derive(Clone, Debug)]
pub struct ObserverConfig {
    pub variant: Variant,
    /// `P(0)`.
    pub p0: DMatrix<f64>,
    /// State weight `V(t)`, `n x n`.
    pub v: Weight,
    /// Output weight `Q(t)`, 6x6 (full, decoupled) or 3x3 (reduced).
    pub q: Weight,
    pub dt: f64,
    pub g_i: Vec3,
    pub m_i: Vec3,
}

impl ObserverConfig {
    /// `P(0) = p0 I`, `V = v I`, `Q = q I` at the dimensions of `variant`.
    pub fn scaled_identity(variant: Variant, p0: f64, v: f64, q: f64, dt: f64, env: &Environment) -> Self {
        let n = variant.state_dim();
        ObserverConfig {
            variant,
            p0: DMatrix::identity(n, n) * p0,
            v: Weight::scaled_identity(n, v),
            q: Weight::scaled_identity(variant.output_dim(), q),
            dt,
            g_i: env.g_i,
            m_i: env.m_i,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        let n = self.variant.state_dim();
        let m = self.variant.output_dim();
        check_spd("P0", &self.p0, n)?;
        if let Weight::Constant(v) = &self.v {
            check_spd("V", v, n)?;
        }
        if let Weight::Constant(q) = &self.q {
            check_spd("Q", q, m)?;
        }
        if self.variant == Variant::Decoupled {
            check_block_diagonal("P0", &self.p0, 9)?;
            if let Weight::Constant(v) = &self.v {
                check_block_diagonal("V", v, 9)?;
            }
            if let Weight::Constant(q) = &self.q {
                check_block_diagonal("Q", q, 3)?;
            }
        }
        Ok(())
    }
}

fn check_spd(name: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Dimension {
            what: name,
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if (m - m.transpose()).abs().max() > SYMMETRY_TOL * m.abs().max().max(1.0) {
        return Err(Error::invalid(name, "matrix is not symmetric"));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::invalid(name, "matrix is not positive definite"));
    }
    Ok(())
}

fn check_block_diagonal(name: &'static str, m: &DMatrix<f64>, split: usize) -> Result<()> {
    let n = m.nrows();
    let off = m.view((0, split), (split, n - split)).abs().max();
    let off_t = m.view((split, 0), (n - split, split)).abs().max();
    if off != 0.0 || off_t != 0.0 {
        return Err(Error::invalid(
            name,
            format!("decoupled variant needs a block-diagonal matrix split at {split}"),
        ));
    }
    Ok(())
}

/// Recent sensor frames, newest last.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InputHistory {
    frames: VecDeque<SensorFrame>,
}

impl InputHistory {
    const DEPTH: usize = 3;

    fn push(&mut self, frame: SensorFrame) {
        if self.frames.len() == Self::DEPTH {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn latest(&self) -> Option<&SensorFrame> {
        self.frames.back()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObserverState {
    pub t: f64,
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    history: InputHistory,
}

impl ObserverState {
    /// Observer state at the time of `first`, which supplies the inputs at
    /// the start of the first step.
    pub fn new(cfg: &ObserverConfig, x0: DVector<f64>, first: &SensorFrame) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.variant.state_dim();
        if x0.len() != n {
            return Err(Error::Dimension {
                what: "x0",
                expected: n.to_string(),
                got: x0.len().to_string(),
            });
        }
        let mut history = InputHistory::default();
        history.push(*first);
        Ok(ObserverState {
            t: first.t,
            x_hat: x0,
            p: cfg.p0.clone(),
            history,
        })
    }

    pub fn p_b(&self) -> Vec3 {
        self.x_hat.fixed_rows::<3>(0).into_owned()
    }

    pub fn v_b(&self) -> Vec3 {
        self.x_hat.fixed_rows::<3>(3).into_owned()
    }

    pub fn g_b(&self) -> Vec3 {
        self.x_hat.fixed_rows::<3>(6).into_owned()
    }

    /// `m̂^B`, absent for the reduced variant.
    pub fn m_b(&self) -> Option<Vec3> {
        (self.x_hat.len() == 12).then(|| self.x_hat.fixed_rows::<3>(9).into_owned())
    }

    pub fn history(&self) -> &InputHistory {
        &self.history
    }
}

/// Sensor inputs at one RK4 node.
#[derive(Clone, Copy, Debug)]
struct NodeInput {
    t: f64,
    omega: Vec3,
    a_b: Vec3,
    eta_b: Vec3,
    m_b: Vec3,
}

impl From<&SensorFrame> for NodeInput {
    fn from(f: &SensorFrame) -> Self {
        NodeInput {
            t: f.t,
            omega: f.omega,
            a_b: f.a_b,
            eta_b: f.eta_b,
            m_b: f.m_b,
        }
    }
}

/// Lagrange weights for the midpoint of the last interval of equally spaced
/// nodes.
fn midpoint_weights(nodes: usize) -> &'static [f64] {
    match nodes {
        2 => &[0.5, 0.5],
        3 => &[-0.125, 0.75, 0.375],
        _ => &[0.0625, -0.3125, 0.9375, 0.3125],
    }
}

/// Inputs at `t + h/2` from the history plus the incoming frame. The bearing
/// enters only through `Π_η`, so older bearings are sign-aligned with the
/// newest one before interpolation.
fn midpoint_input(history: &InputHistory, next: &SensorFrame) -> NodeInput {
    let frames: Vec<&SensorFrame> = history.frames.iter().chain(std::iter::once(next)).collect();
    let w = midpoint_weights(frames.len());
    let mut out = NodeInput {
        t: 0.5 * (frames[frames.len() - 2].t + next.t),
        omega: Vec3::zeros(),
        a_b: Vec3::zeros(),
        eta_b: Vec3::zeros(),
        m_b: Vec3::zeros(),
    };
    for (f, &wi) in frames.iter().zip(w) {
        let eta = if f.eta_b.dot(&next.eta_b) < 0.0 { -f.eta_b } else { f.eta_b };
        out.omega += wi * f.omega;
        out.a_b += wi * f.a_b;
        out.eta_b += wi * eta;
        out.m_b += wi * f.m_b;
    }
    out.eta_b = out.eta_b.normalize();
    out
}

/// Everything the right-hand sides need at one RK4 node.
struct Node {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    /// `B u`
    forcing: DVector<f64>,
    y: DVector<f64>,
    v: DMatrix<f64>,
    q: DMatrix<f64>,
}

fn riccati_rhs(p: &DMatrix<f64>, node: &Node) -> DMatrix<f64> {
    let pct = p * node.c.transpose();
    &node.a * p + p * node.a.transpose() - &pct * &node.q * pct.transpose() + &node.v
}

fn estimate_rhs(x: &DVector<f64>, p: &DMatrix<f64>, node: &Node) -> DVector<f64> {
    let innovation = &node.y - &node.c * x;
    &node.a * x + &node.forcing + p * (node.c.transpose() * (&node.q * innovation))
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

fn check_positive_definite(p: &DMatrix<f64>, t: f64) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) && p.clone().cholesky().is_some() {
        return Ok(());
    }
    let min_eigenvalue = if p.iter().all(|v| v.is_finite()) {
        p.symmetric_eigenvalues().min()
    } else {
        f64::NAN
    };
    Err(Error::NumericalFailure { t, min_eigenvalue })
}

/// Joint RK4 step of the estimate and the Riccati matrix over the nodes
/// `[start, middle, end]`. Without an estimate only `P` is advanced.
fn rk4(
    x: Option<&DVector<f64>>,
    p: &DMatrix<f64>,
    nodes: &[Node; 3],
    h: f64,
) -> (Option<DVector<f64>>, DMatrix<f64>) {
    let [n0, nm, n1] = nodes;
    let kp1 = riccati_rhs(p, n0);
    let p2 = p + &kp1 * (h / 2.0);
    let kp2 = riccati_rhs(&p2, nm);
    let p3 = p + &kp2 * (h / 2.0);
    let kp3 = riccati_rhs(&p3, nm);
    let p4 = p + &kp3 * h;
    let kp4 = riccati_rhs(&p4, n1);
    let p_next = p + (kp1 + (kp2 + kp3) * 2.0 + kp4) * (h / 6.0);

    let x_next = x.map(|x| {
        let k1 = estimate_rhs(x, p, n0);
        let k2 = estimate_rhs(&(x + &k1 * (h / 2.0)), &p2, nm);
        let k3 = estimate_rhs(&(x + &k2 * (h / 2.0)), &p3, nm);
        let k4 = estimate_rhs(&(x + &k3 * h), &p4, n1);
        x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
    });
    (x_next, symmetrize(&p_next))
}

/// One RK4 step of `Ṗ = A P + P Aᵀ - P Cᵀ Q C P + V` with the matrices held
/// constant over the step, followed by symmetrization.
pub fn riccati_step(
    p: &DMatrix<f64>,
    mats: &LtvMatrices,
    v: &DMatrix<f64>,
    q: &DMatrix<f64>,
    dt: f64,
) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    check_positive_definite(p, f64::NAN)?;
    let node = || Node {
        a: mats.a.clone(),
        c: mats.c.clone(),
        forcing: DVector::zeros(0),
        y: DVector::zeros(0),
        v: v.clone(),
        q: q.clone(),
    };
    let (_, p_next) = rk4(None, p, &[node(), node(), node()], dt);
    check_positive_definite(&p_next, f64::NAN)?;
    Ok(p_next)
}

fn translational_node(input: &NodeInput, v: DMatrix<f64>, q: DMatrix<f64>) -> Result<Node> {
    let mats = build_matrices(&input.omega, &input.eta_b, Variant::Reduced)?;
    Ok(Node {
        forcing: &mats.b * input.a_b,
        y: DVector::zeros(3),
        a: mats.a,
        c: mats.c,
        v,
        q,
    })
}

fn vector_node(input: &NodeInput, v: DMatrix<f64>, q: DMatrix<f64>) -> Node {
    Node {
        a: DMatrix::from_iterator(3, 3, (-skew(&input.omega)).iter().copied()),
        c: DMatrix::identity(3, 3),
        forcing: DVector::zeros(3),
        y: DVector::from_column_slice(input.m_b.as_slice()),
        v,
        q,
    }
}

fn full_node(input: &NodeInput, v: DMatrix<f64>, q: DMatrix<f64>) -> Result<Node> {
    let mats = build_matrices(&input.omega, &input.eta_b, Variant::Full)?;
    let mut y = DVector::zeros(6);
    y.fixed_rows_mut::<3>(3).copy_from(&input.m_b);
    Ok(Node {
        forcing: &mats.b * input.a_b,
        y,
        a: mats.a,
        c: mats.c,
        v,
        q,
    })
}

/// Advances the observer from `state.t` to `frame.t = state.t + cfg.dt`.
pub fn observer_step(
    state: &ObserverState,
    frame: &SensorFrame,
    cfg: &ObserverConfig,
) -> Result<ObserverState> {
    let expected = state.t + cfg.dt;
    if (frame.t - expected).abs() > 1e-9 {
        return Err(Error::TimeMismatch {
            expected,
            got: frame.t,
        });
    }
    let start = state
        .history
        .latest()
        .map(NodeInput::from)
        .ok_or_else(|| Error::Degenerate("observer state has no input history".into()))?;
    let inputs = [start, midpoint_input(&state.history, frame), NodeInput::from(frame)];
    let h = frame.t - state.t;

    let (x_hat, p) = match cfg.variant {
        Variant::Full => {
            let nodes = inputs
                .iter()
                .map(|i| full_node(i, cfg.v.at(i.t), cfg.q.at(i.t)))
                .collect::<Result<Vec<_>>>()?;
            let nodes: [Node; 3] = nodes.try_into().ok().expect("three nodes");
            let (x, p) = rk4(Some(&state.x_hat), &state.p, &nodes, h);
            (x.expect("estimate advanced"), p)
        }
        Variant::Reduced => {
            let nodes = inputs
                .iter()
                .map(|i| translational_node(i, cfg.v.at(i.t), cfg.q.at(i.t)))
                .collect::<Result<Vec<_>>>()?;
            let nodes: [Node; 3] = nodes.try_into().ok().expect("three nodes");
            let (x, p) = rk4(Some(&state.x_hat), &state.p, &nodes, h);
            (x.expect("estimate advanced"), p)
        }
        Variant::Decoupled => {
            let mut tr_nodes = Vec::with_capacity(3);
            let mut vec_nodes = Vec::with_capacity(3);
            for i in &inputs {
                let v = cfg.v.at(i.t);
                let q = cfg.q.at(i.t);
                tr_nodes.push(translational_node(
                    i,
                    v.view((0, 0), (9, 9)).into_owned(),
                    q.view((0, 0), (3, 3)).into_owned(),
                )?);
                vec_nodes.push(vector_node(
                    i,
                    v.view((9, 9), (3, 3)).into_owned(),
                    q.view((3, 3), (3, 3)).into_owned(),
                ));
            }
            let tr_nodes: [Node; 3] = tr_nodes.try_into().ok().expect("three nodes");
            let vec_nodes: [Node; 3] = vec_nodes.try_into().ok().expect("three nodes");

            let x1 = state.x_hat.rows(0, 9).into_owned();
            let p1 = state.p.view((0, 0), (9, 9)).into_owned();
            let x2 = state.x_hat.rows(9, 3).into_owned();
            let p2 = state.p.view((9, 9), (3, 3)).into_owned();
            let (x1, p1) = rk4(Some(&x1), &p1, &tr_nodes, h);
            let (x2, p2) = rk4(Some(&x2), &p2, &vec_nodes, h);

            let mut x = DVector::zeros(12);
            x.rows_mut(0, 9).copy_from(&x1.expect("estimate advanced"));
            x.rows_mut(9, 3).copy_from(&x2.expect("estimate advanced"));
            let mut p = DMatrix::zeros(12, 12);
            p.view_mut((0, 0), (9, 9)).copy_from(&p1);
            p.view_mut((9, 9), (3, 3)).copy_from(&p2);
            (x, p)
        }
    };
    check_positive_definite(&p, frame.t)?;

    let mut history = state.history.clone();
    history.push(*frame);
    Ok(ObserverState {
        t: frame.t,
        x_hat,
        p,
        history,
    })
}

/// Attitude from estimated body-frame gravity and reference direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttitudeEstimate {
    /// Algebraic reconstruction, not necessarily orthogonal.
    pub raw: Mat3,
    /// Nearest rotation to `raw`.
    pub rotation: Rotation,
}

/// `R̂ = R̄ Mᵀ` where the columns of `M` (body) and `R̄` (inertial) are the
/// triads built from gravity, `g x m` and `g x (g x m)`.
pub fn reconstruct_attitude(g_hat_b: &Vec3, m_hat_b: &Vec3, env: &Environment) -> Result<AttitudeEstimate> {
    let gm_b = g_hat_b.cross(m_hat_b);
    let cross_norm = gm_b.norm();
    if !(cross_norm > 1e-6) {
        return Err(Error::ReconstructionDegenerate { cross_norm });
    }
    let g = env.g_i;
    let gm = g.cross(&env.m_i);
    let ggm = g.cross(&gm);
    let (ng, ngm, nggm) = (g.norm(), gm.norm(), ggm.norm());
    if !(ngm > 0.0) {
        return Err(Error::invalid("environment", "gravity and m_i are collinear"));
    }
    let r_bar = Mat3::from_columns(&[g / ng, gm / ngm, ggm / nggm]);
    let body = Mat3::from_columns(&[g_hat_b / ng, gm_b / ngm, g_hat_b.cross(&gm_b) / nggm]);
    let raw = r_bar * body.transpose();
    let rotation = project_to_rotation(&raw)?;
    Ok(AttitudeEstimate { raw, rotation })
}

/// Pitch and roll `(θ, φ)` in the ZYX convention from body-frame gravity.
pub fn roll_pitch_from_gravity(g_hat_b: &Vec3) -> Result<(f64, f64)> {
    if !(g_hat_b.norm() > 1e-6) {
        return Err(Error::Degenerate(format!(
            "gravity estimate too small ({:e})",
            g_hat_b.norm()
        )));
    }
    let theta = (-g_hat_b.x).atan2(g_hat_b.y.hypot(g_hat_b.z));
    let phi = g_hat_b.y.atan2(g_hat_b.z);
    Ok((theta, phi))
}

/// Inertial position (relative to the inertial origin) and velocity from the
/// body-frame estimates and an attitude.
pub fn recover_inertial(state: &ObserverState, r_hat: &Rotation, env: &Environment) -> (Vec3, Vec3) {
    (r_hat * state.p_b() + env.landmark, r_hat * state.v_b())
}

/// Owns a configuration and the evolving state.
#[derive(Clone, Debug)]
pub struct RiccatiObserver {
    cfg: ObserverConfig,
    state: ObserverState,
}

impl RiccatiObserver {
    pub fn new(cfg: ObserverConfig, x0: DVector<f64>, first: &SensorFrame) -> Result<Self> {
        let state = ObserverState::new(&cfg, x0, first)?;
        Ok(RiccatiObserver { cfg, state })
    }

    pub fn step(&mut self, frame: &SensorFrame) -> Result<&ObserverState> {
        self.state = observer_step(&self.state, frame, &self.cfg)?;
        Ok(&self.state)
    }

    pub fn state(&self) -> &ObserverState {
        &self.state
    }

    pub fn config(&self) -> &ObserverConfig {
        &self.cfg
    }

    /// Overwrites the estimate, keeping `P` and the input history.
    pub fn set_estimate(&mut self, x_hat: DVector<f64>) {
        assert_eq!(x_hat.len(), self.state.x_hat.len());
        self.state.x_hat = x_hat;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{run_truth, BodyFrameState, NoiseSpec, TrajectorySpec};
    use crate::so3::{exp_so3, rotation_angle_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrices_at_rest() {
        let m = build_matrices(&Vec3::zeros(), &Vec3::x(), Variant::Full).unwrap();
        assert_eq!((m.a.nrows(), m.a.ncols()), (12, 12));
        assert_eq!((m.b.nrows(), m.b.ncols()), (12, 3));
        assert_eq!((m.c.nrows(), m.c.ncols()), (6, 12));
        for i in 0..4 {
            assert_eq!(m.a.view((3 * i, 3 * i), (3, 3)).abs().max(), 0.0);
        }
        let c00 = m.c.view((0, 0), (3, 3)).into_owned();
        assert_eq!(c00, DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0])));
        assert_eq!(m.c.view((3, 9), (3, 3)).into_owned(), DMatrix::identity(3, 3));
        assert_eq!(m.b.view((3, 0), (3, 3)).into_owned(), DMatrix::identity(3, 3));

        let r = build_matrices(&Vec3::zeros(), &Vec3::x(), Variant::Reduced).unwrap();
        assert_eq!((r.a.nrows(), r.b.nrows(), r.c.nrows(), r.c.ncols()), (9, 9, 3, 9));
    }

    #[test]
    fn a_plus_a_transpose_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for variant in [Variant::Full, Variant::Reduced] {
            let w = Vec3::new(rng.random(), rng.random(), rng.random());
            let eta = Vec3::new(rng.random(), rng.random(), 0.5).normalize();
            let m = build_matrices(&w, &eta, variant).unwrap();
            let sym = &m.a + m.a.transpose();
            let n = variant.state_dim();
            let mut expected = DMatrix::zeros(n, n);
            for (r, c) in [(0, 3), (3, 0), (3, 6), (6, 3)] {
                expected.view_mut((r, c), (3, 3)).fill_with_identity();
            }
            assert!((sym - expected).abs().max() < 1e-15);
        }
    }

    #[test]
    fn matrices_reject_bad_bearing() {
        assert!(matches!(
            build_matrices(&Vec3::zeros(), &Vec3::zeros(), Variant::Full),
            Err(Error::Degenerate(_))
        ));
        assert!(build_matrices(&Vec3::zeros(), &Vec3::new(2.0, 0.0, 0.0), Variant::Full).is_err());
        let nearly = Vec3::new(1.0 + 1e-8, 0.0, 0.0);
        let m = build_matrices(&Vec3::zeros(), &nearly, Variant::Full).unwrap();
        assert!(m.c[(0, 0)].abs() < 1e-15);
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_riccati_converges_to_analytic_steady_state() {
        let mats = LtvMatrices {
            a: scalar(0.0),
            b: scalar(0.0),
            c: scalar(1.0),
        };
        let mut p = scalar(1.0);
        for _ in 0..10_000 {
            p = riccati_step(&p, &mats, &scalar(36.0), &scalar(1.0), 1e-3).unwrap();
        }
        assert!((p[(0, 0)] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn riccati_constant_without_forcing() {
        let mats = LtvMatrices {
            a: DMatrix::zeros(3, 3),
            b: DMatrix::zeros(3, 1),
            c: DMatrix::zeros(2, 3),
        };
        let p0 = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let p = riccati_step(&p0, &mats, &DMatrix::zeros(3, 3), &DMatrix::identity(2, 2), 0.01).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn riccati_reports_loss_of_definiteness() {
        let mats = LtvMatrices {
            a: scalar(0.0),
            b: scalar(0.0),
            c: scalar(0.0),
        };
        let err = riccati_step(&scalar(1.0), &mats, &scalar(-1e4), &scalar(1.0), 1.0).unwrap_err();
        match err {
            Error::NumericalFailure { min_eigenvalue, .. } => assert!(min_eigenvalue < 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn roll_pitch_examples() {
        assert_eq!(roll_pitch_from_gravity(&Vec3::new(0.0, 0.0, 9.81)).unwrap(), (0.0, 0.0));
        let (_, phi) = roll_pitch_from_gravity(&Vec3::new(0.0, 9.81, 0.0)).unwrap();
        assert!((phi - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        for &theta0 in &[-1.5, -0.7, 0.0, 0.3, 1.2, 1.55] {
            let r = exp_so3(&Vec3::new(0.0, theta0, 0.0), 1.0);
            let g_b = r.matrix().transpose() * Vec3::new(0.0, 0.0, 9.81);
            let (theta, phi) = roll_pitch_from_gravity(&g_b).unwrap();
            assert!((theta - theta0).abs() < 1e-12);
            assert!(phi.abs() < 1e-12);
        }
        assert!(roll_pitch_from_gravity(&Vec3::new(0.0, 0.0, 1e-9)).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let env = Environment::default();
        let est = reconstruct_attitude(&env.g_i, &env.m_i, &env).unwrap();
        assert!((est.rotation.matrix() - Mat3::identity()).abs().max() < 1e-15);
        assert!(matches!(
            reconstruct_attitude(&env.g_i, &(env.g_i * 2.0), &env),
            Err(Error::ReconstructionDegenerate { .. })
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r = Rotation::from_rotation_vector(&Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ));
            let g_b = r.inverse_transform(&env.g_i);
            let m_b = r.inverse_transform(&env.m_i);
            let est = reconstruct_attitude(&g_b, &m_b, &env).unwrap();
            assert!((est.raw - r.matrix()).abs().max() < 1e-10);
            assert!(rotation_angle_error(&est.rotation, &r) < 1e-9);
        }
    }

    #[test]
    fn inertial_recovery() {
        let env = Environment {
            landmark: Vec3::new(2.0, -1.0, 0.5),
            ..Default::default()
        };
        let r = Rotation::from_rotation_vector(&Vec3::new(0.1, 0.2, -0.3));
        let p_i = Vec3::new(1.0, 2.0, 3.0);
        let v_i = Vec3::new(-0.5, 0.0, 0.25);
        let x = DVector::from_iterator(
            9,
            r.inverse_transform(&(p_i - env.landmark))
                .iter()
                .chain(r.inverse_transform(&v_i).iter())
                .chain(r.inverse_transform(&env.g_i).iter())
                .copied(),
        );
        let state = ObserverState {
            t: 0.0,
            x_hat: x,
            p: DMatrix::identity(9, 9),
            history: InputHistory::default(),
        };
        let (p, v) = recover_inertial(&state, &r, &env);
        assert!((p - p_i).norm() < 1e-14);
        assert!((v - v_i).norm() < 1e-14);
        assert!(((p - env.landmark).norm() - state.p_b().norm()).abs() < 1e-14);
    }

    #[test]
    fn config_validation() {
        let env = Environment::default();
        let mut cfg = ObserverConfig::scaled_identity(Variant::Decoupled, 1.0, 36.0, 1.0, 1e-3, &env);
        assert!(cfg.validate().is_ok());
        let mut p0 = DMatrix::identity(12, 12);
        p0[(0, 10)] = 0.1;
        p0[(10, 0)] = 0.1;
        cfg.p0 = p0.clone();
        assert!(cfg.validate().is_err());
        cfg.variant = Variant::Full;
        assert!(cfg.validate().is_ok());
        cfg.p0 = DMatrix::identity(9, 9);
        assert!(matches!(cfg.validate(), Err(Error::Dimension { .. })));
        cfg.p0 = -DMatrix::identity(12, 12);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_out_of_sequence_frame() {
        let env = Environment::default();
        let cfg = ObserverConfig::scaled_identity(Variant::Reduced, 1.0, 36.0, 1.0, 1e-2, &env);
        let frames = run_truth(&TrajectorySpec::figure_eight(), &env, &NoiseSpec::noiseless(), 0.1, 1e-2).unwrap();
        let state = ObserverState::new(&cfg, DVector::zeros(9), &frames[0].frame).unwrap();
        assert!(matches!(
            observer_step(&state, &frames[2].frame, &cfg),
            Err(Error::TimeMismatch { .. })
        ));
        assert!(observer_step(&state, &frames[1].frame, &cfg).is_ok());
    }

    #[test]
    fn exact_initialization_stays_on_truth() {
        let env = Environment::default();
        let frames = run_truth(&TrajectorySpec::figure_eight(), &env, &NoiseSpec::noiseless(), 5.0, 1e-3).unwrap();
        for variant in [Variant::Full, Variant::Decoupled, Variant::Reduced] {
            let n = variant.state_dim();
            let cfg = ObserverConfig::scaled_identity(variant, 1.0, 36.0, 1.0, 1e-3, &env);
            let x0 = BodyFrameState::from_truth(&frames[0].truth.state, &env).to_vector(n);
            let mut obs = RiccatiObserver::new(cfg, x0, &frames[0].frame).unwrap();
            let mut worst: f64 = 0.0;
            for f in &frames[1..] {
                let s = obs.step(&f.frame).unwrap();
                let x = BodyFrameState::from_truth(&f.truth.state, &env).to_vector(n);
                worst = worst.max((&s.x_hat - x).norm());
            }
            assert!(worst < 1e-6, "{variant}: {worst:e}");
        }
    }

    #[test]
    fn time_varying_weights_are_sampled() {
        let env = Environment::default();
        let mut cfg = ObserverConfig::scaled_identity(Variant::Reduced, 1.0, 36.0, 1.0, 1e-2, &env);
        cfg.v = Weight::TimeVarying(Arc::new(|t| DMatrix::identity(9, 9) * (36.0 + t)));
        let frames = run_truth(&TrajectorySpec::figure_eight(), &env, &NoiseSpec::noiseless(), 0.5, 1e-2).unwrap();
        let mut obs = RiccatiObserver::new(cfg.clone(), DVector::zeros(9), &frames[0].frame).unwrap();
        let mut constant = RiccatiObserver::new(
            ObserverConfig::scaled_identity(Variant::Reduced, 1.0, 36.0, 1.0, 1e-2, &env),
            DVector::zeros(9),
            &frames[0].frame,
        )
        .unwrap();
        for f in &frames[1..] {
            obs.step(&f.frame).unwrap();
            constant.step(&f.frame).unwrap();
        }
        assert!(obs.state().p.trace() > constant.state().p.trace());
    }
}
