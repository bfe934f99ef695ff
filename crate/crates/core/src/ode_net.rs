//! Diffusively coupled compartment networks with adaptive link weights.
//!
//! Node `i` evolves as
//!
//! ```text
//! ẋᵢ = f(xᵢ) + Σ_q B_q Σ_j k⁽q⁾ᵢⱼ (y⁽q⁾ⱼ − y⁽q⁾ᵢ),   y⁽q⁾ᵢ = C_q xᵢ
//! k̇⁽q⁾ᵢⱼ = γ⁽q⁾ᵢⱼ |y⁽q⁾ᵢ − y⁽q⁾ⱼ|²
//! ```
//!
//! Weights are stored once per undirected link and integrated together with
//! the node states as one augmented ODE.

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dynamics::VectorField;
use crate::graph::Graph;
use crate::integrator::{Rk4, TimeGrid};

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64, partial: Box<Trajectory> },
    #[error("state diverged at t = {t}: |x|∞ = {max_abs:e} exceeds bound")]
    Diverged {
        t: f64,
        max_abs: f64,
        partial: Box<Trajectory>,
    },
}

impl SimError {
    /// Log recorded up to the failure, if any.
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            SimError::NonFiniteState { partial, .. } | SimError::Diverged { partial, .. } => Some(partial),
            SimError::InvalidScenario(_) => None,
        }
    }
}

/// One input/output channel with its own graph and per-link adaptation data.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    /// `n × p`.
    pub b: DMatrix<f64>,
    /// `p × n`.
    pub c: DMatrix<f64>,
    pub graph: Graph,
    /// `γ` per link, in graph link order.
    pub gains: Vec<f64>,
    /// `k(0)` per link.
    pub initial_weights: Vec<f64>,
    /// Lyapunov multiplier `ω`; 1 for single-channel systems.
    pub omega: f64,
}

impl Channel {
    /// Channel with uniform gain and initial weight on every link.
    pub fn uniform(b: DMatrix<f64>, c: DMatrix<f64>, graph: Graph, gain: f64, initial_weight: f64) -> Self {
        let m = graph.n_links();
        Self {
            b,
            c,
            graph,
            gains: vec![gain; m],
            initial_weights: vec![initial_weight; m],
            omega: 1.0,
        }
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub field: Arc<dyn VectorField>,
    pub channels: Vec<Channel>,
    pub n_nodes: usize,
    /// Initial states, node-major: `x0[i * n + d]`.
    pub x0: Vec<f64>,
    pub time: TimeGrid,
    pub adaptation_enabled: bool,
    pub divergence_bound: f64,
}

/// Snapshot of the augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: f64,
    /// Node-major `N × n`.
    pub x: Vec<f64>,
    /// `k[q][link]`.
    pub k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub xdot: Vec<f64>,
    pub kdot: Vec<Vec<f64>>,
}

/// Logged samples of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub n_nodes: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    /// Node-major state per record.
    pub states: Vec<Vec<f64>>,
    /// `weights[record][q][link]`.
    pub weights: Vec<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_weights(&self) -> &[Vec<f64>] {
        self.weights.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Node `i` state at record `r`.
    pub fn node(&self, r: usize, i: usize) -> &[f64] {
        &self.states[r][i * self.dim..(i + 1) * self.dim]
    }
}

struct Scratch {
    fx: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    bu: Vec<f64>,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    fn n_weights(&self) -> usize {
        self.channels.iter().map(|c| c.graph.n_links()).sum()
    }

    fn state_len(&self) -> usize {
        self.n_nodes * self.dim() + self.n_weights()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        let n = self.dim();
        if self.n_nodes == 0 {
            return bad("network has no nodes".into());
        }
        if !(self.time.dt > 0.0 && self.time.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.time.dt));
        }
        if !(self.time.t_end >= 0.0 && self.time.t_end.is_finite()) {
            return bad(format!("t_end must be nonnegative, got {}", self.time.t_end));
        }
        if self.time.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        if self.x0.len() != self.n_nodes * n {
            return bad(format!(
                "x0 has {} entries, expected {}x{}",
                self.x0.len(),
                self.n_nodes,
                n
            ));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return bad("x0 contains non-finite values".into());
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence bound must be positive".into());
        }
        for (q, ch) in self.channels.iter().enumerate() {
            let q = q + 1;
            if ch.b.nrows() != n || ch.c.ncols() != n || ch.b.ncols() != ch.c.nrows() {
                return bad(format!(
                    "channel {q}: B is {}x{}, C is {}x{}, state dimension {n}",
                    ch.b.nrows(),
                    ch.b.ncols(),
                    ch.c.nrows(),
                    ch.c.ncols()
                ));
            }
            if ch.graph.n_nodes() != self.n_nodes {
                return bad(format!(
                    "channel {q}: graph has {} nodes, network has {}",
                    ch.graph.n_nodes(),
                    self.n_nodes
                ));
            }
            let m = ch.graph.n_links();
            if ch.gains.len() != m || ch.initial_weights.len() != m {
                return bad(format!("channel {q}: expected {m} gains and initial weights"));
            }
            if ch.gains.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
                return bad(format!("channel {q}: gains must be finite and nonnegative"));
            }
            if ch.initial_weights.iter().any(|w| !w.is_finite()) {
                return bad(format!("channel {q}: non-finite initial weight"));
            }
            if ch.initial_weights.iter().any(|&w| w < 0.0) {
                log::warn!("channel {q}: negative initial link weights");
            }
        }
        Ok(())
    }

    fn scratch(&self) -> Scratch {
        let p_max = self.channels.iter().map(Channel::outputs).max().unwrap_or(0);
        Scratch {
            fx: vec![0.0; self.dim()],
            y: vec![0.0; self.n_nodes * p_max],
            u: vec![0.0; self.n_nodes * p_max],
            bu: vec![0.0; self.dim()],
        }
    }

    fn pack(&self, state: &NetworkState) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.state_len());
        z.extend_from_slice(&state.x);
        for k in &state.k {
            z.extend_from_slice(k);
        }
        z
    }

    fn unpack(&self, t: f64, z: &[f64]) -> NetworkState {
        let nx = self.n_nodes * self.dim();
        NetworkState {
            t,
            x: z[..nx].to_vec(),
            k: self.split_weights(&z[nx..]),
        }
    }

    fn split_weights(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.channels.len());
        let mut off = 0;
        for ch in &self.channels {
            let m = ch.graph.n_links();
            out.push(flat[off..off + m].to_vec());
            off += m;
        }
        out
    }

    pub fn initial_state(&self) -> NetworkState {
        NetworkState {
            t: 0.0,
            x: self.x0.clone(),
            k: self.channels.iter().map(|c| c.initial_weights.clone()).collect(),
        }
    }

    /// Augmented right-hand side on the packed state `z = [x; k₁; …; k_m]`.
    fn rhs_into(&self, z: &[f64], dz: &mut [f64], s: &mut Scratch) {
        let n = self.dim();
        let nn = self.n_nodes;
        let nx = nn * n;
        for i in 0..nn {
            self.field.eval(&z[i * n..(i + 1) * n], &mut s.fx);
            dz[i * n..(i + 1) * n].copy_from_slice(&s.fx);
        }
        let mut koff = nx;
        for ch in &self.channels {
            let p = ch.outputs();
            let m = ch.graph.n_links();
            for i in 0..nn {
                let xi = &z[i * n..(i + 1) * n];
                for r in 0..p {
                    let mut acc = 0.0;
                    for (d, &xd) in xi.iter().enumerate() {
                        acc += ch.c[(r, d)] * xd;
                    }
                    s.y[i * p + r] = acc;
                }
            }
            s.u[..nn * p].fill(0.0);
            for (l, &(i, j)) in ch.graph.links().iter().enumerate() {
                let w = z[koff + l];
                let mut sq = 0.0;
                for r in 0..p {
                    let d = s.y[j * p + r] - s.y[i * p + r];
                    s.u[i * p + r] += w * d;
                    s.u[j * p + r] -= w * d;
                    sq += d * d;
                }
                dz[koff + l] = if self.adaptation_enabled { ch.gains[l] * sq } else { 0.0 };
            }
            for i in 0..nn {
                for (d, bu) in s.bu.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for r in 0..p {
                        acc += ch.b[(d, r)] * s.u[i * p + r];
                    }
                    *bu = acc;
                }
                for (d, bu) in s.bu.iter().enumerate() {
                    dz[i * n + d] += bu;
                }
            }
            koff += m;
        }
    }
}

/// Time derivatives of node states and link weights at `state`.
pub fn rhs(s: &Scenario, state: &NetworkState) -> Result<Derivative, SimError> {
    let n = s.dim();
    if state.x.len() != s.n_nodes * n
        || state.k.len() != s.channels.len()
        || state
            .k
            .iter()
            .zip(&s.channels)
            .any(|(k, ch)| k.len() != ch.graph.n_links())
    {
        return Err(SimError::InvalidScenario(
            "state dimensions do not match scenario".into(),
        ));
    }
    if state.x.iter().chain(state.k.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteState {
            t: state.t,
            partial: Box::default(),
        });
    }
    let z = s.pack(state);
    let mut dz = vec![0.0; z.len()];
    let mut scratch = s.scratch();
    s.rhs_into(&z, &mut dz, &mut scratch);
    let nx = s.n_nodes * n;
    Ok(Derivative {
        xdot: dz[..nx].to_vec(),
        kdot: s.split_weights(&dz[nx..]),
    })
}

/// Fixed-step RK4 over `[0, t_end]`, logging every `record_every` steps.
pub fn integrate(s: &Scenario) -> Result<Trajectory, SimError> {
    s.validate()?;
    let nx = s.n_nodes * s.dim();
    let mut z = s.pack(&s.initial_state());
    let mut rk = Rk4::new(z.len());
    let mut scratch = s.scratch();
    let mut traj = Trajectory {
        n_nodes: s.n_nodes,
        dim: s.dim(),
        ..Default::default()
    };
    let record = |traj: &mut Trajectory, t: f64, z: &[f64]| {
        traj.times.push(t);
        traj.states.push(z[..nx].to_vec());
        traj.weights.push(s.split_weights(&z[nx..]));
    };
    record(&mut traj, 0.0, &z);
    let dt = s.time.dt;
    let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), ()> {
        s.rhs_into(y, dy, &mut scratch);
        Ok(())
    };
    for step in 1..=s.time.n_steps() {
        let t0 = s.time.time_at(step - 1);
        rk.step(&mut f, t0, &mut z, dt).expect("network rhs is infallible");
        let t = s.time.time_at(step);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState {
                t,
                partial: Box::new(traj),
            });
        }
        let max_abs = z[..nx].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_abs > s.divergence_bound {
            record(&mut traj, t, &z);
            return Err(SimError::Diverged {
                t,
                max_abs,
                partial: Box::new(traj),
            });
        }
        if s.time.records(step) {
            record(&mut traj, t, &z);
        }
    }
    Ok(traj)
}

/// Final state of [`integrate`] as a [`NetworkState`].
pub fn final_state(s: &Scenario, traj: &Trajectory) -> NetworkState {
    let mut z = traj.final_state().to_vec();
    for k in traj.final_weights() {
        z.extend_from_slice(k);
    }
    s.unpack(traj.times.last().copied().unwrap_or(0.0), &z)
}

/// Squared output difference `|y_i − y_j|²` on link `link` of channel `q`.
pub fn link_disagreement(ch: &Channel, x: &[f64], dim: usize, link: usize) -> f64 {
    let (i, j) = ch.graph.links()[link];
    let xi = &x[i * dim..(i + 1) * dim];
    let xj = &x[j * dim..(j + 1) * dim];
    (0..ch.outputs())
        .map(|r| {
            let d: f64 = (0..dim).map(|c| ch.c[(r, c)] * (xi[c] - xj[c])).sum();
            d * d
        })
        .sum()
}

/// Relative mismatch between the integrated weight growth `k(T) − k(0)` and
/// `γ ∫ |y_i − y_j|² dt` evaluated by the trapezoidal rule on the log.
pub fn weight_integral_residual(s: &Scenario, traj: &Trajectory, q: usize, link: usize) -> f64 {
    let ch = &s.channels[q];
    let dim = traj.dim;
    let growth = traj.weights.last().unwrap()[q][link] - traj.weights[0][q][link];
    let mut integral = 0.0;
    for r in 1..traj.len() {
        let h = traj.times[r] - traj.times[r - 1];
        let a = link_disagreement(ch, &traj.states[r - 1], dim, link);
        let b = link_disagreement(ch, &traj.states[r], dim, link);
        integral += 0.5 * h * (a + b);
    }
    let predicted = if s.adaptation_enabled {
        ch.gains[link] * integral
    } else {
        0.0
    };
    let scale = growth.abs().max(predicted.abs());
    if scale == 0.0 {
        0.0
    } else {
        (growth - predicted).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{polynomial, Bistable, PolynomialField};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn two_node(field: Arc<dyn VectorField>, x0: Vec<f64>, k0: f64, gain: f64) -> Scenario {
        Scenario {
            field,
            channels: vec![Channel::uniform(
                scalar(1.0),
                scalar(1.0),
                Graph::path(2).unwrap(),
                gain,
                k0,
            )],
            n_nodes: 2,
            x0,
            time: TimeGrid {
                t_end: 1.0,
                dt: 1e-3,
                record_every: 10,
            },
            adaptation_enabled: true,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }

    #[test]
    fn hand_evaluated_rhs() {
        let s = two_node(Arc::new(Bistable), vec![2.0, -1.0], 1.0, 0.5);
        let d = rhs(&s, &s.initial_state()).unwrap();
        assert_eq!(d.xdot, vec![-9.0, 3.0]);
        assert_eq!(d.kdot, vec![vec![0.5 * 9.0]]);
    }

    #[test]
    fn identical_states_have_no_coupling() {
        let mut s = two_node(Arc::new(Bistable), vec![0.3, 0.3], 2.0, 1.0);
        s.channels[0].graph = Graph::path(2).unwrap();
        let d = rhs(&s, &s.initial_state()).unwrap();
        let f = 0.3 - 0.027;
        assert_eq!(d.xdot, vec![f, f]);
        assert_eq!(d.kdot, vec![vec![0.0]]);
    }

    #[test]
    fn zero_gain_or_disabled_freezes_weights() {
        let s = two_node(Arc::new(Bistable), vec![1.5, -0.5], 1.0, 0.0);
        assert_eq!(rhs(&s, &s.initial_state()).unwrap().kdot, vec![vec![0.0]]);
        let mut s = two_node(Arc::new(Bistable), vec![1.5, -0.5], 1.0, 1.0);
        s.adaptation_enabled = false;
        assert_eq!(rhs(&s, &s.initial_state()).unwrap().kdot, vec![vec![0.0]]);
    }

    #[test]
    fn frozen_state_kdot_is_gain_times_square() {
        let s = two_node(Arc::new(Bistable), vec![0.25, -0.5], 0.0, 3.0);
        let d = rhs(&s, &s.initial_state()).unwrap();
        assert!((d.kdot[0][0] - 3.0 * 0.75 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn rhs_rejects_non_finite_and_mismatched() {
        let s = two_node(Arc::new(Bistable), vec![1.0, 0.0], 0.0, 1.0);
        let mut st = s.initial_state();
        st.x[1] = f64::NAN;
        assert!(matches!(rhs(&s, &st), Err(SimError::NonFiniteState { .. })));
        st.x.pop();
        assert!(matches!(rhs(&s, &st), Err(SimError::InvalidScenario(_))));
    }

    #[test]
    fn coupling_sums_to_zero() {
        let zero: Arc<dyn VectorField> = Arc::new(polynomial(PolynomialField::zero(1)).unwrap());
        let s = Scenario {
            field: zero,
            channels: vec![Channel::uniform(scalar(1.0), scalar(1.0), Graph::barbell(), 1.0, 0.7)],
            n_nodes: 8,
            x0: vec![0.1, -1.2, 0.5, 2.0, -0.7, 0.0, 1.1, -1.9],
            time: TimeGrid {
                t_end: 1.0,
                dt: 1e-3,
                record_every: 1,
            },
            adaptation_enabled: true,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        };
        let d = rhs(&s, &s.initial_state()).unwrap();
        assert!(d.xdot.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn linear_consensus_closed_form() {
        // f ≡ 0, k = 1, γ = 0: x₁ − x₂ = e^{−2t}, x₁ + x₂ = 1
        let zero: Arc<dyn VectorField> = Arc::new(polynomial(PolynomialField::zero(1)).unwrap());
        let mut s = two_node(zero, vec![1.0, 0.0], 1.0, 0.0);
        s.time = TimeGrid {
            t_end: 3.0,
            dt: 1e-3,
            record_every: 100,
        };
        let traj = integrate(&s).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            assert!((x[0] + x[1] - 1.0).abs() < 1e-10);
            assert!((x[0] - x[1] - (-2.0 * t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn divergence_guard_trips() {
        // ẋ = x², x(0) = 1 blows up at t = 1
        let spec = PolynomialField {
            dim: 1,
            components: vec![vec![crate::dynamics::Monomial {
                coeff: 1.0,
                powers: vec![2],
            }]],
        };
        let field: Arc<dyn VectorField> = Arc::new(polynomial(spec).unwrap());
        let mut s = two_node(field, vec![1.0, 1.0], 0.0, 0.0);
        s.time = TimeGrid {
            t_end: 2.0,
            dt: 1e-3,
            record_every: 10,
        };
        match integrate(&s) {
            Err(SimError::Diverged { t, max_abs, partial }) => {
                assert!(t > 0.9 && t < 1.01, "t = {t}");
                assert!(max_abs > 1e6);
                assert!(!partial.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = two_node(Arc::new(Bistable), vec![1.0, 0.0], 0.0, 1.0);
        s.time.dt = 0.0;
        assert!(matches!(integrate(&s), Err(SimError::InvalidScenario(_))));
        let mut s = two_node(Arc::new(Bistable), vec![1.0], 0.0, 1.0);
        s.x0 = vec![1.0];
        assert!(matches!(s.validate(), Err(SimError::InvalidScenario(_))));
        let mut s = two_node(Arc::new(Bistable), vec![1.0, 0.0], 0.0, 1.0);
        s.channels[0].gains = vec![-1.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn weight_integral_with_zero_gain_is_zero() {
        let s = two_node(Arc::new(Bistable), vec![1.0, -1.0], 0.5, 0.0);
        let traj = integrate(&s).unwrap();
        assert_eq!(weight_integral_residual(&s, &traj, 0, 0), 0.0);
    }

    #[test]
    fn weights_never_decrease() {
        let s = two_node(Arc::new(Bistable), vec![1.7, -0.4], 0.0, 1.0);
        let traj = integrate(&s).unwrap();
        for w in traj.weights.windows(2) {
            assert!(w[1][0][0] >= w[0][0][0] - 1e-12);
        }
        assert!(weight_integral_residual(&s, &traj, 0, 0) < 1e-3);
    }
}
