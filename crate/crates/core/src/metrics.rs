//! Synchronization diagnostics on logged network trajectories.

use nalgebra::DMatrix;

use crate::dynamics::StateBox;
use crate::ode_net::{Channel, Trajectory};

/// Node average `x̄` and deviations `x̃ᵢ = xᵢ − x̄` (node-major).
pub fn deviations(x: &[f64], n_nodes: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xbar = vec![0.0; dim];
    for i in 0..n_nodes {
        for d in 0..dim {
            xbar[d] += x[i * dim + d];
        }
    }
    for v in &mut xbar {
        *v /= n_nodes as f64;
    }
    let xtilde = x.iter().enumerate().map(|(idx, &v)| v - xbar[idx % dim]).collect();
    (xbar, xtilde)
}

/// `Σᵢ |C_q x̃ᵢ|²` for each channel.
pub fn sync_error(x: &[f64], n_nodes: usize, dim: usize, channels: &[Channel]) -> Vec<f64> {
    let (_, xt) = deviations(x, n_nodes, dim);
    channels
        .iter()
        .map(|ch| output_energy(&xt, n_nodes, dim, &ch.c))
        .collect()
}

/// `Σᵢ |C vᵢ|²` for node-major `v`.
pub fn output_energy(v: &[f64], n_nodes: usize, dim: usize, c: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..n_nodes {
        let vi = &v[i * dim..(i + 1) * dim];
        for r in 0..c.nrows() {
            let y: f64 = vi.iter().enumerate().map(|(d, &val)| c[(r, d)] * val).sum();
            total += y * y;
        }
    }
    total
}

/// `V = Σᵢ x̃ᵢᵀ P x̃ᵢ + Σ_q ω_q Σ_{i,j} (k⁽q⁾ᵢⱼ − k*)² / (2γ⁽q⁾ᵢⱼ)`.
///
/// The double sum over ordered pairs visits every link twice, so each link
/// contributes `ω (k − k*)² / γ`. Links with `γ = 0` carry a constant term
/// and are left out.
pub fn lyapunov(x: &[f64], k: &[Vec<f64>], n_nodes: usize, p: &DMatrix<f64>, kstar: f64, channels: &[Channel]) -> f64 {
    let dim = p.nrows();
    let (_, xt) = deviations(x, n_nodes, dim);
    let mut v = 0.0;
    for i in 0..n_nodes {
        let xi = &xt[i * dim..(i + 1) * dim];
        for a in 0..dim {
            for b in 0..dim {
                v += xi[a] * p[(a, b)] * xi[b];
            }
        }
    }
    for (ch, kq) in channels.iter().zip(k) {
        for (&kl, &g) in kq.iter().zip(&ch.gains) {
            if g > 0.0 {
                let kt = kl - kstar;
                v += 2.0 * ch.omega * kt * kt / (2.0 * g);
            }
        }
    }
    v
}

/// Lyapunov inputs: `P` and the reference coupling `k*`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovMonitor {
    pub p: DMatrix<f64>,
    pub kstar: f64,
}

/// Default monitoring margin over the coupling bound.
pub const KSTAR_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SyncMetrics {
    pub t: f64,
    pub xbar: Vec<f64>,
    pub sync_err: Vec<f64>,
    pub sync_err_total: f64,
    /// `NaN` when no monitor is configured.
    pub lyapunov: f64,
    pub in_box: bool,
    pub max_state: f64,
}

/// Metrics for every logged record.
pub fn trajectory_metrics(
    traj: &Trajectory,
    channels: &[Channel],
    monitor: Option<&LyapunovMonitor>,
    state_box: Option<&StateBox>,
) -> Vec<SyncMetrics> {
    let (nn, dim) = (traj.n_nodes, traj.dim);
    (0..traj.len())
        .map(|r| {
            let x = &traj.states[r];
            let (xbar, _) = deviations(x, nn, dim);
            let sync_err = sync_error(x, nn, dim, channels);
            let lyap = monitor.map_or(f64::NAN, |m| lyapunov(x, &traj.weights[r], nn, &m.p, m.kstar, channels));
            SyncMetrics {
                t: traj.times[r],
                xbar,
                sync_err_total: sync_err.iter().sum(),
                sync_err,
                lyapunov: lyap,
                in_box: all_in_box(x, dim, state_box),
                max_state: x.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            }
        })
        .collect()
}

fn all_in_box(x: &[f64], dim: usize, state_box: Option<&StateBox>) -> bool {
    state_box.is_none_or(|bx| x.chunks(dim).all(|xi| bx.contains(xi)))
}

/// Largest one-step increase `V(t_{m+1}) − V(t_m)` over records `from..`.
pub fn max_lyapunov_increase(metrics: &[SyncMetrics], from: usize) -> f64 {
    metrics[from.min(metrics.len())..]
        .windows(2)
        .map(|w| w[1].lyapunov - w[0].lyapunov)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundednessReport {
    pub max_state: f64,
    /// `None` when no box was given.
    pub first_box_exit: Option<f64>,
    pub box_exited: bool,
    /// Records where `|x̄(t)|∞ > max{|x̄(0)|∞, 1 + maxᵢ sup_s |x̃ᵢ(s)|∞}`.
    /// The bound is the one satisfied by the average of the bistable network.
    pub bibs_violations: usize,
    pub bibs_bound: f64,
}

impl BoundednessReport {
    pub fn bibs_holds(&self) -> bool {
        self.bibs_violations == 0
    }
}

pub fn boundedness_guard(traj: &Trajectory, state_box: Option<&StateBox>) -> BoundednessReport {
    let (nn, dim) = (traj.n_nodes, traj.dim);
    let mut max_state = 0.0_f64;
    let mut first_box_exit = None;
    let mut sup_dev = 0.0_f64;
    let mut xbar_norms = Vec::with_capacity(traj.len());
    for (t, x) in traj.times.iter().zip(&traj.states) {
        max_state = x.iter().fold(max_state, |m, v| m.max(v.abs()));
        if first_box_exit.is_none() && !all_in_box(x, dim, state_box) {
            first_box_exit = Some(*t);
        }
        let (xbar, xt) = deviations(x, nn, dim);
        sup_dev = xt.iter().fold(sup_dev, |m, v| m.max(v.abs()));
        xbar_norms.push(xbar.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }
    let bibs_bound = xbar_norms.first().copied().unwrap_or(0.0).max(1.0 + sup_dev);
    let bibs_violations = xbar_norms.iter().filter(|&&v| v > bibs_bound).count();
    BoundednessReport {
        max_state,
        first_box_exit,
        box_exited: first_box_exit.is_some(),
        bibs_violations,
        bibs_bound,
    }
}
