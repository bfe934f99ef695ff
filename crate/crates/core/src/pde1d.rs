//! Method-of-lines reaction-diffusion on an interval with Neumann boundaries
//! and an adaptively grown diffusion coefficient.
//!
//! Cells `m = 0..n_cells` have centers `(m + ½) h`. The coefficient `k` and
//! the gain `γ` live on the `n_cells − 1` interior faces. With face gradients
//! `g = (y_{m+1} − y_m) / h` and zero flux through both boundary faces:
//!
//! ```text
//! ẋ_m  = f(x_m) + B · (k_{m+½} g_{m+½} − k_{m−½} g_{m−½}) / h
//! k̇_f  = γ_f |g_f|²
//! ```
//!
//! This is exactly a path-graph network with link weights `k / h²` and gains
//! `γ / h⁴`; [`PdeScenario::to_network`] builds that network.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dynamics::VectorField;
use crate::graph::{symmetric_eigenvalues, Graph};
use crate::integrator::{Rk4, TimeGrid};
use crate::metrics::deviations;
use crate::ode_net::{Channel, Scenario, SimError, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub length: f64,
    pub n_cells: usize,
}

impl PdeGrid {
    pub fn new(length: f64, n_cells: usize) -> Result<Self, SimError> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(SimError::InvalidScenario(format!(
                "domain length must be positive, got {length}"
            )));
        }
        if n_cells < 2 {
            return Err(SimError::InvalidScenario(format!(
                "need at least 2 cells, got {n_cells}"
            )));
        }
        Ok(Self { length, n_cells })
    }

    pub fn h(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    pub fn n_faces(&self) -> usize {
        self.n_cells - 1
    }

    pub fn center(&self, m: usize) -> f64 {
        (m as f64 + 0.5) * self.h()
    }

    /// Matrix of `x ↦ −d/dξ (k dx/dξ)` with zero-flux boundaries, for face
    /// coefficients `k`.
    pub fn diffusion_matrix(&self, k: &[f64]) -> DMatrix<f64> {
        let inv_h2 = 1.0 / (self.h() * self.h());
        let mut a = DMatrix::zeros(self.n_cells, self.n_cells);
        for (f, &kf) in k.iter().enumerate() {
            let w = kf * inv_h2;
            a[(f, f)] += w;
            a[(f + 1, f + 1)] += w;
            a[(f, f + 1)] -= w;
            a[(f + 1, f)] -= w;
        }
        a
    }
}

/// Second smallest eigenvalue of the unit-coefficient discrete Neumann
/// Laplacian; tends to `(π / L)²` under refinement.
pub fn discrete_poincare_lambda2(grid: &PdeGrid) -> f64 {
    let a = grid.diffusion_matrix(&vec![1.0; grid.n_faces()]);
    symmetric_eigenvalues(&a)[1]
}

#[derive(Debug, Clone)]
pub struct PdeScenario {
    pub field: Arc<dyn VectorField>,
    /// `n × p`; column `ℓ` is `B_ℓ`.
    pub b: DMatrix<f64>,
    /// `p × n`; row `ℓ` is `C_ℓ`.
    pub c: DMatrix<f64>,
    pub grid: PdeGrid,
    /// `γ` per interior face.
    pub gamma: Vec<f64>,
    /// `k(0)` per interior face.
    pub k0: Vec<f64>,
    /// Cell-major `n_cells × n`.
    pub x0: Vec<f64>,
    pub time: TimeGrid,
    pub adaptation_enabled: bool,
    pub divergence_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeState {
    pub t: f64,
    pub x: Vec<f64>,
    pub k: Vec<f64>,
}

impl PdeScenario {
    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        let n = self.dim();
        let nf = self.grid.n_faces();
        if self.b.nrows() != n || self.c.ncols() != n || self.b.ncols() != self.c.nrows() {
            return bad(format!(
                "B is {}x{}, C is {}x{}, state dimension {n}",
                self.b.nrows(),
                self.b.ncols(),
                self.c.nrows(),
                self.c.ncols()
            ));
        }
        if self.gamma.len() != nf || self.k0.len() != nf {
            return bad(format!("expected {nf} face values for gamma and k0"));
        }
        if self.gamma.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return bad("gamma must be positive on every face".into());
        }
        if self.k0.iter().any(|k| !k.is_finite()) {
            return bad("non-finite initial diffusion coefficient".into());
        }
        if self.x0.len() != self.grid.n_cells * n || self.x0.iter().any(|v| !v.is_finite()) {
            return bad(format!("x0 must hold {}x{} finite values", self.grid.n_cells, n));
        }
        if !(self.time.dt > 0.0 && self.time.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.time.dt));
        }
        if !(self.time.t_end >= 0.0 && self.time.t_end.is_finite()) || self.time.record_every == 0 {
            return bad("t_end must be nonnegative and record_every >= 1".into());
        }
        if self.k0.iter().any(|&k| k < 0.0) {
            log::warn!("negative initial diffusion coefficients");
        }
        Ok(())
    }

    pub fn initial_state(&self) -> PdeState {
        PdeState {
            t: 0.0,
            x: self.x0.clone(),
            k: self.k0.clone(),
        }
    }

    /// Equivalent path-graph network: weights `k / h²`, gains `γ / h⁴`.
    pub fn to_network(&self) -> Scenario {
        let h2 = self.grid.h() * self.grid.h();
        let graph = Graph::path(self.grid.n_cells).expect("grid has >= 2 cells");
        Scenario {
            field: Arc::clone(&self.field),
            channels: vec![Channel {
                b: self.b.clone(),
                c: self.c.clone(),
                graph,
                gains: self.gamma.iter().map(|g| g / (h2 * h2)).collect(),
                initial_weights: self.k0.iter().map(|k| k / h2).collect(),
                omega: 1.0,
            }],
            n_nodes: self.grid.n_cells,
            x0: self.x0.clone(),
            time: self.time,
            adaptation_enabled: self.adaptation_enabled,
            divergence_bound: self.divergence_bound,
        }
    }

    fn rhs_into(&self, z: &[f64], dz: &mut [f64], s: &mut PdeScratch) {
        let n = self.dim();
        let p = self.c.nrows();
        let nc = self.grid.n_cells;
        let nx = nc * n;
        let h = self.grid.h();
        for m in 0..nc {
            let xm = &z[m * n..(m + 1) * n];
            self.field.eval(xm, &mut s.fx);
            dz[m * n..(m + 1) * n].copy_from_slice(&s.fx);
            for l in 0..p {
                s.y[m * p + l] = (0..n).map(|d| self.c[(l, d)] * xm[d]).sum();
            }
        }
        s.div.fill(0.0);
        for f in 0..self.grid.n_faces() {
            let kf = z[nx + f];
            let mut sq = 0.0;
            for l in 0..p {
                let g = (s.y[(f + 1) * p + l] - s.y[f * p + l]) / h;
                let flux = kf * g / h;
                s.div[f * p + l] += flux;
                s.div[(f + 1) * p + l] -= flux;
                sq += g * g;
            }
            dz[nx + f] = if self.adaptation_enabled {
                self.gamma[f] * sq
            } else {
                0.0
            };
        }
        for m in 0..nc {
            for d in 0..n {
                let acc: f64 = (0..p).map(|l| self.b[(d, l)] * s.div[m * p + l]).sum();
                dz[m * n + d] += acc;
            }
        }
    }

    fn scratch(&self) -> PdeScratch {
        let p = self.c.nrows();
        let nc = self.grid.n_cells;
        PdeScratch {
            fx: vec![0.0; self.dim()],
            y: vec![0.0; nc * p],
            div: vec![0.0; nc * p],
        }
    }
}

struct PdeScratch {
    fx: Vec<f64>,
    y: Vec<f64>,
    div: Vec<f64>,
}

/// Per-cell `ẋ` (cell-major) and per-face `k̇`.
pub fn discrete_rhs(s: &PdeScenario, state: &PdeState) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let nx = s.grid.n_cells * s.dim();
    if state.x.len() != nx || state.k.len() != s.grid.n_faces() {
        return Err(SimError::InvalidScenario(
            "state dimensions do not match scenario".into(),
        ));
    }
    if state.x.iter().chain(&state.k).any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteState {
            t: state.t,
            partial: Box::default(),
        });
    }
    let mut z = state.x.clone();
    z.extend_from_slice(&state.k);
    let mut dz = vec![0.0; z.len()];
    s.rhs_into(&z, &mut dz, &mut s.scratch());
    let kdot = dz.split_off(nx);
    Ok((dz, kdot))
}

/// RK4 over the augmented `(x, k)` system. The log reuses [`Trajectory`]:
/// cells are nodes and `weights[r][0]` holds the face coefficients.
pub fn integrate_pde(s: &PdeScenario) -> Result<Trajectory, SimError> {
    s.validate()?;
    let nx = s.grid.n_cells * s.dim();
    let mut z = s.x0.clone();
    z.extend_from_slice(&s.k0);
    let mut rk = Rk4::new(z.len());
    let mut scratch = s.scratch();
    let mut traj = Trajectory {
        n_nodes: s.grid.n_cells,
        dim: s.dim(),
        ..Default::default()
    };
    let record = |traj: &mut Trajectory, t: f64, z: &[f64]| {
        traj.times.push(t);
        traj.states.push(z[..nx].to_vec());
        traj.weights.push(vec![z[nx..].to_vec()]);
    };
    record(&mut traj, 0.0, &z);
    let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), ()> {
        s.rhs_into(y, dy, &mut scratch);
        Ok(())
    };
    for step in 1..=s.time.n_steps() {
        rk.step(&mut f, s.time.time_at(step - 1), &mut z, s.time.dt)
            .expect("pde rhs is infallible");
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

/// `∫ |ỹ|² dξ ≈ h Σ_m |C x̃_m|²`.
pub fn spatial_sync_error(x: &[f64], grid: &PdeGrid, c: &DMatrix<f64>) -> f64 {
    let dim = c.ncols();
    let (_, xt) = deviations(x, grid.n_cells, dim);
    grid.h() * crate::metrics::output_energy(&xt, grid.n_cells, dim, c)
}

/// `h Σ_m x_m` per state component.
pub fn mass(x: &[f64], grid: &PdeGrid, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (idx, v) in x.iter().enumerate() {
        out[idx % dim] += v;
    }
    out.iter().map(|s| s * grid.h()).collect()
}

/// `∫ x̃ᵀ P x̃ dξ + ∫ (k − k*)² / γ dξ`, both by midpoint quadrature (cells
/// for the first term, faces for the second).
pub fn pde_lyapunov(x: &[f64], k: &[f64], grid: &PdeGrid, p: &DMatrix<f64>, kstar: f64, gamma: &[f64]) -> f64 {
    let dim = p.nrows();
    let h = grid.h();
    let (_, xt) = deviations(x, grid.n_cells, dim);
    let mut quad = 0.0;
    for xm in xt.chunks(dim) {
        for a in 0..dim {
            for b in 0..dim {
                quad += xm[a] * p[(a, b)] * xm[b];
            }
        }
    }
    let coeff: f64 = k.iter().zip(gamma).map(|(&kf, &g)| (kf - kstar).powi(2) / g).sum();
    h * (quad + coeff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{polynomial, Bistable, PolynomialField};
    use crate::ode_net;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scenario(field: Arc<dyn VectorField>, grid: PdeGrid, x0: Vec<f64>, k0: f64) -> PdeScenario {
        let nf = grid.n_faces();
        PdeScenario {
            field,
            b: scalar(1.0),
            c: scalar(1.0),
            grid,
            gamma: vec![1.0; nf],
            k0: vec![k0; nf],
            x0,
            time: TimeGrid {
                t_end: 0.5,
                dt: 1e-4,
                record_every: 50,
            },
            adaptation_enabled: true,
            divergence_bound: 1e6,
        }
    }

    fn zero_field() -> Arc<dyn VectorField> {
        Arc::new(polynomial(PolynomialField::zero(1)).unwrap())
    }

    #[test]
    fn grid_validation() {
        assert!(PdeGrid::new(1.0, 1).is_err());
        assert!(PdeGrid::new(0.0, 4).is_err());
        let g = PdeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.h(), 0.5);
        assert_eq!(g.center(0), 0.25);
    }

    #[test]
    fn constant_profile_is_homogeneous() {
        let g = PdeGrid::new(1.0, 8).unwrap();
        let s = scenario(Arc::new(Bistable), g, vec![0.5; 8], 0.3);
        let (xdot, kdot) = discrete_rhs(&s, &s.initial_state()).unwrap();
        assert!(xdot.iter().all(|&v| v == 0.5 - 0.125));
        assert!(kdot.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_cell_matches_single_link() {
        let g = PdeGrid::new(2.0, 2).unwrap();
        let mut s = scenario(zero_field(), g, vec![0.0, 1.0], 1.0);
        s.gamma = vec![2.5];
        let (xdot, kdot) = discrete_rhs(&s, &s.initial_state()).unwrap();
        assert_eq!(xdot, vec![1.0, -1.0]);
        assert_eq!(kdot, vec![2.5]);
    }

    #[test]
    fn frozen_unit_coefficient_is_second_difference() {
        let g = PdeGrid::new(1.0, 5).unwrap();
        let x0 = vec![0.3, -1.0, 2.0, 0.5, 0.25];
        let mut s = scenario(zero_field(), g, x0.clone(), 1.0);
        s.adaptation_enabled = false;
        let (xdot, _) = discrete_rhs(&s, &s.initial_state()).unwrap();
        let h2 = g.h() * g.h();
        let mut expected = vec![0.0; 5];
        for m in 0..5 {
            let left = if m == 0 { x0[0] } else { x0[m - 1] };
            let right = if m == 4 { x0[4] } else { x0[m + 1] };
            expected[m] = (left - 2.0 * x0[m] + right) / h2;
        }
        for (a, b) in xdot.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
        assert!(xdot.iter().sum::<f64>().abs() < 1e-11);
    }

    #[test]
    fn poincare_eigenvalues() {
        assert!((discrete_poincare_lambda2(&PdeGrid::new(1.0, 2).unwrap()) - 8.0).abs() < 1e-12);
        let fine = discrete_poincare_lambda2(&PdeGrid::new(1.0, 200).unwrap());
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((fine - pi2).abs() / pi2 < 0.01);
        for n in [3, 7, 32] {
            let a = discrete_poincare_lambda2(&PdeGrid::new(1.0, n).unwrap());
            let b = discrete_poincare_lambda2(&PdeGrid::new(2.0, n).unwrap());
            assert!((a / b - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn diffusion_matrix_symmetric_psd_with_constant_null() {
        let g = PdeGrid::new(1.0, 6).unwrap();
        let k = [0.1, 2.0, 0.0, 5.5, 1.0];
        let a = g.diffusion_matrix(&k);
        assert_eq!(&a, &a.transpose());
        assert!(crate::graph::min_symmetric_eigenvalue(&a) >= -1e-10);
        assert!((&a * DMatrix::from_element(6, 1, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn homogeneous_data_stays_homogeneous() {
        let g = PdeGrid::new(1.0, 8).unwrap();
        let s = scenario(Arc::new(Bistable), g, vec![0.2; 8], 0.0);
        let traj = integrate_pde(&s).unwrap();
        for (x, k) in traj.states.iter().zip(&traj.weights) {
            assert!(x.iter().all(|&v| (v - x[0]).abs() < 1e-12));
            assert!(k[0].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mass_conserved_with_adaptive_coefficient() {
        let g = PdeGrid::new(1.0, 16).unwrap();
        let x0: Vec<f64> = (0..16).map(|m| (m as f64 * 0.7).sin()).collect();
        let s = scenario(zero_field(), g, x0, 0.0);
        let traj = integrate_pde(&s).unwrap();
        let m0 = mass(&traj.states[0], &g, 1)[0];
        for (x, k) in traj.states.iter().zip(&traj.weights) {
            assert!((mass(x, &g, 1)[0] - m0).abs() < 1e-9);
            assert!(k[0].iter().all(|&v| v >= 0.0));
        }
        for w in traj.weights.windows(2) {
            for (a, b) in w[0][0].iter().zip(&w[1][0]) {
                assert!(*b >= a - 1e-12);
            }
        }
    }

    #[test]
    fn reduction_matches_network_rhs() {
        let g = PdeGrid::new(1.0, 4).unwrap();
        let mut s = scenario(Arc::new(Bistable), g, vec![-1.0, -0.2, 0.4, 1.1], 0.05);
        s.gamma = vec![0.5, 1.0, 2.0];
        let (xdot, kdot) = discrete_rhs(&s, &s.initial_state()).unwrap();
        let net = s.to_network();
        let d = ode_net::rhs(&net, &net.initial_state()).unwrap();
        let h2 = g.h() * g.h();
        for (a, b) in xdot.iter().zip(&d.xdot) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in kdot.iter().zip(&d.kdot[0]) {
            assert!((a / h2 - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn lyapunov_and_sync_error_of_constant_profile() {
        let g = PdeGrid::new(1.0, 4).unwrap();
        let x = vec![0.3; 4];
        assert_eq!(spatial_sync_error(&x, &g, &scalar(1.0)), 0.0);
        assert_eq!(pde_lyapunov(&x, &[2.0; 3], &g, &scalar(1.0), 2.0, &[1.0; 3]), 0.0);
        // split ±1: x̃ = ±1 on every cell, ∫ |ỹ|² = L
        let split = vec![-1.0, -1.0, 1.0, 1.0];
        assert!((spatial_sync_error(&split, &g, &scalar(1.0)) - 1.0).abs() < 1e-15);
    }
}
