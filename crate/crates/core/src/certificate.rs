//! Sampled verification of the synchronization certificate
//!
//! ```text
//! P J(x) + J(x)ᵀ P ⪯ θ CᵀC   for x in the box
//! P B = [ω₁ C₁ᵀ ⋯ ω_m C_mᵀ]
//! ```
//!
//! The inequality is checked on a tensor grid plus seeded random interior
//! points, so a pass is sampled evidence over the box, not a proof.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dynamics::{DynamicsError, StateBox, VectorField};
use crate::graph::{min_symmetric_eigenvalue, Graph, GraphError};
use crate::rng::CounterRng;

/// Entrywise tolerance for symmetry of `P` and the `PB` equation.
pub const STRUCTURE_TOL: f64 = 1e-10;
/// Minimum eigenvalue of the margin matrix accepted as nonnegative.
pub const MARGIN_TOL: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("theta must be positive and finite, got {0}")]
    InvalidTheta(f64),
    #[error("channel multiplier omega must be positive, got {0}")]
    InvalidOmega(f64),
    #[error("grid must have at least 2 points per dimension, got {0}")]
    GridTooSmall(usize),
    #[error("structure check failed: {0}")]
    StructureFailed(StructureReport),
    #[error("Jacobian inequality failed: worst margin {margin:e} at {location:?}")]
    InequalityFailed { margin: f64, location: Vec<f64> },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Input/output pair `(B_q, C_q)` with multiplier `ω_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMap {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub p: DMatrix<f64>,
    pub theta: f64,
    pub state_box: StateBox,
    pub channels: Vec<ChannelMap>,
}

impl Certificate {
    /// Single channel with `ω = 1`.
    pub fn single(p: DMatrix<f64>, theta: f64, b: DMatrix<f64>, c: DMatrix<f64>, state_box: StateBox) -> Self {
        Self {
            p,
            theta,
            state_box,
            channels: vec![ChannelMap { b, c, omega: 1.0 }],
        }
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// `[B₁ ⋯ B_m]`.
    pub fn stacked_b(&self) -> DMatrix<f64> {
        let n = self.dim();
        let cols: usize = self.channels.iter().map(|ch| ch.b.ncols()).sum();
        let mut out = DMatrix::zeros(n, cols);
        let mut off = 0;
        for ch in &self.channels {
            out.view_mut((0, off), (n, ch.b.ncols())).copy_from(&ch.b);
            off += ch.b.ncols();
        }
        out
    }

    /// `[C₁; ⋯; C_m]`.
    pub fn stacked_c(&self) -> DMatrix<f64> {
        let n = self.dim();
        let rows: usize = self.channels.iter().map(|ch| ch.c.nrows()).sum();
        let mut out = DMatrix::zeros(rows, n);
        let mut off = 0;
        for ch in &self.channels {
            out.view_mut((off, 0), (ch.c.nrows(), n)).copy_from(&ch.c);
            off += ch.c.nrows();
        }
        out
    }

    fn check_dimensions(&self) -> Result<(), CertificateError> {
        let n = self.p.nrows();
        if self.p.ncols() != n || n == 0 {
            return Err(CertificateError::DimensionMismatch(format!(
                "P is {}x{}, expected square",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        if self.channels.is_empty() {
            return Err(CertificateError::DimensionMismatch("no channels".into()));
        }
        for (q, ch) in self.channels.iter().enumerate() {
            if ch.b.nrows() != n || ch.c.ncols() != n || ch.b.ncols() != ch.c.nrows() {
                return Err(CertificateError::DimensionMismatch(format!(
                    "channel {}: B is {}x{}, C is {}x{}, state dimension {}",
                    q + 1,
                    ch.b.nrows(),
                    ch.b.ncols(),
                    ch.c.nrows(),
                    ch.c.ncols(),
                    n
                )));
            }
            if !(ch.omega > 0.0 && ch.omega.is_finite()) {
                return Err(CertificateError::InvalidOmega(ch.omega));
            }
        }
        self.state_box.validate(n)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    /// `max |P − Pᵀ|`.
    pub symmetry_residual: f64,
    pub p_min_eigenvalue: f64,
    /// `max |P B − [ω_q C_qᵀ]|`.
    pub pb_residual: f64,
}

impl StructureReport {
    pub fn symmetric(&self) -> bool {
        self.symmetry_residual <= STRUCTURE_TOL
    }

    pub fn positive_definite(&self) -> bool {
        self.p_min_eigenvalue > 0.0
    }

    pub fn pb_holds(&self) -> bool {
        self.pb_residual <= STRUCTURE_TOL
    }

    pub fn passed(&self) -> bool {
        self.symmetric() && self.positive_definite() && self.pb_holds()
    }
}

impl std::fmt::Display for StructureReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "symmetry residual {:e}, min eig(P) {:e}, PB residual {:e}",
            self.symmetry_residual, self.p_min_eigenvalue, self.pb_residual
        )
    }
}

/// Checks `P = Pᵀ ≻ 0` and the `PB` equation.
pub fn check_structure(cert: &Certificate) -> Result<StructureReport, CertificateError> {
    cert.check_dimensions()?;
    let p = &cert.p;
    let symmetry_residual = (p - p.transpose()).amax();
    let sym = (p + p.transpose()) * 0.5;
    let p_min_eigenvalue = min_symmetric_eigenvalue(&sym);
    let mut pb_residual = 0.0_f64;
    for ch in &cert.channels {
        let lhs = p * &ch.b;
        let rhs = ch.c.transpose() * ch.omega;
        pb_residual = pb_residual.max((lhs - rhs).amax());
    }
    Ok(StructureReport {
        symmetry_residual,
        p_min_eigenvalue,
        pb_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    /// Minimum over samples of `λ_min(θ CᵀC − P J − Jᵀ P)`.
    pub worst_margin: f64,
    pub worst_location: Vec<f64>,
    pub n_samples: usize,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.worst_margin >= MARGIN_TOL
    }
}

/// Margin `λ_min(θ CᵀC − P J(x) − J(x)ᵀ P)` at one point.
pub fn margin_at(cert: &Certificate, ctc: &DMatrix<f64>, vf: &dyn VectorField, x: &[f64]) -> f64 {
    let j = vf.jacobian(x);
    let pj = &cert.p * &j;
    let m = ctc * cert.theta - &pj - pj.transpose();
    min_symmetric_eigenvalue(&m)
}

/// Sample points: a uniform tensor grid with `grid` points per dimension
/// (endpoints included) followed by `grid` seeded random interior points.
pub fn sample_points(bx: &StateBox, grid: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = bx.dim();
    let total = grid.pow(n as u32);
    let mut points = Vec::with_capacity(total + grid);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let unit: Vec<f64> = idx.iter().map(|&i| i as f64 / (grid - 1) as f64).collect();
        points.push(bx.scale(&unit));
        for d in idx.iter_mut() {
            *d += 1;
            if *d < grid {
                break;
            }
            *d = 0;
        }
    }
    let mut rng = CounterRng::new(seed);
    for _ in 0..grid {
        let unit: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        points.push(bx.scale(&unit));
    }
    points
}

/// Sampled check of the Jacobian inequality over the certificate box.
pub fn check_jacobian_inequality(
    cert: &Certificate,
    vf: &dyn VectorField,
    grid: usize,
    seed: u64,
) -> Result<InequalityReport, CertificateError> {
    cert.check_dimensions()?;
    if !(cert.theta > 0.0 && cert.theta.is_finite()) {
        return Err(CertificateError::InvalidTheta(cert.theta));
    }
    if vf.dim() != cert.dim() {
        return Err(CertificateError::DimensionMismatch(format!(
            "vector field dimension {} vs P dimension {}",
            vf.dim(),
            cert.dim()
        )));
    }
    if grid < 2 {
        return Err(CertificateError::GridTooSmall(grid));
    }
    let c = cert.stacked_c();
    let ctc = c.transpose() * &c;
    let points = sample_points(&cert.state_box, grid, seed);
    let mut worst_margin = f64::INFINITY;
    let mut worst_location = Vec::new();
    // strict `<` keeps the first minimizer, so the result does not depend on
    // how samples might be split between workers as long as ties merge left
    for x in &points {
        let m = margin_at(cert, &ctc, vf, x);
        if m < worst_margin {
            worst_margin = m;
            worst_location = x.clone();
        }
    }
    Ok(InequalityReport {
        worst_margin,
        worst_location,
        n_samples: points.len(),
    })
}

/// Combined verdict plus the induced coupling threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub theta: f64,
    /// `λ₂` of each channel graph.
    pub lambda2: Vec<f64>,
    /// `k* = max_q θ / (2 ω_q λ₂⁽q⁾)`; equals `θ / (2λ₂)` for one channel.
    pub kstar: f64,
    pub structure: StructureReport,
    pub inequality: InequalityReport,
}

impl CertificateReport {
    /// `ε(k) = 2 k λ₂ − θ` for the worst channel (`min_q ω_q λ₂⁽q⁾`).
    pub fn epsilon(&self, k: f64) -> f64 {
        self.theta * (k / self.kstar - 1.0)
    }
}

/// Structure and inequality checks followed by the coupling threshold for `g`.
pub fn certify(
    cert: &Certificate,
    vf: &dyn VectorField,
    g: &Graph,
    grid: usize,
    seed: u64,
) -> Result<CertificateReport, CertificateError> {
    certify_channels(cert, vf, &[g], grid, seed)
}

/// Multi-channel variant: `graphs[q]` is the interconnection of channel `q`.
pub fn certify_channels(
    cert: &Certificate,
    vf: &dyn VectorField,
    graphs: &[&Graph],
    grid: usize,
    seed: u64,
) -> Result<CertificateReport, CertificateError> {
    if graphs.len() != cert.channels.len() {
        return Err(CertificateError::DimensionMismatch(format!(
            "{} graphs for {} channels",
            graphs.len(),
            cert.channels.len()
        )));
    }
    let structure = check_structure(cert)?;
    if !structure.passed() {
        return Err(CertificateError::StructureFailed(structure));
    }
    let inequality = check_jacobian_inequality(cert, vf, grid, seed)?;
    if !inequality.passed() {
        return Err(CertificateError::InequalityFailed {
            margin: inequality.worst_margin,
            location: inequality.worst_location,
        });
    }
    let mut kstar = 0.0_f64;
    let mut lambda2 = Vec::with_capacity(graphs.len());
    for (g, ch) in graphs.iter().zip(&cert.channels) {
        let k = g.coupling_bound(cert.theta)? / ch.omega;
        kstar = kstar.max(k);
        lambda2.push(g.lambda2());
    }
    Ok(CertificateReport {
        theta: cert.theta,
        lambda2,
        kstar,
        structure,
        inequality,
    })
}
