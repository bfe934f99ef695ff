//! Node vector fields `f(x)` with analytic Jacobians.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::CounterRng;

/// Central-difference step used by [`check_jacobian`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("malformed polynomial: {0}")]
    MalformedPolynomial(String),
    #[error("box has {got} intervals, field dimension is {expected}")]
    BoxDimension { expected: usize, got: usize },
    #[error("invalid box interval [{lo}, {hi}] in dimension {dim}")]
    BadInterval { dim: usize, lo: f64, hi: f64 },
}

/// A continuously differentiable vector field on `ℝⁿ`.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`. Both slices have length [`dim`](Self::dim).
    fn eval(&self, x: &[f64], out: &mut [f64]);

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `f(x) = x − x³`, with stable equilibria at ±1 and a saddle at 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bistable;

impl VectorField for Bistable {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] - x[0] * x[0] * x[0];
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0 - 3.0 * x[0] * x[0])
    }
}

/// `f(x) = A x`.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: DMatrix<f64>,
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| self.a[(i, j)] * x[j]).sum();
        }
    }

    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// One term `coeff · ∏ x_j^{powers[j]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    fn value(&self, x: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(x)
            .fold(self.coeff, |acc, (&e, &xi)| acc * xi.powi(e as i32))
    }

    fn partial(&self, x: &[f64], k: usize) -> f64 {
        let ek = self.powers[k];
        if ek == 0 {
            return 0.0;
        }
        let mut v = self.coeff * f64::from(ek);
        for (j, (&e, &xj)) in self.powers.iter().zip(x).enumerate() {
            let e = if j == k { e - 1 } else { e };
            v *= xj.powi(e as i32);
        }
        v
    }
}

/// Polynomial vector field: `components[i]` is the term list of `f_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialField {
    pub dim: usize,
    pub components: Vec<Vec<Monomial>>,
}

impl PolynomialField {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.dim == 0 {
            return Err(DynamicsError::MalformedPolynomial("dim must be >= 1".into()));
        }
        if self.components.len() != self.dim {
            return Err(DynamicsError::MalformedPolynomial(format!(
                "{} components for dimension {}",
                self.components.len(),
                self.dim
            )));
        }
        for (i, terms) in self.components.iter().enumerate() {
            for t in terms {
                if t.powers.len() != self.dim {
                    return Err(DynamicsError::MalformedPolynomial(format!(
                        "component {}: term has {} powers, expected {}",
                        i + 1,
                        t.powers.len(),
                        self.dim
                    )));
                }
                if !t.coeff.is_finite() {
                    return Err(DynamicsError::MalformedPolynomial(format!(
                        "component {}: non-finite coefficient",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// `x − x³`.
    pub fn bistable() -> Self {
        Self {
            dim: 1,
            components: vec![vec![
                Monomial {
                    coeff: 1.0,
                    powers: vec![1],
                },
                Monomial {
                    coeff: -1.0,
                    powers: vec![3],
                },
            ]],
        }
    }

    /// `f ≡ 0` in dimension `dim`.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            components: vec![Vec::new(); dim],
        }
    }
}

/// Validated polynomial field.
#[derive(Debug, Clone)]
pub struct Polynomial(PolynomialField);

/// Builds a vector field from a polynomial term list.
pub fn polynomial(spec: PolynomialField) -> Result<Polynomial, DynamicsError> {
    spec.validate()?;
    Ok(Polynomial(spec))
}

impl Polynomial {
    pub fn spec(&self) -> &PolynomialField {
        &self.0
    }
}

impl VectorField for Polynomial {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.0.components) {
            *o = terms.iter().map(|t| t.value(x)).sum();
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.0.dim;
        DMatrix::from_fn(n, n, |i, k| self.0.components[i].iter().map(|t| t.partial(x, k)).sum())
    }
}

/// Axis-aligned closed box `∏ [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateBox(pub Vec<[f64; 2]>);

impl StateBox {
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self(vec![[lo, hi]; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn validate(&self, dim: usize) -> Result<(), DynamicsError> {
        if self.0.len() != dim {
            return Err(DynamicsError::BoxDimension {
                expected: dim,
                got: self.0.len(),
            });
        }
        for (d, &[lo, hi]) in self.0.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(DynamicsError::BadInterval { dim: d + 1, lo, hi });
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.0.iter().zip(x).all(|(&[lo, hi], &v)| v >= lo && v <= hi)
    }

    /// Maps a point of the unit cube into the box.
    pub fn scale(&self, unit: &[f64]) -> Vec<f64> {
        self.0
            .iter()
            .zip(unit)
            .map(|(&[lo, hi], &u)| lo + (hi - lo) * u)
            .collect()
    }
}

/// Central-difference Jacobian with step [`FD_STEP`].
pub fn finite_difference_jacobian(vf: &dyn VectorField, x: &[f64]) -> DMatrix<f64> {
    let n = vf.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for k in 0..n {
        xp[k] = x[k] + FD_STEP;
        vf.eval(&xp, &mut fp);
        xp[k] = x[k] - FD_STEP;
        vf.eval(&xp, &mut fm);
        xp[k] = x[k];
        for i in 0..n {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }
    jac
}

/// Worst deviation between the analytic and central-difference Jacobians over
/// `n_samples` seeded points in `bx`. Each entry is compared relative to
/// `max(1, |J_analytic|)`.
pub fn check_jacobian(vf: &dyn VectorField, bx: &StateBox, n_samples: usize, seed: u64) -> f64 {
    let n = vf.dim();
    let mut rng = CounterRng::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..n_samples.max(1) {
        let unit: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let x = bx.scale(&unit);
        let analytic = vf.jacobian(&x);
        let fd = finite_difference_jacobian(vf, &x);
        for (a, f) in analytic.iter().zip(fd.iter()) {
            worst = worst.max((a - f).abs() / a.abs().max(1.0));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(vf: &dyn VectorField, x: f64) -> f64 {
        let mut out = [0.0];
        vf.eval(&[x], &mut out);
        out[0]
    }

    #[test]
    fn bistable_values() {
        assert_eq!(eval1(&Bistable, 0.0), 0.0);
        assert_eq!(eval1(&Bistable, 1.0), 0.0);
        assert_eq!(eval1(&Bistable, -1.0), 0.0);
        assert_eq!(eval1(&Bistable, 2.0), -6.0);
        assert_eq!(Bistable.jacobian(&[0.0])[(0, 0)], 1.0);
        assert_eq!(Bistable.jacobian(&[1.0])[(0, 0)], -2.0);
        let fd = finite_difference_jacobian(&Bistable, &[1.0])[(0, 0)];
        assert!((fd + 2.0).abs() < 1e-9);
    }

    #[test]
    fn polynomial_matches_bistable() {
        let p = polynomial(PolynomialField::bistable()).unwrap();
        let mut rng = CounterRng::new(3);
        for _ in 0..100 {
            let x = -2.0 + 4.0 * rng.next_f64();
            assert!((eval1(&p, x) - eval1(&Bistable, x)).abs() < 1e-14);
            assert!((p.jacobian(&[x])[(0, 0)] - Bistable.jacobian(&[x])[(0, 0)]).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_polynomial_jacobian_is_constant() {
        // f = A x with A = [[1, 2], [-3, 4]]
        let spec = PolynomialField {
            dim: 2,
            components: vec![
                vec![
                    Monomial {
                        coeff: 1.0,
                        powers: vec![1, 0],
                    },
                    Monomial {
                        coeff: 2.0,
                        powers: vec![0, 1],
                    },
                ],
                vec![
                    Monomial {
                        coeff: -3.0,
                        powers: vec![1, 0],
                    },
                    Monomial {
                        coeff: 4.0,
                        powers: vec![0, 1],
                    },
                ],
            ],
        };
        let p = polynomial(spec).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 4.0]);
        for x in [[0.0, 0.0], [1.5, -2.0], [-7.0, 3.25]] {
            assert_eq!(p.jacobian(&x), a);
        }
    }

    #[test]
    fn damped_cubic_jacobian() {
        // f(x1, x2) = (x2, -x1 - x2^3)
        let spec = PolynomialField {
            dim: 2,
            components: vec![
                vec![Monomial {
                    coeff: 1.0,
                    powers: vec![0, 1],
                }],
                vec![
                    Monomial {
                        coeff: -1.0,
                        powers: vec![1, 0],
                    },
                    Monomial {
                        coeff: -1.0,
                        powers: vec![0, 3],
                    },
                ],
            ],
        };
        let p = polynomial(spec).unwrap();
        let x = [0.3, -1.7];
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -3.0 * 1.7 * 1.7]);
        assert!((p.jacobian(&x) - &expected).amax() < 1e-14);
        assert!((finite_difference_jacobian(&p, &x) - expected).amax() < 1e-8);
    }

    #[test]
    fn malformed_polynomials_rejected() {
        let bad_powers = PolynomialField {
            dim: 2,
            components: vec![
                vec![Monomial {
                    coeff: 1.0,
                    powers: vec![1],
                }],
                vec![],
            ],
        };
        assert!(matches!(
            polynomial(bad_powers),
            Err(DynamicsError::MalformedPolynomial(_))
        ));
        let bad_count = PolynomialField {
            dim: 2,
            components: vec![vec![]],
        };
        assert!(matches!(
            polynomial(bad_count),
            Err(DynamicsError::MalformedPolynomial(_))
        ));
        let bad_coeff = PolynomialField {
            dim: 1,
            components: vec![vec![Monomial {
                coeff: f64::NAN,
                powers: vec![1],
            }]],
        };
        assert!(matches!(
            polynomial(bad_coeff),
            Err(DynamicsError::MalformedPolynomial(_))
        ));
    }

    #[derive(Debug)]
    struct WrongJacobian;

    impl VectorField for WrongJacobian {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] - x[0].powi(3);
        }
        fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 1.0 - 2.0 * x[0] * x[0])
        }
    }

    #[test]
    fn check_jacobian_accepts_correct_and_flags_wrong() {
        let bx = StateBox::uniform(1, -2.0, 2.0);
        assert!(check_jacobian(&Bistable, &bx, 1000, 1) < 1e-6);
        let p = polynomial(PolynomialField::bistable()).unwrap();
        assert!(check_jacobian(&p, &bx, 1000, 1) < 1e-6);
        let lin = LinearField {
            a: DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, -3.0]),
        };
        assert!(check_jacobian(&lin, &StateBox::uniform(2, -5.0, 5.0), 200, 9) < 1e-9);
        assert!(check_jacobian(&WrongJacobian, &bx, 1000, 1) > 1e-2);
    }

    #[test]
    fn check_jacobian_is_deterministic() {
        let bx = StateBox::uniform(1, -3.0, 3.0);
        let a = check_jacobian(&Bistable, &bx, 50, 42);
        let b = check_jacobian(&Bistable, &bx, 50, 42);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn box_validation() {
        assert!(StateBox::uniform(2, -1.0, 1.0).validate(2).is_ok());
        assert!(StateBox::uniform(2, -1.0, 1.0).validate(1).is_err());
        assert!(StateBox(vec![[1.0, -1.0]]).validate(1).is_err());
        assert!(StateBox::uniform(1, -1.0, 1.0).contains(&[1.0]));
        assert!(!StateBox::uniform(1, -1.0, 1.0).contains(&[1.0 + 1e-12]));
    }
}
