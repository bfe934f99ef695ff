//! Adaptive synchronization of diffusively coupled systems.
//!
//! Networks of identical nodes `ẋᵢ = f(xᵢ) + B Σⱼ kᵢⱼ (yⱼ − yᵢ)` whose link
//! weights grow as `k̇ᵢⱼ = γᵢⱼ |yᵢ − yⱼ|²`, the multi-channel form with one
//! graph per input/output channel, a sampled checker for the Jacobian
//! certificate that guarantees output synchronization, and a 1-D
//! reaction-diffusion analogue with an adaptive diffusion coefficient.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`graph`] | incidence matrix, Laplacian, `λ₂`, coupling threshold |
//! | [`dynamics`] | vector fields with analytic Jacobians |
//! | [`certificate`] | sampled matrix-inequality checks |
//! | [`ode_net`] | coupled network simulation |
//! | [`metrics`] | sync error, Lyapunov function, boundedness |
//! | [`pde1d`] | method-of-lines reaction-diffusion |
//! | [`scenario`] | JSON scenario files |
//! | [`runner`] | `run` / `sweep` / CSV output |

pub mod certificate;
pub mod dynamics;
pub mod graph;
pub mod integrator;
pub mod metrics;
pub mod ode_net;
pub mod pde1d;
pub mod rng;
pub mod runner;
pub mod scenario;

pub use certificate::{Certificate, ChannelMap};
pub use dynamics::{Bistable, PolynomialField, StateBox, VectorField};
pub use graph::{Graph, GraphError};
pub use integrator::TimeGrid;
pub use ode_net::{Channel, Scenario, SimError, Trajectory};
pub use pde1d::{PdeGrid, PdeScenario};
