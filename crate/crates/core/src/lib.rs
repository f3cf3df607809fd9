//! Phase-space propagation of semiclassical states by superposing
//! anisotropic Gaussian wave packets.
//!
//! The crate is organised bottom-up:
//! [`models`] (Hamiltonians), [`flow`] (characteristics and variational
//! frames), [`transform`] (wave packet transform and its identities),
//! [`propagator`] (kernels and quadrature propagation), [`wkb`] (lifting and
//! Lagrangian manifolds) and [`oracles`] (closed-form references).

pub mod error;
pub mod linalg;
pub mod models;
pub mod flow;
pub mod field;
pub mod transform;
pub mod propagator;
pub mod wkb;
pub mod oracles;

pub use error::{Error, Result};
pub use linalg::{CMatrix, RMatrix, C64};
pub use models::{builtin_model, polynomial_model, BuiltinKind, Hamiltonian, HamiltonianModel, ModelSpec, Monomial, PhasePoint};
pub use flow::{
    amplitude_a, anisotropy_z, ehrenfest_guard, flow_jacobian, integrate_characteristics, FlowMethod, FlowOptions,
    Sampling, SiegelMatrix, TrajectoryBundle, VariationalFrame,
};
pub use field::{Axis, ComplexField, Domain};
pub use transform::{
    bergmann_kernel, fock_bargmann_residual, gaussian_packet, husimi_check, inverse_transform, overlap,
    transform_at, wave_packet_transform, HusimiCheck,
};
pub use propagator::{
    apply_propagator, double_anisotropy_q, eval_packet, kernel_ksc, position_space_solution, van_vleck_kernel,
    KernelNode, PropagatedPacket, Propagation, PropagatorOptions, VanVleckOptions,
};
pub use wkb::{
    asymptotic_phase_fsc, caustic_time, double_phase_flow, gaussian_integral, lift_wkb, project_onto_manifold,
    r_analytic_extension, solution_on_manifold, stationary_point_z, transport_manifold, transported_phase,
    DerivativeStack, Fsc, GaussPoly, LagrangianManifold, LineFit, Polynomial, Projection, WkbData,
};
pub use oracles::{
    deviations, exact_anisotropy_q, exact_anisotropy_z, exact_kernel, exact_manifold, exact_phase_function,
    exact_phase_solution, exact_position_propagator, exact_position_solution, harmonic_vertical_time,
    initial_phase_state, Deviation, Evaluated, OracleCase, Reading,
};
