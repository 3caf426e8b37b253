mod convergence;
mod estimate;
mod kernel;
mod model;

pub use convergence::{coupling_convergence, ConvergencePoint};
pub use estimate::{
    estimate_alpha, estimate_alphas, estimate_coupling, estimate_with_unknown_input, AlphaEstimate, CouplingOptions,
    EstimationReport, UnknownInputOptions, ALPHA_MSE_THRESHOLD, MIN_ALPHA_LENGTH,
};
pub use kernel::{frac_difference, gl_coefficients, GlKernel};
pub use model::{simulate, CouplingExport, FractionalModel, SimulationOptions, OVERFLOW_GUARD};
