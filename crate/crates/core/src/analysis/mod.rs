//! Long-time behaviour of perturbed semigroups: window conditions on the
//! potential, decay certificates, fitted exponential types, the Rayleigh
//! quotient, growth bounds and Gronwall envelopes.

mod ab;
mod certificate;
mod gronwall;
mod growth;
mod rates;
mod rayleigh;

pub use ab::{ab_check, ab_check_with, default_ab_radii, ABReport, ABWitness, AB_TOLERANCE};
pub use certificate::{
    certificate_constants, decay_certificate, g_mu_calibration, operator_norm_linfty, operator_norm_trajectory,
    psi_field, psi_field_detailed, psi_lower_bound, CertificatePoint, DecayCertificate, PsiField, PsiLowerBound,
    THETA_GRID,
};
pub use gronwall::{gronwall_envelope, mittag_leffler_e};
pub use growth::{
    calibrate_growth_constant, growth_bound, lambda_sweep, measure_growth_rate, GrowthBound, GrowthCalibration,
    GrowthEstimate, LambdaSweep,
};
pub use rates::{
    estimate_exponential_type, estimate_from_logs, norm_trajectory, sandwich_check, uniform_decay_check, DecayReport,
    SandwichVerdict, UniformDecayReport, RATE_FLOOR,
};
pub use rayleigh::{principal_eigenvalue, rayleigh_omega2, RayleighReport};
