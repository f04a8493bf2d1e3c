//! Preferential Bayesian optimization with pairwise Thompson sampling.

pub mod candidates;
pub mod environments;
pub mod harness;
pub mod inference;
pub mod kernels;
pub mod numeric;
pub mod policies;
pub mod scalar_gp;
pub mod session;

pub use candidates::{argmax, CandidateError, CandidateSet};
pub use inference::{
    fit, AnchoredPosterior, ExplorationSchedule, FitDiagnostics, InferenceError, LinkFunction, PrefPosterior,
    PreferenceHistory, PreferenceRecord,
};
pub use kernels::{BaseKernel, DuelingKernel, KernelError, KernelFamily, Point, PointPair};
pub use numeric::{factor_psd, sample_mvn, MvnSampler, NumericError, PsdFactor};
pub use scalar_gp::{fit_scalar, ScalarGpError, ScalarPosterior};
pub use environments::{BtlOracle, Environment, EnvironmentError, Rescale, Utility};
pub use policies::{PairDecision, PairTable, PolicyError, PolicySpec};
pub use harness::{run_episode, run_suite, HarnessError, RegretTrace, RoundRecord, RunConfig, SuiteResult};
pub use session::{CandidateInput, SessionConfig, SessionError, SessionReport, SessionService, SessionState, SessionStatus, SessionStore};
