//! Time-consistent behavioral portfolio policies for multi-period
//! mean-variance investors whose risk aversion is a piecewise-linear
//! function of the gap between current wealth and the discounted target.
//!
//! The crate is organised bottom-up:
//!
//! * [`market`] calibrates a lognormal return model and draws the fixed
//!   scenario sets that every expectation is averaged over.
//! * [`recursion`] evaluates the stage objectives `F_t^+`, `F_t^-` and runs the
//!   backward coefficient recursion for `a_t^±`, `b_t^±`.
//! * [`optimizer`] minimizes the stage objectives by deterministic multi-start
//!   pattern search, optionally over a polyhedral cone, and drives the
//!   backward induction.
//! * [`policy`] holds the resulting feedback policy, its closed-form terminal
//!   moments and the pre-committed baseline.
//! * [`simulate`] runs forward Monte Carlo under any feedback rule and
//!   produces the summary statistics used to check the closed forms.

pub mod error;
pub mod market;
pub mod optimizer;
pub mod policy;
pub mod recursion;
pub mod rng;
pub mod simulate;

mod linalg;

pub use error::{Error, Result};
pub use market::{
    calibrate_lognormal, discount_curve, generate_scenarios, scenario_moments, DiscountCurve,
    LognormalParams, MarketSpec, MomentConvention, MomentSpec, ReturnModel, ScenarioMoments,
    ScenarioSet,
};
pub use optimizer::{
    backward_solve, solve_stage_cone, solve_stage_unconstrained, ConeConstraint, SearchConfig,
    SeedKind, ShortfallCone, Solution, SolveDiagnostics, StageDiagnostics, StageResult,
};
pub use policy::{
    closed_form_terminal_moments, precommitted_policy, PolicyTable, PrecommittedPolicy,
    TerminalMoments, WealthState,
};
pub use recursion::{
    coercivity_certificate, eval_f_minus, eval_f_plus, update_coefficients, CoefficientTable,
    CoercivityReport, RiskAversionSpec, Side, StageObjective,
};
pub use simulate::{
    density_estimate, sharpe_ratio, simulate, threshold_probabilities, Density, FeedbackPolicy,
    PathSource, SimulationResult,
};
