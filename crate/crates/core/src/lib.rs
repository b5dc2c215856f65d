//! Optimal lifecycle consumption, bequest and portfolio policy for an agent
//! whose labor income follows a stochastic delay differential equation and
//! who retires at a fixed date.
//!
//! The crate is organised bottom-up:
//!
//! * [`params`] holds the model primitives, the derived scalars and the
//!   standing-hypothesis check.
//! * [`weights`] solves the coupled integral system for the human-capital
//!   weights `(g, h)` on a (time x lag) grid.
//! * [`simulate`] is the Monte Carlo engine (income SDDE, wealth, state-price
//!   density, exact lognormal total wealth).
//! * [`policy`] evaluates the closed-form value function and feedback controls.
//! * [`validate`] contains the independent oracles that check the closed forms.

pub mod error;
pub mod kernel;
pub mod params;
pub mod policy;
pub mod simulate;
pub mod validate;
pub mod weights;

pub use error::{Error, Result};
pub use kernel::DelayKernel;
pub use params::{
    derive_scalars, validate_hypotheses, DerivedScalars, IncomeParams, MarketParams, Model,
    ModelConfig, PreferenceParams, ValidationReport,
};
pub use policy::{ControlTriple, ExtendedValue, FeedbackPolicy, PolicyMode, StateSnapshot};
pub use simulate::{HistoryBuffer, PathConfig, SimOutput};
pub use weights::{LagGrid, TimeGrid, WeightTable};
