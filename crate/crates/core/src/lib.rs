//! Policy optimization by continuation.
//!
//! A continuation smooths the return of a policy by perturbing its parameter
//! with Gaussian noise at every step. Its value equals the return of a mirror
//! policy, which for affine means is again Gaussian with a closed-form
//! covariance. Optimizing a sequence of mirrors with shrinking covariance
//! tracks the smoothed optimum and can escape basins where plain ascent on
//! the original policy gets stuck.
//!
//! The crate ships a one-dimensional car-in-a-valley task ([`hillcar`]) with
//! a local and a global optimum, the mirror constructors
//! ([`continuation`]), gradient estimators ([`grad`]) and the graduated
//! optimizer with two baselines ([`optimize`]).

mod error;
pub mod rng;
pub mod linalg;
pub mod stats;
mod par;
pub mod mdp;
pub mod hillcar;
pub mod policy;
pub mod continuation;
pub mod grad;
pub mod optimize;
pub mod landscape;

pub use error::{Error, Result};
pub use rng::RandomStream;
