//! Heavy-tailed shot noise processes and random-length sequences.
//!
//! The crate covers three things:
//!
//! - simulation of shot noise paths `Y(t) = Σ X_i h_i(t, T_i)` driven by
//!   Poisson or renewal arrivals and regularly varying shocks, and of the
//!   random-length products `C(N) = A(N) X(N)`;
//! - closed-form asymptotic constants for the tail, ruin probability,
//!   expected severity, integrated expected severity, expected time over a
//!   threshold and the extremal index;
//! - Monte Carlo and statistical estimators that check those constants.
//!
//! All Monte Carlo loops run through [`parallel::Exec`], which splits work
//! into fixed-size chunks with their own RNG substream. Results therefore do
//! not depend on the number of worker threads. Building without the default
//! `parallel` feature drops rayon and runs everything sequentially.

pub mod arrivals;
pub mod error;
pub mod estimators;
pub mod heavytail;
pub mod numeric;
pub mod parallel;
pub mod risk;
pub mod seqmodel;
pub mod snp;

pub use error::{Error, Result};
pub use parallel::Exec;
