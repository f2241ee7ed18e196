//! Distributionally robust safety filtering for reactive-power control of
//! radial distribution feeders.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] holds the feeder model and an exact DistFlow power flow.
//! * [`conic`] is a small primal-dual interior-point solver for linear
//!   objectives over equality, nonnegative and second-order cone
//!   constraints.
//! * [`dro`] turns error samples into box bounds that hold with
//!   worst-case probability `1 - alpha` over a Wasserstein ball.
//! * [`filter`] assembles the robust second-order cone program and
//!   projects a controller's proposed setpoints onto it.
//! * [`sim`] runs closed-loop episodes against perturbed "true" feeders.

pub mod conic;
pub mod dro;
pub mod filter;
pub mod grid;
pub mod sim;
