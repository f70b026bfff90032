//! Score-based pairwise and bipartite ranking with abstention.
//!
//! The crate is organised bottom-up: [`losses`] evaluates pointwise losses,
//! [`hypothesis`] provides constrained scorers, [`distribution`] holds finite
//! supports, [`risk`] turns those into exact expected and conditional risks,
//! [`bounds`] checks consistency bounds against them and [`trainer`] fits
//! scorers by projected stochastic gradient descent.

pub mod bounds;
pub mod distribution;
pub mod hypothesis;
pub mod losses;
pub mod numeric;
pub mod report;
pub mod risk;
pub mod trainer;
