//! Region-based approximation of POMDPs.
//!
//! A general POMDP is approximated by a region-observable POMDP in which an
//! oracle additionally reports a region of states known to contain the true
//! state. The region-observable model is solved by value iteration restricted
//! to region-supported beliefs; its value function then drives a one-step
//! lookahead policy for the original model. Paired simulation with and
//! without the oracle estimates how much the approximation loses.
//!
//! Modules:
//! - [`pomdp`]: models, validation, belief updates
//! - [`region`]: region systems, the oracle, the region-observable transform
//! - [`solver`]: exact, MDP and restricted value iteration; greedy policies
//! - [`gridworld`]: office-map environments compiled to POMDPs
//! - [`simulator`]: seeded trials, g(n) curves, the oracle gap
//! - [`io`]: text formats for models, regions, value functions and results

pub mod gridworld;
pub mod io;
pub mod lp;
pub mod pomdp;
pub mod region;
pub mod simulator;
pub mod solver;

pub use pomdp::{Belief, BeliefError, ModelError, Pomdp, PomdpTables};
pub use region::{RegionObservablePomdp, RegionSystem};
pub use solver::{SolveLimits, SolveReport, ValueFunction};
