//! Solver library for separable POMDPs (SEP-POMDPs).
//!
//! A SEP-POMDP couples a completely observed state process (here: an
//! inventory position) with an exogenous, partially observed modulation
//! process that drives the observations. Because the modulation process is
//! unaffected by control, belief updates are control invariant and the
//! estimation side can be handled by an off-the-shelf generative model.
//!
//! This crate provides the pieces of that pipeline:
//!
//! * [`hmm`] — discrete hidden Markov models over joint (demand, auxiliary
//!   observation) emissions: sampling, the one-step observation predictive
//!   `sigma`, the Bayesian belief update `lambda`, forward log-likelihoods,
//!   and Baum-Welch training.
//! * [`belief_grid`] — a finite grid of frequently visited beliefs built by
//!   trajectory simulation and rounding, with nearest-point projection.
//! * [`inventory`] — lead-time demand distributions, newsvendor costs, and
//!   exact / Monte Carlo base-stock levels.
//! * [`svm`] — a from-scratch one-vs-rest linear soft-margin SVM mapping
//!   beliefs to base-stock levels.
//! * [`solvers`] — tabular value iteration, the grid-discretized MDP, the
//!   information-relaxation lower bound, and a probability-matching
//!   real-time heuristic.
//! * [`evaluation`] — Monte Carlo policy evaluation and the optimality-gap
//!   experiment comparing policies built from true and trained models.

pub mod baum_welch;
pub mod belief;
pub mod belief_grid;
pub mod error;
pub mod evaluation;
pub mod hmm;
pub mod inventory;
pub mod solvers;
pub mod svm;

pub use belief::BeliefVector;
pub use belief_grid::BeliefGrid;
pub use error::{Error, Result};
pub use hmm::{EmissionConvention, HiddenMarkovModel, ObservationSequence, Trajectory};
pub use inventory::{InventoryModel, TauDemandDistribution};
pub use svm::{BasestockClassifier, LabeledBeliefSample};
