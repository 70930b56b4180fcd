//! Hospital bed-capacity simulation behind a Gym-style interface, paired with
//! a family of deep Q-learning agents and a training harness.

pub mod agents;
pub mod des;
pub mod env;
pub mod hospital;
pub mod neural;
pub mod protocol;
pub mod replay;
pub mod trainer;
