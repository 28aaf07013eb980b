//! Discrete-event simulation of LFT2, a two-phase pipelined BFT consensus
//! protocol.
//!
//! A [`Scenario`] fixes the cluster size, faulty nodes, timeouts, delay
//! model, seed and stop rule. [`run`] executes it deterministically and
//! returns [`RunStats`]: per-round outcomes, commit logs and message counts.
//! The [`analysis`] module turns those into safety verdicts, γ estimates and
//! convergence timeouts. [`experiment`] wraps sweeps, config files and CSV
//! output, and [`explore`] enumerates every schedule of a small cluster.
//!
//! ```
//! use lft2::{run, DelayModel, Scenario, SimTime, StopRule};
//!
//! let delay = DelayModel::uniform(0.05, 0.2).unwrap();
//! let s = Scenario::new(4, delay)
//!     .with_timeout(SimTime::from_millis(1000))
//!     .with_stop(StopRule::blocks(20));
//! let stats = run(&s).unwrap();
//! assert_eq!(stats.committed, 20);
//! assert!(lft2::analysis::check_run(&stats).ok);
//! ```

pub mod adversary;
pub mod analysis;
pub mod engine;
pub mod experiment;
pub mod explore;
pub mod model;
pub mod network;
pub mod replica;
pub mod time;

pub use adversary::{Behavior, FaultSpec};
pub use engine::{run, RoundRecord, RunStats, Scenario, SimError, StopRule};
pub use model::{NodeId, QuorumParams};
pub use network::DelayModel;
pub use replica::OutcomeKind;
pub use time::SimTime;
