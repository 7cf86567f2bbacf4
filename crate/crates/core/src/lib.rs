//! Per-agent advantage estimation for cooperative multi-agent reinforcement
//! learning.
//!
//! * [`env`]: tabular Dec-POMDP models, policies, trajectories and built-ins.
//! * [`oracle`]: exact dynamic programming for joint and counterfactual values
//!   and the per-agent value-iteration operators.
//! * [`correction`]: importance-sampling ratios and trace truncation schemes.
//! * [`estimators`]: per-agent TD errors and the GPAE, GAE, COMA and DAE
//!   advantage estimators.
//! * [`approx`]: small hand-differentiated policy and critic networks.
//! * [`trainer`]: the off-policy actor-critic training loop.

pub mod approx;
pub mod correction;
pub mod env;
pub mod estimators;
pub mod oracle;
pub mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random number generator used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}
