//! Built-in MDP instances.

use siegmund::rl::{baird, random_mdp, FeatureMap, Mdp};
use siegmund::{Error, Result};

/// Names accepted by [`builtin`], with one-line descriptions.
pub const BUILTINS: &[(&str, &str)] = &[
    ("random5", "5 states, 2 actions, d = 3 random features, gamma = 0.9"),
    (
        "random3",
        "3 states, 2 actions, d = 3 random features, gamma = 0.9 (18 chain states)",
    ),
    ("baird", "Baird's 7-state star, 2 actions, d = 16, gamma = 0.99"),
];

/// Generator seed shared by the random instances, so they are fixed objects.
pub const CORPUS_SEED: u64 = 20_240_601;

pub fn builtin(name: &str) -> Result<(Mdp, FeatureMap)> {
    match name {
        "random5" => random_mdp(5, 2, 3, 0.9, 1.0, CORPUS_SEED),
        "random3" => random_mdp(3, 2, 3, 0.9, 1.0, CORPUS_SEED + 1),
        "baird" => baird(0.99),
        other => Err(Error::Config(format!(
            "unknown built-in MDP '{other}' (known: {})",
            BUILTINS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
        ))),
    }
}
