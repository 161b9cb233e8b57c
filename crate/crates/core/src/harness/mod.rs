//! Simulation and execution harness: Monte Carlo round sampling against a
//! behavior, an entanglement oracle that answers measurement queries one
//! party at a time, and a referee/party pair speaking newline-delimited JSON
//! over TCP.

pub mod party;
pub mod protocol;
pub mod referee;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Behavior, GameError, ValidatedGame, NO_SIGNALING_TOL};

/// Rounds per RNG stream; chunking makes parallel and sequential runs fold
/// identical partial sums in the same order.
pub const MONTE_CARLO_CHUNK: u64 = 4096;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("behavior signals between subsets (violation {violation:e})")]
    SignalingBehavior { violation: f64 },
    #[error("party {party} was already queried in round {round}")]
    DuplicateQuery { round: u64, party: usize },
    #[error("party index {party} out of range")]
    UnknownParty { party: usize },
    #[error("input index {input} out of range for party {party}")]
    BadQueryInput { party: usize, input: usize },
    #[error("protocol violation: {detail}")]
    Protocol { detail: String },
    #[error("peer speaks protocol version {got}, expected {want}")]
    Version { got: u32, want: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Sample mean and standard error of the round utility.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub rounds: u64,
    pub mean: f64,
    pub std_error: f64,
}

/// Draws an index from nonnegative weights using one uniform variate.
/// Weights need not be normalized; the last positive weight absorbs any
/// floating-point shortfall.
pub(crate) fn sample_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.gen::<f64>() * total;
    let mut last_positive = 0usize;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = k;
            if target < w {
                return k;
            }
            target -= w;
        }
    }
    last_positive
}

struct ChunkStats {
    sum: f64,
    sum_sq: f64,
}

fn monte_carlo_chunk(
    game: &ValidatedGame,
    behavior: &Behavior,
    seed: u64,
    chunk: u64,
    rounds_in_chunk: u64,
) -> ChunkStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..rounds_in_chunk {
        let joint_in = sample_weighted(&mut rng, game.pi());
        let joint_out = sample_weighted(&mut rng, behavior.row(joint_in));
        let u = game.utility(joint_in, joint_out);
        sum += u;
        sum_sq += u * u;
    }
    ChunkStats { sum, sum_sq }
}

/// Estimates the average utility of playing `behavior` by sampling `rounds`
/// independent rounds: a joint input from the game's distribution, then a
/// joint output from the behavior row.
///
/// The estimate is a deterministic function of `(seed, rounds)` alone; chunked
/// RNG streams and an ordered reduction make parallel and sequential runs
/// agree bit for bit.
pub fn monte_carlo(
    game: &ValidatedGame,
    behavior: &Behavior,
    rounds: u64,
    seed: u64,
) -> Result<MonteCarloEstimate, HarnessError> {
    // Reject shape mismatches up front via the exact-average path.
    game.average_utility(behavior)?;
    if rounds == 0 {
        return Ok(MonteCarloEstimate {
            rounds: 0,
            mean: 0.0,
            std_error: 0.0,
        });
    }
    let chunks = rounds.div_ceil(MONTE_CARLO_CHUNK);
    let chunk_rounds =
        |c: u64| -> u64 { (rounds - c * MONTE_CARLO_CHUNK).min(MONTE_CARLO_CHUNK) };

    #[cfg(feature = "parallel")]
    let stats: Vec<ChunkStats> = {
        use rayon::prelude::*;
        (0..chunks)
            .into_par_iter()
            .map(|c| monte_carlo_chunk(game, behavior, seed, c, chunk_rounds(c)))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let stats: Vec<ChunkStats> = (0..chunks)
        .map(|c| monte_carlo_chunk(game, behavior, seed, c, chunk_rounds(c)))
        .collect();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in &stats {
        sum += s.sum;
        sum_sq += s.sum_sq;
    }
    let n = rounds as f64;
    let mean = sum / n;
    let variance = if rounds > 1 {
        ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        rounds,
        mean,
        std_error: (variance / n).sqrt(),
    })
}

struct RoundState {
    rng: ChaCha8Rng,
    /// Fixed (input, output) per party, filled as queries arrive.
    fixed: Vec<Option<(usize, usize)>>,
}

/// Answers per-party measurement queries so that, within any round, the
/// realized outputs are jointly distributed according to a fixed behavior.
///
/// Parties may query in any order and need not all query. This only works
/// when the behavior is non-signaling across every bipartition, because the
/// answer to an early query must not depend on inputs that have not been
/// chosen yet; construction fails otherwise.
pub struct EntanglementSession {
    behavior: Behavior,
    seed: u64,
    rounds: HashMap<u64, RoundState>,
}

impl EntanglementSession {
    pub fn new(behavior: Behavior, seed: u64) -> Result<Self, HarnessError> {
        let violation = behavior.subset_no_signaling_violation();
        if violation > NO_SIGNALING_TOL {
            return Err(HarnessError::SignalingBehavior { violation });
        }
        Ok(EntanglementSession {
            behavior,
            seed,
            rounds: HashMap::new(),
        })
    }

    pub fn behavior(&self) -> &Behavior {
        &self.behavior
    }

    /// Samples party `party`'s output for `round` given its `input`,
    /// conditioned on every output already handed out in the round.
    ///
    /// Unqueried parties are marginalized out at a fixed reference input;
    /// non-signaling makes that choice irrelevant up to tolerance.
    pub fn query(&mut self, round: u64, party: usize, input: usize) -> Result<usize, HarnessError> {
        let parties = self.behavior.input_shape().parties();
        if party >= parties {
            return Err(HarnessError::UnknownParty { party });
        }
        if input >= self.behavior.input_shape().size(party) {
            return Err(HarnessError::BadQueryInput { party, input });
        }
        let seed = self.seed;
        let state = self.rounds.entry(round).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(round);
            RoundState {
                rng,
                fixed: vec![None; parties],
            }
        });
        if state.fixed[party].is_some() {
            return Err(HarnessError::DuplicateQuery { round, party });
        }

        // Joint input: fixed parties keep theirs, the querying party uses
        // `input`, everyone else the reference input 0.
        let in_digits: Vec<usize> = (0..parties)
            .map(|k| {
                if k == party {
                    input
                } else {
                    state.fixed[k].map(|(i, _)| i).unwrap_or(0)
                }
            })
            .collect();
        let joint_in = self.behavior.input_shape().flatten(&in_digits);
        let row = self.behavior.row(joint_in);

        // Marginal weight of each candidate output for `party`, holding the
        // fixed parties at their realized outputs.
        let n_out = self.behavior.output_shape().size(party);
        let mut weights = vec![0.0f64; n_out];
        let mut out_digits = vec![0usize; parties];
        for (joint_out, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            self.behavior
                .output_shape()
                .unflatten_into(joint_out, &mut out_digits);
            let consistent = (0..parties).all(|k| match state.fixed[k] {
                Some((_, o)) => out_digits[k] == o,
                None => true,
            });
            if consistent {
                weights[out_digits[party]] += p;
            }
        }
        let output = sample_weighted(&mut state.rng, &weights);
        state.fixed[party] = Some((input, output));
        Ok(output)
    }

    /// Drops all bookkeeping for a round.
    pub fn finish_round(&mut self, round: u64) {
        self.rounds.remove(&round);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::game::Behavior;
    use crate::quantum::{behavior_from_quantum, phi_plus, xz_projectors, QuantumStrategy};
    use crate::shape::Shape;
    use std::f64::consts::PI;

    fn chsh_quantum_behavior() -> Behavior {
        let game = catalog::chsh();
        let meas = |a: f64, b: f64| -> Vec<Vec<_>> {
            vec![xz_projectors(a).to_vec(), xz_projectors(b).to_vec()]
        };
        let q = QuantumStrategy {
            dims: vec![2, 2],
            state: phi_plus(),
            measurements: vec![meas(0.0, PI / 4.0), meas(PI / 8.0, -PI / 8.0)],
        };
        behavior_from_quantum(&game, &q).unwrap()
    }

    #[test]
    fn monte_carlo_is_deterministic_and_near_the_exact_value() {
        let game = catalog::chsh();
        let behavior = chsh_quantum_behavior();
        let exact = game.average_utility(&behavior).unwrap();
        let a = monte_carlo(&game, &behavior, 100_000, 7).unwrap();
        let b = monte_carlo(&game, &behavior, 100_000, 7).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        assert!(
            (a.mean - exact).abs() < 5.0 * a.std_error + 1e-9,
            "mean {} vs exact {exact} with std error {}",
            a.mean,
            a.std_error
        );
    }

    #[test]
    fn monte_carlo_tracks_a_constant_output_strategy() {
        let game = catalog::chsh();
        // Both parties always answer their first output label, which wins
        // on three of the four equally likely inputs.
        let n_in = game.input_shape().len();
        let n_out = game.output_shape().len();
        let mut table = vec![0.0; n_in * n_out];
        for i in 0..n_in {
            table[i * n_out] = 1.0;
        }
        let behavior = Behavior::new(
            game.input_shape().clone(),
            game.output_shape().clone(),
            table,
        )
        .unwrap();
        let est = monte_carlo(&game, &behavior, 65_536, 3).unwrap();
        // Wins in exactly the rounds where the input is not (1, 1).
        assert!((est.mean - 0.75).abs() < 5.0 * est.std_error);
        assert!(est.std_error > 0.0);
    }

    #[test]
    fn monte_carlo_round_count_edge_cases() {
        let game = catalog::chsh();
        let behavior = chsh_quantum_behavior();
        let zero = monte_carlo(&game, &behavior, 0, 1).unwrap();
        assert_eq!(zero.rounds, 0);
        let one = monte_carlo(&game, &behavior, 1, 1).unwrap();
        assert!(one.mean == 0.0 || one.mean == 1.0);
        assert_eq!(one.std_error, 0.0);
    }

    #[test]
    fn session_rejects_signaling_behaviors() {
        // Party 0's output copies party 1's input: maximally signaling.
        let input_shape = Shape::new(vec![1, 2]);
        let output_shape = Shape::new(vec![2, 1]);
        let table = vec![
            1.0, 0.0, // input (0,0): output (0,0)
            0.0, 1.0, // input (0,1): output (1,0)
        ];
        let behavior = Behavior::new(input_shape, output_shape, table).unwrap();
        match EntanglementSession::new(behavior, 1) {
            Err(HarnessError::SignalingBehavior { violation }) => {
                assert!(violation > 0.9, "violation {violation}");
            }
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => panic!("expected SignalingBehavior"),
        }
    }

    #[test]
    fn session_rejects_duplicate_queries() {
        let behavior = chsh_quantum_behavior();
        let mut session = EntanglementSession::new(behavior, 5).unwrap();
        session.query(0, 0, 1).unwrap();
        assert!(matches!(
            session.query(0, 0, 0),
            Err(HarnessError::DuplicateQuery { round: 0, party: 0 })
        ));
        // A fresh round is fine.
        session.query(1, 0, 0).unwrap();
    }

    #[test]
    fn session_samples_match_the_behavior_statistics() {
        let game = catalog::chsh();
        let behavior = chsh_quantum_behavior();
        let expected = game.average_utility(&behavior).unwrap();
        let mut session = EntanglementSession::new(behavior, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rounds = 40_000u64;
        let mut wins = 0.0;
        for r in 0..rounds {
            let i0 = (rng.gen::<f64>() < 0.5) as usize;
            let i1 = (rng.gen::<f64>() < 0.5) as usize;
            // Query in varying order to exercise both conditioning paths.
            let (o0, o1) = if r % 2 == 0 {
                let o0 = session.query(r, 0, i0).unwrap();
                let o1 = session.query(r, 1, i1).unwrap();
                (o0, o1)
            } else {
                let o1 = session.query(r, 1, i1).unwrap();
                let o0 = session.query(r, 0, i0).unwrap();
                (o0, o1)
            };
            session.finish_round(r);
            let joint_in = game.input_shape().flatten(&[i0, i1]);
            let joint_out = game.output_shape().flatten(&[o0, o1]);
            wins += game.utility(joint_in, joint_out);
        }
        let mean = wins / rounds as f64;
        // Std error is about 0.0018 at this sample size.
        assert!(
            (mean - expected).abs() < 0.01,
            "empirical {mean} vs exact {expected}"
        );
    }

    #[test]
    fn session_respects_deterministic_behaviors_in_any_order() {
        let game = catalog::chsh();
        // Both parties output their input.
        let n_in = game.input_shape().len();
        let n_out = game.output_shape().len();
        let mut table = vec![0.0; n_in * n_out];
        let mut digits = vec![0usize; 2];
        for i in 0..n_in {
            game.input_shape().unflatten_into(i, &mut digits);
            let o = game.output_shape().flatten(&digits);
            table[i * n_out + o] = 1.0;
        }
        let behavior = Behavior::new(
            game.input_shape().clone(),
            game.output_shape().clone(),
            table,
        )
        .unwrap();
        let mut session = EntanglementSession::new(behavior, 0).unwrap();
        assert_eq!(session.query(0, 1, 1).unwrap(), 1);
        assert_eq!(session.query(0, 0, 0).unwrap(), 0);
        assert_eq!(session.query(1, 0, 1).unwrap(), 1);
        assert_eq!(session.query(1, 1, 0).unwrap(), 0);
    }
}
