//! Exact classical and communication-constrained values by exhaustive
//! enumeration.
//!
//! A deterministic strategy assigns each party an output for every point of
//! its view: its own input in the unconstrained case, or the joint input of
//! every party that can reach it in time in the latency-constrained case.
//! Strategies are numbered in mixed radix, party 0's first view point most
//! significant, so the strategy index order is the lexicographic order of
//! the flattened output-choice encoding. Enumeration walks disjoint index
//! chunks (in parallel when the `parallel` feature is on), keeps each
//! chunk's best strategy, and merges chunks left to right with ties going
//! to the smaller index; per-strategy values are accumulated in a fixed
//! order, so the parallel and sequential paths return identical results.

use num_bigint::BigUint;
use serde_json::{json, Map, Value};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::game::{GameError, ValidatedGame};
use crate::latency::CommGraph;
use crate::shape::Shape;

/// Default cap on how many strategies an enumeration may visit.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 100_000_000;

/// Strategies per enumeration chunk. Fixed so that chunk boundaries (and
/// therefore results) do not depend on thread count.
const CHUNK_SIZE: u64 = 1 << 14;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("strategy space has {size} strategies, over the budget of {budget}")]
    BudgetExceeded { size: BigUint, budget: u64 },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// One output choice per (party, own input).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicStrategy {
    /// `maps[party][input_index] = output_index`
    pub maps: Vec<Vec<usize>>,
}

impl DeterministicStrategy {
    pub(crate) fn check_fits(&self, game: &ValidatedGame) -> Result<(), GameError> {
        if self.maps.len() != game.parties() {
            return Err(GameError::DomainMismatch {
                party: self.maps.len().min(game.parties()),
                detail: format!(
                    "strategy covers {} parties, game has {}",
                    self.maps.len(),
                    game.parties()
                ),
            });
        }
        for (party, map) in self.maps.iter().enumerate() {
            if map.len() != game.input_shape().size(party) {
                return Err(GameError::DomainMismatch {
                    party,
                    detail: format!(
                        "map covers {} inputs, party has {}",
                        map.len(),
                        game.input_shape().size(party)
                    ),
                });
            }
            if let Some(&bad) = map.iter().find(|&&o| o >= game.output_shape().size(party)) {
                return Err(GameError::DomainMismatch {
                    party,
                    detail: format!(
                        "output index {bad} out of range ({} outputs)",
                        game.output_shape().size(party)
                    ),
                });
            }
        }
        Ok(())
    }

    /// Average utility of this strategy, summed in joint-input order. The
    /// enumeration computes values the same way, so a returned witness
    /// re-evaluates to the returned value exactly.
    pub fn value(&self, game: &ValidatedGame) -> Result<f64, GameError> {
        self.check_fits(game)?;
        let n_out = game.output_shape().len();
        let mut out_digits = vec![0usize; game.parties()];
        let mut total = 0.0;
        let mut i = 0usize;
        game.input_shape().for_each(|_, in_digits| {
            for (party, slot) in out_digits.iter_mut().enumerate() {
                *slot = self.maps[party][in_digits[party]];
            }
            let o = game.output_shape().flatten(&out_digits);
            total += game.pi()[i] * game.utility_table()[i * n_out + o];
            i += 1;
        });
        Ok(total)
    }

    /// Serializes as `{party: {input label: output label}}`.
    pub fn to_label_map(&self, game: &ValidatedGame) -> Value {
        let mut parties = Map::new();
        for (party, map) in self.maps.iter().enumerate() {
            let mut entries = Map::new();
            for (input, &output) in map.iter().enumerate() {
                entries.insert(
                    game.input_labels(party)[input].clone(),
                    json!(game.output_labels(party)[output]),
                );
            }
            parties.insert(party.to_string(), Value::Object(entries));
        }
        Value::Object(parties)
    }

    /// Parses the `{party: {input label: output label}}` form.
    pub fn from_label_map(game: &ValidatedGame, value: &Value) -> Result<Self, GameError> {
        let obj = value.as_object().ok_or_else(|| GameError::DomainMismatch {
            party: 0,
            detail: "witness must be a JSON object keyed by party index".to_string(),
        })?;
        let mut maps = Vec::with_capacity(game.parties());
        for party in 0..game.parties() {
            let entry = obj
                .get(&party.to_string())
                .and_then(Value::as_object)
                .ok_or_else(|| GameError::DomainMismatch {
                    party,
                    detail: "missing per-party map".to_string(),
                })?;
            let mut map = vec![0usize; game.input_shape().size(party)];
            for (slot, label) in map.iter_mut().zip(game.input_labels(party)) {
                let out_label =
                    entry
                        .get(label)
                        .and_then(Value::as_str)
                        .ok_or_else(|| GameError::DomainMismatch {
                            party,
                            detail: format!("no output for input {label:?}"),
                        })?;
                *slot = game.output_index(party, out_label)?;
            }
            maps.push(map);
        }
        Ok(DeterministicStrategy { maps })
    }
}

/// One output choice per (party, joint input of its sources).
///
/// `sources[party]` lists, in ascending order, the parties whose inputs this
/// party sees (always including itself); `maps[party]` is indexed by the
/// flattened tuple of those inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LcStrategy {
    pub sources: Vec<Vec<usize>>,
    pub maps: Vec<Vec<usize>>,
}

impl LcStrategy {
    /// Average utility, summed in joint-input order (see
    /// [`DeterministicStrategy::value`]).
    pub fn value(&self, game: &ValidatedGame) -> Result<f64, GameError> {
        let views = build_views(game, &self.sources);
        for (party, map) in self.maps.iter().enumerate() {
            if map.len() != views.domain_sizes[party] {
                return Err(GameError::DomainMismatch {
                    party,
                    detail: format!(
                        "map covers {} view points, expected {}",
                        map.len(),
                        views.domain_sizes[party]
                    ),
                });
            }
            if let Some(&bad) = map.iter().find(|&&o| o >= game.output_shape().size(party)) {
                return Err(GameError::DomainMismatch {
                    party,
                    detail: format!(
                        "output index {bad} out of range ({} outputs)",
                        game.output_shape().size(party)
                    ),
                });
            }
        }
        let n_out = game.output_shape().len();
        let mut out_digits = vec![0usize; game.parties()];
        let mut total = 0.0;
        for i in 0..game.input_shape().len() {
            for (party, slot) in out_digits.iter_mut().enumerate() {
                *slot = self.maps[party][views.dom_of_input[party][i]];
            }
            let o = game.output_shape().flatten(&out_digits);
            total += game.pi()[i] * game.utility_table()[i * n_out + o];
        }
        Ok(total)
    }

    /// Serializes as `{party: {input tuple label: output label}}`, the tuple
    /// being the source parties' input labels joined with commas.
    pub fn to_label_map(&self, game: &ValidatedGame) -> Value {
        let mut parties = Map::new();
        for (party, map) in self.maps.iter().enumerate() {
            let dom_shape = Shape::new(
                self.sources[party]
                    .iter()
                    .map(|&k| game.input_shape().size(k))
                    .collect(),
            );
            let mut entries = Map::new();
            for (dom, &output) in map.iter().enumerate() {
                let digits = dom_shape.unflatten(dom);
                let key = self.sources[party]
                    .iter()
                    .zip(&digits)
                    .map(|(&k, &d)| game.input_labels(k)[d].as_str())
                    .collect::<Vec<_>>()
                    .join(",");
                entries.insert(key, json!(game.output_labels(party)[output]));
            }
            parties.insert(party.to_string(), Value::Object(entries));
        }
        Value::Object(parties)
    }
}

/// Number of deterministic strategies: the product over parties of
/// `|outputs|^|inputs|`. Exact at any size.
pub fn strategy_space_size(game: &ValidatedGame) -> BigUint {
    let mut size = BigUint::from(1u32);
    for party in 0..game.parties() {
        size *= biguint_pow(
            game.output_shape().size(party) as u64,
            game.input_shape().size(party),
        );
    }
    size
}

/// Number of communication-constrained strategies under `comm`: the product
/// over parties of `|outputs|^(product of source input sizes)`.
pub fn lc_strategy_space_size(game: &ValidatedGame, comm: &CommGraph) -> BigUint {
    let mut size = BigUint::from(1u32);
    for party in 0..game.parties() {
        let dom: usize = comm
            .sources_for(party)
            .iter()
            .map(|&k| game.input_shape().size(k))
            .product();
        size *= biguint_pow(game.output_shape().size(party) as u64, dom);
    }
    size
}

fn biguint_pow(base: u64, exp: usize) -> BigUint {
    BigUint::from(base).pow(u32::try_from(exp).expect("view domain too large"))
}

#[derive(Debug, Clone)]
pub struct ClassicalSolution {
    pub value: f64,
    pub witness: DeterministicStrategy,
    /// Strategies actually evaluated; equals the strategy space size.
    pub visited: u64,
}

#[derive(Debug, Clone)]
pub struct LcSolution {
    pub value: f64,
    pub witness: LcStrategy,
    pub visited: u64,
}

/// Exact classical value and an optimal deterministic strategy.
///
/// Refuses to start if the strategy space exceeds `budget`. Among optimal
/// strategies the one with the smallest index (lexicographically smallest
/// encoding) is returned.
pub fn classical_value(
    game: &ValidatedGame,
    budget: u64,
) -> Result<ClassicalSolution, SolverError> {
    let own_view: Vec<Vec<usize>> = (0..game.parties()).map(|j| vec![j]).collect();
    let (value, digits, visited) = enumerate(game, &own_view, strategy_space_size(game), budget)?;
    Ok(ClassicalSolution {
        value,
        witness: DeterministicStrategy { maps: digits },
        visited,
    })
}

/// Exact optimal value when each party's output may depend on every input
/// that can reach it under `comm` (one hop, self always included).
pub fn lc_classical_value(
    game: &ValidatedGame,
    comm: &CommGraph,
    budget: u64,
) -> Result<LcSolution, SolverError> {
    assert_eq!(comm.parties(), game.parties(), "graph/game party mismatch");
    let sources: Vec<Vec<usize>> = (0..game.parties()).map(|j| comm.sources_for(j)).collect();
    let size = lc_strategy_space_size(game, comm);
    let (value, digits, visited) = enumerate(game, &sources, size, budget)?;
    Ok(LcSolution {
        value,
        witness: LcStrategy {
            sources,
            maps: digits,
        },
        visited,
    })
}

/// Per-party view bookkeeping shared by the evaluators and the enumerator.
struct Views {
    /// `dom_of_input[party][joint_input] = index into the party's view domain`
    dom_of_input: Vec<Vec<usize>>,
    domain_sizes: Vec<usize>,
}

fn build_views(game: &ValidatedGame, sources: &[Vec<usize>]) -> Views {
    let n_in = game.input_shape().len();
    let mut dom_of_input = Vec::with_capacity(game.parties());
    let mut domain_sizes = Vec::with_capacity(game.parties());
    for srcs in sources {
        let dom_shape = Shape::new(srcs.iter().map(|&k| game.input_shape().size(k)).collect());
        let mut lookup = vec![0usize; n_in];
        let mut digits = Vec::with_capacity(srcs.len());
        game.input_shape().for_each(|i, in_digits| {
            digits.clear();
            digits.extend(srcs.iter().map(|&k| in_digits[k]));
            lookup[i] = dom_shape.flatten(&digits);
        });
        domain_sizes.push(dom_shape.len());
        dom_of_input.push(lookup);
    }
    Views {
        dom_of_input,
        domain_sizes,
    }
}

struct ChunkBest {
    value: f64,
    index: u64,
    visited: u64,
}

/// Walks the whole strategy space and returns (best value, best digits,
/// visited count). `sources[party]` defines each party's view.
fn enumerate(
    game: &ValidatedGame,
    sources: &[Vec<usize>],
    size: BigUint,
    budget: u64,
) -> Result<(f64, Vec<Vec<usize>>, u64), SolverError> {
    if size > BigUint::from(budget) {
        return Err(SolverError::BudgetExceeded { size, budget });
    }
    let total: u64 = size.try_into().expect("size fits u64 under budget");
    let views = build_views(game, sources);

    // Flattened digit layout: party 0's view point 0 is most significant.
    let mut digit_radix = Vec::new();
    let mut digit_party = Vec::new();
    let mut digit_base = vec![0usize; game.parties()];
    for party in 0..game.parties() {
        digit_base[party] = digit_radix.len();
        for _ in 0..views.domain_sizes[party] {
            digit_radix.push(game.output_shape().size(party));
            digit_party.push(party);
        }
    }
    // affected[d] = joint inputs whose output changes with digit d.
    let n_in = game.input_shape().len();
    let mut affected: Vec<Vec<usize>> = vec![Vec::new(); digit_radix.len()];
    for i in 0..n_in {
        for party in 0..game.parties() {
            affected[digit_base[party] + views.dom_of_input[party][i]].push(i);
        }
    }
    // Output strides per party in the joint output index.
    let mut ostride = vec![1usize; game.parties()];
    for party in (0..game.parties().saturating_sub(1)).rev() {
        ostride[party] = ostride[party + 1] * game.output_shape().size(party + 1);
    }
    let n_out = game.output_shape().len();
    let pi_u: Vec<f64> = (0..n_in * n_out)
        .map(|slot| game.pi()[slot / n_out] * game.utility_table()[slot])
        .collect();

    let run_chunk = |chunk: u64| -> ChunkBest {
        let start = chunk * CHUNK_SIZE;
        let end = total.min(start + CHUNK_SIZE);
        // Decode the starting strategy.
        let mut digits = vec![0usize; digit_radix.len()];
        let mut rest = start;
        for d in (0..digits.len()).rev() {
            digits[d] = (rest % digit_radix[d] as u64) as usize;
            rest /= digit_radix[d] as u64;
        }
        // Current joint output per input, maintained incrementally.
        let mut out_of_input = vec![0usize; n_in];
        for i in 0..n_in {
            let mut o = 0usize;
            for party in 0..game.parties() {
                o += digits[digit_base[party] + views.dom_of_input[party][i]] * ostride[party];
            }
            out_of_input[i] = o;
        }
        let mut best = ChunkBest {
            value: f64::NEG_INFINITY,
            index: start,
            visited: 0,
        };
        for k in start..end {
            // Fixed summation order per strategy keeps values identical no
            // matter how the space is chunked.
            let mut value = 0.0;
            for (i, &o) in out_of_input.iter().enumerate() {
                value += pi_u[i * n_out + o];
            }
            best.visited += 1;
            if value > best.value {
                best.value = value;
                best.index = k;
            }
            if k + 1 == end {
                break;
            }
            // Odometer step, last digit fastest.
            let mut pos = digits.len() - 1;
            loop {
                let stride = ostride[digit_party[pos]];
                digits[pos] += 1;
                if digits[pos] < digit_radix[pos] {
                    for &i in &affected[pos] {
                        out_of_input[i] += stride;
                    }
                    break;
                }
                digits[pos] = 0;
                let rollback = (digit_radix[pos] - 1) * stride;
                for &i in &affected[pos] {
                    out_of_input[i] -= rollback;
                }
                pos -= 1;
            }
        }
        best
    };

    let chunk_count = total.div_ceil(CHUNK_SIZE);
    #[cfg(feature = "parallel")]
    let chunk_bests: Vec<ChunkBest> = (0..chunk_count).into_par_iter().map(run_chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let chunk_bests: Vec<ChunkBest> = (0..chunk_count).map(run_chunk).collect();

    // Left-to-right merge with strict improvement keeps the smallest index.
    let mut value = f64::NEG_INFINITY;
    let mut index = 0u64;
    let mut visited = 0u64;
    for chunk in chunk_bests {
        visited += chunk.visited;
        if chunk.value > value {
            value = chunk.value;
            index = chunk.index;
        }
    }

    // Decode the winning index back into per-party maps.
    let mut flat = vec![0usize; digit_radix.len()];
    let mut rest = index;
    for d in (0..flat.len()).rev() {
        flat[d] = (rest % digit_radix[d] as u64) as usize;
        rest /= digit_radix[d] as u64;
    }
    let maps: Vec<Vec<usize>> = (0..game.parties())
        .map(|party| {
            flat[digit_base[party]..digit_base[party] + views.domain_sizes[party]].to_vec()
        })
        .collect();
    Ok((value, maps, visited))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::game::GameSpec;
    use crate::latency::CommGraph;

    #[test]
    fn chsh_classical_value_is_three_quarters() {
        let game = catalog::chsh();
        let solution = classical_value(&game, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(solution.value, 0.75);
        assert_eq!(solution.visited, 16);
        // Smallest-index tie break: the all-zeros strategy is optimal.
        assert_eq!(solution.witness.maps, vec![vec![0, 0], vec![0, 0]]);
        assert_eq!(solution.witness.value(&game).unwrap(), solution.value);
    }

    #[test]
    fn space_sizes() {
        assert_eq!(strategy_space_size(&catalog::chsh()), BigUint::from(16u32));
        assert_eq!(strategy_space_size(&catalog::ghz()), BigUint::from(64u32));
        assert_eq!(
            strategy_space_size(&catalog::magic_square()),
            BigUint::from(262_144u32)
        );
        let single = ValidatedGame::validate(GameSpec {
            parties: 1,
            inputs: vec![vec!["x".into()]],
            outputs: vec![vec!["a".into(), "b".into(), "c".into()]],
            pi: vec![1.0],
            utility: vec![0.0, 1.0, 0.0],
        })
        .unwrap();
        assert_eq!(strategy_space_size(&single), BigUint::from(3u32));
    }

    #[test]
    fn budget_is_enforced() {
        let game = catalog::magic_square();
        let err = classical_value(&game, 1000).unwrap_err();
        match err {
            SolverError::BudgetExceeded { size, budget } => {
                assert_eq!(size, BigUint::from(262_144u32));
                assert_eq!(budget, 1000);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_graph_matches_classical_exactly() {
        let game = catalog::ghz();
        let classical = classical_value(&game, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let lc = lc_classical_value(
            &game,
            &CommGraph::empty(3),
            DEFAULT_ENUMERATION_BUDGET,
        )
        .unwrap();
        assert_eq!(classical.value, lc.value);
        assert_eq!(classical.visited, lc.visited);
        assert_eq!(classical.witness.maps, lc.witness.maps);
    }

    #[test]
    fn full_communication_wins_chsh() {
        let game = catalog::chsh();
        let lc = lc_classical_value(
            &game,
            &CommGraph::complete(2),
            DEFAULT_ENUMERATION_BUDGET,
        )
        .unwrap();
        assert_eq!(lc.value, 1.0);
        assert_eq!(lc.visited, 256);
        assert_eq!(lc.witness.value(&game).unwrap(), 1.0);
    }

    fn guess_your_neighbor() -> ValidatedGame {
        // Three parties, 1-bit inputs, party 0 must output party 1's input.
        let mut utility = Vec::new();
        for i in 0..8usize {
            let i1 = i >> 1 & 1;
            for o in 0..8usize {
                let o0 = o >> 2 & 1;
                utility.push(if o0 == i1 { 1.0 } else { 0.0 });
            }
        }
        ValidatedGame::validate(GameSpec {
            parties: 3,
            inputs: vec![vec!["0".into(), "1".into()]; 3],
            outputs: vec![vec!["0".into(), "1".into()]; 3],
            pi: vec![0.125; 8],
            utility,
        })
        .unwrap()
    }

    #[test]
    fn one_edge_unlocks_the_neighbor_game() {
        let game = guess_your_neighbor();
        let solo = lc_classical_value(&game, &CommGraph::empty(3), DEFAULT_ENUMERATION_BUDGET)
            .unwrap();
        assert_eq!(solo.value, 0.5);
        let mut comm = CommGraph::empty(3);
        comm.add_edge(1, 0);
        let linked = lc_classical_value(&game, &comm, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(linked.value, 1.0);
        assert_eq!(linked.witness.sources[0], vec![0, 1]);
    }

    #[test]
    fn witness_label_maps_round_trip() {
        let game = catalog::chsh();
        let solution = classical_value(&game, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let json = solution.witness.to_label_map(&game);
        let back = DeterministicStrategy::from_label_map(&game, &json).unwrap();
        assert_eq!(back, solution.witness);
    }
}
