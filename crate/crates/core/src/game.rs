//! Game definitions, behaviors, and the scoring rule.
//!
//! A game is a prior `pi` over joint inputs plus a utility table over
//! (joint input, joint output) pairs. A behavior is the conditional
//! distribution `p(outputs | inputs)` a set of parties realizes; the average
//! utility contracts the three tables together. Raw [`GameSpec`] values come
//! from JSON and are checked once into [`ValidatedGame`], after which the
//! solvers can index freely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classical::DeterministicStrategy;
use crate::shape::Shape;

/// Probability sums (the prior, mixture weights) must hit 1 this tightly.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Behavior rows are accepted if they sum to 1 within this slack.
pub const BEHAVIOR_ROW_TOL: f64 = 1e-9;
/// Default tolerance for no-signaling checks.
pub const NO_SIGNALING_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("party {party} has an empty {which} set")]
    EmptySet { party: usize, which: &'static str },
    #[error("party {party} {which} label {label:?} appears more than once")]
    DuplicateLabel {
        party: usize,
        which: &'static str,
        label: String,
    },
    #[error("{what}[{index}] is negative ({value})")]
    NegativeProbability {
        what: String,
        index: usize,
        value: f64,
    },
    #[error("{what} sums to {sum:e}, expected 1 within {tol:e}")]
    NonNormalizedDistribution { what: String, sum: f64, tol: f64 },
    #[error("{what} has {actual} entries, expected {expected}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("{what}[{index}] is not finite")]
    NonFinite { what: String, index: usize },
    #[error("party {party} has no {which} labeled {label:?}")]
    UnknownLabel {
        party: usize,
        which: &'static str,
        label: String,
    },
    #[error("strategy does not fit the game at party {party}: {detail}")]
    DomainMismatch { party: usize, detail: String },
    #[error("mixture weights invalid: {detail}")]
    BadWeights { detail: String },
}

/// A game as written on disk: label sets, a flat prior in joint-input order,
/// and a flat utility table (outer index joint input, inner joint output).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GameSpec {
    pub parties: usize,
    pub inputs: Vec<Vec<String>>,
    pub outputs: Vec<Vec<String>>,
    pub pi: Vec<f64>,
    pub utility: Vec<f64>,
}

/// A game whose tables have passed validation.
#[derive(Debug, Clone)]
pub struct ValidatedGame {
    inputs: Vec<Vec<String>>,
    outputs: Vec<Vec<String>>,
    input_shape: Shape,
    output_shape: Shape,
    pi: Vec<f64>,
    utility: Vec<f64>,
}

fn check_label_sets(
    sets: &[Vec<String>],
    which: &'static str,
    parties: usize,
) -> Result<(), GameError> {
    if sets.len() != parties {
        return Err(GameError::ShapeMismatch {
            what: which.to_string(),
            expected: parties,
            actual: sets.len(),
        });
    }
    for (party, labels) in sets.iter().enumerate() {
        if labels.is_empty() {
            return Err(GameError::EmptySet { party, which });
        }
        for (k, label) in labels.iter().enumerate() {
            if labels[..k].contains(label) {
                return Err(GameError::DuplicateLabel {
                    party,
                    which,
                    label: label.clone(),
                });
            }
        }
    }
    Ok(())
}

impl ValidatedGame {
    /// Checks a raw spec: nonempty duplicate-free label sets, a normalized
    /// nonnegative prior of the right length, and a finite utility table of
    /// the right length.
    pub fn validate(spec: GameSpec) -> Result<Self, GameError> {
        if spec.parties == 0 {
            return Err(GameError::ShapeMismatch {
                what: "parties".to_string(),
                expected: 1,
                actual: 0,
            });
        }
        check_label_sets(&spec.inputs, "inputs", spec.parties)?;
        check_label_sets(&spec.outputs, "outputs", spec.parties)?;

        let input_shape = Shape::new(spec.inputs.iter().map(Vec::len).collect());
        let output_shape = Shape::new(spec.outputs.iter().map(Vec::len).collect());

        if spec.pi.len() != input_shape.len() {
            return Err(GameError::ShapeMismatch {
                what: "pi".to_string(),
                expected: input_shape.len(),
                actual: spec.pi.len(),
            });
        }
        let mut sum = 0.0;
        for (index, &p) in spec.pi.iter().enumerate() {
            if !p.is_finite() {
                return Err(GameError::NonFinite {
                    what: "pi".to_string(),
                    index,
                });
            }
            if p < 0.0 {
                return Err(GameError::NegativeProbability {
                    what: "pi".to_string(),
                    index,
                    value: p,
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(GameError::NonNormalizedDistribution {
                what: "pi".to_string(),
                sum,
                tol: PROB_SUM_TOL,
            });
        }

        let table_len = input_shape.len() * output_shape.len();
        if spec.utility.len() != table_len {
            return Err(GameError::ShapeMismatch {
                what: "utility".to_string(),
                expected: table_len,
                actual: spec.utility.len(),
            });
        }
        if let Some(index) = spec.utility.iter().position(|u| !u.is_finite()) {
            return Err(GameError::NonFinite {
                what: "utility".to_string(),
                index,
            });
        }

        Ok(ValidatedGame {
            inputs: spec.inputs,
            outputs: spec.outputs,
            input_shape,
            output_shape,
            pi: spec.pi,
            utility: spec.utility,
        })
    }

    pub fn parties(&self) -> usize {
        self.input_shape.parties()
    }

    pub fn input_labels(&self, party: usize) -> &[String] {
        &self.inputs[party]
    }

    pub fn output_labels(&self, party: usize) -> &[String] {
        &self.outputs[party]
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &Shape {
        &self.output_shape
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Utility of a (joint input, joint output) pair of flat indices.
    pub fn utility(&self, joint_input: usize, joint_output: usize) -> f64 {
        self.utility[joint_input * self.output_shape.len() + joint_output]
    }

    pub fn utility_table(&self) -> &[f64] {
        &self.utility
    }

    pub fn utility_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &u in &self.utility {
            lo = lo.min(u);
            hi = hi.max(u);
        }
        (lo, hi)
    }

    pub fn input_index(&self, party: usize, label: &str) -> Result<usize, GameError> {
        self.inputs[party]
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| GameError::UnknownLabel {
                party,
                which: "input",
                label: label.to_string(),
            })
    }

    pub fn output_index(&self, party: usize, label: &str) -> Result<usize, GameError> {
        self.outputs[party]
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| GameError::UnknownLabel {
                party,
                which: "output",
                label: label.to_string(),
            })
    }

    /// Reconstructs the raw spec, e.g. for serialization or hashing.
    pub fn to_spec(&self) -> GameSpec {
        GameSpec {
            parties: self.parties(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            pi: self.pi.clone(),
            utility: self.utility.clone(),
        }
    }

    /// Average utility of a behavior under the game's prior:
    /// sum over joint inputs i and outputs o of `pi(i) p(o|i) U(o,i)`.
    /// Terms are accumulated in flat-index order, so repeat calls agree
    /// bit for bit.
    pub fn average_utility(&self, behavior: &Behavior) -> Result<f64, GameError> {
        self.check_behavior_shape(behavior)?;
        let n_out = self.output_shape.len();
        let mut total = 0.0;
        for (i, &weight) in self.pi.iter().enumerate() {
            let row = &behavior.table[i * n_out..(i + 1) * n_out];
            let mut row_value = 0.0;
            for (o, &p) in row.iter().enumerate() {
                row_value += p * self.utility[i * n_out + o];
            }
            total += weight * row_value;
        }
        Ok(total)
    }

    /// The behavior of a deterministic strategy: a point mass on the
    /// strategy's joint output for every joint input.
    pub fn behavior_from_deterministic(
        &self,
        strategy: &DeterministicStrategy,
    ) -> Result<Behavior, GameError> {
        strategy.check_fits(self)?;
        let n_in = self.input_shape.len();
        let n_out = self.output_shape.len();
        let mut table = vec![0.0; n_in * n_out];
        let mut out_digits = vec![0usize; self.parties()];
        self.input_shape.for_each(|i, in_digits| {
            for (party, slot) in out_digits.iter_mut().enumerate() {
                *slot = strategy.maps[party][in_digits[party]];
            }
            let o = self.output_shape.flatten(&out_digits);
            table[i * n_out + o] = 1.0;
        });
        Behavior::new(self.input_shape.clone(), self.output_shape.clone(), table)
    }

    fn check_behavior_shape(&self, behavior: &Behavior) -> Result<(), GameError> {
        if behavior.input_shape != self.input_shape || behavior.output_shape != self.output_shape {
            return Err(GameError::ShapeMismatch {
                what: "behavior".to_string(),
                expected: self.input_shape.len() * self.output_shape.len(),
                actual: behavior.table.len(),
            });
        }
        Ok(())
    }
}

/// Conditional distribution over joint outputs for every joint input,
/// stored row-major: `table[i * n_outputs + o]`. The JSON form carries the
/// per-party set sizes and the flat table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BehaviorFile", try_from = "BehaviorFile")]
pub struct Behavior {
    input_shape: Shape,
    output_shape: Shape,
    table: Vec<f64>,
}

/// Serialization mirror of [`Behavior`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BehaviorFile {
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    table: Vec<f64>,
}

impl From<Behavior> for BehaviorFile {
    fn from(b: Behavior) -> Self {
        BehaviorFile {
            inputs: b.input_shape.sizes().to_vec(),
            outputs: b.output_shape.sizes().to_vec(),
            table: b.table,
        }
    }
}

impl TryFrom<BehaviorFile> for Behavior {
    type Error = GameError;

    fn try_from(f: BehaviorFile) -> Result<Self, GameError> {
        for (party, &s) in f.inputs.iter().enumerate() {
            if s == 0 {
                return Err(GameError::EmptySet { party, which: "input" });
            }
        }
        for (party, &s) in f.outputs.iter().enumerate() {
            if s == 0 {
                return Err(GameError::EmptySet { party, which: "output" });
            }
        }
        if f.inputs.is_empty() || f.inputs.len() != f.outputs.len() {
            return Err(GameError::ShapeMismatch {
                what: "behavior party count".to_string(),
                expected: f.inputs.len().max(1),
                actual: f.outputs.len(),
            });
        }
        Behavior::new(Shape::new(f.inputs), Shape::new(f.outputs), f.table)
    }
}

impl Behavior {
    /// Validates entries (finite, nonnegative) and rows (sum to 1 within
    /// [`BEHAVIOR_ROW_TOL`]).
    pub fn new(input_shape: Shape, output_shape: Shape, table: Vec<f64>) -> Result<Self, GameError> {
        let n_in = input_shape.len();
        let n_out = output_shape.len();
        if table.len() != n_in * n_out {
            return Err(GameError::ShapeMismatch {
                what: "behavior table".to_string(),
                expected: n_in * n_out,
                actual: table.len(),
            });
        }
        for i in 0..n_in {
            let row = &table[i * n_out..(i + 1) * n_out];
            let mut sum = 0.0;
            for (o, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    return Err(GameError::NonFinite {
                        what: format!("behavior row {i}"),
                        index: o,
                    });
                }
                if p < 0.0 {
                    return Err(GameError::NegativeProbability {
                        what: format!("behavior row {i}"),
                        index: o,
                        value: p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > BEHAVIOR_ROW_TOL {
                return Err(GameError::NonNormalizedDistribution {
                    what: format!("behavior row {i}"),
                    sum,
                    tol: BEHAVIOR_ROW_TOL,
                });
            }
        }
        Ok(Behavior {
            input_shape,
            output_shape,
            table,
        })
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &Shape {
        &self.output_shape
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn prob(&self, joint_input: usize, joint_output: usize) -> f64 {
        self.table[joint_input * self.output_shape.len() + joint_output]
    }

    pub fn row(&self, joint_input: usize) -> &[f64] {
        let n_out = self.output_shape.len();
        &self.table[joint_input * n_out..(joint_input + 1) * n_out]
    }

    /// Largest deviation, over every proper party subset S, of the marginal
    /// of S's outputs from being independent of the other parties' inputs.
    ///
    /// The per-party [`no_signaling_check`] is the weakest member of this
    /// family; sampling parties one at a time (see the harness) relies on
    /// the full family, so sessions gate on this quantity.
    pub fn subset_no_signaling_violation(&self) -> f64 {
        let parties = self.input_shape.parties();
        let n_in = self.input_shape.len();
        let n_out = self.output_shape.len();
        let mut worst = 0.0f64;
        // Subsets encoded as bitmasks; skip the empty and full sets.
        for mask in 1..(1u32 << parties) - 1 {
            let in_subset: Vec<bool> = (0..parties).map(|j| mask >> j & 1 == 1).collect();
            let sub_in_sizes: Vec<usize> = (0..parties)
                .filter(|&j| in_subset[j])
                .map(|j| self.input_shape.size(j))
                .collect();
            let sub_out_sizes: Vec<usize> = (0..parties)
                .filter(|&j| in_subset[j])
                .map(|j| self.output_shape.size(j))
                .collect();
            let sub_in = Shape::new(sub_in_sizes);
            let sub_out = Shape::new(sub_out_sizes);
            // marginal[sub_i][sub_o] collected per full joint input; compare
            // across full inputs that restrict to the same sub_i.
            let mut lo = vec![f64::INFINITY; sub_in.len() * sub_out.len()];
            let mut hi = vec![f64::NEG_INFINITY; sub_in.len() * sub_out.len()];
            let mut in_digits = vec![0usize; parties];
            let mut out_digits = vec![0usize; parties];
            let mut sub_digits = Vec::with_capacity(parties);
            for i in 0..n_in {
                self.input_shape.unflatten_into(i, &mut in_digits);
                sub_digits.clear();
                sub_digits.extend(
                    (0..parties).filter(|&j| in_subset[j]).map(|j| in_digits[j]),
                );
                let sub_i = sub_in.flatten(&sub_digits);
                let mut marginal = vec![0.0f64; sub_out.len()];
                for o in 0..n_out {
                    self.output_shape.unflatten_into(o, &mut out_digits);
                    sub_digits.clear();
                    sub_digits.extend(
                        (0..parties).filter(|&j| in_subset[j]).map(|j| out_digits[j]),
                    );
                    marginal[sub_out.flatten(&sub_digits)] += self.table[i * n_out + o];
                }
                for (so, &m) in marginal.iter().enumerate() {
                    let slot = sub_i * sub_out.len() + so;
                    lo[slot] = lo[slot].min(m);
                    hi[slot] = hi[slot].max(m);
                }
            }
            for (l, h) in lo.iter().zip(&hi) {
                if h.is_finite() {
                    worst = worst.max(h - l);
                }
            }
        }
        worst
    }
}

/// Outcome of a no-signaling check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NoSignalingReport {
    pub pass: bool,
    pub max_violation: f64,
}

/// Checks that each party's output marginal, given its own input, does not
/// depend on the other parties' inputs. `max_violation` is the largest
/// spread observed over any (party, input, output) marginal.
pub fn no_signaling_check(behavior: &Behavior, tol: f64) -> NoSignalingReport {
    let parties = behavior.input_shape().parties();
    let n_in = behavior.input_shape().len();
    let n_out = behavior.output_shape().len();
    let mut max_violation = 0.0f64;
    let mut in_digits = vec![0usize; parties];
    let mut out_digits = vec![0usize; parties];
    for j in 0..parties {
        let my_inputs = behavior.input_shape().size(j);
        let my_outputs = behavior.output_shape().size(j);
        let mut lo = vec![f64::INFINITY; my_inputs * my_outputs];
        let mut hi = vec![f64::NEG_INFINITY; my_inputs * my_outputs];
        for i in 0..n_in {
            behavior.input_shape().unflatten_into(i, &mut in_digits);
            let my_i = in_digits[j];
            let mut marginal = vec![0.0f64; my_outputs];
            for o in 0..n_out {
                behavior.output_shape().unflatten_into(o, &mut out_digits);
                marginal[out_digits[j]] += behavior.table()[i * n_out + o];
            }
            for (my_o, &m) in marginal.iter().enumerate() {
                let slot = my_i * my_outputs + my_o;
                lo[slot] = lo[slot].min(m);
                hi[slot] = hi[slot].max(m);
            }
        }
        for (l, h) in lo.iter().zip(&hi) {
            if h.is_finite() {
                max_violation = max_violation.max(h - l);
            }
        }
    }
    NoSignalingReport {
        pass: max_violation <= tol,
        max_violation,
    }
}

/// Convex combination of behaviors over a shared shape. Weights must be
/// nonnegative and sum to 1 within [`PROB_SUM_TOL`].
pub fn mix_behaviors(components: &[(f64, &Behavior)]) -> Result<Behavior, GameError> {
    let (_, first) = components.first().ok_or_else(|| GameError::BadWeights {
        detail: "mixture has no components".to_string(),
    })?;
    let mut sum = 0.0;
    for &(w, _) in components {
        if !w.is_finite() || w < 0.0 {
            return Err(GameError::BadWeights {
                detail: format!("weight {w} is not a probability"),
            });
        }
        sum += w;
    }
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(GameError::BadWeights {
            detail: format!("weights sum to {sum}, expected 1 within {PROB_SUM_TOL:e}"),
        });
    }
    let mut table = vec![0.0; first.table.len()];
    for &(w, b) in components {
        if b.input_shape != first.input_shape || b.output_shape != first.output_shape {
            return Err(GameError::ShapeMismatch {
                what: "mixture component".to_string(),
                expected: first.table.len(),
                actual: b.table.len(),
            });
        }
        for (slot, &p) in table.iter_mut().zip(&b.table) {
            *slot += w * p;
        }
    }
    Behavior::new(first.input_shape.clone(), first.output_shape.clone(), table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::classical::DeterministicStrategy;

    fn chsh() -> ValidatedGame {
        catalog::chsh()
    }

    fn uniform_behavior(game: &ValidatedGame) -> Behavior {
        let n_in = game.input_shape().len();
        let n_out = game.output_shape().len();
        let p = 1.0 / n_out as f64;
        Behavior::new(
            game.input_shape().clone(),
            game.output_shape().clone(),
            vec![p; n_in * n_out],
        )
        .unwrap()
    }

    #[test]
    fn uniform_behavior_on_chsh_scores_half() {
        let game = chsh();
        let value = game.average_utility(&uniform_behavior(&game)).unwrap();
        assert!((value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn all_zeros_strategy_on_chsh_scores_three_quarters() {
        let game = chsh();
        let strategy = DeterministicStrategy {
            maps: vec![vec![0, 0], vec![0, 0]],
        };
        let behavior = game.behavior_from_deterministic(&strategy).unwrap();
        let value = game.average_utility(&behavior).unwrap();
        assert_eq!(value, 0.75);
    }

    #[test]
    fn deterministic_behavior_never_signals() {
        let game = chsh();
        for flat in 0..16 {
            let strategy = DeterministicStrategy {
                maps: vec![vec![flat >> 3 & 1, flat >> 2 & 1], vec![flat >> 1 & 1, flat & 1]],
            };
            let behavior = game.behavior_from_deterministic(&strategy).unwrap();
            let report = no_signaling_check(&behavior, 0.0);
            assert!(report.pass);
            assert_eq!(report.max_violation, 0.0);
        }
    }

    #[test]
    fn signaling_behavior_is_flagged() {
        let game = chsh();
        // Party 1 outputs party 0's input: p(o1 = i0) = 1.
        let mut table = vec![0.0; 16];
        let in_shape = game.input_shape().clone();
        let out_shape = game.output_shape().clone();
        in_shape.for_each(|i, digits| {
            let o = out_shape.flatten(&[0, digits[0]]);
            table[i * 4 + o] = 1.0;
        });
        let behavior = Behavior::new(in_shape, out_shape, table).unwrap();
        let report = no_signaling_check(&behavior, NO_SIGNALING_TOL);
        assert!(!report.pass);
        assert_eq!(report.max_violation, 1.0);
        assert_eq!(behavior.subset_no_signaling_violation(), 1.0);
    }

    #[test]
    fn mixture_interpolates_average_utility() {
        let game = chsh();
        let a = game
            .behavior_from_deterministic(&DeterministicStrategy {
                maps: vec![vec![0, 0], vec![0, 0]],
            })
            .unwrap();
        let b = uniform_behavior(&game);
        let mix = mix_behaviors(&[(0.25, &a), (0.75, &b)]).unwrap();
        let lhs = game.average_utility(&mix).unwrap();
        let rhs = 0.25 * game.average_utility(&a).unwrap() + 0.75 * game.average_utility(&b).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn mixture_weight_errors() {
        let game = chsh();
        let b = uniform_behavior(&game);
        assert!(matches!(
            mix_behaviors(&[(0.6, &b), (0.6, &b)]),
            Err(GameError::BadWeights { .. })
        ));
        assert!(matches!(
            mix_behaviors(&[(-0.5, &b), (1.5, &b)]),
            Err(GameError::BadWeights { .. })
        ));
        assert!(matches!(mix_behaviors(&[]), Err(GameError::BadWeights { .. })));
    }

    #[test]
    fn validation_rejects_bad_tables() {
        let mut spec = chsh().to_spec();
        spec.pi[0] = -0.25;
        spec.pi[1] = 0.75;
        assert!(matches!(
            ValidatedGame::validate(spec),
            Err(GameError::NegativeProbability { .. })
        ));

        let mut spec = chsh().to_spec();
        spec.pi[0] = 0.3;
        assert!(matches!(
            ValidatedGame::validate(spec),
            Err(GameError::NonNormalizedDistribution { .. })
        ));

        let mut spec = chsh().to_spec();
        spec.utility.pop();
        assert!(matches!(
            ValidatedGame::validate(spec),
            Err(GameError::ShapeMismatch { .. })
        ));

        let mut spec = chsh().to_spec();
        spec.utility[3] = f64::NAN;
        assert!(matches!(
            ValidatedGame::validate(spec),
            Err(GameError::NonFinite { .. })
        ));

        let mut spec = chsh().to_spec();
        spec.outputs[1].clear();
        assert!(matches!(
            ValidatedGame::validate(spec),
            Err(GameError::EmptySet { party: 1, .. })
        ));

        let mut spec = chsh().to_spec();
        spec.inputs[0][1] = "0".to_string();
        assert!(matches!(
            ValidatedGame::validate(spec),
            Err(GameError::DuplicateLabel { .. })
        ));
    }

    #[test]
    fn behavior_rejects_unnormalized_rows() {
        let game = chsh();
        let mut table = vec![0.25; 16];
        table[0] = 0.5;
        assert!(matches!(
            Behavior::new(game.input_shape().clone(), game.output_shape().clone(), table),
            Err(GameError::NonNormalizedDistribution { .. })
        ));
    }

    #[test]
    fn game_spec_round_trips_through_json() {
        let spec = chsh().to_spec();
        let text = serde_json::to_string(&spec).unwrap();
        let back: GameSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
