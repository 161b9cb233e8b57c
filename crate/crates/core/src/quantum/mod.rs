//! Quantum strategies for nonlocal games: shared-state plus projective
//! measurements, exact behavior extraction by state-vector simulation, and a
//! seesaw ascent that alternates measurement and state updates to produce
//! lower-bound witnesses on the entangled value.

pub mod linalg;


use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Behavior, GameError, ValidatedGame, BEHAVIOR_ROW_TOL};
use crate::shape::Shape;
use linalg::{
    apply_local, canonical_phase, hermitian_eigen_desc, hermitize, kron_chain, max_abs,
    partial_outer, random_state, random_unitary, CMat, CVec,
};

/// Largest allowed product of local dimensions for simulation and seesaw.
pub const DIM_PRODUCT_CAP: usize = 4096;
/// Tolerance on the state vector's norm.
pub const STATE_NORM_TOL: f64 = 1e-10;
/// Tolerance on Hermiticity of each measurement operator.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Tolerance on idempotence and mutual orthogonality of projectors.
pub const IDEMPOTENT_TOL: f64 = 1e-9;
/// Tolerance on each measurement family summing to the identity.
pub const COMPLETENESS_TOL: f64 = 1e-9;
/// Probabilities may undershoot zero by at most this before it is an error.
pub const NEGATIVE_PROB_CLAMP: f64 = 1e-12;
/// Per-iteration slack allowed on the seesaw's nondecreasing objective.
pub const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("product of local dimensions is {product}, which exceeds the cap of {cap}")]
    DimensionCap { product: usize, cap: usize },
    #[error("state vector norm is {norm}, expected 1 within {STATE_NORM_TOL:e}")]
    InvalidState { norm: f64 },
    #[error("strategy shape problem: {detail}")]
    ShapeMismatch { detail: String },
    #[error("measurement for party {party}, input {input} is not projective: {detail}")]
    NonProjective {
        party: usize,
        input: usize,
        detail: String,
    },
    #[error(
        "measurement for party {party}, input {input} does not sum to the identity \
         (residual {residual:e})"
    )]
    IncompleteMeasurement {
        party: usize,
        input: usize,
        residual: f64,
    },
    #[error("behavior row for joint input {joint_input} sums to {sum}, beyond repair tolerance")]
    NumericalDrift { joint_input: usize, sum: f64 },
    #[error("bad seesaw config: {detail}")]
    BadConfig { detail: String },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// A shared pure state on a tensor product of local spaces together with one
/// projective measurement per (party, input), holding one operator per output.
///
/// `measurements[party][input][output]` is a `dims[party]`-square complex
/// matrix. The JSON form flattens complex data as interleaved `[re, im, ...]`
/// arrays with matrices in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "QuantumStrategyFile", try_from = "QuantumStrategyFile")]
pub struct QuantumStrategy {
    pub dims: Vec<usize>,
    pub state: CVec,
    pub measurements: Vec<Vec<Vec<CMat>>>,
}

/// Serialization mirror of [`QuantumStrategy`] with interleaved real/imaginary
/// parts, kept structural so files round-trip bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantumStrategyFile {
    dims: Vec<usize>,
    state: Vec<f64>,
    measurements: Vec<Vec<Vec<Vec<f64>>>>,
}

fn pack_complex(data: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len() * 2);
    for z in data {
        out.push(z.re);
        out.push(z.im);
    }
    out
}

fn unpack_complex(data: &[f64], what: &str) -> Result<Vec<Complex64>, String> {
    if data.len() % 2 != 0 {
        return Err(format!("{what} has odd length {}", data.len()));
    }
    Ok(data
        .chunks_exact(2)
        .map(|c| Complex64::new(c[0], c[1]))
        .collect())
}

impl From<QuantumStrategy> for QuantumStrategyFile {
    fn from(q: QuantumStrategy) -> Self {
        QuantumStrategyFile {
            dims: q.dims.clone(),
            state: pack_complex(q.state.as_slice()),
            measurements: q
                .measurements
                .iter()
                .map(|per_input| {
                    per_input
                        .iter()
                        .map(|per_output| {
                            per_output
                                .iter()
                                .map(|m| {
                                    let rows: Vec<Complex64> = (0..m.nrows())
                                        .flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)]))
                                        .collect();
                                    pack_complex(&rows)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<QuantumStrategyFile> for QuantumStrategy {
    type Error = String;

    fn try_from(f: QuantumStrategyFile) -> Result<Self, String> {
        let state = unpack_complex(&f.state, "state")?;
        if f.measurements.len() != f.dims.len() {
            return Err(format!(
                "{} measurement families for {} parties",
                f.measurements.len(),
                f.dims.len()
            ));
        }
        let mut measurements = Vec::with_capacity(f.measurements.len());
        for (party, per_input) in f.measurements.iter().enumerate() {
            let d = f.dims[party];
            let mut inputs = Vec::with_capacity(per_input.len());
            for (input, per_output) in per_input.iter().enumerate() {
                let mut outputs = Vec::with_capacity(per_output.len());
                for (output, flat) in per_output.iter().enumerate() {
                    let entries = unpack_complex(
                        flat,
                        &format!("operator (party {party}, input {input}, output {output})"),
                    )?;
                    if entries.len() != d * d {
                        return Err(format!(
                            "operator (party {party}, input {input}, output {output}) has \
                             {} entries, expected {}",
                            entries.len(),
                            d * d
                        ));
                    }
                    outputs.push(CMat::from_row_slice(d, d, &entries));
                }
                inputs.push(outputs);
            }
            measurements.push(inputs);
        }
        Ok(QuantumStrategy {
            dims: f.dims,
            state: CVec::from_vec(state),
            measurements,
        })
    }
}

/// Worst residuals found while validating a strategy, all entrywise max-abs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StrategyReport {
    pub state_norm_error: f64,
    pub worst_hermitian: f64,
    pub worst_idempotent: f64,
    pub worst_orthogonality: f64,
    pub worst_completeness: f64,
}

/// Checks that the state is normalized and that every measurement family is a
/// complete set of orthogonal projectors, within the module tolerances.
pub fn validate_qstrategy(q: &QuantumStrategy) -> Result<StrategyReport, QuantumError> {
    if q.dims.is_empty() {
        return Err(QuantumError::ShapeMismatch {
            detail: "no parties".into(),
        });
    }
    if q.dims.iter().any(|&d| d == 0) {
        return Err(QuantumError::ShapeMismatch {
            detail: "zero local dimension".into(),
        });
    }
    let total: usize = q.dims.iter().product();
    if q.state.len() != total {
        return Err(QuantumError::ShapeMismatch {
            detail: format!(
                "state has {} amplitudes, dims {:?} require {}",
                q.state.len(),
                q.dims,
                total
            ),
        });
    }
    if q.measurements.len() != q.dims.len() {
        return Err(QuantumError::ShapeMismatch {
            detail: format!(
                "{} measurement families for {} parties",
                q.measurements.len(),
                q.dims.len()
            ),
        });
    }
    if !q.state.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(QuantumError::InvalidState { norm: f64::NAN });
    }
    let norm = q.state.norm();
    let mut report = StrategyReport {
        state_norm_error: (norm - 1.0).abs(),
        worst_hermitian: 0.0,
        worst_idempotent: 0.0,
        worst_orthogonality: 0.0,
        worst_completeness: 0.0,
    };
    if report.state_norm_error > STATE_NORM_TOL {
        return Err(QuantumError::InvalidState { norm });
    }
    for (party, per_input) in q.measurements.iter().enumerate() {
        let d = q.dims[party];
        for (input, ops) in per_input.iter().enumerate() {
            if ops.is_empty() {
                return Err(QuantumError::ShapeMismatch {
                    detail: format!("party {party}, input {input} has no operators"),
                });
            }
            let mut sum = CMat::zeros(d, d);
            for (output, op) in ops.iter().enumerate() {
                if op.nrows() != d || op.ncols() != d {
                    return Err(QuantumError::ShapeMismatch {
                        detail: format!(
                            "operator (party {party}, input {input}, output {output}) is \
                             {}x{}, expected {d}x{d}",
                            op.nrows(),
                            op.ncols()
                        ),
                    });
                }
                if !op.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                    return Err(QuantumError::NonProjective {
                        party,
                        input,
                        detail: format!("output {output} has non-finite entries"),
                    });
                }
                let herm = max_abs(&(op - op.adjoint()));
                report.worst_hermitian = report.worst_hermitian.max(herm);
                if herm > HERMITIAN_TOL {
                    return Err(QuantumError::NonProjective {
                        party,
                        input,
                        detail: format!("output {output} is not Hermitian (residual {herm:e})"),
                    });
                }
                let idem = max_abs(&(op * op - op));
                report.worst_idempotent = report.worst_idempotent.max(idem);
                if idem > IDEMPOTENT_TOL {
                    return Err(QuantumError::NonProjective {
                        party,
                        input,
                        detail: format!("output {output} is not idempotent (residual {idem:e})"),
                    });
                }
                sum += op;
            }
            for a in 0..ops.len() {
                for b in (a + 1)..ops.len() {
                    let cross = max_abs(&(&ops[a] * &ops[b]));
                    report.worst_orthogonality = report.worst_orthogonality.max(cross);
                    if cross > IDEMPOTENT_TOL {
                        return Err(QuantumError::NonProjective {
                            party,
                            input,
                            detail: format!(
                                "outputs {a} and {b} overlap (residual {cross:e})"
                            ),
                        });
                    }
                }
            }
            let identity_gap = max_abs(&(sum - CMat::identity(d, d)));
            report.worst_completeness = report.worst_completeness.max(identity_gap);
            if identity_gap > COMPLETENESS_TOL {
                return Err(QuantumError::IncompleteMeasurement {
                    party,
                    input,
                    residual: identity_gap,
                });
            }
        }
    }
    Ok(report)
}

fn check_strategy_matches_game(
    game: &ValidatedGame,
    q: &QuantumStrategy,
) -> Result<(), QuantumError> {
    if q.dims.len() != game.parties() {
        return Err(QuantumError::ShapeMismatch {
            detail: format!(
                "strategy has {} parties, game has {}",
                q.dims.len(),
                game.parties()
            ),
        });
    }
    for party in 0..game.parties() {
        let n_inputs = game.input_shape().sizes()[party];
        let n_outputs = game.output_shape().sizes()[party];
        if q.measurements[party].len() != n_inputs {
            return Err(QuantumError::ShapeMismatch {
                detail: format!(
                    "party {party} has {} measurement settings, game has {n_inputs} inputs",
                    q.measurements[party].len()
                ),
            });
        }
        for (input, ops) in q.measurements[party].iter().enumerate() {
            if ops.len() != n_outputs {
                return Err(QuantumError::ShapeMismatch {
                    detail: format!(
                        "party {party}, input {input} has {} operators, game has {n_outputs} \
                         outputs",
                        ops.len()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Exact behavior of a validated quantum strategy under Born's rule, computed
/// by applying each party's projector to the shared state.
///
/// Tiny negative probabilities (at most `NEGATIVE_PROB_CLAMP` in magnitude)
/// are clamped to zero and each row is renormalized; larger drift is an error.
pub fn behavior_from_quantum(
    game: &ValidatedGame,
    q: &QuantumStrategy,
) -> Result<Behavior, QuantumError> {
    validate_qstrategy(q)?;
    check_strategy_matches_game(game, q)?;
    let total: usize = q.dims.iter().product();
    if total > DIM_PRODUCT_CAP {
        return Err(QuantumError::DimensionCap {
            product: total,
            cap: DIM_PRODUCT_CAP,
        });
    }
    let n_in = game.input_shape().len();
    let n_out = game.output_shape().len();
    let mut table = vec![0.0f64; n_in * n_out];
    let mut in_digits = vec![0usize; game.parties()];
    let mut out_digits = vec![0usize; game.parties()];
    for joint_in in 0..n_in {
        game.input_shape().unflatten_into(joint_in, &mut in_digits);
        let row = &mut table[joint_in * n_out..(joint_in + 1) * n_out];
        for (joint_out, slot) in row.iter_mut().enumerate() {
            game.output_shape().unflatten_into(joint_out, &mut out_digits);
            let mut chi = q.state.clone();
            for party in 0..game.parties() {
                let op = &q.measurements[party][in_digits[party]][out_digits[party]];
                chi = apply_local(&chi, &q.dims, party, op);
            }
            let p = q.state.dotc(&chi).re;
            if p < -NEGATIVE_PROB_CLAMP {
                return Err(QuantumError::NumericalDrift {
                    joint_input: joint_in,
                    sum: p,
                });
            }
            *slot = p.max(0.0);
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > BEHAVIOR_ROW_TOL {
            return Err(QuantumError::NumericalDrift {
                joint_input: joint_in,
                sum,
            });
        }
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    Ok(Behavior::new(
        game.input_shape().clone(),
        game.output_shape().clone(),
        table,
    )?)
}

/// Knobs for the seesaw ascent. All restarts run the same number of
/// iterations unless they converge early.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeesawConfig {
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Converged when the objective improves by less than this between
    /// consecutive iterations.
    pub convergence_eps: f64,
}

impl Default for SeesawConfig {
    fn default() -> Self {
        SeesawConfig {
            max_iters: 200,
            restarts: 8,
            seed: 0,
            convergence_eps: 1e-12,
        }
    }
}

/// Result of a seesaw run: the best strategy across restarts, its objective
/// value, and the per-iteration objective trace of the winning restart.
#[derive(Debug, Clone)]
pub struct SeesawOutcome {
    pub value: f64,
    pub strategy: QuantumStrategy,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub best_restart: usize,
}

/// One output's worth of bookkeeping during the ascent: an orthonormal basis
/// per (party, input) plus an output label per basis column. Projectors are
/// sums of rank-one columns sharing a label, so projectivity and completeness
/// hold by construction.
#[derive(Clone)]
struct LabeledBasis {
    basis: CMat,
    labels: Vec<usize>,
}

impl LabeledBasis {
    fn projector(&self, d: usize, output: usize) -> CMat {
        let mut p = CMat::zeros(d, d);
        for (col, &label) in self.labels.iter().enumerate() {
            if label == output {
                let c = self.basis.column(col);
                p += c * c.adjoint();
            }
        }
        p
    }
}

struct RestartResult {
    value: f64,
    state: CVec,
    meas: Vec<Vec<LabeledBasis>>,
    trace: Vec<f64>,
    converged: bool,
}

use crate::seeding::splitmix64_at;

/// Precomputed sparse utility terms: joint input, joint output, pi * utility.
struct WeightedTerms {
    terms: Vec<(usize, usize, f64)>,
}

fn weighted_terms(game: &ValidatedGame) -> WeightedTerms {
    let n_in = game.input_shape().len();
    let n_out = game.output_shape().len();
    let mut terms = Vec::new();
    for i in 0..n_in {
        let w = game.pi()[i];
        if w == 0.0 {
            continue;
        }
        for o in 0..n_out {
            let u = game.utility(i, o);
            if u != 0.0 {
                terms.push((i, o, w * u));
            }
        }
    }
    WeightedTerms { terms }
}

/// The game operator for fixed measurements: sum over weighted terms of the
/// tensor product of each party's projector. The state update takes its top
/// eigenvector.
fn game_operator(
    game: &ValidatedGame,
    dims: &[usize],
    meas: &[Vec<LabeledBasis>],
    terms: &WeightedTerms,
) -> CMat {
    let total: usize = dims.iter().product();
    let parties = game.parties();
    let mut in_digits = vec![0usize; parties];
    let mut out_digits = vec![0usize; parties];
    let mut g = CMat::zeros(total, total);
    for &(i, o, w) in &terms.terms {
        game.input_shape().unflatten_into(i, &mut in_digits);
        game.output_shape().unflatten_into(o, &mut out_digits);
        let factors: Vec<CMat> = (0..parties)
            .map(|j| meas[j][in_digits[j]].projector(dims[j], out_digits[j]))
            .collect();
        let refs: Vec<&CMat> = factors.iter().collect();
        g += kron_chain(&refs) * Complex64::new(w, 0.0);
    }
    hermitize(&g)
}

/// Effective operators for one (party, input): `eff[o]` is the Hermitian
/// matrix whose trace against a candidate projector for output `o` gives that
/// projector's contribution to the objective, everything else held fixed.
fn effective_operators(
    game: &ValidatedGame,
    dims: &[usize],
    state: &CVec,
    meas: &[Vec<LabeledBasis>],
    party: usize,
    input: usize,
) -> Vec<CMat> {
    let parties = game.parties();
    let d = dims[party];
    let n_out_local = game.output_shape().sizes()[party];
    let out_stride: usize = game.output_shape().sizes()[party + 1..].iter().product();
    let mut eff = vec![CMat::zeros(d, d); n_out_local];
    let mut in_digits = vec![0usize; parties];

    // Joint outputs of the other parties, as a shape walk with this party's
    // digit pinned to zero; the true joint index is rest + o * out_stride.
    let other_out_sizes: Vec<usize> = (0..parties)
        .filter(|&k| k != party)
        .map(|k| game.output_shape().sizes()[k])
        .collect();
    let other_shape = if other_out_sizes.is_empty() {
        None
    } else {
        Some(Shape::new(other_out_sizes))
    };

    let n_in = game.input_shape().len();
    for i in 0..n_in {
        let w = game.pi()[i];
        if w == 0.0 {
            continue;
        }
        game.input_shape().unflatten_into(i, &mut in_digits);
        if in_digits[party] != input {
            continue;
        }
        let mut visit = |other_digits: &[usize]| {
            // Rebuild the joint output index with this party's digit zeroed.
            let mut full = vec![0usize; parties];
            let mut idx = 0;
            for k in 0..parties {
                if k != party {
                    full[k] = other_digits[idx];
                    idx += 1;
                }
            }
            let rest = game.output_shape().flatten(&full);
            // Skip terms that cannot move the objective.
            let relevant = (0..n_out_local)
                .any(|o| game.utility(i, rest + o * out_stride) != 0.0);
            if !relevant {
                return;
            }
            let mut chi = state.clone();
            for k in 0..parties {
                if k == party {
                    continue;
                }
                let op = meas[k][in_digits[k]].projector(dims[k], full[k]);
                chi = apply_local(&chi, dims, k, &op);
            }
            let t = partial_outer(state, &chi, dims, party);
            for (o, acc) in eff.iter_mut().enumerate() {
                let u = game.utility(i, rest + o * out_stride);
                if u != 0.0 {
                    *acc += &t * Complex64::new(w * u, 0.0);
                }
            }
        };
        match &other_shape {
            Some(shape) => shape.for_each(|_, digits| visit(digits)),
            None => visit(&[]),
        }
    }
    eff.iter().map(hermitize).collect()
}

/// Objective contribution of one labeled basis against its effective
/// operators.
fn basis_objective(lb: &LabeledBasis, eff: &[CMat]) -> f64 {
    let mut total = 0.0;
    for (col, &label) in lb.labels.iter().enumerate() {
        let c = lb.basis.column(col);
        let v = (c.adjoint() * &eff[label] * c)[(0, 0)].re;
        total += v;
    }
    total
}

/// Optimal re-split of the span of the columns currently labeled `o1` or
/// `o2`: compress the difference of effective operators into that span,
/// eigendecompose, and relabel by eigenvalue sign. Ties go to the smaller
/// output label. Each such step cannot decrease the objective.
fn pairwise_resplit(lb: &mut LabeledBasis, eff: &[CMat], o1: usize, o2: usize) {
    let cols: Vec<usize> = lb
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == o1 || l == o2)
        .map(|(c, _)| c)
        .collect();
    if cols.is_empty() {
        return;
    }
    let d = lb.basis.nrows();
    let r = cols.len();
    let mut v = CMat::zeros(d, r);
    for (slot, &c) in cols.iter().enumerate() {
        v.set_column(slot, &lb.basis.column(c));
    }
    let diff = &eff[o1] - &eff[o2];
    let compressed = hermitize(&(v.adjoint() * diff * &v));
    let (values, vectors) = hermitian_eigen_desc(&compressed);
    let rotated = v * vectors;
    for (slot, &c) in cols.iter().enumerate() {
        lb.basis.set_column(c, &rotated.column(slot));
        lb.labels[c] = if values[slot] > 0.0 { o1 } else if values[slot] < 0.0 { o2 } else { o1.min(o2) };
    }
}

/// Sweeps all output pairs until a full pass stops improving the objective.
fn update_measurement(lb: &mut LabeledBasis, eff: &[CMat], n_out: usize) {
    let mut best = basis_objective(lb, eff);
    for _ in 0..(2 * n_out.max(2)) {
        for o1 in 0..n_out {
            for o2 in (o1 + 1)..n_out {
                pairwise_resplit(lb, eff, o1, o2);
            }
        }
        let now = basis_objective(lb, eff);
        if now <= best + 1e-15 {
            break;
        }
        best = now;
    }
}

/// Random initial output assignment for the `d` columns of a measurement
/// basis. With `n_out <= d` every output keeps at least one column (balanced
/// coverage, shuffled); with more outputs than columns it picks `d` distinct
/// outputs at random. Fixed assignments would start every restart in the
/// same attractor basin when outputs outnumber dimensions, since the
/// pairwise relabeling moves labels only gradually.
fn random_labels(rng: &mut ChaCha8Rng, d: usize, n_out: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..d.max(n_out)).map(|k| k % n_out).collect();
    pool.shuffle(rng);
    pool.truncate(d);
    pool
}

fn run_restart(
    game: &ValidatedGame,
    dims: &[usize],
    terms: &WeightedTerms,
    cfg: &SeesawConfig,
    seed: u64,
) -> RestartResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = dims.iter().product();
    let parties = game.parties();
    let mut state = random_state(&mut rng, total);
    let mut meas: Vec<Vec<LabeledBasis>> = (0..parties)
        .map(|j| {
            let d = dims[j];
            let n_out = game.output_shape().sizes()[j];
            (0..game.input_shape().sizes()[j])
                .map(|_| LabeledBasis {
                    basis: random_unitary(&mut rng, d),
                    labels: random_labels(&mut rng, d, n_out),
                })
                .collect()
        })
        .collect();

    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut previous = f64::NEG_INFINITY;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        for party in 0..parties {
            let n_out = game.output_shape().sizes()[party];
            for input in 0..game.input_shape().sizes()[party] {
                let eff = effective_operators(game, dims, &state, &meas, party, input);
                update_measurement(&mut meas[party][input], &eff, n_out);
            }
        }
        let g = game_operator(game, dims, &meas, terms);
        let (values, vectors) = hermitian_eigen_desc(&g);
        let mut top = CVec::from(vectors.column(0));
        let norm = top.norm();
        top /= Complex64::new(norm, 0.0);
        canonical_phase(&mut top);
        state = top;
        let value = values[0];
        assert!(
            value + MONOTONE_SLACK >= previous,
            "seesaw objective decreased: {previous} -> {value}"
        );
        trace.push(value);
        if (value - previous).abs() < cfg.convergence_eps {
            converged = true;
            break;
        }
        previous = value;
    }
    RestartResult {
        value: *trace.last().expect("at least one iteration"),
        state,
        meas,
        trace,
        converged,
    }
}

/// Seesaw ascent on the entangled value: alternates exact per-(party, input)
/// measurement updates with a top-eigenvector state update, over several
/// random restarts. Returns the best lower-bound witness found.
///
/// The objective trace is nondecreasing within each restart: measurement
/// re-splits are exact maximizers over their span and the state update is the
/// global maximizer for fixed measurements.
pub fn seesaw_optimize(
    game: &ValidatedGame,
    dims: &[usize],
    cfg: &SeesawConfig,
) -> Result<SeesawOutcome, QuantumError> {
    if dims.len() != game.parties() {
        return Err(QuantumError::ShapeMismatch {
            detail: format!(
                "{} local dimensions for {} parties",
                dims.len(),
                game.parties()
            ),
        });
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(QuantumError::BadConfig {
            detail: "local dimensions must be at least 1".into(),
        });
    }
    let total: usize = dims.iter().copied().try_fold(1usize, |acc, d| acc.checked_mul(d))
        .ok_or(QuantumError::DimensionCap {
            product: usize::MAX,
            cap: DIM_PRODUCT_CAP,
        })?;
    if total > DIM_PRODUCT_CAP {
        return Err(QuantumError::DimensionCap {
            product: total,
            cap: DIM_PRODUCT_CAP,
        });
    }
    if cfg.max_iters == 0 {
        return Err(QuantumError::BadConfig {
            detail: "max_iters must be at least 1".into(),
        });
    }
    if cfg.restarts == 0 {
        return Err(QuantumError::BadConfig {
            detail: "restarts must be at least 1".into(),
        });
    }
    if !(cfg.convergence_eps > 0.0) {
        return Err(QuantumError::BadConfig {
            detail: "convergence_eps must be positive".into(),
        });
    }

    let terms = weighted_terms(game);
    let seeds: Vec<u64> = (0..cfg.restarts)
        .map(|k| splitmix64_at(cfg.seed, k as u64))
        .collect();

    #[cfg(feature = "parallel")]
    let results: Vec<RestartResult> = {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&s| run_restart(game, dims, &terms, cfg, s))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<RestartResult> = seeds
        .iter()
        .map(|&s| run_restart(game, dims, &terms, cfg, s))
        .collect();

    let mut best = 0usize;
    for (k, r) in results.iter().enumerate() {
        if r.value > results[best].value {
            best = k;
        }
    }
    let winner = &results[best];
    let measurements: Vec<Vec<Vec<CMat>>> = (0..game.parties())
        .map(|j| {
            let d = dims[j];
            let n_out = game.output_shape().sizes()[j];
            winner.meas[j]
                .iter()
                .map(|lb| (0..n_out).map(|o| lb.projector(d, o)).collect())
                .collect()
        })
        .collect();
    let strategy = QuantumStrategy {
        dims: dims.to_vec(),
        state: winner.state.clone(),
        measurements,
    };
    Ok(SeesawOutcome {
        value: winner.value,
        strategy,
        trace: winner.trace.clone(),
        converged: winner.converged,
        best_restart: best,
    })
}

/// The two-qubit maximally entangled state with equal amplitudes on 00 and 11.
pub fn phi_plus() -> CVec {
    let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut v = CVec::zeros(4);
    v[0] = a;
    v[3] = a;
    v
}

/// Rank-one projectors onto the qubit direction at angle `theta` in the XZ
/// plane and its orthogonal complement: outcome 0 projects onto
/// `(cos theta, sin theta)`.
pub fn xz_projectors(theta: f64) -> [CMat; 2] {
    let c = theta.cos();
    let s = theta.sin();
    let v0 = CVec::from_vec(vec![Complex64::new(c, 0.0), Complex64::new(s, 0.0)]);
    let v1 = CVec::from_vec(vec![Complex64::new(-s, 0.0), Complex64::new(c, 0.0)]);
    [&v0 * v0.adjoint(), &v1 * v1.adjoint()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::classical::{classical_value, DEFAULT_ENUMERATION_BUDGET};
    use crate::game::no_signaling_check;
    use std::f64::consts::PI;

    fn computational_projectors() -> [CMat; 2] {
        xz_projectors(0.0)
    }

    fn chsh_optimal_strategy() -> QuantumStrategy {
        let angles0 = [0.0, PI / 4.0];
        let angles1 = [PI / 8.0, -PI / 8.0];
        let meas = |angles: [f64; 2]| -> Vec<Vec<CMat>> {
            angles.iter().map(|&t| xz_projectors(t).to_vec()).collect()
        };
        QuantumStrategy {
            dims: vec![2, 2],
            state: phi_plus(),
            measurements: vec![meas(angles0), meas(angles1)],
        }
    }

    #[test]
    fn phi_plus_with_computational_measurements_gives_perfect_correlation() {
        let game = catalog::chsh();
        let [p0, p1] = computational_projectors();
        let per_party: Vec<Vec<CMat>> = vec![vec![p0.clone(), p1.clone()]; 2];
        let q = QuantumStrategy {
            dims: vec![2, 2],
            state: phi_plus(),
            measurements: vec![per_party.clone(), per_party],
        };
        let behavior = behavior_from_quantum(&game, &q).expect("valid strategy");
        for joint_in in 0..4 {
            let row = behavior.row(joint_in);
            assert!((row[0] - 0.5).abs() < 1e-12, "p(00) for input {joint_in}");
            assert!((row[3] - 0.5).abs() < 1e-12, "p(11) for input {joint_in}");
            assert!(row[1].abs() < 1e-12 && row[2].abs() < 1e-12);
        }
    }

    #[test]
    fn chsh_angle_construction_hits_the_known_optimum() {
        let game = catalog::chsh();
        let q = chsh_optimal_strategy();
        let behavior = behavior_from_quantum(&game, &q).expect("valid strategy");
        let value = game.average_utility(&behavior).expect("behavior matches game");
        let expected = (2.0 + 2.0f64.sqrt()) / 4.0;
        assert!(
            (value - expected).abs() < 1e-12,
            "value {value}, expected {expected}"
        );
        let report = no_signaling_check(&behavior, 1e-9);
        assert!(report.pass, "violation {}", report.max_violation);
    }

    #[test]
    fn strategy_json_round_trips_bit_exactly() {
        let q = chsh_optimal_strategy();
        let text = serde_json::to_string(&q).expect("serializes");
        let back: QuantumStrategy = serde_json::from_str(&text).expect("parses");
        assert_eq!(q.dims, back.dims);
        for k in 0..q.state.len() {
            assert_eq!(q.state[k].re.to_bits(), back.state[k].re.to_bits());
            assert_eq!(q.state[k].im.to_bits(), back.state[k].im.to_bits());
        }
        for j in 0..2 {
            for i in 0..2 {
                for o in 0..2 {
                    let a = &q.measurements[j][i][o];
                    let b = &back.measurements[j][i][o];
                    for r in 0..2 {
                        for c in 0..2 {
                            assert_eq!(a[(r, c)].re.to_bits(), b[(r, c)].re.to_bits());
                            assert_eq!(a[(r, c)].im.to_bits(), b[(r, c)].im.to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn validate_rejects_non_projective_operators() {
        let mut q = chsh_optimal_strategy();
        q.measurements[0][0][0] = CMat::identity(2, 2) * Complex64::new(0.5, 0.0);
        q.measurements[0][0][1] = CMat::identity(2, 2) * Complex64::new(0.5, 0.0);
        match validate_qstrategy(&q) {
            Err(QuantumError::NonProjective { party: 0, input: 0, .. }) => {}
            other => panic!("expected NonProjective, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_incomplete_families() {
        let mut q = chsh_optimal_strategy();
        let [p0, _] = xz_projectors(0.3);
        q.measurements[1][1][0] = p0.clone();
        q.measurements[1][1][1] = p0;
        match validate_qstrategy(&q) {
            Err(e) => {
                let ok = matches!(
                    e,
                    QuantumError::IncompleteMeasurement { party: 1, input: 1, .. }
                        | QuantumError::NonProjective { party: 1, input: 1, .. }
                );
                assert!(ok, "unexpected error {e:?}");
            }
            Ok(_) => panic!("expected an error"),
        }
    }

    #[test]
    fn validate_rejects_unnormalized_state() {
        let mut q = chsh_optimal_strategy();
        q.state[0] *= Complex64::new(1.5, 0.0);
        assert!(matches!(
            validate_qstrategy(&q),
            Err(QuantumError::InvalidState { .. })
        ));
    }

    #[test]
    fn local_unitary_conjugation_preserves_the_behavior() {
        let game = catalog::chsh();
        let q = chsh_optimal_strategy();
        let reference = behavior_from_quantum(&game, &q).expect("valid strategy");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let u0 = random_unitary(&mut rng, 2);
            let u1 = random_unitary(&mut rng, 2);
            let mut state = apply_local(&q.state, &q.dims, 0, &u0);
            state = apply_local(&state, &q.dims, 1, &u1);
            let conj = |u: &CMat, ops: &Vec<Vec<CMat>>| -> Vec<Vec<CMat>> {
                ops.iter()
                    .map(|per_out| per_out.iter().map(|p| u * p * u.adjoint()).collect())
                    .collect()
            };
            let rotated = QuantumStrategy {
                dims: q.dims.clone(),
                state,
                measurements: vec![
                    conj(&u0, &q.measurements[0]),
                    conj(&u1, &q.measurements[1]),
                ],
            };
            let behavior = behavior_from_quantum(&game, &rotated).expect("still valid");
            for i in 0..4 {
                for o in 0..4 {
                    assert!(
                        (behavior.prob(i, o) - reference.prob(i, o)).abs() < 1e-9,
                        "input {i}, output {o}"
                    );
                }
            }
        }
    }

    #[test]
    fn seesaw_finds_the_chsh_quantum_value() {
        let game = catalog::chsh();
        let cfg = SeesawConfig {
            max_iters: 200,
            restarts: 4,
            seed: 2024,
            convergence_eps: 1e-12,
        };
        let outcome = seesaw_optimize(&game, &[2, 2], &cfg).expect("runs");
        let expected = (2.0 + 2.0f64.sqrt()) / 4.0;
        assert!(
            outcome.value > expected - 1e-6,
            "seesaw reached {}, expected about {expected}",
            outcome.value
        );
        assert!(outcome.value < expected + 1e-9, "exceeds the quantum value");
        // The witness must reproduce its claimed value through simulation.
        let behavior =
            behavior_from_quantum(&game, &outcome.strategy).expect("witness validates");
        let replayed = game.average_utility(&behavior).expect("behavior matches game");
        assert!((replayed - outcome.value).abs() < 1e-9);
        // And the trace never decreases.
        for w in outcome.trace.windows(2) {
            assert!(w[1] + MONOTONE_SLACK >= w[0]);
        }
    }

    #[test]
    fn seesaw_with_trivial_dimensions_matches_the_classical_value() {
        let game = catalog::chsh();
        let classical = classical_value(&game, DEFAULT_ENUMERATION_BUDGET)
            .expect("small game")
            .value;
        let cfg = SeesawConfig {
            max_iters: 50,
            restarts: 4,
            seed: 5,
            convergence_eps: 1e-12,
        };
        let outcome = seesaw_optimize(&game, &[1, 1], &cfg).expect("runs");
        assert!(outcome.value <= classical + 1e-9);
        assert!((outcome.value - classical).abs() < 1e-9);
    }

    /// Eight outputs crammed into local dimension four force heavily
    /// degenerate measurement splits, which stress the eigensolver: with a
    /// less accurate decomposition this run used to trip the internal
    /// monotonicity assertion. Keep the restart count small so the check
    /// stays fast; quality of the optimum is covered elsewhere.
    #[test]
    fn seesaw_survives_degenerate_resplits() {
        let game = catalog::magic_square();
        let cfg = SeesawConfig {
            max_iters: 60,
            restarts: 2,
            seed: 0,
            convergence_eps: 1e-10,
        };
        let outcome = seesaw_optimize(&game, &[4, 4], &cfg).expect("runs");
        assert!(outcome.value > 8.0 / 9.0 - 1e-6);
        for w in outcome.trace.windows(2) {
            assert!(w[1] + MONOTONE_SLACK >= w[0]);
        }
    }

    #[test]
    fn seesaw_rejects_bad_configs_and_caps() {
        let game = catalog::chsh();
        let cfg = SeesawConfig { restarts: 0, ..SeesawConfig::default() };
        assert!(matches!(
            seesaw_optimize(&game, &[2, 2], &cfg),
            Err(QuantumError::BadConfig { .. })
        ));
        let cfg = SeesawConfig::default();
        assert!(matches!(
            seesaw_optimize(&game, &[100, 100], &cfg),
            Err(QuantumError::DimensionCap { .. })
        ));
    }

    /// The measurement update relies on the effective operators carrying the
    /// party's entire share of the objective: for every party, summing the
    /// per-input basis objectives must reproduce the full quadratic form.
    #[test]
    fn effective_operators_decompose_the_objective() {
        use rand::SeedableRng;
        let game = catalog::ghz();
        let dims = [2usize, 2, 2];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let state = random_state(&mut rng, 8);
        let meas: Vec<Vec<LabeledBasis>> = (0..3)
            .map(|j| {
                (0..game.input_shape().sizes()[j])
                    .map(|_| LabeledBasis {
                        basis: random_unitary(&mut rng, dims[j]),
                        labels: (0..dims[j]).map(|col| col % 2).collect(),
                    })
                    .collect()
            })
            .collect();
        let terms = weighted_terms(&game);
        let g = game_operator(&game, &dims, &meas, &terms);
        let full = (state.adjoint() * &g * &state)[(0, 0)].re;
        for party in 0..3 {
            let mut via_eff = 0.0;
            for input in 0..game.input_shape().sizes()[party] {
                let eff = effective_operators(&game, &dims, &state, &meas, party, input);
                via_eff += basis_objective(&meas[party][input], &eff);
            }
            assert!(
                (via_eff - full).abs() < 1e-10,
                "party {party}: effective objective {via_eff} vs full {full}"
            );
        }
    }
}
