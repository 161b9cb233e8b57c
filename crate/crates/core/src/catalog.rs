//! Named games: standard tests of shared randomness versus entanglement,
//! and two application-shaped constructions (channel load balancing and
//! graph rendezvous).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameError, GameSpec, ValidatedGame};
use crate::shape::Shape;

/// Cap on a rendezvous party's output set; beyond this the dense utility
/// table stops being reasonable to enumerate.
pub const RENDEZVOUS_OUTPUT_CAP: usize = 4096;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("invalid spec: {detail}")]
    InvalidSpec { detail: String },
    #[error("party {party} would have {size} outputs, over the cap of {cap}")]
    OutputSetTooLarge {
        party: usize,
        size: usize,
        cap: usize,
    },
    #[error(transparent)]
    Game(#[from] GameError),
}

fn binary_labels() -> Vec<String> {
    vec!["0".to_string(), "1".to_string()]
}

/// Two parties, uniform independent bit inputs; they win by agreeing unless
/// both inputs are 1, in which case they must disagree. Classical optimum
/// 3/4; entanglement reaches (2 + sqrt 2)/4.
pub fn chsh() -> ValidatedGame {
    let mut utility = Vec::with_capacity(16);
    for i in 0..4usize {
        let (i0, i1) = (i >> 1, i & 1);
        for o in 0..4usize {
            let (o0, o1) = (o >> 1, o & 1);
            let win = (o0 == o1) != (i0 == 1 && i1 == 1);
            utility.push(if win { 1.0 } else { 0.0 });
        }
    }
    ValidatedGame::validate(GameSpec {
        parties: 2,
        inputs: vec![binary_labels(), binary_labels()],
        outputs: vec![binary_labels(), binary_labels()],
        pi: vec![0.25; 4],
        utility,
    })
    .expect("chsh tables are well-formed")
}

/// The hedging story with the same payoff structure as [`chsh`]: two desks
/// place correlated orders, and an exotic signal pair (both seeing a flip)
/// asks for opposite orders instead.
pub fn hft_hedging() -> ValidatedGame {
    let base = chsh().to_spec();
    ValidatedGame::validate(GameSpec {
        parties: 2,
        inputs: vec![
            vec!["no-flip".to_string(), "flip".to_string()],
            vec!["no-flip".to_string(), "flip".to_string()],
        ],
        outputs: vec![
            vec!["buy".to_string(), "sell".to_string()],
            vec!["buy".to_string(), "sell".to_string()],
        ],
        pi: base.pi,
        utility: base.utility,
    })
    .expect("hedging tables are well-formed")
}

/// Three parties, inputs drawn uniformly from the even-parity bit triples;
/// they win when the XOR of their output bits equals the OR of their
/// inputs. Classical optimum 3/4; a shared three-party entangled state wins
/// always.
pub fn ghz() -> ValidatedGame {
    let mut pi = vec![0.0; 8];
    for i in [0usize, 3, 5, 6] {
        pi[i] = 0.25;
    }
    let mut utility = Vec::with_capacity(64);
    for i in 0..8usize {
        let i_or = i != 0;
        for o in 0..8usize {
            let o_xor = (o.count_ones() & 1) == 1;
            utility.push(if o_xor == i_or { 1.0 } else { 0.0 });
        }
    }
    ValidatedGame::validate(GameSpec {
        parties: 3,
        inputs: vec![binary_labels(); 3],
        outputs: vec![binary_labels(); 3],
        pi,
        utility,
    })
    .expect("ghz tables are well-formed")
}

/// Two parties fill a 3x3 cell grid: one is asked for a row, the other for
/// a column, each answering with three bits. They win when the row has even
/// parity, the column has odd parity, and the two agree on the shared cell.
/// Classical optimum 8/9; two shared entangled pairs win always.
pub fn magic_square() -> ValidatedGame {
    let trits: Vec<String> = (0..3).map(|k| k.to_string()).collect();
    let cells: Vec<String> = (0..8u32).map(|v| format!("{v:03b}")).collect();
    let bit = |triple: usize, pos: usize| triple >> (2 - pos) & 1;
    let mut utility = Vec::with_capacity(9 * 64);
    for row in 0..3usize {
        for col in 0..3usize {
            for a in 0..8usize {
                let a_even = a.count_ones() % 2 == 0;
                for b in 0..8usize {
                    let b_odd = b.count_ones() % 2 == 1;
                    let agree = bit(a, col) == bit(b, row);
                    utility.push(if a_even && b_odd && agree { 1.0 } else { 0.0 });
                }
            }
        }
    }
    ValidatedGame::validate(GameSpec {
        parties: 2,
        inputs: vec![trits.clone(), trits],
        outputs: vec![cells.clone(), cells],
        pi: vec![1.0 / 9.0; 9],
        utility,
    })
    .expect("magic square tables are well-formed")
}

/// Fewest channels of capacity `r_star` that hold all `rates`, by exact
/// search. `None` when a single rate exceeds the capacity. Intended for
/// desk-scale inputs (at most a dozen or so rates).
pub fn min_channels(rates: &[f64], r_star: f64) -> Option<usize> {
    assert!(rates.len() <= 16, "exact packing is for small rate lists");
    if rates.iter().any(|&r| r > r_star) {
        return None;
    }
    let mut items: Vec<f64> = rates.iter().copied().filter(|&r| r > 0.0).collect();
    if items.is_empty() {
        return Some(if rates.is_empty() { 0 } else { 1 });
    }
    items.sort_by(|a, b| b.partial_cmp(a).expect("rates are finite"));
    for bins in 1..=items.len() {
        let mut loads = vec![0.0f64; bins];
        if packs(&items, 0, &mut loads, r_star) {
            return Some(bins);
        }
    }
    unreachable!("each rate fits a bin of its own")
}

fn packs(items: &[f64], next: usize, loads: &mut [f64], cap: f64) -> bool {
    if next == items.len() {
        return true;
    }
    let mut tried = Vec::with_capacity(loads.len());
    for bin in 0..loads.len() {
        // Bins with identical load are interchangeable; try one of each.
        if tried.contains(&loads[bin]) {
            continue;
        }
        tried.push(loads[bin]);
        if loads[bin] + items[next] <= cap {
            loads[bin] += items[next];
            if packs(items, next + 1, loads, cap) {
                loads[bin] -= items[next];
                return true;
            }
            loads[bin] -= items[next];
        }
    }
    false
}

/// Transmitters learn private rates and must pick channels without talking:
/// they win when no channel exceeds capacity and they occupy exactly as few
/// channels as an ideal packer would.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadBalancingSpec {
    /// Possible rates per transmitter; each doubles as that party's input set.
    pub rates_per_transmitter: Vec<Vec<f64>>,
    pub r_star: f64,
    pub n_channels: usize,
    /// Prior over joint rates, flat in joint-input order.
    pub pi: Vec<f64>,
}

/// Uniform prior over every joint rate tuple.
pub fn uniform_rates_pi(rates_per_transmitter: &[Vec<f64>]) -> Vec<f64> {
    let total: usize = rates_per_transmitter.iter().map(Vec::len).product();
    vec![1.0 / total as f64; total]
}

fn format_rate(rate: f64) -> String {
    if rate == rate.trunc() && rate.abs() < 1e15 {
        format!("{}", rate as i64)
    } else {
        format!("{rate}")
    }
}

pub fn load_balancing(spec: &LoadBalancingSpec) -> Result<ValidatedGame, CatalogError> {
    if spec.rates_per_transmitter.is_empty() {
        return Err(CatalogError::InvalidSpec {
            detail: "need at least one transmitter".to_string(),
        });
    }
    if spec.n_channels == 0 {
        return Err(CatalogError::InvalidSpec {
            detail: "need at least one channel".to_string(),
        });
    }
    if !spec.r_star.is_finite() || spec.r_star <= 0.0 {
        return Err(CatalogError::InvalidSpec {
            detail: format!("capacity r_star = {} must be positive", spec.r_star),
        });
    }
    for (party, rates) in spec.rates_per_transmitter.iter().enumerate() {
        if rates.is_empty() {
            return Err(CatalogError::InvalidSpec {
                detail: format!("transmitter {party} has no rates"),
            });
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(CatalogError::InvalidSpec {
                detail: format!("transmitter {party} has a negative or non-finite rate"),
            });
        }
    }
    let parties = spec.rates_per_transmitter.len();
    let inputs: Vec<Vec<String>> = spec
        .rates_per_transmitter
        .iter()
        .map(|rates| rates.iter().map(|&r| format_rate(r)).collect())
        .collect();
    let channels: Vec<String> = (1..=spec.n_channels).map(|c| c.to_string()).collect();
    let outputs = vec![channels; parties];

    let input_shape = Shape::new(spec.rates_per_transmitter.iter().map(Vec::len).collect());
    let output_shape = Shape::new(vec![spec.n_channels; parties]);
    let mut utility = Vec::with_capacity(input_shape.len() * output_shape.len());
    let mut joint_rates = vec![0.0f64; parties];
    input_shape.for_each(|_, in_digits| {
        for (party, slot) in joint_rates.iter_mut().enumerate() {
            *slot = spec.rates_per_transmitter[party][in_digits[party]];
        }
        let needed = min_channels(&joint_rates, spec.r_star);
        let rates = joint_rates.clone();
        output_shape.for_each(|_, out_digits| {
            let win = match needed {
                None => false,
                Some(k) => {
                    let mut loads = vec![0.0f64; spec.n_channels];
                    let mut occupied = vec![false; spec.n_channels];
                    for (party, &channel) in out_digits.iter().enumerate() {
                        loads[channel] += rates[party];
                        occupied[channel] = true;
                    }
                    let distinct = occupied.iter().filter(|&&b| b).count();
                    loads.iter().all(|&l| l <= spec.r_star) && distinct == k
                }
            };
            utility.push(if win { 1.0 } else { 0.0 });
        });
    });

    Ok(ValidatedGame::validate(GameSpec {
        parties,
        inputs,
        outputs,
        pi: spec.pi.clone(),
        utility,
    })?)
}

/// How a rendezvous round is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeetRule {
    /// The walkers must share a vertex after the final step.
    #[default]
    FinalStep,
    /// Sharing a vertex after any step wins.
    AnyStep,
}

/// Walkers on a known graph pick fixed walk plans from private start
/// vertices and try to meet. A plan is a sequence of ports: port `p` at a
/// vertex moves to its `p`-th neighbor (neighbors ordered as in the vertex
/// list), and a port at or past the degree stays put.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RendezvousSpec {
    pub vertices: Vec<String>,
    pub edges: Vec<(String, String)>,
    pub horizon: usize,
    pub start_distribution: Vec<StartWeight>,
    #[serde(default)]
    pub meet_rule: MeetRule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartWeight {
    pub vertices: Vec<String>,
    pub probability: f64,
}

pub fn rendezvous(spec: &RendezvousSpec) -> Result<ValidatedGame, CatalogError> {
    if spec.vertices.is_empty() {
        return Err(CatalogError::InvalidSpec {
            detail: "graph has no vertices".to_string(),
        });
    }
    if spec.horizon == 0 {
        return Err(CatalogError::InvalidSpec {
            detail: "horizon must be at least 1".to_string(),
        });
    }
    let vertex_index = |label: &str| -> Result<usize, CatalogError> {
        spec.vertices
            .iter()
            .position(|v| v == label)
            .ok_or_else(|| CatalogError::InvalidSpec {
                detail: format!("unknown vertex {label:?}"),
            })
    };
    // Neighbor lists ordered by vertex position, deduplicated.
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); spec.vertices.len()];
    for (a, b) in &spec.edges {
        let (ia, ib) = (vertex_index(a)?, vertex_index(b)?);
        if ia == ib {
            return Err(CatalogError::InvalidSpec {
                detail: format!("self-loop at vertex {a:?}"),
            });
        }
        if !neighbors[ia].contains(&ib) {
            neighbors[ia].push(ib);
            neighbors[ib].push(ia);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    let max_degree = neighbors.iter().map(Vec::len).max().unwrap_or(0);
    let ports = max_degree + 1;

    let first = spec
        .start_distribution
        .first()
        .ok_or_else(|| CatalogError::InvalidSpec {
            detail: "start distribution is empty".to_string(),
        })?;
    let parties = first.vertices.len();
    if parties == 0 {
        return Err(CatalogError::InvalidSpec {
            detail: "start entries name no parties".to_string(),
        });
    }

    // Per-party input set: start vertices with positive weight, in vertex order.
    let mut support: Vec<Vec<usize>> = vec![Vec::new(); parties];
    let mut entries: Vec<(Vec<usize>, f64)> = Vec::new();
    for entry in &spec.start_distribution {
        if entry.vertices.len() != parties {
            return Err(CatalogError::InvalidSpec {
                detail: "start entries disagree on the number of parties".to_string(),
            });
        }
        if !entry.probability.is_finite() || entry.probability < 0.0 {
            return Err(CatalogError::InvalidSpec {
                detail: format!("start probability {} is invalid", entry.probability),
            });
        }
        let tuple: Vec<usize> = entry
            .vertices
            .iter()
            .map(|v| vertex_index(v))
            .collect::<Result<_, _>>()?;
        if entry.probability > 0.0 {
            for (party, &v) in tuple.iter().enumerate() {
                if !support[party].contains(&v) {
                    support[party].push(v);
                }
            }
            entries.push((tuple, entry.probability));
        }
    }
    for list in &mut support {
        list.sort_unstable();
    }
    if support.iter().any(Vec::is_empty) {
        return Err(CatalogError::InvalidSpec {
            detail: "start distribution has no support".to_string(),
        });
    }

    let plan_count = ports.checked_pow(spec.horizon as u32).unwrap_or(usize::MAX);
    if plan_count > RENDEZVOUS_OUTPUT_CAP {
        return Err(CatalogError::OutputSetTooLarge {
            party: 0,
            size: plan_count,
            cap: RENDEZVOUS_OUTPUT_CAP,
        });
    }

    let plan_shape = Shape::new(vec![ports; spec.horizon]);
    let plan_labels: Vec<String> = (0..plan_count)
        .map(|flat| {
            plan_shape
                .unflatten(flat)
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join("-")
        })
        .collect();

    let inputs: Vec<Vec<String>> = support
        .iter()
        .map(|list| list.iter().map(|&v| spec.vertices[v].clone()).collect())
        .collect();
    let input_shape = Shape::new(support.iter().map(Vec::len).collect());
    let mut pi = vec![0.0; input_shape.len()];
    for (tuple, p) in &entries {
        let digits: Vec<usize> = tuple
            .iter()
            .enumerate()
            .map(|(party, v)| {
                support[party]
                    .iter()
                    .position(|s| s == v)
                    .expect("support covers every entry")
            })
            .collect();
        pi[input_shape.flatten(&digits)] += p;
    }

    let step = |v: usize, port: usize| -> usize {
        if port < neighbors[v].len() {
            neighbors[v][port]
        } else {
            v
        }
    };
    // Trajectory of each (start, plan) pair, precomputed per party input.
    let trajectory = |start: usize, plan_flat: usize| -> Vec<usize> {
        let plan = plan_shape.unflatten(plan_flat);
        let mut at = start;
        plan.iter()
            .map(|&p| {
                at = step(at, p);
                at
            })
            .collect()
    };

    let output_shape = Shape::new(vec![plan_count; parties]);
    let mut utility = Vec::with_capacity(input_shape.len() * output_shape.len());
    input_shape.for_each(|_, in_digits| {
        let starts: Vec<usize> = in_digits
            .iter()
            .enumerate()
            .map(|(party, &d)| support[party][d])
            .collect();
        output_shape.for_each(|_, out_digits| {
            let walks: Vec<Vec<usize>> = starts
                .iter()
                .zip(out_digits)
                .map(|(&s, &plan)| trajectory(s, plan))
                .collect();
            let met = match spec.meet_rule {
                MeetRule::FinalStep => {
                    let last = walks[0][spec.horizon - 1];
                    walks.iter().all(|w| w[spec.horizon - 1] == last)
                }
                MeetRule::AnyStep => (0..spec.horizon).any(|t| {
                    let here = walks[0][t];
                    walks.iter().all(|w| w[t] == here)
                }),
            };
            utility.push(if met { 1.0 } else { 0.0 });
        });
    });

    Ok(ValidatedGame::validate(GameSpec {
        parties,
        inputs,
        outputs: vec![plan_labels; parties],
        pi,
        utility,
    })?)
}

/// Searches per-party output relabelings making two games' tables equal.
///
/// Requires identical party counts, input sizes, priors, and output sizes;
/// returns the first permutation family `sigma` (one permutation per party,
/// `sigma[party][a_output] = b_output`) under which `U_a(i, o) = U_b(i,
/// sigma(o))` everywhere, or `None`. Intended for small output sets; the
/// search is over every permutation product.
pub fn find_output_relabeling(a: &ValidatedGame, b: &ValidatedGame) -> Option<Vec<Vec<usize>>> {
    if a.parties() != b.parties()
        || a.input_shape() != b.input_shape()
        || a.output_shape().sizes() != b.output_shape().sizes()
        || a.pi() != b.pi()
    {
        return None;
    }
    let combos: f64 = (0..a.parties())
        .map(|j| (1..=a.output_shape().size(j)).product::<usize>() as f64)
        .product();
    assert!(combos <= 1e6, "relabeling search is for small output sets");

    let per_party: Vec<Vec<Vec<usize>>> = (0..a.parties())
        .map(|j| permutations(a.output_shape().size(j)))
        .collect();
    let mut choice = vec![0usize; a.parties()];
    loop {
        let sigma: Vec<&Vec<usize>> = choice
            .iter()
            .enumerate()
            .map(|(j, &c)| &per_party[j][c])
            .collect();
        if tables_match(a, b, &sigma) {
            return Some(sigma.into_iter().cloned().collect());
        }
        // Odometer over permutation choices.
        let mut pos = a.parties();
        loop {
            if pos == 0 {
                return None;
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < per_party[pos].len() {
                break;
            }
            choice[pos] = 0;
        }
    }
}

fn tables_match(a: &ValidatedGame, b: &ValidatedGame, sigma: &[&Vec<usize>]) -> bool {
    let n_out = a.output_shape().len();
    let mut mapped = vec![0usize; a.parties()];
    for i in 0..a.input_shape().len() {
        for o in 0..n_out {
            let digits = a.output_shape().unflatten(o);
            for (party, &d) in digits.iter().enumerate() {
                mapped[party] = sigma[party][d];
            }
            let bo = b.output_shape().flatten(&mapped);
            if a.utility(i, o) != b.utility(i, bo) {
                return false;
            }
        }
    }
    true
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                cur.push(v);
                rec(used, cur, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut vec![false; n], &mut Vec::new(), &mut out);
    out
}
