//! Signal latencies, deadlines, and the induced communication graph.
//!
//! A scenario fixes pairwise one-way latencies (either given directly or
//! derived from positions at light speed through a medium) and a response
//! deadline. Party `k` can inform party `j` within a round exactly when the
//! `k -> j` latency is at or under the deadline; the deadline itself counts,
//! matching the closed-left timing windows the scoring rule uses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vacuum speed of light in meters per second.
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("distance {distance} m is negative or not finite")]
    NegativeDistance { distance: f64 },
    #[error("medium factor {factor} must be finite and at least 1")]
    InvalidMediumFactor { factor: f64 },
    #[error("latency matrix row {row} has {actual} entries, expected {expected}")]
    ShapeMismatch {
        row: usize,
        expected: usize,
        actual: usize,
    },
    #[error("latency from {from} to {to} is {value}, must be finite and nonnegative")]
    BadLatency { from: usize, to: usize, value: f64 },
    #[error("latency matrix diagonal entry {party} is {value}, must be 0")]
    NonZeroDiagonal { party: usize, value: f64 },
    #[error("latency matrix is asymmetric at ({from},{to}) without directed=true")]
    Asymmetric { from: usize, to: usize },
    #[error("deadline {value} s must be finite and positive")]
    BadDeadline { value: f64 },
    #[error("scenario invalid: {detail}")]
    BadScenario { detail: String },
}

/// One-way signal delay over `distance_m` meters through a medium that slows
/// light by `medium_factor` (1 = vacuum).
pub fn light_delay(distance_m: f64, medium_factor: f64) -> Result<f64, LatencyError> {
    if !distance_m.is_finite() || distance_m < 0.0 {
        return Err(LatencyError::NegativeDistance {
            distance: distance_m,
        });
    }
    if !medium_factor.is_finite() || medium_factor < 1.0 {
        return Err(LatencyError::InvalidMediumFactor {
            factor: medium_factor,
        });
    }
    Ok(distance_m * medium_factor / SPEED_OF_LIGHT_M_PER_S)
}

/// On-disk scenario: either an explicit latency matrix or positions plus a
/// medium factor, and always a deadline.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ScenarioSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latencies_s: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions_m: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub medium_factor: Option<f64>,
    pub deadline_s: f64,
    #[serde(default)]
    pub directed: bool,
}

/// Validated latencies and deadline.
#[derive(Debug, Clone)]
pub struct LatencyScenario {
    parties: usize,
    /// Row-major: `latencies[from * parties + to]`, zero diagonal.
    latencies: Vec<f64>,
    deadline_s: f64,
}

impl LatencyScenario {
    /// Validates an explicit matrix: square, zero diagonal, finite
    /// nonnegative entries, symmetric unless `directed`.
    pub fn from_matrix(
        rows: Vec<Vec<f64>>,
        deadline_s: f64,
        directed: bool,
    ) -> Result<Self, LatencyError> {
        let parties = rows.len();
        if parties == 0 {
            return Err(LatencyError::BadScenario {
                detail: "latency matrix is empty".to_string(),
            });
        }
        let mut latencies = vec![0.0; parties * parties];
        for (from, row) in rows.iter().enumerate() {
            if row.len() != parties {
                return Err(LatencyError::ShapeMismatch {
                    row: from,
                    expected: parties,
                    actual: row.len(),
                });
            }
            for (to, &value) in row.iter().enumerate() {
                if !value.is_finite() || value < 0.0 {
                    return Err(LatencyError::BadLatency { from, to, value });
                }
                if from == to && value != 0.0 {
                    return Err(LatencyError::NonZeroDiagonal { party: from, value });
                }
                latencies[from * parties + to] = value;
            }
        }
        if !directed {
            for from in 0..parties {
                for to in from + 1..parties {
                    if latencies[from * parties + to] != latencies[to * parties + from] {
                        return Err(LatencyError::Asymmetric { from, to });
                    }
                }
            }
        }
        if !deadline_s.is_finite() || deadline_s <= 0.0 {
            return Err(LatencyError::BadDeadline { value: deadline_s });
        }
        Ok(LatencyScenario {
            parties,
            latencies,
            deadline_s,
        })
    }

    /// Builds the matrix from party positions (2 or 3 coordinates each, all
    /// alike) with straight-line propagation through the medium.
    pub fn from_positions(
        positions: &[Vec<f64>],
        medium_factor: f64,
        deadline_s: f64,
    ) -> Result<Self, LatencyError> {
        let parties = positions.len();
        if parties == 0 {
            return Err(LatencyError::BadScenario {
                detail: "no positions given".to_string(),
            });
        }
        let dim = positions[0].len();
        if dim != 2 && dim != 3 {
            return Err(LatencyError::BadScenario {
                detail: format!("positions must have 2 or 3 coordinates, got {dim}"),
            });
        }
        let mut rows = vec![vec![0.0; parties]; parties];
        for (a, pa) in positions.iter().enumerate() {
            if pa.len() != dim || pa.iter().any(|c| !c.is_finite()) {
                return Err(LatencyError::BadScenario {
                    detail: format!("position {a} is malformed"),
                });
            }
            for (b, pb) in positions.iter().enumerate().skip(a + 1) {
                let dist = pa
                    .iter()
                    .zip(pb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                let delay = light_delay(dist, medium_factor)?;
                rows[a][b] = delay;
                rows[b][a] = delay;
            }
        }
        Self::from_matrix(rows, deadline_s, false)
    }

    pub fn from_spec(spec: &ScenarioSpec) -> Result<Self, LatencyError> {
        match (&spec.latencies_s, &spec.positions_m) {
            (Some(_), Some(_)) => Err(LatencyError::BadScenario {
                detail: "give either latencies_s or positions_m, not both".to_string(),
            }),
            (Some(rows), None) => Self::from_matrix(rows.clone(), spec.deadline_s, spec.directed),
            (None, Some(positions)) => Self::from_positions(
                positions,
                spec.medium_factor.unwrap_or(1.0),
                spec.deadline_s,
            ),
            (None, None) => Err(LatencyError::BadScenario {
                detail: "scenario needs latencies_s or positions_m".to_string(),
            }),
        }
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn latency(&self, from: usize, to: usize) -> f64 {
        self.latencies[from * self.parties + to]
    }

    pub fn deadline_s(&self) -> f64 {
        self.deadline_s
    }
}

/// On-disk communication graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    pub parties: usize,
    pub edges: Vec<(usize, usize)>,
}

/// Directed graph of who can inform whom within the deadline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    parties: usize,
    adj: Vec<bool>,
}

impl CommGraph {
    pub fn empty(parties: usize) -> Self {
        assert!(parties > 0, "graph needs at least one party");
        CommGraph {
            parties,
            adj: vec![false; parties * parties],
        }
    }

    pub fn complete(parties: usize) -> Self {
        let mut graph = Self::empty(parties);
        for from in 0..parties {
            for to in 0..parties {
                if from != to {
                    graph.adj[from * parties + to] = true;
                }
            }
        }
        graph
    }

    /// Adds `from -> to`. Self-loops are meaningless here and rejected.
    pub fn add_edge(&mut self, from: usize, to: usize) {
        assert!(from < self.parties && to < self.parties, "party out of range");
        assert_ne!(from, to, "self-edges are not allowed");
        self.adj[from * self.parties + to] = true;
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from != to && self.adj[from * self.parties + to]
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    /// Parties whose input reaches `to` in time: its in-neighbors plus
    /// itself, ascending.
    pub fn sources_for(&self, to: usize) -> Vec<usize> {
        (0..self.parties)
            .filter(|&from| from == to || self.adj[from * self.parties + to])
            .collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for from in 0..self.parties {
            for to in 0..self.parties {
                if self.adj[from * self.parties + to] {
                    edges.push((from, to));
                }
            }
        }
        edges
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            parties: self.parties,
            edges: self.edges(),
        }
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self, LatencyError> {
        if spec.parties == 0 {
            return Err(LatencyError::BadScenario {
                detail: "graph needs at least one party".to_string(),
            });
        }
        let mut graph = Self::empty(spec.parties);
        for &(from, to) in &spec.edges {
            if from >= spec.parties || to >= spec.parties || from == to {
                return Err(LatencyError::BadScenario {
                    detail: format!("edge ({from},{to}) is out of range or a self-loop"),
                });
            }
            graph.add_edge(from, to);
        }
        Ok(graph)
    }
}

/// Communication graph induced by a scenario: `k -> j` iff the `k -> j`
/// latency is at or under the deadline (the boundary counts).
pub fn comm_graph(scenario: &LatencyScenario) -> CommGraph {
    let mut graph = CommGraph::empty(scenario.parties());
    for from in 0..scenario.parties() {
        for to in 0..scenario.parties() {
            if from != to && scenario.latency(from, to) <= scenario.deadline_s() {
                graph.add_edge(from, to);
            }
        }
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn light_delay_examples() {
        // 56.3 km at vacuum speed sits just under 188 microseconds.
        let hft = light_delay(56_300.0, 1.0).unwrap();
        assert!(hft > 187.7e-6 && hft < 188.0e-6, "got {hft}");
        // One light-second of distance is one second of delay.
        assert_eq!(light_delay(SPEED_OF_LIGHT_M_PER_S, 1.0).unwrap(), 1.0);
        // Slower media scale linearly.
        let fiber = light_delay(56_300.0, 1.5).unwrap();
        assert!((fiber - 1.5 * hft).abs() < 1e-18);
        assert!(light_delay(-1.0, 1.0).is_err());
        assert!(light_delay(1.0, 0.5).is_err());
    }

    fn two_party_scenario(deadline_s: f64) -> LatencyScenario {
        let delay = light_delay(56_300.0, 1.0).unwrap();
        LatencyScenario::from_matrix(
            vec![vec![0.0, delay], vec![delay, 0.0]],
            deadline_s,
            false,
        )
        .unwrap()
    }

    #[test]
    fn deadline_cuts_the_graph() {
        let tight = comm_graph(&two_party_scenario(1e-6));
        assert_eq!(tight.edges(), Vec::<(usize, usize)>::new());
        let loose = comm_graph(&two_party_scenario(200e-6));
        assert_eq!(loose.edges(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn boundary_latency_is_included() {
        let scenario = LatencyScenario::from_matrix(
            vec![vec![0.0, 5e-6], vec![5e-6, 0.0]],
            5e-6,
            false,
        )
        .unwrap();
        assert!(comm_graph(&scenario).has_edge(0, 1));
    }

    #[test]
    fn positions_give_symmetric_latencies() {
        let scenario = LatencyScenario::from_positions(
            &[vec![0.0, 0.0], vec![56_300.0, 0.0], vec![0.0, 56_300.0]],
            1.0,
            1e-3,
        )
        .unwrap();
        assert_eq!(scenario.latency(0, 1), scenario.latency(1, 0));
        let diag = 56_300.0 * std::f64::consts::SQRT_2;
        assert!((scenario.latency(1, 2) - light_delay(diag, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn matrix_validation() {
        assert!(matches!(
            LatencyScenario::from_matrix(vec![vec![0.0, 1.0], vec![2.0, 0.0]], 1.0, false),
            Err(LatencyError::Asymmetric { .. })
        ));
        // The same matrix is fine when declared directed.
        assert!(
            LatencyScenario::from_matrix(vec![vec![0.0, 1.0], vec![2.0, 0.0]], 1.0, true).is_ok()
        );
        assert!(matches!(
            LatencyScenario::from_matrix(vec![vec![1.0]], 1.0, false),
            Err(LatencyError::NonZeroDiagonal { .. })
        ));
        assert!(matches!(
            LatencyScenario::from_matrix(vec![vec![0.0]], 0.0, false),
            Err(LatencyError::BadDeadline { .. })
        ));
    }

    #[test]
    fn graph_sources_include_self() {
        let mut graph = CommGraph::empty(3);
        graph.add_edge(2, 0);
        assert_eq!(graph.sources_for(0), vec![0, 2]);
        assert_eq!(graph.sources_for(1), vec![1]);
        assert_eq!(CommGraph::complete(3).sources_for(1), vec![0, 1, 2]);
    }

    #[test]
    fn scenario_spec_rejects_ambiguity() {
        let spec = ScenarioSpec {
            latencies_s: Some(vec![vec![0.0]]),
            positions_m: Some(vec![vec![0.0, 0.0]]),
            medium_factor: None,
            deadline_s: 1.0,
            directed: false,
        };
        assert!(LatencyScenario::from_spec(&spec).is_err());
    }
}
