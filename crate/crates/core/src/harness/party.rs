//! Party client: connects to a referee, handshakes, and plays rounds with a
//! configurable strategy. Every referee stimulus gets exactly one response
//! line (`Output`, `Wait`, `Equery`, or a `Peer` chain), matching the
//! referee's read discipline.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter};
use std::net::TcpStream;

use serde::{Deserialize, Serialize};

use super::protocol::{read_message, write_message, Message, PROTOCOL_VERSION};
use super::HarnessError;
use crate::latency::LatencyScenario;

/// How a party turns stimuli into answers.
///
/// `Forward` implements the one-hop pattern for latency games: on input,
/// relay it to every peer the deadline allows, wait for the peers whose
/// relays can reach us in time, then answer from the joint map (keys are
/// comma-joined input labels of the heard parties plus ourselves, in party
/// index order). When nobody can reach us the fallback map answers from the
/// own input alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PartyStrategy {
    Deterministic {
        map: HashMap<String, String>,
    },
    Entangled,
    Forward {
        map: HashMap<String, String>,
        fallback: HashMap<String, String>,
    },
}

pub struct PartyConfig {
    pub party: usize,
    pub strategy: PartyStrategy,
    /// Required by `Forward` to decide whom to relay to and whom to wait
    /// for; ignored otherwise.
    pub scenario: Option<LatencyScenario>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PartySummary {
    pub rounds: u64,
    pub mean_utility: f64,
}

struct ForwardRound {
    own_input: String,
    heard: BTreeMap<usize, String>,
    answered: bool,
}

/// Plays a full session over `stream` and returns the referee's summary.
pub fn party_run(stream: TcpStream, config: &PartyConfig) -> Result<PartySummary, HarnessError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    write_message(
        &mut writer,
        &Message::Hello {
            version: PROTOCOL_VERSION,
            party: config.party,
        },
    )?;
    match read_message(&mut reader)? {
        Some(Message::Hello { version, .. }) if version == PROTOCOL_VERSION => {}
        Some(Message::Error { detail }) => {
            return Err(HarnessError::Protocol { detail });
        }
        other => {
            return Err(HarnessError::Protocol {
                detail: format!("expected hello ack, got {other:?}"),
            });
        }
    }

    // Forward-strategy planning from the scenario: `tell` is every peer a
    // relay can reach within the deadline, `wait_for` every peer whose relay
    // can reach us.
    let (tell, wait_for) = match (&config.strategy, &config.scenario) {
        (PartyStrategy::Forward { .. }, Some(scenario)) => {
            let me = config.party;
            let deadline = scenario.deadline_s();
            let tell: Vec<usize> = (0..scenario.parties())
                .filter(|&k| k != me && scenario.latency(me, k) <= deadline)
                .collect();
            let wait_for: Vec<usize> = (0..scenario.parties())
                .filter(|&k| k != me && scenario.latency(k, me) <= deadline)
                .collect();
            (tell, wait_for)
        }
        (PartyStrategy::Forward { .. }, None) => {
            return Err(HarnessError::Protocol {
                detail: "forward strategy needs a latency scenario".into(),
            });
        }
        _ => (Vec::new(), Vec::new()),
    };

    let mut forward_rounds: HashMap<u64, ForwardRound> = HashMap::new();
    loop {
        let msg = match read_message(&mut reader)? {
            Some(m) => m,
            None => {
                return Err(HarnessError::Protocol {
                    detail: "referee closed the connection early".into(),
                })
            }
        };
        match msg {
            Message::Input { round, input } => match &config.strategy {
                PartyStrategy::Deterministic { map } => {
                    let output = map.get(&input).ok_or_else(|| HarnessError::Protocol {
                        detail: format!("no mapping for input {input:?}"),
                    })?;
                    write_message(
                        &mut writer,
                        &Message::Output {
                            round,
                            output: output.clone(),
                        },
                    )?;
                }
                PartyStrategy::Entangled => {
                    write_message(&mut writer, &Message::Equery { round, input })?;
                }
                PartyStrategy::Forward { fallback, .. } => {
                    let state = forward_rounds.entry(round).or_insert(ForwardRound {
                        own_input: input.clone(),
                        heard: BTreeMap::new(),
                        answered: false,
                    });
                    state.own_input = input.clone();
                    // When an output follows the relays, every peer line
                    // marks the group as continuing; otherwise the last
                    // relay closes it.
                    for (k, &dest) in tell.iter().enumerate() {
                        write_message(
                            &mut writer,
                            &Message::Peer {
                                round,
                                to: dest,
                                payload: input.clone(),
                                more: k + 1 < tell.len() || wait_for.is_empty(),
                            },
                        )?;
                    }
                    if wait_for.is_empty() {
                        let output =
                            fallback.get(&input).ok_or_else(|| HarnessError::Protocol {
                                detail: format!("no fallback for input {input:?}"),
                            })?;
                        forward_rounds
                            .get_mut(&round)
                            .expect("just inserted")
                            .answered = true;
                        write_message(
                            &mut writer,
                            &Message::Output {
                                round,
                                output: output.clone(),
                            },
                        )?;
                    } else if tell.is_empty() {
                        write_message(&mut writer, &Message::Wait { round })?;
                    }
                }
            },
            Message::PeerDeliver { round, from, payload } => match &config.strategy {
                PartyStrategy::Forward { map, .. } => {
                    let state = forward_rounds.entry(round).or_insert(ForwardRound {
                        own_input: String::new(),
                        heard: BTreeMap::new(),
                        answered: false,
                    });
                    state.heard.insert(from, payload);
                    let complete = !state.own_input.is_empty()
                        && wait_for.iter().all(|k| state.heard.contains_key(k));
                    if complete && !state.answered {
                        let mut labels: BTreeMap<usize, String> = state.heard.clone();
                        labels.insert(config.party, state.own_input.clone());
                        state.answered = true;
                        let key = labels.values().cloned().collect::<Vec<_>>().join(",");
                        let output = map.get(&key).ok_or_else(|| HarnessError::Protocol {
                            detail: format!("no mapping for joint inputs {key:?}"),
                        })?;
                        write_message(
                            &mut writer,
                            &Message::Output {
                                round,
                                output: output.clone(),
                            },
                        )?;
                    } else {
                        write_message(&mut writer, &Message::Wait { round })?;
                    }
                }
                _ => {
                    write_message(&mut writer, &Message::Wait { round })?;
                }
            },
            Message::Eanswer { round, output } => {
                write_message(&mut writer, &Message::Output { round, output })?;
            }
            Message::RoundResult { round, .. } => {
                forward_rounds.remove(&round);
            }
            Message::End { rounds, mean_utility } => {
                return Ok(PartySummary {
                    rounds,
                    mean_utility,
                });
            }
            Message::Error { detail } => {
                return Err(HarnessError::Protocol { detail });
            }
            other => {
                return Err(HarnessError::Protocol {
                    detail: format!("unexpected referee message {other:?}"),
                });
            }
        }
    }
}
