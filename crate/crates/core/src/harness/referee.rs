//! Referee: accepts one TCP connection per party, runs scored rounds under a
//! latency scenario, and produces a per-round report.
//!
//! In logical-clock mode the latency matrix is simulated: each relayed peer
//! message is delivered at the sender's clock plus the configured latency,
//! deliveries past the deadline are dropped, and the whole session is a
//! deterministic function of the config and seed. In wall-clock mode messages
//! are relayed immediately and the real elapsed time is compared against the
//! deadline.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{read_message, write_message, Message, PROTOCOL_VERSION};
use super::{sample_weighted, EntanglementSession, HarnessError};
use crate::game::{Behavior, ValidatedGame};
use crate::latency::LatencyScenario;
use crate::seeding::splitmix64_at;

/// How long the referee waits for a party's reply to a stimulus before
/// declaring it dead. This is a liveness guard, not part of the game clock.
const RESPONSE_TIMEOUT: Duration = Duration::from_secs(30);
/// Extra wall-clock time granted to stragglers when late outputs are
/// accepted.
const WALL_GRACE: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// Simulated time driven by the latency matrix; fully reproducible.
    Logical,
    /// Real elapsed time; the latency matrix is ignored for relaying.
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatePolicy {
    /// A round with a late or missing output scores zero.
    ScoreZero,
    /// Late outputs are scored normally and flagged.
    Accept,
}

/// What shared resource the referee offers for measurement queries.
pub enum RefereeMode {
    Classical,
    Entangled(Behavior),
}

pub struct RefereeConfig {
    pub game: ValidatedGame,
    pub scenario: LatencyScenario,
    pub mode: RefereeMode,
    pub rounds: u64,
    pub seed: u64,
    pub clock: ClockMode,
    pub late_policy: LatePolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<Option<String>>,
    pub utility: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionReport {
    pub protocol_version: u32,
    pub parties: usize,
    pub rounds_played: u64,
    pub mean_utility: f64,
    pub rounds: Vec<RoundRecord>,
}

enum ReaderEvent {
    Msg(Message),
    Bad(String),
    Eof,
}

struct PartyLink {
    writer: BufWriter<TcpStream>,
    rx: mpsc::Receiver<ReaderEvent>,
    alive: bool,
}

impl PartyLink {
    fn send(&mut self, msg: &Message) -> bool {
        if !self.alive {
            return false;
        }
        if write_message(&mut self.writer, msg).is_err() {
            self.alive = false;
            return false;
        }
        true
    }
}

#[derive(Debug)]
enum Stimulus {
    Input(String),
    PeerDeliver { from: usize, payload: String },
}

struct Delivery {
    time: f64,
    seq: u64,
    to: usize,
    stim: Stimulus,
}

impl PartialEq for Delivery {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Delivery {}
impl PartialOrd for Delivery {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Delivery {
    // Reversed so the BinaryHeap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn spawn_reader(stream: TcpStream) -> mpsc::Receiver<ReaderEvent> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(stream);
        loop {
            match read_message(&mut reader) {
                Ok(Some(msg)) => {
                    if tx.send(ReaderEvent::Msg(msg)).is_err() {
                        return;
                    }
                }
                Ok(None) => {
                    let _ = tx.send(ReaderEvent::Eof);
                    return;
                }
                Err(e) => {
                    let _ = tx.send(ReaderEvent::Bad(e.to_string()));
                    return;
                }
            }
        }
    });
    rx
}

/// Accepts connections until every party index has completed the handshake.
fn accept_parties(
    listener: &TcpListener,
    parties: usize,
) -> Result<Vec<PartyLink>, HarnessError> {
    let mut links: Vec<Option<PartyLink>> = (0..parties).map(|_| None).collect();
    let mut connected = 0usize;
    while connected < parties {
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream.try_clone()?);
        let hello = read_message(&mut reader)?;
        match hello {
            Some(Message::Hello { version, party }) => {
                if version != PROTOCOL_VERSION {
                    let _ = write_message(
                        &mut writer,
                        &Message::Error {
                            detail: format!(
                                "version {version} not supported, want {PROTOCOL_VERSION}"
                            ),
                        },
                    );
                    continue;
                }
                if party >= parties || links[party].is_some() {
                    let _ = write_message(
                        &mut writer,
                        &Message::Error {
                            detail: format!("party index {party} invalid or taken"),
                        },
                    );
                    continue;
                }
                write_message(&mut writer, &Message::Hello { version, party })?;
                drop(reader);
                links[party] = Some(PartyLink {
                    writer,
                    rx: spawn_reader(stream),
                    alive: true,
                });
                connected += 1;
            }
            _ => {
                let _ = write_message(
                    &mut writer,
                    &Message::Error {
                        detail: "expected hello".into(),
                    },
                );
            }
        }
    }
    Ok(links.into_iter().map(|l| l.expect("all connected")).collect())
}

struct RoundCtx<'a> {
    game: &'a ValidatedGame,
    round: u64,
    outputs: Vec<Option<String>>,
    flags: Vec<String>,
}

impl RoundCtx<'_> {
    fn flag(&mut self, text: String) {
        self.flags.push(text);
    }

    fn record_output(&mut self, party: usize, label: String) {
        if self.game.output_index(party, &label).is_err() {
            self.flag(format!("protocol:party={party}:unknown output label {label:?}"));
            return;
        }
        if self.outputs[party].is_some() {
            self.flag(format!("duplicate_output:party={party}"));
        } else {
            self.outputs[party] = Some(label);
        }
    }
}

/// Reads one response group from a party: zero or more `Peer{more:true}`
/// lines ended by a terminal action. `Equery` is answered inline and the
/// read continues. Returns scheduled peer sends as (to, payload).
fn read_response_group(
    link: &mut PartyLink,
    party: usize,
    ctx: &mut RoundCtx,
    session: &mut Option<EntanglementSession>,
) -> Vec<(usize, String)> {
    let game = ctx.game;
    let mut sends = Vec::new();
    loop {
        let event = match link.rx.recv_timeout(RESPONSE_TIMEOUT) {
            Ok(e) => e,
            Err(_) => {
                link.alive = false;
                ctx.flag(format!("protocol:party={party}:response timeout"));
                return sends;
            }
        };
        let msg = match event {
            ReaderEvent::Msg(m) => m,
            ReaderEvent::Eof => {
                link.alive = false;
                ctx.flag(format!("protocol:party={party}:disconnected"));
                return sends;
            }
            ReaderEvent::Bad(detail) => {
                link.alive = false;
                ctx.flag(format!("protocol:party={party}:{detail}"));
                let _ = link.send(&Message::Error { detail });
                return sends;
            }
        };
        match msg {
            Message::Output { round, output } if round == ctx.round => {
                ctx.record_output(party, output);
                return sends;
            }
            Message::Wait { round } if round == ctx.round => return sends,
            Message::Peer { round, to, payload, more } if round == ctx.round => {
                if to >= game.parties() || to == party {
                    link.alive = false;
                    ctx.flag(format!("protocol:party={party}:bad peer target {to}"));
                    let _ = link.send(&Message::Error {
                        detail: format!("bad peer target {to}"),
                    });
                    return sends;
                }
                sends.push((to, payload));
                if !more {
                    return sends;
                }
            }
            Message::Equery { round, input } if round == ctx.round => {
                let answered = session.as_mut().and_then(|s| {
                    let idx = game.input_index(party, &input).ok()?;
                    s.query(ctx.round, party, idx).ok()
                });
                match answered {
                    Some(out_idx) => {
                        let output = game.output_labels(party)[out_idx].clone();
                        if !link.send(&Message::Eanswer { round: ctx.round, output }) {
                            ctx.flag(format!("protocol:party={party}:write failed"));
                            return sends;
                        }
                    }
                    None => {
                        link.alive = false;
                        ctx.flag(format!(
                            "protocol:party={party}:measurement query rejected"
                        ));
                        let _ = link.send(&Message::Error {
                            detail: "measurement query rejected".into(),
                        });
                        return sends;
                    }
                }
            }
            other => {
                link.alive = false;
                ctx.flag(format!(
                    "protocol:party={party}:unexpected message {other:?}"
                ));
                let _ = link.send(&Message::Error {
                    detail: "unexpected message".into(),
                });
                return sends;
            }
        }
    }
}

/// Runs the session: handshake, `rounds` scored rounds, `End`, report.
pub fn referee_serve(
    listener: &TcpListener,
    config: &RefereeConfig,
) -> Result<SessionReport, HarnessError> {
    let game = &config.game;
    let parties = game.parties();
    assert_eq!(
        config.scenario.parties(),
        parties,
        "scenario/game party mismatch"
    );
    let mut links = accept_parties(listener, parties)?;
    let mut input_rng = ChaCha8Rng::seed_from_u64(splitmix64_at(config.seed, 0));
    let mut session = match &config.mode {
        RefereeMode::Classical => None,
        RefereeMode::Entangled(behavior) => Some(EntanglementSession::new(
            behavior.clone(),
            splitmix64_at(config.seed, 1),
        )?),
    };

    let mut records = Vec::with_capacity(config.rounds as usize);
    let mut total = 0.0f64;
    for round in 0..config.rounds {
        let joint_in = sample_weighted(&mut input_rng, game.pi());
        let mut in_digits = vec![0usize; parties];
        game.input_shape().unflatten_into(joint_in, &mut in_digits);
        let inputs: Vec<String> = (0..parties)
            .map(|j| game.input_labels(j)[in_digits[j]].clone())
            .collect();

        let mut ctx = RoundCtx {
            game,
            round,
            outputs: vec![None; parties],
            flags: Vec::new(),
        };
        match config.clock {
            ClockMode::Logical => run_logical_round(
                config,
                &mut links,
                &mut ctx,
                &inputs,
                &mut session,
            ),
            ClockMode::Wall => run_wall_round(
                config,
                &mut links,
                &mut ctx,
                &inputs,
                &mut session,
            ),
        }
        if let Some(s) = session.as_mut() {
            s.finish_round(round);
        }

        let utility = score_round(game, &inputs, &mut ctx);
        total += utility;
        let result = Message::RoundResult {
            round,
            outputs: ctx
                .outputs
                .iter()
                .map(|o| o.clone().unwrap_or_default())
                .collect(),
            utility,
        };
        for link in links.iter_mut() {
            link.send(&result);
        }
        records.push(RoundRecord {
            round,
            inputs,
            outputs: ctx.outputs,
            utility,
            flags: ctx.flags,
        });
    }

    let mean = if config.rounds > 0 {
        total / config.rounds as f64
    } else {
        0.0
    };
    let end = Message::End {
        rounds: config.rounds,
        mean_utility: mean,
    };
    for link in links.iter_mut() {
        link.send(&end);
    }
    Ok(SessionReport {
        protocol_version: PROTOCOL_VERSION,
        parties,
        rounds_played: config.rounds,
        mean_utility: mean,
        rounds: records,
    })
}

fn run_logical_round(
    config: &RefereeConfig,
    links: &mut [PartyLink],
    ctx: &mut RoundCtx,
    inputs: &[String],
    session: &mut Option<EntanglementSession>,
) {
    let parties = links.len();
    let deadline = config.scenario.deadline_s();
    let mut clock = vec![0.0f64; parties];
    let mut seq = 0u64;
    let mut heap: BinaryHeap<Delivery> = BinaryHeap::new();
    for (j, input) in inputs.iter().enumerate() {
        heap.push(Delivery {
            time: 0.0,
            seq,
            to: j,
            stim: Stimulus::Input(input.clone()),
        });
        seq += 1;
    }
    while let Some(d) = heap.pop() {
        if d.time > deadline {
            if let Stimulus::PeerDeliver { from, .. } = d.stim {
                ctx.flag(format!("late_drop:to={},from={}", d.to, from));
            }
            continue;
        }
        if !links[d.to].alive {
            continue;
        }
        clock[d.to] = clock[d.to].max(d.time);
        let msg = match &d.stim {
            Stimulus::Input(label) => Message::Input {
                round: ctx.round,
                input: label.clone(),
            },
            Stimulus::PeerDeliver { from, payload } => Message::PeerDeliver {
                round: ctx.round,
                from: *from,
                payload: payload.clone(),
            },
        };
        if !links[d.to].send(&msg) {
            ctx.flag(format!("protocol:party={}:write failed", d.to));
            continue;
        }
        let sends = read_response_group(&mut links[d.to], d.to, ctx, session);
        for (dest, payload) in sends {
            heap.push(Delivery {
                time: clock[d.to] + config.scenario.latency(d.to, dest),
                seq,
                to: dest,
                stim: Stimulus::PeerDeliver {
                    from: d.to,
                    payload,
                },
            });
            seq += 1;
        }
    }
}

fn run_wall_round(
    config: &RefereeConfig,
    links: &mut [PartyLink],
    ctx: &mut RoundCtx,
    inputs: &[String],
    session: &mut Option<EntanglementSession>,
) {
    let parties = links.len();
    let deadline = Duration::from_secs_f64(config.scenario.deadline_s());
    let patience = match config.late_policy {
        LatePolicy::Accept => deadline + WALL_GRACE,
        LatePolicy::ScoreZero => deadline,
    };
    let start = Instant::now();
    for (j, input) in inputs.iter().enumerate() {
        if links[j].alive {
            let ok = links[j].send(&Message::Input {
                round: ctx.round,
                input: input.clone(),
            });
            if !ok {
                ctx.flag(format!("protocol:party={j}:write failed"));
            }
        }
    }
    loop {
        let all_done = (0..parties).all(|j| ctx.outputs[j].is_some() || !links[j].alive);
        if all_done || start.elapsed() > patience {
            break;
        }
        let mut progressed = false;
        for j in 0..parties {
            if !links[j].alive {
                continue;
            }
            while let Ok(event) = links[j].rx.try_recv() {
                progressed = true;
                let msg = match event {
                    ReaderEvent::Msg(m) => m,
                    ReaderEvent::Eof => {
                        links[j].alive = false;
                        ctx.flag(format!("protocol:party={j}:disconnected"));
                        break;
                    }
                    ReaderEvent::Bad(detail) => {
                        links[j].alive = false;
                        ctx.flag(format!("protocol:party={j}:{detail}"));
                        break;
                    }
                };
                match msg {
                    Message::Output { round, output } if round == ctx.round => {
                        if start.elapsed() > deadline {
                            ctx.flag(format!("late:party={j}"));
                            if config.late_policy == LatePolicy::ScoreZero {
                                continue;
                            }
                        }
                        ctx.record_output(j, output);
                    }
                    Message::Wait { .. } => {}
                    Message::Peer { round, to, payload, .. } if round == ctx.round => {
                        if to < parties && to != j && links[to].alive {
                            let ok = links[to].send(&Message::PeerDeliver {
                                round: ctx.round,
                                from: j,
                                payload,
                            });
                            if !ok {
                                ctx.flag(format!("protocol:party={to}:write failed"));
                            }
                        } else {
                            ctx.flag(format!("protocol:party={j}:bad peer target {to}"));
                        }
                    }
                    Message::Equery { round, input } if round == ctx.round => {
                        let answered = session.as_mut().and_then(|s| {
                            let idx = config.game.input_index(j, &input).ok()?;
                            s.query(ctx.round, j, idx).ok()
                        });
                        match answered {
                            Some(out_idx) => {
                                let output =
                                    config.game.output_labels(j)[out_idx].clone();
                                links[j].send(&Message::Eanswer {
                                    round: ctx.round,
                                    output,
                                });
                            }
                            None => {
                                links[j].alive = false;
                                ctx.flag(format!(
                                    "protocol:party={j}:measurement query rejected"
                                ));
                            }
                        }
                    }
                    other => {
                        links[j].alive = false;
                        ctx.flag(format!(
                            "protocol:party={j}:unexpected message {other:?}"
                        ));
                    }
                }
            }
        }
        if !progressed {
            thread::sleep(Duration::from_micros(200));
        }
    }
}

fn score_round(game: &ValidatedGame, inputs: &[String], ctx: &mut RoundCtx) -> f64 {
    let parties = game.parties();
    let mut missing = false;
    for j in 0..parties {
        if ctx.outputs[j].is_none() {
            ctx.flag(format!("missing_output:party={j}"));
            missing = true;
        }
    }
    if missing {
        return 0.0;
    }
    let mut in_digits = vec![0usize; parties];
    let mut out_digits = vec![0usize; parties];
    for j in 0..parties {
        // Both labels were produced or validated by the referee already.
        in_digits[j] = game
            .input_index(j, &inputs[j])
            .expect("input labels come from the game");
        out_digits[j] = game
            .output_index(j, ctx.outputs[j].as_ref().expect("checked above"))
            .expect("output labels are validated on receipt");
    }
    let joint_in = game.input_shape().flatten(&in_digits);
    let joint_out = game.output_shape().flatten(&out_digits);
    game.utility(joint_in, joint_out)
}
