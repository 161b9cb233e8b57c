//! End-to-end referee/party sessions over loopback TCP.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use nonlocal::catalog;
use nonlocal::harness::party::{party_run, PartyConfig, PartyStrategy};
use nonlocal::harness::referee::{
    referee_serve, ClockMode, LatePolicy, RefereeConfig, RefereeMode, SessionReport,
};
use nonlocal::latency::LatencyScenario;
use nonlocal::quantum::{behavior_from_quantum, phi_plus, xz_projectors, QuantumStrategy};

fn map_of(pairs: &[(&str, &str)]) -> HashMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn two_party_scenario(latency_s: f64, deadline_s: f64) -> LatencyScenario {
    LatencyScenario::from_matrix(
        vec![vec![0.0, latency_s], vec![latency_s, 0.0]],
        deadline_s,
        false,
    )
    .expect("valid scenario")
}

/// Runs a referee thread plus one thread per party and returns the report.
fn run_session(
    config: RefereeConfig,
    strategies: Vec<(PartyStrategy, Option<LatencyScenario>)>,
) -> SessionReport {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = listener.local_addr().expect("bound address");
    let referee = thread::spawn(move || referee_serve(&listener, &config));
    let mut parties = Vec::new();
    for (party, (strategy, scenario)) in strategies.into_iter().enumerate() {
        parties.push(thread::spawn(move || {
            let stream = TcpStream::connect(addr).expect("connect");
            party_run(
                stream,
                &PartyConfig {
                    party,
                    strategy,
                    scenario,
                },
            )
        }));
    }
    let report = referee.join().expect("referee thread").expect("session ok");
    for p in parties {
        p.join().expect("party thread").expect("party ok");
    }
    report
}

fn chsh_best_classical() -> Vec<(PartyStrategy, Option<LatencyScenario>)> {
    // Both parties always answer 0: wins everything except input (1, 1).
    let all_zero = PartyStrategy::Deterministic {
        map: map_of(&[("0", "0"), ("1", "0")]),
    };
    vec![(all_zero.clone(), None), (all_zero, None)]
}

fn config(
    mode: RefereeMode,
    scenario: LatencyScenario,
    rounds: u64,
    seed: u64,
) -> RefereeConfig {
    RefereeConfig {
        game: catalog::chsh(),
        scenario,
        mode,
        rounds,
        seed,
        clock: ClockMode::Logical,
        late_policy: LatePolicy::ScoreZero,
    }
}

#[test]
fn classical_sessions_are_byte_identical_across_runs() {
    let scenario = two_party_scenario(1e-4, 1.0);
    let run = || {
        run_session(
            config(RefereeMode::Classical, scenario.clone(), 100, 7),
            chsh_best_classical(),
        )
    };
    let a = run();
    let b = run();
    let a_text = serde_json::to_string(&a).expect("serializes");
    let b_text = serde_json::to_string(&b).expect("serializes");
    assert_eq!(a_text, b_text);
    assert_eq!(a.rounds_played, 100);
    // The all-zeros strategy wins unless the sampled input is (1, 1).
    assert!(a.mean_utility > 0.6 && a.mean_utility < 0.9, "{}", a.mean_utility);
    for record in &a.rounds {
        let expected = if record.inputs == vec!["1".to_string(), "1".to_string()] {
            0.0
        } else {
            1.0
        };
        assert_eq!(record.utility, expected, "round {}", record.round);
        assert!(record.flags.is_empty(), "round {} flags {:?}", record.round, record.flags);
    }
}

#[test]
fn forward_strategy_wins_only_when_the_deadline_allows_talk() {
    // Joint answers: party 1 disagrees exactly on input (1, 1).
    let forward0 = PartyStrategy::Forward {
        map: map_of(&[("0,0", "0"), ("0,1", "0"), ("1,0", "0"), ("1,1", "0")]),
        fallback: map_of(&[("0", "0"), ("1", "0")]),
    };
    let forward1 = PartyStrategy::Forward {
        map: map_of(&[("0,0", "0"), ("0,1", "0"), ("1,0", "0"), ("1,1", "1")]),
        fallback: map_of(&[("0", "0"), ("1", "0")]),
    };

    // Generous deadline: relays arrive, every round is won.
    let roomy = two_party_scenario(1e-4, 1.0);
    let report = run_session(
        config(RefereeMode::Classical, roomy.clone(), 60, 11),
        vec![
            (forward0.clone(), Some(roomy.clone())),
            (forward1.clone(), Some(roomy)),
        ],
    );
    assert_eq!(report.mean_utility, 1.0, "report {report:?}");

    // Tight deadline: relays can never arrive, parties fall back to the
    // best local answers and lose only on input (1, 1).
    let tight = two_party_scenario(1e-4, 1e-6);
    let report = run_session(
        config(RefereeMode::Classical, tight.clone(), 200, 11),
        vec![
            (forward0, Some(tight.clone())),
            (forward1, Some(tight)),
        ],
    );
    let expected: f64 = report
        .rounds
        .iter()
        .map(|r| {
            if r.inputs == vec!["1".to_string(), "1".to_string()] {
                0.0
            } else {
                1.0
            }
        })
        .sum::<f64>()
        / report.rounds.len() as f64;
    assert_eq!(report.mean_utility, expected);
    assert!(report.mean_utility > 0.6 && report.mean_utility < 0.9);
}

#[test]
fn entangled_sessions_beat_the_classical_bound() {
    let game = catalog::chsh();
    let meas = |a: f64, b: f64| -> Vec<Vec<_>> {
        vec![xz_projectors(a).to_vec(), xz_projectors(b).to_vec()]
    };
    let q = QuantumStrategy {
        dims: vec![2, 2],
        state: phi_plus(),
        measurements: vec![
            meas(0.0, std::f64::consts::FRAC_PI_4),
            meas(std::f64::consts::FRAC_PI_8, -std::f64::consts::FRAC_PI_8),
        ],
    };
    let behavior = behavior_from_quantum(&game, &q).expect("optimal strategy simulates");
    let scenario = two_party_scenario(1e-4, 1.0);
    let report = run_session(
        config(RefereeMode::Entangled(behavior), scenario, 4000, 3),
        vec![(PartyStrategy::Entangled, None), (PartyStrategy::Entangled, None)],
    );
    // Exact value is about 0.8536 and the standard error about 0.006.
    assert!(
        report.mean_utility > 0.80,
        "mean {} should exceed the classical 0.75",
        report.mean_utility
    );
    assert!(report.mean_utility <= 1.0);
}

#[test]
fn a_misbehaving_party_is_flagged_and_scored_zero() {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = listener.local_addr().expect("bound address");
    let scenario = two_party_scenario(1e-4, 1.0);
    let cfg = config(RefereeMode::Classical, scenario, 3, 2);
    let referee = thread::spawn(move || referee_serve(&listener, &cfg));

    // Party 0 plays honestly.
    let honest = thread::spawn(move || {
        let stream = TcpStream::connect(addr).expect("connect");
        let _ = party_run(
            stream,
            &PartyConfig {
                party: 0,
                strategy: PartyStrategy::Deterministic {
                    map: map_of(&[("0", "0"), ("1", "0")]),
                },
                scenario: None,
            },
        );
    });
    // Party 1 handshakes, then answers every stimulus with garbage.
    let rogue = thread::spawn(move || {
        let stream = TcpStream::connect(addr).expect("connect");
        let mut reader = BufReader::new(stream.try_clone().expect("clone"));
        let mut writer = stream;
        writeln!(writer, r#"{{"t":"hello","version":1,"party":1}}"#).expect("hello");
        let mut line = String::new();
        reader.read_line(&mut line).expect("hello ack");
        line.clear();
        // First stimulus arrives; reply with a non-JSON line.
        reader.read_line(&mut line).expect("input");
        writeln!(writer, "this is not a protocol message").expect("garbage");
        // Keep the socket open so the referee, not the party, ends things.
        let mut rest = String::new();
        use std::io::Read;
        let _ = reader.read_to_string(&mut rest);
    });

    let report = referee.join().expect("referee thread").expect("session survives");
    honest.join().expect("honest party");
    rogue.join().expect("rogue party");

    assert_eq!(report.rounds_played, 3);
    // Every round is lost: party 1 never answers.
    assert_eq!(report.mean_utility, 0.0);
    let first = &report.rounds[0];
    assert!(
        first.flags.iter().any(|f| f.starts_with("protocol:party=1")),
        "flags {:?}",
        first.flags
    );
    assert!(first.outputs[1].is_none());
    // Later rounds record the dead party as missing.
    assert!(report.rounds[2]
        .flags
        .iter()
        .any(|f| f == "missing_output:party=1"));
}
