//! Wire protocol for distributed rounds: one JSON object per line, tagged by
//! a `t` field. Inputs and outputs travel as their string labels, parties are
//! 0-based indices, and unknown fields are ignored so the format can grow.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const PROTOCOL_VERSION: u32 = 1;

/// Everything that crosses the wire, in both directions.
///
/// Referee to party: `Hello` (ack), `Input`, `PeerDeliver`, `Eanswer`,
/// `RoundResult`, `End`, `Error`. Party to referee: `Hello`, `Output`,
/// `Peer`, `Equery`, `Wait`, `Error`.
///
/// Every referee stimulus (`Input`, `PeerDeliver`, `Eanswer`) obliges the
/// party to respond with exactly one action line: `Output`, `Wait`, `Equery`,
/// or a `Peer` chain whose last link has `more == false`. The referee reads
/// until that terminator, which keeps scheduling deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Message {
    /// Handshake, sent by the party first and echoed by the referee.
    Hello { version: u32, party: usize },
    /// The party's input label for a round.
    Input { round: u64, input: String },
    /// The party's final answer for a round.
    Output { round: u64, output: String },
    /// Ask the referee to relay `payload` to party `to`. `more` marks a
    /// fan-out chain that continues with another line.
    Peer {
        round: u64,
        to: usize,
        payload: String,
        #[serde(default, skip_serializing_if = "is_false")]
        more: bool,
    },
    /// A relayed payload, delivered if it made the deadline.
    PeerDeliver {
        round: u64,
        from: usize,
        payload: String,
    },
    /// Measure the shared resource with this input label.
    Equery { round: u64, input: String },
    /// The measurement outcome label.
    Eanswer { round: u64, output: String },
    /// Explicitly decline to act on a stimulus.
    Wait { round: u64 },
    /// Round closure: everyone's recorded output ("" when missing) and the
    /// utility awarded.
    RoundResult {
        round: u64,
        outputs: Vec<String>,
        utility: f64,
    },
    /// Session closure with the summary statistics.
    End { rounds: u64, mean_utility: f64 },
    Error { detail: String },
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Serializes one message as a line, flushing so peers see it immediately.
pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), HarnessError> {
    let text = serde_json::to_string(msg).map_err(|e| HarnessError::Protocol {
        detail: format!("serialize: {e}"),
    })?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads one message line; `Ok(None)` means the peer closed the connection.
pub fn read_message(r: &mut impl BufRead) -> Result<Option<Message>, HarnessError> {
    let mut line = String::new();
    let n = r.read_line(&mut line)?;
    if n == 0 {
        return Ok(None);
    }
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Err(HarnessError::Protocol {
            detail: "blank line".into(),
        });
    }
    parse_message(trimmed).map(Some)
}

pub fn parse_message(line: &str) -> Result<Message, HarnessError> {
    serde_json::from_str(line).map_err(|e| HarnessError::Protocol {
        detail: format!("bad message {line:?}: {e}"),
    })
}
