use std::io::{BufRead, Write};

use super::{align, Op, Trace, TraceError, TraceEvent};
use crate::bdi::{Block, BLOCK_SIZE};

fn parse_hex_u64(token: &str) -> Option<u64> {
    let digits = token
        .strip_prefix("0x")
        .or_else(|| token.strip_prefix("0X"))
        .unwrap_or(token);
    if digits.is_empty() {
        return None;
    }
    u64::from_str_radix(digits, 16).ok()
}

fn parse_data(token: &str) -> Result<Block, String> {
    if token.len() != 2 * BLOCK_SIZE {
        return Err(format!(
            "write data has {} hex digits, expected {}",
            token.len(),
            2 * BLOCK_SIZE
        ));
    }
    let mut bytes = [0u8; BLOCK_SIZE];
    for (i, b) in bytes.iter_mut().enumerate() {
        let pair = token
            .get(2 * i..2 * i + 2)
            .ok_or("write data is not ASCII hex")?;
        *b = u8::from_str_radix(pair, 16)
            .map_err(|_| format!("malformed hex `{pair}` in write data"))?;
    }
    Ok(Block::new(bytes))
}

pub fn parse_text<R: BufRead>(reader: R) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| TraceError::Parse {
            line: line_no,
            message,
        };

        let mut tokens = content.split_whitespace();
        let op = tokens.next().expect("non-empty line");
        let addr_token = tokens.next().ok_or_else(|| err("missing address".into()))?;
        let addr = parse_hex_u64(addr_token)
            .ok_or_else(|| err(format!("malformed hex address `{addr_token}`")))?;

        let op = match op {
            "R" | "r" => Op::Read,
            "W" | "w" => {
                let data = tokens
                    .next()
                    .ok_or_else(|| err("write is missing its data".into()))?;
                Op::Write(parse_data(data).map_err(err)?)
            }
            other => return Err(err(format!("unknown operation `{other}`"))),
        };

        let insn_delta = match tokens.next() {
            None => None,
            Some("I") | Some("i") => {
                let count = tokens
                    .next()
                    .ok_or_else(|| err("`I` without a count".into()))?;
                Some(
                    count
                        .parse::<u64>()
                        .map_err(|_| err(format!("malformed instruction count `{count}`")))?,
                )
            }
            Some(other) => return Err(err(format!("unexpected token `{other}`"))),
        };
        if let Some(extra) = tokens.next() {
            return Err(err(format!("unexpected token `{extra}`")));
        }

        let addr = align(addr, &mut trace.misaligned);
        trace.events.push(TraceEvent {
            op,
            addr,
            insn_delta,
        });
    }
    Ok(trace)
}

pub fn write_text<W: Write>(events: &[TraceEvent], mut out: W) -> std::io::Result<()> {
    for ev in events {
        match &ev.op {
            Op::Read => write!(out, "R {:x}", ev.addr)?,
            Op::Write(data) => {
                write!(out, "W {:x} ", ev.addr)?;
                for b in data.as_bytes() {
                    write!(out, "{b:02x}")?;
                }
            }
        }
        if let Some(n) = ev.insn_delta {
            write!(out, " I {n}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}
