use std::io::{Read, Write};

use super::{align, Op, Trace, TraceError, TraceEvent};
use crate::bdi::{Block, BLOCK_SIZE};

pub const BINARY_MAGIC: [u8; 4] = *b"STTR";
pub const BINARY_VERSION: u16 = 1;

const OP_READ: u8 = 0;
const OP_WRITE: u8 = 1;
const HEADER_LEN: usize = 6;
const ADDR_LEN: usize = 8;

pub fn read_binary<R: Read>(mut reader: R) -> Result<Trace, TraceError> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    let fmt_err = |offset: usize, message: String| TraceError::Format { offset, message };

    if buf.len() < HEADER_LEN {
        return Err(fmt_err(buf.len(), "truncated header".into()));
    }
    if buf[..4] != BINARY_MAGIC {
        return Err(fmt_err(0, format!("bad magic {:02x?}", &buf[..4])));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != BINARY_VERSION {
        return Err(fmt_err(4, format!("unsupported version {version}")));
    }

    let mut trace = Trace::default();
    let mut pos = HEADER_LEN;
    while pos < buf.len() {
        let start = pos;
        let op = buf[pos];
        pos += 1;
        let addr_bytes = buf
            .get(pos..pos + ADDR_LEN)
            .ok_or_else(|| fmt_err(start, "truncated record address".into()))?;
        let addr = u64::from_le_bytes(addr_bytes.try_into().expect("8 bytes"));
        pos += ADDR_LEN;
        let op = match op {
            OP_READ => Op::Read,
            OP_WRITE => {
                let data = buf
                    .get(pos..pos + BLOCK_SIZE)
                    .ok_or_else(|| fmt_err(start, "truncated write data".into()))?;
                pos += BLOCK_SIZE;
                Op::Write(Block::from_slice(data).expect("64 bytes"))
            }
            other => return Err(fmt_err(start, format!("unknown op {other}"))),
        };
        let addr = align(addr, &mut trace.misaligned);
        trace.events.push(TraceEvent {
            op,
            addr,
            insn_delta: None,
        });
    }
    Ok(trace)
}

/// Serializes events. Instruction counts have no binary representation and
/// are dropped.
pub fn write_binary<W: Write>(events: &[TraceEvent], mut out: W) -> std::io::Result<()> {
    out.write_all(&BINARY_MAGIC)?;
    out.write_all(&BINARY_VERSION.to_le_bytes())?;
    let mut dropped = 0usize;
    for ev in events {
        dropped += usize::from(ev.insn_delta.is_some());
        match &ev.op {
            Op::Read => {
                out.write_all(&[OP_READ])?;
                out.write_all(&ev.addr.to_le_bytes())?;
            }
            Op::Write(data) => {
                out.write_all(&[OP_WRITE])?;
                out.write_all(&ev.addr.to_le_bytes())?;
                out.write_all(data.as_bytes())?;
            }
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} instruction counts dropped: the binary format cannot carry them");
    }
    out.flush()
}
