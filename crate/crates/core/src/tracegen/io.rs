//! Trace files.
//!
//! Binary layout, all integers big-endian:
//!
//! ```text
//! magic "DCIT" | version u16 | schema hash u64 | N u16 | T u32 | UE count u16
//! then per record: ue u16 | tti u32 | payload ceil(N/8) bytes
//! ```
//!
//! Records are written in (tti, ue) order.

use std::io::{Read, Write};

use super::{DciTrace, UeStream};
use crate::error::{Error, Result};
use crate::schema::{DciMessage, DciSchema};

pub const TRACE_MAGIC: [u8; 4] = *b"DCIT";
pub const TRACE_VERSION: u16 = 1;

pub fn write_trace(trace: &DciTrace, w: &mut impl Write) -> Result<()> {
    let n = trace.schema().total_bits();
    w.write_all(&TRACE_MAGIC)?;
    w.write_all(&TRACE_VERSION.to_be_bytes())?;
    w.write_all(&trace.schema().hash().to_be_bytes())?;
    w.write_all(&(n as u16).to_be_bytes())?;
    w.write_all(&(trace.tti_count() as u32).to_be_bytes())?;
    w.write_all(&(trace.num_ues() as u16).to_be_bytes())?;

    let mut records: Vec<(u32, u16, &DciMessage)> = trace
        .streams()
        .iter()
        .flat_map(|s| s.entries.iter().map(move |(t, m)| (*t, s.ue as u16, m)))
        .collect();
    records.sort_by_key(|&(t, ue, _)| (t, ue));
    for (t, ue, m) in records {
        w.write_all(&ue.to_be_bytes())?;
        w.write_all(&t.to_be_bytes())?;
        w.write_all(&m.to_bytes())?;
    }
    Ok(())
}

pub fn read_trace(r: &mut impl Read, schema: &DciSchema) -> Result<DciTrace> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let header_len = 4 + 2 + 8 + 2 + 4 + 2;
    if bytes.len() < header_len || bytes[..4] != TRACE_MAGIC {
        return Err(Error::CorruptInput("not a trace file".into()));
    }
    let be16 = |o: usize| u16::from_be_bytes([bytes[o], bytes[o + 1]]);
    let be32 = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = be16(4);
    if version != TRACE_VERSION {
        return Err(Error::CorruptInput(format!("unsupported trace version {version}")));
    }
    let hash = u64::from_be_bytes(bytes[6..14].try_into().expect("8 bytes"));
    if hash != schema.hash() {
        return Err(Error::Config(format!(
            "trace was written for schema {hash:016x}, got {:016x}",
            schema.hash()
        )));
    }
    let n = be16(14) as usize;
    if n != schema.total_bits() {
        return Err(Error::Config(format!(
            "trace messages have {n} bits, schema has {}",
            schema.total_bits()
        )));
    }
    let tti_count = be32(16) as usize;
    let num_ues = be16(20) as usize;
    let payload = n.div_ceil(8);
    let rec_len = 2 + 4 + payload;
    let body = &bytes[header_len..];
    if body.len() % rec_len != 0 {
        return Err(Error::CorruptInput("trace body is not a whole number of records".into()));
    }
    let mut streams: Vec<UeStream> = (0..num_ues)
        .map(|ue| UeStream {
            ue,
            entries: Vec::new(),
        })
        .collect();
    for rec in body.chunks_exact(rec_len) {
        let ue = u16::from_be_bytes([rec[0], rec[1]]) as usize;
        let tti = u32::from_be_bytes(rec[2..6].try_into().expect("4 bytes"));
        let stream = streams
            .get_mut(ue)
            .ok_or_else(|| Error::CorruptInput(format!("record for UE {ue} of {num_ues}")))?;
        stream.entries.push((tti, DciMessage::from_bytes(&rec[6..], n)?));
    }
    let trace = DciTrace::new(schema.clone(), tti_count, streams);
    trace.validate()?;
    Ok(trace)
}

/// One `ue tti hex` line per record, in file order.
pub fn trace_to_hex(trace: &DciTrace) -> String {
    let mut records: Vec<(u32, usize, &DciMessage)> = trace
        .streams()
        .iter()
        .flat_map(|s| s.entries.iter().map(move |(t, m)| (*t, s.ue, m)))
        .collect();
    records.sort_by_key(|&(t, ue, _)| (t, ue));
    records
        .into_iter()
        .map(|(t, ue, m)| format!("{ue} {t} {}\n", m.to_hex()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracegen::{simulate, SimConfig};

    #[test]
    fn binary_round_trip() {
        let schema = DciSchema::default_dci();
        let cfg = SimConfig {
            tti_count: 300,
            ..SimConfig::default()
        };
        let trace = simulate(&cfg, &schema).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DCIT");
        let back = read_trace(&mut buf.as_slice(), &schema).unwrap();
        assert_eq!(back, trace);

        let other = schema.with_eta(4).unwrap();
        assert!(matches!(read_trace(&mut buf.as_slice(), &other), Err(Error::Config(_))));
        buf.pop();
        assert!(read_trace(&mut buf.as_slice(), &schema).is_err());
    }

    #[test]
    fn hex_lines_match_records() {
        let schema = DciSchema::default_dci();
        let cfg = SimConfig {
            tti_count: 50,
            ..SimConfig::default()
        };
        let trace = simulate(&cfg, &schema).unwrap();
        let hex = trace_to_hex(&trace);
        assert_eq!(hex.lines().count(), trace.num_messages());
        for line in hex.lines() {
            let hex_part = line.split_whitespace().nth(2).unwrap();
            assert_eq!(hex_part.len(), 10);
        }
    }
}
