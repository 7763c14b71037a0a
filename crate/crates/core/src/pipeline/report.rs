//! CSV and binary outputs of an evaluation.
//!
//! * records: `ue,tti,method,original_bits,compressed_bits,lossless_ok`
//! * summary: `method,mean_ratio`
//! * bit map: `ue,tti,method,bitmap`, one character per bit position of the
//!   original message width, `0`/`1` for payload bits and `.` past the end
//!   of the compressed frame
//! * frame file: magic `DCIF`, frame count u32, then per frame UE u16,
//!   TTI u32 and the frame itself (all big-endian)

use std::io::{Read, Write};

use super::evaluate::{CompressionReport, MessageRecord};
use crate::coders::{CompressedFrame, Method};
use crate::error::{Error, Result};

pub const FRAME_MAGIC: [u8; 4] = *b"DCIF";

pub fn write_records_csv(report: &CompressionReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["ue", "tti", "method", "original_bits", "compressed_bits", "lossless_ok"])?;
    for r in &report.records {
        out.write_record([
            r.ue.to_string(),
            r.tti.to_string(),
            r.method.name().to_string(),
            r.original_bits.to_string(),
            r.compressed_bits.to_string(),
            r.lossless_ok.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv(r: impl Read) -> Result<Vec<MessageRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse {
            line: i + 2,
            msg: format!("bad {what}"),
        };
        let field = |j: usize| rec.get(j).ok_or_else(|| bad("column count"));
        out.push(MessageRecord {
            ue: field(0)?.parse().map_err(|_| bad("ue"))?,
            tti: field(1)?.parse().map_err(|_| bad("tti"))?,
            method: field(2)?.parse().map_err(|_| bad("method"))?,
            original_bits: field(3)?.parse().map_err(|_| bad("original_bits"))?,
            compressed_bits: field(4)?.parse().map_err(|_| bad("compressed_bits"))?,
            lossless_ok: field(5)?.parse().map_err(|_| bad("lossless_ok"))?,
        });
    }
    Ok(out)
}

pub fn write_summary_csv(report: &CompressionReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "mean_ratio"])?;
    for (m, ratio) in report.summary() {
        out.write_record([m.name().to_string(), format!("{ratio:.6}")])?;
    }
    out.flush()?;
    Ok(())
}

/// Occupancy string of one frame: payload bits, then `.` up to `width`.
pub fn bitmap_row(frame: &CompressedFrame, width: usize) -> String {
    let mut s: String = frame.payload.iter().map(|&b| if b { '1' } else { '0' }).collect();
    while s.len() < width {
        s.push('.');
    }
    s
}

pub fn write_bitmap_csv(report: &CompressionReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["ue", "tti", "method", "bitmap"])?;
    for (r, f) in report.records.iter().zip(&report.frames) {
        out.write_record([
            r.ue.to_string(),
            r.tti.to_string(),
            r.method.name().to_string(),
            bitmap_row(f, r.original_bits),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// A frame with its stream position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameEntry {
    pub ue: usize,
    pub tti: u32,
    pub frame: CompressedFrame,
}

pub fn write_frames(entries: &[FrameEntry], w: &mut impl Write) -> Result<()> {
    let count = u32::try_from(entries.len()).map_err(|_| Error::InvalidArgument("too many frames".into()))?;
    w.write_all(&FRAME_MAGIC)?;
    w.write_all(&count.to_be_bytes())?;
    for e in entries {
        let ue = u16::try_from(e.ue).map_err(|_| Error::InvalidArgument(format!("UE id {} too large", e.ue)))?;
        w.write_all(&ue.to_be_bytes())?;
        w.write_all(&e.tti.to_be_bytes())?;
        e.frame.write_to(w)?;
    }
    Ok(())
}

pub fn read_frames(r: &mut impl Read) -> Result<Vec<FrameEntry>> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if head[..4] != FRAME_MAGIC {
        return Err(Error::CorruptInput("not a frame file".into()));
    }
    let count = u32::from_be_bytes(head[4..8].try_into().expect("4 bytes"));
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for i in 0..count {
        let mut pos = [0u8; 6];
        r.read_exact(&mut pos)?;
        let frame = CompressedFrame::read_from(r)?
            .ok_or_else(|| Error::CorruptInput(format!("frame file ends after {i} of {count} frames")))?;
        out.push(FrameEntry {
            ue: u16::from_be_bytes([pos[0], pos[1]]) as usize,
            tti: u32::from_be_bytes([pos[2], pos[3], pos[4], pos[5]]),
            frame,
        });
    }
    Ok(out)
}

/// Frames of one method, in report order.
pub fn frame_entries(report: &CompressionReport, method: Method) -> Vec<FrameEntry> {
    report
        .records
        .iter()
        .zip(&report.frames)
        .filter(|(r, _)| r.method == method)
        .map(|(r, f)| FrameEntry {
            ue: r.ue,
            tti: r.tti,
            frame: f.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> CompressionReport {
        let rec = |ue, tti, method, k| MessageRecord {
            ue,
            tti,
            method,
            original_bits: 6,
            compressed_bits: k,
            lossless_ok: true,
        };
        CompressionReport {
            records: vec![
                rec(0, 3, Method::Identity, 6),
                rec(1, 4, Method::Huffman, 2),
                rec(1, 9, Method::Huffman, 4),
            ],
            frames: vec![
                CompressedFrame::new(Method::Identity, vec![true, false, true, true, false, false]),
                CompressedFrame::new(Method::Huffman, vec![false, true]),
                CompressedFrame::new(Method::Huffman, vec![true, true, true, false]),
            ],
        }
    }

    #[test]
    fn records_round_trip_through_csv() {
        let r = report();
        let mut buf = Vec::new();
        write_records_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ue,tti,method,original_bits,compressed_bits,lossless_ok\n"));
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), r.records);
    }

    #[test]
    fn summary_has_one_row_per_method() {
        let mut buf = Vec::new();
        write_summary_csv(&report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "method,mean_ratio\nidentity,1.000000\nhuffman,2.000000\n");
    }

    #[test]
    fn bitmap_marks_null_space() {
        let mut buf = Vec::new();
        write_bitmap_csv(&report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "0,3,identity,101100");
        assert_eq!(lines[2], "1,4,huffman,01....");
        assert_eq!(bitmap_row(&CompressedFrame::new(Method::Rnn, vec![true; 3]), 2), "111");
    }

    #[test]
    fn frame_file_round_trips_and_detects_truncation() {
        let entries = frame_entries(&report(), Method::Huffman);
        assert_eq!(entries.len(), 2);
        let mut buf = Vec::new();
        write_frames(&entries, &mut buf).unwrap();
        assert_eq!(read_frames(&mut buf.as_slice()).unwrap(), entries);
        let cut = &buf[..buf.len() - 1];
        assert!(read_frames(&mut &cut[..]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_frames(&mut bad.as_slice()), Err(Error::CorruptInput(_))));
    }
}
