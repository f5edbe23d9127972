//! Line-delimited canonical trace text.
//!
//! ```text
//! #iacd-trace v1 capture_point=CLIENT
//! ts_us  src  dst  sport  dport  seq  ack  flags  payload  win  sack  opts
//! ```
//!
//! Fields are tab separated, integers base-10. `flags` joins the set bits in
//! the order `S F R P U A` with `.` (a SYN-ACK is `S.A`), `-` when empty.
//! `sack` is `l1-r1;l2-r2` or `-`; `opts` is a comma list drawn from
//! `mss=N`, `ws=N`, `sackok=1`, `dsack=1`, or `-`.

use std::fmt::Write as _;
use std::net::Ipv4Addr;

use super::{CapturePoint, PacketRecord, SackBlock, TcpFlags, TcpOptions, TraceError, TraceFile};

const HEADER_PREFIX: &str = "#iacd-trace v1 capture_point=";
const FIELD_COUNT: usize = 12;

const FLAG_LETTERS: [(TcpFlags, char); 6] = [
    (TcpFlags::SYN, 'S'),
    (TcpFlags::FIN, 'F'),
    (TcpFlags::RST, 'R'),
    (TcpFlags::PSH, 'P'),
    (TcpFlags::URG, 'U'),
    (TcpFlags::ACK, 'A'),
];

pub fn serialize_canonical(trace: &TraceFile) -> String {
    let mut out = String::with_capacity(64 + trace.len() * 80);
    out.push_str(HEADER_PREFIX);
    out.push_str(&trace.capture_point().to_string());
    out.push('\n');
    for p in trace.packets() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.timestamp_us,
            p.src,
            p.dst,
            p.src_port,
            p.dst_port,
            p.seq,
            p.ack,
            format_flags(p.flags),
            p.payload_len,
            p.window,
            format_sack(&p.sack_blocks),
            format_opts(&p.options),
        );
    }
    out
}

pub fn parse_canonical(text: &str) -> Result<TraceFile, TraceError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(TraceError::SchemaError {
        line: 1,
        message: "missing header line".into(),
    })?;
    let capture_point = header
        .strip_prefix(HEADER_PREFIX)
        .ok_or_else(|| schema(1, format!("expected header `{HEADER_PREFIX}<CLIENT|SERVER>`")))?
        .trim_end()
        .parse::<CapturePoint>()
        .map_err(|m| schema(1, m))?;

    let mut packets = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        packets.push(parse_record(line, lineno)?);
    }
    if packets.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    TraceFile::new(capture_point, packets)
}

fn schema(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::SchemaError {
        line,
        message: message.into(),
    }
}

fn parse_record(line: &str, lineno: usize) -> Result<PacketRecord, TraceError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != FIELD_COUNT {
        return Err(schema(
            lineno,
            format!("expected {FIELD_COUNT} tab-separated fields, found {}", fields.len()),
        ));
    }
    let int = |i: usize, name: &str| -> Result<u64, TraceError> {
        fields[i]
            .parse::<u64>()
            .map_err(|_| schema(lineno, format!("field `{name}`: `{}` is not an integer", fields[i])))
    };
    let bounded = |i: usize, name: &str, max: u64| -> Result<u64, TraceError> {
        let v = int(i, name)?;
        if v > max {
            return Err(schema(lineno, format!("field `{name}` out of range: {v}")));
        }
        Ok(v)
    };
    let addr = |i: usize, name: &str| -> Result<Ipv4Addr, TraceError> {
        fields[i].parse::<Ipv4Addr>().map_err(|_| {
            schema(
                lineno,
                format!("field `{name}`: `{}` is not an IPv4 address", fields[i]),
            )
        })
    };

    Ok(PacketRecord {
        timestamp_us: int(0, "ts_us")?,
        src: addr(1, "src")?,
        dst: addr(2, "dst")?,
        src_port: bounded(3, "sport", u16::MAX as u64)? as u16,
        dst_port: bounded(4, "dport", u16::MAX as u64)? as u16,
        seq: bounded(5, "seq", u32::MAX as u64)? as u32,
        ack: bounded(6, "ack", u32::MAX as u64)? as u32,
        flags: parse_flags(fields[7]).map_err(|m| schema(lineno, m))?,
        payload_len: bounded(8, "payload", u32::MAX as u64)? as u32,
        window: bounded(9, "win", u32::MAX as u64)? as u32,
        sack_blocks: parse_sack(fields[10]).map_err(|m| schema(lineno, m))?,
        options: parse_opts(fields[11]).map_err(|m| schema(lineno, m))?,
    })
}

fn format_flags(flags: TcpFlags) -> String {
    let letters: Vec<String> = FLAG_LETTERS
        .iter()
        .filter(|(f, _)| flags.contains(*f))
        .map(|(_, c)| c.to_string())
        .collect();
    if letters.is_empty() {
        "-".into()
    } else {
        letters.join(".")
    }
}

fn parse_flags(s: &str) -> Result<TcpFlags, String> {
    if s == "-" {
        return Ok(TcpFlags::empty());
    }
    let mut flags = TcpFlags::empty();
    let mut last_pos = None;
    for part in s.split('.') {
        let mut chars = part.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            return Err(format!("malformed flags `{s}`"));
        };
        let pos = FLAG_LETTERS
            .iter()
            .position(|(_, l)| *l == c)
            .ok_or_else(|| format!("unknown flag `{c}` in `{s}`"))?;
        if last_pos.is_some_and(|lp| pos <= lp) {
            return Err(format!("flags `{s}` not in canonical order"));
        }
        last_pos = Some(pos);
        flags |= FLAG_LETTERS[pos].0;
    }
    Ok(flags)
}

fn format_sack(blocks: &[SackBlock]) -> String {
    if blocks.is_empty() {
        return "-".into();
    }
    blocks
        .iter()
        .map(|b| format!("{}-{}", b.left, b.right))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_sack(s: &str) -> Result<Vec<SackBlock>, String> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|blk| {
            let (l, r) = blk
                .split_once('-')
                .ok_or_else(|| format!("malformed SACK block `{blk}`"))?;
            let left = l.parse::<u32>().map_err(|_| format!("bad SACK edge `{l}`"))?;
            let right = r.parse::<u32>().map_err(|_| format!("bad SACK edge `{r}`"))?;
            let block = SackBlock::new(left, right);
            if !block.is_valid() {
                return Err(format!("SACK block `{blk}` must satisfy left < right"));
            }
            Ok(block)
        })
        .collect()
}

fn format_opts(o: &TcpOptions) -> String {
    let mut parts = Vec::new();
    if let Some(mss) = o.mss {
        parts.push(format!("mss={mss}"));
    }
    if let Some(ws) = o.wscale {
        parts.push(format!("ws={ws}"));
    }
    if o.sack_permitted {
        parts.push("sackok=1".to_string());
    }
    if o.dsack {
        parts.push("dsack=1".to_string());
    }
    if parts.is_empty() {
        "-".into()
    } else {
        parts.join(",")
    }
}

fn parse_opts(s: &str) -> Result<TcpOptions, String> {
    let mut o = TcpOptions::default();
    if s == "-" {
        return Ok(o);
    }
    for kv in s.split(',') {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("malformed option `{kv}`"))?;
        let flag = |v: &str| match v {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(format!("option `{k}` expects 0 or 1, got `{v}`")),
        };
        match k {
            "mss" => o.mss = Some(v.parse().map_err(|_| format!("bad mss `{v}`"))?),
            "ws" => o.wscale = Some(v.parse().map_err(|_| format!("bad ws `{v}`"))?),
            "sackok" => o.sack_permitted = flag(v)?,
            "dsack" => o.dsack = flag(v)?,
            _ => return Err(format!("unknown option key `{k}`")),
        }
    }
    Ok(o)
}
