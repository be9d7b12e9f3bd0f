//! Converts dump records into a classic capture file so external
//! dissectors can open testbed traffic. Frames carry the private link
//! type 147, the first user-defined slot.

use unibed_core::util::from_hex;

pub const LINKTYPE_USER0: u32 = 147;
const MAGIC: u32 = 0xa1b2_c3d4;
const VERSION_MAJOR: u16 = 2;
const VERSION_MINOR: u16 = 4;
const SNAPLEN: u32 = 65_535;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// `records` pairs a microsecond timestamp with raw frame bytes.
pub fn records_to_pcap(records: &[(u64, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + records.len() * 32);
    push_u32(&mut out, MAGIC);
    push_u16(&mut out, VERSION_MAJOR);
    push_u16(&mut out, VERSION_MINOR);
    push_u32(&mut out, 0); // thiszone
    push_u32(&mut out, 0); // sigfigs
    push_u32(&mut out, SNAPLEN);
    push_u32(&mut out, LINKTYPE_USER0);
    for (time_us, bytes) in records {
        push_u32(&mut out, (time_us / 1_000_000) as u32);
        push_u32(&mut out, (time_us % 1_000_000) as u32);
        push_u32(&mut out, bytes.len() as u32);
        push_u32(&mut out, bytes.len() as u32);
        out.extend_from_slice(bytes);
    }
    out
}

/// Parses the text dump format, one `time_us<TAB>hex` record per line.
pub fn dump_text_to_records(text: &str) -> Result<Vec<(u64, Vec<u8>)>, String> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (ts, hex) = line
            .split_once('\t')
            .ok_or_else(|| format!("line {}: no tab separator", i + 1))?;
        let time_us: u64 = ts.parse().map_err(|_| format!("line {}: bad timestamp {:?}", i + 1, ts))?;
        let bytes = from_hex(hex).ok_or_else(|| format!("line {}: bad hex", i + 1))?;
        records.push((time_us, bytes));
    }
    Ok(records)
}
