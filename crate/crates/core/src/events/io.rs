//! Event files: CSV with header `t_us,x,y,p` and a packed little-endian
//! binary form of 13-byte records (`u64 t`, `u16 x`, `u16 y`, `i8 p`).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EventRecord, EventStream, Polarity};
use crate::error::{Error, Result};

pub const BIN_RECORD_LEN: usize = 13;

#[derive(Serialize, Deserialize)]
struct CsvRow {
    t_us: u64,
    x: u16,
    y: u16,
    p: i64,
}

pub fn read_events_csv(reader: impl Read) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_us", "x", "y", "p"] {
        return Err(Error::Parse(format!(
            "expected header t_us,x,y,p, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("event row {}: {e}", line + 1)))?;
        records.push(EventRecord::new(row.t_us, row.x, row.y, Polarity::from_sign(row.p)?));
    }
    EventStream::new(records)
}

pub fn write_events_csv(records: &[EventRecord], writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(CsvRow {
            t_us: r.t,
            x: r.x,
            y: r.y,
            p: i64::from(r.polarity.sign()),
        })
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_events_bin(mut reader: impl Read) -> Result<EventStream> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() % BIN_RECORD_LEN != 0 {
        return Err(Error::Parse(format!(
            "binary event file length {} is not a multiple of {BIN_RECORD_LEN}",
            bytes.len()
        )));
    }
    let records = bytes
        .chunks_exact(BIN_RECORD_LEN)
        .map(|c| {
            let t = u64::from_le_bytes(c[0..8].try_into().expect("8 bytes"));
            let x = u16::from_le_bytes([c[8], c[9]]);
            let y = u16::from_le_bytes([c[10], c[11]]);
            let p = Polarity::from_sign(i64::from(c[12] as i8))?;
            Ok(EventRecord::new(t, x, y, p))
        })
        .collect::<Result<Vec<_>>>()?;
    EventStream::new(records)
}

pub fn write_events_bin(records: &[EventRecord], mut writer: impl Write) -> Result<()> {
    let mut buf = Vec::with_capacity(records.len() * BIN_RECORD_LEN);
    for r in records {
        buf.extend_from_slice(&r.t.to_le_bytes());
        buf.extend_from_slice(&r.x.to_le_bytes());
        buf.extend_from_slice(&r.y.to_le_bytes());
        buf.push(r.polarity.sign() as u8);
    }
    writer.write_all(&buf)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<EventRecord> {
        vec![
            EventRecord::new(0, 1, 2, Polarity::Positive),
            EventRecord::new(7, 300, 200, Polarity::Negative),
            EventRecord::new(7, 0, 0, Polarity::Positive),
        ]
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        write_events_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_us,x,y,p\n0,1,2,1\n7,300,200,-1"));
        assert_eq!(read_events_csv(&buf[..]).unwrap().records(), &sample()[..]);
    }

    #[test]
    fn binary_round_trip() {
        let mut buf = Vec::new();
        write_events_bin(&sample(), &mut buf).unwrap();
        assert_eq!(buf.len(), 3 * BIN_RECORD_LEN);
        assert_eq!(read_events_bin(&buf[..]).unwrap().records(), &sample()[..]);
        assert!(read_events_bin(&buf[..5]).is_err());
    }

    #[test]
    fn csv_rejects_bad_polarity_and_order() {
        assert!(read_events_csv("t_us,x,y,p\n0,1,1,0\n".as_bytes()).is_err());
        assert!(read_events_csv("t_us,x,y,p\n5,1,1,1\n4,1,1,1\n".as_bytes()).is_err());
        assert!(read_events_csv("t,x,y,p\n".as_bytes()).is_err());
    }
}
