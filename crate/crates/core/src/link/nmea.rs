//! `$TX,<src>,<dst>,<type>,<hex32>*hh` text framing for piping packets through external tools.

use super::LinkError;
use crate::codec::{frame_from_hex, frame_to_hex, Frame};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmeaTx {
    pub src: u8,
    pub dst: u8,
    pub packet_type: u8,
    pub frame: Frame,
}

/// XOR of every byte between `$` and `*`.
pub fn nmea_checksum(body: &str) -> u8 {
    body.bytes().fold(0, |acc, b| acc ^ b)
}

pub fn to_nmea_tx(tx: &NmeaTx) -> String {
    let body = format!("TX,{},{},{},{}", tx.src, tx.dst, tx.packet_type, frame_to_hex(&tx.frame).to_uppercase());
    format!("${body}*{:02X}", nmea_checksum(&body))
}

pub fn parse_nmea_tx(line: &str) -> Result<NmeaTx, LinkError> {
    let err = |m: &str| LinkError::Nmea(m.to_owned());
    let line = line.trim_end_matches(['\r', '\n']);
    let rest = line.strip_prefix('$').ok_or_else(|| err("missing `$`"))?;
    let (body, sum) = rest.rsplit_once('*').ok_or_else(|| err("missing `*`"))?;
    let sum = u8::from_str_radix(sum, 16).map_err(|_| err("bad checksum digits"))?;
    if sum != nmea_checksum(body) {
        return Err(err("checksum mismatch"));
    }
    let fields: Vec<&str> = body.split(',').collect();
    let [tag, src, dst, ty, hex] = fields.as_slice() else {
        return Err(err("expected 5 fields"));
    };
    if *tag != "TX" {
        return Err(err("not a TX sentence"));
    }
    let num = |s: &str| s.parse::<u8>().map_err(|_| err("bad numeric field"));
    Ok(NmeaTx {
        src: num(src)?,
        dst: num(dst)?,
        packet_type: num(ty)?,
        frame: frame_from_hex(hex).map_err(|e| LinkError::Nmea(e.to_string()))?,
    })
}
