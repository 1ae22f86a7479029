//! Byte layouts for IDENTIFY and zone-report payloads (little-endian).
//!
//! IDENTIFY: bytes 0..8 nsect, 8..12 lba_nbytes, 12..16 nzones,
//! 16..24 zone_nsect, byte 24 kind (0 conventional, 1 zoned), rest zero.
//!
//! Zone report: 8-byte zone count, then 24 bytes per zone:
//! zslba (8), wp (8), state (1), pad (7).

use crate::error::{IoError, Result};
use crate::types::{Geometry, GeometryKind};

/// Payload size expected by IDENTIFY.
pub const IDENTIFY_NBYTES: usize = 4096;
pub const ZONE_REPORT_HEADER: usize = 8;
pub const ZONE_DESCRIPTOR_NBYTES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZoneCondition {
    Empty,
    Open,
    Full,
}

impl ZoneCondition {
    pub fn code(self) -> u8 {
        match self {
            ZoneCondition::Empty => 0,
            ZoneCondition::Open => 1,
            ZoneCondition::Full => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<ZoneCondition> {
        match code {
            0 => Some(ZoneCondition::Empty),
            1 => Some(ZoneCondition::Open),
            2 => Some(ZoneCondition::Full),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ZoneCondition::Empty => "empty",
            ZoneCondition::Open => "open",
            ZoneCondition::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ZoneState {
    pub zslba: u64,
    pub wp: u64,
    pub state: ZoneCondition,
}

/// Bytes needed to report `nzones` zones in full.
pub fn zone_report_nbytes(nzones: u32) -> usize {
    ZONE_REPORT_HEADER + nzones as usize * ZONE_DESCRIPTOR_NBYTES
}

pub fn encode_identify(geo: &Geometry, out: &mut [u8]) {
    out.fill(0);
    out[0..8].copy_from_slice(&geo.nsect.to_le_bytes());
    out[8..12].copy_from_slice(&geo.lba_nbytes.to_le_bytes());
    out[12..16].copy_from_slice(&geo.nzones.to_le_bytes());
    out[16..24].copy_from_slice(&geo.zone_nsect.to_le_bytes());
    out[24] = match geo.kind {
        GeometryKind::Conventional => 0,
        GeometryKind::Zoned => 1,
    };
}

pub fn decode_identify(buf: &[u8]) -> Result<Geometry> {
    if buf.len() < 25 {
        return Err(IoError::inval("identify payload too short"));
    }
    let u64_at = |at: usize| u64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
    let u32_at = |at: usize| u32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
    let kind = match buf[24] {
        0 => GeometryKind::Conventional,
        1 => GeometryKind::Zoned,
        other => return Err(IoError::inval(format!("unknown geometry kind {other}"))),
    };
    Ok(Geometry {
        nsect: u64_at(0),
        lba_nbytes: u32_at(8),
        nzones: u32_at(12),
        zone_nsect: u64_at(16),
        kind,
    })
}

/// Writes as many descriptors as fit; the count field always carries the
/// total number of zones.
pub fn encode_zone_report(zones: &[ZoneState], out: &mut [u8]) {
    out.fill(0);
    out[0..8].copy_from_slice(&(zones.len() as u64).to_le_bytes());
    for (zone, chunk) in zones
        .iter()
        .zip(out[ZONE_REPORT_HEADER..].chunks_exact_mut(ZONE_DESCRIPTOR_NBYTES))
    {
        chunk[0..8].copy_from_slice(&zone.zslba.to_le_bytes());
        chunk[8..16].copy_from_slice(&zone.wp.to_le_bytes());
        chunk[16] = zone.state.code();
    }
}

/// Decodes the descriptors present in `buf`, which may be fewer than the
/// reported zone count when the payload was truncated.
pub fn decode_zone_report(buf: &[u8]) -> Result<(u64, Vec<ZoneState>)> {
    if buf.len() < ZONE_REPORT_HEADER {
        return Err(IoError::inval("zone report payload too short"));
    }
    let count = u64::from_le_bytes(buf[0..8].try_into().unwrap());
    let mut zones = Vec::new();
    for chunk in buf[ZONE_REPORT_HEADER..]
        .chunks_exact(ZONE_DESCRIPTOR_NBYTES)
        .take(count as usize)
    {
        let state = ZoneCondition::from_code(chunk[16])
            .ok_or_else(|| IoError::inval(format!("unknown zone state {}", chunk[16])))?;
        zones.push(ZoneState {
            zslba: u64::from_le_bytes(chunk[0..8].try_into().unwrap()),
            wp: u64::from_le_bytes(chunk[8..16].try_into().unwrap()),
            state,
        });
    }
    Ok((count, zones))
}
