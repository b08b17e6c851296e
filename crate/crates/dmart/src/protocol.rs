//! Wire codec for the 12-octet market header carried by probes, SYNs, data
//! packets and echoed ACKs, plus the pure header transforms switches apply.
//!
//! Currency on the wire is 24-bit unsigned fixed point, 1 unit = 2^-8 dollars
//! (granularity 1/256 $, max ~65 k$). Layout (little endian):
//!
//! | octets | field                                    |
//! |--------|------------------------------------------|
//! | 0..4   | flow_id (u32)                            |
//! | 4      | app_id (u8)                              |
//! | 5..8   | bid (u24 fixed point)                    |
//! | 8..11  | telemetry (u24 fixed point)              |
//! | 11     | flags nibble (high 4 bits) \| reserved=12 |

use thiserror::Error;

/// Encoded header length in octets.
pub const HEADER_LEN: usize = 12;
/// Value the reserved nibble of octet 11 must carry.
pub const RESERVED_VALUE: u8 = 12;
/// Fixed-point units per dollar.
pub const UNITS_PER_DOLLAR: f64 = 256.0;
/// Largest representable currency value (24-bit field).
pub const MAX_CURRENCY_UNITS: u32 = (1 << 24) - 1;

/// Converts dollars to wire units, clamping into the representable range.
pub fn dollars_to_units(dollars: f64) -> u32 {
    if !dollars.is_finite() || dollars <= 0.0 {
        return 0;
    }
    let units = (dollars * UNITS_PER_DOLLAR).round();
    if units >= MAX_CURRENCY_UNITS as f64 {
        MAX_CURRENCY_UNITS
    } else {
        units as u32
    }
}

/// Converts wire units back to dollars.
pub fn units_to_dollars(units: u32) -> f64 {
    units as f64 / UNITS_PER_DOLLAR
}

/// The four one-bit flags of the header, packed into the high nibble of
/// octet 11 as `auction_status | packet_type | prev_e2e_status | bypass`
/// from most to least significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HeaderFlags {
    /// Set by the sender, cleared by a switch where the flow loses;
    /// once cleared it stays cleared downstream.
    pub auction_status: bool,
    /// Packet type: probe = 1, data = 0.
    pub probe: bool,
    /// Whether the flow made end-to-end progress in the previous RTT.
    pub prev_e2e_status: bool,
    /// Skips auction logic for flows that fit in a single RTT.
    pub bypass: bool,
}

impl HeaderFlags {
    fn to_nibble(self) -> u8 {
        (self.auction_status as u8) << 3
            | (self.probe as u8) << 2
            | (self.prev_e2e_status as u8) << 1
            | self.bypass as u8
    }

    fn from_nibble(nibble: u8) -> Self {
        HeaderFlags {
            auction_status: nibble & 0b1000 != 0,
            probe: nibble & 0b0100 != 0,
            prev_e2e_status: nibble & 0b0010 != 0,
            bypass: nibble & 0b0001 != 0,
        }
    }
}

/// The 12-byte per-packet auction record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MarketHeader {
    pub flow_id: u32,
    pub app_id: u8,
    /// Bid in fixed-point currency units.
    pub bid: u32,
    /// Running maximum bottleneck price along the path, fixed-point units.
    pub telemetry: u32,
    pub flags: HeaderFlags,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeaderError {
    #[error("{field} value {value} exceeds the 24-bit currency range")]
    FieldOverflow { field: &'static str, value: u32 },
    #[error("market header must be {HEADER_LEN} octets, got {0}")]
    WrongLength(usize),
    #[error("reserved field encodes {0}, expected {RESERVED_VALUE}")]
    BadReserved(u8),
}

impl MarketHeader {
    /// Encodes the header into its fixed 12-octet wire form.
    pub fn encode(&self) -> Result<[u8; HEADER_LEN], HeaderError> {
        if self.bid > MAX_CURRENCY_UNITS {
            return Err(HeaderError::FieldOverflow {
                field: "bid",
                value: self.bid,
            });
        }
        if self.telemetry > MAX_CURRENCY_UNITS {
            return Err(HeaderError::FieldOverflow {
                field: "telemetry",
                value: self.telemetry,
            });
        }
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&self.flow_id.to_le_bytes());
        out[4] = self.app_id;
        out[5..8].copy_from_slice(&self.bid.to_le_bytes()[0..3]);
        out[8..11].copy_from_slice(&self.telemetry.to_le_bytes()[0..3]);
        out[11] = self.flags.to_nibble() << 4 | RESERVED_VALUE;
        Ok(out)
    }

    /// Parses exactly 12 octets back into a header.
    pub fn decode(bytes: &[u8]) -> Result<MarketHeader, HeaderError> {
        if bytes.len() != HEADER_LEN {
            return Err(HeaderError::WrongLength(bytes.len()));
        }
        let reserved = bytes[11] & 0x0f;
        if reserved != RESERVED_VALUE {
            return Err(HeaderError::BadReserved(reserved));
        }
        Ok(MarketHeader {
            flow_id: u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            app_id: bytes[4],
            bid: u32::from_le_bytes([bytes[5], bytes[6], bytes[7], 0]),
            telemetry: u32::from_le_bytes([bytes[8], bytes[9], bytes[10], 0]),
            flags: HeaderFlags::from_nibble(bytes[11] >> 4),
        })
    }

    /// Folds a price observed at a switch into the telemetry field:
    /// `telemetry' = max(telemetry, observed)`. Other fields are untouched.
    pub fn merge_telemetry(mut self, observed_units: u32) -> MarketHeader {
        self.telemetry = self.telemetry.max(observed_units.min(MAX_CURRENCY_UNITS));
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_header_encodes_with_reserved_12() {
        let h = MarketHeader {
            flow_id: 1,
            ..Default::default()
        };
        let bytes = h.encode().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(bytes[0], 1);
        assert_eq!(&bytes[1..11], &[0u8; 10]);
        assert_eq!(bytes[11], RESERVED_VALUE);
        assert_eq!(MarketHeader::decode(&bytes).unwrap(), h);
    }

    #[test]
    fn thirty_dollar_bid_is_7680_units_and_round_trips() {
        let h = MarketHeader {
            flow_id: 7,
            app_id: 2,
            bid: dollars_to_units(30.0),
            telemetry: 0,
            flags: HeaderFlags {
                auction_status: true,
                probe: true,
                ..Default::default()
            },
        };
        assert_eq!(h.bid, 30 * 256);
        let decoded = MarketHeader::decode(&h.encode().unwrap()).unwrap();
        assert_eq!(decoded, h);
        assert_eq!(units_to_dollars(decoded.bid), 30.0);
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert_eq!(
            MarketHeader::decode(&[0u8; 11]),
            Err(HeaderError::WrongLength(11))
        );
        assert_eq!(
            MarketHeader::decode(&[0u8; 13]),
            Err(HeaderError::WrongLength(13))
        );
    }

    #[test]
    fn bad_reserved_is_rejected() {
        let mut bytes = MarketHeader::default().encode().unwrap();
        bytes[11] = (bytes[11] & 0xf0) | 13;
        assert_eq!(
            MarketHeader::decode(&bytes),
            Err(HeaderError::BadReserved(13))
        );
    }

    #[test]
    fn field_overflow_names_the_field() {
        let h = MarketHeader {
            bid: 1 << 24,
            ..Default::default()
        };
        assert_eq!(
            h.encode(),
            Err(HeaderError::FieldOverflow {
                field: "bid",
                value: 1 << 24
            })
        );
        let h = MarketHeader {
            telemetry: MAX_CURRENCY_UNITS + 1,
            ..Default::default()
        };
        assert!(matches!(
            h.encode(),
            Err(HeaderError::FieldOverflow {
                field: "telemetry",
                ..
            })
        ));
    }

    #[test]
    fn merge_telemetry_keeps_the_max() {
        let h = MarketHeader::default();
        let h = h.merge_telemetry(dollars_to_units(10.0));
        assert_eq!(units_to_dollars(h.telemetry), 10.0);
        // Lower observation does not overwrite.
        let h = MarketHeader {
            telemetry: dollars_to_units(30.0),
            ..Default::default()
        }
        .merge_telemetry(dollars_to_units(10.0));
        assert_eq!(units_to_dollars(h.telemetry), 30.0);
        // Idempotent.
        let x = dollars_to_units(4.5);
        let h = MarketHeader {
            telemetry: x,
            ..Default::default()
        }
        .merge_telemetry(x);
        assert_eq!(h.telemetry, x);
    }

    #[test]
    fn currency_conversions_clamp() {
        assert_eq!(dollars_to_units(-1.0), 0);
        assert_eq!(dollars_to_units(f64::NAN), 0);
        assert_eq!(dollars_to_units(1e9), MAX_CURRENCY_UNITS);
        assert_eq!(dollars_to_units(0.5), 128);
    }
}
