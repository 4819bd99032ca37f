//! Data whitening: XOR with the x^7 + x^4 + 1 LFSR sequence.

use super::LinkError;

/// Whitening register for one packet.
///
/// Byte bit k holds register position 6 - k, so bit 0 is the output tap and
/// the channel index (MSB in position 1) lands in bits 0..=5 unreversed.
#[derive(Debug, Clone, Copy)]
pub struct Whitener {
    lfsr: u8,
}

impl Whitener {
    pub fn new(channel_index: u8) -> Result<Self, LinkError> {
        if channel_index > 39 {
            return Err(LinkError::BadChannel(channel_index));
        }
        Ok(Whitener {
            lfsr: channel_index | 0x40,
        })
    }

    #[inline]
    pub fn next_bit(&mut self) -> u8 {
        let out = self.lfsr & 1;
        self.lfsr >>= 1;
        if out == 1 {
            self.lfsr ^= 0x44;
        }
        out
    }

    pub fn next_byte(&mut self) -> u8 {
        (0..8).fold(0, |acc, i| acc | (self.next_bit() << i))
    }

    pub fn apply(&mut self, data: &mut [u8]) {
        for b in data {
            *b ^= self.next_byte();
        }
    }

    /// XOR whitening into a slice of 0/1 bits.
    pub fn apply_bits(&mut self, bits: &mut [u8]) {
        for b in bits {
            *b ^= self.next_bit();
        }
    }
}

/// Whiten (or dewhiten, it is its own inverse) `data` for a channel.
pub fn whiten(data: &[u8], channel_index: u8) -> Result<Vec<u8>, LinkError> {
    let mut w = Whitener::new(channel_index)?;
    let mut out = data.to_vec();
    w.apply(&mut out);
    Ok(out)
}
