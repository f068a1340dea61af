//! Bit-level packing for angle payloads.

/// Order in which bits of each word are laid into the byte stream.
///
/// `Lsb` packs the least significant bit of a word into the lowest free
/// bit of the current octet, matching common capture-tool conventions.
/// `Msb` is the mirror image, selectable for captures that use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitOrder {
    Lsb,
    Msb,
}

impl BitOrder {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lsb" => Some(Self::Lsb),
            "msb" => Some(Self::Msb),
            _ => None,
        }
    }
}

/// Appends variable-width words to a byte buffer.
pub struct BitWriter {
    buf: Vec<u8>,
    bit_pos: usize,
    order: BitOrder,
}

impl BitWriter {
    pub fn new(order: BitOrder) -> Self {
        Self {
            buf: Vec::new(),
            bit_pos: 0,
            order,
        }
    }

    pub fn write(&mut self, value: u16, width: u8) {
        debug_assert!(width >= 1 && width <= 16);
        debug_assert!(u32::from(value) < (1u32 << width));
        for i in 0..width {
            let bit = match self.order {
                BitOrder::Lsb => (value >> i) & 1,
                BitOrder::Msb => (value >> (width - 1 - i)) & 1,
            };
            let byte_idx = self.bit_pos / 8;
            if byte_idx == self.buf.len() {
                self.buf.push(0);
            }
            if bit != 0 {
                let in_byte = self.bit_pos % 8;
                let mask = match self.order {
                    BitOrder::Lsb => 1u8 << in_byte,
                    BitOrder::Msb => 1u8 << (7 - in_byte),
                };
                self.buf[byte_idx] |= mask;
            }
            self.bit_pos += 1;
        }
    }

    /// Finish, zero-padding the trailing bits of the final byte.
    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bits_written(&self) -> usize {
        self.bit_pos
    }
}

/// Reads variable-width words from a byte slice without ever indexing past
/// its end.
pub struct BitReader<'a> {
    data: &'a [u8],
    bit_pos: usize,
    order: BitOrder,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8], order: BitOrder) -> Self {
        Self {
            data,
            bit_pos: 0,
            order,
        }
    }

    pub fn remaining_bits(&self) -> usize {
        self.data.len() * 8 - self.bit_pos
    }

    pub fn read(&mut self, width: u8) -> Option<u16> {
        debug_assert!(width >= 1 && width <= 16);
        if self.remaining_bits() < usize::from(width) {
            return None;
        }
        let mut value = 0u16;
        for i in 0..width {
            let byte = self.data[self.bit_pos / 8];
            let in_byte = self.bit_pos % 8;
            let bit = match self.order {
                BitOrder::Lsb => (byte >> in_byte) & 1,
                BitOrder::Msb => (byte >> (7 - in_byte)) & 1,
            };
            if bit != 0 {
                match self.order {
                    BitOrder::Lsb => value |= 1u16 << i,
                    BitOrder::Msb => value |= 1u16 << (width - 1 - i),
                }
            }
            self.bit_pos += 1;
        }
        Some(value)
    }
}
