/// A value with a fixed bit layout on a handshake channel.
pub trait Wire: Sized {
    const WIDTH: u32;
    fn pack(&self) -> u128;
    fn unpack(bits: u128) -> Self;
}

impl Wire for () {
    const WIDTH: u32 = 0;
    fn pack(&self) -> u128 {
        0
    }
    fn unpack(_: u128) -> Self {}
}

impl Wire for bool {
    const WIDTH: u32 = 1;
    fn pack(&self) -> u128 {
        *self as u128
    }
    fn unpack(bits: u128) -> Self {
        bits & 1 == 1
    }
}

impl Wire for u32 {
    const WIDTH: u32 = 32;
    fn pack(&self) -> u128 {
        *self as u128
    }
    fn unpack(bits: u128) -> Self {
        bits as u32
    }
}

/// Low-`width` mask.
pub const fn mask(width: u32) -> u128 {
    if width >= 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    }
}

/// Packs fields most-significant first.
#[derive(Default)]
pub struct BitPacker {
    bits: u128,
    used: u32,
}

impl BitPacker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(mut self, value: u128, width: u32) -> Self {
        debug_assert!(value & !mask(width) == 0, "field overflows {width} bits");
        self.bits = if width == 0 { self.bits } else { (self.bits << width) | (value & mask(width)) };
        self.used += width;
        self
    }

    pub fn finish(self) -> u128 {
        self.bits
    }
}

/// Unpacks fields in the order they were packed.
pub struct BitReader {
    bits: u128,
    left: u32,
}

impl BitReader {
    pub fn new(bits: u128, width: u32) -> Self {
        BitReader { bits, left: width }
    }

    pub fn take(&mut self, width: u32) -> u128 {
        self.left -= width;
        (self.bits >> self.left) & mask(width)
    }
}
