//! Payload layouts of the processor's channels.

use crate::arch::ExcCode;
use crate::hazards::ColourVector;
use crate::isa::{AccType, DataType, MemCtrl, WbCtrl};
use crate::kernel::{mask, BitPacker, BitReader, Wire};

/// Colour bits: ID, EX, MEM and the interrupt pseudo-stage, in rising priority.
pub const COLOURS: usize = 4;
pub const ID: usize = 0;
pub const EX: usize = 1;
pub const MEM: usize = 2;
pub const INT: usize = 3;

/// Fetch address used for the drain marker of the AAU interrupt scheme.
pub const MARKER_PC: u32 = 0xFFFF_FFF0;

pub trait Bits: Sized {
    fn to_bits(&self) -> u128;
    fn from_bits(b: u128) -> Self;
}

impl Bits for u32 {
    fn to_bits(&self) -> u128 {
        *self as u128
    }
    fn from_bits(b: u128) -> Self {
        b as u32
    }
}

impl Bits for u16 {
    fn to_bits(&self) -> u128 {
        *self as u128
    }
    fn from_bits(b: u128) -> Self {
        b as u16
    }
}

impl Bits for u8 {
    fn to_bits(&self) -> u128 {
        *self as u128
    }
    fn from_bits(b: u128) -> Self {
        b as u8
    }
}

impl Bits for bool {
    fn to_bits(&self) -> u128 {
        *self as u128
    }
    fn from_bits(b: u128) -> Self {
        b & 1 == 1
    }
}

impl Bits for ColourVector {
    fn to_bits(&self) -> u128 {
        self.bits() as u128
    }
    fn from_bits(b: u128) -> Self {
        ColourVector::from_bits(b as u16, COLOURS)
    }
}

impl Bits for Option<ExcCode> {
    fn to_bits(&self) -> u128 {
        self.map_or(0, |c| c as u128)
    }
    fn from_bits(b: u128) -> Self {
        if b == 0 { None } else { ExcCode::from_code(b as u32) }
    }
}

macro_rules! wire {
    ($(#[$meta:meta])* $name:ident { $($field:ident : $ty:ty = $w:expr),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub struct $name { $(pub $field: $ty),* }

        impl Wire for $name {
            const WIDTH: u32 = 0 $(+ $w)*;
            fn pack(&self) -> u128 {
                BitPacker::new()$(.put(Bits::to_bits(&self.$field) & mask($w), $w))*.finish()
            }
            fn unpack(bits: u128) -> Self {
                let mut r = BitReader::new(bits, Self::WIDTH);
                $name { $($field: Bits::from_bits(r.take($w))),* }
            }
        }
    };
}

macro_rules! bits_enum {
    ($(#[$meta:meta])* $name:ident { $($v:ident = $n:expr),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name { $($v = $n),* }

        impl Bits for $name {
            fn to_bits(&self) -> u128 {
                *self as u128
            }
            fn from_bits(b: u128) -> Self {
                match b {
                    $(x if x == $n => $name::$v,)*
                    _ => panic!(concat!("bad ", stringify!($name), " code {}"), b),
                }
            }
        }
    };
}

bits_enum!(
    /// Originator of an AAU request.
    Src { Pc = 0, Id = 1, Ex = 2, Mem = 3, Int = 4 }
);

bits_enum!(ReqKind { Branch = 0, Exception = 1, Halt = 2, Drained = 3 });

bits_enum!(
    /// Work left for the write-back stage beyond the register write.
    WbOp {
        None = 0,
        HiLo = 1,
        SetHi = 2,
        SetLo = 3,
        ReadHi = 4,
        ReadLo = 5,
        ReadCp0 = 6,
        WriteCp0 = 7,
        Rfe = 8,
        Halt = 9,
        Marker = 10,
        Bubble = 11,
        FetchFault = 12,
    }
);

impl WbOp {
    /// The destination value is only known at write-back.
    pub fn late_result(self) -> bool {
        matches!(self, WbOp::ReadHi | WbOp::ReadLo | WbOp::ReadCp0)
    }

    pub fn is_filler(self) -> bool {
        matches!(self, WbOp::Marker | WbOp::Bubble)
    }
}

bits_enum!(Cp0Op { Exception = 0, Interrupt = 1, WriteReg = 2, Rfe = 3 });

bits_enum!(NoteOp { ProvisionalEpc = 0, Interrupt = 1, Cancel = 2 });

wire!(
    /// PCvalue, PCplus4, NPC, CInsAdd.
    Coloured { colour: ColourVector = 4, addr: u32 = 32 }
);

wire!(
    /// CIns: the fetched word; `unmapped` marks a fetch outside memory.
    Fetched { colour: ColourVector = 4, unmapped: bool = 1, word: u32 = 32 }
);

wire!(
    /// IDch, EXch, MEMch, WBch, NTarget1/2.
    Request { colour: ColourVector = 4, src: Src = 3, kind: ReqKind = 2, target: u32 = 32 }
);

wire!(
    /// BaseAddEX: pc+4 and whether the instruction sits in an ID-resolved delay slot.
    SlotAddr { slot: bool = 1, addr: u32 = 32 }
);

wire!(RegReadMsg { rno0: u8 = 5, rno1: u8 = 5, wno: u8 = 5 });

wire!(RegWriteMsg { data: u32 = 32, rd: u8 = 5, reset: bool = 1, snap: u8 = 2 });

wire!(
    /// PIDRd: old destination value, detector snapshot and destination.
    PidRd { old: u32 = 32, snap: u8 = 2, wno: u8 = 5 }
);

wire!(FraCtrl { bits: u8 = 2 });

wire!(FwCtrl { fw0: u8 = 2, fw1: u8 = 2 });

wire!(Reg5 { reg: u8 = 5 });

wire!(
    /// EXCtrl.
    ExCtrl {
        colour: ColourVector = 4,
        bundle: u16 = 14,
        dest: u8 = 5,
        imm: bool = 1,
        sa: bool = 1,
        cp0: bool = 1,
        wbop: WbOp = 4,
        exc: Option<ExcCode> = 4,
    }
);

wire!(
    /// MEMCtrl and WBCtrl.
    StageCtl {
        colour: ColourVector = 4,
        mem: u8 = 5,
        wb: u8 = 3,
        wbop: WbOp = 4,
        exc: Option<ExcCode> = 4,
        slot: bool = 1,
        took: bool = 1,
        reg: u8 = 5,
    }
);

wire!(
    /// EXRd and MEMRd.
    RdTag { rd: u8 = 5, snap: u8 = 2 }
);

wire!(MemAddMsg { addr: u32 = 32, dt: u8 = 3, write: bool = 1 });

wire!(
    /// CP0W1: architectural commits from write-back.
    Cp0Commit { op: Cp0Op = 3, code: u8 = 5, pin: u8 = 3, reg: u8 = 5, value: u32 = 32 }
);

wire!(
    /// CP0W2: notes from the AAU.
    Cp0Note { op: NoteOp = 2, pin: u8 = 3, epc: u32 = 32 }
);

wire!(
    /// Merged CP0 read request; `status` routes the answer to MemInt.
    Cp0Read { status: bool = 1, reg: u8 = 5 }
);

wire!(Pin { pin: u8 = 3 });

impl StageCtl {
    pub fn wb_ctrl(&self) -> Option<WbCtrl> {
        WbCtrl::from_wire(self.wb)
    }

    /// Carries a destination tag: a register write or reset follows at write-back.
    pub fn carries_rd(&self) -> bool {
        matches!(self.wb_ctrl(), Some(WbCtrl::WRITE) | Some(WbCtrl::RESET))
    }

    /// MemD travels with this instruction: store data, the old register for
    /// LWL/LWR, or HI for a multiply/divide.
    pub fn carries_memd(&self) -> bool {
        let mem = MemCtrl::from_wire(self.mem);
        match mem.acc_type {
            AccType::Write => true,
            AccType::Read => matches!(mem.data_type, Some(DataType::WordLeft) | Some(DataType::WordRight)),
            _ => self.wbop == WbOp::HiLo,
        }
    }

    /// A store that reaches memory unless write-back discards it first.
    pub fn live_store(&self) -> bool {
        self.exc.is_none() && MemCtrl::from_wire(self.mem).acc_type == AccType::Write
    }

    /// Dropped by an earlier stage; passes to write-back only to release its destination.
    pub fn squashed(&self) -> bool {
        self.exc.is_none()
            && self.wbop == WbOp::None
            && matches!(self.wb_ctrl(), Some(WbCtrl::NUN) | Some(WbCtrl::RESET))
    }

    /// Turns the instruction into a no-op that only releases its destination.
    pub fn squash(&mut self) {
        self.wb = if self.carries_rd() { WbCtrl::RESET.wire() } else { WbCtrl::NUN.wire() };
        self.mem = MemCtrl::NONE.wire();
        self.wbop = WbOp::None;
        self.exc = None;
        self.took = false;
    }
}
