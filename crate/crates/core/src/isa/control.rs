use serde::{Deserialize, Serialize};

use super::{Decoded, Instruction, Mnemonic};

/// Which EX-stage encoding table is in force.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExeMode {
    #[default]
    Original,
    Optimized,
}

macro_rules! exe_ops {
    ($( $v:ident => $orig:expr, $opt:expr; )*) => {
        /// Operation selector for the EX stage.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum ExeOp { $($v,)* }

        impl ExeOp {
            pub const ALL: &'static [ExeOp] = &[$(ExeOp::$v,)*];

            /// 6-bit code: column (bits 5..3) then row (bits 2..0).
            pub fn wire(self, mode: ExeMode) -> Option<u8> {
                let cell: Option<(u8, u8)> = match (self, mode) {
                    $((ExeOp::$v, ExeMode::Original) => $orig,
                      (ExeOp::$v, ExeMode::Optimized) => $opt,)*
                };
                cell.map(|(row, col)| (col << 3) | row)
            }
        }
    };
}

// (row, column) cells of the two encoding tables.
exe_ops! {
    Beq => Some((0, 0)), Some((0, 0));
    Bne => Some((0, 1)), Some((0, 1));
    Bgtz => Some((0, 2)), Some((0, 2));
    Blez => Some((0, 3)), Some((0, 3));
    Bltz => Some((0, 4)), Some((0, 4));
    Bltzal => Some((0, 5)), Some((0, 5));
    Bgez => Some((0, 6)), Some((0, 6));
    Bgezal => Some((0, 7)), Some((0, 7));
    Jr => Some((1, 1)), Some((1, 1));
    Jalr => Some((1, 2)), Some((1, 2));
    Jal => Some((1, 3)), Some((1, 3));
    Add => Some((2, 0)), Some((5, 0));
    Sub => Some((2, 1)), Some((5, 1));
    Addu => Some((2, 2)), Some((2, 2));
    Subu => Some((2, 3)), Some((2, 3));
    And => Some((2, 4)), Some((2, 4));
    Or => Some((2, 5)), Some((2, 5));
    Xor => Some((2, 6)), Some((2, 6));
    Nor => Some((2, 7)), Some((2, 7));
    Exc => Some((3, 0)), Some((3, 0));
    Excs => Some((3, 1)), Some((3, 1));
    Ma => Some((3, 2)), Some((3, 2));
    Cor => Some((3, 3)), Some((3, 3));
    Sltu => Some((3, 4)), Some((3, 4));
    Slt => Some((3, 5)), Some((3, 5));
    Lui => None, Some((3, 6));
    Sllv => Some((4, 0)), Some((4, 0));
    Srlv => Some((4, 1)), Some((4, 1));
    Srav => Some((4, 2)), Some((4, 2));
    Nop => Some((4, 3)), Some((7, 0));
    Sll => Some((4, 4)), Some((4, 4));
    Srl => Some((4, 5)), Some((4, 5));
    Sra => Some((4, 6)), Some((4, 6));
    Multu => Some((6, 0)), Some((6, 0));
    Mult => Some((6, 1)), Some((6, 1));
    Divu => Some((6, 2)), Some((6, 2));
    Div => Some((6, 3)), Some((6, 3));
    Mthi => Some((6, 4)), Some((6, 4));
    Mtlo => Some((6, 5)), Some((6, 5));
    Mfhi => Some((6, 6)), Some((6, 6));
    Mflo => Some((6, 7)), Some((6, 7));
}

impl ExeOp {
    pub fn from_wire(code: u8, mode: ExeMode) -> Option<ExeOp> {
        ExeOp::ALL.iter().copied().find(|op| op.wire(mode) == Some(code))
    }

    /// Compare-and-branch and register jumps resolved in EX.
    pub fn is_branch(self) -> bool {
        matches!(
            self,
            ExeOp::Beq
                | ExeOp::Bne
                | ExeOp::Bgtz
                | ExeOp::Blez
                | ExeOp::Bltz
                | ExeOp::Bltzal
                | ExeOp::Bgez
                | ExeOp::Bgezal
                | ExeOp::Jr
                | ExeOp::Jalr
        )
    }

    pub fn may_overflow(self) -> bool {
        matches!(self, ExeOp::Add | ExeOp::Sub)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccType {
    Read = 0b00,
    Write = 0b01,
    Imm = 0b10,
    None = 0b11,
}

impl AccType {
    pub fn from_bits(b: u8) -> AccType {
        match b & 3 {
            0 => AccType::Read,
            1 => AccType::Write,
            2 => AccType::Imm,
            _ => AccType::None,
        }
    }

    /// Bit 1 set: no memory access.
    pub fn touches_memory(self) -> bool {
        (self as u8) & 2 == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataType {
    Word = 0b001,
    WordLeft = 0b010,
    WordRight = 0b011,
    HalfSigned = 0b100,
    HalfUnsigned = 0b101,
    ByteSigned = 0b110,
    ByteUnsigned = 0b111,
}

impl DataType {
    pub fn from_bits(b: u8) -> Option<DataType> {
        Some(match b & 7 {
            0b001 => DataType::Word,
            0b010 => DataType::WordLeft,
            0b011 => DataType::WordRight,
            0b100 => DataType::HalfSigned,
            0b101 => DataType::HalfUnsigned,
            0b110 => DataType::ByteSigned,
            0b111 => DataType::ByteUnsigned,
            _ => return None,
        })
    }

    pub fn for_mnemonic(m: Mnemonic) -> Option<DataType> {
        use Mnemonic::*;
        Some(match m {
            Lw | Sw => DataType::Word,
            Lwl | Swl => DataType::WordLeft,
            Lwr | Swr => DataType::WordRight,
            Lh | Sh => DataType::HalfSigned,
            Lhu => DataType::HalfUnsigned,
            Lb | Sb => DataType::ByteSigned,
            Lbu => DataType::ByteUnsigned,
            _ => return None,
        })
    }

    /// Required address alignment in bytes.
    pub fn alignment(self) -> u32 {
        match self {
            DataType::Word => 4,
            DataType::HalfSigned | DataType::HalfUnsigned => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemCtrl {
    pub acc_type: AccType,
    pub data_type: Option<DataType>,
}

impl MemCtrl {
    pub const NONE: MemCtrl = MemCtrl { acc_type: AccType::None, data_type: None };
    pub const IMM: MemCtrl = MemCtrl { acc_type: AccType::Imm, data_type: None };

    /// {AccType 2, DataType 3}.
    pub fn wire(self) -> u8 {
        ((self.acc_type as u8) << 3) | self.data_type.map_or(0, |d| d as u8)
    }

    pub fn from_wire(w: u8) -> MemCtrl {
        MemCtrl { acc_type: AccType::from_bits(w >> 3), data_type: DataType::from_bits(w) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WbTarget {
    Cp0,
    Cpu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WbAction {
    None,
    RegWrite,
    RegReset,
    ExceptionWrite,
    /// MTC0: a CP0 register write that carries its register address.
    Cp0Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WbCtrl {
    pub target: WbTarget,
    pub action: WbAction,
}

impl WbCtrl {
    pub const CPU_NONE: WbCtrl = WbCtrl { target: WbTarget::Cpu, action: WbAction::None };
    pub const WRITE: WbCtrl = WbCtrl { target: WbTarget::Cpu, action: WbAction::RegWrite };
    pub const RESET: WbCtrl = WbCtrl { target: WbTarget::Cpu, action: WbAction::RegReset };
    pub const EXCEPTION: WbCtrl = WbCtrl { target: WbTarget::Cp0, action: WbAction::ExceptionWrite };
    pub const CP0_WRITE: WbCtrl = WbCtrl { target: WbTarget::Cp0, action: WbAction::Cp0Write };
    pub const NUN: WbCtrl = WbCtrl { target: WbTarget::Cp0, action: WbAction::None };

    /// Code value of MTC0, excluded from CPU register writes and forwarding.
    pub const CP0_ADDRESSED: u8 = 2;

    /// {cNp, wNe[1], wNe[0]}.
    pub fn wire(self) -> u8 {
        match (self.target, self.action) {
            (WbTarget::Cp0, WbAction::None) => 0b000,
            (WbTarget::Cp0, WbAction::Cp0Write) => 0b010,
            (WbTarget::Cp0, WbAction::ExceptionWrite) => 0b011,
            (WbTarget::Cpu, WbAction::None) => 0b100,
            (WbTarget::Cpu, WbAction::RegWrite) => 0b110,
            (WbTarget::Cpu, WbAction::RegReset) => 0b111,
            (t, a) => panic!("no encoding for {t:?}/{a:?}"),
        }
    }

    pub fn from_wire(w: u8) -> Option<WbCtrl> {
        Some(match w & 7 {
            0b000 => WbCtrl::NUN,
            0b010 => WbCtrl::CP0_WRITE,
            0b011 => WbCtrl::EXCEPTION,
            0b100 => WbCtrl::CPU_NONE,
            0b110 => WbCtrl::WRITE,
            0b111 => WbCtrl::RESET,
            _ => return None,
        })
    }

    /// wNe[1]: a register address travels with the instruction.
    pub fn carries_address(self) -> bool {
        self.wire() & 0b010 != 0
    }

    /// Writes or resets a CPU register, so forwarding channels fire.
    pub fn writes_cpu(self) -> bool {
        self.carries_address() && self.wire() != Self::CP0_ADDRESSED && self.target == WbTarget::Cpu
    }

    pub fn cpu_write_enable(self) -> bool {
        self.wire() & 0b001 == 0
    }
}

/// Control information for EX, MEM and WB produced by the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlBundle {
    pub exe: ExeOp,
    pub mem: MemCtrl,
    pub wb: WbCtrl,
}

impl ControlBundle {
    pub const WIDTH: u32 = 14;

    /// {{cNp, wNe}, {AccType, DataType}, EX}, most significant first.
    pub fn pack(self, mode: ExeMode) -> u16 {
        let ex = self.exe.wire(mode).expect("op has a code in this mode") as u16;
        ((self.wb.wire() as u16) << 11) | ((self.mem.wire() as u16) << 6) | ex
    }

    pub fn unpack(bits: u16, mode: ExeMode) -> Option<ControlBundle> {
        Some(ControlBundle {
            exe: ExeOp::from_wire((bits & 63) as u8, mode)?,
            mem: MemCtrl::from_wire(((bits >> 6) & 31) as u8),
            wb: WbCtrl::from_wire(((bits >> 11) & 7) as u8)?,
        })
    }
}

fn bundle(exe: ExeOp, mem: MemCtrl, wb: WbCtrl) -> ControlBundle {
    ControlBundle { exe, mem, wb }
}

/// Control bundle for a decoded word; reserved encodings become EXC.
pub fn control_for(decoded: Decoded, mode: ExeMode) -> ControlBundle {
    let insn = match decoded {
        Decoded::Insn(i) => i,
        Decoded::Reserved => return bundle(ExeOp::Exc, MemCtrl::IMM, WbCtrl::EXCEPTION),
    };
    control_for_insn(&insn, mode)
}

pub fn control_for_insn(insn: &Instruction, mode: ExeMode) -> ControlBundle {
    use Mnemonic as M;
    let write = if insn.dest() != 0 { WbCtrl::WRITE } else { WbCtrl::CPU_NONE };
    let none = MemCtrl::NONE;
    let imm = MemCtrl::IMM;
    let m = insn.mnemonic;
    if m.is_load() || m.is_store() {
        let acc = if m.is_load() { AccType::Read } else { AccType::Write };
        let mem = MemCtrl { acc_type: acc, data_type: DataType::for_mnemonic(m) };
        return bundle(ExeOp::Ma, mem, if m.is_load() { write } else { WbCtrl::CPU_NONE });
    }
    match m {
        M::Add => bundle(ExeOp::Add, none, write),
        M::Addu => bundle(ExeOp::Addu, none, write),
        M::Sub => bundle(ExeOp::Sub, none, write),
        M::Subu => bundle(ExeOp::Subu, none, write),
        M::And => bundle(ExeOp::And, none, write),
        M::Or => bundle(ExeOp::Or, none, write),
        M::Xor => bundle(ExeOp::Xor, none, write),
        M::Nor => bundle(ExeOp::Nor, none, write),
        M::Slt => bundle(ExeOp::Slt, none, write),
        M::Sltu => bundle(ExeOp::Sltu, none, write),
        M::Addi => bundle(ExeOp::Add, imm, write),
        M::Addiu => bundle(ExeOp::Addu, imm, write),
        M::Slti => bundle(ExeOp::Slt, imm, write),
        M::Sltiu => bundle(ExeOp::Sltu, imm, write),
        M::Andi => bundle(ExeOp::And, imm, write),
        M::Ori => bundle(ExeOp::Or, imm, write),
        M::Xori => bundle(ExeOp::Xor, imm, write),
        M::Lui => match mode {
            ExeMode::Original => bundle(ExeOp::Sll, imm, write),
            ExeMode::Optimized => bundle(ExeOp::Lui, imm, write),
        },
        M::Sll => bundle(ExeOp::Sll, none, write),
        M::Srl => bundle(ExeOp::Srl, none, write),
        M::Sra => bundle(ExeOp::Sra, none, write),
        M::Sllv => bundle(ExeOp::Sllv, none, write),
        M::Srlv => bundle(ExeOp::Srlv, none, write),
        M::Srav => bundle(ExeOp::Srav, none, write),
        M::Mult => bundle(ExeOp::Mult, none, WbCtrl::CPU_NONE),
        M::Multu => bundle(ExeOp::Multu, none, WbCtrl::CPU_NONE),
        M::Div => bundle(ExeOp::Div, none, WbCtrl::CPU_NONE),
        M::Divu => bundle(ExeOp::Divu, none, WbCtrl::CPU_NONE),
        M::Mfhi => bundle(ExeOp::Mfhi, none, write),
        M::Mflo => bundle(ExeOp::Mflo, none, write),
        M::Mthi => bundle(ExeOp::Mthi, none, WbCtrl::CPU_NONE),
        M::Mtlo => bundle(ExeOp::Mtlo, none, WbCtrl::CPU_NONE),
        M::J => bundle(ExeOp::Nop, none, WbCtrl::CPU_NONE),
        M::Jal => bundle(ExeOp::Jal, none, write),
        M::Jr => bundle(ExeOp::Jr, none, WbCtrl::CPU_NONE),
        M::Jalr => bundle(ExeOp::Jalr, none, write),
        M::Beq => bundle(ExeOp::Beq, none, WbCtrl::CPU_NONE),
        M::Bne => bundle(ExeOp::Bne, none, WbCtrl::CPU_NONE),
        M::Blez => bundle(ExeOp::Blez, none, WbCtrl::CPU_NONE),
        M::Bgtz => bundle(ExeOp::Bgtz, none, WbCtrl::CPU_NONE),
        M::Bltz => bundle(ExeOp::Bltz, none, WbCtrl::CPU_NONE),
        M::Bgez => bundle(ExeOp::Bgez, none, WbCtrl::CPU_NONE),
        M::Bltzal => bundle(ExeOp::Bltzal, none, write),
        M::Bgezal => bundle(ExeOp::Bgezal, none, write),
        M::Syscall | M::Break => bundle(ExeOp::Exc, imm, WbCtrl::EXCEPTION),
        M::Mtc0 => bundle(ExeOp::Addu, none, WbCtrl::CP0_WRITE),
        M::Mfc0 => bundle(ExeOp::Cor, none, write),
        M::Rfe => bundle(ExeOp::Nop, none, WbCtrl::EXCEPTION),
        M::Nop => bundle(ExeOp::Nop, none, WbCtrl::CPU_NONE),
        M::Lb | M::Lbu | M::Lh | M::Lhu | M::Lw | M::Lwl | M::Lwr | M::Sb | M::Sh | M::Sw | M::Swl | M::Swr => {
            unreachable!("memory ops handled above")
        }
    }
}
