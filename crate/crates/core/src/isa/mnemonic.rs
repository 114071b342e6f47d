use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    I,
    J,
    R,
}

/// Instruction groups used for dynamic instruction-mix reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Memory,
    Arithmetic,
    Logic,
    Shift,
    Nop,
    Multiply,
    Branch,
    Special,
    Cp0,
}

impl Group {
    pub const ALL: [Group; 9] = [
        Group::Memory,
        Group::Arithmetic,
        Group::Logic,
        Group::Shift,
        Group::Nop,
        Group::Multiply,
        Group::Branch,
        Group::Special,
        Group::Cp0,
    ];
}

/// How the operand fields of an instruction are written in assembly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Syntax {
    /// `rd, rs, rt`
    Rrr,
    /// `rd, rt, sa`
    Shift,
    /// `rd, rt, rs`
    ShiftV,
    /// `rs, rt`
    RsRt,
    /// `rd`
    Rd,
    /// `rs`
    Rs,
    /// `rd, rs` or `rs`
    Jalr,
    /// `rt, rs, imm`
    Imm,
    /// `rt, imm`
    Lui,
    /// `rt, offset(rs)`
    Mem,
    /// `rs, rt, label`
    Branch2,
    /// `rs, label`
    Branch1,
    /// `label`
    Jump,
    /// `[code]`
    Code,
    /// `rt, rd`
    Cop,
    None,
}

macro_rules! mnemonics {
    ($( $v:ident = $name:literal, $fmt:ident, $op:literal, $sel:literal, $grp:ident, $syn:ident; )*) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum Mnemonic { $($v,)* }

        impl Mnemonic {
            pub const ALL: &'static [Mnemonic] = &[$(Mnemonic::$v,)*];

            pub fn name(self) -> &'static str {
                match self { $(Mnemonic::$v => $name,)* }
            }

            pub fn format(self) -> Format {
                match self { $(Mnemonic::$v => Format::$fmt,)* }
            }

            /// Primary opcode.
            pub fn opcode(self) -> u32 {
                match self { $(Mnemonic::$v => $op,)* }
            }

            /// Secondary selector: funct for SPECIAL, rt for REGIMM, rs for COP0.
            pub fn selector(self) -> u32 {
                match self { $(Mnemonic::$v => $sel,)* }
            }

            pub fn group(self) -> Group {
                match self { $(Mnemonic::$v => Group::$grp,)* }
            }

            pub fn syntax(self) -> Syntax {
                match self { $(Mnemonic::$v => Syntax::$syn,)* }
            }

            pub fn from_name(s: &str) -> Option<Mnemonic> {
                let lower = s.to_ascii_lowercase();
                Mnemonic::ALL.iter().copied().find(|m| m.name() == lower)
            }
        }
    };
}

mnemonics! {
    Lb = "lb", I, 0x20, 0, Memory, Mem;
    Lbu = "lbu", I, 0x24, 0, Memory, Mem;
    Lh = "lh", I, 0x21, 0, Memory, Mem;
    Lhu = "lhu", I, 0x25, 0, Memory, Mem;
    Lw = "lw", I, 0x23, 0, Memory, Mem;
    Lwl = "lwl", I, 0x22, 0, Memory, Mem;
    Lwr = "lwr", I, 0x26, 0, Memory, Mem;
    Sb = "sb", I, 0x28, 0, Memory, Mem;
    Sh = "sh", I, 0x29, 0, Memory, Mem;
    Sw = "sw", I, 0x2B, 0, Memory, Mem;
    Swl = "swl", I, 0x2A, 0, Memory, Mem;
    Swr = "swr", I, 0x2E, 0, Memory, Mem;
    Add = "add", R, 0, 0x20, Arithmetic, Rrr;
    Addi = "addi", I, 0x08, 0, Arithmetic, Imm;
    Addu = "addu", R, 0, 0x21, Arithmetic, Rrr;
    Addiu = "addiu", I, 0x09, 0, Arithmetic, Imm;
    Sub = "sub", R, 0, 0x22, Arithmetic, Rrr;
    Subu = "subu", R, 0, 0x23, Arithmetic, Rrr;
    Slt = "slt", R, 0, 0x2A, Arithmetic, Rrr;
    Sltu = "sltu", R, 0, 0x2B, Arithmetic, Rrr;
    Slti = "slti", I, 0x0A, 0, Arithmetic, Imm;
    Sltiu = "sltiu", I, 0x0B, 0, Arithmetic, Imm;
    And = "and", R, 0, 0x24, Logic, Rrr;
    Andi = "andi", I, 0x0C, 0, Logic, Imm;
    Or = "or", R, 0, 0x25, Logic, Rrr;
    Ori = "ori", I, 0x0D, 0, Logic, Imm;
    Xor = "xor", R, 0, 0x26, Logic, Rrr;
    Xori = "xori", I, 0x0E, 0, Logic, Imm;
    Nor = "nor", R, 0, 0x27, Logic, Rrr;
    Lui = "lui", I, 0x0F, 0, Logic, Lui;
    Sll = "sll", R, 0, 0x00, Shift, Shift;
    Srl = "srl", R, 0, 0x02, Shift, Shift;
    Sra = "sra", R, 0, 0x03, Shift, Shift;
    Sllv = "sllv", R, 0, 0x04, Shift, ShiftV;
    Srlv = "srlv", R, 0, 0x06, Shift, ShiftV;
    Srav = "srav", R, 0, 0x07, Shift, ShiftV;
    Mult = "mult", R, 0, 0x18, Multiply, RsRt;
    Multu = "multu", R, 0, 0x19, Multiply, RsRt;
    Div = "div", R, 0, 0x1A, Multiply, RsRt;
    Divu = "divu", R, 0, 0x1B, Multiply, RsRt;
    Mfhi = "mfhi", R, 0, 0x10, Multiply, Rd;
    Mflo = "mflo", R, 0, 0x12, Multiply, Rd;
    Mthi = "mthi", R, 0, 0x11, Multiply, Rs;
    Mtlo = "mtlo", R, 0, 0x13, Multiply, Rs;
    J = "j", J, 0x02, 0, Branch, Jump;
    Jal = "jal", J, 0x03, 0, Branch, Jump;
    Jr = "jr", R, 0, 0x08, Branch, Rs;
    Jalr = "jalr", R, 0, 0x09, Branch, Jalr;
    Beq = "beq", I, 0x04, 0, Branch, Branch2;
    Bne = "bne", I, 0x05, 0, Branch, Branch2;
    Blez = "blez", I, 0x06, 0, Branch, Branch1;
    Bgtz = "bgtz", I, 0x07, 0, Branch, Branch1;
    Bltz = "bltz", I, 0x01, 0x00, Branch, Branch1;
    Bgez = "bgez", I, 0x01, 0x01, Branch, Branch1;
    Bltzal = "bltzal", I, 0x01, 0x10, Branch, Branch1;
    Bgezal = "bgezal", I, 0x01, 0x11, Branch, Branch1;
    Syscall = "syscall", R, 0, 0x0C, Special, Code;
    Break = "break", R, 0, 0x0D, Special, Code;
    Mtc0 = "mtc0", R, 0x10, 0x04, Cp0, Cop;
    Mfc0 = "mfc0", R, 0x10, 0x00, Cp0, Cop;
    Rfe = "rfe", R, 0x10, 0x10, Cp0, None;
    Nop = "nop", R, 0, 0x00, Nop, None;
}

impl Mnemonic {
    pub fn is_load(self) -> bool {
        matches!(self, Mnemonic::Lb | Mnemonic::Lbu | Mnemonic::Lh | Mnemonic::Lhu | Mnemonic::Lw | Mnemonic::Lwl | Mnemonic::Lwr)
    }

    pub fn is_store(self) -> bool {
        matches!(self, Mnemonic::Sb | Mnemonic::Sh | Mnemonic::Sw | Mnemonic::Swl | Mnemonic::Swr)
    }

    /// Branches resolved by comparing register operands.
    pub fn is_conditional_branch(self) -> bool {
        matches!(
            self,
            Mnemonic::Beq
                | Mnemonic::Bne
                | Mnemonic::Blez
                | Mnemonic::Bgtz
                | Mnemonic::Bltz
                | Mnemonic::Bgez
                | Mnemonic::Bltzal
                | Mnemonic::Bgezal
        )
    }

    pub fn is_jump(self) -> bool {
        matches!(self, Mnemonic::J | Mnemonic::Jal | Mnemonic::Jr | Mnemonic::Jalr)
    }

    pub fn is_control_transfer(self) -> bool {
        self.is_jump() || self.is_conditional_branch()
    }

    pub fn links(self) -> bool {
        matches!(self, Mnemonic::Jal | Mnemonic::Jalr | Mnemonic::Bltzal | Mnemonic::Bgezal)
    }
}

impl fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
