use super::{Format, Mnemonic};

/// A raw 32-bit instruction with field extractors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InstructionWord(pub u32);

impl InstructionWord {
    pub fn opcode(self) -> u32 {
        self.0 >> 26
    }
    pub fn rs(self) -> u8 {
        ((self.0 >> 21) & 31) as u8
    }
    pub fn rt(self) -> u8 {
        ((self.0 >> 16) & 31) as u8
    }
    pub fn rd(self) -> u8 {
        ((self.0 >> 11) & 31) as u8
    }
    pub fn sa(self) -> u8 {
        ((self.0 >> 6) & 31) as u8
    }
    pub fn funct(self) -> u32 {
        self.0 & 63
    }
    pub fn imm(self) -> u16 {
        self.0 as u16
    }
    pub fn target(self) -> u32 {
        self.0 & 0x03FF_FFFF
    }
    /// 20-bit code field of SYSCALL and BREAK.
    pub fn code(self) -> u32 {
        (self.0 >> 6) & 0xF_FFFF
    }

    pub fn format(self) -> Format {
        match self.opcode() {
            0 | 0x10 => Format::R,
            2 | 3 => Format::J,
            _ => Format::I,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Fields {
    pub rs: u8,
    pub rt: u8,
    pub rd: u8,
    pub sa: u8,
    pub imm: u16,
    pub target: u32,
}

impl Fields {
    pub fn simm(&self) -> i32 {
        self.imm as i16 as i32
    }

    pub fn sext(&self) -> u32 {
        self.simm() as u32
    }

    pub fn zext(&self) -> u32 {
        self.imm as u32
    }

    pub fn code(&self) -> u32 {
        ((self.rs as u32) << 15) | ((self.rt as u32) << 10) | ((self.rd as u32) << 5) | self.sa as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub mnemonic: Mnemonic,
    pub fields: Fields,
}

impl Instruction {
    pub fn new(mnemonic: Mnemonic, fields: Fields) -> Self {
        Instruction { mnemonic, fields }
    }

    /// Destination register written by this instruction, 0 when none.
    pub fn dest(&self) -> u8 {
        use Mnemonic::*;
        let f = &self.fields;
        match self.mnemonic {
            Add | Addu | Sub | Subu | Slt | Sltu | And | Or | Xor | Nor | Sll | Srl | Sra | Sllv | Srlv
            | Srav | Mfhi | Mflo | Jalr => f.rd,
            Addi | Addiu | Slti | Sltiu | Andi | Ori | Xori | Lui | Lb | Lbu | Lh | Lhu | Lw | Lwl | Lwr
            | Mfc0 => f.rt,
            Jal | Bltzal | Bgezal => 31,
            _ => 0,
        }
    }

    /// Source registers read (0 when unused).
    pub fn sources(&self) -> (u8, u8) {
        use Mnemonic::*;
        let f = &self.fields;
        match self.mnemonic {
            Add | Addu | Sub | Subu | Slt | Sltu | And | Or | Xor | Nor | Sllv | Srlv | Srav | Mult
            | Multu | Div | Divu | Beq | Bne => (f.rs, f.rt),
            Sll | Srl | Sra => (0, f.rt),
            Addi | Addiu | Slti | Sltiu | Andi | Ori | Xori | Lb | Lbu | Lh | Lhu | Lw | Blez | Bgtz
            | Bltz | Bgez | Bltzal | Bgezal | Jr | Jalr | Mthi | Mtlo => (f.rs, 0),
            Lwl | Lwr | Sb | Sh | Sw | Swl | Swr => (f.rs, f.rt),
            Mtc0 => (0, f.rt),
            _ => (0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decoded {
    Insn(Instruction),
    /// No instruction is defined for this encoding.
    Reserved,
}

impl Decoded {
    pub fn instruction(self) -> Option<Instruction> {
        match self {
            Decoded::Insn(i) => Some(i),
            Decoded::Reserved => None,
        }
    }
}

fn fields_of(w: InstructionWord) -> Fields {
    Fields { rs: w.rs(), rt: w.rt(), rd: w.rd(), sa: w.sa(), imm: w.imm(), target: w.target() }
}

pub fn decode(word: u32) -> Decoded {
    use Mnemonic::*;
    if word == 0 {
        return Decoded::Insn(Instruction::new(Nop, Fields::default()));
    }
    let w = InstructionWord(word);
    let f = fields_of(w);
    let m = match w.opcode() {
        0 => match w.funct() {
            0x00 => Sll,
            0x02 => Srl,
            0x03 => Sra,
            0x04 => Sllv,
            0x06 => Srlv,
            0x07 => Srav,
            0x08 => Jr,
            0x09 => Jalr,
            0x0C => Syscall,
            0x0D => Break,
            0x10 => Mfhi,
            0x11 => Mthi,
            0x12 => Mflo,
            0x13 => Mtlo,
            0x18 => Mult,
            0x19 => Multu,
            0x1A => Div,
            0x1B => Divu,
            0x20 => Add,
            0x21 => Addu,
            0x22 => Sub,
            0x23 => Subu,
            0x24 => And,
            0x25 => Or,
            0x26 => Xor,
            0x27 => Nor,
            0x2A => Slt,
            0x2B => Sltu,
            _ => return Decoded::Reserved,
        },
        0x01 => match w.rt() {
            0x00 => Bltz,
            0x01 => Bgez,
            0x10 => Bltzal,
            0x11 => Bgezal,
            _ => return Decoded::Reserved,
        },
        0x02 => J,
        0x03 => Jal,
        0x04 => Beq,
        0x05 => Bne,
        0x06 => Blez,
        0x07 => Bgtz,
        0x08 => Addi,
        0x09 => Addiu,
        0x0A => Slti,
        0x0B => Sltiu,
        0x0C => Andi,
        0x0D => Ori,
        0x0E => Xori,
        0x0F => Lui,
        0x10 => match (w.rs(), word & 0x7FF) {
            (0x00, 0) => Mfc0,
            (0x04, 0) => Mtc0,
            _ if word == 0x4200_0010 => Rfe,
            _ => return Decoded::Reserved,
        },
        0x20 => Lb,
        0x21 => Lh,
        0x22 => Lwl,
        0x23 => Lw,
        0x24 => Lbu,
        0x25 => Lhu,
        0x26 => Lwr,
        0x28 => Sb,
        0x29 => Sh,
        0x2A => Swl,
        0x2B => Sw,
        0x2E => Swr,
        _ => return Decoded::Reserved,
    };
    Decoded::Insn(Instruction::new(m, f))
}

pub fn encode(insn: &Instruction) -> u32 {
    use Mnemonic::*;
    let m = insn.mnemonic;
    let f = &insn.fields;
    let (rs, rt, rd, sa) = (f.rs as u32, f.rt as u32, f.rd as u32, f.sa as u32);
    match m {
        Nop => 0,
        Rfe => 0x4200_0010,
        Mfc0 | Mtc0 => (0x10 << 26) | (m.selector() << 21) | (rt << 16) | (rd << 11),
        Bltz | Bgez | Bltzal | Bgezal => (1 << 26) | (rs << 21) | (m.selector() << 16) | f.imm as u32,
        _ => match m.format() {
            super::Format::R => (rs << 21) | (rt << 16) | (rd << 11) | (sa << 6) | m.selector(),
            super::Format::J => (m.opcode() << 26) | (f.target & 0x03FF_FFFF),
            super::Format::I => (m.opcode() << 26) | (rs << 21) | (rt << 16) | f.imm as u32,
        },
    }
}
