use super::{decode, Decoded, Instruction, MemoryImage, Syntax};

/// Operand text in a form the assembler accepts back.
pub fn operands(insn: &Instruction, pc: u32) -> String {
    let f = &insn.fields;
    let m = insn.mnemonic;
    match m.syntax() {
        Syntax::None => String::new(),
        Syntax::Rrr => format!("${}, ${}, ${}", f.rd, f.rs, f.rt),
        Syntax::Shift => format!("${}, ${}, {}", f.rd, f.rt, f.sa),
        Syntax::ShiftV => format!("${}, ${}, ${}", f.rd, f.rt, f.rs),
        Syntax::RsRt => format!("${}, ${}", f.rs, f.rt),
        Syntax::Rd => format!("${}", f.rd),
        Syntax::Rs => format!("${}", f.rs),
        Syntax::Jalr => format!("${}, ${}", f.rd, f.rs),
        Syntax::Imm => match m.group() {
            super::Group::Logic => format!("${}, ${}, {:#x}", f.rt, f.rs, f.imm),
            _ => format!("${}, ${}, {}", f.rt, f.rs, f.simm()),
        },
        Syntax::Lui => format!("${}, {:#x}", f.rt, f.imm),
        Syntax::Mem => format!("${}, {}(${})", f.rt, f.simm(), f.rs),
        Syntax::Branch2 => format!("${}, ${}, {:#010x}", f.rs, f.rt, branch_target(pc, f.simm())),
        Syntax::Branch1 => format!("${}, {:#010x}", f.rs, branch_target(pc, f.simm())),
        Syntax::Jump => format!("{:#010x}", (pc.wrapping_add(4) & 0xF000_0000) | (f.target << 2)),
        Syntax::Code if f.code() == 0 => String::new(),
        Syntax::Code => format!("{}", f.code()),
        Syntax::Cop => format!("${}, ${}", f.rt, f.rd),
    }
}

pub fn branch_target(pc: u32, offset_words: i32) -> u32 {
    pc.wrapping_add(4).wrapping_add((offset_words as u32) << 2)
}

/// `<mnemonic> <operands>`, or `.word` for reserved encodings.
pub fn render(word: u32, pc: u32) -> String {
    match decode(word) {
        Decoded::Insn(insn) => {
            let ops = operands(&insn, pc);
            if ops.is_empty() { insn.mnemonic.name().to_string() } else { format!("{} {ops}", insn.mnemonic) }
        }
        Decoded::Reserved => format!(".word {word:#010x}"),
    }
}

/// `<addr>: <hex> <mnemonic> <operands>`.
pub fn disassemble_word(addr: u32, word: u32) -> String {
    format!("{addr:08x}: {word:08x} {}", render(word, addr))
}

pub fn disassemble(image: &MemoryImage) -> Vec<String> {
    image.words().map(|(a, w)| disassemble_word(a, w)).collect()
}
