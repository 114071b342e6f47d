//! Instruction encoding, decoder control bundles, assembler and memory images.

mod asm;
mod control;
mod decode;
mod disasm;
mod image;
mod mnemonic;

pub use asm::{assemble, parse_register, AsmError, DATA_BASE, TEXT_BASE};
pub use control::{
    control_for, control_for_insn, AccType, ControlBundle, DataType, ExeMode, ExeOp, MemCtrl, WbAction, WbCtrl,
    WbTarget,
};
pub use decode::{decode, encode, Decoded, Fields, Instruction, InstructionWord};
pub use disasm::{branch_target, disassemble, disassemble_word, operands, render};
pub use image::{ImageError, MemoryImage};
pub use mnemonic::{Format, Group, Mnemonic, Syntax};
