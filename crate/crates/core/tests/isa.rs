use proptest::prelude::*;
use samips::isa::*;

/// Independent R-type field packing.
fn pack_r(op: u32, rs: u32, rt: u32, rd: u32, sa: u32, funct: u32) -> u32 {
    (op << 26) | (rs << 21) | (rt << 16) | (rd << 11) | (sa << 6) | funct
}

fn pack_i(op: u32, rs: u32, rt: u32, imm: u16) -> u32 {
    (op << 26) | (rs << 21) | (rt << 16) | imm as u32
}

const ORIGINAL: [[&str; 8]; 8] = [
    ["BEQ", "BNE", "BGTZ", "BLEZ", "BLTZ", "BLTZAL", "BGEZ", "BGEZAL"],
    ["*", "JR", "JALR", "JAL", "*", "*", "*", "*"],
    ["ADD", "SUB", "ADDU", "SUBU", "AND", "OR", "XOR", "NOR"],
    ["EXC", "EXCS", "MA", "COR", "SLTU", "SLT", "*", "*"],
    ["SLLV", "SRLV", "SRAV", "NOP", "SLL", "SRL", "SRA", "*"],
    ["*", "*", "*", "*", "*", "*", "*", "*"],
    ["MULTU", "MULT", "DIVU", "DIV", "MTHI", "MTLO", "MFHI", "MFLO"],
    ["*", "*", "*", "*", "*", "*", "*", ""],
];

const OPTIMIZED: [[&str; 8]; 8] = [
    ["BEQ", "BNE", "BGTZ", "BLEZ", "BLTZ", "BLTZAL", "BGEZ", "BGEZAL"],
    ["*", "JR", "JALR", "JAL", "*", "*", "*", "*"],
    ["*", "*", "ADDU", "SUBU", "AND", "OR", "XOR", "NOR"],
    ["EXC", "EXCS", "MA", "COR", "SLTU", "SLT", "LUI", "*"],
    ["SLLV", "SRLV", "SRAV", "*", "SLL", "SRL", "SRA", "*"],
    ["ADD", "SUB", "*", "*", "*", "*", "*", "*"],
    ["MULTU", "MULT", "DIVU", "DIV", "MTHI", "MTLO", "MFHI", "MFLO"],
    ["NOP", "*", "*", "*", "*", "*", "*", ""],
];

fn check_table(table: &[[&str; 8]; 8], mode: ExeMode) {
    for (row, cells) in table.iter().enumerate() {
        for (col, name) in cells.iter().enumerate() {
            let code = ((col << 3) | row) as u8;
            let got = ExeOp::from_wire(code, mode).map(|op| format!("{op:?}").to_uppercase());
            if name.is_empty() || *name == "*" {
                assert_eq!(got, None, "cell row {row:03b} col {col:03b} must be unused");
            } else {
                assert_eq!(got.as_deref(), Some(*name), "cell row {row:03b} col {col:03b}");
            }
        }
    }
}

#[test]
fn ex_table_original_cell_for_cell() {
    check_table(&ORIGINAL, ExeMode::Original);
}

#[test]
fn ex_table_optimized_cell_for_cell() {
    check_table(&OPTIMIZED, ExeMode::Optimized);
}

#[test]
fn add_wire_code_in_both_modes() {
    assert_eq!(ExeOp::Add.wire(ExeMode::Original), Some(0b000010));
    assert_eq!(ExeOp::Add.wire(ExeMode::Optimized), Some(0b000101));
}

#[test]
fn zero_word_is_nop() {
    let insn = decode(0).instruction().unwrap();
    assert_eq!(insn.mnemonic, Mnemonic::Nop);
    assert_eq!(insn.dest(), 0);
}

#[test]
fn add_field_packing() {
    let w = pack_r(0, 2, 3, 1, 0, 0x20);
    assert_eq!(w, 0x0043_0820);
    let insn = decode(w).instruction().unwrap();
    assert_eq!(insn.mnemonic, Mnemonic::Add);
    assert_eq!((insn.fields.rd, insn.fields.rs, insn.fields.rt), (1, 2, 3));
    assert_eq!(assemble("add $1,$2,$3").unwrap().word(TEXT_BASE), w);
}

#[test]
fn unused_opcode_is_reserved() {
    assert_eq!(decode(0x3F << 26), Decoded::Reserved);
    assert_eq!(decode(pack_r(0, 1, 2, 3, 0, 0x3F)), Decoded::Reserved);
}

#[test]
fn sw_and_j_control() {
    let sw = decode(pack_i(0x2B, 29, 8, 4));
    assert_eq!(
        control_for(sw, ExeMode::Original),
        ControlBundle {
            exe: ExeOp::Ma,
            mem: MemCtrl { acc_type: AccType::Write, data_type: Some(DataType::Word) },
            wb: WbCtrl { target: WbTarget::Cpu, action: WbAction::None },
        }
    );
    let j = decode((2 << 26) | 0x100000);
    assert_eq!(
        control_for(j, ExeMode::Original),
        ControlBundle { exe: ExeOp::Nop, mem: MemCtrl::NONE, wb: WbCtrl::CPU_NONE }
    );
}

#[test]
fn reserved_maps_to_exc() {
    let b = control_for(Decoded::Reserved, ExeMode::Original);
    assert_eq!(b.exe, ExeOp::Exc);
    assert_eq!(b.wb.target, WbTarget::Cp0);
    assert_eq!(b.wb.action, WbAction::ExceptionWrite);
}

#[test]
fn wb_wire_codes() {
    assert_eq!(WbCtrl::CPU_NONE.wire(), 0b100);
    assert_eq!(WbCtrl::WRITE.wire(), 0b110);
    assert_eq!(WbCtrl::RESET.wire(), 0b111);
    assert_eq!(WbCtrl::NUN.wire(), 0b000);
    for w in [0b000, 0b010, 0b011, 0b100, 0b110, 0b111] {
        assert_eq!(WbCtrl::from_wire(w).unwrap().wire(), w);
    }
    assert!(WbCtrl::WRITE.writes_cpu() && WbCtrl::RESET.writes_cpu());
    assert!(!WbCtrl::CP0_WRITE.writes_cpu() && !WbCtrl::EXCEPTION.writes_cpu());
}

#[test]
fn mem_wire_layout() {
    let m = MemCtrl { acc_type: AccType::Read, data_type: Some(DataType::ByteUnsigned) };
    assert_eq!(m.wire(), 0b00_111);
    assert_eq!(MemCtrl::NONE.wire(), 0b11_000);
    assert_eq!(MemCtrl::from_wire(m.wire()), m);
}

#[test]
fn lui_differs_by_mode() {
    let lui = decode(pack_i(0x0F, 0, 5, 0x1234));
    assert_eq!(control_for(lui, ExeMode::Original).exe, ExeOp::Sll);
    assert_eq!(control_for(lui, ExeMode::Optimized).exe, ExeOp::Lui);
}

#[test]
fn control_total_over_opcode_funct_pairs() {
    for op in 0..64u32 {
        for funct in 0..64u32 {
            for rs in [0u32, 4, 16] {
                for rt in [0u32, 1, 16, 17] {
                    let w = (op << 26) | (rs << 21) | (rt << 16) | (3 << 11) | funct;
                    for mode in [ExeMode::Original, ExeMode::Optimized] {
                        let b = control_for(decode(w), mode);
                        let bits = b.pack(mode);
                        assert_eq!(ControlBundle::unpack(bits, mode), Some(b));
                        assert!(bits < 1 << ControlBundle::WIDTH);
                    }
                }
            }
        }
    }
}

#[test]
fn nop_and_adjacent_branch() {
    let img = assemble("nop\nbeq $1,$1,L\nL: nop").unwrap();
    assert_eq!(img.word(TEXT_BASE), 0);
    assert_eq!(img.word(TEXT_BASE + 4) & 0xFFFF, 0);
}

#[test]
fn branch_offsets_backward_and_jump_field() {
    let img = assemble("top: nop\nbne $2, $0, top\nj top").unwrap();
    assert_eq!(img.word(TEXT_BASE + 4), pack_i(5, 2, 0, 0xFFFE));
    assert_eq!(img.word(TEXT_BASE + 8), (2 << 26) | (TEXT_BASE >> 2));
}

#[test]
fn assembler_errors() {
    assert!(matches!(assemble("beq $1,$2,nowhere"), Err(AsmError::UndefinedLabel { line: 1, .. })));
    assert!(matches!(assemble(".org 0x400002\nnop"), Err(AsmError::MisalignedOrg { addr: 0x400002, .. })));
    let far = ".text 0x00400000\nbeq $0,$0,far\n.org 0x00440000\nfar: nop";
    assert!(matches!(assemble(far), Err(AsmError::OffsetOutOfRange { line: 2, .. })));
    assert!(matches!(assemble("frob $1"), Err(AsmError::Syntax { .. })));
    assert!(matches!(assemble("addi $1,$1,70000"), Err(AsmError::ImmediateOutOfRange { .. })));
}

#[test]
fn entry_is_main_and_data_words() {
    let src = ".data\nv: .word 7, -1\n.text\nnop\nmain: lui $1, %hi(v)\nori $1, $1, %lo(v)";
    let img = assemble(src).unwrap();
    assert_eq!(img.entry, TEXT_BASE + 4);
    assert_eq!(img.word(DATA_BASE), 7);
    assert_eq!(img.word(DATA_BASE + 4), 0xFFFF_FFFF);
    assert_eq!(img.word(TEXT_BASE + 4), pack_i(0x0F, 0, 1, 0x1000));
    assert_eq!(img.word(TEXT_BASE + 8), pack_i(0x0D, 1, 1, 0x0000));
}

#[test]
fn image_text_format() {
    let img = MemoryImage::from_text("ENTRY 00400000\n00400000: 00000000\n").unwrap();
    assert_eq!(img.entry, 0x0040_0000);
    assert_eq!(img.len(), 1);
    assert_eq!(img.word(0x0040_0000), 0);
    assert!(matches!(MemoryImage::from_text(""), Err(ImageError::EmptyImage)));
    assert!(matches!(MemoryImage::from_text("# only\n"), Err(ImageError::EmptyImage)));
    assert!(matches!(
        MemoryImage::from_text("ENTRY 0\n00000002: 1"),
        Err(ImageError::MisalignedAddress(2))
    ));
    assert!(matches!(MemoryImage::from_text("ENTRY 0\nzz: 1"), Err(ImageError::Parse { line: 2, .. })));
}

#[test]
fn big_endian_subword_access() {
    let mut img = MemoryImage::new(0);
    img.set_word(0x100, 0x1122_3344).unwrap();
    assert_eq!(img.byte(0x100), 0x11);
    assert_eq!(img.byte(0x103), 0x44);
    assert_eq!(img.half(0x102), 0x3344);
    img.set_byte(0x101, 0xAA);
    img.set_half(0x102, 0xBBCC);
    assert_eq!(img.word(0x100), 0x11AA_BBCC);
}

const PROGRAM_20: &str = "
main:   addiu $8, $0, 10
        addiu $9, $0, 0
loop:   add   $9, $9, $8
        addi  $8, $8, -1
        bne   $8, $0, loop
        nop
        lui   $10, 0x1000
        sw    $9, 0($10)
        lw    $11, 0($10)
        sll   $12, $11, 2
        srlv  $13, $12, $8
        mult  $11, $12
        mflo  $14
        slt   $15, $14, $11
        andi  $16, $15, 0xff
        jal   sub
        nop
        break 1023
sub:    jr    $31
        nop
";

#[test]
fn store_load_disassemble_round_trip() {
    let img = assemble(PROGRAM_20).unwrap();
    assert_eq!(img.len(), 20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.img");
    img.store(&path).unwrap();
    let back = MemoryImage::load(&path).unwrap();
    assert_eq!(back, img);
    let expected: Vec<&str> = PROGRAM_20
        .lines()
        .filter_map(|l| {
            let l = l.split_once(':').map_or(l, |(_, r)| r).trim();
            l.split_whitespace().next()
        })
        .collect();
    let got: Vec<String> = disassemble(&back)
        .iter()
        .map(|l| l.split_whitespace().nth(2).unwrap().to_string())
        .collect();
    assert_eq!(got, expected);
}

fn canonical(m: Mnemonic, f: Fields) -> Instruction {
    let mut f = f;
    let zero = Fields::default();
    match m.syntax() {
        Syntax::None => f = zero,
        Syntax::Rrr | Syntax::ShiftV => f = Fields { rd: f.rd, rs: f.rs, rt: f.rt, ..zero },
        Syntax::Shift => f = Fields { rd: f.rd, rt: f.rt, sa: f.sa, ..zero },
        Syntax::RsRt => f = Fields { rs: f.rs, rt: f.rt, ..zero },
        Syntax::Rd => f = Fields { rd: f.rd, ..zero },
        Syntax::Rs => f = Fields { rs: f.rs, ..zero },
        Syntax::Jalr => f = Fields { rd: f.rd, rs: f.rs, ..zero },
        Syntax::Imm => f = Fields { rt: f.rt, rs: f.rs, imm: f.imm, ..zero },
        Syntax::Lui => f = Fields { rt: f.rt, imm: f.imm, ..zero },
        Syntax::Mem => f = Fields { rt: f.rt, rs: f.rs, imm: f.imm, ..zero },
        Syntax::Branch2 => f = Fields { rs: f.rs, rt: f.rt, imm: f.imm, ..zero },
        Syntax::Branch1 => f = Fields { rs: f.rs, imm: f.imm, rt: if m.opcode() == 1 { m.selector() as u8 } else { 0 }, ..zero },
        Syntax::Jump => f = Fields { target: f.target & 0x3FFF, ..zero },
        Syntax::Code => f = Fields { rs: f.rs, rt: f.rt, rd: f.rd, sa: f.sa, ..zero },
        Syntax::Cop => f = Fields { rt: f.rt, rd: f.rd, ..zero },
    }
    Instruction::new(m, f)
}

fn arb_fields() -> impl Strategy<Value = Fields> {
    (0u8..32, 0u8..32, 0u8..32, 0u8..32, any::<u16>(), 0u32..(1 << 26))
        .prop_map(|(rs, rt, rd, sa, imm, target)| Fields { rs, rt, rd, sa, imm, target })
}

proptest! {
    #[test]
    fn encode_decode_identity(w in any::<u32>()) {
        if let Decoded::Insn(insn) = decode(w) {
            prop_assert_eq!(encode(&insn), w);
        }
    }

    #[test]
    fn assembler_disassembler_round_trip(idx in 0..Mnemonic::ALL.len(), f in arb_fields()) {
        let m = Mnemonic::ALL[idx];
        let insn = canonical(m, f);
        // `sll $0, $0, 0` is the all-zero word, which reads back as `nop`.
        prop_assume!(!(m == Mnemonic::Sll && encode(&insn) == 0));
        let word = encode(&insn);
        let text = format!(".text 0x00400000\n{}", render(word, TEXT_BASE));
        let img = assemble(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(img.word(TEXT_BASE), word, "{}", text);
        prop_assert_eq!(decode(word).instruction().map(|i| i.mnemonic), Some(m));
    }

    #[test]
    fn image_text_round_trip(words in proptest::collection::btree_map(0u32..1 << 20, any::<u32>(), 1..40), entry in any::<u32>()) {
        let mut img = MemoryImage::new(entry);
        for (a, w) in words {
            img.set_word(a * 4, w).unwrap();
        }
        prop_assert_eq!(MemoryImage::from_text(&img.to_text()).unwrap(), img);
    }
}
