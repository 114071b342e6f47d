//! Instruction decode and the register bank with its hazard detector.

use std::collections::{BTreeMap, VecDeque};

use super::probe::ProbeEntry;
use super::wires::*;
use super::Env;
use crate::arch::{DelaySlot, ExcCode, HALT_CODE};
use crate::hazards::{colour_check_stage, ColourVector, FwCase, Fraq, Shape, Verdict};
use crate::isa::{control_for_insn, decode, ControlBundle, Decoded, ExeMode, ExeOp, MemCtrl, Mnemonic, WbCtrl};
use crate::kernel::{Ctx, Output, SimError, Tx, Wire};
use crate::kernel::ProcessSpec;

pub(super) fn processes(env: &Env) -> Vec<ProcessSpec> {
    let (e1, e2) = (env.clone(), env.clone());
    vec![
        ProcessSpec::new("DeCode", move |ctx| decoder(ctx, e1))
            .inputs(["CIns", "BaseAddID"])
            .outputs(["EXCtrl", "BaseAddEX", "RegRead", "Offset32", "Sa", "CIDRd", "IDch"]),
        ProcessSpec::new("RegBank", move |ctx| regbank(ctx, e2))
            .inputs(["RegRead", "RegWrite"])
            .outputs(["FRACtrl", "FWCtrl", "ReadData0", "ReadData1", "PIDRd"]),
    ]
}

const NOP_BUNDLE: ControlBundle = ControlBundle { exe: ExeOp::Nop, mem: MemCtrl::NONE, wb: WbCtrl::CPU_NONE };

/// One item handed to EX and the register bank.
struct Item {
    ctrl: ExCtrl,
    base: SlotAddr,
    read: Option<RegReadMsg>,
    offset: Option<u32>,
    sa: Option<u8>,
    cp0: Option<u8>,
    request: Option<Request>,
    probe: ProbeEntry,
}

impl Item {
    fn filler(colour: ColourVector, mode: ExeMode, op: WbOp) -> Item {
        let marker = op == WbOp::Marker;
        Item {
            ctrl: ExCtrl {
                colour,
                bundle: NOP_BUNDLE.pack(mode),
                dest: 0,
                imm: false,
                sa: false,
                cp0: false,
                wbop: op,
                exc: None,
            },
            base: SlotAddr { slot: false, addr: if marker { MARKER_PC.wrapping_add(4) } else { 0 } },
            read: (!marker).then_some(RegReadMsg { rno0: 0, rno1: 0, wno: 0 }),
            offset: None,
            sa: None,
            cp0: None,
            request: None,
            probe: ProbeEntry { pc: if marker { MARKER_PC } else { 0 }, mnemonic: None, took: false, reads: (0, 0), operands: None },
        }
    }
}

struct DecodePorts {
    ctrl: Tx<ExCtrl>,
    base: Tx<SlotAddr>,
    read: Tx<RegReadMsg>,
    offset: Output,
    sa: Tx<Reg5>,
    cp0: Tx<Reg5>,
    idch: Tx<Request>,
}

async fn opt<F: std::future::Future<Output = Result<(), SimError>>>(f: Option<F>) -> Result<(), SimError> {
    match f {
        Some(f) => f.await,
        None => Ok(()),
    }
}

impl DecodePorts {
    async fn emit(&self, env: &Env, mut item: Item) -> Result<(), SimError> {
        if let Some(r) = &item.read {
            item.probe.reads = (r.rno0, r.rno1);
        }
        env.shared.lock().unwrap().probe.in_flight.push_back(item.probe);
        let (a, b, c, d, e, f, g) = futures::join!(
            self.ctrl.send(&item.ctrl),
            self.base.send(&item.base),
            opt(item.read.as_ref().map(|r| self.read.send(r))),
            opt(item.offset.map(|o| self.offset.send(o as u128))),
            opt(item.sa.map(|s| self.sa.send(&Reg5 { reg: s }))),
            opt(item.cp0.map(|r| self.cp0.send(&Reg5 { reg: r }))),
            opt(item.request.as_ref().map(|r| self.idch.send(r))),
        );
        a.and(b).and(c).and(d).and(e).and(f).and(g)
    }
}

async fn decoder(ctx: Ctx, env: Env) -> Result<(), SimError> {
    let cins = ctx.rx::<Fetched>("CIns")?;
    let base_in = ctx.input("BaseAddID")?;
    let ports = DecodePorts {
        ctrl: ctx.tx("EXCtrl")?,
        base: ctx.tx("BaseAddEX")?,
        read: ctx.tx("RegRead")?,
        offset: ctx.output("Offset32")?,
        sa: ctx.tx("Sa")?,
        cp0: ctx.tx("CIDRd")?,
        idch: ctx.tx("IDch")?,
    };
    let mode = env.cfg.exe_mode;
    let slots = env.cfg.delay_slot;
    let shape = Shape::SAMIPS;
    let mut stage = ColourVector::zero(COLOURS);
    // Target of a J/JAL waiting for its delay slot.
    let mut slot_target: Option<u32> = None;

    loop {
        let (f, b) = futures::join!(cins.recv(), base_in.recv());
        let (fetched, base) = (f?, b? as u32);
        let pc = base.wrapping_sub(4);
        if pc == MARKER_PC {
            for _ in 0..shape.in_flight() {
                ports.emit(&env, Item::filler(fetched.colour, mode, WbOp::Bubble)).await?;
            }
            ports.emit(&env, Item::filler(fetched.colour, mode, WbOp::Marker)).await?;
            continue;
        }
        ctx.wait("colour").await;
        let (verdict, next) = colour_check_stage(ID, stage, fetched.colour).map_err(|e| ctx.fault(e.to_string()))?;
        stage = next;
        match verdict {
            Verdict::Discard => continue,
            Verdict::ExecuteAdopt => {
                slot_target = None;
                for _ in 0..shape.max_distance() {
                    ports.emit(&env, Item::filler(fetched.colour, mode, WbOp::Bubble)).await?;
                }
            }
            Verdict::Execute => {}
        }
        ctx.wait("decode").await;

        let in_slot = slot_target.is_some();
        let mut branch_on_slot = slot_target.take();
        let epc = if in_slot { pc.wrapping_sub(4) } else { pc };
        let mut item = Item::filler(fetched.colour, mode, WbOp::None);
        item.base = SlotAddr { slot: in_slot, addr: base };
        item.probe = ProbeEntry { pc, mnemonic: None, took: false, reads: (0, 0), operands: None };

        let decoded = if fetched.unmapped { None } else { Some(decode(fetched.word)) };
        let mut id_exc: Option<ExcCode> = None;
        let mut halt = false;
        let mut late = false;
        match decoded {
            None => {
                item.ctrl.wbop = WbOp::FetchFault;
                item.read = Some(RegReadMsg { rno0: 0, rno1: 0, wno: 0 });
            }
            Some(Decoded::Reserved) => id_exc = Some(ExcCode::RI),
            Some(Decoded::Insn(insn)) => {
                let m = insn.mnemonic;
                let f = insn.fields;
                item.probe.mnemonic = Some(m);
                match m {
                    Mnemonic::Syscall => id_exc = Some(ExcCode::Sys),
                    Mnemonic::Break if f.code() == HALT_CODE => halt = true,
                    Mnemonic::Break => id_exc = Some(ExcCode::Bp),
                    _ => {}
                }
                if id_exc.is_none() {
                    let bundle = control_for_insn(&insn, mode);
                    let (rs, rt) = insn.sources();
                    let wd = insn.dest();
                    item.ctrl.bundle = bundle.pack(mode);
                    item.ctrl.dest = wd;
                    item.read = Some(RegReadMsg { rno0: rs, rno1: rt, wno: wd });
                    let needs_imm = bundle.mem != MemCtrl::NONE || m.is_conditional_branch();
                    if needs_imm {
                        item.ctrl.imm = true;
                        let zext = matches!(m, Mnemonic::Andi | Mnemonic::Ori | Mnemonic::Xori | Mnemonic::Lui);
                        item.offset = Some(if zext { f.zext() } else { f.sext() });
                    }
                    if matches!(m, Mnemonic::Sll | Mnemonic::Srl | Mnemonic::Sra) {
                        item.ctrl.sa = true;
                        item.sa = Some(f.sa);
                    }
                    if matches!(m, Mnemonic::Mtc0 | Mnemonic::Mfc0) {
                        item.ctrl.cp0 = true;
                        item.cp0 = Some(f.rd);
                    }
                    item.ctrl.wbop = match m {
                        Mnemonic::Mult | Mnemonic::Multu | Mnemonic::Div | Mnemonic::Divu => WbOp::HiLo,
                        Mnemonic::Mthi => WbOp::SetHi,
                        Mnemonic::Mtlo => WbOp::SetLo,
                        Mnemonic::Mfhi => WbOp::ReadHi,
                        Mnemonic::Mflo => WbOp::ReadLo,
                        Mnemonic::Mfc0 => WbOp::ReadCp0,
                        Mnemonic::Mtc0 => WbOp::WriteCp0,
                        Mnemonic::Rfe => WbOp::Rfe,
                        Mnemonic::Break => WbOp::Halt,
                        _ => WbOp::None,
                    };
                    late = item.ctrl.wbop.late_result() && wd != 0;
                    if halt {
                        item.ctrl.bundle = NOP_BUNDLE.pack(mode);
                    }
                    if matches!(m, Mnemonic::J | Mnemonic::Jal) {
                        let target = (base & 0xF000_0000) | (f.target << 2);
                        item.probe.took = true;
                        match slots {
                            DelaySlot::On => slot_target = Some(target),
                            DelaySlot::Off => {
                                stage = stage.flipped(ID);
                                item.request =
                                    Some(Request { colour: stage, src: Src::Id, kind: ReqKind::Branch, target });
                            }
                        }
                    }
                }
            }
        }
        if let Some(code) = id_exc {
            item.ctrl.exc = Some(code);
            item.ctrl.bundle = ControlBundle { exe: ExeOp::Exc, mem: MemCtrl::IMM, wb: WbCtrl::EXCEPTION }.pack(mode);
            item.read = Some(RegReadMsg { rno0: 0, rno1: 0, wno: 0 });
        }
        if id_exc.is_some() || halt {
            branch_on_slot = None;
            slot_target = None;
            stage = stage.flipped(ID);
            let kind = if halt { ReqKind::Halt } else { ReqKind::Exception };
            item.request = Some(Request { colour: stage, src: Src::Id, kind, target: epc });
        }
        if let Some(target) = branch_on_slot {
            stage = stage.flipped(ID);
            item.request = Some(Request { colour: stage, src: Src::Id, kind: ReqKind::Branch, target });
        }
        let colour = fetched.colour;
        ports.emit(&env, item).await?;
        if halt || late {
            ports.emit(&env, Item::filler(colour, mode, WbOp::Bubble)).await?;
        }
    }
}

async fn regbank(ctx: Ctx, env: Env) -> Result<(), SimError> {
    let read_in = ctx.input("RegRead")?;
    let write_in = ctx.input("RegWrite")?;
    let fra = ctx.tx::<FraCtrl>("FRACtrl")?;
    let fw = ctx.tx::<FwCtrl>("FWCtrl")?;
    let rd0 = ctx.output("ReadData0")?;
    let rd1 = ctx.output("ReadData1")?;
    let pid = ctx.tx::<PidRd>("PIDRd")?;
    let shape = Shape::SAMIPS;
    let mut detector = env.cfg.hazard_impl.build(shape);
    let mut fraq = Fraq::new(shape);
    let corrupt = env.cfg.corrupt_fwcase;
    let mut seq: usize = 0;
    // Writer reads whose RegWrite has not arrived, oldest first.
    let mut unwritten: VecDeque<(usize, u8)> = VecDeque::new();
    let mut write_data: BTreeMap<usize, u32> = BTreeMap::new();

    async fn take_write(
        ctx: &Ctx,
        env: &Env,
        raw: u128,
        detector: &mut Box<dyn crate::hazards::HazardDetector + Send>,
        unwritten: &mut VecDeque<(usize, u8)>,
        write_data: &mut BTreeMap<usize, u32>,
    ) -> Result<(), SimError> {
        let w = RegWriteMsg::unpack(raw);
        let Some((s, rd)) = unwritten.pop_front() else {
            return Err(ctx.fault(format!("RegWrite for ${} with no pending writer", w.rd)));
        };
        if rd != w.rd {
            return Err(ctx.fault(format!("RegWrite for ${} but oldest writer is ${rd}", w.rd)));
        }
        ctx.wait("write").await;
        detector.write(w.rd, w.snap).map_err(|e| ctx.fault(e.to_string()))?;
        if !w.reset && w.rd != 0 {
            env.shared.lock().unwrap().regs[w.rd as usize] = w.data;
        }
        write_data.insert(s, w.data);
        Ok(())
    }

    loop {
        let (k, raw) = ctx.arbitrate(&[&read_in, &write_in]).await?;
        if k == 1 {
            take_write(&ctx, &env, raw, &mut detector, &mut unwritten, &mut write_data).await?;
            continue;
        }
        let r = RegReadMsg::unpack(raw);
        ctx.wait("detect").await;
        let (mut pair, snap) = detector.read(r.rno0, r.rno1, r.wno);
        if corrupt {
            for c in [&mut pair.fw0, &mut pair.fw1] {
                if *c == FwCase::EXER {
                    *c = FwCase::MEMR;
                }
            }
        }
        let bits = fraq.fraq_step(r.wno != 0);
        let me = seq;
        seq += 1;
        if r.wno != 0 {
            unwritten.push_back((me, r.wno));
            env.shared.lock().unwrap().probe.writer_reads += 1;
        }
        // Write-back of the read three back must land before anything goes to EX.
        let horizon = me.checked_sub(shape.max_distance() as usize);
        while let (Some(h), Some(&(s, _))) = (horizon, unwritten.front()) {
            if s > h {
                break;
            }
            let raw = write_in.recv().await?;
            take_write(&ctx, &env, raw, &mut detector, &mut unwritten, &mut write_data).await?;
        }
        if let Some(h) = horizon {
            write_data.retain(|&s, _| s >= h);
        }
        ctx.wait("read").await;
        let (value0, value1, old) = {
            let sh = env.shared.lock().unwrap();
            (sh.regs[r.rno0 as usize], sh.regs[r.rno1 as usize], sh.regs[r.wno as usize])
        };
        let wbr = horizon.and_then(|h| write_data.get(&h)).copied();
        let pick = |case: FwCase, value: u32| -> Result<Option<u32>, SimError> {
            match case {
                FwCase::Non => Ok(Some(value)),
                FwCase::WBR => wbr.map(Some).ok_or_else(|| ctx.fault("WBR case without a write-back")),
                _ => Ok(None),
            }
        };
        let (v0, v1) = (pick(pair.fw0, value0)?, pick(pair.fw1, value1)?);
        let fw_of = |c: FwCase| if matches!(c, FwCase::EXER | FwCase::MEMR) { c.wire() } else { 0 };
        fra.send(&FraCtrl { bits: Fraq::pack(&bits) as u8 }).await?;
        fw.send(&FwCtrl { fw0: fw_of(pair.fw0), fw1: fw_of(pair.fw1) }).await?;
        let (a, b, c) = futures::join!(
            opt(v0.map(|v| rd0.send(v as u128))),
            opt(v1.map(|v| rd1.send(v as u128))),
            opt((r.wno != 0).then(|| pid.send(&PidRd { old, snap, wno: r.wno }))),
        );
        a.and(b).and(c)?;
    }
}
