//! Memory interface, data memory, write-back, CP0 and the interrupt path.

use std::collections::BTreeSet;

use super::probe::{Effect, OperandRecord};
use super::wires::*;
use super::{Env, InterruptScheme};
use crate::arch::{cause_value, pop_status, push_status, ExcCode, InterruptRecord, RetireRecord, CP0_CAUSE, CP0_EPC, CP0_STATUS};
use crate::hazards::{colour_check_stage, ColourVector, Verdict};
use crate::isa::{AccType, DataType, MemCtrl};
use crate::kernel::{Ctx, ProcessSpec, SimError, Wire};

pub(super) fn processes(env: &Env) -> Vec<ProcessSpec> {
    let scheme = env.cfg.interrupt_scheme;
    let (e1, e2, e3, e4) = (env.clone(), env.clone(), env.clone(), env.clone());
    let pins = env.cfg.interrupts.clone();
    let mut wb_inputs = vec!["WBCtrl", "MEMRes", "BaseAddWB", "MEMRd", "WBHi", "CP0RData"];
    let mut wb_outputs = vec!["RegWrite", "FMEMRes", "CP0W1", "CP0RAdd", "WBch"];
    let mut mem_inputs = vec!["MEMCtrl", "EXRes", "BaseAddMEM", "MemD", "EXRd", "MemData", "StatusData"];
    if scheme == InterruptScheme::Wb {
        wb_inputs.push("IntReq");
        wb_outputs.push("StoreGo");
        mem_inputs.push("StoreGo");
    }
    vec![
        ProcessSpec::new("MemInt", move |ctx| mem_int(ctx, e1))
            .inputs(mem_inputs)
            .outputs([
                "MEMch", "FEXRes", "WBCtrl", "MEMRes", "MEMRd", "WBHi", "BaseAddWB", "MemAdd", "WriteData", "StatusReq",
            ]),
        ProcessSpec::new("DMem", move |ctx| data_memory(ctx, e2))
            .inputs(["MemAdd", "WriteData"])
            .outputs(["MemData"]),
        ProcessSpec::new("WBUnit", move |ctx| write_back(ctx, e3))
            .inputs(wb_inputs)
            .outputs(wb_outputs),
        ProcessSpec::new("CP0", move |ctx| cp0(ctx, e4))
            .inputs(["IntPin", "CP0W1", "CP0W2", "CP0Rd"])
            .outputs(["IntRaise", "CP0RData", "StatusData"]),
        ProcessSpec::new("Cp0Port", |ctx| async move {
            let wb = ctx.rx::<Reg5>("CP0RAdd")?;
            let mem = ctx.rx::<Reg5>("StatusReq")?;
            let out = ctx.tx::<Cp0Read>("CP0Rd")?;
            loop {
                let (k, raw) = ctx.arbitrate(&[wb.raw(), mem.raw()]).await?;
                ctx.wait("grant").await;
                out.send(&Cp0Read { status: k == 1, reg: Reg5::unpack(raw).reg }).await?;
            }
        })
        .inputs(["CP0RAdd", "StatusReq"])
        .outputs(["CP0Rd"]),
        ProcessSpec::new("IntBuf", |ctx| async move {
            let raise = ctx.input("IntRaise")?;
            let req = ctx.output("IntReq")?;
            loop {
                let p = raise.recv().await?;
                ctx.wait("pass").await;
                req.send(p).await?;
            }
        })
        .inputs(["IntRaise"])
        .outputs(["IntReq"]),
        ProcessSpec::new("PinDriver", move |ctx| async move {
            let out = ctx.tx::<Pin>("IntPin")?;
            let mut schedule = pins;
            schedule.sort();
            for (t, pin) in schedule {
                let now = ctx.now();
                if t > now {
                    ctx.sleep(t - now).await;
                }
                out.send(&Pin { pin }).await?;
            }
            Ok(())
        })
        .outputs(["IntPin"]),
    ]
}

/// Byte lanes and mask written by a store of `rt` at `addr`.
pub fn store_lanes(dt: DataType, addr: u32, rt: u32) -> (u32, u32) {
    let o = addr & 3;
    match dt {
        DataType::ByteSigned | DataType::ByteUnsigned => (rt << ((3 - o) * 8), 0xFF << ((3 - o) * 8)),
        DataType::HalfSigned | DataType::HalfUnsigned => {
            let sh = (2 - (addr & 2)) * 8;
            (rt << sh, 0xFFFF << sh)
        }
        DataType::Word => (rt, u32::MAX),
        DataType::WordLeft => (rt >> (8 * o), u32::MAX >> (8 * o)),
        DataType::WordRight => (rt << (8 * (3 - o)), u32::MAX << (8 * (3 - o))),
    }
}

/// Register value produced by a load of `word` at `addr`; `old` is the
/// destination's previous value, merged by LWL/LWR.
pub fn load_value(dt: DataType, addr: u32, word: u32, old: u32) -> u32 {
    let o = addr & 3;
    let byte = (word >> ((3 - o) * 8)) as u8;
    let half = (word >> ((2 - (addr & 2)) * 8)) as u16;
    match dt {
        DataType::ByteSigned => byte as i8 as i32 as u32,
        DataType::ByteUnsigned => byte as u32,
        DataType::HalfSigned => half as i16 as i32 as u32,
        DataType::HalfUnsigned => half as u32,
        DataType::Word => word,
        DataType::WordLeft => (word << (8 * o)) | (old & low_mask(8 * o)),
        DataType::WordRight => (word >> (8 * (3 - o))) | (old & !(u32::MAX >> (8 * (3 - o)))),
    }
}

fn low_mask(bits: u32) -> u32 {
    if bits >= 32 { u32::MAX } else { (1u32 << bits) - 1 }
}

async fn mem_int(ctx: Ctx, env: Env) -> Result<(), SimError> {
    let ctl_in = ctx.rx::<StageCtl>("MEMCtrl")?;
    let res_in = ctx.input("EXRes")?;
    let pc_in = ctx.input("BaseAddMEM")?;
    let memd_in = ctx.input("MemD")?;
    let rd_in = ctx.rx::<RdTag>("EXRd")?;
    let data_in = ctx.input("MemData")?;
    let status_in = ctx.input("StatusData")?;
    let memch = ctx.tx::<Request>("MEMch")?;
    let fex = ctx.output("FEXRes")?;
    let ctl_out = ctx.tx::<StageCtl>("WBCtrl")?;
    let res_out = ctx.output("MEMRes")?;
    let rd_out = ctx.tx::<RdTag>("MEMRd")?;
    let hi_out = ctx.output("WBHi")?;
    let pc_out = ctx.output("BaseAddWB")?;
    let addr_out = ctx.tx::<MemAddMsg>("MemAdd")?;
    let wdata_out = ctx.output("WriteData")?;
    let status_req = ctx.tx::<Reg5>("StatusReq")?;
    // Under the write-back scheme a store waits for write-back's verdict, so
    // an interrupt taken at or before it leaves memory untouched.
    let store_go = if env.cfg.interrupt_scheme == InterruptScheme::Wb { Some(ctx.input("StoreGo")?) } else { None };
    let mut colour = ColourVector::zero(COLOURS);
    // Status as seen by the instruction now in MEM, for the user-mode check.
    let mut status = 0u32;

    loop {
        let (c, r, p) = futures::join!(ctl_in.recv(), res_in.recv(), pc_in.recv());
        let (mut ctl, res, pc) = (c?, r? as u32, p? as u32);
        let (m, t) = futures::join!(
            async { if ctl.carries_memd() { memd_in.recv().await.map(|v| v as u32) } else { Ok(0) } },
            async { if ctl.carries_rd() { rd_in.recv().await.map(Some) } else { Ok(None) } },
        );
        let (memd, tag) = (m?, t?);
        let mut value = res;
        let mut deferred = None;
        if !ctl.wbop.is_filler() && !ctl.squashed() {
            ctx.wait("colour").await;
            let (verdict, next) = colour_check_stage(MEM, colour, ctl.colour).map_err(|e| ctx.fault(e.to_string()))?;
            if next.bit(INT) != colour.bit(INT) {
                status_req.send(&Reg5 { reg: CP0_STATUS as u8 }).await?;
                status = status_in.recv().await? as u32;
            }
            colour = next;
            if verdict == Verdict::Discard {
                ctl.squash();
            }
        }
        if !ctl.wbop.is_filler() && !ctl.squashed() {
            let mem = MemCtrl::from_wire(ctl.mem);
            let epc = if ctl.slot { pc.wrapping_sub(4) } else { pc };
            if ctl.exc.is_none() && mem.acc_type.touches_memory() {
                let dt = mem.data_type.ok_or_else(|| ctx.fault("memory access without a data type"))?;
                let write = mem.acc_type == AccType::Write;
                let user = status & 2 != 0;
                if res % dt.alignment() != 0 || (user && res >= 0x8000_0000) {
                    ctl.exc = Some(if write { ExcCode::AdES } else { ExcCode::AdEL });
                    if ctl.carries_rd() {
                        ctl.wb = crate::isa::WbCtrl::RESET.wire();
                    }
                    colour = colour.flipped(MEM);
                    memch.send(&Request { colour, src: Src::Mem, kind: ReqKind::Exception, target: epc }).await?;
                } else {
                    ctx.wait("access").await;
                    let req = MemAddMsg { addr: res, dt: dt as u8, write };
                    if write {
                        deferred = Some(req);
                    } else {
                        addr_out.send(&req).await?;
                        let word = data_in.recv().await? as u32;
                        value = load_value(dt, res, word, memd);
                    }
                }
            }
            if ctl.exc.is_some() {
                status = push_status(status);
            } else if ctl.wbop == WbOp::Rfe {
                status = pop_status(status);
            } else if ctl.wbop == WbOp::WriteCp0 && ctl.reg as usize == CP0_STATUS {
                status = res;
            }
        }
        let writer = ctl.carries_rd();
        let (a, b, c, d, e, f) = futures::join!(
            async { if writer { fex.send(value as u128).await } else { Ok(()) } },
            ctl_out.send(&ctl),
            res_out.send(value as u128),
            pc_out.send(pc as u128),
            async { if let (true, Some(t)) = (writer, tag) { rd_out.send(&t).await } else { Ok(()) } },
            async { if ctl.wbop == WbOp::HiLo { hi_out.send(memd as u128).await } else { Ok(()) } },
        );
        a.and(b).and(c).and(d).and(e).and(f)?;
        if let Some(req) = deferred {
            let go = match &store_go {
                Some(g) => g.recv().await? != 0,
                None => true,
            };
            if go {
                let (a, b) = futures::join!(addr_out.send(&req), wdata_out.send(memd as u128));
                a.and(b)?;
                env.shared.lock().unwrap().probe.effects.push(Effect::Store { pc, addr: req.addr });
            }
        }
    }
}

async fn data_memory(ctx: Ctx, env: Env) -> Result<(), SimError> {
    let addr_in = ctx.rx::<MemAddMsg>("MemAdd")?;
    let wdata = ctx.input("WriteData")?;
    let data_out = ctx.output("MemData")?;
    loop {
        let req = addr_in.recv().await?;
        let dt = DataType::from_bits(req.dt).ok_or_else(|| ctx.fault(format!("bad data type {}", req.dt)))?;
        if req.write {
            let rt = wdata.recv().await? as u32;
            ctx.wait("write").await;
            let (value, mask) = store_lanes(dt, req.addr, rt);
            if !env.shared.lock().unwrap().memory.write_merge(req.addr, value, mask) {
                return Err(ctx.fault(format!("store to unmapped address {:#010x}", req.addr)));
            }
        } else {
            ctx.wait("read").await;
            let word = env.shared.lock().unwrap().memory.read_word(req.addr);
            let word = word.ok_or_else(|| ctx.fault(format!("load from unmapped address {:#010x}", req.addr)))?;
            data_out.send(word as u128).await?;
        }
    }
}

/// An exception waiting at write-back for proof that it is not a drain victim.
struct Held {
    code: ExcCode,
    epc: u32,
    record: RetireRecord,
}

struct WbPorts {
    regwrite: crate::kernel::Tx<RegWriteMsg>,
    fmem: crate::kernel::Output,
    commit: crate::kernel::Tx<Cp0Commit>,
}

impl WbPorts {
    async fn register(&self, data: u32, tag: RdTag, reset: bool) -> Result<(), SimError> {
        let (a, b) = futures::join!(
            self.regwrite.send(&RegWriteMsg { data, rd: tag.rd, reset, snap: tag.snap }),
            self.fmem.send(data as u128)
        );
        a.and(b)
    }

    async fn exception(&self, env: &Env, held: Held) -> Result<(), SimError> {
        self.commit
            .send(&Cp0Commit { op: Cp0Op::Exception, code: held.code as u8, pin: 0, reg: 0, value: held.epc })
            .await?;
        env.shared.lock().unwrap().probe.retired.push(held.record);
        Ok(())
    }
}

async fn write_back(ctx: Ctx, env: Env) -> Result<(), SimError> {
    let scheme = env.cfg.interrupt_scheme;
    let ctl_in = ctx.rx::<StageCtl>("WBCtrl")?;
    let res_in = ctx.input("MEMRes")?;
    let pc_in = ctx.input("BaseAddWB")?;
    let rd_in = ctx.rx::<RdTag>("MEMRd")?;
    let hi_in = ctx.input("WBHi")?;
    let cp0_data = ctx.input("CP0RData")?;
    let intreq = if scheme == InterruptScheme::Wb { Some(ctx.input("IntReq")?) } else { None };
    let ports = WbPorts { regwrite: ctx.tx("RegWrite")?, fmem: ctx.output("FMEMRes")?, commit: ctx.tx("CP0W1")? };
    let cp0_addr = ctx.tx::<Reg5>("CP0RAdd")?;
    let wbch = ctx.tx::<Request>("WBch")?;
    let store_go = if scheme == InterruptScheme::Wb { Some(ctx.output("StoreGo")?) } else { None };

    let mut colour = ColourVector::zero(COLOURS);
    let mut status = 0u32;
    let mut int_pending: Option<u8> = None;
    let mut held: Option<Held> = None;
    let mut hi = 0u32;
    let mut lo = 0u32;

    loop {
        let ctl = match &intreq {
            Some(ir) => {
                let (k, raw) = ctx.arbitrate(&[ctl_in.raw(), ir]).await?;
                if k == 1 {
                    int_pending = Some(Pin::unpack(raw).pin);
                    continue;
                }
                StageCtl::unpack(raw)
            }
            None => ctl_in.recv().await?,
        };
        let (r, p, t, h) = futures::join!(
            res_in.recv(),
            pc_in.recv(),
            async { if ctl.carries_rd() { rd_in.recv().await.map(Some) } else { Ok(None) } },
            async { if ctl.wbop == WbOp::HiLo { hi_in.recv().await.map(|v| v as u32) } else { Ok(0) } },
        );
        let (value, pc, tag, hi_value) = (r? as u32, p? as u32, t?, h?);
        let entry = {
            let mut sh = env.shared.lock().unwrap();
            sh.probe.popped += 1;
            sh.probe.in_flight.pop_front()
        };
        let entry = entry.ok_or_else(|| ctx.fault("write-back arrival without a probe entry"))?;
        let writer_tag = tag.filter(|t| t.rd != 0);

        if ctl.wbop == WbOp::Marker {
            held = None;
            let ie = (status & 1) as u32;
            wbch.send(&Request { colour: ctl.colour, src: Src::Int, kind: ReqKind::Drained, target: ie }).await?;
            continue;
        }
        if ctl.wbop == WbOp::Bubble {
            continue;
        }
        ctx.wait("commit").await;
        let held_store = store_go.as_ref().filter(|_| !ctl.squashed() && ctl.live_store());
        match scheme {
            InterruptScheme::Aau => {
                if ctl.colour.bit(INT) != colour.bit(INT) {
                    status = push_status(status);
                    colour = ctl.colour;
                }
            }
            InterruptScheme::Wb => {
                if ctl.colour.bit(INT) != colour.bit(INT) {
                    if let Some(t) = writer_tag {
                        ports.register(0, t, true).await?;
                    }
                    if let Some(go) = held_store {
                        go.send(0).await?;
                    }
                    continue;
                }
            }
        }
        if ctl.squashed() {
            if let Some(t) = writer_tag {
                ports.register(0, t, true).await?;
            }
            continue;
        }
        if let Some(h) = held.take() {
            ports.exception(&env, h).await?;
            status = push_status(status);
        }
        if let (Some(pin), true, false) = (int_pending, status & 1 != 0, ctl.slot) {
            int_pending = None;
            colour = ctl.colour.flipped(INT);
            ports.commit.send(&Cp0Commit { op: Cp0Op::Interrupt, code: 0, pin, reg: 0, value: pc }).await?;
            status = push_status(status);
            {
                let mut sh = env.shared.lock().unwrap();
                let after_retired = sh.probe.retired.len();
                sh.probe.interrupts.push(InterruptRecord { after_retired, pin, epc: pc });
            }
            wbch.send(&Request { colour, src: Src::Int, kind: ReqKind::Exception, target: pc }).await?;
            if let Some(t) = writer_tag {
                ports.register(0, t, true).await?;
            }
            if let Some(go) = held_store {
                go.send(0).await?;
            }
            continue;
        }
        if let Some(go) = held_store {
            go.send(1).await?;
        }
        let mut record = RetireRecord {
            addr: pc,
            mnemonic: entry.mnemonic,
            took_branch: entry.took || ctl.took,
            exception: None,
        };
        if entry.pc != pc {
            return Err(ctx.fault(format!("probe entry {:#x} does not match {pc:#x}", entry.pc)));
        }
        if ctl.wbop == WbOp::FetchFault {
            return Err(ctx.fault(format!("instruction fetch from unmapped address {pc:#010x}")));
        }
        if let Some(code) = ctl.exc {
            record.exception = Some(code);
            if let Some(t) = writer_tag {
                ports.register(0, t, true).await?;
            }
            let h = Held { code, epc: if ctl.slot { pc.wrapping_sub(4) } else { pc }, record };
            match scheme {
                InterruptScheme::Aau => held = Some(h),
                InterruptScheme::Wb => {
                    ports.exception(&env, h).await?;
                    status = push_status(status);
                }
            }
            continue;
        }
        if ctl.wbop == WbOp::Halt {
            let mut sh = env.shared.lock().unwrap();
            sh.probe.retired.push(record);
            sh.probe.halt_pc = Some(pc);
            drop(sh);
            ctx.halt();
            return Ok(());
        }
        let mut result = value;
        match ctl.wbop {
            WbOp::ReadCp0 => {
                cp0_addr.send(&Reg5 { reg: ctl.reg }).await?;
                result = cp0_data.recv().await? as u32;
            }
            WbOp::ReadHi => result = hi,
            WbOp::ReadLo => result = lo,
            WbOp::HiLo => (hi, lo) = (hi_value, value),
            WbOp::SetHi => hi = value,
            WbOp::SetLo => lo = value,
            WbOp::WriteCp0 => {
                ports.commit.send(&Cp0Commit { op: Cp0Op::WriteReg, code: 0, pin: 0, reg: ctl.reg, value }).await?;
                if ctl.reg as usize == CP0_STATUS {
                    status = value;
                }
            }
            WbOp::Rfe => {
                ports.commit.send(&Cp0Commit { op: Cp0Op::Rfe, code: 0, pin: 0, reg: 0, value: 0 }).await?;
                status = pop_status(status);
            }
            _ => {}
        }
        {
            let mut sh = env.shared.lock().unwrap();
            (sh.hi, sh.lo) = (hi, lo);
            if let Some(t) = writer_tag {
                sh.probe.effects.push(Effect::RegWrite { pc, rd: t.rd });
            }
            if let Some(values) = entry.operands {
                sh.probe.operands.push(OperandRecord { pc, reads: entry.reads, values });
            }
            sh.probe.retired.push(record);
        }
        if let Some(t) = writer_tag {
            ports.register(result, t, false).await?;
        }
    }
}

async fn cp0(ctx: Ctx, env: Env) -> Result<(), SimError> {
    let pin_in = ctx.input("IntPin")?;
    let commit_in = ctx.input("CP0W1")?;
    let note_in = ctx.input("CP0W2")?;
    let read_in = ctx.input("CP0Rd")?;
    let raise = ctx.tx::<Pin>("IntRaise")?;
    let data_out = ctx.output("CP0RData")?;
    let status_out = ctx.output("StatusData")?;
    let mut latched: BTreeSet<u8> = BTreeSet::new();
    let mut outstanding = false;
    // Return address of the last exception accepted by the AAU; not architectural.
    let mut _provisional_epc = 0u32;

    let take_interrupt = |env: &Env, pin: u8, epc: u32| {
        let mut sh = env.shared.lock().unwrap();
        sh.cp0[CP0_CAUSE] = cause_value(ExcCode::Int, Some(pin));
        sh.cp0[CP0_EPC] = epc;
        sh.cp0[CP0_STATUS] = push_status(sh.cp0[CP0_STATUS]);
    };

    loop {
        let (k, raw) = ctx.arbitrate(&[&pin_in, &commit_in, &note_in, &read_in]).await?;
        ctx.wait("update").await;
        match k {
            0 => {
                latched.insert(Pin::unpack(raw).pin);
            }
            1 => {
                let c = Cp0Commit::unpack(raw);
                match c.op {
                    Cp0Op::Exception => {
                        let code = ExcCode::from_code(c.code as u32)
                            .ok_or_else(|| ctx.fault(format!("bad exception code {}", c.code)))?;
                        let mut sh = env.shared.lock().unwrap();
                        sh.cp0[CP0_CAUSE] = cause_value(code, None);
                        sh.cp0[CP0_EPC] = c.value;
                        sh.cp0[CP0_STATUS] = push_status(sh.cp0[CP0_STATUS]);
                    }
                    Cp0Op::Interrupt => {
                        take_interrupt(&env, c.pin, c.value);
                        latched.remove(&c.pin);
                        outstanding = false;
                    }
                    Cp0Op::WriteReg => env.shared.lock().unwrap().cp0[c.reg as usize] = c.value,
                    Cp0Op::Rfe => {
                        let mut sh = env.shared.lock().unwrap();
                        sh.cp0[CP0_STATUS] = pop_status(sh.cp0[CP0_STATUS]);
                    }
                }
            }
            2 => {
                let n = Cp0Note::unpack(raw);
                match n.op {
                    NoteOp::ProvisionalEpc => _provisional_epc = n.epc,
                    NoteOp::Interrupt => {
                        take_interrupt(&env, n.pin, n.epc);
                        latched.remove(&n.pin);
                        outstanding = false;
                        let mut sh = env.shared.lock().unwrap();
                        let after_retired = sh.probe.retired.len();
                        sh.probe.interrupts.push(InterruptRecord { after_retired, pin: n.pin, epc: n.epc });
                    }
                    NoteOp::Cancel => outstanding = false,
                }
            }
            _ => {
                let r = Cp0Read::unpack(raw);
                let v = env.shared.lock().unwrap().cp0[r.reg as usize];
                if r.status {
                    status_out.send(v as u128).await?;
                } else {
                    data_out.send(v as u128).await?;
                }
            }
        }
        let enabled = env.shared.lock().unwrap().cp0[CP0_STATUS] & 1 != 0;
        if !outstanding && enabled {
            if let Some(&pin) = latched.first() {
                outstanding = true;
                raise.send(&Pin { pin }).await?;
            }
        }
    }
}
