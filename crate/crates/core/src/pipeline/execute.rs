//! Forwarding unit, operand multiplexers and the execution unit.

use super::wires::*;
use super::Env;
use crate::arch::ExcCode;
use crate::hazards::{colour_check_stage, ColourVector, FwCase, Fraq, Shape, Verdict};
use crate::isa::{AccType, ControlBundle, ExeOp, MemCtrl, WbCtrl};
use crate::kernel::{Ctx, ProcessSpec, SimError};

pub(super) fn processes(env: &Env) -> Vec<ProcessSpec> {
    let e = env.clone();
    let mut out = vec![ProcessSpec::new("FWunit", |ctx| forwarder(ctx))
        .inputs(["FRACtrl", "FWCtrl", "FEXRes", "FMEMRes"])
        .outputs(["FOp0", "FOp1"])];
    for k in 0..2 {
        let (read, fwd, op) = (format!("ReadData{k}"), format!("FOp{k}"), format!("Op{k}"));
        let (r, f, o) = (read.clone(), fwd.clone(), op.clone());
        out.push(
            ProcessSpec::new(format!("Mux{k}"), move |ctx| async move {
                let read = ctx.input(&r)?;
                let fwd = ctx.input(&f)?;
                let op = ctx.output(&o)?;
                loop {
                    let (_, v) = ctx.arbitrate(&[&read, &fwd]).await?;
                    ctx.wait("select").await;
                    op.send(v).await?;
                }
            })
            .inputs([read, fwd])
            .outputs([op]),
        );
    }
    out.push(
        ProcessSpec::new("EXEunit", move |ctx| exe_unit(ctx, e))
            .inputs(["EXCtrl", "BaseAddEX", "Op0", "Op1", "Offset32", "Sa", "CIDRd", "PIDRd"])
            .outputs(["EXch", "MEMCtrl", "EXRes", "MemD", "EXRd", "BaseAddMEM"]),
    );
    out
}

async fn forwarder(ctx: Ctx) -> Result<(), SimError> {
    let fra = ctx.rx::<FraCtrl>("FRACtrl")?;
    let fw = ctx.rx::<FwCtrl>("FWCtrl")?;
    let fex = ctx.input("FEXRes")?;
    let fmem = ctx.input("FMEMRes")?;
    let fop0 = ctx.output("FOp0")?;
    let fop1 = ctx.output("FOp1")?;
    let len = Shape::SAMIPS.in_flight();
    loop {
        let bits = Fraq::unpack(fra.recv().await?.bits as u128, len);
        let cases = fw.recv().await?;
        let (ex, mem) = futures::join!(
            async { if bits[0] { fex.recv().await.map(|v| Some(v as u32)) } else { Ok(None) } },
            async { if bits[1] { fmem.recv().await.map(|v| Some(v as u32)) } else { Ok(None) } },
        );
        let (ex, mem) = (ex?, mem?);
        ctx.wait("route").await;
        let route = |code: u8| -> Result<Option<u32>, SimError> {
            match FwCase::from_wire(code) {
                FwCase::Non => Ok(None),
                FwCase::EXER => ex.map(Some).ok_or_else(|| ctx.fault("EXER without an EX result in flight")),
                FwCase::MEMR => mem.map(Some).ok_or_else(|| ctx.fault("MEMR without a MEM result in flight")),
                c => Err(ctx.fault(format!("forwarding case {c} on FWCtrl"))),
            }
        };
        let (v0, v1) = (route(cases.fw0)?, route(cases.fw1)?);
        let (a, b) = futures::join!(
            async { match v0 { Some(v) => fop0.send(v as u128).await, None => Ok(()) } },
            async { match v1 { Some(v) => fop1.send(v as u128).await, None => Ok(()) } },
        );
        a.and(b)?;
    }
}

/// Outcome of the arithmetic for one instruction.
#[derive(Default)]
struct Computed {
    result: u32,
    memd: u32,
    target: Option<u32>,
    overflow: bool,
}

fn latency_class(op: ExeOp, imm_shift: bool) -> &'static str {
    use ExeOp::*;
    match op {
        Nop | Exc | Excs | Cor | Mfhi | Mflo => "nop",
        Lui => "lui",
        Sll if imm_shift => "lui",
        Sll | Srl | Sra | Sllv | Srlv | Srav => "shift",
        Mult | Multu => "mul",
        Div | Divu => "div",
        Beq | Bne | Bgtz | Blez | Bltz | Bltzal | Bgez | Bgezal | Jr | Jalr | Jal => "branch",
        _ => "alu",
    }
}

fn compute(op: ExeOp, bundle: ControlBundle, a: u32, b: u32, imm: u32, sa: u8, pc: u32, link: u32) -> Computed {
    use ExeOp::*;
    let mut c = Computed::default();
    let imm_alu = bundle.mem == MemCtrl::IMM;
    let b2 = if imm_alu { imm } else { b };
    let branch_to = pc.wrapping_add(4).wrapping_add(imm << 2);
    let taken = |cond: bool| cond.then_some(branch_to);
    match op {
        Add => match (a as i32).checked_add(b2 as i32) {
            Some(v) => c.result = v as u32,
            None => c.overflow = true,
        },
        Sub => match (a as i32).checked_sub(b2 as i32) {
            Some(v) => c.result = v as u32,
            None => c.overflow = true,
        },
        Addu => c.result = a.wrapping_add(b2),
        Subu => c.result = a.wrapping_sub(b2),
        And => c.result = a & b2,
        Or => c.result = a | b2,
        Xor => c.result = a ^ b2,
        Nor => c.result = !(a | b2),
        Slt => c.result = ((a as i32) < (b2 as i32)) as u32,
        Sltu => c.result = (a < b2) as u32,
        Lui => c.result = imm << 16,
        Sll if imm_alu => c.result = imm << 16,
        Sll => c.result = b << sa,
        Srl => c.result = b >> sa,
        Sra => c.result = ((b as i32) >> sa) as u32,
        Sllv => c.result = b << (a & 31),
        Srlv => c.result = b >> (a & 31),
        Srav => c.result = ((b as i32) >> (a & 31)) as u32,
        Ma => {
            c.result = a.wrapping_add(imm);
            c.memd = b;
        }
        Mult => {
            let p = (a as i32 as i64) * (b as i32 as i64);
            (c.memd, c.result) = ((p >> 32) as u32, p as u32);
        }
        Multu => {
            let p = (a as u64) * (b as u64);
            (c.memd, c.result) = ((p >> 32) as u32, p as u32);
        }
        Div => {
            (c.memd, c.result) = if b == 0 {
                (a, u32::MAX)
            } else {
                let (x, y) = (a as i32, b as i32);
                (x.wrapping_rem(y) as u32, x.wrapping_div(y) as u32)
            };
        }
        Divu => (c.memd, c.result) = if b == 0 { (a, u32::MAX) } else { (a % b, a / b) },
        Mthi | Mtlo => c.result = a,
        Beq => c.target = taken(a == b),
        Bne => c.target = taken(a != b),
        Blez => c.target = taken(a as i32 <= 0),
        Bgtz => c.target = taken(a as i32 > 0),
        Bltz => c.target = taken((a as i32) < 0),
        Bgez => c.target = taken(a as i32 >= 0),
        Bltzal => {
            c.result = link;
            c.target = taken((a as i32) < 0);
        }
        Bgezal => {
            c.result = link;
            c.target = taken(a as i32 >= 0);
        }
        Jr => c.target = Some(a),
        Jalr => {
            c.result = link;
            c.target = Some(a);
        }
        Jal => c.result = link,
        Nop | Exc | Excs | Cor | Mfhi | Mflo => {}
    }
    c
}

async fn exe_unit(ctx: Ctx, env: Env) -> Result<(), SimError> {
    let ctrl_in = ctx.rx::<ExCtrl>("EXCtrl")?;
    let base_in = ctx.rx::<SlotAddr>("BaseAddEX")?;
    let op0 = ctx.input("Op0")?;
    let op1 = ctx.input("Op1")?;
    let off_in = ctx.input("Offset32")?;
    let sa_in = ctx.rx::<Reg5>("Sa")?;
    let cid_in = ctx.rx::<Reg5>("CIDRd")?;
    let pid_in = ctx.rx::<PidRd>("PIDRd")?;
    let exch = ctx.tx::<Request>("EXch")?;
    let ctl_out = ctx.tx::<StageCtl>("MEMCtrl")?;
    let res_out = ctx.output("EXRes")?;
    let memd_out = ctx.output("MemD")?;
    let rd_out = ctx.tx::<RdTag>("EXRd")?;
    let pc_out = ctx.output("BaseAddMEM")?;
    let mode = env.cfg.exe_mode;
    let slots = env.cfg.delay_slot;
    let mut colour = ColourVector::zero(COLOURS);
    // Taken transfer waiting for its delay slot.
    let mut slot_target: Option<u32> = None;
    let mut seq = 0usize;

    loop {
        let (c, b) = futures::join!(ctrl_in.recv(), base_in.recv());
        seq += 1;
        let (ctrl, base) = (c?, b?);
        let pc = base.addr.wrapping_sub(4);
        let mut out = StageCtl {
            colour: ctrl.colour,
            mem: MemCtrl::NONE.wire(),
            wb: WbCtrl::CPU_NONE.wire(),
            wbop: ctrl.wbop,
            exc: ctrl.exc,
            slot: base.slot,
            took: false,
            reg: 0,
        };
        let mut rd = RdTag { rd: 0, snap: 0 };
        let mut result = 0u32;
        let mut memd = 0u32;
        if ctrl.wbop != WbOp::Marker {
            let (a, b, o, s, cid, pid) = futures::join!(
                op0.recv(),
                op1.recv(),
                async { if ctrl.imm { off_in.recv().await.map(|v| v as u32) } else { Ok(0) } },
                async { if ctrl.sa { sa_in.recv().await.map(|r| r.reg) } else { Ok(0) } },
                async { if ctrl.cp0 { cid_in.recv().await.map(|r| r.reg) } else { Ok(0) } },
                async { if ctrl.dest != 0 { pid_in.recv().await.map(Some) } else { Ok(None) } },
            );
            let (a, b, imm, sa, cid, pid) = (a? as u32, b? as u32, o?, s?, cid?, pid?);
            let bundle = ControlBundle::unpack(ctrl.bundle, mode)
                .ok_or_else(|| ctx.fault(format!("undecodable control bundle {:#x}", ctrl.bundle)))?;
            out.mem = bundle.mem.wire();
            out.wb = bundle.wb.wire();
            out.reg = cid;
            if let Some(p) = pid {
                rd = RdTag { rd: p.wno, snap: p.snap };
            }
            if ctrl.wbop != WbOp::Bubble {
                ctx.wait("colour").await;
                let (verdict, next) =
                    colour_check_stage(EX, colour, ctrl.colour).map_err(|e| ctx.fault(e.to_string()))?;
                colour = next;
                match verdict {
                    Verdict::Discard => out.squash(),
                    Verdict::ExecuteAdopt | Verdict::Execute => {
                        {
                            let mut sh = env.shared.lock().unwrap();
                            let k = seq - 1 - sh.probe.popped;
                            if let Some(e) = sh.probe.in_flight.get_mut(k) {
                                e.operands = Some((a, b));
                            }
                        }
                        if verdict == Verdict::ExecuteAdopt {
                            slot_target = None;
                        }
                        let ex_slot = slot_target.take();
                        out.slot = base.slot || ex_slot.is_some();
                        let epc = if out.slot { pc.wrapping_sub(4) } else { pc };
                        let imm_shift = bundle.exe == ExeOp::Sll && bundle.mem == MemCtrl::IMM;
                        ctx.wait(latency_class(bundle.exe, imm_shift)).await;
                        let link = slots.link_address(pc);
                        let c = compute(bundle.exe, bundle, a, b, imm, sa, pc, link);
                        result = c.result;
                        memd = if bundle.mem.acc_type == AccType::Write || bundle.mem.acc_type == AccType::Read {
                            b
                        } else {
                            c.memd
                        };
                        let mut request: Option<Request> = None;
                        if out.exc.is_some() {
                            if ex_slot.is_some() {
                                colour = colour.flipped(EX);
                                request =
                                    Some(Request { colour, src: Src::Ex, kind: ReqKind::Exception, target: epc });
                            }
                        } else if c.overflow {
                            out.exc = Some(ExcCode::Ov);
                            if out.carries_rd() {
                                out.wb = WbCtrl::RESET.wire();
                            }
                            colour = colour.flipped(EX);
                            request = Some(Request { colour, src: Src::Ex, kind: ReqKind::Exception, target: epc });
                        } else {
                            if let Some(t) = ex_slot {
                                colour = colour.flipped(EX);
                                request = Some(Request { colour, src: Src::Ex, kind: ReqKind::Branch, target: t });
                            }
                            if let Some(t) = c.target {
                                out.took = true;
                                match slots {
                                    crate::arch::DelaySlot::On => slot_target = Some(t),
                                    crate::arch::DelaySlot::Off => {
                                        colour = colour.flipped(EX);
                                        request =
                                            Some(Request { colour, src: Src::Ex, kind: ReqKind::Branch, target: t });
                                    }
                                }
                            }
                        }
                        if let Some(r) = request {
                            exch.send(&r).await?;
                        }
                    }
                }
            }
        }
        let (a, b, c, d, e) = futures::join!(
            ctl_out.send(&out),
            res_out.send(result as u128),
            pc_out.send(pc as u128),
            async { if out.carries_memd() { memd_out.send(memd as u128).await } else { Ok(()) } },
            async { if out.carries_rd() { rd_out.send(&rd).await } else { Ok(()) } },
        );
        a.and(b).and(c).and(d).and(e)?;
    }
}
