//! Instruction fetch: PC, ADD4, IMem, the request arbiters and the AAU.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::wires::*;
use super::{Env, InterruptScheme};
use crate::arch::{DelaySlot, EXCEPTION_VECTOR};
use super::probe::Backpoint;
use crate::hazards::{aau_check, interrupt_backpoint, AauAction, AauRequest, ColourVector, HazardKind, HazardRequest};
use crate::kernel::{ProcessSpec, SimError, Wire};

pub(super) fn processes(env: &Env, sites: Arc<BTreeSet<u32>>) -> Vec<ProcessSpec> {
    let entry = env.image.entry;
    let image = env.image.clone();
    let scheme = env.cfg.interrupt_scheme;
    let slots = env.cfg.delay_slot;
    let env_aau = env.clone();
    let mut aau_inputs = vec!["NTarget1", "NTarget2", "WBch"];
    if scheme == InterruptScheme::Aau {
        aau_inputs.push("IntReq");
    }
    vec![
        ProcessSpec::new("PC", move |ctx| async move {
            let npc = ctx.rx::<Coloured>("NPC")?;
            let value = ctx.tx::<Coloured>("PCvalue")?;
            let fetch = ctx.tx::<Coloured>("CInsAdd")?;
            let mut cur = Coloured { colour: ColourVector::zero(COLOURS), addr: entry };
            loop {
                ctx.wait("issue").await;
                fetch.send(&cur).await?;
                value.send(&cur).await?;
                cur = npc.recv().await?;
            }
        })
        .inputs(["NPC"])
        .outputs(["PCvalue", "CInsAdd"]),
        ProcessSpec::new("ADD4", move |ctx| async move {
            let value = ctx.rx::<Coloured>("PCvalue")?;
            let plus4 = ctx.tx::<Coloured>("PCplus4")?;
            let base = ctx.output("BaseAddID")?;
            loop {
                let pc = value.recv().await?;
                ctx.wait("add").await;
                let next = pc.addr.wrapping_add(4);
                let (a, b) = futures::join!(
                    plus4.send(&Coloured { colour: pc.colour, addr: next }),
                    base.send(next as u128)
                );
                a?;
                b?;
            }
        })
        .inputs(["PCvalue"])
        .outputs(["PCplus4", "BaseAddID"]),
        ProcessSpec::new("IMem", move |ctx| async move {
            let addr = ctx.rx::<Coloured>("CInsAdd")?;
            let out = ctx.tx::<Fetched>("CIns")?;
            loop {
                let a = addr.recv().await?;
                ctx.wait("read").await;
                let mapped = a.addr % 4 == 0 && image.contains(a.addr);
                let word = if mapped { image.word(a.addr) } else { 0 };
                out.send(&Fetched { colour: a.colour, unmapped: !mapped, word }).await?;
            }
        })
        .inputs(["CInsAdd"])
        .outputs(["CIns"]),
        ProcessSpec::new("Arb1", move |ctx| async move {
            let pc4 = ctx.input("PCplus4")?;
            let idch = ctx.input("IDch")?;
            let out = ctx.tx::<Request>("NTarget1")?;
            loop {
                let (k, raw) = ctx.arbitrate(&[&pc4, &idch]).await?;
                let req = if k == 0 {
                    let c = Coloured::unpack(raw);
                    Request { colour: c.colour, src: Src::Pc, kind: ReqKind::Branch, target: c.addr }
                } else {
                    Request::unpack(raw)
                };
                ctx.wait("grant").await;
                out.send(&req).await?;
            }
        })
        .inputs(["PCplus4", "IDch"])
        .outputs(["NTarget1"]),
        ProcessSpec::new("Arb2", move |ctx| async move {
            let exch = ctx.input("EXch")?;
            let memch = ctx.input("MEMch")?;
            let out = ctx.output("NTarget2")?;
            loop {
                let (_, raw) = ctx.arbitrate(&[&exch, &memch]).await?;
                ctx.wait("grant").await;
                out.send(raw).await?;
            }
        })
        .inputs(["EXch", "MEMch"])
        .outputs(["NTarget2"]),
        ProcessSpec::new("AAU", move |ctx| aau(ctx, env_aau, sites, scheme, slots))
            .inputs(aau_inputs)
            .outputs(["NPC", "CP0W2"]),
    ]
}

struct Drain {
    pin: u8,
    marker_sent: bool,
}

/// Address arbitration unit. Exactly one fetch token circulates through
/// PC, ADD4, Arb1 and the AAU; an accepted redirect is applied to the
/// token's next visit rather than creating a second token.
async fn aau(
    ctx: crate::kernel::Ctx,
    env: Env,
    sites: Arc<BTreeSet<u32>>,
    scheme: InterruptScheme,
    slots: DelaySlot,
) -> Result<(), SimError> {
    let t1 = ctx.input("NTarget1")?;
    let t2 = ctx.input("NTarget2")?;
    let wbch = ctx.input("WBch")?;
    let intreq = if scheme == InterruptScheme::Aau { Some(ctx.input("IntReq")?) } else { None };
    let npc = ctx.tx::<Coloured>("NPC")?;
    let note = ctx.tx::<Cp0Note>("CP0W2")?;

    let mut colour = ColourVector::zero(COLOURS);
    let mut pending: Option<HazardRequest> = None;
    let mut last_issued = 0u32;
    let mut parked = false;
    let mut token_held = false;
    let mut drain: Option<Drain> = None;

    let redirect_of = |h: &HazardRequest| match h.kind {
        HazardKind::Branch => h.target,
        HazardKind::Exception | HazardKind::Interrupt => EXCEPTION_VECTOR,
    };

    loop {
        let (k, raw) = match &intreq {
            Some(ir) => ctx.arbitrate(&[&t1, &t2, &wbch, ir]).await?,
            None => ctx.arbitrate(&[&t1, &t2, &wbch]).await?,
        };
        ctx.wait("check").await;
        if k == 3 {
            let pin = Pin::unpack(raw).pin;
            if !parked {
                drain = Some(Drain { pin, marker_sent: false });
            }
            continue;
        }
        let req = Request::unpack(raw);
        let mut issue: Option<u32> = None;
        match (req.src, req.kind) {
            (Src::Pc, _) => {
                if parked {
                    token_held = true;
                } else if let Some(d) = drain.as_mut() {
                    if !d.marker_sent {
                        if pending.is_none() && slots == DelaySlot::On && sites.contains(&last_issued) {
                            issue = Some(last_issued.wrapping_add(4));
                        } else {
                            d.marker_sent = true;
                            npc.send(&Coloured { colour, addr: MARKER_PC }).await?;
                        }
                    }
                } else if let Some(h) = pending.take() {
                    issue = Some(redirect_of(&h));
                } else if req.colour == colour {
                    issue = Some(req.target);
                } else {
                    return Err(ctx.fault(format!("stale fetch token {:?} with no redirect", req.colour)));
                }
            }
            (_, ReqKind::Drained) => {
                let Some(d) = drain.take() else {
                    return Err(ctx.fault("drain report without a drain"));
                };
                let epc = interrupt_backpoint(last_issued, pending.as_ref());
                env.shared.lock().unwrap().probe.backpoints.push(Backpoint {
                    last_issued,
                    pending: pending.map(|h| (h.kind, h.target)),
                    epc,
                    taken: req.target & 1 == 1,
                });
                pending = None;
                if req.target & 1 == 1 {
                    colour = colour.flipped(INT);
                    note.send(&Cp0Note { op: NoteOp::Interrupt, pin: d.pin, epc }).await?;
                    issue = Some(EXCEPTION_VECTOR);
                } else {
                    note.send(&Cp0Note { op: NoteOp::Cancel, pin: d.pin, epc }).await?;
                    issue = Some(epc);
                }
            }
            (src, kind) => {
                let stage = match src {
                    Src::Id => ID,
                    Src::Ex => EX,
                    Src::Mem => MEM,
                    _ => INT,
                };
                let hk = match (src, kind) {
                    (Src::Int, _) => HazardKind::Interrupt,
                    (_, ReqKind::Exception) => HazardKind::Exception,
                    _ => HazardKind::Branch,
                };
                let h = HazardRequest { target: req.target, colour: req.colour, stage, kind: hk };
                let decision = aau_check(colour, &AauRequest::Hazard(h));
                if !decision.accept {
                    continue;
                }
                if decision.colour == colour {
                    return Err(ctx.fault(format!("accepted {kind:?} from {src:?} left colour {colour:?}")));
                }
                colour = decision.colour;
                if kind == ReqKind::Halt {
                    parked = true;
                    pending = None;
                    continue;
                }
                parked = false;
                if let Some(AauAction::IssueExceptionVector { epc }) = decision.action {
                    note.send(&Cp0Note { op: NoteOp::ProvisionalEpc, pin: 0, epc }).await?;
                }
                pending = Some(h);
                if token_held && drain.is_none() {
                    token_held = false;
                    issue = pending.take().map(|h| redirect_of(&h));
                }
            }
        }
        if let Some(addr) = issue {
            last_issued = addr;
            npc.send(&Coloured { colour, addr }).await?;
        }
    }
}
