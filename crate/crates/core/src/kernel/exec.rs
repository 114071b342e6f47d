use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::future::Future;
use std::marker::PhantomData;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::task::{Context, Poll, Waker};

use futures::task::{waker, ArcWake};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    mask, ChannelEvent, ChannelId, ChannelSpec, Direction, EventLog, IdKind, Phase, SimError,
    SimTime, Wire,
};

pub type ProcFuture = Pin<Box<dyn Future<Output = Result<(), SimError>> + Send>>;
pub type Behavior = Box<dyn FnOnce(Ctx) -> ProcFuture + Send>;

/// A process: its declared ports, its latency table and its behaviour.
pub struct ProcessSpec {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub delays: BTreeMap<String, SimTime>,
    pub behavior: Behavior,
}

impl ProcessSpec {
    pub fn new<F, Fut>(name: impl Into<String>, behavior: F) -> Self
    where
        F: FnOnce(Ctx) -> Fut + Send + 'static,
        Fut: Future<Output = Result<(), SimError>> + Send + 'static,
    {
        ProcessSpec {
            name: name.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            delays: BTreeMap::new(),
            behavior: Box::new(move |ctx| Box::pin(behavior(ctx))),
        }
    }

    pub fn inputs<I: IntoIterator<Item = S>, S: Into<String>>(mut self, names: I) -> Self {
        self.inputs.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn outputs<I: IntoIterator<Item = S>, S: Into<String>>(mut self, names: I) -> Self {
        self.outputs.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn delay(mut self, action: impl Into<String>, t: SimTime) -> Self {
        self.delays.insert(action.into(), t);
        self
    }

    pub fn delays(mut self, table: &BTreeMap<String, SimTime>) -> Self {
        self.delays.extend(table.iter().map(|(k, v)| (k.clone(), *v)));
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ArbiterMode {
    #[default]
    EarliestRequest,
    SeededRandomTie,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ArbiterPolicy {
    pub mode: ArbiterMode,
    pub seed: u64,
}

impl ArbiterPolicy {
    pub fn seeded(seed: u64) -> Self {
        ArbiterPolicy { mode: ArbiterMode::SeededRandomTie, seed }
    }
}

/// Handshake latencies applied by the kernel to every transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HandshakeTiming {
    /// From the later of (request, receiver ready) to AckUp.
    pub ack: SimTime,
    /// Each return-to-zero phase.
    pub rtz: SimTime,
}

impl Default for HandshakeTiming {
    fn default() -> Self {
        HandshakeTiming { ack: SimTime(2), rtz: SimTime(1) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunLimits {
    pub max_time: SimTime,
    pub max_events: u64,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits { max_time: SimTime(u64::MAX), max_events: u64::MAX }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    /// No events left; `blocked` lists channels with a half-open handshake.
    Quiescent { blocked: Vec<String> },
    Halted,
    MaxTime,
    MaxEvents,
}

// ---------------------------------------------------------------- state

struct Pending {
    time: SimTime,
    payload: u128,
    waker: Waker,
}

struct Chan {
    spec: ChannelSpec,
    consumer_ack: SimTime,
    send: Option<Pending>,
    in_flight: bool,
    recv_waiting: bool,
    req_logged: bool,
    recv_waker: Option<Waker>,
    arb_waker: Option<Waker>,
    delivered: Option<u128>,
    completed: u64,
}

enum Action {
    Phase(usize, Phase),
    Wake(Arc<AtomicBool>, Waker),
}

struct Scheduled {
    key: (SimTime, u8, u32, Phase, u64),
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

const CLASS_CHANNEL: u8 = 0;
const CLASS_TIMER: u8 = 1;
const CLASS_DECIDE: u8 = 2;

struct State {
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    chans: Vec<Chan>,
    log: Vec<ChannelEvent>,
    timing: HandshakeTiming,
    policy: ArbiterPolicy,
    rngs: BTreeMap<usize, ChaCha8Rng>,
    halted: bool,
}

impl State {
    fn schedule(&mut self, time: SimTime, class: u8, chan: u32, phase: Phase, action: Action) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { key: (time, class, chan, phase, self.seq), action }));
    }

    fn log(&mut self, c: usize, phase: Phase, payload: Option<u128>) {
        self.log.push(ChannelEvent { time: self.now, channel: ChannelId(c as u32), phase, payload });
    }

    fn start_transfer(&mut self, c: usize) {
        let ch = &mut self.chans[c];
        ch.in_flight = true;
        ch.recv_waiting = false;
        let at = self.now + ch.consumer_ack;
        self.schedule(at, CLASS_CHANNEL, c as u32, Phase::AckUp, Action::Phase(c, Phase::AckUp));
    }

    fn log_pull_request(&mut self, c: usize) {
        let ch = &mut self.chans[c];
        if ch.spec.direction == Direction::Pull && !ch.req_logged {
            ch.req_logged = true;
            self.log(c, Phase::ReqUp, None);
        }
    }

    fn fire(&mut self, action: Action) {
        match action {
            Action::Wake(flag, w) => {
                flag.store(true, Ordering::SeqCst);
                w.wake();
            }
            Action::Phase(c, Phase::AckUp) => {
                let payload = self.chans[c].send.as_ref().map(|p| p.payload).unwrap_or(0);
                let on_ack = (self.chans[c].spec.direction == Direction::Pull).then_some(payload);
                self.log(c, Phase::AckUp, on_ack);
                let ch = &mut self.chans[c];
                ch.delivered = Some(payload);
                if let Some(w) = ch.recv_waker.take() {
                    w.wake();
                }
                let at = self.now + self.timing.rtz;
                self.schedule(at, CLASS_CHANNEL, c as u32, Phase::ReqDown, Action::Phase(c, Phase::ReqDown));
            }
            Action::Phase(c, Phase::ReqDown) => {
                self.log(c, Phase::ReqDown, None);
                let at = self.now + self.timing.rtz;
                self.schedule(at, CLASS_CHANNEL, c as u32, Phase::AckDown, Action::Phase(c, Phase::AckDown));
            }
            Action::Phase(c, Phase::AckDown) => {
                self.log(c, Phase::AckDown, None);
                let ch = &mut self.chans[c];
                ch.in_flight = false;
                ch.req_logged = false;
                ch.completed += 1;
                if let Some(p) = ch.send.take() {
                    p.waker.wake();
                }
                if ch.recv_waiting {
                    self.log_pull_request(c);
                }
            }
            Action::Phase(_, Phase::ReqUp) => unreachable!("requests are logged by the sender"),
        }
    }
}

struct ReadyQueue {
    queue: VecDeque<usize>,
    queued: Vec<bool>,
}

struct TaskWaker {
    id: usize,
    ready: Arc<Mutex<ReadyQueue>>,
}

impl ArcWake for TaskWaker {
    fn wake_by_ref(arc_self: &Arc<Self>) {
        let mut r = arc_self.ready.lock().unwrap();
        if !r.queued[arc_self.id] {
            r.queued[arc_self.id] = true;
            r.queue.push_back(arc_self.id);
        }
    }
}

struct ProcInfo {
    name: String,
    inputs: BTreeMap<String, usize>,
    outputs: BTreeMap<String, usize>,
    delays: BTreeMap<String, SimTime>,
}

// ---------------------------------------------------------------- ctx

/// Handle given to each process body.
#[derive(Clone)]
pub struct Ctx {
    state: Arc<Mutex<State>>,
    info: Arc<ProcInfo>,
}

impl Ctx {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap()
    }

    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn now(&self) -> SimTime {
        self.lock().now
    }

    pub fn delay(&self, action: &str) -> SimTime {
        self.info.delays.get(action).copied().unwrap_or(SimTime::ZERO)
    }

    pub fn sleep(&self, d: SimTime) -> Sleep {
        Sleep { ctx: self.clone(), d, flag: None }
    }

    /// Sleeps for the named entry of this process's delay table.
    pub fn wait(&self, action: &str) -> Sleep {
        self.sleep(self.delay(action))
    }

    pub fn halt(&self) {
        self.lock().halted = true;
    }

    pub fn fault(&self, message: impl Into<String>) -> SimError {
        SimError::Fault { process: self.info.name.clone(), message: message.into() }
    }

    fn port(&self, name: &str, map: &BTreeMap<String, usize>) -> Result<(usize, u32), SimError> {
        let c = *map.get(name).ok_or_else(|| SimError::UndeclaredPort {
            process: self.info.name.clone(),
            channel: name.to_string(),
        })?;
        let width = self.lock().chans[c].spec.width;
        Ok((c, width))
    }

    pub fn input(&self, name: &str) -> Result<Input, SimError> {
        let (chan, width) = self.port(name, &self.info.inputs)?;
        Ok(Input { ctx: self.clone(), chan, width })
    }

    pub fn output(&self, name: &str) -> Result<Output, SimError> {
        let (chan, width) = self.port(name, &self.info.outputs)?;
        Ok(Output { ctx: self.clone(), chan, width })
    }

    pub fn rx<T: Wire>(&self, name: &str) -> Result<Rx<T>, SimError> {
        let inner = self.input(name)?;
        check_width(name, inner.width, T::WIDTH)?;
        Ok(Rx { inner, _t: PhantomData })
    }

    pub fn tx<T: Wire>(&self, name: &str) -> Result<Tx<T>, SimError> {
        let inner = self.output(name)?;
        check_width(name, inner.width, T::WIDTH)?;
        Ok(Tx { inner, _t: PhantomData })
    }

    /// Waits for requests on 2..=4 inputs and completes the earliest.
    pub fn arbitrate<'a>(&self, inputs: &[&'a Input]) -> Arbitrate {
        Arbitrate {
            ctx: self.clone(),
            chans: inputs.iter().map(|i| i.chan).collect(),
            stage: ArbStage::Start,
        }
    }
}

fn check_width(name: &str, width: u32, requested: u32) -> Result<(), SimError> {
    if width == requested {
        Ok(())
    } else {
        Err(SimError::PortWidth { channel: name.to_string(), width, requested })
    }
}

pub struct Sleep {
    ctx: Ctx,
    d: SimTime,
    flag: Option<Arc<AtomicBool>>,
}

impl Future for Sleep {
    type Output = ();
    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        match &self.flag {
            Some(f) if f.load(Ordering::SeqCst) => Poll::Ready(()),
            Some(_) => Poll::Pending,
            None if self.d == SimTime::ZERO => Poll::Ready(()),
            None => {
                let flag = Arc::new(AtomicBool::new(false));
                let mut st = self.ctx.lock();
                let at = st.now + self.d;
                st.schedule(at, CLASS_TIMER, 0, Phase::ReqUp, Action::Wake(flag.clone(), cx.waker().clone()));
                drop(st);
                self.flag = Some(flag);
                Poll::Pending
            }
        }
    }
}

// ---------------------------------------------------------------- ports

pub struct Input {
    ctx: Ctx,
    chan: usize,
    width: u32,
}

impl Input {
    pub fn recv(&self) -> Recv<'_> {
        Recv { port: self, started: false }
    }

    /// True when a sender is waiting and no transfer is in progress.
    pub fn pending(&self) -> bool {
        let st = self.ctx.lock();
        let ch = &st.chans[self.chan];
        ch.send.is_some() && !ch.in_flight
    }

    pub fn peek(&self) -> Option<u128> {
        let st = self.ctx.lock();
        let ch = &st.chans[self.chan];
        if ch.in_flight {
            None
        } else {
            ch.send.as_ref().map(|p| p.payload)
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
}

pub struct Recv<'a> {
    port: &'a Input,
    started: bool,
}

impl Future for Recv<'_> {
    type Output = Result<u128, SimError>;
    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        let c = self.port.chan;
        let mut st = self.port.ctx.lock();
        if !self.started {
            let ch = &mut st.chans[c];
            if ch.recv_waiting || ch.recv_waker.is_some() || ch.delivered.is_some() {
                return Poll::Ready(Err(SimError::ProtocolViolation(ch.spec.id.clone())));
            }
            ch.recv_waker = Some(cx.waker().clone());
            let ready = ch.send.is_some() && !ch.in_flight;
            let busy = ch.in_flight;
            ch.recv_waiting = true;
            if !busy {
                st.log_pull_request(c);
            }
            if ready {
                st.start_transfer(c);
            }
            drop(st);
            self.started = true;
            return Poll::Pending;
        }
        let ch = &mut st.chans[c];
        match ch.delivered.take() {
            Some(v) => Poll::Ready(Ok(v)),
            None => {
                ch.recv_waker = Some(cx.waker().clone());
                Poll::Pending
            }
        }
    }
}

pub struct Output {
    ctx: Ctx,
    chan: usize,
    width: u32,
}

impl Output {
    pub fn send(&self, payload: u128) -> SendFut<'_> {
        SendFut { port: self, payload, ticket: None }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
}

pub struct SendFut<'a> {
    port: &'a Output,
    payload: u128,
    ticket: Option<u64>,
}

impl Future for SendFut<'_> {
    type Output = Result<(), SimError>;
    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        let c = self.port.chan;
        let payload = self.payload;
        let mut st = self.port.ctx.lock();
        match self.ticket {
            None => {
                let ch = &mut st.chans[c];
                if payload & !mask(ch.spec.width) != 0 {
                    return Poll::Ready(Err(SimError::WidthMismatch {
                        channel: ch.spec.id.clone(),
                        width: ch.spec.width,
                        payload,
                    }));
                }
                if ch.send.is_some() || ch.in_flight {
                    return Poll::Ready(Err(SimError::ProtocolViolation(ch.spec.id.clone())));
                }
                let now = st.now;
                let ch = &mut st.chans[c];
                ch.send = Some(Pending { time: now, payload, waker: cx.waker().clone() });
                let ticket = ch.completed + 1;
                let push = ch.spec.direction == Direction::Push;
                let receiver = ch.recv_waiting;
                if let Some(w) = ch.arb_waker.take() {
                    w.wake();
                }
                if push {
                    st.log(c, Phase::ReqUp, Some(payload));
                }
                if receiver {
                    st.start_transfer(c);
                }
                drop(st);
                self.ticket = Some(ticket);
                Poll::Pending
            }
            Some(t) => {
                let ch = &mut st.chans[c];
                if ch.completed >= t {
                    Poll::Ready(Ok(()))
                } else {
                    if let Some(p) = ch.send.as_mut() {
                        p.waker = cx.waker().clone();
                    }
                    Poll::Pending
                }
            }
        }
    }
}

pub struct Rx<T> {
    inner: Input,
    _t: PhantomData<fn() -> T>,
}

impl<T: Wire> Rx<T> {
    pub async fn recv(&self) -> Result<T, SimError> {
        self.inner.recv().await.map(T::unpack)
    }

    pub fn pending(&self) -> bool {
        self.inner.pending()
    }

    pub fn peek(&self) -> Option<T> {
        self.inner.peek().map(T::unpack)
    }

    pub fn raw(&self) -> &Input {
        &self.inner
    }
}

pub struct Tx<T> {
    inner: Output,
    _t: PhantomData<fn(T)>,
}

impl<T: Wire> Tx<T> {
    /// Packs `value` immediately; the future borrows only the port.
    pub fn send(&self, value: &T) -> SendFut<'_> {
        self.inner.send(value.pack())
    }

    pub fn raw(&self) -> &Output {
        &self.inner
    }
}

// ---------------------------------------------------------------- arbiter

enum ArbStage {
    Start,
    Decide(Arc<AtomicBool>),
    Transfer(usize),
}

pub struct Arbitrate {
    ctx: Ctx,
    chans: Vec<usize>,
    stage: ArbStage,
}

impl Future for Arbitrate {
    type Output = Result<(usize, u128), SimError>;
    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        if !(2..=4).contains(&self.chans.len()) {
            return Poll::Ready(Err(SimError::ArbiterArity(self.chans.len())));
        }
        let this = &mut *self;
        let mut st = this.ctx.lock();
        loop {
            match &this.stage {
                ArbStage::Start => {
                    let any = this.chans.iter().any(|&c| st.chans[c].send.is_some() && !st.chans[c].in_flight);
                    if !any {
                        for &c in &this.chans {
                            st.chans[c].arb_waker = Some(cx.waker().clone());
                        }
                        return Poll::Pending;
                    }
                    for &c in &this.chans {
                        st.chans[c].arb_waker = None;
                    }
                    let flag = Arc::new(AtomicBool::new(false));
                    let now = st.now;
                    st.schedule(now, CLASS_DECIDE, 0, Phase::ReqUp, Action::Wake(flag.clone(), cx.waker().clone()));
                    this.stage = ArbStage::Decide(flag);
                    return Poll::Pending;
                }
                ArbStage::Decide(flag) => {
                    if !flag.load(Ordering::SeqCst) {
                        return Poll::Pending;
                    }
                    let candidates: Vec<(usize, SimTime)> = this
                        .chans
                        .iter()
                        .enumerate()
                        .filter_map(|(k, &c)| {
                            let ch = &st.chans[c];
                            match &ch.send {
                                Some(p) if !ch.in_flight => Some((k, p.time)),
                                _ => None,
                            }
                        })
                        .collect();
                    let earliest = candidates.iter().map(|&(_, t)| t).min().expect("decided with a request");
                    let tied: Vec<usize> =
                        candidates.iter().filter(|&&(_, t)| t == earliest).map(|&(k, _)| k).collect();
                    let winner = if tied.len() == 1 || st.policy.mode == ArbiterMode::EarliestRequest {
                        tied[0]
                    } else {
                        let key = this.chans[0];
                        let seed = st.policy.seed;
                        let rng = st
                            .rngs
                            .entry(key)
                            .or_insert_with(|| ChaCha8Rng::seed_from_u64(seed ^ ((key as u64 + 1) << 32)));
                        tied[rng.gen_range(0..tied.len())]
                    };
                    let c = this.chans[winner];
                    st.chans[c].recv_waker = Some(cx.waker().clone());
                    st.start_transfer(c);
                    this.stage = ArbStage::Transfer(winner);
                    return Poll::Pending;
                }
                ArbStage::Transfer(k) => {
                    let k = *k;
                    let ch = &mut st.chans[this.chans[k]];
                    return match ch.delivered.take() {
                        Some(v) => Poll::Ready(Ok((k, v))),
                        None => {
                            ch.recv_waker = Some(cx.waker().clone());
                            Poll::Pending
                        }
                    };
                }
            }
        }
    }
}

// ---------------------------------------------------------------- simulator

struct Task {
    name: String,
    fut: Option<ProcFuture>,
    waker: Waker,
}

/// A wired set of processes and channels ready to run.
pub struct Simulator {
    state: Arc<Mutex<State>>,
    ready: Arc<Mutex<ReadyQueue>>,
    tasks: Vec<Task>,
    events: u64,
}

/// Validates the wiring and instantiates every process at time 0.
pub fn create_simulator(
    processes: Vec<ProcessSpec>,
    channels: Vec<ChannelSpec>,
    policy: ArbiterPolicy,
) -> Result<Simulator, SimError> {
    let mut index = BTreeMap::new();
    for (i, c) in channels.iter().enumerate() {
        if index.insert(c.id.clone(), i).is_some() {
            return Err(SimError::DuplicateId { kind: IdKind::Channel, id: c.id.clone() });
        }
    }
    let mut names = BTreeSet::new();
    let mut producer: Vec<Option<usize>> = vec![None; channels.len()];
    let mut consumer: Vec<Option<usize>> = vec![None; channels.len()];
    let mut infos = Vec::new();
    for (p, spec) in processes.iter().enumerate() {
        if !names.insert(spec.name.clone()) {
            return Err(SimError::DuplicateId { kind: IdKind::Process, id: spec.name.clone() });
        }
        let resolve = |ch: &String| {
            index.get(ch).copied().ok_or_else(|| SimError::UnknownChannel {
                process: spec.name.clone(),
                channel: ch.clone(),
            })
        };
        let mut inputs = BTreeMap::new();
        for ch in &spec.inputs {
            let c = resolve(ch)?;
            if consumer[c].replace(p).is_some() || inputs.insert(ch.clone(), c).is_some() {
                return Err(SimError::DuplicateId { kind: IdKind::Consumer, id: ch.clone() });
            }
        }
        let mut outputs = BTreeMap::new();
        for ch in &spec.outputs {
            let c = resolve(ch)?;
            if producer[c].replace(p).is_some() || outputs.insert(ch.clone(), c).is_some() {
                return Err(SimError::DuplicateId { kind: IdKind::Producer, id: ch.clone() });
            }
        }
        infos.push(Arc::new(ProcInfo {
            name: spec.name.clone(),
            inputs,
            outputs,
            delays: spec.delays.clone(),
        }));
    }
    for (i, c) in channels.iter().enumerate() {
        if producer[i].is_none() || consumer[i].is_none() {
            return Err(SimError::DanglingChannel(c.id.clone()));
        }
    }

    let timing = HandshakeTiming::default();
    let chans = channels
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let consumer_ack = infos[consumer[i].unwrap()].delays.get("ack").copied().unwrap_or(timing.ack);
            Chan {
                spec,
                consumer_ack,
                send: None,
                in_flight: false,
                recv_waiting: false,
                req_logged: false,
                recv_waker: None,
                arb_waker: None,
                delivered: None,
                completed: 0,
            }
        })
        .collect();
    let state = Arc::new(Mutex::new(State {
        now: SimTime::ZERO,
        seq: 0,
        queue: BinaryHeap::new(),
        chans,
        log: Vec::new(),
        timing,
        policy,
        rngs: BTreeMap::new(),
        halted: false,
    }));
    let n = processes.len();
    let ready = Arc::new(Mutex::new(ReadyQueue { queue: (0..n).collect(), queued: vec![true; n] }));
    let tasks = processes
        .into_iter()
        .zip(infos)
        .enumerate()
        .map(|(id, (spec, info))| {
            let ctx = Ctx { state: state.clone(), info };
            Task {
                name: spec.name,
                fut: Some((spec.behavior)(ctx)),
                waker: waker(Arc::new(TaskWaker { id, ready: ready.clone() })),
            }
        })
        .collect();
    Ok(Simulator { state, ready, tasks, events: 0 })
}

impl Simulator {
    /// Overrides the global handshake latencies; per-consumer `ack` delays still win.
    pub fn set_timing(&mut self, timing: HandshakeTiming) {
        let mut st = self.state.lock().unwrap();
        let old = st.timing.ack;
        st.timing = timing;
        for ch in &mut st.chans {
            if ch.consumer_ack == old {
                ch.consumer_ack = timing.ack;
            }
        }
    }

    pub fn now(&self) -> SimTime {
        self.state.lock().unwrap().now
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    fn poll_ready(&mut self) -> Result<(), SimError> {
        loop {
            let next = {
                let mut r = self.ready.lock().unwrap();
                let id = r.queue.pop_front();
                if let Some(id) = id {
                    r.queued[id] = false;
                }
                id
            };
            let Some(id) = next else { return Ok(()) };
            let task = &mut self.tasks[id];
            let Some(fut) = task.fut.as_mut() else { continue };
            let mut cx = Context::from_waker(&task.waker);
            match fut.as_mut().poll(&mut cx) {
                Poll::Pending => {}
                Poll::Ready(res) => {
                    task.fut = None;
                    res?;
                }
            }
        }
    }

    /// Executes events in time order until quiescence or a limit.
    pub fn run(&mut self, limits: RunLimits) -> Result<RunOutcome, SimError> {
        let mut since_progress = 0u64;
        let stall_budget = (limits.max_events / 2).max(1);
        let mut budget = limits.max_events;
        loop {
            self.poll_ready()?;
            let mut st = self.state.lock().unwrap();
            if st.halted {
                return Ok(RunOutcome::Halted);
            }
            let Some(Reverse(next)) = st.queue.peek() else {
                drop(st);
                return Ok(RunOutcome::Quiescent { blocked: self.blocked_channels() });
            };
            if next.key.0 > limits.max_time {
                return Ok(RunOutcome::MaxTime);
            }
            if budget == 0 {
                if since_progress >= stall_budget {
                    return Err(SimError::Livelock(st.now));
                }
                return Ok(RunOutcome::MaxEvents);
            }
            let Reverse(ev) = st.queue.pop().unwrap();
            if ev.key.0 > st.now {
                since_progress = 0;
            } else {
                since_progress += 1;
            }
            st.now = ev.key.0;
            st.fire(ev.action);
            budget -= 1;
            self.events += 1;
        }
    }

    /// Channels with a sender or receiver parked mid-handshake.
    pub fn blocked_channels(&self) -> Vec<String> {
        let st = self.state.lock().unwrap();
        st.chans
            .iter()
            .filter(|c| c.send.is_some() || (c.recv_waiting && c.spec.direction == Direction::Pull && c.req_logged))
            .map(|c| c.spec.id.clone())
            .collect()
    }

    /// Processes whose bodies have not returned.
    pub fn live_processes(&self) -> Vec<String> {
        self.tasks.iter().filter(|t| t.fut.is_some()).map(|t| t.name.clone()).collect()
    }

    pub fn channel_count(&self) -> usize {
        self.state.lock().unwrap().chans.len()
    }

    /// Completed four-phase transfers per channel, in declaration order.
    pub fn transfer_counts(&self) -> Vec<(String, u64)> {
        self.state.lock().unwrap().chans.iter().map(|c| (c.spec.id.clone(), c.completed)).collect()
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.state.lock().unwrap().chans.iter().map(|c| c.spec.id.clone()).collect()
    }

    pub fn log(&self) -> EventLog {
        let st = self.state.lock().unwrap();
        EventLog { channels: st.chans.iter().map(|c| c.spec.clone()).collect(), events: st.log.clone() }
    }

    pub fn take_log(&mut self) -> EventLog {
        let mut st = self.state.lock().unwrap();
        let events = std::mem::take(&mut st.log);
        EventLog { channels: st.chans.iter().map(|c| c.spec.clone()).collect(), events }
    }
}
