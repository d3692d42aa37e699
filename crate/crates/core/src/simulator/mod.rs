//! In-memory RS-485 bus with virtual Modbus slaves and scripted faults.
//!
//! Requests are decoded here with a separate minimal decoder and a bit-serial
//! CRC so that round-trip tests against [`crate::modbus`] cannot pass through
//! a shared bug.

mod scenario;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::Clock;
use crate::modbus::{ExceptionCode, FunctionCode, SlaveAddress};

pub use scenario::{Scenario, ScenarioError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("slave address {0} already attached to the bus")]
    AddressInUse(SlaveAddress),
}

/// What a slave does with the next valid request addressed to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultAction {
    Respond,
    Drop,
    CorruptCrc,
    Exception(ExceptionCode),
    /// Respond, but only after the given delay.
    Delay(Duration),
}

/// Ordered fault script. Once exhausted (or when empty) the slave responds
/// normally.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultProfile {
    script: Vec<FaultAction>,
    cursor: usize,
}

impl FaultProfile {
    pub fn new(script: Vec<FaultAction>) -> Self {
        Self { script, cursor: 0 }
    }

    /// `len` actions where each is independently Drop with probability
    /// `drop`, CorruptCrc with probability `corrupt`, else Respond.
    pub fn random(len: usize, drop: f64, corrupt: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let script = (0..len)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < drop {
                    FaultAction::Drop
                } else if u < drop + corrupt {
                    FaultAction::CorruptCrc
                } else {
                    FaultAction::Respond
                }
            })
            .collect();
        Self::new(script)
    }

    pub fn script(&self) -> &[FaultAction] {
        &self.script
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    fn next_action(&mut self) -> FaultAction {
        match self.script.get(self.cursor) {
            Some(a) => {
                self.cursor += 1;
                *a
            }
            None => FaultAction::Respond,
        }
    }
}

/// Register pair as a function of simulated time.
pub type SeriesFn = Arc<dyn Fn(Duration) -> [u16; 2] + Send + Sync>;

#[derive(Clone)]
struct Series {
    /// 1 or 2 registers.
    width: u16,
    f: SeriesFn,
}

#[derive(Clone)]
pub struct VirtualSlave {
    address: SlaveAddress,
    holding: BTreeMap<u16, u16>,
    input: BTreeMap<u16, u16>,
    series: BTreeMap<(FunctionCode, u16), Series>,
    faults: FaultProfile,
}

impl fmt::Debug for VirtualSlave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VirtualSlave")
            .field("address", &self.address)
            .field("holding", &self.holding)
            .field("input", &self.input)
            .field("series", &self.series.keys().collect::<Vec<_>>())
            .field("faults", &self.faults)
            .finish()
    }
}

impl VirtualSlave {
    pub fn new(address: SlaveAddress) -> Self {
        Self {
            address,
            holding: BTreeMap::new(),
            input: BTreeMap::new(),
            series: BTreeMap::new(),
            faults: FaultProfile::default(),
        }
    }

    pub fn address(&self) -> SlaveAddress {
        self.address
    }

    fn bank_mut(&mut self, function: FunctionCode) -> &mut BTreeMap<u16, u16> {
        match function {
            FunctionCode::ReadHoldingRegisters => &mut self.holding,
            FunctionCode::ReadInputRegisters => &mut self.input,
        }
    }

    pub fn set_register(&mut self, function: FunctionCode, register: u16, value: u16) {
        self.bank_mut(function).insert(register, value);
    }

    /// Writes consecutive registers starting at `start`, wrapping is not allowed.
    pub fn set_registers(&mut self, function: FunctionCode, start: u16, values: &[u16]) {
        let bank = self.bank_mut(function);
        for (i, v) in values.iter().enumerate() {
            let reg = start
                .checked_add(i as u16)
                .expect("register block runs past 0xFFFF");
            bank.insert(reg, *v);
        }
    }

    pub fn with_registers(mut self, function: FunctionCode, start: u16, values: &[u16]) -> Self {
        self.set_registers(function, start, values);
        self
    }

    /// Reads of `register` and `register + 1` will reflect `series` evaluated
    /// at the bus clock's current time.
    pub fn set_register_series(&mut self, function: FunctionCode, register: u16, series: SeriesFn) {
        self.series.insert((function, register), Series { width: 2, f: series });
    }

    /// Single-register variant of [`VirtualSlave::set_register_series`].
    pub fn set_register_series_word(
        &mut self,
        function: FunctionCode,
        register: u16,
        series: Arc<dyn Fn(Duration) -> u16 + Send + Sync>,
    ) {
        let f: SeriesFn = Arc::new(move |t| [series(t), 0]);
        self.series.insert((function, register), Series { width: 1, f });
    }

    pub fn set_faults(&mut self, faults: FaultProfile) {
        self.faults = faults;
    }

    pub fn with_faults(mut self, faults: FaultProfile) -> Self {
        self.faults = faults;
        self
    }

    pub fn faults(&self) -> &FaultProfile {
        &self.faults
    }

    fn read_register(&self, function: FunctionCode, register: u16, now: Duration) -> Option<u16> {
        if let Some(s) = self.series.get(&(function, register)) {
            return Some((s.f)(now)[0]);
        }
        if let Some(prev) = register.checked_sub(1) {
            if let Some(s) = self.series.get(&(function, prev)).filter(|s| s.width == 2) {
                return Some((s.f)(now)[1]);
            }
        }
        match function {
            FunctionCode::ReadHoldingRegisters => self.holding.get(&register).copied(),
            FunctionCode::ReadInputRegisters => self.input.get(&register).copied(),
        }
    }

    fn read_block(&self, function: FunctionCode, start: u16, count: u16, now: Duration) -> Option<Vec<u16>> {
        (0..count)
            .map(|i| {
                let reg = start.checked_add(i)?;
                self.read_register(function, reg, now)
            })
            .collect()
    }

    /// Addresses of every register readable with `function`, including
    /// series-backed ones.
    pub fn populated(&self, function: FunctionCode) -> Vec<u16> {
        let bank = match function {
            FunctionCode::ReadHoldingRegisters => &self.holding,
            FunctionCode::ReadInputRegisters => &self.input,
        };
        let mut regs: Vec<u16> = bank.keys().copied().collect();
        for ((f, r), s) in &self.series {
            if *f == function {
                regs.push(*r);
                if s.width == 2 {
                    if let Some(next) = r.checked_add(1) {
                        regs.push(next);
                    }
                }
            }
        }
        regs.sort_unstable();
        regs.dedup();
        regs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Request,
    Reply,
}

/// One frame seen on the virtual wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRecord {
    pub at: Duration,
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

/// Reply produced by a slave, deliverable after `delay`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlaveReply {
    pub bytes: Vec<u8>,
    pub delay: Duration,
}

pub struct VirtualBus {
    slaves: BTreeMap<SlaveAddress, VirtualSlave>,
    write_log: Vec<WireRecord>,
    log_enabled: bool,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for VirtualBus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VirtualBus")
            .field("slaves", &self.slaves)
            .field("write_log", &self.write_log.len())
            .finish()
    }
}

pub type SharedBus = Arc<Mutex<VirtualBus>>;

impl VirtualBus {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            slaves: BTreeMap::new(),
            write_log: Vec::new(),
            log_enabled: true,
            clock,
        }
    }

    pub fn shared(self) -> SharedBus {
        Arc::new(Mutex::new(self))
    }

    /// Disables the wire log, for long unattended runs.
    pub fn set_logging(&mut self, enabled: bool) {
        self.log_enabled = enabled;
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn attach_slave(&mut self, slave: VirtualSlave) -> Result<(), SimError> {
        if self.slaves.contains_key(&slave.address) {
            return Err(SimError::AddressInUse(slave.address));
        }
        self.slaves.insert(slave.address, slave);
        Ok(())
    }

    pub fn slave(&self, address: SlaveAddress) -> Option<&VirtualSlave> {
        self.slaves.get(&address)
    }

    pub fn slave_mut(&mut self, address: SlaveAddress) -> Option<&mut VirtualSlave> {
        self.slaves.get_mut(&address)
    }

    pub fn slaves(&self) -> impl Iterator<Item = &VirtualSlave> {
        self.slaves.values()
    }

    pub fn write_log(&self) -> &[WireRecord] {
        &self.write_log
    }

    pub fn take_write_log(&mut self) -> Vec<WireRecord> {
        std::mem::take(&mut self.write_log)
    }

    fn log(&mut self, direction: Direction, bytes: &[u8]) {
        if self.log_enabled {
            let at = self.clock.monotonic();
            self.write_log.push(WireRecord {
                at,
                direction,
                bytes: bytes.to_vec(),
            });
        }
    }

    /// Records a reply as it is taken off the wire by a master.
    pub fn record_reply(&mut self, bytes: &[u8]) {
        self.log(Direction::Reply, bytes);
    }

    /// Delivers a request frame to the bus. Returns the addressed slave's
    /// reply, or `None` when the bus stays silent: corrupt frames, unattached
    /// or broadcast addresses, and dropped responses.
    pub fn handle_request(&mut self, frame: &[u8]) -> Option<SlaveReply> {
        self.log(Direction::Request, frame);
        let request = decode_request(frame)?;
        let now = self.clock.monotonic();
        let address = SlaveAddress::new(request.slave).ok()?;
        let slave = self.slaves.get_mut(&address)?;

        let action = slave.faults.next_action();
        let answer = |slave: &VirtualSlave| -> Vec<u8> {
            let Some(function) = FunctionCode::from_code(request.function) else {
                return exception_frame(request.slave, request.function, ExceptionCode::IllegalFunction);
            };
            if request.count == 0 || request.count > 125 {
                return exception_frame(request.slave, request.function, ExceptionCode::IllegalDataValue);
            }
            match slave.read_block(function, request.start, request.count, now) {
                Some(words) => data_frame(request.slave, request.function, &words),
                None => exception_frame(request.slave, request.function, ExceptionCode::IllegalDataAddress),
            }
        };
        let (bytes, delay) = match action {
            FaultAction::Drop => return None,
            FaultAction::Respond => (answer(slave), Duration::ZERO),
            FaultAction::CorruptCrc => {
                let mut bytes = answer(slave);
                if let Some(last) = bytes.last_mut() {
                    *last ^= 0xFF;
                }
                (bytes, Duration::ZERO)
            }
            FaultAction::Exception(code) => {
                (exception_frame(request.slave, request.function, code), Duration::ZERO)
            }
            FaultAction::Delay(d) => (answer(slave), d),
        };
        Some(SlaveReply { bytes, delay })
    }
}

struct DecodedRequest {
    slave: u8,
    function: u8,
    start: u16,
    count: u16,
}

fn decode_request(frame: &[u8]) -> Option<DecodedRequest> {
    if frame.len() != 8 || bitwise_crc(frame) != 0 {
        return None;
    }
    Some(DecodedRequest {
        slave: frame[0],
        function: frame[1],
        start: (frame[2] as u16) << 8 | frame[3] as u16,
        count: (frame[4] as u16) << 8 | frame[5] as u16,
    })
}

fn bitwise_crc(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in bytes {
        crc ^= b as u16;
        for _ in 0..8 {
            let lsb = crc & 1;
            crc >>= 1;
            if lsb == 1 {
                crc ^= 0xA001;
            }
        }
    }
    crc
}

fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let crc = bitwise_crc(&body);
    body.push((crc & 0xFF) as u8);
    body.push((crc >> 8) as u8);
    body
}

fn data_frame(slave: u8, function: u8, words: &[u16]) -> Vec<u8> {
    let mut body = vec![slave, function, (words.len() * 2) as u8];
    for w in words {
        body.push((w >> 8) as u8);
        body.push((w & 0xFF) as u8);
    }
    seal(body)
}

fn exception_frame(slave: u8, function: u8, code: ExceptionCode) -> Vec<u8> {
    seal(vec![slave, function | 0x80, code.byte()])
}

/// True if some reply on the wire does not directly follow a request to the
/// same slave, i.e. two transactions overlapped.
pub fn has_interleaved_transactions(log: &[WireRecord]) -> bool {
    let mut open: Option<u8> = None;
    let mut last_at = Duration::ZERO;
    for rec in log {
        if rec.at < last_at {
            return true;
        }
        last_at = rec.at;
        match rec.direction {
            Direction::Request => open = rec.bytes.first().copied(),
            Direction::Reply => match open.take() {
                Some(addr) if rec.bytes.first() == Some(&addr) => {}
                _ => return true,
            },
        }
    }
    false
}
