//! Time source shared by the transport, simulator and logging service.
//!
//! [`SystemClock`] follows the host clock. [`SimClock`] is a discrete-event
//! clock: sleeping advances simulated time instead of blocking, so a simulated
//! day of polling finishes in seconds.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};

pub trait Clock: Send + Sync {
    /// Time since the clock's origin. Never decreases.
    fn monotonic(&self) -> Duration;

    /// Current wall-clock instant.
    fn utc(&self) -> DateTime<Utc>;

    /// Blocks (or advances simulated time) until `monotonic() >= deadline`.
    fn sleep_until(&self, deadline: Duration);

    /// Like [`Clock::sleep_until`] but returns early once `stop` fires.
    /// Returns `true` if the deadline was reached without a stop request.
    fn sleep_until_or_stop(&self, deadline: Duration, stop: &StopSignal) -> bool {
        self.sleep_until(deadline);
        !stop.is_stopped()
    }

    /// Registers the calling thread as a participant in simulated time.
    /// No-op for real clocks.
    fn join(&self) {}

    /// Undoes [`Clock::join`].
    fn leave(&self) {}
}

/// RAII registration with [`Clock::join`].
pub struct Participant {
    clock: Arc<dyn Clock>,
}

impl Participant {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        clock.join();
        Self { clock }
    }
}

impl Drop for Participant {
    fn drop(&mut self) {
        self.clock.leave();
    }
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn monotonic(&self) -> Duration {
        self.origin.elapsed()
    }

    fn utc(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.monotonic();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }

    fn sleep_until_or_stop(&self, deadline: Duration, stop: &StopSignal) -> bool {
        loop {
            let now = self.monotonic();
            if deadline <= now {
                return !stop.is_stopped();
            }
            if stop.wait_timeout(deadline - now) {
                return false;
            }
        }
    }
}

#[derive(Debug, Default)]
struct SimState {
    now: Duration,
    participants: usize,
    sleepers: usize,
    wake_times: BTreeMap<Duration, usize>,
}

impl SimState {
    /// Advances to the earliest wake time once every participant is asleep.
    fn maybe_advance(&mut self) -> bool {
        if self.participants > 0 && self.sleepers >= self.participants {
            if let Some((&t, _)) = self.wake_times.iter().next() {
                if t > self.now {
                    self.now = t;
                    return true;
                }
            }
        }
        false
    }
}

/// Simulated clock. Threads that share one simulated timeline call
/// [`Clock::join`] (see [`Participant`]); time then only moves when all of
/// them sleep, to the earliest requested wake-up. With no participants every
/// sleep simply advances time. Participants must not block on each other
/// outside the clock, or time stops.
#[derive(Debug)]
pub struct SimClock {
    origin_utc: DateTime<Utc>,
    state: Mutex<SimState>,
    cond: Condvar,
}

impl SimClock {
    pub fn new(origin_utc: DateTime<Utc>) -> Self {
        Self {
            origin_utc,
            state: Mutex::new(SimState::default()),
            cond: Condvar::new(),
        }
    }

    pub fn origin_utc(&self) -> DateTime<Utc> {
        self.origin_utc
    }

    /// Moves time forward by `d` regardless of participants.
    pub fn advance(&self, d: Duration) {
        let mut st = self.state.lock().unwrap();
        st.now += d;
        self.cond.notify_all();
    }
}

impl Clock for SimClock {
    fn monotonic(&self) -> Duration {
        self.state.lock().unwrap().now
    }

    fn utc(&self) -> DateTime<Utc> {
        let now = self.monotonic();
        self.origin_utc + chrono::Duration::from_std(now).expect("simulated time overflow")
    }

    fn sleep_until(&self, deadline: Duration) {
        let mut st = self.state.lock().unwrap();
        if deadline <= st.now {
            return;
        }
        if st.participants == 0 {
            st.now = deadline;
            self.cond.notify_all();
            return;
        }
        st.sleepers += 1;
        *st.wake_times.entry(deadline).or_default() += 1;
        while st.now < deadline {
            if st.maybe_advance() {
                self.cond.notify_all();
                continue;
            }
            st = self.cond.wait(st).unwrap();
        }
        st.sleepers -= 1;
        let slot = st.wake_times.get_mut(&deadline).expect("wake time registered");
        *slot -= 1;
        if *slot == 0 {
            st.wake_times.remove(&deadline);
        }
    }

    fn join(&self) {
        self.state.lock().unwrap().participants += 1;
    }

    fn leave(&self) {
        let mut st = self.state.lock().unwrap();
        st.participants = st.participants.saturating_sub(1);
        if st.maybe_advance() {
            self.cond.notify_all();
        }
    }
}

/// Cooperative shutdown request, settable from any thread.
#[derive(Debug, Clone, Default)]
pub struct StopSignal {
    inner: Arc<(Mutex<bool>, Condvar)>,
}

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        let (lock, cond) = &*self.inner;
        *lock.lock().unwrap() = true;
        cond.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        *self.inner.0.lock().unwrap()
    }

    /// Waits up to `timeout`; returns `true` if stopped.
    pub fn wait_timeout(&self, timeout: Duration) -> bool {
        let (lock, cond) = &*self.inner;
        let guard = lock.lock().unwrap();
        let (guard, _) = cond
            .wait_timeout_while(guard, timeout, |stopped| !*stopped)
            .unwrap();
        *guard
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn origin() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn unparticipated_sleep_advances() {
        let c = SimClock::new(origin());
        c.sleep_until(Duration::from_secs(5));
        assert_eq!(c.monotonic(), Duration::from_secs(5));
        c.sleep_until(Duration::from_secs(2));
        assert_eq!(c.monotonic(), Duration::from_secs(5));
        assert_eq!(c.utc(), origin() + chrono::Duration::seconds(5));
    }

    #[test]
    fn participants_advance_to_earliest_wake() {
        let clock = Arc::new(SimClock::new(origin()));
        let dyn_clock: Arc<dyn Clock> = clock.clone();
        let log = Arc::new(Mutex::new(Vec::new()));
        let mut guards: Vec<_> = (0..2).map(|_| Participant::new(dyn_clock.clone())).collect();
        std::thread::scope(|s| {
            for (id, step) in [(0u32, 3u64), (1, 5)] {
                let guard = guards.pop().unwrap();
                let clock = clock.clone();
                let log = log.clone();
                s.spawn(move || {
                    let _guard = guard;
                    for k in 1..=4 {
                        clock.sleep_until(Duration::from_secs(step * k));
                        log.lock().unwrap().push((clock.monotonic().as_secs(), id));
                    }
                });
            }
        });
        let log = log.lock().unwrap();
        let times: Vec<u64> = log.iter().map(|(t, _)| *t).collect();
        let mut sorted = times.clone();
        sorted.sort();
        assert_eq!(times, sorted);
        assert_eq!(clock.monotonic(), Duration::from_secs(20));
        for (t, id) in log.iter() {
            let step = if *id == 0 { 3 } else { 5 };
            assert_eq!(t % step, 0);
        }
    }

    #[test]
    fn stop_signal_interrupts_real_sleep() {
        let clock = SystemClock::new();
        let stop = StopSignal::new();
        let s2 = stop.clone();
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            s2.stop();
        });
        let started = Instant::now();
        assert!(!clock.sleep_until_or_stop(Duration::from_secs(30), &stop));
        assert!(started.elapsed() < Duration::from_secs(5));
        t.join().unwrap();
    }
}
