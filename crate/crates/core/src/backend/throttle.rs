use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::Clock;

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window request limiter: at most `rpm` permits are granted in any
/// 60 s window. Shared by every caller of one backend.
pub struct ThrottleGate {
    rpm: u32,
    granted: Mutex<VecDeque<Duration>>,
    clock: Arc<dyn Clock>,
}

/// Proof that a request slot was granted; carries the grant time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Permit {
    pub granted_at: Duration,
}

impl ThrottleGate {
    pub fn new(rpm: u32, clock: Arc<dyn Clock>) -> Self {
        assert!(rpm > 0, "requests_per_minute must be > 0");
        Self {
            rpm,
            granted: Mutex::new(VecDeque::with_capacity(rpm as usize)),
            clock,
        }
    }

    pub fn requests_per_minute(&self) -> u32 {
        self.rpm
    }

    /// Blocks until a permit is available.
    pub fn acquire(&self) -> Permit {
        loop {
            let wait = {
                let mut granted = self.granted.lock().expect("throttle lock");
                let now = self.clock.now();
                while granted.front().is_some_and(|t| now.saturating_sub(*t) >= WINDOW) {
                    granted.pop_front();
                }
                if granted.len() < self.rpm as usize {
                    granted.push_back(now);
                    return Permit { granted_at: now };
                }
                let oldest = *granted.front().expect("window is full");
                (oldest + WINDOW).saturating_sub(now)
            };
            self.clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}
