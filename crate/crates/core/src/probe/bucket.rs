// SPDX-License-Identifier: Apache-2.0

//! A token bucket for probe dispatch.

use std::time::{Duration, Instant};

/// Refills continuously at `rate` tokens per second up to `burst`. Starts full.
///
/// Token accounting is done in nanoseconds of "credit" so that arbitrary
/// rates do not drift when callers wake up late.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    /// Nanoseconds of credit per token.
    interval_ns: u128,
    /// Maximum credit, `burst * interval_ns`.
    cap_ns: u128,
    credit_ns: u128,
    last: Instant,
}

impl TokenBucket {
    pub fn new(rate_per_second: u64, burst: u64, now: Instant) -> Self {
        assert!(rate_per_second > 0 && burst > 0, "rate and burst must be positive");
        let interval_ns = 1_000_000_000u128.div_ceil(u128::from(rate_per_second));
        let cap_ns = interval_ns * u128::from(burst);
        Self { interval_ns, cap_ns, credit_ns: cap_ns, last: now }
    }

    fn refill(&mut self, now: Instant) {
        let elapsed = now.saturating_duration_since(self.last).as_nanos();
        self.credit_ns = (self.credit_ns + elapsed).min(self.cap_ns);
        self.last = now.max(self.last);
    }

    /// Takes one token if available, otherwise returns how long to wait.
    pub fn try_take(&mut self, now: Instant) -> Result<(), Duration> {
        self.refill(now);
        if self.credit_ns >= self.interval_ns {
            self.credit_ns -= self.interval_ns;
            Ok(())
        } else {
            let missing = self.interval_ns - self.credit_ns;
            Err(Duration::from_nanos(missing as u64))
        }
    }

    /// Blocks the calling thread until a token is available.
    pub fn take(&mut self) {
        loop {
            match self.try_take(Instant::now()) {
                Ok(()) => return,
                Err(wait) => std::thread::sleep(wait),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_full_then_paces() {
        let t0 = Instant::now();
        let mut b = TokenBucket::new(10, 3, t0);
        for _ in 0..3 {
            assert!(b.try_take(t0).is_ok());
        }
        let wait = b.try_take(t0).unwrap_err();
        assert_eq!(wait, Duration::from_millis(100));
        assert!(b.try_take(t0 + Duration::from_millis(99)).is_err());
        assert!(b.try_take(t0 + Duration::from_millis(100)).is_ok());
    }

    #[test]
    fn burst_caps_accumulation() {
        let t0 = Instant::now();
        let mut b = TokenBucket::new(1000, 2, t0);
        let later = t0 + Duration::from_secs(10);
        assert!(b.try_take(later).is_ok());
        assert!(b.try_take(later).is_ok());
        assert!(b.try_take(later).is_err());
    }

    #[test]
    fn window_bound_holds_on_a_synthetic_clock() {
        // Hammer the bucket every 50 us for 3 s and count per 1 s window.
        let t0 = Instant::now();
        let (rate, burst) = (200u64, 16u64);
        let mut b = TokenBucket::new(rate, burst, t0);
        let mut stamps = Vec::new();
        for step in 0..60_000u64 {
            let now = t0 + Duration::from_micros(50 * step);
            if b.try_take(now).is_ok() {
                stamps.push(now);
            }
        }
        for (i, start) in stamps.iter().enumerate() {
            let in_window =
                stamps[i..].iter().take_while(|t| t.duration_since(*start) < Duration::from_secs(1)).count();
            assert!(in_window as u64 <= rate + burst, "{in_window} dispatches in one window");
        }
    }
}
