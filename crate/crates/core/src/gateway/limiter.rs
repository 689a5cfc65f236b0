//! Token-bucket rate limiting and a counting concurrency gate.

use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

/// Token bucket: `rate_per_sec` sustained, `burst` peak.
pub struct RateLimiter {
    rate_per_sec: f64,
    burst: f64,
    state: Mutex<BucketState>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64, burst: f64) -> Self {
        let burst = burst.max(1.0);
        RateLimiter {
            rate_per_sec: rate_per_sec.max(1e-6),
            burst,
            state: Mutex::new(BucketState {
                tokens: burst,
                last_refill: Instant::now(),
            }),
        }
    }

    /// Blocks until one token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                self.try_take(&mut state, Instant::now())
            };
            match wait {
                None => return,
                Some(delay) => std::thread::sleep(delay),
            }
        }
    }

    /// Refills for elapsed time and takes a token, or reports how long to
    /// wait for the next one.
    fn try_take(&self, state: &mut BucketState, now: Instant) -> Option<Duration> {
        let elapsed = now.saturating_duration_since(state.last_refill);
        state.tokens = (state.tokens + elapsed.as_secs_f64() * self.rate_per_sec).min(self.burst);
        state.last_refill = now;
        if state.tokens >= 1.0 {
            state.tokens -= 1.0;
            None
        } else {
            let deficit = 1.0 - state.tokens;
            Some(Duration::from_secs_f64(deficit / self.rate_per_sec))
        }
    }
}

/// Caps the number of in-flight requests.
pub struct ConcurrencyGate {
    permits: Mutex<usize>,
    released: Condvar,
}

impl ConcurrencyGate {
    pub fn new(max_in_flight: usize) -> Self {
        ConcurrencyGate {
            permits: Mutex::new(max_in_flight.max(1)),
            released: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.released.wait(permits).unwrap();
        }
        *permits -= 1;
        drop(permits);
        GatePermit { gate: self }
    }

    fn release(&self) {
        let mut permits: MutexGuard<usize> = self.permits.lock().unwrap();
        *permits += 1;
        drop(permits);
        self.released.notify_one();
    }
}

pub struct GatePermit<'a> {
    gate: &'a ConcurrencyGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        self.gate.release();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn bucket_spends_burst_then_waits() {
        let limiter = RateLimiter::new(10.0, 2.0);
        let t0 = Instant::now();
        let mut state = BucketState {
            tokens: 2.0,
            last_refill: t0,
        };
        assert!(limiter.try_take(&mut state, t0).is_none());
        assert!(limiter.try_take(&mut state, t0).is_none());
        // Bucket empty: next token is 1/rate away.
        let wait = limiter.try_take(&mut state, t0).unwrap();
        assert!((wait.as_secs_f64() - 0.1).abs() < 1e-9);
        // After enough elapsed time the take succeeds again.
        assert!(limiter
            .try_take(&mut state, t0 + Duration::from_millis(150))
            .is_none());
    }

    #[test]
    fn bucket_refill_caps_at_burst() {
        let limiter = RateLimiter::new(100.0, 3.0);
        let t0 = Instant::now();
        let mut state = BucketState {
            tokens: 0.0,
            last_refill: t0,
        };
        // A long idle period must not accumulate more than `burst` tokens.
        let later = t0 + Duration::from_secs(60);
        assert!(limiter.try_take(&mut state, later).is_none());
        assert!((state.tokens - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gate_caps_concurrency() {
        let gate = Arc::new(ConcurrencyGate::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let gate = gate.clone();
            let peak = peak.clone();
            let current = current.clone();
            handles.push(std::thread::spawn(move || {
                let _permit = gate.acquire();
                let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(10));
                current.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for handle in handles {
            handle.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
