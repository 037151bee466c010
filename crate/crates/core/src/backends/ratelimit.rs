//! Token-bucket rate limiting shared by HTTP clients.

use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Requests-per-second budget with a burst allowance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLimit {
    pub per_second: f64,
    pub burst: f64,
}

/// Classic token bucket: `acquire` blocks until a token is available.
/// State sits behind a mutex so one bucket can pace many threads.
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<BucketState>,
}

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

impl TokenBucket {
    pub fn new(limit: RateLimit) -> Self {
        let capacity = limit.burst.max(1.0);
        Self {
            capacity,
            refill_per_sec: limit.per_second.max(1e-9),
            state: Mutex::new(BucketState {
                tokens: capacity,
                last_refill: Instant::now(),
            }),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("bucket lock");
                let now = Instant::now();
                let elapsed = now.duration_since(state.last_refill).as_secs_f64();
                state.tokens = (state.tokens + elapsed * self.refill_per_sec).min(self.capacity);
                state.last_refill = now;
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.tokens) / self.refill_per_sec)
            };
            std::thread::sleep(wait.min(Duration::from_millis(50)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_throttle() {
        let bucket = TokenBucket::new(RateLimit {
            per_second: 1000.0,
            burst: 2.0,
        });
        let start = Instant::now();
        bucket.acquire();
        bucket.acquire();
        assert!(start.elapsed() < Duration::from_millis(20));
        bucket.acquire();
        // Third token needs a refill at 1 kHz.
        assert!(start.elapsed() >= Duration::from_micros(500));
    }
}
