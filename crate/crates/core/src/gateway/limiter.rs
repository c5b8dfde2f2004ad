//! Token-bucket rate limiter serializing admission of upstream calls.

use std::sync::Mutex;
use std::time::{Duration, Instant};

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

/// Classic token bucket: starts full, refills continuously, and `acquire`
/// blocks until a token is available. Shared by reference across workers.
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<BucketState>,
}

impl TokenBucket {
    pub fn new(capacity: f64, refill_per_sec: f64) -> TokenBucket {
        assert!(capacity >= 1.0, "capacity must admit at least one call");
        assert!(refill_per_sec > 0.0, "refill rate must be positive");
        TokenBucket {
            capacity,
            refill_per_sec,
            state: Mutex::new(BucketState {
                tokens: capacity,
                last_refill: Instant::now(),
            }),
        }
    }

    /// Limiter allowing `requests` calls per minute with bursts up to one
    /// minute's quota.
    pub fn per_minute(requests: u32) -> TokenBucket {
        let requests = f64::from(requests.max(1));
        TokenBucket::new(requests, requests / 60.0)
    }

    /// Block until a token is available, then consume it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("limiter lock");
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
            std::thread::sleep(wait);
        }
    }
}
