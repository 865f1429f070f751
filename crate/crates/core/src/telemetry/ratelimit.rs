//! Token bucket used to model log API throttling.

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimitConfig {
    /// Bucket size in queries.
    pub capacity: u32,
    /// Refill rate in queries per second.
    pub refill_per_sec: f64,
}

impl RateLimitConfig {
    pub fn new(capacity: u32, refill_per_sec: f64) -> Result<Self, String> {
        let cfg = RateLimitConfig { capacity, refill_per_sec };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.capacity < 1 {
            return Err("rate limit capacity must be at least 1".into());
        }
        if !self.refill_per_sec.is_finite() || self.refill_per_sec <= 0.0 {
            return Err("rate limit refill must be a positive rate".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Permit {
    Granted,
    /// No token available; one will exist `retry_after_ms` from now.
    Throttled {
        retry_after_ms: i64,
    },
}

impl Permit {
    pub fn is_granted(self) -> bool {
        matches!(self, Permit::Granted)
    }
}

#[derive(Debug, Clone)]
pub struct TokenBucket {
    cfg: RateLimitConfig,
    tokens: f64,
    last: Option<Timestamp>,
}

impl TokenBucket {
    /// A full bucket.
    pub fn new(cfg: RateLimitConfig) -> Self {
        TokenBucket { cfg, tokens: cfg.capacity as f64, last: None }
    }

    pub fn config(&self) -> RateLimitConfig {
        self.cfg
    }

    fn refill(&mut self, now: Timestamp) {
        if let Some(last) = self.last {
            let elapsed_ms = (now.0 - last.0).max(0) as f64;
            self.tokens = (self.tokens + elapsed_ms * self.cfg.refill_per_sec / 1000.0).min(self.cfg.capacity as f64);
            if now > last {
                self.last = Some(now);
            }
        } else {
            self.last = Some(now);
        }
    }

    pub fn acquire(&mut self, now: Timestamp) -> Permit {
        self.refill(now);
        // Absorb float residue from fractional refills.
        if self.tokens >= 1.0 - 1e-9 {
            self.tokens = (self.tokens - 1.0).max(0.0);
            Permit::Granted
        } else {
            let missing = 1.0 - self.tokens;
            let ms = (missing * 1000.0 / self.cfg.refill_per_sec).ceil() as i64;
            Permit::Throttled { retry_after_ms: ms.max(1) }
        }
    }
}

/// Stateless form of the acquire operation: applies one call to `bucket`.
pub fn acquire_permit(bucket: &mut TokenBucket, now: Timestamp) -> Permit {
    bucket.acquire(now)
}
