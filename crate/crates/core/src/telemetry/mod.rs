//! Embedded log store standing in for a hosted log search API.

mod event;
mod ratelimit;
mod store;

pub use event::{EventId, LogEvent, LogLevel, LogQuery, StoredEvent, TraceChain};
pub use ratelimit::{acquire_permit, Permit, RateLimitConfig, TokenBucket};
pub use store::{load_ndjson, query_paged, with_backoff, RetryPolicy, TelemetryError, TelemetryStore, ThrottleStats};
