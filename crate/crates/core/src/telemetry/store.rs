use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use super::event::{EventId, LogEvent, LogQuery, StoredEvent, TraceChain};
use super::ratelimit::{Permit, RateLimitConfig, TokenBucket};
use crate::runtime::Runtime;
use crate::time::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TelemetryError {
    #[error("log API throttled, retry after {retry_after_ms} ms")]
    Throttled { retry_after_ms: i64 },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("log retrieval unavailable after {retries} retries")]
    LogRetrievalUnavailable { retries: u32 },
}

type Key = (Timestamp, u64);

#[derive(Default)]
struct Inner {
    events: Vec<StoredEvent>,
    by_time: BTreeSet<Key>,
    by_service: HashMap<String, BTreeSet<Key>>,
    by_correlation: HashMap<(String, String), BTreeSet<Key>>,
}

impl Inner {
    fn insert(&mut self, event: LogEvent) -> EventId {
        let id = self.events.len() as u64;
        let key = (event.ts, id);
        self.by_time.insert(key);
        self.by_service.entry(event.service.clone()).or_default().insert(key);
        for (k, v) in &event.correlation {
            self.by_correlation.entry((k.clone(), v.clone())).or_default().insert(key);
        }
        self.events.push(StoredEvent { id: EventId(id), event });
        EventId(id)
    }

    fn select(&self, q: &LogQuery) -> Vec<StoredEvent> {
        let lo = (q.start, 0u64);
        let hi = (q.end, u64::MAX);
        let mut keys: Vec<Key> = if let Some((kind, value)) = &q.correlation {
            match self.by_correlation.get(&(kind.clone(), value.clone())) {
                Some(set) => set.range(lo..=hi).copied().collect(),
                None => Vec::new(),
            }
        } else if let Some(services) = &q.services {
            let mut keys: Vec<Key> = services
                .iter()
                .filter_map(|s| self.by_service.get(s))
                .flat_map(|set| set.range(lo..=hi).copied())
                .collect();
            keys.sort_unstable();
            keys
        } else {
            self.by_time.range(lo..=hi).copied().collect()
        };
        keys.retain(|(_, id)| q.matches(&self.events[*id as usize].event));
        keys.into_iter().skip(q.offset).take(q.limit).map(|(_, id)| self.events[id as usize].clone()).collect()
    }
}

/// Embedded append-only log store with optional NDJSON persistence.
pub struct TelemetryStore {
    inner: RwLock<Inner>,
    limiter: Mutex<Option<TokenBucket>>,
    sink: Mutex<Option<(PathBuf, BufWriter<File>)>>,
}

impl Default for TelemetryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl TelemetryStore {
    pub fn new() -> Self {
        TelemetryStore { inner: RwLock::new(Inner::default()), limiter: Mutex::new(None), sink: Mutex::new(None) }
    }

    /// Opens (or creates) a file-backed store. Existing lines are loaded;
    /// later appends are written through.
    pub fn open(path: &Path) -> Result<Self, TelemetryError> {
        let store = TelemetryStore::new();
        if path.exists() {
            let events = load_ndjson(path)?;
            let mut inner = store.inner.write().unwrap();
            for e in events {
                inner.insert(e);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| TelemetryError::Storage(format!("{}: {e}", path.display())))?;
        *store.sink.lock().unwrap() = Some((path.to_path_buf(), BufWriter::new(file)));
        Ok(store)
    }

    pub fn set_rate_limit(&self, cfg: Option<RateLimitConfig>) {
        *self.limiter.lock().unwrap() = cfg.map(TokenBucket::new);
    }

    pub fn rate_limit(&self) -> Option<RateLimitConfig> {
        self.limiter.lock().unwrap().as_ref().map(|b| b.config())
    }

    pub fn append_events(&self, events: Vec<LogEvent>) -> Result<usize, TelemetryError> {
        for e in &events {
            e.validate().map_err(TelemetryError::InvalidEvent)?;
        }
        let mut inner = self.inner.write().unwrap();
        let mut sink = self.sink.lock().unwrap();
        if let Some((path, writer)) = sink.as_mut() {
            for e in &events {
                let line = serde_json::to_string(e).map_err(|e| TelemetryError::Storage(e.to_string()))?;
                writeln!(writer, "{line}")
                    .map_err(|err| TelemetryError::Storage(format!("{}: {err}", path.display())))?;
            }
            writer.flush().map_err(|err| TelemetryError::Storage(format!("{}: {err}", path.display())))?;
        }
        let n = events.len();
        for e in events {
            inner.insert(e);
        }
        Ok(n)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: EventId) -> Option<StoredEvent> {
        self.inner.read().unwrap().events.get(id.0 as usize).cloned()
    }

    /// Every stored event in insertion order.
    pub fn snapshot(&self) -> Vec<StoredEvent> {
        self.inner.read().unwrap().events.clone()
    }

    pub fn acquire_permit(&self, now: Timestamp) -> Permit {
        match self.limiter.lock().unwrap().as_mut() {
            Some(bucket) => bucket.acquire(now),
            None => Permit::Granted,
        }
    }

    fn metered(&self, now: Timestamp) -> Result<(), TelemetryError> {
        match self.acquire_permit(now) {
            Permit::Granted => Ok(()),
            Permit::Throttled { retry_after_ms } => Err(TelemetryError::Throttled { retry_after_ms }),
        }
    }

    /// Matching events ascending by `(ts, id)`, after `offset`, at most `limit`.
    pub fn query(&self, q: &LogQuery, now: Timestamp) -> Result<Vec<StoredEvent>, TelemetryError> {
        q.validate().map_err(TelemetryError::InvalidQuery)?;
        self.metered(now)?;
        Ok(self.inner.read().unwrap().select(q))
    }

    pub fn trace_correlation(
        &self,
        kind: &str,
        value: &str,
        start: Timestamp,
        end: Timestamp,
        now: Timestamp,
    ) -> Result<TraceChain, TelemetryError> {
        if start > end {
            return Err(TelemetryError::InvalidQuery(format!("trace start {} is after end {}", start.0, end.0)));
        }
        self.metered(now)?;
        let q = LogQuery::range(start, end).correlated(kind, value).limit(usize::MAX);
        let events = self.inner.read().unwrap().select(&q);
        Ok(TraceChain::from_events(kind, value, events))
    }
}

pub fn load_ndjson(path: &Path) -> Result<Vec<LogEvent>, TelemetryError> {
    let file = File::open(path).map_err(|e| TelemetryError::Storage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TelemetryError::Storage(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: LogEvent = serde_json::from_str(&line)
            .map_err(|e| TelemetryError::InvalidEvent(format!("{}:{}: {e}", path.display(), n + 1)))?;
        event.validate().map_err(TelemetryError::InvalidEvent)?;
        out.push(event);
    }
    Ok(out)
}

/// Backoff contract for throttled callers: wait exactly the advertised
/// `retry_after`, retry, give up after `max_retries`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 10 }
    }
}

/// Running tally of how much throttling a caller absorbed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ThrottleStats {
    pub calls: u32,
    pub retries: u32,
    pub waited_ms: i64,
}

pub fn with_backoff<T>(
    rt: &dyn Runtime,
    policy: RetryPolicy,
    stats: &mut ThrottleStats,
    mut call: impl FnMut(Timestamp) -> Result<T, TelemetryError>,
) -> Result<T, TelemetryError> {
    let mut retries = 0;
    loop {
        stats.calls += 1;
        match call(rt.now()) {
            Err(TelemetryError::Throttled { retry_after_ms }) => {
                if retries >= policy.max_retries {
                    return Err(TelemetryError::LogRetrievalUnavailable { retries });
                }
                retries += 1;
                stats.retries += 1;
                stats.waited_ms += retry_after_ms;
                rt.sleep(retry_after_ms);
            }
            Ok(v) => {
                // A caller that waited yields once after its grant so the
                // other waiters at this instant re-queue ahead of its next
                // call; throttled callers then take turns instead of one
                // draining every token.
                if retries > 0 {
                    rt.sleep(0);
                }
                return Ok(v);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs `q` page by page (each page is one metered call), concatenating
/// until a short page or `q.limit` results.
pub fn query_paged(
    store: &TelemetryStore,
    rt: &dyn Runtime,
    q: &LogQuery,
    page_size: usize,
    policy: RetryPolicy,
    stats: &mut ThrottleStats,
) -> Result<Vec<StoredEvent>, TelemetryError> {
    q.validate().map_err(TelemetryError::InvalidQuery)?;
    let page_size = page_size.max(1);
    let mut out: Vec<StoredEvent> = Vec::new();
    loop {
        let want = (q.limit - out.len()).min(page_size);
        let mut page_q = q.clone();
        page_q.offset = q.offset + out.len();
        page_q.limit = want;
        let page = with_backoff(rt, policy, stats, |now| store.query(&page_q, now))?;
        let short = page.len() < want;
        out.extend(page);
        if short || out.len() >= q.limit {
            return Ok(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::ManualRuntime;
    use crate::telemetry::event::LogLevel;

    fn ev(ts: i64, svc: &str, level: LogLevel, msg: &str) -> LogEvent {
        LogEvent::new(Timestamp(ts), svc, level, msg)
    }

    fn scan(all: &[StoredEvent], q: &LogQuery) -> Vec<StoredEvent> {
        let mut hits: Vec<StoredEvent> = all.iter().filter(|e| q.matches(&e.event)).cloned().collect();
        hits.sort_by_key(|e| (e.event.ts, e.id));
        hits.into_iter().skip(q.offset).take(q.limit).collect()
    }

    #[test]
    fn append_counts() {
        let store = TelemetryStore::new();
        assert_eq!(store.append_events(vec![]).unwrap(), 0);
        let n = store
            .append_events(vec![
                ev(1, "a", LogLevel::Info, "x"),
                ev(2, "b", LogLevel::Warn, "y"),
                ev(3, "c", LogLevel::Error, "z"),
            ])
            .unwrap();
        assert_eq!(n, 3);
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn rejects_empty_service() {
        let store = TelemetryStore::new();
        let err = store.append_events(vec![ev(1, " ", LogLevel::Info, "x")]).unwrap_err();
        assert!(matches!(err, TelemetryError::InvalidEvent(_)));
    }

    #[test]
    fn min_level_error_filter() {
        let store = TelemetryStore::new();
        store
            .append_events(vec![
                ev(1, "a", LogLevel::Info, "x"),
                ev(2, "a", LogLevel::Error, "boom"),
                ev(3, "a", LogLevel::Warn, "y"),
                ev(4, "a", LogLevel::Error, "bang"),
            ])
            .unwrap();
        let q = LogQuery::range(Timestamp(0), Timestamp(10)).min_level(LogLevel::Error);
        let got = store.query(&q, Timestamp(0)).unwrap();
        assert_eq!(got.iter().map(|e| e.event.message.as_str()).collect::<Vec<_>>(), ["boom", "bang"]);
    }

    #[test]
    fn empty_time_range() {
        let store = TelemetryStore::new();
        store.append_events(vec![ev(100, "a", LogLevel::Info, "x")]).unwrap();
        let q = LogQuery::range(Timestamp(0), Timestamp(10));
        assert!(store.query(&q, Timestamp(0)).unwrap().is_empty());
    }

    #[test]
    fn invalid_range() {
        let store = TelemetryStore::new();
        let q = LogQuery::range(Timestamp(10), Timestamp(0));
        assert!(matches!(store.query(&q, Timestamp(0)), Err(TelemetryError::InvalidQuery(_))));
        assert!(matches!(
            store.trace_correlation("request_id", "r", Timestamp(10), Timestamp(0), Timestamp(0)),
            Err(TelemetryError::InvalidQuery(_))
        ));
    }

    #[test]
    fn correlation_filter_matches_scan() {
        let store = TelemetryStore::new();
        let mut events = Vec::new();
        for i in 0..50 {
            let sid = if i % 3 == 0 { "s-42" } else { "s-7" };
            events.push(ev(i * 10, ["a", "b"][i as usize % 2], LogLevel::Info, "m").with_id("session_id", sid));
        }
        store.append_events(events).unwrap();
        let q = LogQuery::range(Timestamp(0), Timestamp(1000)).correlated("session_id", "s-42");
        let got = store.query(&q, Timestamp(0)).unwrap();
        assert_eq!(got, scan(&store.snapshot(), &q));
        assert_eq!(got.len(), 17);
    }

    #[test]
    fn trace_chain_hops() {
        let store = TelemetryStore::new();
        store
            .append_events(vec![
                ev(3, "C", LogLevel::Info, "c").with_id("request_id", "r-1"),
                ev(1, "A", LogLevel::Info, "a").with_id("request_id", "r-1"),
                ev(2, "B", LogLevel::Info, "b").with_id("request_id", "r-1"),
                ev(2, "B", LogLevel::Info, "other").with_id("request_id", "r-2"),
            ])
            .unwrap();
        let chain = store.trace_correlation("request_id", "r-1", Timestamp(0), Timestamp(10), Timestamp(0)).unwrap();
        assert_eq!(chain.hops, ["A", "B", "C"]);
        let single = store.trace_correlation("request_id", "r-2", Timestamp(0), Timestamp(10), Timestamp(0)).unwrap();
        assert_eq!(single.hops, ["B"]);
        let none = store.trace_correlation("request_id", "r-9", Timestamp(0), Timestamp(10), Timestamp(0)).unwrap();
        assert!(none.hops.is_empty());
    }

    #[test]
    fn throttled_query_then_backoff() {
        let store = TelemetryStore::new();
        store.append_events(vec![ev(1, "a", LogLevel::Error, "x")]).unwrap();
        store.set_rate_limit(Some(RateLimitConfig::new(1, 1.0).unwrap()));
        let q = LogQuery::range(Timestamp(0), Timestamp(10));
        assert!(store.query(&q, Timestamp(0)).is_ok());
        assert_eq!(store.query(&q, Timestamp(0)), Err(TelemetryError::Throttled { retry_after_ms: 1000 }));

        let rt = ManualRuntime::new(Timestamp(0));
        let mut stats = ThrottleStats::default();
        let got = with_backoff(&rt, RetryPolicy::default(), &mut stats, |now| store.query(&q, now)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(stats.retries, 1);
        assert_eq!(rt.now(), Timestamp(1000));
    }

    #[test]
    fn backoff_gives_up() {
        let rt = ManualRuntime::new(Timestamp(0));
        let mut stats = ThrottleStats::default();
        let res: Result<(), _> = with_backoff(&rt, RetryPolicy { max_retries: 10 }, &mut stats, |_| {
            Err(TelemetryError::Throttled { retry_after_ms: 5 })
        });
        assert_eq!(res, Err(TelemetryError::LogRetrievalUnavailable { retries: 10 }));
        assert_eq!(stats.calls, 11);
    }

    #[test]
    fn paging_concatenates_pages() {
        let store = TelemetryStore::new();
        store.append_events((0..23).map(|i| ev(i, "a", LogLevel::Error, "x")).collect()).unwrap();
        let rt = ManualRuntime::new(Timestamp(0));
        let mut stats = ThrottleStats::default();
        let q = LogQuery::range(Timestamp(0), Timestamp(100)).limit(20);
        let got = query_paged(&store, &rt, &q, 5, RetryPolicy::default(), &mut stats).unwrap();
        assert_eq!(got, scan(&store.snapshot(), &q));
        assert_eq!(stats.calls, 4);
        let q_all = LogQuery::range(Timestamp(0), Timestamp(100));
        let got = query_paged(&store, &rt, &q_all, 5, RetryPolicy::default(), &mut stats).unwrap();
        assert_eq!(got.len(), 23);
    }

    #[test]
    fn file_backed_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        {
            let store = TelemetryStore::open(&path).unwrap();
            store.append_events(vec![ev(5, "a", LogLevel::Warn, "w").with_field("locale", "en-US")]).unwrap();
        }
        let store = TelemetryStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.snapshot()[0].event.fields["locale"], "en-US");
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"ts\":5"));
    }
}
