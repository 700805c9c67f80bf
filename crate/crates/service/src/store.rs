//! Content-addressed raster store and the LRU/TTL session store.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use contourforge::levelset::{EmbeddingState, EvolutionParams, Evolver, StallTracker};
use contourforge::raster::io::{decode_fpm, decode_netpbm};
use contourforge::{Polygon, ScalarField};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

#[derive(Debug)]
pub struct StoredMap {
    pub id: String,
    pub format: &'static str,
    pub field: ScalarField,
    pub bytes: Vec<u8>,
}

impl StoredMap {
    /// Decodes FPM1, PGM (P5) or PPM (P6); Netpbm images become gray in `[0, 1]`.
    pub fn decode(bytes: Vec<u8>) -> contourforge::Result<Self> {
        let (format, field) = if bytes.starts_with(b"FPM1") {
            ("fpm", decode_fpm(&bytes)?)
        } else {
            let img = decode_netpbm(&bytes)?;
            let format = if img.samples_per_pixel == 1 { "pgm" } else { "ppm" };
            (format, img.to_gray_field())
        };
        Ok(Self {
            id: content_id(&bytes),
            format,
            field,
            bytes,
        })
    }

    pub fn content_type(&self) -> &'static str {
        match self.format {
            "pgm" => "image/x-portable-graymap",
            "ppm" => "image/x-portable-pixmap",
            _ => "application/octet-stream",
        }
    }
}

pub fn content_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Session {
    pub id: String,
    pub map: Arc<StoredMap>,
    pub polygon: Polygon,
    pub params: EvolutionParams,
    pub evolver: Evolver,
    pub state: EmbeddingState,
    pub tracker: StallTracker,
}

impl Session {
    pub fn converged(&self) -> bool {
        self.tracker.stalled()
    }
}

pub type SharedSession = Arc<Mutex<Session>>;

struct Entry {
    session: SharedSession,
    last_access: Instant,
    /// Access order; ties in `last_access` are common.
    tick: u64,
}

/// Sessions evicted least-recently-used beyond `capacity` and after
/// `ttl` without access.
pub struct SessionStore {
    entries: HashMap<String, Entry>,
    capacity: usize,
    ttl: Duration,
    clock: u64,
}

impl SessionStore {
    pub fn new(capacity: usize, ttl: Duration) -> Self {
        Self {
            entries: HashMap::new(),
            capacity: capacity.max(1),
            ttl,
            clock: 0,
        }
    }

    fn purge_expired(&mut self, now: Instant) {
        let ttl = self.ttl;
        self.entries.retain(|_, e| now.duration_since(e.last_access) < ttl);
    }

    pub fn insert(&mut self, id: String, session: SharedSession) {
        let now = Instant::now();
        self.purge_expired(now);
        while self.entries.len() >= self.capacity {
            let oldest = self
                .entries
                .iter()
                .min_by_key(|(_, e)| e.tick)
                .map(|(k, _)| k.clone())
                .expect("store is non-empty");
            self.entries.remove(&oldest);
        }
        self.clock += 1;
        self.entries.insert(
            id,
            Entry {
                session,
                last_access: now,
                tick: self.clock,
            },
        );
    }

    pub fn get(&mut self, id: &str) -> Option<SharedSession> {
        let now = Instant::now();
        self.purge_expired(now);
        self.clock += 1;
        let tick = self.clock;
        self.entries.get_mut(id).map(|e| {
            e.last_access = now;
            e.tick = tick;
            e.session.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
