//! Event logs, sample construction and the synthetic planted-cycle generator.

mod synthetic;

pub use synthetic::{generate_synthetic, CategoryProfile, GroundTruth, Peak, RtcProfile, SyntheticLog, SyntheticSpec};

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved model item id for padded behavior slots.
pub const PAD_ITEM: usize = 0;

pub const EVENT_LOG_HEADER: [&str; 4] = ["user_id", "item_id", "timestamp", "label"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    pub label: Option<u8>,
}

impl EventRecord {
    pub fn click(user: impl Into<String>, item: impl Into<String>, timestamp: i64) -> Self {
        Self {
            user_id: user.into(),
            item_id: item.into(),
            timestamp,
            label: Some(1),
        }
    }

    /// Rows without a label count as interactions.
    pub fn is_positive(&self) -> bool {
        self.label != Some(0)
    }
}

/// Validated interaction records with interned user and item vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    records: Vec<EventRecord>,
    items: Vec<String>,
    item_index: HashMap<String, usize>,
    users: Vec<String>,
    user_index: HashMap<String, usize>,
}

impl EventLog {
    pub fn new(records: Vec<EventRecord>) -> Result<Self> {
        Self::with_items(records, &[])
    }

    /// Builds a log whose item vocabulary starts with `universe` (in order) and is
    /// extended by any further items in `records`, in first-seen order.
    pub fn with_items(records: Vec<EventRecord>, universe: &[String]) -> Result<Self> {
        let mut log = Self {
            records: Vec::with_capacity(records.len()),
            items: Vec::new(),
            item_index: HashMap::new(),
            users: Vec::new(),
            user_index: HashMap::new(),
        };
        for item in universe {
            log.intern_item(item);
        }
        for r in records {
            if r.timestamp < 0 {
                return Err(Error::Data(format!("negative timestamp {}", r.timestamp)));
            }
            if matches!(r.label, Some(l) if l > 1) {
                return Err(Error::Data(format!("label {:?} is not binary", r.label)));
            }
            log.intern_item(&r.item_id);
            if !log.user_index.contains_key(&r.user_id) {
                log.user_index.insert(r.user_id.clone(), log.users.len());
                log.users.push(r.user_id.clone());
            }
            log.records.push(r);
        }
        Ok(log)
    }

    fn intern_item(&mut self, item: &str) {
        if !self.item_index.contains_key(item) {
            self.item_index.insert(item.to_string(), self.items.len());
            self.items.push(item.to_string());
        }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    /// Dense vocabulary index of an item id.
    pub fn item_index(&self, item: &str) -> Option<usize> {
        self.item_index.get(item).copied()
    }

    pub fn user_index(&self, user: &str) -> Option<usize> {
        self.user_index.get(user).copied()
    }

    /// Model item id (vocabulary index shifted past [`PAD_ITEM`]).
    pub fn model_item(&self, item: &str) -> Option<usize> {
        self.item_index(item).map(|i| i + 1)
    }

    /// Positive interactions of each user as `(model item, timestamp)`, sorted by
    /// time then item, users in vocabulary order.
    pub fn positive_histories(&self) -> Vec<Vec<(usize, i64)>> {
        let mut out = vec![Vec::new(); self.users.len()];
        for r in self.records.iter().filter(|r| r.is_positive()) {
            out[self.user_index[&r.user_id]].push((self.item_index[&r.item_id] + 1, r.timestamp));
        }
        for h in &mut out {
            h.sort_by_key(|&(item, t)| (t, item));
        }
        out
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wtr.write_record(EVENT_LOG_HEADER)?;
        for r in &self.records {
            let label = r.label.map(|l| l.to_string()).unwrap_or_default();
            wtr.write_record([r.user_id.as_str(), r.item_id.as_str(), &r.timestamp.to_string(), &label])?;
        }
        wtr.flush().map_err(|e| Error::io("<event log>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub log: EventLog,
    pub rejected: usize,
}

/// Parses a delimiter-separated event log whose header names the four columns
/// (in any order). Rows that fail to parse are counted and skipped.
pub fn ingest_reader(r: impl Read) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name}")))
    };
    let [cu, ci, ct, cl] = [col("user_id")?, col("item_id")?, col("timestamp")?, col("label")?];
    let mut records = Vec::new();
    let mut rejected = 0;
    for row in rdr.records() {
        let Ok(row) = row else {
            rejected += 1;
            continue;
        };
        let parsed = (|| {
            let user = row.get(cu).filter(|s| !s.is_empty())?;
            let item = row.get(ci).filter(|s| !s.is_empty())?;
            let ts: i64 = row.get(ct)?.parse().ok().filter(|&t| t >= 0)?;
            let label = match row.get(cl).unwrap_or("") {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                _ => return None,
            };
            Some(EventRecord {
                user_id: user.to_string(),
                item_id: item.to_string(),
                timestamp: ts,
                label,
            })
        })();
        match parsed {
            Some(r) => records.push(r),
            None => rejected += 1,
        }
    }
    Ok(Ingested {
        log: EventLog::new(records)?,
        rejected,
    })
}

pub fn ingest(path: &Path) -> Result<Ingested> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(std::io::BufReader::new(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Behavior {
    pub item: usize,
    pub timestamp: i64,
}

/// One training or evaluation instance: history, target item/time, label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub user: usize,
    /// Oldest first; at most the configured maximum length. Padding is added at
    /// batch time.
    pub behaviors: Vec<Behavior>,
    pub target_item: usize,
    pub target_time: i64,
    pub label: u8,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Data(format!("label {} is not binary", self.label)));
        }
        let mut prev = i64::MIN;
        for b in &self.behaviors {
            if b.item == PAD_ITEM {
                return Err(Error::Data("padding item inside unpadded behaviors".into()));
            }
            if b.timestamp < prev || b.timestamp > self.target_time {
                return Err(Error::Data(format!(
                    "behavior timestamps must be sorted and not after the target time (user {})",
                    self.user
                )));
            }
            prev = b.timestamp;
        }
        Ok(())
    }

    /// Left-padded item ids and timestamps of length `len`, plus the validity mask.
    /// Padding slots carry [`PAD_ITEM`] and the target time.
    pub fn padded(&self, len: usize) -> (Vec<usize>, Vec<i64>, Vec<bool>) {
        let keep = &self.behaviors[self.behaviors.len().saturating_sub(len)..];
        let pad = len - keep.len();
        let mut items = vec![PAD_ITEM; pad];
        let mut times = vec![self.target_time; pad];
        let mut valid = vec![false; pad];
        for b in keep {
            items.push(b.item);
            times.push(b.timestamp);
            valid.push(true);
        }
        (items, times, valid)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub excluded_users: usize,
    pub skipped_negatives: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Size of the model item table, including the padding row.
    pub num_items: usize,
    pub users: Vec<String>,
    pub stats: BuildStats,
}

/// Builds positive/negative samples with a leave-last-out split.
///
/// Every positive interaction becomes a sample whose behaviors are the user's most
/// recent `max_len` earlier interactions. Each positive is paired with
/// `negative_ratio` negatives drawn uniformly from items the user never interacted
/// with; negatives share the positive's history and timestamp. The user's final
/// interaction and its negatives form the test set.
pub fn build_samples(log: &EventLog, max_len: usize, negative_ratio: usize, seed: u64) -> Result<Dataset> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let num_items = log.items().len() + 1;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut stats = BuildStats::default();
    for (user, history) in log.positive_histories().into_iter().enumerate() {
        if history.len() < 2 {
            stats.excluded_users += 1;
            continue;
        }
        let seen: BTreeSet<usize> = history.iter().map(|&(i, _)| i).collect();
        let candidates: Vec<usize> = (1..num_items).filter(|i| !seen.contains(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(user as u64);
        let last = history.len() - 1;
        for (k, &(item, t)) in history.iter().enumerate() {
            let behaviors: Vec<Behavior> = history[k.saturating_sub(max_len)..k]
                .iter()
                .map(|&(item, timestamp)| Behavior { item, timestamp })
                .collect();
            let split = if k == last { &mut test } else { &mut train };
            let positive = Sample {
                user,
                behaviors,
                target_item: item,
                target_time: t,
                label: 1,
            };
            for _ in 0..negative_ratio {
                if candidates.is_empty() {
                    stats.skipped_negatives += 1;
                    continue;
                }
                let neg = candidates[rng.random_range(0..candidates.len())];
                split.push(Sample {
                    target_item: neg,
                    label: 0,
                    ..positive.clone()
                });
            }
            split.push(positive);
        }
    }
    Ok(Dataset {
        train,
        test,
        num_items,
        users: log.users().to_vec(),
        stats,
    })
}
