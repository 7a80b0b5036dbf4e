//! Score filtering plus uniform sampling in one streaming pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::detector::{image_score, FaceDetector};
use super::manifest::{ManifestHeader, ManifestRecord, Reject, SCORE_RULE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub target_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_threshold() -> f64 {
    0.9
}

impl CurateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// Algorithm R over a stream, keeping each item's stream index.
#[derive(Debug)]
pub struct Reservoir<T> {
    capacity: usize,
    items: Vec<(u64, T)>,
    seen: u64,
    peak: usize,
    rng: ChaCha8Rng,
}

impl<T> Reservoir<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self { capacity, items: Vec::with_capacity(capacity), seen: 0, peak: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn offer(&mut self, index: u64, item: T) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push((index, item));
        } else if self.capacity > 0 {
            let j = self.rng.random_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.items[j as usize] = (index, item);
            }
        }
        self.peak = self.peak.max(self.items.len());
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Largest number of items held at once.
    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn into_items(self) -> Vec<(u64, T)> {
        self.items
    }
}

#[derive(Debug)]
pub struct CurateOutcome {
    /// Sampled records in stream order.
    pub records: Vec<ManifestRecord>,
    pub rejects: Vec<Reject>,
    pub header: ManifestHeader,
    pub peak_held: usize,
    pub warnings: Vec<String>,
}

fn finish(
    mut picked: Vec<(u64, ManifestRecord)>,
    rejects: Vec<Reject>,
    cfg: &CurateConfig,
    seen: u64,
    qualifying: u64,
    peak_held: usize,
) -> CurateOutcome {
    picked.sort_by_key(|(i, _)| *i);
    let mut warnings = Vec::new();
    if qualifying == 0 {
        warnings.push(format!("no record scored above {}; output is empty", cfg.threshold));
    } else if (qualifying as usize) < cfg.target_size {
        warnings.push(format!(
            "only {qualifying} records qualify for a target of {}; keeping all of them",
            cfg.target_size
        ));
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    let header = ManifestHeader {
        threshold: cfg.threshold,
        score_rule: SCORE_RULE.into(),
        seed: cfg.seed,
        target_size: cfg.target_size,
        seen,
        qualifying,
        rejected: rejects.len() as u64,
    };
    CurateOutcome { records: picked.into_iter().map(|(_, r)| r).collect(), rejects, header, peak_held, warnings }
}

struct ShardState {
    reservoir: Reservoir<ManifestRecord>,
    rejects: Vec<Reject>,
    seen: u64,
}

fn scan<I>(input: I, cfg: &CurateConfig, seed: u64, detector: &dyn FaceDetector) -> ShardState
where
    I: IntoIterator<Item = std::result::Result<ManifestRecord, Reject>>,
{
    let mut reservoir = Reservoir::new(cfg.target_size, seed);
    let mut rejects = Vec::new();
    let mut seen = 0u64;
    for (i, item) in input.into_iter().enumerate() {
        seen += 1;
        match item {
            Ok(record) => match detector.detect(&record) {
                Ok(dets) => {
                    if image_score(&dets) > cfg.threshold {
                        reservoir.offer(i as u64, record);
                    }
                }
                Err(reason) => rejects.push(Reject {
                    line: i as u64 + 1,
                    reason,
                    raw: record.to_line(),
                    record: Some(record),
                }),
            },
            Err(rej) => rejects.push(rej),
        }
    }
    ShardState { reservoir, rejects, seen }
}

/// Keeps records whose best face scores strictly above the threshold and
/// samples `target_size` of them uniformly without replacement.
pub fn curate_manifest<I>(input: I, cfg: &CurateConfig, detector: &dyn FaceDetector) -> Result<CurateOutcome>
where
    I: IntoIterator<Item = std::result::Result<ManifestRecord, Reject>>,
{
    cfg.validate()?;
    let state = scan(input, cfg, cfg.seed, detector);
    let qualifying = state.reservoir.seen();
    let peak = state.reservoir.peak();
    Ok(finish(state.reservoir.into_items(), state.rejects, cfg, state.seen, qualifying, peak))
}

/// Curates several shards in parallel and merges their reservoirs into one
/// uniform sample. The result depends only on the seed and shard layout.
pub fn curate_sharded<I>(shards: Vec<I>, cfg: &CurateConfig, detector: &dyn FaceDetector) -> Result<CurateOutcome>
where
    I: IntoIterator<Item = std::result::Result<ManifestRecord, Reject>> + Send,
{
    cfg.validate()?;
    let states: Vec<ShardState> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .into_iter()
            .enumerate()
            .map(|(k, shard)| {
                let seed = cfg.seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                scope.spawn(move || scan(shard, cfg, seed, detector))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("curation worker panicked")).collect()
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut remaining: Vec<u64> = states.iter().map(|s| s.reservoir.seen()).collect();
    let qualifying: u64 = remaining.iter().sum();
    let seen: u64 = states.iter().map(|s| s.seen).sum();
    let peak: usize = states.iter().map(|s| s.reservoir.peak()).sum();
    let mut offset = 0u64;
    let mut pools: Vec<Vec<(u64, ManifestRecord)>> = Vec::new();
    let mut rejects = Vec::new();
    for s in states {
        let base = offset;
        offset += s.seen;
        pools.push(s.reservoir.into_items().into_iter().map(|(i, r)| (base + i, r)).collect());
        rejects.extend(s.rejects.into_iter().map(|mut r| {
            r.line += base;
            r
        }));
    }
    let take = (cfg.target_size as u64).min(qualifying);
    let mut picked = Vec::with_capacity(take as usize);
    for _ in 0..take {
        let total: u64 = remaining.iter().sum();
        let mut r = rng.random_range(0..total);
        let k = remaining
            .iter()
            .position(|&n| {
                if r < n {
                    true
                } else {
                    r -= n;
                    false
                }
            })
            .expect("draw falls in some shard");
        remaining[k] -= 1;
        let j = rng.random_range(0..pools[k].len());
        picked.push(pools[k].swap_remove(j));
    }
    Ok(finish(picked, rejects, cfg, seen, qualifying, peak))
}
