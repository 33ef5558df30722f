//! Recurrent experience replay.
//!
//! Records are grouped by episode. Each record carries the recurrent state
//! that was fed *into* its step at collection time, so a segment starting at
//! record `k` can be unrolled from `records[k].hidden` exactly as the actor
//! did. Sampling picks a train-window start uniformly over every valid
//! offset in the buffer; the burn-in prefix (if any) is the up-to
//! `burn_in_len` records that precede it in the same episode.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{Tape, Tensor};
use crate::nets::GruParams;
use crate::persist;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("record contains non-finite values")]
    NonFinite,
    #[error("episode {episode}: expected step {expected}, got {got}")]
    NonConsecutive { episode: u64, expected: usize, got: usize },
    #[error("episode {0} already terminated")]
    AfterTerminal(u64),
    #[error("no sampleable segment in the buffer")]
    Empty,
    #[error("unknown replay strategy `{0}`")]
    UnknownStrategy(String),
    #[error("invalid replay config: {0}")]
    Config(String),
    #[error("replay file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// How the initial recurrent state of a replayed sequence is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplayStrategy {
    /// Zero initial state, no burn-in.
    ZeroStart,
    /// Whole episodes from a zero state.
    Episode,
    /// Stored collection-time state, no burn-in.
    StoredState,
    /// Stored state followed by a gradient-free burn-in prefix.
    BurnIn,
}

impl ReplayStrategy {
    pub fn name(self) -> &'static str {
        match self {
            ReplayStrategy::ZeroStart => "zero-start",
            ReplayStrategy::Episode => "episode",
            ReplayStrategy::StoredState => "stored-state",
            ReplayStrategy::BurnIn => "burn-in",
        }
    }
}

impl fmt::Display for ReplayStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReplayStrategy {
    type Err = ReplayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero-start" => Ok(ReplayStrategy::ZeroStart),
            "episode" => Ok(ReplayStrategy::Episode),
            "stored-state" => Ok(ReplayStrategy::StoredState),
            "burn-in" => Ok(ReplayStrategy::BurnIn),
            other => Err(ReplayError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub burn_in_len: usize,
    pub train_len: usize,
    pub strategy: ReplayStrategy,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden_dim: usize,
}

impl ReplayConfig {
    pub fn new(obs_dim: usize, action_dim: usize, hidden_dim: usize) -> Self {
        Self {
            capacity: 1_000_000,
            burn_in_len: 10,
            train_len: 15,
            strategy: ReplayStrategy::BurnIn,
            obs_dim,
            action_dim,
            hidden_dim,
        }
    }

    /// Burn-in length actually used by the strategy.
    pub fn effective_burn_in(&self) -> usize {
        match self.strategy {
            ReplayStrategy::BurnIn => self.burn_in_len,
            _ => 0,
        }
    }
}

/// One environment step as seen by the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub obs: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub action: Vec<f64>,
    /// Observation emitted after the step (possibly obscured).
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Recurrent state entering this step, captured at collection time.
    pub hidden: Vec<f64>,
    pub episode_id: u64,
    pub step_index: usize,
}

/// A replayed window: `burn_in_len` prefix records followed by `train_len`
/// trainable records, all consecutive within one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSegment {
    pub records: Vec<StepRecord>,
    /// Initial recurrent state for unrolling `records[0]`.
    pub h0: Vec<f64>,
    pub burn_in_len: usize,
    pub train_len: usize,
}

impl SequenceSegment {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn burn_in(&self) -> &[StepRecord] {
        &self.records[..self.burn_in_len]
    }

    pub fn train(&self) -> &[StepRecord] {
        &self.records[self.burn_in_len..]
    }
}

#[derive(Debug, Clone)]
struct Episode {
    id: u64,
    records: Vec<StepRecord>,
    terminated: bool,
}

/// Episode-structured ring buffer with whole-episode eviction.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    episodes: VecDeque<Episode>,
    size: usize,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self, ReplayError> {
        if config.train_len == 0 {
            return Err(ReplayError::Config("train_len must be positive".into()));
        }
        if config.capacity == 0 {
            return Err(ReplayError::Config("capacity must be positive".into()));
        }
        Ok(Self {
            config,
            episodes: VecDeque::new(),
            size: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episode_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.episodes.iter().map(|e| e.id)
    }

    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.episodes.iter().flat_map(|e| e.records.iter())
    }

    fn check_dims(&self, r: &StepRecord) -> Result<(), ReplayError> {
        let c = &self.config;
        let dims = [
            ("record obs", c.obs_dim, r.obs.len()),
            ("record next_obs", c.obs_dim, r.next_obs.len()),
            ("record action", c.action_dim, r.action.len()),
            ("record prev_action", c.action_dim, r.prev_action.len()),
            ("record hidden", c.hidden_dim, r.hidden.len()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(ReplayError::Dim { what, expected, got });
            }
        }
        let finite = r
            .obs
            .iter()
            .chain(&r.next_obs)
            .chain(&r.action)
            .chain(&r.prev_action)
            .chain(&r.hidden)
            .all(|x| x.is_finite())
            && r.reward.is_finite();
        if !finite {
            return Err(ReplayError::NonFinite);
        }
        Ok(())
    }

    pub fn append(&mut self, record: StepRecord) -> Result<(), ReplayError> {
        self.check_dims(&record)?;
        match self.episodes.back_mut() {
            Some(ep) if ep.id == record.episode_id => {
                if ep.terminated {
                    return Err(ReplayError::AfterTerminal(ep.id));
                }
                let expected = ep.records.last().map_or(0, |r| r.step_index + 1);
                if record.step_index != expected {
                    return Err(ReplayError::NonConsecutive {
                        episode: ep.id,
                        expected,
                        got: record.step_index,
                    });
                }
                ep.terminated = record.done;
                ep.records.push(record);
            }
            _ => {
                if record.step_index != 0 {
                    return Err(ReplayError::NonConsecutive {
                        episode: record.episode_id,
                        expected: 0,
                        got: record.step_index,
                    });
                }
                self.episodes.push_back(Episode {
                    id: record.episode_id,
                    terminated: record.done,
                    records: vec![record],
                });
            }
        }
        self.size += 1;
        while self.size > self.config.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("non-empty");
            self.size -= old.records.len();
        }
        Ok(())
    }

    /// Number of valid train-window starts in an episode.
    fn valid_starts(&self, ep: &Episode) -> usize {
        let n = ep.records.len();
        let l = self.config.train_len;
        if self.config.strategy == ReplayStrategy::Episode {
            return usize::from(ep.terminated);
        }
        if !ep.terminated && n < self.config.burn_in_len + l {
            return 0;
        }
        if n >= l {
            n - l + 1
        } else {
            usize::from(ep.terminated)
        }
    }

    /// Total number of distinct segments that `sample_batch` can return.
    pub fn num_sampleable(&self) -> usize {
        self.episodes.iter().map(|e| self.valid_starts(e)).sum()
    }

    /// All valid `(episode_id, train_start)` pairs in sampling order.
    pub fn valid_segment_starts(&self) -> Vec<(u64, usize)> {
        let mut out = Vec::new();
        for ep in &self.episodes {
            for t in 0..self.valid_starts(ep) {
                out.push((ep.id, t));
            }
        }
        out
    }

    fn build_segment(&self, ep: &Episode, train_start: usize) -> SequenceSegment {
        let c = &self.config;
        let zeros = vec![0.0; c.hidden_dim];
        if c.strategy == ReplayStrategy::Episode {
            return SequenceSegment {
                records: ep.records.clone(),
                h0: zeros,
                burn_in_len: 0,
                train_len: ep.records.len(),
            };
        }
        let burn = c.effective_burn_in().min(train_start);
        let first = train_start - burn;
        let end = (train_start + c.train_len).min(ep.records.len());
        let records = ep.records[first..end].to_vec();
        let h0 = match c.strategy {
            ReplayStrategy::ZeroStart => zeros,
            _ => records[0].hidden.clone(),
        };
        SequenceSegment {
            train_len: end - train_start,
            burn_in_len: burn,
            records,
            h0,
        }
    }

    /// Segment for a specific `(episode_id, train_start)` pair.
    pub fn segment_at(&self, episode_id: u64, train_start: usize) -> Option<SequenceSegment> {
        let ep = self.episodes.iter().find(|e| e.id == episode_id)?;
        (train_start < self.valid_starts(ep)).then(|| self.build_segment(ep, train_start))
    }

    /// `batch_size` segments drawn uniformly, with replacement, over every
    /// valid train-window start.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<SequenceSegment>, ReplayError> {
        let counts: Vec<usize> = self.episodes.iter().map(|e| self.valid_starts(e)).collect();
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut total = 0;
        for c in &counts {
            total += c;
            cumulative.push(total);
        }
        if total == 0 {
            return Err(ReplayError::Empty);
        }
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let u = rng.random_range(0..total);
            let e = cumulative.partition_point(|&c| c <= u);
            let before = if e == 0 { 0 } else { cumulative[e - 1] };
            out.push(self.build_segment(&self.episodes[e], u - before));
        }
        Ok(out)
    }

    /// Writes `manifest.json` plus one little-endian `f32` file per field.
    pub fn dump(&self, dir: &Path) -> Result<(), ReplayError> {
        fs::create_dir_all(dir)?;
        let mut fields: [(&str, Vec<f64>); 7] = Default::default();
        let names = ["obs", "prev_action", "action", "next_obs", "reward", "done", "hidden"];
        for (slot, name) in fields.iter_mut().zip(names) {
            slot.0 = name;
        }
        for r in self.records() {
            fields[0].1.extend(&r.obs);
            fields[1].1.extend(&r.prev_action);
            fields[2].1.extend(&r.action);
            fields[3].1.extend(&r.next_obs);
            fields[4].1.push(r.reward);
            fields[5].1.push(if r.done { 1.0 } else { 0.0 });
            fields[6].1.extend(&r.hidden);
        }
        for (name, values) in &fields {
            persist::write_f32(&dir.join(format!("{name}.f32")), values)?;
        }
        let manifest = ReplayManifest {
            config: self.config,
            record_count: self.size,
            episodes: self
                .episodes
                .iter()
                .map(|e| EpisodeEntry {
                    id: e.id,
                    len: e.records.len(),
                    terminated: e.terminated,
                })
                .collect(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Reads a buffer written by [`ReplayBuffer::dump`]. Values come back
    /// rounded to `f32`.
    pub fn load(dir: &Path) -> Result<Self, ReplayError> {
        let manifest: ReplayManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let c = manifest.config;
        let n = manifest.record_count;
        let read = |name: &str, width: usize| persist::read_f32(&dir.join(format!("{name}.f32")), n * width);
        let obs = read("obs", c.obs_dim)?;
        let prev = read("prev_action", c.action_dim)?;
        let act = read("action", c.action_dim)?;
        let next = read("next_obs", c.obs_dim)?;
        let rew = read("reward", 1)?;
        let done = read("done", 1)?;
        let hidden = read("hidden", c.hidden_dim)?;
        let mut buf = ReplayBuffer::new(c)?;
        let mut i = 0;
        for ep in &manifest.episodes {
            for step in 0..ep.len {
                let slice = |v: &[f64], w: usize| v[i * w..(i + 1) * w].to_vec();
                buf.append(StepRecord {
                    obs: slice(&obs, c.obs_dim),
                    prev_action: slice(&prev, c.action_dim),
                    action: slice(&act, c.action_dim),
                    next_obs: slice(&next, c.obs_dim),
                    reward: rew[i],
                    done: done[i] != 0.0,
                    hidden: slice(&hidden, c.hidden_dim),
                    episode_id: ep.id,
                    step_index: step,
                })?;
                i += 1;
            }
        }
        Ok(buf)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeEntry {
    id: u64,
    len: usize,
    terminated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReplayManifest {
    config: ReplayConfig,
    record_count: usize,
    episodes: Vec<EpisodeEntry>,
}

/// Unrolls `gru` from `h0` over `records`, one sample at a time.
pub fn unroll_records(gru: &GruParams, h0: &[f64], records: &[StepRecord]) -> Vec<f64> {
    let mut h = h0.to_vec();
    for r in records {
        let mut tape = Tape::new();
        let vars = gru.bind(&mut tape, false);
        let row = |t: &mut Tape, v: &[f64]| t.constant(Tensor::new(vec![1, v.len()], v.to_vec()).expect("row"));
        let o = row(&mut tape, &r.obs);
        let a = row(&mut tape, &r.prev_action);
        let hv = row(&mut tape, &h);
        let out = gru.step(&mut tape, &vars, o, a, hv).expect("replay dims match the encoder");
        h = tape.value(out).data().to_vec();
    }
    h
}

/// Distance between the stored state entering the first train record and the
/// state the current encoder reaches from `h0` over the burn-in prefix.
pub fn staleness(segment: &SequenceSegment, gru: &GruParams) -> f64 {
    let replayed = unroll_records(gru, &segment.h0, segment.burn_in());
    let stored = &segment.records[segment.burn_in_len].hidden;
    replayed
        .iter()
        .zip(stored)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(ep: u64, step: usize, done: bool) -> StepRecord {
        StepRecord {
            obs: vec![step as f64, ep as f64],
            prev_action: vec![0.0],
            action: vec![0.5],
            next_obs: vec![step as f64 + 1.0, ep as f64],
            reward: -1.0,
            done,
            hidden: vec![step as f64 * 0.01; 3],
            episode_id: ep,
            step_index: step,
        }
    }

    fn cfg(strategy: ReplayStrategy) -> ReplayConfig {
        ReplayConfig {
            strategy,
            ..ReplayConfig::new(2, 1, 3)
        }
    }

    fn push_episode(buf: &mut ReplayBuffer, ep: u64, len: usize, terminated: bool) {
        for s in 0..len {
            buf.append(record(ep, s, terminated && s + 1 == len)).unwrap();
        }
    }

    #[test]
    fn single_record_is_not_sampleable() {
        let mut buf = ReplayBuffer::new(cfg(ReplayStrategy::BurnIn)).unwrap();
        buf.append(record(0, 0, false)).unwrap();
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.num_sampleable(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample_batch(4, &mut rng), Err(ReplayError::Empty)));
    }

    #[test]
    fn twenty_five_step_episode_starts() {
        let mut buf = ReplayBuffer::new(cfg(ReplayStrategy::BurnIn)).unwrap();
        push_episode(&mut buf, 0, 25, true);
        let starts = buf.valid_segment_starts();
        assert_eq!(starts.len(), 11);
        let full: Vec<_> = starts
            .iter()
            .map(|&(e, t)| buf.segment_at(e, t).unwrap())
            .filter(|s| s.len() == 25)
            .collect();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].records[0].step_index, 0);
        assert_eq!(full[0].burn_in_len, 10);
        // shorter-history starts keep the full train window
        for t in 0..10 {
            let s = buf.segment_at(0, t).unwrap();
            assert_eq!(s.burn_in_len, t);
            assert_eq!(s.train_len, 15);
            assert_eq!(s.records[0].step_index, 0);
        }
    }

    #[test]
    fn eviction_is_whole_episode() {
        let mut c = cfg(ReplayStrategy::BurnIn);
        c.capacity = 50;
        let mut buf = ReplayBuffer::new(c).unwrap();
        push_episode(&mut buf, 0, 30, true);
        push_episode(&mut buf, 1, 30, true);
        assert_eq!(buf.len(), 30);
        assert_eq!(buf.episode_ids().collect::<Vec<_>>(), vec![1]);
        assert!(buf.records().all(|r| r.episode_id == 1));
    }

    #[test]
    fn rejects_bad_records() {
        let mut buf = ReplayBuffer::new(cfg(ReplayStrategy::BurnIn)).unwrap();
        let mut r = record(0, 0, false);
        r.hidden = vec![0.0; 4];
        assert!(matches!(buf.append(r), Err(ReplayError::Dim { .. })));
        let mut r = record(0, 0, false);
        r.reward = f64::NAN;
        assert!(matches!(buf.append(r), Err(ReplayError::NonFinite)));
        buf.append(record(0, 0, false)).unwrap();
        assert!(matches!(
            buf.append(record(0, 2, false)),
            Err(ReplayError::NonConsecutive { .. })
        ));
        buf.append(record(0, 1, true)).unwrap();
        assert!(matches!(buf.append(record(0, 2, false)), Err(ReplayError::AfterTerminal(0))));
    }

    #[test]
    fn strategies_set_initial_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for strategy in [
            ReplayStrategy::ZeroStart,
            ReplayStrategy::StoredState,
            ReplayStrategy::BurnIn,
            ReplayStrategy::Episode,
        ] {
            let mut buf = ReplayBuffer::new(cfg(strategy)).unwrap();
            push_episode(&mut buf, 0, 60, true);
            push_episode(&mut buf, 1, 40, false);
            for seg in buf.sample_batch(64, &mut rng).unwrap() {
                match strategy {
                    ReplayStrategy::ZeroStart => {
                        assert!(seg.h0.iter().all(|&x| x == 0.0));
                        assert_eq!(seg.burn_in_len, 0);
                    }
                    ReplayStrategy::StoredState => {
                        assert_eq!(seg.burn_in_len, 0);
                        assert_eq!(seg.h0, seg.records[0].hidden);
                    }
                    ReplayStrategy::BurnIn => {
                        assert_eq!(seg.h0, seg.records[0].hidden);
                        if seg.records[0].step_index > 0 {
                            assert_eq!(seg.len(), 25);
                        }
                    }
                    ReplayStrategy::Episode => {
                        assert_eq!(seg.len(), 60);
                        assert!(seg.records.last().unwrap().done);
                    }
                }
            }
        }
    }

    #[test]
    fn short_terminated_episode_is_sampleable() {
        let mut buf = ReplayBuffer::new(cfg(ReplayStrategy::BurnIn)).unwrap();
        push_episode(&mut buf, 0, 7, true);
        assert_eq!(buf.num_sampleable(), 1);
        let s = buf.segment_at(0, 0).unwrap();
        assert_eq!((s.burn_in_len, s.train_len), (0, 7));
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut buf = ReplayBuffer::new(cfg(ReplayStrategy::BurnIn)).unwrap();
        push_episode(&mut buf, 0, 80, true);
        let a = buf.sample_batch(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = buf.sample_batch(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in ["zero-start", "episode", "stored-state", "burn-in"] {
            assert_eq!(s.parse::<ReplayStrategy>().unwrap().name(), s);
        }
        assert!("r2d2".parse::<ReplayStrategy>().is_err());
    }

    #[test]
    fn dump_and_load() {
        let mut buf = ReplayBuffer::new(cfg(ReplayStrategy::BurnIn)).unwrap();
        push_episode(&mut buf, 4, 30, true);
        push_episode(&mut buf, 5, 12, false);
        let dir = tempfile::tempdir().unwrap();
        buf.dump(dir.path()).unwrap();
        let back = ReplayBuffer::load(dir.path()).unwrap();
        assert_eq!(back.len(), buf.len());
        assert_eq!(back.valid_segment_starts(), buf.valid_segment_starts());
        for (a, b) in back.records().zip(buf.records()) {
            assert_eq!(a.done, b.done);
            assert_eq!(a.step_index, b.step_index);
            assert!((a.hidden[0] - b.hidden[0]).abs() < 1e-6);
        }
    }
}
