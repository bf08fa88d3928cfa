//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{PerturbConfig, PerturbMode};

/// Which interactions a client trains on locally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainPositives {
    /// The client's own interactions, which never leave it.
    Private,
    /// The client's published, perturbed interactions.
    Published,
}

impl FromStr for TrainPositives {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "private" => Ok(TrainPositives::Private),
            "published" => Ok(TrainPositives::Published),
            other => Err(Error::Config(format!("unknown positive source {other:?}"))),
        }
    }
}

/// Every tunable of a run. Unset keys take the defaults of [`RunConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub n_shared: usize,
    pub dim: usize,
    pub lr: f64,
    pub batch: usize,
    pub rounds: usize,
    pub eval_every: usize,
    /// Rounds without an HR@10 improvement before stopping; 0 disables.
    pub patience: usize,
    pub neg_per_pos: usize,
    pub pseudo_items: usize,
    pub ldp_clip: f64,
    pub ldp_noise: f64,
    pub max_neighbors: usize,
    pub seed: u64,
    /// Empty means the single path user-item-user.
    pub meta_paths_user: Vec<String>,
    /// Empty means the single path item-user-item.
    pub meta_paths_item: Vec<String>,
    pub mode: PerturbMode,
    /// Sampled negatives per evaluated user; 0 ranks against every
    /// non-interacted item.
    pub eval_negatives: usize,
    pub train_on: TrainPositives,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eps1: 1.0,
            eps2: 1.0,
            n_shared: 20,
            dim: 64,
            lr: 0.01,
            batch: 32,
            rounds: 300,
            eval_every: 10,
            patience: 50,
            neg_per_pos: 1,
            pseudo_items: 3,
            ldp_clip: 0.2,
            ldp_noise: 0.1,
            max_neighbors: 64,
            seed: 0,
            meta_paths_user: Vec::new(),
            meta_paths_item: Vec::new(),
            mode: PerturbMode::TwoStage,
            eval_negatives: 99,
            train_on: TrainPositives::Private,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected {expected}, got {value:?}")))
}

fn parse_paths(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl RunConfig {
    /// Parses config text. Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            const REAL: &str = "a real number";
            const COUNT: &str = "a nonnegative integer";
            match key {
                "eps1" => c.eps1 = parse_value(key, value, REAL)?,
                "eps2" => c.eps2 = parse_value(key, value, REAL)?,
                "n_shared" => c.n_shared = parse_value(key, value, COUNT)?,
                "dim" => c.dim = parse_value(key, value, COUNT)?,
                "lr" => c.lr = parse_value(key, value, REAL)?,
                "batch" => c.batch = parse_value(key, value, COUNT)?,
                "rounds" => c.rounds = parse_value(key, value, COUNT)?,
                "eval_every" => c.eval_every = parse_value(key, value, COUNT)?,
                "patience" => c.patience = parse_value(key, value, COUNT)?,
                "neg_per_pos" => c.neg_per_pos = parse_value(key, value, COUNT)?,
                "pseudo_items" => c.pseudo_items = parse_value(key, value, COUNT)?,
                "ldp_clip" => c.ldp_clip = parse_value(key, value, REAL)?,
                "ldp_noise" => c.ldp_noise = parse_value(key, value, REAL)?,
                "max_neighbors" => c.max_neighbors = parse_value(key, value, COUNT)?,
                "seed" => c.seed = parse_value(key, value, COUNT)?,
                "meta_paths_user" => c.meta_paths_user = parse_paths(value),
                "meta_paths_item" => c.meta_paths_item = parse_paths(value),
                "mode" => {
                    c.mode = value
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: expected two-stage or plain-rr, got {value:?}")))?
                }
                "eval_negatives" => c.eval_negatives = parse_value(key, value, COUNT)?,
                "train_on" => {
                    c.train_on = value
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: expected private or published, got {value:?}")))?
                }
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, what: &str| Err(Error::Config(format!("{key} must be {what}")));
        if !(self.eps1 > 0.0 && self.eps1.is_finite()) {
            return fail("eps1", "positive and finite");
        }
        if self.eps2.is_nan() || self.eps2 <= 0.0 {
            return fail("eps2", "positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "positive and finite");
        }
        if self.ldp_clip.is_nan() || self.ldp_clip <= 0.0 {
            return fail("ldp_clip", "positive");
        }
        if !(self.ldp_noise >= 0.0 && self.ldp_noise.is_finite()) {
            return fail("ldp_noise", "nonnegative and finite");
        }
        for (key, v) in [
            ("n_shared", self.n_shared),
            ("dim", self.dim),
            ("batch", self.batch),
            ("eval_every", self.eval_every),
            ("neg_per_pos", self.neg_per_pos),
            ("max_neighbors", self.max_neighbors),
        ] {
            if v == 0 {
                return fail(key, "at least 1");
            }
        }
        Ok(())
    }

    pub fn perturb_config(&self) -> Result<PerturbConfig> {
        PerturbConfig::new(self.eps1, self.eps2, self.mode)
    }

    /// Renders the config in the format [`RunConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let mode = match self.mode {
            PerturbMode::TwoStage => "two-stage",
            PerturbMode::PlainRr => "plain-rr",
        };
        let mut s = String::new();
        let _ = writeln!(s, "eps1={}", self.eps1);
        let _ = writeln!(s, "eps2={}", self.eps2);
        let _ = writeln!(s, "n_shared={}", self.n_shared);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "batch={}", self.batch);
        let _ = writeln!(s, "rounds={}", self.rounds);
        let _ = writeln!(s, "eval_every={}", self.eval_every);
        let _ = writeln!(s, "patience={}", self.patience);
        let _ = writeln!(s, "neg_per_pos={}", self.neg_per_pos);
        let _ = writeln!(s, "pseudo_items={}", self.pseudo_items);
        let _ = writeln!(s, "ldp_clip={}", self.ldp_clip);
        let _ = writeln!(s, "ldp_noise={}", self.ldp_noise);
        let _ = writeln!(s, "max_neighbors={}", self.max_neighbors);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "meta_paths_user={}", self.meta_paths_user.join(","));
        let _ = writeln!(s, "meta_paths_item={}", self.meta_paths_item.join(","));
        let _ = writeln!(s, "mode={mode}");
        let _ = writeln!(s, "eval_negatives={}", self.eval_negatives);
        let source = match self.train_on {
            TrainPositives::Private => "private",
            TrainPositives::Published => "published",
        };
        let _ = writeln!(s, "train_on={source}");
        s
    }
}
