//! Dataset directories and the planted block-model generator.
//!
//! A dataset directory holds `nodes.tsv` (`node_id<TAB>type`), `edges.tsv`
//! (`src<TAB>dst<TAB>type`) and `private_edge_types.txt` (one edge type name
//! per line).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{Hin, InteractionSchema};
use crate::rng::{stream, Purpose};

pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const PRIVATE_TYPES_FILE: &str = "private_edge_types.txt";

/// A loaded graph together with its user/item roles.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub hin: Hin,
    pub schema: InteractionSchema,
}

impl Dataset {
    pub fn new(hin: Hin) -> Result<Self> {
        let schema = InteractionSchema::infer(&hin)?;
        Ok(Dataset { hin, schema })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let types_path = dir.join(PRIVATE_TYPES_FILE);
        let text = fs::read_to_string(&types_path).map_err(|e| Error::io(&types_path, e))?;
        let private: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if private.is_empty() {
            return Err(Error::Schema(format!(
                "{} names no private edge types",
                types_path.display()
            )));
        }
        let hin = Hin::load(&dir.join(NODES_FILE), &dir.join(EDGES_FILE), &private)?;
        Self::new(hin)
    }

    /// Writes the graph in the directory layout [`Dataset::load`] reads.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hin = &self.hin;
        let mut nodes = String::new();
        for n in 0..hin.num_nodes() {
            let _ = writeln!(nodes, "{}\t{}", hin.node_name(n), hin.node_type_name(hin.node_type(n)));
        }
        let mut edges = String::new();
        for e in hin.edges() {
            let _ = writeln!(
                edges,
                "{}\t{}\t{}",
                hin.node_name(e.src),
                hin.node_name(e.dst),
                hin.edge_type_name(e.ty)
            );
        }
        let mut private = String::new();
        for t in hin.private_edge_types() {
            let _ = writeln!(private, "{}", hin.edge_type_name(t));
        }
        for (name, body) in [(NODES_FILE, nodes), (EDGES_FILE, edges), (PRIVATE_TYPES_FILE, private)] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Parameters of the planted block model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    pub intra: f64,
    pub inter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 200,
            items: 100,
            blocks: 10,
            intra: 0.2,
            inter: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Parses `key=value` lines with keys `users`, `items`, `blocks`,
    /// `intra`, `inter` and `seed`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = SynthSpec::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got {value:?}"));
            match key {
                "users" => s.users = value.parse().map_err(|_| bad("a nonnegative integer"))?,
                "items" => s.items = value.parse().map_err(|_| bad("a nonnegative integer"))?,
                "blocks" => s.blocks = value.parse().map_err(|_| bad("a nonnegative integer"))?,
                "intra" => s.intra = value.parse().map_err(|_| bad("a real number"))?,
                "inter" => s.inter = value.parse().map_err(|_| bad("a real number"))?,
                "seed" => s.seed = value.parse().map_err(|_| bad("a nonnegative integer"))?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.blocks == 0 {
            return Err(Error::Config("users, items and blocks must be at least 1".into()));
        }
        if self.blocks > self.items {
            return Err(Error::Config("blocks must not exceed items".into()));
        }
        if !(0.0..=1.0).contains(&self.intra) || !(0.0..=1.0).contains(&self.inter) {
            return Err(Error::Config("intra and inter must lie in [0, 1]".into()));
        }
        if self.intra <= self.inter {
            return Err(Error::Config("intra must exceed inter".into()));
        }
        Ok(())
    }

    /// Block of each item; blocks are contiguous and differ in size by at most one.
    pub fn block_of(&self, item: usize) -> usize {
        item * self.blocks / self.items
    }

    /// Mean user degree implied by the spec: each user prefers 1 to 3 blocks
    /// (capped at the block count) uniformly, and preferred blocks are
    /// chosen uniformly among all blocks.
    pub fn expected_degree(&self) -> f64 {
        let choices: Vec<usize> = (1..=3).map(|c| c.min(self.blocks)).collect();
        let mean_pref = choices.iter().sum::<usize>() as f64 / 3.0;
        let frac = mean_pref / self.blocks as f64;
        self.items as f64 * (frac * self.intra + (1.0 - frac) * self.inter)
    }
}

/// Samples a planted block-model graph: user nodes `U`, item nodes `B` and
/// one category node `C` per block, with private `U-B` interactions and
/// shared `B-C` membership edges.
pub fn gen_synth(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Purpose::Synth, &[]);
    let mut nodes = Vec::with_capacity(spec.users + spec.items + spec.blocks);
    nodes.extend((0..spec.users).map(|u| (format!("u{u}"), "U".to_string())));
    nodes.extend((0..spec.items).map(|i| (format!("b{i}"), "B".to_string())));
    nodes.extend((0..spec.blocks).map(|c| (format!("c{c}"), "C".to_string())));

    let mut edges = Vec::new();
    for u in 0..spec.users {
        let count = rng.random_range(1..=3usize).min(spec.blocks);
        let mut preferred = vec![false; spec.blocks];
        for b in sample(&mut rng, spec.blocks, count) {
            preferred[b] = true;
        }
        for i in 0..spec.items {
            let p = if preferred[spec.block_of(i)] {
                spec.intra
            } else {
                spec.inter
            };
            if rng.random::<f64>() < p {
                edges.push((format!("u{u}"), format!("b{i}"), "U-B".to_string()));
            }
        }
    }
    for i in 0..spec.items {
        edges.push((format!("b{i}"), format!("c{}", spec.block_of(i)), "B-C".to_string()));
    }
    Dataset::new(Hin::from_records(nodes, edges, &["U-B"])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::partition;

    #[test]
    fn spec_parse_and_validation() {
        let s = SynthSpec::parse("users=5\nitems=6\nblocks=2\nintra=0.5\ninter=0\nseed=4\n").unwrap();
        assert_eq!((s.users, s.items, s.blocks, s.seed), (5, 6, 2, 4));
        assert!(SynthSpec::parse("intra=0.1\ninter=0.2").is_err());
        assert!(SynthSpec::parse("intra=1.5").is_err());
        assert!(SynthSpec::parse("size=3").unwrap_err().to_string().contains("size"));
    }

    #[test]
    fn expected_degree_arithmetic() {
        // (1 + 2 + 3) / 3 = 2 preferred blocks of 10 items
        let s = SynthSpec::default();
        assert!((s.expected_degree() - (2.0 * 10.0 * 0.2 + 8.0 * 10.0 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn no_inter_block_interactions_when_inter_is_zero() {
        let spec = SynthSpec {
            inter: 0.0,
            intra: 0.6,
            ..SynthSpec::default()
        };
        let data = gen_synth(&spec).unwrap();
        let (views, _) = partition(&data.hin, &data.schema).unwrap();
        for v in &views {
            let blocks: std::collections::BTreeSet<usize> = v.items().iter().map(|&i| spec.block_of(i)).collect();
            assert!(blocks.len() <= 3);
        }
    }

    #[test]
    fn save_load_round_trip_is_byte_stable() {
        let spec = SynthSpec {
            users: 20,
            items: 12,
            blocks: 3,
            ..SynthSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        gen_synth(&spec).unwrap().save(dir.path()).unwrap();
        let first = fs::read(dir.path().join(EDGES_FILE)).unwrap();
        let again = tempfile::tempdir().unwrap();
        Dataset::load(dir.path()).unwrap().save(again.path()).unwrap();
        assert_eq!(first, fs::read(again.path().join(EDGES_FILE)).unwrap());
        let data = Dataset::load(dir.path()).unwrap();
        assert_eq!(data.schema.num_users(), 20);
        assert_eq!(data.schema.num_items(), 12);
    }

    #[test]
    fn missing_directory_is_io_error() {
        assert!(Dataset::load(Path::new("/nonexistent/data")).unwrap_err().is_io());
    }
}
