//! Dataset ingestion: rating triples, the social graph, interaction
//! filtering and cross-validation splits.
//!
//! Raw ids are remapped to contiguous indices in first-appearance order.
//! The social file is loaded against the rating user map, so both parties
//! index the same user space.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub value: f64,
}

/// Deduplicated rating triples with contiguous ids and fold labels.
#[derive(Clone, Debug)]
pub struct RatingDataset {
    pub ratings: Vec<Rating>,
    /// Fold label per rating, parallel to `ratings`; empty until split.
    pub folds: Vec<u8>,
    pub num_users: usize,
    pub num_items: usize,
    /// Raw ids in index order, for reporting.
    pub user_ids: Vec<i64>,
    pub item_ids: Vec<i64>,
    /// Duplicate (user, item) pairs dropped during loading (last kept).
    pub duplicates_dropped: usize,
}

impl RatingDataset {
    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// Indices of the train and test ratings for one held-out fold.
    pub fn split(&self, fold: u8) -> (Vec<usize>, Vec<usize>) {
        assert_eq!(self.folds.len(), self.ratings.len(), "dataset not split");
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.folds.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Sparse symmetric user-user strength matrix over the rating user index.
#[derive(Clone, Debug, Default)]
pub struct SocialGraph {
    /// Per-user sorted adjacency (neighbor, strength); symmetric, no loops.
    neighbors: Vec<Vec<(u32, f64)>>,
    /// Relations seen in the raw file before restriction to known users.
    pub raw_relations: usize,
}

impl SocialGraph {
    pub fn empty(num_users: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); num_users],
            raw_relations: 0,
        }
    }

    pub fn num_users(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, user: u32) -> &[(u32, f64)] {
        &self.neighbors[user as usize]
    }

    pub fn degree(&self, user: u32) -> usize {
        self.neighbors[user as usize].len()
    }

    /// Undirected edge count after symmetrization.
    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn strength(&self, a: u32, b: u32) -> f64 {
        self.neighbors[a as usize]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, w)| w)
            .unwrap_or(0.0)
    }

    /// Insert or raise (max) the symmetric strength of an edge.
    pub fn add_edge(&mut self, a: u32, b: u32, w: f64) {
        if a == b {
            return;
        }
        for (from, to) in [(a, b), (b, a)] {
            let row = &mut self.neighbors[from as usize];
            match row.iter_mut().find(|(n, _)| *n == to) {
                Some((_, old)) => *old = old.max(w),
                None => row.push((to, w)),
            }
        }
    }

    pub fn sort(&mut self) {
        for row in &mut self.neighbors {
            row.sort_unstable_by_key(|&(n, _)| n);
        }
    }
}

fn tokenize(line: &str) -> Vec<&str> {
    line.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|t| !t.is_empty())
        .collect()
}

/// Load "user item rating" triples (whitespace- or comma-delimited).
/// Duplicate (user, item) pairs keep the last occurrence.
pub fn load_ratings(path: &Path) -> Result<RatingDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_ratings(&text, &path.display().to_string())
}

pub fn parse_ratings(text: &str, source: &str) -> Result<RatingDataset> {
    let mut user_map: HashMap<i64, u32> = HashMap::new();
    let mut item_map: HashMap<i64, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
    let mut ratings: Vec<Rating> = Vec::new();
    let mut duplicates = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens = tokenize(line);
        if tokens.len() < 3 {
            return Err(Error::Parse {
                path: source.into(),
                line: lineno + 1,
                msg: format!("expected 'user item rating', got {line:?}"),
            });
        }
        let parse_id = |t: &str, what: &str| -> Result<i64> {
            t.parse().map_err(|_| Error::Parse {
                path: source.into(),
                line: lineno + 1,
                msg: format!("bad {what} id {t:?}"),
            })
        };
        let raw_user = parse_id(tokens[0], "user")?;
        let raw_item = parse_id(tokens[1], "item")?;
        let value: f64 = tokens[2].parse().map_err(|_| Error::Parse {
            path: source.into(),
            line: lineno + 1,
            msg: format!("bad rating {:?}", tokens[2]),
        })?;
        let user = *user_map.entry(raw_user).or_insert_with(|| {
            user_ids.push(raw_user);
            (user_ids.len() - 1) as u32
        });
        let item = *item_map.entry(raw_item).or_insert_with(|| {
            item_ids.push(raw_item);
            (item_ids.len() - 1) as u32
        });
        match seen.entry((user, item)) {
            std::collections::hash_map::Entry::Occupied(slot) => {
                duplicates += 1;
                ratings[*slot.get()].value = value; // last occurrence wins
            }
            std::collections::hash_map::Entry::Vacant(slot) => {
                slot.insert(ratings.len());
                ratings.push(Rating { user, item, value });
            }
        }
    }
    if ratings.is_empty() {
        return Err(Error::Data(format!("{source}: no ratings")));
    }
    Ok(RatingDataset {
        ratings,
        folds: Vec::new(),
        num_users: user_ids.len(),
        num_items: item_ids.len(),
        user_ids,
        item_ids,
        duplicates_dropped: duplicates,
    })
}

/// Load "user user \[weight\]" relations restricted to users present in the
/// rating map; missing weights default to 1, self-loops are dropped, and the
/// matrix is symmetrized by max.
pub fn load_social(path: &Path, ds: &RatingDataset) -> Result<SocialGraph> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_social(&text, &path.display().to_string(), ds)
}

pub fn parse_social(text: &str, source: &str, ds: &RatingDataset) -> Result<SocialGraph> {
    let user_map: HashMap<i64, u32> = ds
        .user_ids
        .iter()
        .enumerate()
        .map(|(i, &raw)| (raw, i as u32))
        .collect();
    let mut graph = SocialGraph::empty(ds.num_users);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens = tokenize(line);
        if tokens.len() < 2 {
            return Err(Error::Parse {
                path: source.into(),
                line: lineno + 1,
                msg: format!("expected 'user user [weight]', got {line:?}"),
            });
        }
        let a: i64 = tokens[0].parse().map_err(|_| Error::Parse {
            path: source.into(),
            line: lineno + 1,
            msg: format!("bad user id {:?}", tokens[0]),
        })?;
        let b: i64 = tokens[1].parse().map_err(|_| Error::Parse {
            path: source.into(),
            line: lineno + 1,
            msg: format!("bad user id {:?}", tokens[1]),
        })?;
        let w: f64 = if tokens.len() >= 3 {
            tokens[2].parse().map_err(|_| Error::Parse {
                path: source.into(),
                line: lineno + 1,
                msg: format!("bad weight {:?}", tokens[2]),
            })?
        } else {
            1.0
        };
        graph.raw_relations += 1;
        if let (Some(&ua), Some(&ub)) = (user_map.get(&a), user_map.get(&b)) {
            graph.add_edge(ua, ub, w);
        }
    }
    graph.sort();
    Ok(graph)
}

/// Remove users and items with fewer than `threshold` ratings, cascading to
/// a fixpoint (removals can push other users/items under the threshold).
/// Ids are compacted afterwards. A threshold of 0 or 1 is the identity.
pub fn filter_min_interactions(ds: &RatingDataset, threshold: usize) -> Result<RatingDataset> {
    let mut keep: Vec<bool> = vec![true; ds.ratings.len()];
    if threshold > 1 {
        loop {
            let mut user_count = vec![0usize; ds.num_users];
            let mut item_count = vec![0usize; ds.num_items];
            for (i, r) in ds.ratings.iter().enumerate() {
                if keep[i] {
                    user_count[r.user as usize] += 1;
                    item_count[r.item as usize] += 1;
                }
            }
            let mut changed = false;
            for (i, r) in ds.ratings.iter().enumerate() {
                if keep[i]
                    && (user_count[r.user as usize] < threshold
                        || item_count[r.item as usize] < threshold)
                {
                    keep[i] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    let mut user_remap: HashMap<u32, u32> = HashMap::new();
    let mut item_remap: HashMap<u32, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut ratings = Vec::new();
    for (i, r) in ds.ratings.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let user = *user_remap.entry(r.user).or_insert_with(|| {
            user_ids.push(ds.user_ids[r.user as usize]);
            (user_ids.len() - 1) as u32
        });
        let item = *item_remap.entry(r.item).or_insert_with(|| {
            item_ids.push(ds.item_ids[r.item as usize]);
            (item_ids.len() - 1) as u32
        });
        ratings.push(Rating {
            user,
            item,
            value: r.value,
        });
    }
    if ratings.is_empty() {
        return Err(Error::Data(format!(
            "filtering at threshold {threshold} removed every rating"
        )));
    }
    Ok(RatingDataset {
        ratings,
        folds: Vec::new(),
        num_users: user_ids.len(),
        num_items: item_ids.len(),
        user_ids,
        item_ids,
        duplicates_dropped: ds.duplicates_dropped,
    })
}

/// Assign each rating to one of `k` near-equal folds, uniformly at random
/// given the seed. Fold sizes differ by at most one.
pub fn kfold_split(ds: &mut RatingDataset, k: u8, seed: u64) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut order: Vec<usize> = (0..ds.ratings.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![0u8; ds.ratings.len()];
    for (pos, &idx) in order.iter().enumerate() {
        folds[idx] = (pos % k as usize) as u8;
    }
    ds.folds = folds;
    Ok(())
}

/// Plain-text key=value manifest describing a raw dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub ratings_path: String,
    pub social_path: String,
    pub min_interactions: usize,
    pub folds: u8,
    pub seed: u64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut kv = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<String> {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("manifest missing {k}")))
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: String| {
            if Path::new(&p).is_absolute() {
                p
            } else {
                base.join(p).display().to_string()
            }
        };
        Ok(Self {
            ratings_path: resolve(get("ratings")?),
            social_path: resolve(get("social")?),
            min_interactions: kv
                .get("min_interactions")
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::Config("bad min_interactions".into()))
                })
                .transpose()?
                .unwrap_or(20),
            folds: kv
                .get("folds")
                .map(|v| v.parse().map_err(|_| Error::Config("bad folds".into())))
                .transpose()?
                .unwrap_or(5),
            seed: kv
                .get("seed")
                .map(|v| v.parse().map_err(|_| Error::Config("bad seed".into())))
                .transpose()?
                .unwrap_or(42),
            scale_min: kv
                .get("scale_min")
                .map(|v| v.parse().map_err(|_| Error::Config("bad scale_min".into())))
                .transpose()?
                .unwrap_or(0.5),
            scale_max: kv
                .get("scale_max")
                .map(|v| v.parse().map_err(|_| Error::Config("bad scale_max".into())))
                .transpose()?
                .unwrap_or(5.0),
        })
    }
}

/// Write a processed dataset directory: `ratings.tsv` (user item rating
/// fold), `social.tsv` (user user weight) and `meta.txt` key=value stats.
pub fn write_prepared(
    dir: &Path,
    ds: &RatingDataset,
    graph: &SocialGraph,
    meta_extra: &[(&str, String)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut ratings = String::new();
    for (r, &fold) in ds.ratings.iter().zip(&ds.folds) {
        writeln!(ratings, "{}\t{}\t{}\t{}", r.user, r.item, r.value, fold)
            .expect("write to string");
    }
    std::fs::write(dir.join("ratings.tsv"), ratings)?;

    let mut social = String::new();
    for u in 0..graph.num_users() as u32 {
        for &(v, w) in graph.neighbors(u) {
            if v > u {
                writeln!(social, "{u}\t{v}\t{w}").expect("write to string");
            }
        }
    }
    std::fs::write(dir.join("social.tsv"), social)?;

    let mut meta = String::new();
    writeln!(meta, "users={}", ds.num_users).unwrap();
    writeln!(meta, "items={}", ds.num_items).unwrap();
    writeln!(meta, "ratings={}", ds.len()).unwrap();
    writeln!(meta, "social_edges={}", graph.num_edges()).unwrap();
    writeln!(meta, "social_raw_relations={}", graph.raw_relations).unwrap();
    writeln!(meta, "duplicates_dropped={}", ds.duplicates_dropped).unwrap();
    for (k, v) in meta_extra {
        writeln!(meta, "{k}={v}").unwrap();
    }
    std::fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}

/// Load a directory produced by [`write_prepared`].
pub fn load_prepared(dir: &Path) -> Result<(RatingDataset, SocialGraph)> {
    let ratings_text = std::fs::read_to_string(dir.join("ratings.tsv"))
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join("ratings.tsv").display())))?;
    let mut ratings = Vec::new();
    let mut folds = Vec::new();
    let mut num_users = 0usize;
    let mut num_items = 0usize;
    for (lineno, line) in ratings_text.lines().enumerate() {
        let t = tokenize(line);
        if t.is_empty() {
            continue;
        }
        if t.len() != 4 {
            return Err(Error::Parse {
                path: dir.join("ratings.tsv").display().to_string(),
                line: lineno + 1,
                msg: "expected 'user item rating fold'".into(),
            });
        }
        let user: u32 = t[0].parse().map_err(|_| Error::Data("bad user".into()))?;
        let item: u32 = t[1].parse().map_err(|_| Error::Data("bad item".into()))?;
        let value: f64 = t[2].parse().map_err(|_| Error::Data("bad rating".into()))?;
        let fold: u8 = t[3].parse().map_err(|_| Error::Data("bad fold".into()))?;
        num_users = num_users.max(user as usize + 1);
        num_items = num_items.max(item as usize + 1);
        ratings.push(Rating { user, item, value });
        folds.push(fold);
    }
    if ratings.is_empty() {
        return Err(Error::Data(format!("{}: empty dataset", dir.display())));
    }
    let ds = RatingDataset {
        ratings,
        folds,
        num_users,
        num_items,
        user_ids: (0..num_users as i64).collect(),
        item_ids: (0..num_items as i64).collect(),
        duplicates_dropped: 0,
    };

    let social_text = std::fs::read_to_string(dir.join("social.tsv"))
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join("social.tsv").display())))?;
    let mut graph = SocialGraph::empty(num_users);
    for line in social_text.lines() {
        let t = tokenize(line);
        if t.is_empty() {
            continue;
        }
        let a: u32 = t[0]
            .parse()
            .map_err(|_| Error::Data("bad social user".into()))?;
        let b: u32 = t[1]
            .parse()
            .map_err(|_| Error::Data("bad social user".into()))?;
        let w: f64 = t[2].parse().map_err(|_| Error::Data("bad weight".into()))?;
        graph.raw_relations += 1;
        graph.add_edge(a, b, w);
    }
    graph.sort();
    Ok((ds, graph))
}
