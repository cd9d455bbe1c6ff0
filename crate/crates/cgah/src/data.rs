//! Rating and content ingestion, degree filtering, and per-user splitting.
//!
//! Ratings are stored with dual row/column indexes so both user-major and
//! item-major sweeps are cheap. The canonical on-disk interchange format is a
//! tsv of `(user, item, rating)` over re-indexed contiguous ids; the original
//! ids are kept in two-column map files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Input schema for rating files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingFormat {
    /// `userId::movieId::rating::timestamp`
    MovieLensDat,
    /// `user,item,rating,timestamp`
    AmazonCsv,
    /// `user<TAB>item<TAB>rating`
    Tsv,
}

impl RatingFormat {
    pub fn parse_name(name: &str) -> Result<Self> {
        match name {
            "movielens-dat" => Ok(Self::MovieLensDat),
            "amazon-csv" => Ok(Self::AmazonCsv),
            "tsv" => Ok(Self::Tsv),
            other => Err(Error::InvalidConfig(format!("unknown rating format `{other}`"))),
        }
    }
}

/// Sparse user-item ratings with dual row/column access.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    n_users: usize,
    n_items: usize,
    rows: Vec<Vec<(u32, f64)>>,
    cols: Vec<Vec<(u32, f64)>>,
    n_entries: usize,
}

impl RatingMatrix {
    /// Build from `(user, item, rating)` triples. Duplicate pairs are rejected.
    pub fn from_entries(
        n_users: usize,
        n_items: usize,
        entries: &[(u32, u32, f64)],
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_users];
        let mut cols = vec![Vec::new(); n_items];
        for &(u, i, r) in entries {
            if (u as usize) >= n_users || (i as usize) >= n_items {
                return Err(Error::IndexOutOfRange(format!(
                    "entry ({u}, {i}) outside {n_users} x {n_items}"
                )));
            }
            if !r.is_finite() {
                return Err(Error::InvalidValue(format!("non-finite rating for ({u}, {i})")));
            }
            rows[u as usize].push((i, r));
            cols[i as usize].push((u, r));
        }
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(i, _)| i);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidValue(format!("duplicate rating for user {u}")));
            }
        }
        for col in cols.iter_mut() {
            col.sort_unstable_by_key(|&(u, _)| u);
        }
        Ok(Self { n_users, n_items, rows, cols, n_entries: entries.len() })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.n_entries
    }

    pub fn is_empty(&self) -> bool {
        self.n_entries == 0
    }

    /// Ratings of one user as `(item, rating)`, sorted by item.
    pub fn user_ratings(&self, user: usize) -> &[(u32, f64)] {
        &self.rows[user]
    }

    /// Ratings of one item as `(user, rating)`, sorted by user.
    pub fn item_ratings(&self, item: usize) -> &[(u32, f64)] {
        &self.cols[item]
    }

    /// All entries in user-major order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(i, r)| (u as u32, i, r)))
    }

    pub fn get(&self, user: usize, item: usize) -> Option<f64> {
        self.rows[user]
            .binary_search_by_key(&(item as u32), |&(i, _)| i)
            .ok()
            .map(|idx| self.rows[user][idx].1)
    }

    /// Write as canonical tsv `(user, item, rating)`.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (u, i, r) in self.entries() {
            writeln!(w, "{u}\t{i}\t{r}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read back a canonical tsv written by [`RatingMatrix::write_tsv`].
    ///
    /// Dimensions are taken from the largest indexes present unless explicit
    /// ones are given (needed when trailing users/items have no entries).
    pub fn read_tsv(path: &Path, dims: Option<(usize, usize)>) -> Result<Self> {
        let raw = parse_ratings(path, RatingFormat::Tsv)?;
        let (mut n, mut m) = raw.iter().fold((0usize, 0usize), |(n, m), e| {
            (n.max(e.user_key.parse::<usize>().unwrap_or(0) + 1), m.max(e.item_key.parse::<usize>().unwrap_or(0) + 1))
        });
        if let Some((dn, dm)) = dims {
            n = dn;
            m = dm;
        }
        let entries: Vec<(u32, u32, f64)> = raw
            .iter()
            .map(|e| {
                let u = e.user_key.parse::<u32>().map_err(|_| Error::Parse {
                    line: e.line,
                    msg: format!("non-numeric user id `{}` in canonical tsv", e.user_key),
                })?;
                let i = e.item_key.parse::<u32>().map_err(|_| Error::Parse {
                    line: e.line,
                    msg: format!("non-numeric item id `{}` in canonical tsv", e.item_key),
                })?;
                Ok((u, i, e.rating))
            })
            .collect::<Result<_>>()?;
        Self::from_entries(n, m, &entries)
    }
}

/// Mapping from contiguous internal indices back to original string ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self { ids: Vec::new(), index: HashMap::new() }
    }

    pub fn get_or_insert(&mut self, key: &str) -> u32 {
        if let Some(&idx) = self.index.get(key) {
            return idx;
        }
        let idx = self.ids.len() as u32;
        self.ids.push(key.to_string());
        self.index.insert(key.to_string(), idx);
        idx
    }

    pub fn lookup(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn original(&self, idx: u32) -> Option<&str> {
        self.ids.get(idx as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Keep only the listed indices, in order, renumbering from zero.
    pub fn select(&self, kept: &[u32]) -> Self {
        let mut out = Self::new();
        for &old in kept {
            out.get_or_insert(&self.ids[old as usize]);
        }
        out
    }

    /// Two-column tsv: `index<TAB>original_id`.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (idx, id) in self.ids.iter().enumerate() {
            writeln!(w, "{idx}\t{id}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let mut out = Self::new();
        let reader = BufReader::new(File::open(path)?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let _idx = parts.next();
            let id = parts.next().ok_or(Error::Parse {
                line: lineno + 1,
                msg: "expected `index<TAB>id`".into(),
            })?;
            out.get_or_insert(id);
        }
        Ok(out)
    }
}

impl Default for IdMap {
    fn default() -> Self {
        Self::new()
    }
}

/// A rating file re-indexed to contiguous ids plus the id maps.
#[derive(Debug, Clone)]
pub struct IngestedRatings {
    pub matrix: RatingMatrix,
    pub users: IdMap,
    pub items: IdMap,
}

struct RawEntry {
    user_key: String,
    item_key: String,
    rating: f64,
    line: usize,
}

fn parse_ratings(path: &Path, format: RatingFormat) -> Result<Vec<RawEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            RatingFormat::MovieLensDat => line.split("::").collect(),
            RatingFormat::AmazonCsv => line.split(',').collect(),
            RatingFormat::Tsv => line.split('\t').collect(),
        };
        let min_fields = match format {
            RatingFormat::Tsv => 3,
            _ => 4,
        };
        if fields.len() < min_fields {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least {min_fields} fields, found {}", fields.len()),
            });
        }
        let rating: f64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad rating `{}`", fields[2]),
        })?;
        if !rating.is_finite() {
            return Err(Error::Parse { line: lineno, msg: "non-finite rating".into() });
        }
        out.push(RawEntry {
            user_key: fields[0].trim().to_string(),
            item_key: fields[1].trim().to_string(),
            rating,
            line: lineno,
        });
    }
    Ok(out)
}

/// Parse a rating file, re-index ids contiguously in order of first
/// appearance, and build the dual-indexed matrix.
///
/// Duplicate `(user, item)` pairs keep the last occurrence; a warning is
/// logged per duplicate.
pub fn ingest_ratings(path: &Path, format: RatingFormat) -> Result<IngestedRatings> {
    let raw = parse_ratings(path, format)?;
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
    let mut entries: Vec<(u32, u32, f64)> = Vec::with_capacity(raw.len());
    for e in &raw {
        let u = users.get_or_insert(&e.user_key);
        let i = items.get_or_insert(&e.item_key);
        match seen.get(&(u, i)) {
            Some(&pos) => {
                log::warn!(
                    "duplicate rating ({}, {}) at line {}; keeping last occurrence",
                    e.user_key,
                    e.item_key,
                    e.line
                );
                entries[pos].2 = e.rating;
            }
            None => {
                seen.insert((u, i), entries.len());
                entries.push((u, i, e.rating));
            }
        }
    }
    let matrix = RatingMatrix::from_entries(users.len(), items.len(), &entries)?;
    Ok(IngestedRatings { matrix, users, items })
}

/// Result of [`filter_min_degree`]: the filtered matrix plus which original
/// indices survived (in renumbering order).
#[derive(Debug, Clone)]
pub struct FilteredRatings {
    pub matrix: RatingMatrix,
    pub kept_users: Vec<u32>,
    pub kept_items: Vec<u32>,
}

/// Iteratively drop users and items with degree below `min_count` until the
/// degrees stabilize, then re-index.
pub fn filter_min_degree(r: &RatingMatrix, min_count: usize) -> Result<FilteredRatings> {
    assert!(min_count >= 1, "min_count must be at least 1");
    let mut user_alive = vec![true; r.n_users()];
    let mut item_alive = vec![true; r.n_items()];
    let mut user_deg: Vec<usize> = (0..r.n_users()).map(|u| r.user_ratings(u).len()).collect();
    let mut item_deg: Vec<usize> = (0..r.n_items()).map(|i| r.item_ratings(i).len()).collect();

    loop {
        let mut changed = false;
        for u in 0..r.n_users() {
            if user_alive[u] && user_deg[u] < min_count {
                user_alive[u] = false;
                changed = true;
                for &(i, _) in r.user_ratings(u) {
                    if item_alive[i as usize] {
                        item_deg[i as usize] -= 1;
                    }
                }
            }
        }
        for i in 0..r.n_items() {
            if item_alive[i] && item_deg[i] < min_count {
                item_alive[i] = false;
                changed = true;
                for &(u, _) in r.item_ratings(i) {
                    if user_alive[u as usize] {
                        user_deg[u as usize] -= 1;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let kept_users: Vec<u32> = (0..r.n_users() as u32).filter(|&u| user_alive[u as usize]).collect();
    let kept_items: Vec<u32> = (0..r.n_items() as u32).filter(|&i| item_alive[i as usize]).collect();
    if kept_users.is_empty() || kept_items.is_empty() {
        return Err(Error::EmptyAfterFilter(min_count));
    }
    let mut user_new = vec![u32::MAX; r.n_users()];
    for (new, &old) in kept_users.iter().enumerate() {
        user_new[old as usize] = new as u32;
    }
    let mut item_new = vec![u32::MAX; r.n_items()];
    for (new, &old) in kept_items.iter().enumerate() {
        item_new[old as usize] = new as u32;
    }
    let entries: Vec<(u32, u32, f64)> = r
        .entries()
        .filter(|&(u, i, _)| user_alive[u as usize] && item_alive[i as usize])
        .map(|(u, i, rt)| (user_new[u as usize], item_new[i as usize], rt))
        .collect();
    let matrix = RatingMatrix::from_entries(kept_users.len(), kept_items.len(), &entries)?;
    Ok(FilteredRatings { matrix, kept_users, kept_items })
}

/// Per-user split parameters.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    /// Fraction of each user's ratings kept for training, in (0, 1).
    pub train_fraction: f64,
    pub seed: u64,
    /// Number of independent repeats the sweep driver runs.
    pub repeats: usize,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self { train_fraction, seed, repeats: 5 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Partition each user's ratings into train and test sets.
///
/// Each user contributes `max(1, floor(fraction * degree))` training ratings;
/// the rest go to test. Both outputs keep the input index space.
pub fn split_ratings(r: &RatingMatrix, spec: &SplitSpec) -> Result<(RatingMatrix, RatingMatrix)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for u in 0..r.n_users() {
        let ratings = r.user_ratings(u);
        if ratings.is_empty() {
            continue;
        }
        if ratings.len() < 2 {
            return Err(Error::NeedsFilter(u as u32));
        }
        let mut order: Vec<usize> = (0..ratings.len()).collect();
        order.shuffle(&mut rng);
        let n_train = ((spec.train_fraction * ratings.len() as f64).floor() as usize).max(1);
        for (pos, &idx) in order.iter().enumerate() {
            let (i, rt) = ratings[idx];
            if pos < n_train {
                train.push((u as u32, i, rt));
            } else {
                test.push((u as u32, i, rt));
            }
        }
    }
    Ok((
        RatingMatrix::from_entries(r.n_users(), r.n_items(), &train)?,
        RatingMatrix::from_entries(r.n_users(), r.n_items(), &test)?,
    ))
}

/// Dense per-entity content features, rows scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ContentMatrix {
    n_entities: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl ContentMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_entities = rows.len();
        let dim = rows.first().map_or(0, |r| r.len());
        let mut flat = Vec::with_capacity(n_entities * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch("ragged content rows".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue("non-finite content feature".into()));
            }
            flat.extend_from_slice(row);
        }
        Ok(Self { n_entities, dim, rows: flat })
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.rows[e * self.dim..(e + 1) * self.dim]
    }
}

/// Build bag-of-words content rows from a `id<TAB>document` file.
///
/// `n_entities` fixes the row count (internal indices); ids without a
/// document get a zero row and a warning. The vocabulary is the
/// `vocab_size` most frequent tokens overall (ties broken lexicographically),
/// and each row is scaled to [0, 1] by its own max count.
pub fn ingest_content(path: &Path, n_entities: usize, vocab_size: usize) -> Result<ContentMatrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs: Vec<Option<Vec<String>>> = vec![None; n_entities];
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let id: usize = parts
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line: lineno, msg: "bad entity id".into() })?;
        if id >= n_entities {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("entity id {id} outside 0..{n_entities}"),
            });
        }
        let text = parts.next().unwrap_or("");
        docs[id] = Some(tokenize(text));
    }
    bag_of_words(docs, vocab_size)
}

/// Like [`ingest_content`], but lines are keyed by original entity ids that
/// are resolved through an [`IdMap`]. Unknown keys are skipped with a
/// warning.
pub fn ingest_content_keyed(path: &Path, map: &IdMap, vocab_size: usize) -> Result<ContentMatrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs: Vec<Option<Vec<String>>> = vec![None; map.len()];
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let key = parts.next().unwrap().trim();
        let text = parts.next().unwrap_or("");
        match map.lookup(key) {
            Some(idx) => docs[idx as usize] = Some(tokenize(text)),
            None => log::warn!("content line {} for unknown id `{key}` skipped", lineno + 1),
        }
    }
    bag_of_words(docs, vocab_size)
}

fn bag_of_words(docs: Vec<Option<Vec<String>>>, vocab_size: usize) -> Result<ContentMatrix> {
    let n_entities = docs.len();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in docs.iter().flatten() {
        for tok in doc {
            *counts.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<(String, u64)> = counts.into_iter().collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    vocab.truncate(vocab_size);
    let index: HashMap<&str, usize> =
        vocab.iter().enumerate().map(|(i, (t, _))| (t.as_str(), i)).collect();
    let dim = vocab.len();

    let mut rows = Vec::with_capacity(n_entities);
    for (e, doc) in docs.iter().enumerate() {
        let mut row = vec![0.0; dim];
        match doc {
            Some(tokens) => {
                for tok in tokens {
                    if let Some(&i) = index.get(tok.as_str()) {
                        row[i] += 1.0;
                    }
                }
                let max = row.iter().cloned().fold(0.0f64, f64::max);
                if max > 0.0 {
                    for v in &mut row {
                        *v /= max;
                    }
                }
            }
            None => log::warn!("entity {e} has no document; using a zero content row"),
        }
        rows.push(row);
    }
    ContentMatrix::from_rows(rows)
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}
