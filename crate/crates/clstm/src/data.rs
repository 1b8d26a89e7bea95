//! Vocabulary, GloVe-format embedding loading, TSV dataset ingestion,
//! negative sampling for ranking, and the synthetic desk-scale tasks.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{PAD_ID, UNK_ID};
use crate::tensor::Tensor;

/// Token table with reserved ids 0 = UNK and 1 = PAD.
#[derive(Debug, Clone)]
pub struct Vocab {
    map: HashMap<String, u32>,
    list: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let list = vec!["<unk>".to_string(), "<pad>".to_string()];
        let map = list
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { map, list }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != "<unk>" || tokens[1] != "<pad>" {
            return Err(Error::Config("vocab must start with <unk>, <pad>".into()));
        }
        let map = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocab { map, list: tokens })
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.map.get(token) {
            return id;
        }
        let id = self.list.len() as u32;
        self.list.push(token.to_string());
        self.map.insert(token.to_string(), id);
        id
    }

    /// Lookup without interning; unknown tokens map to UNK.
    pub fn get(&self, token: &str) -> u32 {
        self.map.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.list
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("<unk>")
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved ids always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.list
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification { classes: usize },
    Ranking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One sentence pair. Classification uses `label`; ranking uses `group` and
/// `positive`.
#[derive(Debug, Clone)]
pub struct MatchSample {
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub label: usize,
    pub group: u32,
    pub positive: bool,
}

#[derive(Debug, Clone)]
pub struct PairDataset {
    pub vocab: Vocab,
    pub task: Task,
    pub samples: Vec<MatchSample>,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl PairDataset {
    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Ranking candidate groups within one split, in order of appearance.
    pub fn groups(&self, split: Split) -> Vec<Vec<usize>> {
        let mut order: Vec<u32> = Vec::new();
        let mut by_group: HashMap<u32, Vec<usize>> = HashMap::new();
        for &i in self.split(split) {
            let g = self.samples[i].group;
            by_group
                .entry(g)
                .or_insert_with(|| {
                    order.push(g);
                    Vec::new()
                })
                .push(i);
        }
        order.into_iter().map(|g| by_group.remove(&g).unwrap()).collect()
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// One parsed TSV line before vocabulary mapping.
#[derive(Debug, Clone)]
pub struct RawPair {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub label: usize,
    pub group: u32,
    pub positive: bool,
}

/// Parses one TSV file. Classification lines are
/// `label<TAB>sentenceX<TAB>sentenceY`; ranking lines are
/// `group<TAB>flag<TAB>question<TAB>answer` with flag 1 marking the positive.
pub fn load_tsv(path: &Path, task: Task) -> Result<Vec<RawPair>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line_no = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let fail = |message: String| Error::Format {
            line: line_no,
            message,
        };
        let pair = match task {
            Task::Classification { classes } => {
                if fields.len() != 3 {
                    return Err(fail(format!("expected 3 fields, got {}", fields.len())));
                }
                let label: usize = fields[0]
                    .parse()
                    .map_err(|_| fail(format!("unknown label {:?}", fields[0])))?;
                if label >= classes {
                    return Err(fail(format!("label {label} out of range (< {classes})")));
                }
                RawPair {
                    x: tokenize(fields[1]),
                    y: tokenize(fields[2]),
                    label,
                    group: 0,
                    positive: false,
                }
            }
            Task::Ranking => {
                if fields.len() != 4 {
                    return Err(fail(format!("expected 4 fields, got {}", fields.len())));
                }
                let group: u32 = fields[0]
                    .parse()
                    .map_err(|_| fail(format!("bad group id {:?}", fields[0])))?;
                let flag: u32 = fields[1]
                    .parse()
                    .map_err(|_| fail(format!("bad flag {:?}", fields[1])))?;
                RawPair {
                    x: tokenize(fields[2]),
                    y: tokenize(fields[3]),
                    label: 0,
                    group,
                    positive: flag == 1,
                }
            }
        };
        if pair.x.is_empty() || pair.y.is_empty() {
            return Err(fail("empty sentence".into()));
        }
        out.push(pair);
    }
    Ok(out)
}

/// Builds a dataset from raw splits. The vocabulary is built from the train
/// split only; dev/test tokens outside it map to UNK.
pub fn build_dataset(
    train: Vec<RawPair>,
    dev: Vec<RawPair>,
    test: Vec<RawPair>,
    task: Task,
) -> PairDataset {
    let mut vocab = Vocab::new();
    for p in &train {
        for t in p.x.iter().chain(&p.y) {
            vocab.intern(t);
        }
    }
    let mut samples = Vec::new();
    let idx = |raws: Vec<RawPair>, vocab: &Vocab, samples: &mut Vec<MatchSample>| -> Vec<usize> {
        raws.into_iter()
            .map(|p| {
                samples.push(MatchSample {
                    x: p.x.iter().map(|t| vocab.get(t)).collect(),
                    y: p.y.iter().map(|t| vocab.get(t)).collect(),
                    label: p.label,
                    group: p.group,
                    positive: p.positive,
                });
                samples.len() - 1
            })
            .collect()
    };
    let train_idx = idx(train, &vocab, &mut samples);
    let dev_idx = idx(dev, &vocab, &mut samples);
    let test_idx = idx(test, &vocab, &mut samples);
    PairDataset {
        vocab,
        task,
        samples,
        train: train_idx,
        dev: dev_idx,
        test: test_idx,
    }
}

/// Loads GloVe-style text embeddings ("token v1 ... v_dim" per line) into a
/// `[V, dim]` matrix. Vocab tokens absent from the file are initialized
/// uniformly in [-0.1, 0.1]. Returns the matrix and the coverage fraction.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocab,
    embed_dim: usize,
    seed: u64,
) -> Result<(Tensor, f64)> {
    let content = std::fs::read_to_string(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = Tensor::zeros(&[vocab.len(), embed_dim]);
    for v in matrix.data_mut() {
        *v = rng.gen_range(-0.1..0.1);
    }
    let mut covered = vec![false; vocab.len()];
    covered[UNK_ID as usize] = true;
    covered[PAD_ID as usize] = true;
    let mut hits = 0usize;
    for (lineno, line) in content.lines().enumerate() {
        let line_no = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap();
        let values: Vec<f64> = parts
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Format {
                    line: line_no,
                    message: format!("bad number {v:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != embed_dim {
            return Err(Error::Format {
                line: line_no,
                message: format!("expected {embed_dim} values, got {}", values.len()),
            });
        }
        let id = vocab.get(token);
        if id != UNK_ID || token == "<unk>" {
            matrix.row_mut(id as usize).copy_from_slice(&values);
            if !covered[id as usize] {
                covered[id as usize] = true;
                hits += 1;
            }
        }
    }
    let real_tokens = vocab.len().saturating_sub(2);
    let coverage = if real_tokens == 0 {
        0.0
    } else {
        hits as f64 / real_tokens as f64
    };
    Ok((matrix, coverage))
}

/// Pairs each positive (question, answer) with `k` distinct random negatives
/// drawn from the answer pool, never equal to the positive answer.
pub fn sample_negatives(
    positives: &[(Vec<u32>, Vec<u32>)],
    pool: &[Vec<u32>],
    k: usize,
    seed: u64,
) -> Result<Vec<MatchSample>> {
    if pool.len() <= k {
        return Err(Error::Config(format!(
            "answer pool of {} cannot supply {k} distinct negatives",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (group, (q, pos)) in positives.iter().enumerate() {
        samples.push(MatchSample {
            x: q.clone(),
            y: pos.clone(),
            label: 0,
            group: group as u32,
            positive: true,
        });
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        while chosen.len() < k {
            let c = rng.gen_range(0..pool.len());
            if pool[c] != *pos && !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        for c in chosen {
            samples.push(MatchSample {
                x: q.clone(),
                y: pool[c].clone(),
                label: 0,
                group: group as u32,
                positive: false,
            });
        }
    }
    Ok(samples)
}

const SYNTH_ALPHABET: usize = 12;
const SYNTH_PARTNER_SHIFT: usize = 5;

fn symbol(i: usize) -> String {
    format!("s{i}")
}

fn partner(i: usize) -> usize {
    (i + SYNTH_PARTNER_SHIFT) % SYNTH_ALPHABET
}

fn is_subsequence(needle: &[usize], hay: &[usize]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Synthetic desk-scale sentence-pair tasks, all binary classification with
/// exactly balanced labels and a deterministic 8:1:1 split.
///
/// - `same-seq`: Y is either a copy of X or a copy with one substitution.
/// - `contains`: X's tokens appear in order in Y, or fail to after one
///   corruption.
/// - `cross-match`: Y is the position-wise partner mapping of X, negated by
///   swapping two differing positions of Y; either sentence alone carries no
///   label signal.
pub fn synth_tasks(name: &str, size: usize, seed: u64) -> Result<PairDataset> {
    if size < 40 {
        return Err(Error::Config("synthetic datasets need size >= 40".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raws: Vec<RawPair> = Vec::with_capacity(size);
    for i in 0..size {
        let positive = i % 2 == 0; // exact balance
        let (x, y) = match name {
            "same-seq" => {
                let len = rng.gen_range(4..=8);
                let x: Vec<usize> = (0..len).map(|_| rng.gen_range(0..SYNTH_ALPHABET)).collect();
                let mut y = x.clone();
                if !positive {
                    let pos = rng.gen_range(0..len);
                    let mut repl = rng.gen_range(0..SYNTH_ALPHABET);
                    while repl == y[pos] {
                        repl = rng.gen_range(0..SYNTH_ALPHABET);
                    }
                    y[pos] = repl;
                }
                (x, y)
            }
            "contains" => {
                // Y leaves at least two alphabet symbols unused so negatives
                // can be corrupted with tokens absent from Y
                let ylen = rng.gen_range(8..=12);
                let y: Vec<usize> = loop {
                    let cand: Vec<usize> =
                        (0..ylen).map(|_| rng.gen_range(0..SYNTH_ALPHABET)).collect();
                    let mut used = [false; SYNTH_ALPHABET];
                    for &t in &cand {
                        used[t] = true;
                    }
                    if used.iter().filter(|&&u| !u).count() >= 2 {
                        break cand;
                    }
                };
                let xlen = rng.gen_range(4..=6);
                // a contiguous run of Y trivially appears in order in Y
                let start = rng.gen_range(0..=ylen - xlen);
                let mut x: Vec<usize> = y[start..start + xlen].to_vec();
                if !positive {
                    // replace two tokens with symbols Y never uses; the
                    // result cannot be a subsequence of Y
                    let absent: Vec<usize> =
                        (0..SYNTH_ALPHABET).filter(|t| !y.contains(t)).collect();
                    let mut pos: Vec<usize> = (0..xlen).collect();
                    pos.shuffle(&mut rng);
                    for &p in &pos[..2] {
                        x[p] = absent[rng.gen_range(0..absent.len())];
                    }
                    debug_assert!(!is_subsequence(&x, &y));
                }
                (x, y)
            }
            "cross-match" => {
                let len = 6;
                // cap symbol multiplicity so a shuffle with >= 3 mismatched
                // positions always exists
                let x: Vec<usize> = loop {
                    let cand: Vec<usize> =
                        (0..len).map(|_| rng.gen_range(0..SYNTH_ALPHABET)).collect();
                    let mut counts = [0usize; SYNTH_ALPHABET];
                    for &t in &cand {
                        counts[t] += 1;
                    }
                    if counts.iter().all(|&c| c <= len - 2) {
                        break cand;
                    }
                };
                let mut y: Vec<usize> = x.iter().map(|&t| partner(t)).collect();
                if !positive {
                    // shuffle Y until the position-wise correspondence is
                    // broken in at least three places, including the first:
                    // the label flips while the multiset stays identical, so
                    // bag-of-words features carry no signal, but most grid
                    // diagonal cells witness the mismatch
                    let orig = y.clone();
                    loop {
                        y.shuffle(&mut rng);
                        let moved = y.iter().zip(&orig).filter(|(a, b)| a != b).count();
                        if y[0] != orig[0] && moved >= 3 {
                            break;
                        }
                    }
                }
                (x, y)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown synthetic task {other:?} (expected same-seq, contains, cross-match)"
                )))
            }
        };
        raws.push(RawPair {
            x: x.into_iter().map(symbol).collect(),
            y: y.into_iter().map(symbol).collect(),
            label: usize::from(positive),
            group: 0,
            positive: false,
        });
    }
    raws.shuffle(&mut rng);
    let n_test = size / 10;
    let n_dev = size / 10;
    let n_train = size - n_dev - n_test;
    let test = raws.split_off(n_train + n_dev);
    let dev = raws.split_off(n_train);
    Ok(build_dataset(
        raws,
        dev,
        test,
        Task::Classification { classes: 2 },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn vocab_roundtrip() {
        let mut v = Vocab::new();
        let a = v.intern("cat");
        let b = v.intern("dog");
        assert_eq!(v.intern("cat"), a);
        for id in [UNK_ID, PAD_ID, a, b] {
            assert_eq!(v.get(v.token(id)), id);
        }
        assert_eq!(v.get("missing"), UNK_ID);
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn classification_tsv_well_formed() {
        let f = write_tmp("0\ta b\tc d\n1\te\tf g\n0\th\ti\n");
        let raws = load_tsv(f.path(), Task::Classification { classes: 2 }).unwrap();
        assert_eq!(raws.len(), 3);
        assert_eq!(raws[0].x, vec!["a", "b"]);
    }

    #[test]
    fn tsv_errors_name_the_line() {
        let f = write_tmp("0\ta b\tc d\n1\tonly-two-fields\n");
        let err = load_tsv(f.path(), Task::Classification { classes: 2 }).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");

        let f = write_tmp("bad\ta\tb\n");
        let err = load_tsv(f.path(), Task::Classification { classes: 2 }).unwrap_err();
        assert!(err.to_string().contains("unknown label"));

        let f = write_tmp("0\t\tb\n");
        let err = load_tsv(f.path(), Task::Classification { classes: 2 }).unwrap_err();
        assert!(err.to_string().contains("empty sentence"));
    }

    #[test]
    fn dev_only_tokens_map_to_unk() {
        let train = vec![RawPair {
            x: vec!["a".into()],
            y: vec!["b".into()],
            label: 0,
            group: 0,
            positive: false,
        }];
        let dev = vec![RawPair {
            x: vec!["zzz".into()],
            y: vec!["b".into()],
            label: 1,
            group: 0,
            positive: false,
        }];
        let data = build_dataset(train, dev, vec![], Task::Classification { classes: 2 });
        let d = &data.samples[data.dev[0]];
        assert_eq!(d.x, vec![UNK_ID]);
        assert_ne!(d.y, vec![UNK_ID]);
    }

    #[test]
    fn embeddings_load_and_fallback() {
        let mut vocab = Vocab::new();
        vocab.intern("cat");
        vocab.intern("dog");
        let f = write_tmp("cat 1.0 2.0 3.0\n");
        let (m, coverage) = load_embeddings(f.path(), &vocab, 3, 1).unwrap();
        assert_eq!(m.row(2), &[1.0, 2.0, 3.0]);
        for &v in m.row(3) {
            assert!((-0.1..0.1).contains(&v));
        }
        assert!((coverage - 0.5).abs() < 1e-12);
    }

    #[test]
    fn embeddings_empty_file() {
        let vocab = {
            let mut v = Vocab::new();
            v.intern("cat");
            v
        };
        let f = write_tmp("");
        let (m, coverage) = load_embeddings(f.path(), &vocab, 4, 2).unwrap();
        assert_eq!(coverage, 0.0);
        assert!(m.data().iter().all(|v| (-0.1..0.1).contains(v)));
    }

    #[test]
    fn embeddings_malformed_line() {
        let vocab = Vocab::new();
        let f = write_tmp("cat 1.0 x\n");
        let err = load_embeddings(f.path(), &vocab, 2, 1).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));

        let f = write_tmp("cat 1.0 2.0\ndog 1.0\n");
        let err = load_embeddings(f.path(), &vocab, 2, 1).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn negative_sampling_groups() {
        let positives: Vec<(Vec<u32>, Vec<u32>)> =
            (0..5).map(|i| (vec![i], vec![100 + i])).collect();
        let pool: Vec<Vec<u32>> = (0..20).map(|i| vec![100 + i]).collect();
        for k in [4usize, 9] {
            let samples = sample_negatives(&positives, &pool, k, 7).unwrap();
            assert_eq!(samples.len(), 5 * (k + 1));
            for g in 0..5u32 {
                let group: Vec<_> = samples.iter().filter(|s| s.group == g).collect();
                assert_eq!(group.len(), k + 1);
                assert_eq!(group.iter().filter(|s| s.positive).count(), 1);
                let pos_y = &group.iter().find(|s| s.positive).unwrap().y;
                for s in group.iter().filter(|s| !s.positive) {
                    assert_ne!(&s.y, pos_y);
                }
            }
            let again = sample_negatives(&positives, &pool, k, 7).unwrap();
            for (a, b) in samples.iter().zip(&again) {
                assert_eq!(a.y, b.y);
            }
        }
        assert!(sample_negatives(&positives, &pool[..4], 4, 7).is_err());
    }

    #[test]
    fn synth_deterministic_and_balanced() {
        let a = synth_tasks("cross-match", 1000, 5).unwrap();
        let b = synth_tasks("cross-match", 1000, 5).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.x, y.x);
            assert_eq!(x.y, y.y);
            assert_eq!(x.label, y.label);
        }
        let pos = a.samples.iter().filter(|s| s.label == 1).count();
        assert_eq!(pos, 500);
        assert_eq!(a.train.len(), 800);
        assert_eq!(a.dev.len(), 100);
        assert_eq!(a.test.len(), 100);
    }

    #[test]
    fn cross_match_multisets_identical_across_labels() {
        // the bag of Y tokens never distinguishes the classes, and Y is
        // always the partner image of X's bag
        let data = synth_tasks("cross-match", 200, 11).unwrap();
        for s in &data.samples {
            let mut xs: Vec<&str> = s.x.iter().map(|&t| data.vocab.token(t)).collect();
            let mut ys: Vec<&str> = s.y.iter().map(|&t| data.vocab.token(t)).collect();
            let mapped: Vec<String> = xs
                .iter()
                .map(|t| {
                    let i: usize = t[1..].parse().unwrap();
                    symbol(partner(i))
                })
                .collect();
            let mut mapped: Vec<&str> = mapped.iter().map(String::as_str).collect();
            xs.sort_unstable();
            ys.sort_unstable();
            mapped.sort_unstable();
            assert_eq!(ys, mapped);
        }
    }

    #[test]
    fn contains_labels_match_subsequence_test() {
        let data = synth_tasks("contains", 400, 13).unwrap();
        for s in &data.samples {
            let x: Vec<usize> = s.x.iter().map(|&t| data.vocab.token(t)[1..].parse().unwrap()).collect();
            let y: Vec<usize> = s.y.iter().map(|&t| data.vocab.token(t)[1..].parse().unwrap()).collect();
            assert_eq!(is_subsequence(&x, &y), s.label == 1);
        }
    }

    #[test]
    fn synth_respects_length_bounds() {
        let data = synth_tasks("contains", 200, 17).unwrap();
        for s in &data.samples {
            assert!(s.x.len() >= 4 && s.x.len() <= 30);
            assert!(s.y.len() >= 4 && s.y.len() <= 30);
        }
    }
}
