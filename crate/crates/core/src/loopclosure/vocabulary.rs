use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{hamming, BinaryDescriptor, LoopError};

const MAX_KMAJORITY_ITERATIONS: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct VocabularyNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub center: BinaryDescriptor,
    pub word: Option<u32>,
    /// Leaves only; zero for internal nodes.
    pub idf: f64,
}

/// Hierarchical k-majority tree; its leaves are the visual words.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabularyTree {
    pub k: usize,
    pub depth: usize,
    /// Node 0 is the root.
    pub nodes: Vec<VocabularyNode>,
    /// Word id to node index.
    pub words: Vec<usize>,
}

fn majority(corpus: &[BinaryDescriptor], members: &[usize]) -> BinaryDescriptor {
    let mut counts = [0u32; 256];
    for &m in members {
        let d = &corpus[m];
        for (i, c) in counts.iter_mut().enumerate() {
            *c += d.bit(i) as u32;
        }
    }
    let mut out = BinaryDescriptor::default();
    for (i, &c) in counts.iter().enumerate() {
        out.set_bit(i, 2 * c as usize >= members.len());
    }
    out
}

fn nearest(centers: &[BinaryDescriptor], d: &BinaryDescriptor) -> usize {
    let mut best = (u32::MAX, 0);
    for (i, c) in centers.iter().enumerate() {
        let h = hamming(c, d);
        if h < best.0 {
            best = (h, i);
        }
    }
    best.1
}

/// Splits `members` into at most `k` clusters of Hamming-nearest descriptors.
fn k_majority(
    corpus: &[BinaryDescriptor],
    members: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(BinaryDescriptor, Vec<usize>)> {
    let distinct: BTreeSet<BinaryDescriptor> = members.iter().map(|&m| corpus[m]).collect();
    if distinct.len() <= k {
        return distinct
            .into_iter()
            .map(|c| (c, members.iter().copied().filter(|&m| corpus[m] == c).collect()))
            .collect();
    }

    // k-means++ seeding on squared Hamming distance.
    let mut centers = vec![corpus[members[rng.random_range(0..members.len())]]];
    let mut dist: Vec<f64> = members.iter().map(|&m| hamming(&centers[0], &corpus[m]) as f64).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().map(|d| d * d).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = members.len() - 1;
        for (i, d) in dist.iter().enumerate() {
            pick -= d * d;
            if pick <= 0.0 && *d > 0.0 {
                chosen = i;
                break;
            }
        }
        let c = corpus[members[chosen]];
        centers.push(c);
        for (i, &m) in members.iter().enumerate() {
            dist[i] = dist[i].min(hamming(&c, &corpus[m]) as f64);
        }
    }

    let mut assignment = vec![usize::MAX; members.len()];
    for _ in 0..MAX_KMAJORITY_ITERATIONS {
        let next: Vec<usize> = members.iter().map(|&m| nearest(&centers, &corpus[m])).collect();
        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in next.iter().enumerate() {
            clusters[c].push(i);
        }
        // Collapse: an empty cluster takes the worst-fitting member of the largest one.
        for e in 0..k {
            if !clusters[e].is_empty() {
                continue;
            }
            let largest = (0..k).max_by_key(|&c| (clusters[c].len(), usize::MAX - c)).expect("k > 0");
            let (pos, _) = clusters[largest]
                .iter()
                .enumerate()
                .max_by_key(|(_, &i)| (hamming(&centers[largest], &corpus[members[i]]), usize::MAX - i))
                .expect("largest cluster is non-empty");
            let moved = clusters[largest].remove(pos);
            clusters[e].push(moved);
        }
        let mut relabelled = next.clone();
        for (c, list) in clusters.iter().enumerate() {
            for &i in list {
                relabelled[i] = c;
            }
        }
        for (c, list) in clusters.iter().enumerate() {
            let ids: Vec<usize> = list.iter().map(|&i| members[i]).collect();
            centers[c] = majority(corpus, &ids);
        }
        if relabelled == assignment {
            break;
        }
        assignment = relabelled;
    }
    let mut out: Vec<(BinaryDescriptor, Vec<usize>)> = centers.into_iter().map(|c| (c, Vec::new())).collect();
    for (i, &c) in assignment.iter().enumerate() {
        out[c].1.push(members[i]);
    }
    out.retain(|(_, m)| !m.is_empty());
    out
}

/// Trains a tree treating every descriptor as its own document.
pub fn train_vocabulary(
    corpus: &[BinaryDescriptor],
    k: usize,
    depth: usize,
    seed: u64,
) -> Result<VocabularyTree, LoopError> {
    let docs: Vec<Vec<BinaryDescriptor>> = corpus.iter().map(|d| vec![*d]).collect();
    train_vocabulary_documents(&docs, k, depth, seed)
}

/// Trains a tree on descriptors grouped by image; IDF is computed from
/// per-image document frequencies as `ln(1 + N / n_w)`.
pub fn train_vocabulary_documents(
    documents: &[Vec<BinaryDescriptor>],
    k: usize,
    depth: usize,
    seed: u64,
) -> Result<VocabularyTree, LoopError> {
    if k < 2 || depth < 1 {
        return Err(LoopError::Parameter(format!("need k >= 2 and depth >= 1, got k={k} depth={depth}")));
    }
    let corpus: Vec<BinaryDescriptor> = documents.iter().flatten().copied().collect();
    if corpus.is_empty() {
        return Err(LoopError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![VocabularyNode {
        parent: None,
        children: Vec::new(),
        center: BinaryDescriptor::default(),
        word: None,
        idf: 0.0,
    }];
    let mut frontier = vec![(0usize, (0..corpus.len()).collect::<Vec<usize>>(), 0usize)];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (node, members, level) in frontier {
            for (center, child_members) in k_majority(&corpus, &members, k, &mut rng) {
                let id = nodes.len();
                nodes.push(VocabularyNode { parent: Some(node), children: Vec::new(), center, word: None, idf: 0.0 });
                nodes[node].children.push(id);
                if level + 1 < depth {
                    next.push((id, child_members, level + 1));
                }
            }
        }
        frontier = next;
    }
    let mut words = Vec::new();
    for (i, n) in nodes.iter_mut().enumerate() {
        if n.children.is_empty() && n.parent.is_some() {
            n.word = Some(words.len() as u32);
            words.push(i);
        }
    }
    let mut tree = VocabularyTree { k, depth, nodes, words };
    let n_docs = documents.len() as f64;
    let mut doc_freq = vec![0usize; tree.words.len()];
    for doc in documents {
        let seen: BTreeSet<u32> = doc.iter().map(|d| tree.word_of(d)).collect();
        for w in seen {
            doc_freq[w as usize] += 1;
        }
    }
    for (w, &node) in tree.words.iter().enumerate() {
        tree.nodes[node].idf = (1.0 + n_docs / doc_freq[w].max(1) as f64).ln();
    }
    Ok(tree)
}

impl VocabularyTree {
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// Greedy root-to-leaf descent by minimum Hamming distance.
    pub fn word_of(&self, d: &BinaryDescriptor) -> u32 {
        let mut node = 0;
        while !self.nodes[node].children.is_empty() {
            let children = &self.nodes[node].children;
            let mut best = (u32::MAX, children[0]);
            for &c in children {
                let h = hamming(&self.nodes[c].center, d);
                if h < best.0 {
                    best = (h, c);
                }
            }
            node = best.1;
        }
        self.nodes[node].word.expect("descent ends at a leaf")
    }

    /// Exhaustive nearest leaf centre.
    pub fn nearest_word_exhaustive(&self, d: &BinaryDescriptor) -> u32 {
        let mut best = (u32::MAX, 0u32);
        for (w, &node) in self.words.iter().enumerate() {
            let h = hamming(&self.nodes[node].center, d);
            if h < best.0 {
                best = (h, w as u32);
            }
        }
        best.1
    }

    pub fn idf(&self, word: u32) -> f64 {
        self.nodes[self.words[word as usize]].idf
    }

    /// Checks branching, leaf depth and word numbering.
    pub fn validate(&self) -> Result<(), LoopError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.children.len() > self.k {
                return Err(LoopError::Format(format!("node {i} has {} children", n.children.len())));
            }
            if n.children.is_empty() && i != 0 {
                let mut level = 0;
                let mut cur = i;
                while let Some(p) = self.nodes[cur].parent {
                    level += 1;
                    cur = p;
                }
                if level != self.depth {
                    return Err(LoopError::Format(format!("leaf {i} at depth {level}, expected {}", self.depth)));
                }
            }
        }
        for (w, &node) in self.words.iter().enumerate() {
            if self.nodes[node].word != Some(w as u32) {
                return Err(LoopError::Format(format!("word {w} not at node {node}")));
            }
        }
        Ok(())
    }

    /// Writes the `BINVOC` text format.
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), LoopError> {
        writeln!(out, "BINVOC {} {} {}", self.k, self.depth, self.words.len())?;
        for (i, n) in self.nodes.iter().enumerate() {
            let parent = n.parent.map_or(-1, |p| p as i64);
            let leaf = n.word.is_some() as u8;
            writeln!(out, "{i} {parent} {leaf} {:?} {}", n.idf, n.center.to_hex())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, LoopError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| LoopError::Format("empty vocabulary file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "BINVOC" {
            return Err(LoopError::Format(format!("bad header {header:?}")));
        }
        let parse = |s: &str, what: &str| -> Result<usize, LoopError> {
            s.parse().map_err(|_| LoopError::Format(format!("bad {what} {s:?}")))
        };
        let k = parse(fields[1], "k")?;
        let depth = parse(fields[2], "depth")?;
        let word_count = parse(fields[3], "word count")?;
        let mut nodes: Vec<VocabularyNode> = Vec::new();
        let mut words = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let err = || LoopError::Format(format!("line {}: {line:?}", lineno + 2));
            if f.len() != 5 {
                return Err(err());
            }
            let id: usize = f[0].parse().map_err(|_| err())?;
            let parent: i64 = f[1].parse().map_err(|_| err())?;
            let is_leaf = match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(err()),
            };
            let idf: f64 = f[3].parse().map_err(|_| err())?;
            let center = BinaryDescriptor::from_hex(f[4])?;
            if id != nodes.len() || (id == 0) != (parent < 0) || parent >= id as i64 {
                return Err(err());
            }
            let parent = (parent >= 0).then_some(parent as usize);
            if let Some(p) = parent {
                nodes[p].children.push(id);
            }
            let word = is_leaf.then(|| {
                words.push(id);
                words.len() as u32 - 1
            });
            nodes.push(VocabularyNode { parent, children: Vec::new(), center, word, idf });
        }
        if nodes.is_empty() || words.len() != word_count {
            return Err(LoopError::Format(format!("expected {word_count} words, found {}", words.len())));
        }
        let tree = VocabularyTree { k, depth, nodes, words };
        tree.validate()?;
        Ok(tree)
    }
}
