//! Embedding-space clustering: affinity propagation over the full keyword set
//! and LLM-assisted assignment of newly generated keywords.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Cluster, ClusterId, KeywordId};
use crate::llm::templates::vars;
use crate::llm::{parse_assign, render, AssignChoice, Gateway, GatewayError, ParseError, Slot, TemplateId};
use crate::text::{hash64, sha256_hex, tokens};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("embedding: {0}")]
    Embed(String),
    #[error("zero-dimension embeddings")]
    ZeroDimension,
    #[error("embeddings have inconsistent dimensions")]
    RaggedEmbeddings,
    #[error("no embedding for keyword {0:?}")]
    MissingEmbedding(KeywordId),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Maps texts to fixed-dimension vectors.
pub trait EmbeddingProvider {
    /// Stable identifier, used as part of cache keys.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClusterError>;
}

/// Deterministic token-hash embedding: every token maps to a seeded Gaussian
/// vector and a text embeds as the mean of its token vectors. Texts without
/// tokens embed as the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedding {
    pub seed: u64,
    pub dimension: usize,
}

impl HashEmbedding {
    pub fn new(seed: u64, dimension: usize) -> Self {
        HashEmbedding { seed, dimension }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(hash64(&[&self.seed.to_le_bytes(), token.as_bytes()]));
        (0..self.dimension).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let toks = tokens(text);
        let mut out = vec![0.0; self.dimension];
        if toks.is_empty() {
            return out;
        }
        for t in &toks {
            for (o, v) in out.iter_mut().zip(self.token_vector(t)) {
                *o += v;
            }
        }
        let n = toks.len() as f64;
        out.iter_mut().for_each(|x| *x /= n);
        out
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn id(&self) -> String {
        format!("hash-{}-{}", self.seed, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClusterError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Fixed lookup table; unknown texts are an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureEmbedding {
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl FixtureEmbedding {
    pub fn new(pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        FixtureEmbedding { vectors: pairs.into_iter().collect() }
    }
}

impl EmbeddingProvider for FixtureEmbedding {
    fn id(&self) -> String {
        "fixture".into()
    }

    fn dimension(&self) -> usize {
        self.vectors.values().next().map_or(0, Vec::len)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClusterError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| ClusterError::Embed(format!("no fixture vector for {t:?}")))
            })
            .collect()
    }
}

/// Caches another provider's vectors keyed by provider id and text hash,
/// optionally persisted as a JSON file.
pub struct CachedEmbedding<P> {
    inner: P,
    cache: RefCell<BTreeMap<String, Vec<f64>>>,
    path: Option<PathBuf>,
}

impl<P: EmbeddingProvider> CachedEmbedding<P> {
    pub fn new(inner: P) -> Self {
        CachedEmbedding { inner, cache: RefCell::new(BTreeMap::new()), path: None }
    }

    /// Loads an existing cache file if present.
    pub fn with_file(inner: P, path: &Path) -> Result<Self, ClusterError> {
        let cache = if path.exists() {
            let s = std::fs::read_to_string(path).map_err(|e| ClusterError::Embed(e.to_string()))?;
            serde_json::from_str(&s).map_err(|e| ClusterError::Embed(e.to_string()))?
        } else {
            BTreeMap::new()
        };
        Ok(CachedEmbedding { inner, cache: RefCell::new(cache), path: Some(path.to_path_buf()) })
    }

    fn key(&self, text: &str) -> String {
        format!("{}:{}", self.inner.id(), sha256_hex(text))
    }

    pub fn len(&self) -> usize {
        self.cache.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.borrow().is_empty()
    }

    pub fn save(&self) -> Result<(), ClusterError> {
        if let Some(path) = &self.path {
            let s = serde_json::to_string(&*self.cache.borrow()).map_err(|e| ClusterError::Embed(e.to_string()))?;
            std::fs::write(path, s).map_err(|e| ClusterError::Embed(e.to_string()))?;
        }
        Ok(())
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedding<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClusterError> {
        let missing: Vec<&str> = {
            let cache = self.cache.borrow();
            let mut seen = BTreeSet::new();
            texts
                .iter()
                .copied()
                .filter(|t| !cache.contains_key(&self.key(t)) && seen.insert(*t))
                .collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed(&missing)?;
            let mut cache = self.cache.borrow_mut();
            for (t, v) in missing.iter().zip(fresh) {
                cache.insert(self.key(t), v);
            }
        }
        let cache = self.cache.borrow();
        Ok(texts.iter().map(|t| cache[&self.key(t)].clone()).collect())
    }
}

/// Embeds keywords by their canonical text.
pub fn embed_keywords(
    provider: &dyn EmbeddingProvider,
    ids: &[KeywordId],
) -> Result<BTreeMap<KeywordId, Vec<f64>>, ClusterError> {
    let texts: Vec<&str> = ids.iter().map(KeywordId::as_str).collect();
    let vectors = provider.embed(&texts)?;
    Ok(ids.iter().cloned().zip(vectors).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    Fixed(f64),
}

/// Dense `n x n` similarity matrix, row-major. Off-diagonal entries are negative
/// squared Euclidean distances; the diagonal holds the preference.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.n + k]
    }

    pub fn preference(&self) -> f64 {
        if self.n == 0 { 0.0 } else { self.get(0, 0) }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

pub fn build_similarity(embeddings: &[Vec<f64>], preference: Preference) -> Result<SimilarityMatrix, ClusterError> {
    let n = embeddings.len();
    let d = embeddings.first().map_or(0, Vec::len);
    if n > 0 && d == 0 {
        return Err(ClusterError::ZeroDimension);
    }
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(ClusterError::RaggedEmbeddings);
    }
    let mut data = vec![0.0; n * n];
    let mut off = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for k in 0..n {
            if i != k {
                let s = -squared_distance(&embeddings[i], &embeddings[k]);
                data[i * n + k] = s;
                off.push(s);
            }
        }
    }
    let p = match preference {
        Preference::Median => median(off),
        Preference::Fixed(p) => p,
    };
    for i in 0..n {
        data[i * n + i] = p;
    }
    Ok(SimilarityMatrix { n, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApParams {
    pub damping: f64,
    pub max_iter: usize,
    pub convergence_iter: usize,
}

impl Default for ApParams {
    fn default() -> Self {
        ApParams { damping: 0.5, max_iter: 200, convergence_iter: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// Exemplar index for each point.
    pub exemplar_of: Vec<usize>,
    /// Distinct exemplars, ascending.
    pub exemplars: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

impl ApResult {
    /// Point indices grouped by exemplar, groups in exemplar order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        self.exemplars
            .iter()
            .map(|&e| (0..self.exemplar_of.len()).filter(|&i| self.exemplar_of[i] == e).collect())
            .collect()
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Affinity propagation with damped responsibility/availability updates.
///
/// A tiny seeded perturbation is added to the similarities to break exact
/// ties, so identical inputs always give identical partitions. Convergence
/// means the exemplar set stayed unchanged for `convergence_iter` sweeps; on
/// non-convergence the last partition is returned with `converged = false`.
pub fn affinity_propagation(sim: &SimilarityMatrix, params: ApParams) -> ApResult {
    let n = sim.n;
    if n == 0 {
        return ApResult { exemplar_of: vec![], exemplars: vec![], converged: true, iterations: 0 };
    }
    if n == 1 {
        return ApResult { exemplar_of: vec![0], exemplars: vec![0], converged: true, iterations: 0 };
    }
    let damping = params.damping.clamp(0.5, 0.999_999);
    let conv = params.convergence_iter.max(1);

    let mut s = sim.data.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for v in s.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * z;
    }

    let mut a = vec![0.0; n * n];
    let mut r = vec![0.0; n * n];
    let mut history = vec![vec![false; conv]; n];
    let mut is_exemplar = vec![false; n];
    let mut converged = false;
    let mut iterations = 0;

    let mut row = vec![0.0; n];
    for it in 0..params.max_iter {
        iterations = it + 1;
        // responsibilities
        for i in 0..n {
            for k in 0..n {
                row[k] = a[i * n + k] + s[i * n + k];
            }
            let best = argmax(row.iter().copied());
            let y1 = row[best];
            let y2 = (0..n).filter(|&k| k != best).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
            for k in 0..n {
                let target = if k == best { s[i * n + k] - y2 } else { s[i * n + k] - y1 };
                r[i * n + k] = damping * r[i * n + k] + (1.0 - damping) * target;
            }
        }
        // availabilities
        for k in 0..n {
            let col_sum: f64 = (0..n)
                .map(|i| if i == k { r[k * n + k] } else { r[i * n + k].max(0.0) })
                .sum();
            for i in 0..n {
                let rp = if i == k { r[k * n + k] } else { r[i * n + k].max(0.0) };
                let target = if i == k { col_sum - rp } else { (col_sum - rp).min(0.0) };
                a[i * n + k] = damping * a[i * n + k] + (1.0 - damping) * target;
            }
        }
        for k in 0..n {
            is_exemplar[k] = a[k * n + k] + r[k * n + k] > 0.0;
            history[k][it % conv] = is_exemplar[k];
        }
        if it + 1 >= conv {
            let stable = history.iter().all(|h| h.iter().all(|&x| x) || h.iter().all(|&x| !x));
            if stable && is_exemplar.iter().any(|&x| x) {
                converged = true;
                break;
            }
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| is_exemplar[k]).collect();
    if exemplars.is_empty() {
        exemplars.push(argmax((0..n).map(|k| a[k * n + k] + r[k * n + k])));
    }
    let assign = |ex: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| match ex.iter().position(|&e| e == i) {
                Some(c) => c,
                None => argmax(ex.iter().map(|&e| s[i * n + e])),
            })
            .collect()
    };
    // refine each exemplar to the member maximising total similarity within its cluster
    let labels = assign(&exemplars);
    for (c, e) in exemplars.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let j = argmax(members.iter().map(|&cand| members.iter().map(|&i| s[i * n + cand]).sum::<f64>()));
        *e = members[j];
    }
    let labels = assign(&exemplars);
    let exemplar_of: Vec<usize> = labels.iter().map(|&c| exemplars[c]).collect();
    let mut distinct: Vec<usize> = exemplar_of.clone();
    distinct.sort_unstable();
    distinct.dedup();
    ApResult { exemplar_of, exemplars: distinct, converged, iterations }
}

pub fn centroid<'a>(vectors: impl IntoIterator<Item = &'a Vec<f64>>) -> Option<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for v in vectors {
        n += 1;
        match &mut sum {
            None => sum = Some(v.clone()),
            Some(s) => s.iter_mut().zip(v).for_each(|(a, b)| *a += b),
        }
    }
    sum.map(|mut s| {
        s.iter_mut().for_each(|x| *x /= n as f64);
        s
    })
}

/// Clusters with their centroids, ready for nearest-cluster queries.
pub fn cluster_centroids(
    clusters: &[Cluster],
    embeddings: &BTreeMap<KeywordId, Vec<f64>>,
) -> Result<Vec<(ClusterId, Vec<f64>)>, ClusterError> {
    clusters
        .iter()
        .filter(|c| !c.keyword_ids.is_empty())
        .map(|c| {
            let vs = c
                .keyword_ids
                .iter()
                .map(|id| embeddings.get(id).ok_or_else(|| ClusterError::MissingEmbedding(id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((c.id, centroid(vs).expect("non-empty cluster")))
        })
        .collect()
}

/// Up to `k` clusters by ascending Euclidean distance from `embedding` to the
/// centroid; ties by cluster id.
pub fn top_k_clusters(embedding: &[f64], centroids: &[(ClusterId, Vec<f64>)], k: usize) -> Vec<(ClusterId, f64)> {
    let mut d: Vec<(ClusterId, f64)> = centroids
        .iter()
        .map(|(id, c)| (*id, squared_distance(embedding, c).sqrt()))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub keyword: KeywordId,
    pub candidates: Vec<ClusterId>,
    pub cluster: ClusterId,
    pub created: bool,
    /// The LLM reply never parsed and the nearest centroid was used.
    pub fallback: bool,
}

/// Assigns each new keyword, in order, to one of its nearest clusters or a new
/// singleton cluster as chosen by the assignment prompt. Earlier assignments
/// are visible to later keywords. Unparseable replies fall back to the nearest
/// centroid.
pub fn assign_new_keywords(
    new: &[KeywordId],
    mut clusters: Vec<Cluster>,
    embeddings: &BTreeMap<KeywordId, Vec<f64>>,
    product_information: &str,
    top_k: usize,
    gateway: &mut Gateway,
    next_id: &mut dyn FnMut() -> ClusterId,
) -> Result<(Vec<Cluster>, Vec<Assignment>), ClusterError> {
    let mut log = Vec::new();
    for kw in new {
        for c in clusters.iter_mut() {
            c.keyword_ids.remove(kw);
        }
        clusters.retain(|c| !c.keyword_ids.is_empty());
        let emb = embeddings.get(kw).ok_or_else(|| ClusterError::MissingEmbedding(kw.clone()))?;
        let centroids = cluster_centroids(&clusters, embeddings)?;
        if centroids.is_empty() {
            let id = next_id();
            clusters.push(Cluster::new(id, [kw.clone()]));
            log.push(Assignment { keyword: kw.clone(), candidates: vec![], cluster: id, created: true, fallback: false });
            continue;
        }
        let candidates: Vec<ClusterId> = top_k_clusters(emb, &centroids, top_k).into_iter().map(|(id, _)| id).collect();
        let listing = |i: usize| -> String {
            match candidates.get(i).and_then(|id| clusters.iter().find(|c| c.id == *id)) {
                Some(c) => c.keyword_ids.iter().map(KeywordId::as_str).collect::<Vec<_>>().join(", "),
                None => "(no cluster)".into(),
            }
        };
        let prompt = render(
            TemplateId::Assign,
            &vars([
                ("keyword_tobe_decided", kw.to_string()),
                ("product_information", product_information.to_string()),
                ("cluster_1_keywords", listing(0)),
                ("cluster_2_keywords", listing(1)),
                ("cluster_3_keywords", listing(2)),
            ]),
        )
        .expect("assign placeholders supplied");
        let n_candidates = candidates.len();
        let parsed = gateway.ask(Slot::Generator, TemplateId::Assign, "", &prompt.rendered_text, |reply| {
            let choice = parse_assign(reply)?;
            match choice.index() {
                Some(i) if i >= n_candidates => Err(ParseError::new(format!("only {n_candidates} candidate clusters"), reply)),
                _ => Ok(choice),
            }
        });
        let (target, created, fallback) = match parsed {
            Ok(AssignChoice::NewCluster) => (next_id(), true, false),
            Ok(choice) => (candidates[choice.index().expect("existing cluster")], false, false),
            Err(e) if e.is_parse() => {
                log::warn!("assignment of {kw:?} fell back to nearest centroid: {e}");
                (candidates[0], false, true)
            }
            Err(e) => return Err(e.into()),
        };
        match clusters.iter_mut().find(|c| c.id == target) {
            Some(c) => {
                c.keyword_ids.insert(kw.clone());
            }
            None => clusters.push(Cluster::new(target, [kw.clone()])),
        }
        log.push(Assignment { keyword: kw.clone(), candidates, cluster: target, created, fallback });
    }
    clusters.sort_by_key(|c| c.id);
    Ok((clusters, log))
}

/// Relabels affinity-propagation groups with previous cluster ids by greatest
/// member overlap; unmatched groups get fresh ids.
fn carry_ids(
    groups: Vec<BTreeSet<KeywordId>>,
    previous: &[Cluster],
    next_id: &mut dyn FnMut() -> ClusterId,
) -> Vec<Cluster> {
    let mut pairs = Vec::new();
    for (g, members) in groups.iter().enumerate() {
        for p in previous {
            let overlap = members.intersection(&p.keyword_ids).count();
            if overlap > 0 {
                pairs.push((overlap, p.id, g));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut group_id: BTreeMap<usize, ClusterId> = BTreeMap::new();
    let mut used = BTreeSet::new();
    for (_, pid, g) in pairs {
        if !group_id.contains_key(&g) && used.insert(pid) {
            group_id.insert(g, pid);
        }
    }
    let mut out: Vec<Cluster> = groups
        .into_iter()
        .enumerate()
        .map(|(g, members)| {
            let id = group_id.get(&g).copied().unwrap_or_else(&mut *next_id);
            let mut c = Cluster::new(id, members);
            if let Some(p) = previous.iter().find(|p| p.id == id) {
                c.intent_summary = p.intent_summary.clone();
            }
            c
        })
        .collect();
    out.sort_by_key(|c| c.id);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReclusterParams {
    pub ap: ApParams,
    pub preference: Preference,
    pub top_k: usize,
}

impl Default for ReclusterParams {
    fn default() -> Self {
        ReclusterParams { ap: ApParams::default(), preference: Preference::Median, top_k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReclusterOutcome {
    pub clusters: Vec<Cluster>,
    pub assignments: Vec<Assignment>,
    pub ap_ran: bool,
    pub ap_converged: bool,
}

/// Rebuilds the partition over `old ∪ new`.
///
/// With `full`, affinity propagation runs over every keyword and is
/// authoritative for old keywords; otherwise old keywords keep their previous
/// clusters. New keywords are then placed one by one through the assignment
/// prompt. With no old keywords the affinity-propagation partition of the new
/// keywords is used directly.
#[allow(clippy::too_many_arguments)]
pub fn recluster(
    previous: &[Cluster],
    old: &[KeywordId],
    new: &[KeywordId],
    embeddings: &BTreeMap<KeywordId, Vec<f64>>,
    full: bool,
    params: &ReclusterParams,
    product_information: &str,
    gateway: &mut Gateway,
    next_id: &mut dyn FnMut() -> ClusterId,
) -> Result<ReclusterOutcome, ClusterError> {
    let old_set: BTreeSet<&KeywordId> = old.iter().collect();
    let new: Vec<KeywordId> = new.iter().filter(|k| !old_set.contains(k)).cloned().collect();
    let all: Vec<KeywordId> = old.iter().chain(&new).cloned().collect();
    let vectors = all
        .iter()
        .map(|id| embeddings.get(id).cloned().ok_or_else(|| ClusterError::MissingEmbedding(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    let run_ap = full || old.is_empty();
    let mut ap_converged = true;
    let base = if run_ap && !all.is_empty() {
        let sim = build_similarity(&vectors, params.preference)?;
        let res = affinity_propagation(&sim, params.ap);
        ap_converged = res.converged;
        let keep: BTreeSet<&KeywordId> = if old.is_empty() { all.iter().collect() } else { old_set.clone() };
        let groups: Vec<BTreeSet<KeywordId>> = res
            .groups()
            .into_iter()
            .map(|g| g.into_iter().map(|i| all[i].clone()).filter(|k| keep.contains(k)).collect::<BTreeSet<_>>())
            .filter(|g| !g.is_empty())
            .collect();
        carry_ids(groups, previous, next_id)
    } else {
        previous
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.keyword_ids.retain(|k| old_set.contains(k));
                c
            })
            .filter(|c| !c.keyword_ids.is_empty())
            .collect()
    };

    if old.is_empty() {
        return Ok(ReclusterOutcome { clusters: base, assignments: vec![], ap_ran: run_ap, ap_converged });
    }
    let (clusters, assignments) =
        assign_new_keywords(&new, base, embeddings, product_information, params.top_k, gateway, next_id)?;
    Ok(ReclusterOutcome { clusters, assignments, ap_ran: run_ap, ap_converged })
}
