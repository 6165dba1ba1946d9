//! Frequency-bias diagnostics and word-similarity evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::probe_accuracy;
use crate::corpus::FrequencyPartition;
use crate::linalg::{dot, norm, symmetric_eigen, Matrix};
use crate::trainer::{displacement_stats, Displacement};
use crate::{Error, Result};

/// Exact cosine nearest-neighbor search over the rows of a matrix.
///
/// Zero rows are never returned as neighbors; querying one is an error.
#[derive(Clone, Debug)]
pub struct CosineIndex<'a> {
    matrix: &'a Matrix,
    norms: Vec<f64>,
}

impl<'a> CosineIndex<'a> {
    pub fn new(matrix: &'a Matrix) -> Self {
        let norms = matrix.iter_rows().map(norm).collect();
        CosineIndex { matrix, norms }
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    /// Top-`k` rows by cosine similarity to row `word`, excluding `word`
    /// itself. Ties go to the smaller index.
    pub fn query(&self, word: usize, k: usize) -> Result<Vec<(usize, f64)>> {
        let n = self.len();
        if word >= n {
            return Err(Error::invalid(format!("row {word} out of range for {n} rows")));
        }
        if k >= n {
            return Err(Error::invalid(format!("k = {k} must be below the row count {n}")));
        }
        let qn = self.norms[word];
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::DegenerateRow(word));
        }
        let q = self.matrix.row(word);
        let mut scored: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != word && self.norms[j] > 0.0)
            .map(|j| (j, dot(q, self.matrix.row(j)) / (qn * self.norms[j])))
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if scored.len() > k && k > 0 {
            scored.select_nth_unstable_by(k - 1, order);
        }
        scored.truncate(k);
        scored.sort_by(order);
        Ok(scored)
    }
}

pub fn nearest_neighbors(emb: &Matrix, word: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    CosineIndex::new(emb).query(word, k)
}

/// How often the neighbors of each class share its class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborStats {
    /// Share of queried rare words whose nearest neighbor is rare.
    pub rare_top1_rare_fraction: f64,
    /// Share of all `k` neighbor slots of queried rare words held by rare words.
    pub rare_neighbor_rare_fraction_at_k: f64,
    /// Share of queried popular words whose nearest neighbor is popular.
    pub popular_top1_popular_fraction: f64,
    pub k: usize,
    pub rare_queried: usize,
    pub popular_queried: usize,
    /// Queries skipped because their row was zero.
    pub skipped: usize,
}

/// Neighbor statistics over up to `sample_size` words of each class,
/// sampled without replacement (all words when the class is smaller).
pub fn rare_neighbor_stats<R: Rng + ?Sized>(
    emb: &Matrix,
    partition: &FrequencyPartition,
    k: usize,
    sample_size: usize,
    rng: &mut R,
) -> Result<NeighborStats> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if partition.len() != emb.rows() {
        return Err(Error::invalid("partition does not match the embedding rows"));
    }
    let pick = |class: &[usize], rng: &mut R| -> Vec<usize> {
        if sample_size >= class.len() {
            class.to_vec()
        } else {
            let mut chosen: Vec<usize> = index::sample(rng, class.len(), sample_size)
                .into_iter()
                .map(|i| class[i])
                .collect();
            chosen.sort_unstable();
            chosen
        }
    };
    let rare_q = pick(partition.rare(), rng);
    let pop_q = pick(partition.popular(), rng);

    let idx = CosineIndex::new(emb);
    type Hits = Vec<Option<Vec<(usize, f64)>>>;
    let neighbors = |queries: &[usize]| -> Result<Hits> {
        queries
            .par_iter()
            .map(|&w| match idx.query(w, k) {
                Ok(nn) => Ok(Some(nn)),
                Err(Error::DegenerateRow(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    };
    let rare_nn = neighbors(&rare_q)?;
    let pop_nn = neighbors(&pop_q)?;

    let mut skipped = 0;
    let (mut rare_top1, mut rare_slots, mut slots, mut rare_ok) = (0usize, 0usize, 0usize, 0usize);
    for nn in &rare_nn {
        let Some(nn) = nn else {
            skipped += 1;
            continue;
        };
        rare_ok += 1;
        if nn.first().is_some_and(|&(j, _)| partition.is_rare(j)) {
            rare_top1 += 1;
        }
        rare_slots += nn.iter().filter(|&&(j, _)| partition.is_rare(j)).count();
        slots += nn.len();
    }
    let (mut pop_top1, mut pop_ok) = (0usize, 0usize);
    for nn in &pop_nn {
        let Some(nn) = nn else {
            skipped += 1;
            continue;
        };
        pop_ok += 1;
        if nn.first().is_some_and(|&(j, _)| partition.is_popular(j)) {
            pop_top1 += 1;
        }
    }
    if rare_ok == 0 || pop_ok == 0 || slots == 0 {
        let first_bad = rare_q.iter().chain(&pop_q).copied().find(|&w| norm(emb.row(w)) == 0.0);
        return Err(Error::DegenerateRow(first_bad.unwrap_or(0)));
    }
    Ok(NeighborStats {
        rare_top1_rare_fraction: rare_top1 as f64 / rare_ok as f64,
        rare_neighbor_rare_fraction_at_k: rare_slots as f64 / slots as f64,
        popular_top1_popular_fraction: pop_top1 as f64 / pop_ok as f64,
        k,
        rare_queried: rare_ok,
        popular_queried: pop_ok,
        skipped,
    })
}

/// Rows projected onto the top two principal directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `n x 2` coordinates.
    pub coords: Matrix,
    /// `2 x d` unit directions.
    pub directions: Matrix,
    /// Variance along each direction (covariance eigenvalues).
    pub explained_variance: [f64; 2],
}

/// Projects the mean-centered rows onto the two leading eigenvectors of
/// their covariance. Each direction is oriented so that its first nonzero
/// component is positive.
pub fn svd_projection(emb: &Matrix) -> Result<Projection> {
    let (n, d) = (emb.rows(), emb.cols());
    if n < 2 || d < 2 {
        return Err(Error::invalid("projection needs at least 2 rows and 2 columns"));
    }
    let mut mean = vec![0.0; d];
    for row in emb.iter_rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in emb.iter_rows() {
        for ((c, x), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let out = cov.row_mut(i);
            for j in i..d {
                out[j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.row(i)[j] / (n - 1) as f64;
            cov.row_mut(i)[j] = v;
            cov.row_mut(j)[i] = v;
        }
    }

    let total: f64 = (0..d).map(|i| cov.row(i)[i]).sum();
    let scale: f64 = emb.as_slice().iter().map(|x| x * x).sum::<f64>() / n as f64;
    // identical rows leave only rounding noise from the mean subtraction
    if !(total > 1e-24 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroVariance);
    }

    let (values, vectors) = symmetric_eigen(&cov);
    let mut directions = Matrix::zeros(2, d);
    for k in 0..2 {
        let v = vectors.row(k);
        let largest = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12 * largest)
            .map_or(1.0, |x| x.signum());
        for (o, x) in directions.row_mut(k).iter_mut().zip(v) {
            *o = sign * x;
        }
    }

    let mut coords = Matrix::zeros(n, 2);
    for (i, row) in emb.iter_rows().enumerate() {
        for ((c, x), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        let out = coords.row_mut(i);
        out[0] = dot(&centered, directions.row(0));
        out[1] = dot(&centered, directions.row(1));
    }
    Ok(Projection {
        coords,
        directions,
        explained_variance: [values[0].max(0.0), values[1].max(0.0)],
    })
}

/// Human similarity judgments over word pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDataset {
    pairs: Vec<(String, String, f64)>,
}

impl SimilarityDataset {
    /// Rejects non-finite scores and repeated unordered pairs.
    pub fn new(pairs: Vec<(String, String, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (a, b, s) in &pairs {
            if !s.is_finite() {
                return Err(Error::invalid(format!("non-finite score for ({a}, {b})")));
            }
            if !seen.insert(unordered(a, b)) {
                return Err(Error::invalid(format!("duplicate pair ({a}, {b})")));
            }
        }
        Ok(SimilarityDataset { pairs })
    }

    /// Parses `word1 word2 score` lines; blank lines and lines starting with
    /// `#` are ignored.
    pub fn parse<R: BufRead>(input: R, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let [a, b, s] = fields[..] else {
                return Err(err(i + 1, format!("expected 3 fields, found {}", fields.len())));
            };
            let score: f64 = s
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(i + 1, format!("bad score {s:?}")))?;
            if !seen.insert(unordered(a, b)) {
                return Err(err(i + 1, format!("duplicate pair ({a}, {b})")));
            }
            pairs.push((a.to_string(), b.to_string(), score));
        }
        Ok(SimilarityDataset { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        SimilarityDataset::parse(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn pairs(&self) -> &[(String, String, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// 1-based ranks with ties sharing the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of the average ranks.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid("score lists differ in length"));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientCoverage {
            covered: x.len(),
            total: x.len(),
        });
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Fraction of pairs with both words in the vocabulary.
    pub coverage: f64,
    pub covered: usize,
    pub total: usize,
}

/// Spearman correlation between cosine similarities and human scores over
/// the pairs whose words are both in `words`.
pub fn spearman(emb: &Matrix, words: &[String], dataset: &SimilarityDataset) -> Result<SpearmanResult> {
    let lookup: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    spearman_with(emb, &lookup, dataset)
}

fn spearman_with(
    emb: &Matrix,
    lookup: &HashMap<&str, usize>,
    dataset: &SimilarityDataset,
) -> Result<SpearmanResult> {
    let mut model = Vec::new();
    let mut human = Vec::new();
    for (a, b, score) in dataset.pairs() {
        let (Some(&i), Some(&j)) = (lookup.get(a.as_str()), lookup.get(b.as_str())) else {
            continue;
        };
        let (ra, rb) = (emb.row(i), emb.row(j));
        let (na, nb) = (norm(ra), norm(rb));
        if na == 0.0 {
            return Err(Error::DegenerateRow(i));
        }
        if nb == 0.0 {
            return Err(Error::DegenerateRow(j));
        }
        model.push(dot(ra, rb) / (na * nb));
        human.push(*score);
    }
    let total = dataset.len();
    if model.len() < 2 {
        return Err(Error::InsufficientCoverage {
            covered: model.len(),
            total,
        });
    }
    Ok(SpearmanResult {
        rho: rank_correlation(&model, &human)?,
        coverage: model.len() as f64 / total as f64,
        covered: model.len(),
        total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordClass {
    Popular,
    Rare,
}

impl WordClass {
    pub fn of(partition: &FrequencyPartition, idx: usize) -> Self {
        if partition.is_popular(idx) {
            WordClass::Popular
        } else {
            WordClass::Rare
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WordClass::Popular => "popular",
            WordClass::Rare => "rare",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub word: String,
    pub x: f64,
    pub y: f64,
    pub class: WordClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub k: usize,
    /// Words queried per class for the neighbor statistics; `None` queries all.
    pub sample_size: Option<usize>,
    pub probe_holdout: f64,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            k: 10,
            sample_size: None,
            probe_holdout: 0.3,
            seed: 1,
        }
    }
}

/// Every diagnostic for one embedding matrix. Fields that could not be
/// computed are `None` with the reason under `errors`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub vocab_size: usize,
    pub dim: usize,
    pub popular_count: usize,
    pub rare_count: usize,
    pub neighbors: Option<NeighborStats>,
    pub rare_top1_rare_fraction: Option<f64>,
    pub rare_neighbor_rare_fraction_at_k: Option<f64>,
    pub popular_top1_popular_fraction: Option<f64>,
    pub probe_accuracy: Option<f64>,
    /// Probe accuracy on the 2-D projection coordinates.
    pub projection_probe_accuracy: Option<f64>,
    pub explained_variance: Option<[f64; 2]>,
    pub projection: Option<Vec<ProjectedPoint>>,
    pub displacement: Option<Displacement>,
    pub displacement_ratio: Option<f64>,
    pub spearman: BTreeMap<String, f64>,
    pub coverage: BTreeMap<String, f64>,
    pub errors: BTreeMap<String, String>,
}

/// Initial embeddings and their recorded digest, for displacement.
pub struct Lineage<'a> {
    pub initial: &'a Matrix,
    pub digest: &'a str,
}

pub fn build_report(
    emb: &Matrix,
    words: &[String],
    partition: &FrequencyPartition,
    datasets: &[(String, SimilarityDataset)],
    config: &ReportConfig,
    lineage: Option<Lineage<'_>>,
) -> Result<DiagnosticsReport> {
    if words.len() != emb.rows() || partition.len() != emb.rows() {
        return Err(Error::invalid("words, partition and embeddings disagree in size"));
    }
    let mut report = DiagnosticsReport {
        vocab_size: emb.rows(),
        dim: emb.cols(),
        popular_count: partition.popular().len(),
        rare_count: partition.rare().len(),
        ..DiagnosticsReport::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let k = config.k.min(emb.rows().saturating_sub(1)).max(1);
    let sample = config.sample_size.unwrap_or(usize::MAX);
    match rare_neighbor_stats(emb, partition, k, sample, &mut rng) {
        Ok(s) => {
            report.rare_top1_rare_fraction = Some(s.rare_top1_rare_fraction);
            report.rare_neighbor_rare_fraction_at_k = Some(s.rare_neighbor_rare_fraction_at_k);
            report.popular_top1_popular_fraction = Some(s.popular_top1_popular_fraction);
            report.neighbors = Some(s);
        }
        Err(e) => {
            report.errors.insert("neighbors".into(), e.to_string());
        }
    }

    match probe_accuracy(emb, partition, config.probe_holdout, &mut rng) {
        Ok(a) => report.probe_accuracy = Some(a),
        Err(e) => {
            report.errors.insert("probe_accuracy".into(), e.to_string());
        }
    }

    match svd_projection(emb) {
        Ok(p) => {
            match probe_accuracy(&p.coords, partition, config.probe_holdout, &mut rng) {
                Ok(a) => report.projection_probe_accuracy = Some(a),
                Err(e) => {
                    report.errors.insert("projection_probe_accuracy".into(), e.to_string());
                }
            }
            report.explained_variance = Some(p.explained_variance);
            report.projection = Some(projected_points(&p, words, partition));
        }
        Err(e) => {
            report.errors.insert("projection".into(), e.to_string());
        }
    }

    if let Some(l) = lineage {
        match displacement_stats(emb, l.initial, l.digest, partition) {
            Ok(d) => {
                report.displacement_ratio = Some(d.ratio).filter(|r| r.is_finite());
                report.displacement = Some(d);
            }
            Err(e) => {
                report.errors.insert("displacement".into(), e.to_string());
            }
        }
    }

    let lookup: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    for (name, ds) in datasets {
        match spearman_with(emb, &lookup, ds) {
            Ok(r) => {
                report.spearman.insert(name.clone(), r.rho);
                report.coverage.insert(name.clone(), r.coverage);
            }
            Err(e) => {
                if let Error::InsufficientCoverage { covered, total } = e {
                    report.coverage.insert(name.clone(), covered as f64 / total.max(1) as f64);
                }
                report.errors.insert(format!("spearman:{name}"), e.to_string());
            }
        }
    }
    Ok(report)
}

pub fn projected_points(p: &Projection, words: &[String], partition: &FrequencyPartition) -> Vec<ProjectedPoint> {
    p.coords
        .iter_rows()
        .enumerate()
        .map(|(i, c)| ProjectedPoint {
            word: words[i].clone(),
            x: c[0],
            y: c[1],
            class: WordClass::of(partition, i),
        })
        .collect()
}

/// CSV with header `word,x,y,class`.
pub fn write_projection_csv<W: Write>(points: &[ProjectedPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["word", "x", "y", "class"]).map_err(csv_err)?;
    for p in points {
        w.write_record([p.word.as_str(), &p.x.to_string(), &p.y.to_string(), p.class.as_str()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

/// Minimal scatter plot: one `<circle>` per point, popular in red and rare
/// in blue.
pub fn projection_svg(points: &[ProjectedPoint]) -> String {
    const SIZE: f64 = 600.0;
    const PAD: f64 = 20.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for p in points {
        let cx = PAD + (p.x - x0) / span * (SIZE - 2.0 * PAD);
        let cy = SIZE - PAD - (p.y - y0) / span * (SIZE - 2.0 * PAD);
        let color = match p.class {
            WordClass::Popular => "#d62728",
            WordClass::Rare => "#1f77b4",
        };
        let _ = writeln!(
            svg,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"{color}\" class=\"{}\"><title>{}</title></circle>",
            p.class.as_str(),
            xml_escape(&p.word)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
