//! ROUGE-1, ROUGE-2 and ROUGE-SU4.
//!
//! Texts are tokenized with the corpus tokenizer and casefolded; there is no
//! stemming or stopword removal, so absolute numbers differ from the official
//! ROUGE-1.5.5 script.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_text, Cluster};

/// Maximum number of tokens allowed between the two words of a skip-bigram.
pub const SU4_MAX_GAP: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let precision = if candidate_total == 0 { 0.0 } else { overlap as f64 / candidate_total as f64 };
        let recall = if reference_total == 0 { 0.0 } else { overlap as f64 / reference_total as f64 };
        Prf {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }

    fn mean(items: &[Prf]) -> Prf {
        if items.is_empty() {
            return Prf::default();
        }
        let n = items.len() as f64;
        Prf {
            precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Scores of one candidate against its references.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeEntry {
    /// Mean over references; the headline number.
    pub mean: Prf,
    /// The reference with the highest F1.
    pub max: Prf,
    pub per_reference: Vec<Prf>,
}

impl RougeEntry {
    fn from_per_reference(per_reference: Vec<Prf>) -> Self {
        let max = per_reference
            .iter()
            .copied()
            .fold(None, |best: Option<Prf>, p| match best {
                Some(b) if b.f1 >= p.f1 => Some(b),
                _ => Some(p),
            })
            .unwrap_or_default();
        RougeEntry {
            mean: Prf::mean(&per_reference),
            max,
            per_reference,
        }
    }
}

fn counts<T: Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut map = HashMap::new();
    for item in items {
        *map.entry(item).or_insert(0) += 1;
    }
    map
}

fn clipped_overlap<T: Hash + Eq>(cand: &HashMap<T, usize>, reference: &HashMap<T, usize>) -> usize {
    cand.iter()
        .map(|(k, &c)| c.min(reference.get(k).copied().unwrap_or(0)))
        .sum()
}

pub fn ngrams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).collect()
}

/// Ordered token pairs `(i, j)` with at most `max_gap` tokens between them.
pub fn skip_bigrams(tokens: &[String], max_gap: usize) -> Vec<(&str, &str)> {
    let mut out = Vec::new();
    for i in 0..tokens.len() {
        for j in (i + 1)..tokens.len().min(i + max_gap + 2) {
            out.push((tokens[i].as_str(), tokens[j].as_str()));
        }
    }
    out
}

/// Clipped n-gram overlap for `n` in {1, 2}.
pub fn rouge_n(candidate: &[String], references: &[Vec<String>], n: usize) -> RougeEntry {
    assert!(n == 1 || n == 2, "ROUGE-N is defined here for n in {{1, 2}}");
    let cand = counts(ngrams(candidate, n));
    let cand_total = candidate.len().saturating_sub(n - 1);
    let per_ref = references
        .iter()
        .map(|r| {
            let rc = counts(ngrams(r, n));
            let ref_total = r.len().saturating_sub(n - 1);
            Prf::from_counts(clipped_overlap(&cand, &rc), cand_total, ref_total)
        })
        .collect();
    RougeEntry::from_per_reference(per_ref)
}

#[derive(Hash, PartialEq, Eq)]
enum SuUnit<'a> {
    Uni(&'a str),
    Skip(&'a str, &'a str),
}

fn su_units(tokens: &[String], max_gap: usize) -> Vec<SuUnit<'_>> {
    let mut units: Vec<SuUnit> = tokens.iter().map(|t| SuUnit::Uni(t)).collect();
    units.extend(skip_bigrams(tokens, max_gap).into_iter().map(|(a, b)| SuUnit::Skip(a, b)));
    units
}

/// Skip-bigrams with gap at most `max_gap`, plus unigrams.
pub fn rouge_su(candidate: &[String], references: &[Vec<String>], max_gap: usize) -> RougeEntry {
    let cu = su_units(candidate, max_gap);
    let cand_total = cu.len();
    let cand = counts(cu);
    let per_ref = references
        .iter()
        .map(|r| {
            let ru = su_units(r, max_gap);
            let ref_total = ru.len();
            Prf::from_counts(clipped_overlap(&cand, &counts(ru)), cand_total, ref_total)
        })
        .collect();
    RougeEntry::from_per_reference(per_ref)
}

pub fn rouge_su4(candidate: &[String], references: &[Vec<String>]) -> RougeEntry {
    rouge_su(candidate, references, SU4_MAX_GAP)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub r1: RougeEntry,
    pub r2: RougeEntry,
    pub rsu4: RougeEntry,
}

/// Normalized tokens for ROUGE, optionally truncated.
pub fn rouge_tokens(text: &str, max_tokens: Option<usize>) -> Vec<String> {
    let mut tokens: Vec<String> = tokenize_text(text).into_iter().map(|t| t.normalized).collect();
    if let Some(limit) = max_tokens {
        tokens.truncate(limit);
    }
    tokens
}

pub fn score_summary(summary: &str, references: &[String], max_tokens: Option<usize>) -> RougeReport {
    let cand = rouge_tokens(summary, max_tokens);
    let refs: Vec<Vec<String>> = references.iter().map(|r| rouge_tokens(r, None)).collect();
    RougeReport {
        r1: rouge_n(&cand, &refs, 1),
        r2: rouge_n(&cand, &refs, 2),
        rsu4: rouge_su4(&cand, &refs),
    }
}

/// Headline (mean-over-references) numbers per metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub r1: Prf,
    pub r2: Prf,
    pub rsu4: Prf,
}

impl MetricTriple {
    fn headline(report: &RougeReport) -> Self {
        MetricTriple {
            r1: report.r1.mean,
            r2: report.r2.mean,
            rsu4: report.rsu4.mean,
        }
    }

    fn best(report: &RougeReport) -> Self {
        MetricTriple {
            r1: report.r1.max,
            r2: report.r2.max,
            rsu4: report.rsu4.max,
        }
    }

    fn average(items: &[MetricTriple]) -> Self {
        let pick = |f: fn(&MetricTriple) -> Prf| Prf::mean(&items.iter().map(f).collect::<Vec<_>>());
        MetricTriple {
            r1: pick(|m| m.r1),
            r2: pick(|m| m.r2),
            rsu4: pick(|m| m.rsu4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub cluster_id: String,
    pub report: RougeReport,
}

/// Macro-averaged scores over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub aggregate: MetricTriple,
    pub aggregate_max_reference: MetricTriple,
    pub per_cluster: Vec<ClusterScore>,
    pub skipped: Vec<String>,
    pub max_candidate_tokens: Option<usize>,
}

/// Scores one summary per cluster. Clusters without references or without
/// a system summary are skipped with a warning.
pub fn evaluate_run(
    summaries: &HashMap<String, String>,
    clusters: &[Cluster],
    max_candidate_tokens: Option<usize>,
) -> RunReport {
    let mut per_cluster = Vec::new();
    let mut skipped = Vec::new();
    for cluster in clusters {
        let Some(summary) = summaries.get(&cluster.cluster_id) else {
            warn!("no system summary for cluster {:?}; skipped", cluster.cluster_id);
            skipped.push(cluster.cluster_id.clone());
            continue;
        };
        if cluster.references.is_empty() {
            warn!("cluster {:?} has no references; skipped", cluster.cluster_id);
            skipped.push(cluster.cluster_id.clone());
            continue;
        }
        per_cluster.push(ClusterScore {
            cluster_id: cluster.cluster_id.clone(),
            report: score_summary(summary, &cluster.references, max_candidate_tokens),
        });
    }
    let headline: Vec<_> = per_cluster.iter().map(|c| MetricTriple::headline(&c.report)).collect();
    let best: Vec<_> = per_cluster.iter().map(|c| MetricTriple::best(&c.report)).collect();
    RunReport {
        aggregate: MetricTriple::average(&headline),
        aggregate_max_reference: MetricTriple::average(&best),
        per_cluster,
        skipped,
        max_candidate_tokens,
    }
}

impl RunReport {
    /// `{metric -> {precision, recall, f1}}` for the headline aggregate.
    pub fn metric_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rouge-1": self.aggregate.r1,
            "rouge-2": self.aggregate.r2,
            "rouge-su4": self.aggregate.rsu4,
        })
    }

    /// Fixed-width text table of per-cluster and aggregate F1 scores.
    pub fn table(&self) -> String {
        let width = self
            .per_cluster
            .iter()
            .map(|c| c.cluster_id.len())
            .chain(["aggregate".len(), "cluster".len()])
            .max()
            .unwrap_or(9);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>7}", "cluster", "R-1", "R-2", "R-SU4");
        let row = |out: &mut String, name: &str, m: &MetricTriple| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}",
                name,
                100.0 * m.r1.f1,
                100.0 * m.r2.f1,
                100.0 * m.rsu4.f1
            );
        };
        for c in &self.per_cluster {
            row(&mut out, &c.cluster_id, &MetricTriple::headline(&c.report));
        }
        row(&mut out, "aggregate", &self.aggregate);
        out
    }

    /// Metric names whose aggregate F1 falls below the given floor.
    pub fn violations(&self, min_f1: &Thresholds) -> Vec<String> {
        let mut bad = Vec::new();
        let checks = [
            ("rouge-1", min_f1.r1, self.aggregate.r1.f1),
            ("rouge-2", min_f1.r2, self.aggregate.r2.f1),
            ("rouge-su4", min_f1.rsu4, self.aggregate.rsu4.f1),
        ];
        for (name, floor, value) in checks {
            if let Some(floor) = floor {
                if value < floor {
                    bad.push(format!("{name} F1 {value:.4} < {floor:.4}"));
                }
            }
        }
        bad
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub rsu4: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_is_perfect() {
        let x = toks("the cat sat on the mat");
        for entry in [rouge_n(&x, std::slice::from_ref(&x), 1), rouge_n(&x, std::slice::from_ref(&x), 2), rouge_su4(&x, std::slice::from_ref(&x))] {
            assert_eq!(entry.mean, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        }
    }

    #[test]
    fn unigram_and_bigram_examples() {
        let c = toks("the cat sat");
        let r = vec![toks("the cat ran")];
        let r1 = rouge_n(&c, &r, 1).mean;
        assert!((r1.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r1.precision - 2.0 / 3.0).abs() < 1e-15);
        let r2 = rouge_n(&c, &r, 2).mean;
        assert_eq!(r2.recall, 0.5);
    }

    #[test]
    fn skip_bigram_counts() {
        assert_eq!(skip_bigrams(&toks("a b c d e"), 4).len(), 10);
        // gap 0 is plain bigrams
        assert_eq!(skip_bigrams(&toks("a b c d e"), 0).len(), 4);
        // 7 tokens: all 21 pairs minus (0,6)
        assert_eq!(skip_bigrams(&toks("a b c d e f g"), 4).len(), 20);
    }

    #[test]
    fn disjoint_and_empty() {
        let c = toks("alpha beta gamma");
        let r = vec![toks("delta epsilon")];
        assert_eq!(rouge_su4(&c, &r).mean, Prf::default());
        assert_eq!(rouge_n(&[], &r, 1).mean, Prf::default());
        assert_eq!(rouge_n(&[], &r, 2).mean, Prf::default());
    }

    #[test]
    fn multi_reference_mean_and_max() {
        let c = toks("a b");
        let e = rouge_n(&c, &[toks("a b"), toks("c d")], 1);
        assert_eq!(e.mean.f1, 0.5);
        assert_eq!(e.max.f1, 1.0);
        assert_eq!(e.per_reference.len(), 2);
    }

    fn cluster(id: &str, refs: &[&str]) -> Cluster {
        Cluster {
            cluster_id: id.into(),
            documents: vec![Document {
                doc_id: "d".into(),
                date: None,
                raw_text: "x".into(),
            }],
            references: refs.iter().map(|s| s.to_string()).collect(),
            synopses: None,
        }
    }

    #[test]
    fn run_macro_average() {
        let clusters = vec![cluster("a", &["the cat sat"]), cluster("b", &["dogs bark"]), cluster("c", &[])];
        let summaries: HashMap<String, String> = [
            ("a".to_string(), "The cat sat".to_string()),
            ("b".to_string(), "birds sing".to_string()),
            ("c".to_string(), "anything".to_string()),
        ]
        .into_iter()
        .collect();
        let report = evaluate_run(&summaries, &clusters, None);
        assert_eq!(report.per_cluster.len(), 2);
        assert_eq!(report.skipped, vec!["c".to_string()]);
        assert_eq!(report.aggregate.r1.f1, 0.5);
        assert!(report.table().contains("aggregate"));
        let v = report.violations(&Thresholds { r1: Some(0.6), r2: None, rsu4: Some(0.1) });
        assert_eq!(v.len(), 1);
        assert!(report.metric_json()["rouge-1"]["f1"].as_f64().unwrap() == 0.5);
    }

    #[test]
    fn truncation_applies_to_candidate() {
        let clusters = vec![cluster("a", &["one two"])];
        let summaries: HashMap<String, String> =
            [("a".to_string(), "one two three four".to_string())].into_iter().collect();
        let full = evaluate_run(&summaries, &clusters, None);
        let cut = evaluate_run(&summaries, &clusters, Some(2));
        assert_eq!(cut.aggregate.r1.precision, 1.0);
        assert_eq!(full.aggregate.r1.precision, 0.5);
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from)
    }

    proptest! {
        #[test]
        fn self_identity(x in prop::collection::vec(word(), 1..15)) {
            let e = score_summary(&x.join(" "), &[x.join(" ")], None);
            prop_assert_eq!(e.r1.mean.f1, 1.0);
            prop_assert_eq!(e.rsu4.mean.f1, 1.0);
            if x.len() >= 2 {
                prop_assert_eq!(e.r2.mean.f1, 1.0);
            }
        }

        #[test]
        fn appending_reference_ngram_never_lowers_recall(
            c in prop::collection::vec(word(), 0..10),
            r in prop::collection::vec(word(), 2..10),
            at in 0usize..8,
        ) {
            let refs = vec![r.clone()];
            for n in [1, 2] {
                let before = rouge_n(&c, &refs, n).mean.recall;
                let k = at % (r.len() - n + 1);
                let mut longer = c.clone();
                longer.extend_from_slice(&r[k..k + n]);
                let after = rouge_n(&longer, &refs, n).mean.recall;
                prop_assert!(after >= before);
            }
        }

        #[test]
        fn full_gap_is_all_pairs(c in prop::collection::vec(word(), 0..10), r in prop::collection::vec(word(), 1..10)) {
            let gap = c.len().max(r.len());
            let e = rouge_su(&c, std::slice::from_ref(&r), gap).mean;
            // all-pairs oracle
            let pairs = |t: &[String]| {
                let mut v = Vec::new();
                for i in 0..t.len() { for j in i + 1..t.len() { v.push((t[i].clone(), t[j].clone())); } }
                v
            };
            let units = |t: &[String]| {
                let mut u: Vec<String> = t.iter().map(|w| format!("u:{w}")).collect();
                u.extend(pairs(t).into_iter().map(|(a, b)| format!("s:{a} {b}")));
                u
            };
            let cu = units(&c);
            let mut ru = units(&r);
            let mut hit = 0;
            for x in &cu {
                if let Some(pos) = ru.iter().position(|y| y == x) {
                    ru.remove(pos);
                    hit += 1;
                }
            }
            let expect = Prf::from_counts(hit, cu.len(), units(&r).len());
            prop_assert_eq!(e, expect);
        }
    }
}
