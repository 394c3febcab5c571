//! Agreement metrics between two local explanations of the same instance
//! (normally SHAP vs LIME), and their cohort-level aggregation.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::attribution::Attribution;
use crate::math::{mean, median, sample_std};

#[derive(Debug, Error, PartialEq)]
pub enum CrossValError {
    #[error("feature vocabularies differ")]
    VocabularyMismatch,
    #[error("need at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("rank vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no instances to aggregate")]
    EmptyInput,
    #[error("non-finite impact for feature {0}")]
    NonFinite(usize),
    #[error("malformed report csv: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

impl Sign {
    pub fn of(v: f64) -> Sign {
        if v > 0.0 {
            Sign::Positive
        } else if v < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }
}

/// Features split by impact sign; within a sign group rank 1 is the largest |impact|.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignedRanking {
    /// (feature index, rank)
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<(usize, usize)>,
    pub zero: Vec<usize>,
}

impl SignedRanking {
    pub fn rank_of(&self, feature: usize) -> Option<(Sign, usize)> {
        let find = |group: &[(usize, usize)]| group.iter().find(|(f, _)| *f == feature).map(|(_, r)| *r);
        find(&self.positive)
            .map(|r| (Sign::Positive, r))
            .or_else(|| find(&self.negative).map(|r| (Sign::Negative, r)))
    }
}

/// Ranks features within their sign group by descending |impact|; equal magnitudes
/// keep ascending feature order. Zero impacts are left unranked.
pub fn rank_features(attr: &Attribution) -> SignedRanking {
    let mut out = SignedRanking::default();
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (j, &v) in attr.phi.iter().enumerate() {
        match Sign::of(v) {
            Sign::Positive => pos.push(j),
            Sign::Negative => neg.push(j),
            Sign::Zero => out.zero.push(j),
        }
    }
    let by_magnitude = |a: &usize, b: &usize| attr.phi[*b].abs().total_cmp(&attr.phi[*a].abs()).then(a.cmp(b));
    pos.sort_by(by_magnitude);
    neg.sort_by(by_magnitude);
    out.positive = pos.into_iter().enumerate().map(|(r, j)| (j, r + 1)).collect();
    out.negative = neg.into_iter().enumerate().map(|(r, j)| (j, r + 1)).collect();
    out
}

fn check_pair(a: &Attribution, b: &Attribution) -> Result<(), CrossValError> {
    if a.feature_names != b.feature_names || a.phi.len() != b.phi.len() {
        return Err(CrossValError::VocabularyMismatch);
    }
    for attr in [a, b] {
        if let Some(j) = attr.phi.iter().position(|v| !v.is_finite()) {
            return Err(CrossValError::NonFinite(j));
        }
    }
    Ok(())
}

/// Fraction of features whose two impacts share a sign (zero only matches zero).
/// `scope` restricts both the count and the denominator to the given features, e.g. the
/// features the model actually splits on; `None` uses every feature.
pub fn impact_consistency(
    a: &Attribution,
    b: &Attribution,
    scope: Option<&[usize]>,
) -> Result<f64, CrossValError> {
    check_pair(a, b)?;
    let all: Vec<usize>;
    let features = match scope {
        Some(s) => s,
        None => {
            all = (0..a.phi.len()).collect();
            &all
        }
    };
    if features.is_empty() {
        return Err(CrossValError::EmptyInput);
    }
    let same = features
        .iter()
        .filter(|&&j| Sign::of(a.phi[j]) == Sign::of(b.phi[j]))
        .count();
    Ok(same as f64 / features.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDifference {
    pub feature: usize,
    pub name: String,
    pub sign: Sign,
    pub shap_rank: usize,
    pub lime_rank: usize,
    /// `shap_rank - lime_rank`
    pub diff: i64,
}

/// Rank differences over features with the same nonzero sign in both attributions,
/// in ascending feature order.
pub fn ranking_differences(shap: &Attribution, lime: &Attribution) -> Result<Vec<RankDifference>, CrossValError> {
    check_pair(shap, lime)?;
    let rs = rank_features(shap);
    let rl = rank_features(lime);
    Ok((0..shap.phi.len())
        .filter_map(|j| {
            let (sa, ra) = rs.rank_of(j)?;
            let (sb, rb) = rl.rank_of(j)?;
            (sa == sb).then(|| RankDifference {
                feature: j,
                name: shap.feature_names[j].clone(),
                sign: sa,
                shap_rank: ra,
                lime_rank: rb,
                diff: ra as i64 - rb as i64,
            })
        })
        .collect())
}

/// Spearman correlation; `r`/`p` are `None` when a rank vector has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson on ranks, exact at the ±1 extremes (identical or mirrored rankings).
fn rank_correlation(ra: &[f64], rb: &[f64]) -> Option<f64> {
    let r = pearson(ra, rb)?;
    let mirror = ra[0] + rb[0];
    if ra == rb {
        Some(1.0)
    } else if ra.iter().zip(rb).all(|(x, y)| x + y == mirror) {
        Some(-1.0)
    } else {
        Some(r)
    }
}

fn check_ranks(a: &[f64], b: &[f64]) -> Result<(), CrossValError> {
    if a.len() != b.len() {
        return Err(CrossValError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(CrossValError::TooFewPairs(a.len()));
    }
    Ok(())
}

/// Spearman's rho with a two-sided p-value from the t approximation
/// `t = r·sqrt((n-2)/(1-r²))` on `n-2` degrees of freedom.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Spearman, CrossValError> {
    check_ranks(a, b)?;
    let n = a.len();
    let r = rank_correlation(&average_ranks(a), &average_ranks(b));
    let p = r.map(|r| {
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let t = r * ((n - 2) as f64 / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (n - 2) as f64).expect("n >= 3");
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    });
    Ok(Spearman { n, r, p })
}

/// Exact two-sided permutation p-value for small samples (`n <= 10`).
pub fn spearman_exact(a: &[f64], b: &[f64]) -> Result<Spearman, CrossValError> {
    check_ranks(a, b)?;
    let n = a.len();
    if n > 10 {
        return Err(CrossValError::Malformed(format!("exact test limited to n <= 10, got {n}")));
    }
    let ra = average_ranks(a);
    let mut rb = average_ranks(b);
    let Some(observed) = rank_correlation(&ra, &rb) else {
        return Ok(Spearman { n, r: None, p: None });
    };
    // Heap's algorithm over all orderings of b's ranks.
    let (mut hits, mut total) = (0u64, 0u64);
    let mut c = vec![0usize; n];
    let mut visit = |perm: &[f64]| {
        total += 1;
        if pearson(&ra, perm).is_some_and(|r| r.abs() >= observed.abs() - 1e-12) {
            hits += 1;
        }
    };
    visit(&rb);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                rb.swap(0, i);
            } else {
                rb.swap(c[i], i);
            }
            visit(&rb);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(Spearman {
        n,
        r: Some(observed),
        p: Some(hits as f64 / total as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl DescriptiveStats {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(Self {
            count: xs.len(),
            mean: mean(xs),
            median: median(xs),
            std: sample_std(xs),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAgreement {
    pub instance: usize,
    pub consistency_ratio: f64,
    pub ranking_diffs: Vec<RankDifference>,
    /// Diagnostic: Spearman over this instance's sign-consistent (SHAP, LIME) rank pairs.
    pub spearman_r: Option<f64>,
}

/// Cohort-level summary: the table of consistency / ranking-difference statistics
/// plus pooled Spearman correlations per sign group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValSummary {
    pub n_instances: usize,
    pub consistency: DescriptiveStats,
    pub ranking_difference: Option<DescriptiveStats>,
    /// Share of ranking differences within [-2, 2].
    pub fraction_diff_within_2: Option<f64>,
    pub spearman_positive: Spearman,
    pub spearman_negative: Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub summary: CrossValSummary,
    pub instances: Vec<InstanceAgreement>,
}

fn pooled_spearman(pairs: &[(f64, f64)]) -> Spearman {
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    spearman(&a, &b).unwrap_or(Spearman {
        n: pairs.len(),
        r: None,
        p: None,
    })
}

/// Aggregates per-instance agreement over `(shap, lime)` pairs.
pub fn cohort_crossval(
    pairs: &[(Attribution, Attribution)],
    scope: Option<&[usize]>,
) -> Result<CrossValReport, CrossValError> {
    if pairs.is_empty() {
        return Err(CrossValError::EmptyInput);
    }
    let mut instances = Vec::with_capacity(pairs.len());
    let mut pos_pairs = Vec::new();
    let mut neg_pairs = Vec::new();
    for (i, (shap, lime)) in pairs.iter().enumerate() {
        let consistency_ratio = impact_consistency(shap, lime, scope)?;
        let ranking_diffs = ranking_differences(shap, lime)?;
        for d in &ranking_diffs {
            let pair = (d.shap_rank as f64, d.lime_rank as f64);
            match d.sign {
                Sign::Positive => pos_pairs.push(pair),
                Sign::Negative => neg_pairs.push(pair),
                Sign::Zero => {}
            }
        }
        let own: Vec<(f64, f64)> = ranking_diffs
            .iter()
            .map(|d| (d.shap_rank as f64, d.lime_rank as f64))
            .collect();
        instances.push(InstanceAgreement {
            instance: i,
            consistency_ratio,
            spearman_r: pooled_spearman(&own).r,
            ranking_diffs,
        });
    }
    let ratios: Vec<f64> = instances.iter().map(|a| a.consistency_ratio).collect();
    let diffs: Vec<f64> = instances
        .iter()
        .flat_map(|a| a.ranking_diffs.iter().map(|d| d.diff as f64))
        .collect();
    let within = diffs.iter().filter(|d| d.abs() <= 2.0).count();
    Ok(CrossValReport {
        summary: CrossValSummary {
            n_instances: pairs.len(),
            consistency: DescriptiveStats::of(&ratios).expect("non-empty"),
            ranking_difference: DescriptiveStats::of(&diffs),
            fraction_diff_within_2: (!diffs.is_empty()).then(|| within as f64 / diffs.len() as f64),
            spearman_positive: pooled_spearman(&pos_pairs),
            spearman_negative: pooled_spearman(&neg_pairs),
        },
        instances,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.digits$}"))
}

impl CrossValSummary {
    /// Plain-text table: consistency and ranking-difference rows with
    /// mean/median/std/min/max columns, followed by the Spearman and coverage lines.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let label_w = 52;
        writeln!(
            s,
            "{:<label_w$}{:>9}{:>9}{:>9}{:>9}{:>9}",
            "", "Mean", "Median", "Std", "Minimum", "Maximum"
        )
        .unwrap();
        let row = |s: &mut String, label: &str, st: &DescriptiveStats| {
            writeln!(
                s,
                "{label:<label_w$}{:>9.3}{:>9.3}{:>9.3}{:>9.3}{:>9.3}",
                st.mean, st.median, st.std, st.min, st.max
            )
            .unwrap();
        };
        row(&mut s, "Ratio of Impact Value Consistency (per individual)", &self.consistency);
        match &self.ranking_difference {
            Some(st) => row(&mut s, "Impact Ranking Difference", st),
            None => writeln!(s, "{:<label_w$}{:>9}", "Impact Ranking Difference", "n/a").unwrap(),
        }
        writeln!(s).unwrap();
        for (label, sp) in [
            ("Spearman, features pushing toward mortality", &self.spearman_positive),
            ("Spearman, features pushing toward non-mortality", &self.spearman_negative),
        ] {
            writeln!(s, "{label}: r = {}, p = {}, pairs = {}", fmt_opt(sp.r, 3), fmt_opt(sp.p, 3), sp.n).unwrap();
        }
        writeln!(
            s,
            "Ranking differences within [-2, 2]: {}",
            self.fraction_diff_within_2
                .map_or_else(|| "n/a".to_string(), |f| format!("{:.1}%", 100.0 * f))
        )
        .unwrap();
        writeln!(s, "Instances: {}", self.n_instances).unwrap();
        s
    }

    /// Long-format `metric,statistic,value` CSV; absent values are written empty.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "statistic", "value"])?;
        let mut put = |m: &str, s: &str, v: Option<f64>| {
            out.write_record([m, s, &v.map(|v| v.to_string()).unwrap_or_default()])
        };
        put("instances", "count", Some(self.n_instances as f64))?;
        for (m, st) in [
            ("consistency_ratio", Some(self.consistency)),
            ("ranking_difference", self.ranking_difference),
        ] {
            put(m, "count", st.map(|s| s.count as f64))?;
            put(m, "mean", st.map(|s| s.mean))?;
            put(m, "median", st.map(|s| s.median))?;
            put(m, "std", st.map(|s| s.std))?;
            put(m, "min", st.map(|s| s.min))?;
            put(m, "max", st.map(|s| s.max))?;
        }
        put("ranking_difference", "fraction_within_2", self.fraction_diff_within_2)?;
        for (m, sp) in [
            ("spearman_positive", self.spearman_positive),
            ("spearman_negative", self.spearman_negative),
        ] {
            put(m, "n", Some(sp.n as f64))?;
            put(m, "r", sp.r)?;
            put(m, "p", sp.p)?;
        }
        drop(put);
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, CrossValError> {
        let malformed = |m: String| CrossValError::Malformed(m);
        let mut rdr = csv::Reader::from_reader(r);
        let mut map = std::collections::HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            if rec.len() != 3 {
                return Err(malformed(format!("expected 3 fields, got {}", rec.len())));
            }
            let value = if rec[2].is_empty() {
                None
            } else {
                Some(rec[2].parse::<f64>().map_err(|e| malformed(e.to_string()))?)
            };
            map.insert(format!("{}.{}", &rec[0], &rec[1]), value);
        }
        let get = |k: &str| -> Result<Option<f64>, CrossValError> {
            map.get(k).copied().ok_or_else(|| malformed(format!("missing {k}")))
        };
        let stats = |m: &str| -> Result<Option<DescriptiveStats>, CrossValError> {
            Ok(match get(&format!("{m}.count"))? {
                None => None,
                Some(count) => Some(DescriptiveStats {
                    count: count as usize,
                    mean: get(&format!("{m}.mean"))?.unwrap_or(f64::NAN),
                    median: get(&format!("{m}.median"))?.unwrap_or(f64::NAN),
                    std: get(&format!("{m}.std"))?.unwrap_or(f64::NAN),
                    min: get(&format!("{m}.min"))?.unwrap_or(f64::NAN),
                    max: get(&format!("{m}.max"))?.unwrap_or(f64::NAN),
                }),
            })
        };
        let sp = |m: &str| -> Result<Spearman, CrossValError> {
            Ok(Spearman {
                n: get(&format!("{m}.n"))?.unwrap_or(0.0) as usize,
                r: get(&format!("{m}.r"))?,
                p: get(&format!("{m}.p"))?,
            })
        };
        Ok(CrossValSummary {
            n_instances: get("instances.count")?.unwrap_or(0.0) as usize,
            consistency: stats("consistency_ratio")?.ok_or_else(|| malformed("no consistency stats".into()))?,
            ranking_difference: stats("ranking_difference")?,
            fraction_diff_within_2: get("ranking_difference.fraction_within_2")?,
            spearman_positive: sp("spearman_positive")?,
            spearman_negative: sp("spearman_negative")?,
        })
    }
}

impl CrossValReport {
    /// Per-feature rows `instance,feature,sign,shap_rank,lime_rank,diff`.
    pub fn write_diffs_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["instance", "feature", "sign", "shap_rank", "lime_rank", "diff"])?;
        for inst in &self.instances {
            for d in &inst.ranking_diffs {
                out.write_record([
                    inst.instance.to_string(),
                    d.name.clone(),
                    match d.sign {
                        Sign::Positive => "positive",
                        Sign::Negative => "negative",
                        Sign::Zero => "zero",
                    }
                    .to_string(),
                    d.shap_rank.to_string(),
                    d.lime_rank.to_string(),
                    d.diff.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
