//! Search-query summarization: classify queries by the URL mix of their
//! organic results into target-favoring / competitor-favoring /
//! general-interest segments and emit the daily volume series V1/V2/V3.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("thresholds must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("taxonomy groups must be disjoint: `{domain}` appears in both {a} and {b}")]
    OverlappingTaxonomy {
        domain: String,
        a: &'static str,
        b: &'static str,
    },
    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("daily counts are not aligned to a uniform date grid: missing {missing}")]
    Misaligned { missing: NaiveDate },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One `(query, destination URL, impression count)` record from a search log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryLogRecord {
    pub query: String,
    pub url: String,
    pub count: u64,
}

/// How destination URLs are matched against taxonomy entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrlMatchMode {
    /// Registrable-domain suffix match: any URL under `advertiser.com`.
    #[default]
    DomainSuffix,
    /// Literal URL prefix match.
    UrlPrefix,
}

/// Domain sets for groups a (advertiser), b (competitors) and c (category);
/// anything else falls into group d.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UrlTaxonomy {
    pub advertiser_domains: Vec<String>,
    pub competitor_domains: Vec<String>,
    pub category_domains: Vec<String>,
    #[serde(default)]
    pub match_mode: UrlMatchMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UrlGroup {
    Advertiser,
    Competitor,
    Category,
    Other,
}

impl UrlTaxonomy {
    pub fn from_json_file(path: &Path) -> Result<Self, QueryError> {
        let text = std::fs::read_to_string(path)?;
        let taxonomy: UrlTaxonomy = serde_json::from_str(&text)?;
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let groups: [(&'static str, &[String]); 3] = [
            ("advertiser_domains", &self.advertiser_domains),
            ("competitor_domains", &self.competitor_domains),
            ("category_domains", &self.category_domains),
        ];
        for i in 0..groups.len() {
            for j in (i + 1)..groups.len() {
                for d in groups[i].1 {
                    if groups[j].1.contains(d) {
                        return Err(QueryError::OverlappingTaxonomy {
                            domain: d.clone(),
                            a: groups[i].0,
                            b: groups[j].0,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn group_of(&self, url: &str) -> UrlGroup {
        let matches = |entry: &str| match self.match_mode {
            UrlMatchMode::DomainSuffix => {
                let host = host_of(url);
                let entry = entry.trim_start_matches("www.");
                host == entry || host.ends_with(&format!(".{entry}"))
            }
            UrlMatchMode::UrlPrefix => url.starts_with(entry),
        };
        if self.advertiser_domains.iter().any(|d| matches(d)) {
            UrlGroup::Advertiser
        } else if self.competitor_domains.iter().any(|d| matches(d)) {
            UrlGroup::Competitor
        } else if self.category_domains.iter().any(|d| matches(d)) {
            UrlGroup::Category
        } else {
            UrlGroup::Other
        }
    }
}

/// Host portion of a URL, scheme/path/port/`www.` stripped.
fn host_of(url: &str) -> &str {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    let host = rest.split(['/', '?', '#']).next().unwrap_or(rest);
    let host = host.split(':').next().unwrap_or(host);
    host.strip_prefix("www.").unwrap_or(host)
}

/// Segment assignment for a classified query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Target,
    Competitor,
    General,
    Irrelevant,
}

impl Segment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Segment::Target => "target",
            Segment::Competitor => "competitor",
            Segment::General => "general",
            Segment::Irrelevant => "irrelevant",
        }
    }
}

/// Classification thresholds; the comparison is strictly greater-than, so
/// a ratio exactly at the threshold does not qualify.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Thresholds {
    pub category_min: f64,
    pub target_min: f64,
    pub competitor_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        // 50% for every rule.
        Self {
            category_min: 0.5,
            target_min: 0.5,
            competitor_min: 0.5,
        }
    }
}

impl Thresholds {
    fn validate(&self) -> Result<(), QueryError> {
        for t in [self.category_min, self.target_min, self.competitor_min] {
            if !(t > 0.0 && t < 1.0) {
                return Err(QueryError::BadThreshold(t));
            }
        }
        Ok(())
    }
}

/// Per-query impression sums by URL group and the resulting segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryClassification {
    pub query: String,
    pub w_a: u64,
    pub w_b: u64,
    pub w_c: u64,
    pub w_d: u64,
    pub segment: Segment,
    /// Set when the query had zero total impressions.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_volume: bool,
}

impl QueryClassification {
    pub fn w_total(&self) -> u64 {
        self.w_a + self.w_b + self.w_c + self.w_d
    }

    pub fn w_category(&self) -> u64 {
        self.w_a + self.w_b + self.w_c
    }
}

/// Classifies queries by their organic-result URL mix.
///
/// A query is relevant only if at least one associated URL belongs to the
/// advertiser. Decision order: category filter, then target rule, then
/// competitor rule, else general-interest.
pub fn classify_queries(
    log: &[QueryLogRecord],
    taxonomy: &UrlTaxonomy,
    thresholds: &Thresholds,
) -> Result<Vec<QueryClassification>, QueryError> {
    thresholds.validate()?;
    taxonomy.validate()?;
    // Aggregate per (query, group); duplicate (query, url) pairs sum.
    let mut sums: BTreeMap<&str, [u64; 4]> = BTreeMap::new();
    for record in log {
        let slot = match taxonomy.group_of(&record.url) {
            UrlGroup::Advertiser => 0,
            UrlGroup::Competitor => 1,
            UrlGroup::Category => 2,
            UrlGroup::Other => 3,
        };
        sums.entry(&record.query).or_default()[slot] += record.count;
    }
    let out = sums
        .into_iter()
        .map(|(query, [w_a, w_b, w_c, w_d])| {
            let w_total = w_a + w_b + w_c + w_d;
            let w_category = w_a + w_b + w_c;
            let zero_volume = w_total == 0;
            let segment = if zero_volume || w_a == 0 {
                // No advertiser URL ever appears: not relevant.
                Segment::Irrelevant
            } else if (w_category as f64 / w_total as f64) < thresholds.category_min {
                Segment::Irrelevant
            } else if w_a as f64 / w_category as f64 > thresholds.target_min {
                Segment::Target
            } else if w_b as f64 / w_category as f64 > thresholds.competitor_min {
                Segment::Competitor
            } else {
                Segment::General
            };
            QueryClassification {
                query: query.to_string(),
                w_a,
                w_b,
                w_c,
                w_d,
                segment,
                zero_volume,
            }
        })
        .collect();
    Ok(out)
}

/// Daily search counts per segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumePanel {
    pub dates: Vec<NaiveDate>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub v3: Vec<f64>,
    /// Queries that appeared in the counts with no classification.
    pub unclassified_queries: Vec<String>,
}

impl VolumePanel {
    /// The demand proxy: v1 + v2 + v3.
    pub fn category_volume(&self) -> Vec<f64> {
        (0..self.dates.len())
            .map(|t| self.v1[t] + self.v2[t] + self.v3[t])
            .collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), QueryError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "date,v1,v2,v3")?;
        for t in 0..self.dates.len() {
            writeln!(
                file,
                "{},{},{},{}",
                self.dates[t].format("%Y-%m-%d"),
                self.v1[t],
                self.v2[t],
                self.v3[t]
            )?;
        }
        Ok(())
    }
}

/// Sums per-(date, query) search counts into per-segment daily series.
/// Queries without a classification count as irrelevant and are reported.
pub fn build_volume_panel(
    daily_counts: &[(NaiveDate, String, u64)],
    classes: &[QueryClassification],
) -> Result<VolumePanel, QueryError> {
    let segment_of: BTreeMap<&str, Segment> = classes
        .iter()
        .map(|c| (c.query.as_str(), c.segment))
        .collect();
    let mut dates: Vec<NaiveDate> = daily_counts.iter().map(|(d, _, _)| *d).collect();
    dates.sort_unstable();
    dates.dedup();
    if dates.len() > 1 {
        let step = dates[1] - dates[0];
        for w in dates.windows(2) {
            if w[1] - w[0] != step {
                return Err(QueryError::Misaligned {
                    missing: w[0] + step,
                });
            }
        }
    }
    let index: BTreeMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut v = [
        vec![0.0; dates.len()],
        vec![0.0; dates.len()],
        vec![0.0; dates.len()],
    ];
    let mut unclassified = Vec::new();
    for (date, query, count) in daily_counts {
        let segment = match segment_of.get(query.as_str()) {
            Some(s) => *s,
            None => {
                if !unclassified.contains(query) {
                    unclassified.push(query.clone());
                }
                Segment::Irrelevant
            }
        };
        let slot = match segment {
            Segment::Target => 0,
            Segment::Competitor => 1,
            Segment::General => 2,
            Segment::Irrelevant => continue,
        };
        v[slot][index[date]] += *count as f64;
    }
    unclassified.sort();
    let [v1, v2, v3] = v;
    Ok(VolumePanel {
        dates,
        v1,
        v2,
        v3,
        unclassified_queries: unclassified,
    })
}

/// One point of the classification scatter: `(w_a/w_category,
/// w_category/w_total)` with the segment label.
#[derive(Debug, Clone, Serialize)]
pub struct ScatterPoint {
    pub query: String,
    pub target_share: f64,
    pub category_share: f64,
    pub segment: Segment,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationScatter {
    pub points: Vec<ScatterPoint>,
    /// Queries dropped because w_category = 0.
    pub omitted: usize,
}

/// Projects classifications onto the scatter axes used for threshold
/// diagnostics; zero-category queries are omitted and counted.
pub fn emit_classification_scatter(classes: &[QueryClassification]) -> ClassificationScatter {
    let mut points = Vec::new();
    let mut omitted = 0;
    for c in classes {
        let w_category = c.w_category();
        if w_category == 0 {
            omitted += 1;
            continue;
        }
        points.push(ScatterPoint {
            query: c.query.clone(),
            target_share: c.w_a as f64 / w_category as f64,
            category_share: w_category as f64 / c.w_total() as f64,
            segment: c.segment,
        });
    }
    ClassificationScatter { points, omitted }
}

/// Reads a `query,url,count` CSV.
pub fn load_query_log(path: &Path) -> Result<Vec<QueryLogRecord>, QueryError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let count_raw = record.get(2).unwrap_or("").trim();
        let count = count_raw.parse::<u64>().map_err(|_| QueryError::BadValue {
            row,
            column: "count".into(),
            value: count_raw.to_string(),
        })?;
        out.push(QueryLogRecord {
            query: record.get(0).unwrap_or("").trim().to_string(),
            url: record.get(1).unwrap_or("").trim().to_string(),
            count,
        });
    }
    Ok(out)
}

/// Reads a `date,query,count` CSV.
pub fn load_daily_counts(path: &Path) -> Result<Vec<(NaiveDate, String, u64)>, QueryError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let date_raw = record.get(0).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d").map_err(|_| {
            QueryError::BadValue {
                row,
                column: "date".into(),
                value: date_raw.to_string(),
            }
        })?;
        let count_raw = record.get(2).unwrap_or("").trim();
        let count = count_raw.parse::<u64>().map_err(|_| QueryError::BadValue {
            row,
            column: "count".into(),
            value: count_raw.to_string(),
        })?;
        out.push((date, record.get(1).unwrap_or("").trim().to_string(), count));
    }
    Ok(out)
}

pub fn save_classification_csv(
    classes: &[QueryClassification],
    path: &Path,
) -> Result<(), QueryError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "query,w_a,w_b,w_c,w_d,w_total,w_category,segment")?;
    for c in classes {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{}",
            c.query,
            c.w_a,
            c.w_b,
            c.w_c,
            c.w_d,
            c.w_total(),
            c.w_category(),
            c.segment.as_str()
        )?;
    }
    Ok(())
}

pub fn save_scatter_csv(scatter: &ClassificationScatter, path: &Path) -> Result<(), QueryError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "query,target_share,category_share,segment")?;
    for p in &scatter.points {
        writeln!(
            file,
            "{},{},{},{}",
            p.query,
            p.target_share,
            p.category_share,
            p.segment.as_str()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxonomy() -> UrlTaxonomy {
        UrlTaxonomy {
            advertiser_domains: vec!["advertiser.com".into()],
            competitor_domains: vec!["rival.com".into()],
            category_domains: vec!["flowers.org".into()],
            match_mode: UrlMatchMode::DomainSuffix,
        }
    }

    fn records(query: &str, counts: [(&str, u64); 4]) -> Vec<QueryLogRecord> {
        counts
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|(url, n)| QueryLogRecord {
                query: query.into(),
                url: url.to_string(),
                count: *n,
            })
            .collect()
    }

    const URLS: [&str; 4] = [
        "https://www.advertiser.com/shop",
        "https://rival.com/deals",
        "https://flowers.org/guide",
        "https://news.example.com/story",
    ];

    fn classify_one(w: [u64; 4]) -> QueryClassification {
        let log = records(
            "q",
            [
                (URLS[0], w[0]),
                (URLS[1], w[1]),
                (URLS[2], w[2]),
                (URLS[3], w[3]),
            ],
        );
        classify_queries(&log, &taxonomy(), &Thresholds::default())
            .unwrap()
            .remove(0)
    }

    #[test]
    fn target_rule() {
        // w_a/w_category = 8/10 > 0.5.
        let c = classify_one([8, 1, 1, 0]);
        assert_eq!(c.segment, Segment::Target);
        assert_eq!(c.w_total(), 10);
    }

    #[test]
    fn competitor_rule() {
        let c = classify_one([1, 8, 1, 0]);
        assert_eq!(c.segment, Segment::Competitor);
    }

    #[test]
    fn general_when_no_rule_fires() {
        let c = classify_one([4, 4, 2, 0]);
        assert_eq!(c.segment, Segment::General);
    }

    #[test]
    fn category_filter_marks_irrelevant() {
        // w_category/w_total = 3/10 < 0.5.
        let c = classify_one([1, 1, 1, 7]);
        assert_eq!(c.segment, Segment::Irrelevant);
    }

    #[test]
    fn threshold_equality_does_not_qualify() {
        // w_a/w_category exactly 0.5: strictly-greater comparison fails,
        // and w_b/w_category = 0.5 fails too, so the query is general.
        let c = classify_one([5, 5, 0, 0]);
        assert_eq!(c.segment, Segment::General);
        // Exactly at the category threshold counts as relevant (not less-than).
        let c = classify_one([4, 1, 0, 5]);
        assert_eq!(c.segment, Segment::Target);
    }

    #[test]
    fn query_without_advertiser_url_is_irrelevant() {
        let c = classify_one([0, 9, 1, 0]);
        assert_eq!(c.segment, Segment::Irrelevant);
    }

    #[test]
    fn zero_volume_is_flagged_not_fatal() {
        let log = vec![QueryLogRecord {
            query: "ghost".into(),
            url: URLS[0].into(),
            count: 0,
        }];
        let classes = classify_queries(&log, &taxonomy(), &Thresholds::default()).unwrap();
        assert_eq!(classes[0].segment, Segment::Irrelevant);
        assert!(classes[0].zero_volume);
    }

    #[test]
    fn duplicate_query_url_pairs_aggregate() {
        let mut log = records("q", [(URLS[0], 4), (URLS[1], 1), (URLS[2], 1), (URLS[3], 0)]);
        log.push(QueryLogRecord {
            query: "q".into(),
            url: URLS[0].into(),
            count: 4,
        });
        let c = classify_queries(&log, &taxonomy(), &Thresholds::default())
            .unwrap()
            .remove(0);
        assert_eq!(c.w_a, 8);
        assert_eq!(c.segment, Segment::Target);
    }

    #[test]
    fn domain_suffix_matching() {
        let t = taxonomy();
        assert_eq!(
            t.group_of("http://shop.advertiser.com/x"),
            UrlGroup::Advertiser
        );
        assert_eq!(t.group_of("https://advertiser.com"), UrlGroup::Advertiser);
        assert_eq!(t.group_of("https://notadvertiser.com"), UrlGroup::Other);
        assert_eq!(t.group_of("rival.com/page"), UrlGroup::Competitor);
    }

    #[test]
    fn bad_threshold_rejected() {
        let log = records(
            "q",
            [(URLS[0], 1), (URLS[1], 0), (URLS[2], 0), (URLS[3], 0)],
        );
        let t = Thresholds {
            category_min: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            classify_queries(&log, &taxonomy(), &t).unwrap_err(),
            QueryError::BadThreshold(_)
        ));
    }

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn volume_panel_single_target_query() {
        let classes = vec![QueryClassification {
            query: "buy flowers".into(),
            w_a: 8,
            w_b: 0,
            w_c: 0,
            w_d: 0,
            segment: Segment::Target,
            zero_volume: false,
        }];
        let counts = vec![(date("2015-01-01"), "buy flowers".to_string(), 10)];
        let panel = build_volume_panel(&counts, &classes).unwrap();
        assert_eq!(panel.v1, vec![10.0]);
        assert_eq!(panel.v2, vec![0.0]);
        assert_eq!(panel.v3, vec![0.0]);
    }

    #[test]
    fn volume_panel_sums_match_hand_tally() {
        let classes = vec![
            QueryClassification {
                query: "a".into(),
                w_a: 9,
                w_b: 0,
                w_c: 1,
                w_d: 0,
                segment: Segment::Target,
                zero_volume: false,
            },
            QueryClassification {
                query: "b".into(),
                w_a: 1,
                w_b: 9,
                w_c: 0,
                w_d: 0,
                segment: Segment::Competitor,
                zero_volume: false,
            },
        ];
        let counts = vec![
            (date("2015-01-01"), "a".to_string(), 3),
            (date("2015-01-01"), "b".to_string(), 5),
            (date("2015-01-02"), "a".to_string(), 7),
        ];
        let panel = build_volume_panel(&counts, &classes).unwrap();
        assert_eq!(panel.v1, vec![3.0, 7.0]);
        assert_eq!(panel.v2, vec![5.0, 0.0]);
        let total: f64 = panel.v1.iter().chain(&panel.v2).chain(&panel.v3).sum();
        assert_eq!(total, 15.0);
    }

    #[test]
    fn empty_classification_yields_zero_panel_with_warning() {
        let counts = vec![(date("2015-01-01"), "mystery".to_string(), 4)];
        let panel = build_volume_panel(&counts, &[]).unwrap();
        assert_eq!(panel.v1, vec![0.0]);
        assert_eq!(panel.unclassified_queries, vec!["mystery".to_string()]);
    }

    #[test]
    fn misaligned_dates_error() {
        let counts = vec![
            (date("2015-01-01"), "a".to_string(), 1),
            (date("2015-01-02"), "a".to_string(), 1),
            (date("2015-01-04"), "a".to_string(), 1),
        ];
        let err = build_volume_panel(&counts, &[]).unwrap_err();
        assert!(
            matches!(err, QueryError::Misaligned { missing } if missing == date("2015-01-03"))
        );
    }

    #[test]
    fn scatter_projection() {
        let classes = vec![
            QueryClassification {
                query: "t".into(),
                w_a: 8,
                w_b: 1,
                w_c: 1,
                w_d: 0,
                segment: Segment::Target,
                zero_volume: false,
            },
            QueryClassification {
                query: "irr".into(),
                w_a: 1,
                w_b: 1,
                w_c: 1,
                w_d: 7,
                segment: Segment::Irrelevant,
                zero_volume: false,
            },
            QueryClassification {
                query: "nocat".into(),
                w_a: 0,
                w_b: 0,
                w_c: 0,
                w_d: 5,
                segment: Segment::Irrelevant,
                zero_volume: false,
            },
        ];
        let scatter = emit_classification_scatter(&classes);
        assert_eq!(scatter.points.len(), 2);
        assert_eq!(scatter.omitted, 1);
        let t = &scatter.points[0];
        assert!((t.target_share - 0.8).abs() < 1e-12);
        assert!((t.category_share - 1.0).abs() < 1e-12);
        let irr = &scatter.points[1];
        assert_eq!(irr.segment, Segment::Irrelevant);
        assert!((irr.category_share - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_empty_output() {
        let scatter = emit_classification_scatter(&[]);
        assert!(scatter.points.is_empty());
        let classes = classify_queries(&[], &taxonomy(), &Thresholds::default()).unwrap();
        assert!(classes.is_empty());
    }

    #[test]
    fn overlapping_taxonomy_rejected() {
        let mut t = taxonomy();
        t.category_domains.push("rival.com".into());
        assert!(matches!(
            t.validate().unwrap_err(),
            QueryError::OverlappingTaxonomy { .. }
        ));
    }
}
