//! Report files for the dataset analyses: guidance-scale shares, scorer
//! overlap and judge tallies. Each report is written as `.json`, a markdown
//! table (`.md`) and a plot-ready `.csv` series under `<out>/reports/`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthalign_core::analysis::{
    guidance_histogram, judge_tally, multi_overlap, GuidanceHistogram, JudgeOutcome, JudgeTally, ScorerRanking,
};
use synthalign_core::selection::rank_candidates;
use synthalign_core::Error as CoreError;

use crate::store::PreferenceRecord;

pub const REPORTS_DIR: &str = "reports";
pub const REWARD_MODEL_METHOD: &str = "reward_model";
pub const DEFAULT_KS: [usize; 3] = [1, 2, 3];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Analysis(#[from] CoreError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn write_triplet(out: &Path, stem: &str, json: &impl Serialize, md: &str, csv: &str) -> Result<Vec<PathBuf>, ReportError> {
    let dir = out.join(REPORTS_DIR);
    let mut j = serde_json::to_vec_pretty(json).expect("report serializes");
    j.push(b'\n');
    Ok(vec![
        write(&dir, &format!("{stem}.json"), &j)?,
        write(&dir, &format!("{stem}.md"), md.as_bytes())?,
        write(&dir, &format!("{stem}.csv"), csv.as_bytes())?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceGroup {
    pub total: u64,
    pub counts: Vec<u64>,
    pub percentages: Vec<f64>,
    pub modal_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceReport {
    pub records: u64,
    pub scales: Vec<f64>,
    pub groups: BTreeMap<String, GuidanceGroup>,
}

pub fn guidance_report(records: &[PreferenceRecord], scales: &[f64], group_by_topic: bool) -> Result<GuidanceReport, ReportError> {
    let hist: GuidanceHistogram = guidance_histogram(
        records
            .iter()
            .map(|r| (r.topic.as_str(), r.image_provenance.guidance_scale)),
        scales,
        group_by_topic,
    )?;
    let groups = hist
        .groups
        .iter()
        .map(|(k, s)| {
            (
                k.clone(),
                GuidanceGroup {
                    total: s.total,
                    counts: s.counts.clone(),
                    percentages: s.percentages.clone(),
                    modal_scale: hist.modal_scale(k),
                },
            )
        })
        .collect();
    Ok(GuidanceReport {
        records: records.len() as u64,
        scales: hist.scales,
        groups,
    })
}

pub fn write_guidance(out: &Path, report: &GuidanceReport) -> Result<Vec<PathBuf>, ReportError> {
    let mut md = String::from("| topic | n |");
    for s in &report.scales {
        let _ = write!(md, " g={s:.1} |");
    }
    md.push_str(" modal |\n|---|---:|");
    md.push_str(&"---:|".repeat(report.scales.len()));
    md.push_str("---:|\n");
    let mut csv = String::from("topic,guidance_scale,percentage\n");
    for (topic, g) in &report.groups {
        let _ = write!(md, "| {topic} | {} |", g.total);
        for (s, p) in report.scales.iter().zip(&g.percentages) {
            let _ = write!(md, " {p:.2}% |");
            let _ = writeln!(csv, "{topic},{s},{p}");
        }
        match g.modal_scale {
            Some(m) => {
                let _ = writeln!(md, " {m:.1} |");
            }
            None => md.push_str(" - |\n"),
        }
    }
    write_triplet(out, "guidance", report, &md, &csv)
}

/// Ranking of the guidance-scale candidates by the stored image scores, with
/// candidate `i` being the `i`-th scale in ascending order.
pub fn reward_model_rankings(records: &[PreferenceRecord], method_id: &str) -> Vec<ScorerRanking> {
    records
        .iter()
        .map(|r| {
            let mut scores = r.image_provenance.all_image_scores.clone();
            scores.sort_by(|a, b| a.0.total_cmp(&b.0));
            let values: Vec<f64> = scores.iter().map(|&(_, s)| s).collect();
            ScorerRanking {
                prompt_id: r.prompt_id.clone(),
                method_id: method_id.to_string(),
                ranking: rank_candidates(&values),
            }
        })
        .collect()
}

/// Reads `{prompt_id, method_id, ranking}` lines, grouped by method in order
/// of first appearance.
pub fn read_rankings(path: &Path) -> Result<Vec<(String, Vec<ScorerRanking>)>, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut methods: Vec<(String, Vec<ScorerRanking>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ScorerRanking = serde_json::from_str(line).map_err(|e| ReportError::Parse {
            path: format!("{}:{}", path.display(), i + 1),
            msg: e.to_string(),
        })?;
        match methods.iter_mut().find(|(m, _)| *m == r.method_id) {
            Some((_, v)) => v.push(r),
            None => methods.push((r.method_id.clone(), vec![r])),
        }
    }
    Ok(methods)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub label: String,
    pub methods: Vec<String>,
    /// Percentage per entry of [`OverlapReport::ks`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub ks: Vec<usize>,
    pub prompts: usize,
    pub rows: Vec<OverlapRow>,
}

/// One row per method pair and, with three or more methods, a final row for
/// agreement among all of them.
pub fn overlap_report(methods: &[(String, Vec<ScorerRanking>)], ks: &[usize]) -> Result<OverlapReport, ReportError> {
    if methods.len() < 2 {
        return Err(CoreError::Domain(format!("overlap needs at least two methods, got {}", methods.len())).into());
    }
    let row = |idx: &[usize], label: String| -> Result<OverlapRow, ReportError> {
        let sets: Vec<&[ScorerRanking]> = idx.iter().map(|&i| methods[i].1.as_slice()).collect();
        let values = ks.iter().map(|&k| multi_overlap(&sets, k)).collect::<Result<_, _>>()?;
        Ok(OverlapRow {
            label,
            methods: idx.iter().map(|&i| methods[i].0.clone()).collect(),
            values,
        })
    };
    let mut rows = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            rows.push(row(&[i, j], format!("{} & {}", methods[i].0, methods[j].0))?);
        }
    }
    if methods.len() >= 3 {
        let all: Vec<usize> = (0..methods.len()).collect();
        rows.push(row(&all, format!("All {} Methods", methods.len()))?);
    }
    Ok(OverlapReport {
        ks: ks.to_vec(),
        prompts: methods[0].1.len(),
        rows,
    })
}

pub fn write_overlap(out: &Path, report: &OverlapReport) -> Result<Vec<PathBuf>, ReportError> {
    let mut md = String::from("| methods |");
    let mut csv = String::from("methods,k,percentage\n");
    for k in &report.ks {
        let _ = write!(md, " top-{k} |");
    }
    md.push_str("\n|---|");
    md.push_str(&"---:|".repeat(report.ks.len()));
    md.push('\n');
    for r in &report.rows {
        let _ = write!(md, "| {} |", r.label);
        for (k, v) in report.ks.iter().zip(&r.values) {
            let _ = write!(md, " {v:.2}% |");
            let _ = writeln!(csv, "{},{k},{v}", r.label);
        }
        md.push('\n');
    }
    write_triplet(out, "overlap", report, &md, &csv)
}

/// Judge counts in the aggregated input format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeCounts {
    pub method_a: String,
    pub method_b: String,
    pub method_a_wins: u64,
    pub method_b_wins: u64,
    pub ties: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub method_a: String,
    pub method_b: String,
    #[serde(flatten)]
    pub tally: JudgeTally,
}

/// Accepts either one [`JudgeCounts`] object or one [`JudgeOutcome`] per line.
pub fn read_judge_input(path: &Path) -> Result<JudgeReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if let Ok(c) = serde_json::from_str::<JudgeCounts>(&text) {
        return Ok(JudgeReport {
            tally: JudgeTally::from_counts(c.method_a_wins, c.method_b_wins, c.ties)?,
            method_a: c.method_a,
            method_b: c.method_b,
        });
    }
    let mut outcomes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let o: JudgeOutcome = serde_json::from_str(line).map_err(|e| ReportError::Parse {
            path: format!("{}:{}", path.display(), i + 1),
            msg: e.to_string(),
        })?;
        outcomes.push(o);
    }
    Ok(JudgeReport {
        method_a: "method_a".into(),
        method_b: "method_b".into(),
        tally: judge_tally(&outcomes)?,
    })
}

/// Markdown table of counts and rates at one decimal.
pub fn judge_table(r: &JudgeReport) -> String {
    let t = &r.tally;
    let mut md = String::from("| outcome | count | rate |\n|---|---:|---:|\n");
    let _ = writeln!(md, "| {} wins | {} | {:.1}% |", r.method_a, t.method_a_wins, t.method_a_win_rate);
    let _ = writeln!(md, "| {} wins | {} | {:.1}% |", r.method_b, t.method_b_wins, t.method_b_win_rate);
    let _ = writeln!(md, "| tie | {} | {:.1}% |", t.ties, t.tie_rate);
    if t.no_decisive_comparisons {
        md.push_str("\nno decisive comparisons\n");
    }
    md
}

pub fn write_judge(out: &Path, r: &JudgeReport) -> Result<Vec<PathBuf>, ReportError> {
    let t = &r.tally;
    let csv = format!(
        "outcome,count,rate\n{}_wins,{},{}\n{}_wins,{},{}\ntie,{},{}\n",
        r.method_a, t.method_a_wins, t.method_a_win_rate, r.method_b, t.method_b_wins, t.method_b_win_rate, t.ties, t.tie_rate
    );
    write_triplet(out, "judge", r, &judge_table(r), &csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranks(method: &str, rows: &[&[usize]]) -> (String, Vec<ScorerRanking>) {
        (
            method.to_string(),
            rows.iter()
                .enumerate()
                .map(|(i, r)| ScorerRanking {
                    prompt_id: format!("p{i}"),
                    method_id: method.to_string(),
                    ranking: r.to_vec(),
                })
                .collect(),
        )
    }

    #[test]
    fn three_methods_give_four_rows() {
        let m = [
            ranks("a", &[&[0, 1, 2, 3]]),
            ranks("b", &[&[1, 0, 2, 3]]),
            ranks("c", &[&[0, 2, 1, 3]]),
        ];
        let r = overlap_report(&m, &DEFAULT_KS).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|row| row.values.len() == 3));
        assert_eq!(r.rows[3].label, "All 3 Methods");
        assert_eq!(r.rows[0].values, vec![0.0, 100.0, 100.0]);
    }

    #[test]
    fn judge_table_rounds_to_one_decimal() {
        let r = JudgeReport {
            method_a: "RM".into(),
            method_b: "CLIP".into(),
            tally: JudgeTally::from_counts(53, 37, 10).unwrap(),
        };
        let md = judge_table(&r);
        assert!(md.contains("| RM wins | 53 | 58.9% |"));
        assert!(md.contains("| CLIP wins | 37 | 41.1% |"));
        assert!(md.contains("| tie | 10 | 10.0% |"));
    }
}
