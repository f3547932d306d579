//! Navigation metrics (SR, NE, ISR), grouped aggregation and CSV / Markdown reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::EpisodeResult;
use crate::simulator::{Pose2D, SceneClass};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no episode results to aggregate")]
    EmptyInput,
    #[error("report file: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub fn navigation_error(final_xy: [f64; 2], target: [f64; 2]) -> f64 {
    (final_xy[0] - target[0]).hypot(final_xy[1] - target[1])
}

/// Inclusive: `ne == radius` counts as success.
pub fn success(ne: f64, radius: f64) -> bool {
    ne <= radius
}

/// `(completed, total)` where `completed` is the longest prefix of `waypoints` visited in
/// order (each within `radius` of some pose no earlier than the previous visit).
pub fn independent_success(trajectory: &[Pose2D], waypoints: &[[f64; 2]], radius: f64) -> (usize, usize) {
    let mut k = 0;
    for p in trajectory {
        while k < waypoints.len() && p.distance_to(waypoints[k]) <= radius {
            k += 1;
        }
    }
    (k, waypoints.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    Scene,
    /// Buckets 2, 3 and >=4 subtasks.
    Complexity,
    /// Buckets 2 and >=3 subtasks.
    CoarseComplexity,
    /// Only the overall row.
    None,
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "scene" => Ok(GroupBy::Scene),
            "complexity" => Ok(GroupBy::Complexity),
            "coarse-complexity" | "coarse" => Ok(GroupBy::CoarseComplexity),
            "none" | "all" => Ok(GroupBy::None),
            _ => Err(format!("unknown grouping `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsrMode {
    /// Mean completed over mean total.
    #[default]
    Pair,
    /// Mean per-episode completion fraction over 1.
    Normalized,
}

pub fn complexity_bucket(subtasks: usize, coarse: bool) -> String {
    let top = if coarse { 3 } else { 4 };
    if subtasks >= top {
        format!(">={top}")
    } else {
        subtasks.to_string()
    }
}

fn bucket_domain(coarse: bool) -> Vec<String> {
    if coarse {
        vec!["2".into(), ">=3".into()]
    } else {
        vec!["2".into(), "3".into(), ">=4".into()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scene: String,
    pub complexity: String,
    pub memory: String,
    pub n: usize,
    pub sr: f64,
    pub mean_ne: f64,
    pub isr_completed: f64,
    pub isr_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregation {
    pub reports: Vec<MetricsReport>,
    /// Groups with no episodes, omitted from `reports`.
    pub empty_groups: Vec<String>,
}

fn summarize(
    results: &[&EpisodeResult],
    radius: f64,
    isr: IsrMode,
    scene: &str,
    complexity: &str,
    memory: &str,
) -> MetricsReport {
    let n = results.len() as f64;
    let mut sr = 0.0;
    let mut ne = 0.0;
    let mut done = 0.0;
    let mut total = 0.0;
    for r in results {
        let e = navigation_error(r.final_pose.xy(), r.target);
        sr += success(e, radius) as u8 as f64;
        ne += e;
        let (c, t) = independent_success(&r.trajectory, &r.subtask_waypoints, radius);
        match isr {
            IsrMode::Pair => {
                done += c as f64;
                total += t as f64;
            }
            IsrMode::Normalized => {
                done += if t == 0 { 0.0 } else { c as f64 / t as f64 };
                total += 1.0;
            }
        }
    }
    MetricsReport {
        scene: scene.to_string(),
        complexity: complexity.to_string(),
        memory: memory.to_string(),
        n: results.len(),
        sr: sr / n,
        mean_ne: ne / n,
        isr_completed: done / n,
        isr_total: total / n,
    }
}

/// Per memory selection (sorted): one row per non-empty group in the grouping's fixed
/// domain order, then an `all` row. Success and ISR are recomputed at `radius`.
pub fn aggregate(results: &[EpisodeResult], radius: f64, group_by: GroupBy, isr: IsrMode) -> Result<Aggregation, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut memories: Vec<_> = results.iter().map(|r| r.memory_selection).collect();
    memories.sort();
    memories.dedup();

    let mut out = Aggregation::default();
    for mem in memories {
        let mem_name = mem.as_str();
        let rows: Vec<&EpisodeResult> = results.iter().filter(|r| r.memory_selection == mem).collect();
        let groups: Vec<(String, String, Box<dyn Fn(&EpisodeResult) -> bool>)> = match group_by {
            GroupBy::Scene => SceneClass::ALL
                .iter()
                .map(|&c| {
                    let f: Box<dyn Fn(&EpisodeResult) -> bool> = Box::new(move |r| r.scene_class == c);
                    (c.as_str().to_string(), "all".to_string(), f)
                })
                .collect(),
            GroupBy::Complexity | GroupBy::CoarseComplexity => {
                let coarse = group_by == GroupBy::CoarseComplexity;
                bucket_domain(coarse)
                    .into_iter()
                    .map(|b| {
                        let key = b.clone();
                        let f: Box<dyn Fn(&EpisodeResult) -> bool> =
                            Box::new(move |r| complexity_bucket(r.subtask_total, coarse) == key);
                        ("all".to_string(), b, f)
                    })
                    .collect()
            }
            GroupBy::None => Vec::new(),
        };
        for (scene, complexity, keep) in &groups {
            let members: Vec<&EpisodeResult> = rows.iter().copied().filter(|r| keep(r)).collect();
            if members.is_empty() {
                out.empty_groups.push(format!("scene={scene} complexity={complexity} memory={mem_name}"));
            } else {
                out.reports.push(summarize(&members, radius, isr, scene, complexity, mem_name));
            }
        }
        let stray = rows.iter().filter(|r| !groups.is_empty() && !groups.iter().any(|(_, _, k)| k(r))).count();
        if stray > 0 {
            log::warn!("{stray} episode(s) with memory={mem_name} fall outside every {group_by:?} group");
        }
        out.reports.push(summarize(&rows, radius, isr, "all", "all", mem_name));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

pub const CSV_HEADER: [&str; 8] =
    ["group_scene", "group_complexity", "memory", "n", "sr", "mean_ne_m", "isr_completed", "isr_total"];

/// Floats are written in shortest round-trip form.
pub fn to_csv(agg: &Aggregation) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &agg.reports {
        w.write_record([
            r.scene.clone(),
            r.complexity.clone(),
            r.memory.clone(),
            r.n.to_string(),
            r.sr.to_string(),
            r.mean_ne.to_string(),
            r.isr_completed.to_string(),
            r.isr_total.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv(text: &str) -> Result<Vec<MetricsReport>, EvalError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, EvalError> {
            rec.get(i).unwrap_or("").parse().map_err(|_| {
                EvalError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad number in column {i}")))
            })
        };
        out.push(MetricsReport {
            scene: rec.get(0).unwrap_or("").to_string(),
            complexity: rec.get(1).unwrap_or("").to_string(),
            memory: rec.get(2).unwrap_or("").to_string(),
            n: num(3)? as usize,
            sr: num(4)?,
            mean_ne: num(5)?,
            isr_completed: num(6)?,
            isr_total: num(7)?,
        });
    }
    Ok(out)
}

pub fn to_markdown(agg: &Aggregation) -> String {
    let mut s = String::new();
    s.push_str("| Scene | Complexity | Memory | n | SR↑ | NE↓ | ISR |\n");
    s.push_str("|---|---|---|---:|---:|---:|---:|\n");
    for r in &agg.reports {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.2} | {:.2} | {:.2} / {:.2} |",
            r.scene, r.complexity, r.memory, r.n, r.sr, r.mean_ne, r.isr_completed, r.isr_total
        );
    }
    if !agg.empty_groups.is_empty() {
        s.push_str("\nEmpty groups (omitted):\n");
        for g in &agg.empty_groups {
            let _ = writeln!(s, "- {g}");
        }
    }
    s
}

pub fn emit_report(agg: &Aggregation, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    let text = match format {
        ReportFormat::Csv => to_csv(agg)?,
        ReportFormat::Markdown => to_markdown(agg),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
