//! `results.csv`, `timings.csv` and `summary.json`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use uavmon::sim::{Method, TrialRecord, TrialResult};

/// Version of the `results.csv` columns and the `summary.json` layout.
pub const SCHEMA_VERSION: u32 = 1;

pub const RESULT_COLUMNS: [&str; 17] = [
    "known_cell",
    "pseudo_cell",
    "trial",
    "seed",
    "method",
    "status",
    "n_known",
    "n_pseudo",
    "ecr",
    "edv",
    "discovered",
    "discovery_rate",
    "n_unknown",
    "route_length",
    "path_length",
    "fallback_edges",
    "error",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per trial and method. Wall-clock data lives in `timings.csv` so
/// that this file depends on the seed alone.
pub fn write_results<W: Write>(mut out: W, records: &[TrialRecord], methods: &[Method]) -> std::io::Result<()> {
    writeln!(out, "# uavmon results schema {SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for rec in records {
        let k = &rec.key;
        let lead = [
            opt(k.cell_known),
            opt(k.cell_pseudo),
            k.trial.to_string(),
            k.seed.to_string(),
        ];
        match &rec.outcome {
            Ok(results) => {
                for r in results {
                    let row = [
                        r.method.label().to_string(),
                        "ok".into(),
                        r.n_known.to_string(),
                        r.n_pseudo.to_string(),
                        r.ecr.to_string(),
                        r.edv.to_string(),
                        opt(r.discovered),
                        opt(r.discovery_rate()),
                        r.n_unknown.to_string(),
                        r.route_length.to_string(),
                        r.path_length.to_string(),
                        r.fallback_edges.to_string(),
                        String::new(),
                    ];
                    w.write_record(lead.iter().chain(&row))?;
                }
            }
            Err(e) => {
                for m in methods {
                    let mut row = vec![String::new(); RESULT_COLUMNS.len() - lead.len()];
                    row[0] = m.label().to_string();
                    row[1] = "failed".into();
                    *row.last_mut().unwrap() = e.to_string();
                    w.write_record(lead.iter().chain(&row))?;
                }
            }
        }
    }
    w.flush()
}

pub fn write_timings<W: Write>(out: W, records: &[TrialRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["known_cell", "pseudo_cell", "trial", "seed", "wall_time_s", "timed_out"])?;
    for rec in records {
        let k = &rec.key;
        w.write_record([
            opt(k.cell_known),
            opt(k.cell_pseudo),
            k.trial.to_string(),
            k.seed.to_string(),
            format!("{:.3}", rec.wall_time_s),
            rec.timed_out.to_string(),
        ])?;
    }
    w.flush()
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSummary {
    pub method: Method,
    /// `None` when the axis is drawn per trial or for the all-cells aggregate.
    pub known: Option<usize>,
    pub pseudo: Option<usize>,
    pub n: usize,
    pub ecr: Stat,
    pub edv: Stat,
    pub route_length: Stat,
    pub path_length: Stat,
    pub discovered: Option<Stat>,
    pub discovery_rate: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub schema_version: u32,
    pub trials: usize,
    pub failed_trials: usize,
    pub timed_out_trials: usize,
    /// Per method over every successful trial.
    pub methods: Vec<GroupSummary>,
    /// Per method and sweep cell.
    pub cells: Vec<GroupSummary>,
}

impl Summary {
    pub fn method(&self, m: Method) -> Option<&GroupSummary> {
        self.methods.iter().find(|g| g.method == m)
    }

    pub fn cell(&self, m: Method, known: Option<usize>, pseudo: Option<usize>) -> Option<&GroupSummary> {
        self.cells
            .iter()
            .find(|g| g.method == m && g.known == known && g.pseudo == pseudo)
    }
}

fn group(method: Method, known: Option<usize>, pseudo: Option<usize>, rs: &[&TrialResult]) -> Option<GroupSummary> {
    let col = |f: &dyn Fn(&TrialResult) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
    let found: Vec<f64> = rs.iter().filter_map(|r| r.discovered.map(|d| d as f64)).collect();
    let rate: Vec<f64> = rs.iter().filter_map(|r| r.discovery_rate()).collect();
    Some(GroupSummary {
        method,
        known,
        pseudo,
        n: rs.len(),
        ecr: col(&|r| r.ecr)?,
        edv: col(&|r| r.edv)?,
        route_length: col(&|r| r.route_length)?,
        path_length: col(&|r| r.path_length)?,
        discovered: Stat::of(&found),
        discovery_rate: Stat::of(&rate),
    })
}

pub fn summarize(records: &[TrialRecord], methods: &[Method]) -> Summary {
    let ok: Vec<(&TrialRecord, &TrialResult)> = records
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|v| (r, v)))
        .flat_map(|(r, v)| v.iter().map(move |x| (r, x)))
        .collect();
    let mut cells: Vec<(Option<usize>, Option<usize>)> = Vec::new();
    for r in records {
        let c = (r.key.cell_known, r.key.cell_pseudo);
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let mut by_method = Vec::new();
    let mut by_cell = Vec::new();
    for &m in methods {
        let rs: Vec<&TrialResult> = ok.iter().filter(|(_, x)| x.method == m).map(|(_, x)| *x).collect();
        by_method.extend(group(m, None, None, &rs));
        for &(k, p) in &cells {
            let rs: Vec<&TrialResult> = ok
                .iter()
                .filter(|(r, x)| x.method == m && r.key.cell_known == k && r.key.cell_pseudo == p)
                .map(|(_, x)| *x)
                .collect();
            by_cell.extend(group(m, k, p, &rs));
        }
    }
    Summary {
        schema_version: SCHEMA_VERSION,
        trials: records.len(),
        failed_trials: records.iter().filter(|r| r.outcome.is_err()).count(),
        timed_out_trials: records.iter().filter(|r| r.timed_out).count(),
        methods: by_method,
        cells: by_cell,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use uavmon::sim::TrialKey;

    fn result(method: Method, discovered: Option<usize>, ecr: f64) -> TrialResult {
        TrialResult {
            method,
            n_known: 5,
            n_pseudo: 1,
            ecr,
            edv: 0.1,
            discovered,
            n_unknown: 50,
            route_length: 3000.0,
            path_length: 4000.0,
            fallback_edges: 0,
            wall_time_s: 1.5,
        }
    }

    fn records() -> Vec<TrialRecord> {
        let key = |trial| TrialKey {
            cell_known: Some(5),
            cell_pseudo: Some(1),
            trial,
            seed: 77 + trial as u64,
        };
        vec![
            TrialRecord {
                key: key(0),
                outcome: Ok(vec![
                    result(Method::Optimized, Some(20), 0.1),
                    result(Method::Straight, Some(10), 0.1),
                ]),
                wall_time_s: 2.0,
                timed_out: false,
            },
            TrialRecord {
                key: key(1),
                outcome: Ok(vec![
                    result(Method::Optimized, Some(30), 0.3),
                    result(Method::Straight, Some(14), 0.3),
                ]),
                wall_time_s: 70.0,
                timed_out: true,
            },
            TrialRecord {
                key: key(2),
                outcome: Err(uavmon::Error::EmptyEdgeSet.in_stage("budget")),
                wall_time_s: 0.1,
                timed_out: false,
            },
        ]
    }

    #[test]
    fn csv_has_versioned_header_and_rows() {
        let mut buf = Vec::new();
        write_results(&mut buf, &records(), &[Method::Optimized, Method::Straight]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# uavmon results schema 1");
        assert_eq!(lines.next().unwrap(), RESULT_COLUMNS.join(","));
        let body: Vec<&str> = lines.collect();
        assert_eq!(body.len(), 6);
        assert!(body[0].starts_with("5,1,0,77,optimized,ok,5,1,0.1,0.1,20,0.4,50,3000,4000,0,"));
        assert!(body[5].contains("failed"));
        assert!(body[5].ends_with(",budget: distance to an empty edge set is undefined"));

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.len() == RESULT_COLUMNS.len()));
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&records(), &[Method::Optimized, Method::Straight]);
        assert_eq!((s.trials, s.failed_trials, s.timed_out_trials), (3, 1, 1));
        let o = s.method(Method::Optimized).unwrap();
        assert_eq!(o.n, 2);
        let d = o.discovered.unwrap();
        assert_eq!(d.mean, 25.0);
        assert!((d.std - 50f64.sqrt()).abs() < 1e-12);
        assert!((o.discovery_rate.unwrap().mean - 0.5).abs() < 1e-12);
        assert_eq!(
            s.cell(Method::Straight, Some(5), Some(1))
                .unwrap()
                .discovered
                .unwrap()
                .mean,
            12.0
        );
        assert!(Stat::of(&[]).is_none());
        assert_eq!(Stat::of(&[3.0]).unwrap(), Stat { mean: 3.0, std: 0.0 });
    }

    #[test]
    fn summary_round_trips_through_json() {
        let s = summarize(&records(), &[Method::Optimized, Method::Straight]);
        let text = serde_json::to_string_pretty(&s).unwrap();
        let back: Summary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<Summary>(v).is_err());
    }
}
