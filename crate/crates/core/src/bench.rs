//! Runs several mechanisms over a set of grids and tabulates cluster counts,
//! timing and (optionally) agreement with reference masks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{run_mechanism, BaselineError, MechanismSpec};
use crate::clusterer::{count_stats, TokenizerConfig};
use crate::grid::FeatureGrid;
use crate::merger::{MergerError, MergerWeights};
use crate::metrics::{evaluate, MetricsError, ReferenceMasks};

pub const CSV_HEADER: &str = "mechanism,avg_k,min_k,max_k,wall_ms_mean,miou,dice";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("nothing to benchmark: {0}")]
    EmptyInput(&'static str),
    #[error("{refs} reference sets for {grids} grids")]
    RefCountMismatch { grids: usize, refs: usize },
    #[error("grid {index}: {source}")]
    Mechanism {
        index: usize,
        #[source]
        source: BaselineError,
    },
    #[error("grid {index}: {source}")]
    Metrics {
        index: usize,
        #[source]
        source: MetricsError,
    },
    #[error(transparent)]
    Weights(#[from] MergerError),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    pub config: TokenizerConfig,
    /// Used for every grid whose `d` matches; otherwise weights are seeded.
    pub weights: Option<MergerWeights>,
    pub weights_seed: u64,
    /// Worker pool size; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

/// Per-grid outcome of one mechanism.
#[derive(Debug, Clone, Serialize)]
pub struct GridResult {
    pub k: usize,
    pub wall_ms: f64,
    pub miou: Option<f64>,
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mechanism: String,
    pub avg_k: f64,
    pub min_k: usize,
    pub max_k: usize,
    pub wall_ms_mean: f64,
    pub miou: Option<f64>,
    pub dice: Option<f64>,
    /// Per-grid results in input order.
    pub per_grid: Vec<GridResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub notes: Vec<String>,
}

fn opt(v: Option<f64>, places: usize) -> String {
    v.map(|x| format!("{x:.places$}")).unwrap_or_default()
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.4},{},{},{:.3},{},{}",
                csv_field(&r.mechanism),
                r.avg_k,
                r.min_k,
                r.max_k,
                r.wall_ms_mean,
                opt(r.miou, 4),
                opt(r.dice, 4)
            );
        }
        out
    }

    /// Human-readable table preceded by how each mechanism was run.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for note in &self.notes {
            let _ = writeln!(out, "# {note}");
        }
        let header = ["mechanism", "avg_k", "min_k", "max_k", "wall_ms", "miou", "dice"];
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.mechanism.clone(),
                    format!("{:.2}", r.avg_k),
                    r.min_k.to_string(),
                    r.max_k.to_string(),
                    format!("{:.3}", r.wall_ms_mean),
                    opt(r.miou, 4),
                    opt(r.dice, 4),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |fields: Vec<&str>| -> String {
            let mut s = String::new();
            for (i, (f, w)) in fields.iter().zip(widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{f:<w$}");
                } else {
                    let _ = write!(s, "  {f:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let _ = writeln!(out, "{}", line(header.to_vec()));
        for row in &cells {
            let _ = writeln!(out, "{}", line(row.iter().map(String::as_str).collect()));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Worker count from `SETOK_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("SETOK_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

pub fn bench_mechanisms(
    grids: &[FeatureGrid],
    specs: &[MechanismSpec],
    refs: Option<&[ReferenceMasks]>,
    options: &BenchOptions,
) -> Result<BenchReport, BenchError> {
    if grids.is_empty() {
        return Err(BenchError::EmptyInput("no grids"));
    }
    if specs.is_empty() {
        return Err(BenchError::EmptyInput("no mechanisms"));
    }
    if let Some(r) = refs {
        if r.len() != grids.len() {
            return Err(BenchError::RefCountMismatch { grids: grids.len(), refs: r.len() });
        }
    }
    for spec in specs {
        spec.validate().map_err(|source| BenchError::Mechanism { index: 0, source })?;
    }

    let mut weights_by_d = BTreeMap::new();
    for g in grids {
        if let std::collections::btree_map::Entry::Vacant(e) = weights_by_d.entry(g.d()) {
            let w = match &options.weights {
                Some(w) if w.d == g.d() => w.clone(),
                _ => MergerWeights::seeded(g.d(), options.weights_seed)?,
            };
            e.insert(w);
        }
    }

    let run_all = || -> Result<Vec<Vec<GridResult>>, BenchError> {
        specs
            .iter()
            .map(|spec| {
                grids
                    .par_iter()
                    .enumerate()
                    .map(|(index, grid)| {
                        run_one(index, grid, spec, refs.map(|r| &r[index]), options, &weights_by_d[&grid.d()])
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect()
    };
    let results = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| BenchError::Pool(e.to_string()))?
            .install(run_all)?,
        None => run_all()?,
    };

    let rows = specs
        .iter()
        .zip(results)
        .map(|(spec, per_grid)| {
            let stats = count_stats(per_grid.iter().map(|r| r.k)).expect("grids are non-empty");
            let n = per_grid.len() as f64;
            let mean_of = |f: fn(&GridResult) -> Option<f64>| -> Option<f64> {
                per_grid.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n)
            };
            BenchRow {
                mechanism: spec.label(),
                avg_k: stats.mean,
                min_k: stats.min,
                max_k: stats.max,
                wall_ms_mean: per_grid.iter().map(|r| r.wall_ms).sum::<f64>() / n,
                miou: mean_of(|r| r.miou),
                dice: mean_of(|r| r.dice),
                per_grid,
            }
        })
        .collect();
    let notes = specs.iter().map(|s| format!("{}: {}", s.label(), s.description())).collect();
    Ok(BenchReport { rows, notes })
}

fn run_one(
    index: usize,
    grid: &FeatureGrid,
    spec: &MechanismSpec,
    reference: Option<&ReferenceMasks>,
    options: &BenchOptions,
    weights: &MergerWeights,
) -> Result<GridResult, BenchError> {
    let out = run_mechanism(grid, spec, &options.config, weights)
        .map_err(|source| BenchError::Mechanism { index, source })?;
    let (miou, dice) = match (reference, &out.masks) {
        (Some(r), Some(masks)) => {
            let report = evaluate(masks, r).map_err(|source| BenchError::Metrics { index, source })?;
            (Some(report.miou), Some(report.dice))
        }
        _ => (None, None),
    };
    Ok(GridResult { k: out.k, wall_ms: out.wall_time.as_secs_f64() * 1e3, miou, dice })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> FeatureGrid {
        FeatureGrid::from_fn(4, 4, 4, |_, c, _| if c < 2 { 0.0 } else { 10.0 }).unwrap()
    }

    #[test]
    fn one_grid_one_spec() {
        let report =
            bench_mechanisms(&[grid()], &[MechanismSpec::Fixed { k: 2 }], None, &BenchOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].avg_k, 2.0);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("fixed(k=2),2.0000,2,2,"));
        assert!(lines[1].ends_with(",,"));
    }

    #[test]
    fn fixed_full_count() {
        let g = grid();
        let report = bench_mechanisms(
            std::slice::from_ref(&g),
            &[MechanismSpec::Fixed { k: g.len() }],
            None,
            &BenchOptions::default(),
        )
        .unwrap();
        assert_eq!(report.rows[0].min_k, 16);
        assert_eq!(report.rows[0].max_k, 16);
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(
            bench_mechanisms(&[], &[MechanismSpec::DynamicHard], None, &BenchOptions::default()),
            Err(BenchError::EmptyInput(_))
        ));
        assert!(matches!(
            bench_mechanisms(&[grid()], &[], None, &BenchOptions::default()),
            Err(BenchError::EmptyInput(_))
        ));
    }

    #[test]
    fn table_has_notes_and_rows() {
        let report = bench_mechanisms(
            &[grid()],
            &[MechanismSpec::DynamicHard, MechanismSpec::TopkMerge { r: 1, passes: 1 }],
            None,
            &BenchOptions { threads: Some(2), ..Default::default() },
        )
        .unwrap();
        let table = report.to_table();
        assert!(table.lines().filter(|l| l.starts_with('#')).count() == 2);
        assert!(table.contains("topk_merge(r=1,passes=1)"));
        assert!(report.to_csv().contains("\"topk_merge(r=1,passes=1)\""));
    }
}
