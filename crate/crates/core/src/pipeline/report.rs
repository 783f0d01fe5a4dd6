//! Tables over finished runs.
//!
//! A run directory holds `metrics.kv` (written by train, eval and cv) and/or
//! `bench.kv`. Both start with the resolved config, so every run is keyed by
//! (model, dataset, solver). When several directories share a key, the one
//! that sorts last by path wins.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::bench::BenchReport;
use crate::error::{Error, Result};
use crate::kv;
use crate::metrics::Index;

const WHAT: &str = "run metrics";

pub const METRICS_FILE: &str = "metrics.kv";
pub const BENCH_FILE: &str = "bench.kv";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl Stat {
    fn cell(&self) -> String {
        match (self.mean, self.sd) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            (Some(m), None) => format!("{m:.4}"),
            _ => "-".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub path: PathBuf,
    pub model: String,
    pub dataset: String,
    pub solver: String,
    pub raw: Option<[Stat; 5]>,
    pub post: Option<[Stat; 5]>,
    pub timing: Option<BenchReport>,
}

fn stats(map: &BTreeMap<String, String>, prefix: &str) -> Result<Option<[Stat; 5]>> {
    if !map.contains_key(&format!("{prefix}jsi.mean")) {
        return Ok(None);
    }
    let value = |key: String| -> Result<Option<f64>> {
        match map.get(&key).map(String::as_str) {
            None | Some("undefined") => Ok(None),
            Some(v) => kv::parse_value(v, &key, WHAT).map(Some),
        }
    };
    let mut out = [Stat::default(); 5];
    for (slot, index) in out.iter_mut().zip(Index::ALL) {
        *slot = Stat { mean: value(format!("{prefix}{index}.mean"))?, sd: value(format!("{prefix}{index}.sd"))? };
    }
    Ok(Some(out))
}

impl RunSummary {
    /// Parses the concatenated `metrics.kv` and `bench.kv` of one run.
    pub fn from_kv(path: impl Into<PathBuf>, text: &str) -> Result<Self> {
        let map = kv::parse(text, WHAT)?;
        let timing = if map.contains_key("inference_ms.sd") { Some(BenchReport::from_kv(text)?) } else { None };
        Ok(RunSummary {
            path: path.into(),
            model: kv::require(&map, "variant", WHAT)?.to_string(),
            dataset: kv::require(&map, "dataset", WHAT)?.to_string(),
            solver: kv::require(&map, "solver", WHAT)?.to_string(),
            raw: stats(&map, "raw.")?,
            post: stats(&map, "post.")?,
            timing,
        })
    }

    fn key(&self) -> (String, String, String) {
        (self.model.clone(), self.dataset.clone(), self.solver.clone())
    }
}

fn walk(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(METRICS_FILE).is_file() || dir.join(BENCH_FILE).is_file() {
        found.push(dir.to_path_buf());
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(&path, found)?;
        }
    }
    Ok(())
}

/// Finds run directories under each root (recursively) and merges runs that
/// share (model, dataset, solver).
pub fn collect_runs(roots: &[PathBuf]) -> Result<Vec<RunSummary>> {
    let mut dirs = Vec::new();
    for root in roots {
        walk(root, &mut dirs)?;
    }
    dirs.sort();
    let mut runs: BTreeMap<(String, String, String), RunSummary> = BTreeMap::new();
    for dir in dirs {
        let mut text = String::new();
        for name in [METRICS_FILE, BENCH_FILE] {
            let p = dir.join(name);
            if p.is_file() {
                text += &fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                text.push('\n');
            }
        }
        let run = RunSummary::from_kv(&dir, &text)?;
        match runs.get_mut(&run.key()) {
            Some(prev) => {
                prev.path = run.path;
                prev.raw = run.raw.or(prev.raw);
                prev.post = run.post.or(prev.post);
                prev.timing = run.timing.or(prev.timing);
            }
            None => {
                runs.insert(run.key(), run);
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::invalid(format!("no {METRICS_FILE} or {BENCH_FILE} found under the given directories")));
    }
    Ok(runs.into_values().collect())
}

fn index_header() -> String {
    Index::ALL.map(|i| i.as_str()).join("\t")
}

fn row(cells: &[Stat; 5]) -> String {
    cells.iter().map(Stat::cell).collect::<Vec<_>>().join("\t")
}

/// Tab-separated tables: indices by model and dataset, JSI by solver and
/// dataset, raw against post-processed indices, and timing.
pub fn render_tables(runs: &[RunSummary]) -> String {
    let mut out = String::from("# indices by model and dataset (mean ± sd)\n");
    out += &format!("model\tdataset\tsolver\t{}\n", index_header());
    for r in runs {
        if let Some(raw) = &r.raw {
            out += &format!("{}\t{}\t{}\t{}\n", r.model, r.dataset, r.solver, row(raw));
        }
    }

    let datasets: Vec<&str> = ["md", "wd", "ad"].into_iter().filter(|d| runs.iter().any(|r| r.dataset == *d)).collect();
    out += "\n# jsi by solver and dataset\n";
    out += &format!("solver\tmodel\t{}\n", datasets.join("\t"));
    let mut pairs: Vec<(&str, &str)> = runs.iter().filter(|r| r.raw.is_some()).map(|r| (r.solver.as_str(), r.model.as_str())).collect();
    pairs.sort();
    pairs.dedup();
    for (solver, model) in pairs {
        let cells: Vec<String> = datasets
            .iter()
            .map(|d| {
                runs.iter()
                    .find(|r| r.solver == solver && r.model == model && r.dataset == *d)
                    .and_then(|r| r.raw.as_ref())
                    .map_or_else(|| "-".to_string(), |raw| raw[0].cell())
            })
            .collect();
        out += &format!("{solver}\t{model}\t{}\n", cells.join("\t"));
    }

    out += "\n# without and with post-processing\n";
    out += &format!("model\tdataset\tsolver\tstage\t{}\n", index_header());
    for r in runs {
        if let (Some(raw), Some(post)) = (&r.raw, &r.post) {
            out += &format!("{}\t{}\t{}\traw\t{}\n", r.model, r.dataset, r.solver, row(raw));
            out += &format!("{}\t{}\t{}\tpost\t{}\n", r.model, r.dataset, r.solver, row(post));
        }
    }

    out += "\n# per-image processing time (ms)\n";
    out += "model\tdataset\tsolver\tinference\tpostproc\ttotal\tn\n";
    for r in runs {
        if let Some(t) = &r.timing {
            let post = t.postproc.map_or_else(|| "-".to_string(), |p| format!("{:.3} ± {:.3}", p.mean_ms, p.sd_ms));
            out += &format!(
                "{}\t{}\t{}\t{:.3} ± {:.3}\t{post}\t{:.3}\t{}\n",
                r.model, r.dataset, r.solver, t.inference.mean_ms, t.inference.sd_ms, t.total_ms(), t.inference.n
            );
        }
    }
    out
}

/// `key=value` lines keyed `<model>.<dataset>.<solver>.<stage>.<index>.<stat>`,
/// with timing under `<model>.<dataset>.<solver>.timing.`.
pub fn render_kv(runs: &[RunSummary]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
    let mut out = String::new();
    for r in runs {
        let base = format!("{}.{}.{}", r.model, r.dataset, r.solver);
        for (stage, stats) in [("raw", &r.raw), ("post", &r.post)] {
            if let Some(stats) = stats {
                for (s, index) in stats.iter().zip(Index::ALL) {
                    out += &format!("{base}.{stage}.{index}.mean={}\n", fmt(s.mean));
                    out += &format!("{base}.{stage}.{index}.sd={}\n", fmt(s.sd));
                }
            }
        }
        if let Some(t) = &r.timing {
            for line in t.to_kv().lines() {
                out += &format!("{base}.timing.{line}\n");
            }
        }
    }
    out
}
