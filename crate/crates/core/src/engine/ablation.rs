use rayon::prelude::*;

use super::{train, TrainConfig, TrainError};
use crate::data::Dataset;

/// Minimum DSC gap for each pairwise ordering (half a DSC point).
pub const MIN_GAP: f64 = 0.005;
/// Minimum gain of the full method over the supervised baseline.
pub const MIN_FULL_GAIN: f64 = 0.02;

/// One row of the `{spc} x {consistency}` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellConfig {
    pub enable_spc: bool,
    pub enable_consistency: bool,
}

impl CellConfig {
    pub const GRID: [CellConfig; 4] = [
        CellConfig::new(false, false),
        CellConfig::new(true, false),
        CellConfig::new(false, true),
        CellConfig::new(true, true),
    ];

    pub const fn new(enable_spc: bool, enable_consistency: bool) -> Self {
        CellConfig {
            enable_spc,
            enable_consistency,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.enable_spc, self.enable_consistency) {
            (false, false) => "neither",
            (true, false) => "spc_only",
            (false, true) => "consistency_only",
            (true, true) => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub cell: CellConfig,
    /// Final-epoch test DSC per seed that trained successfully.
    pub dsc: Vec<f64>,
    /// Final-epoch test HD per seed; `None` when undefined for every image.
    pub hd: Vec<Option<f64>>,
    /// Final-epoch mean unlabeled prediction entropy per successful seed.
    pub entropy: Vec<f64>,
    /// `(seed, message)` for runs that failed.
    pub failures: Vec<(u64, String)>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl AblationCell {
    /// Mean and population standard deviation of DSC.
    pub fn dsc_stats(&self) -> (f64, f64) {
        mean_std(&self.dsc)
    }

    pub fn hd_stats(&self) -> (f64, f64) {
        let defined: Vec<f64> = self.hd.iter().flatten().copied().collect();
        mean_std(&defined)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub description: String,
    pub better: f64,
    pub worse: f64,
    pub min_gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, spc: bool, consistency: bool) -> &AblationCell {
        self.cells
            .iter()
            .find(|c| c.cell == CellConfig::new(spc, consistency))
            .expect("all four cells are present")
    }

    pub fn failures(&self) -> impl Iterator<Item = (&AblationCell, &(u64, String))> {
        self.cells.iter().flat_map(|c| c.failures.iter().map(move |f| (c, f)))
    }

    pub fn checks(&self) -> Vec<OrderingCheck> {
        let m = |s, c| self.cell(s, c).dsc_stats().0;
        let (neither, spc, cons, full) = (m(false, false), m(true, false), m(false, true), m(true, true));
        let check = |description: &str, better: f64, worse: f64, min_gap: f64| OrderingCheck {
            description: description.to_string(),
            better,
            worse,
            min_gap,
            pass: better - worse >= min_gap,
        };
        vec![
            check("full >= consistency_only", full, cons, MIN_GAP),
            check("consistency_only >= neither", cons, neither, MIN_GAP),
            check("spc_only >= neither", spc, neither, MIN_GAP),
            check("full >= neither + 2 points", full, neither, MIN_FULL_GAIN),
        ]
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["cell", "enable_spc", "enable_consistency", "runs", "dsc_mean", "dsc_std", "hd_mean", "hd_std", "failed"])
            .expect("memory");
        for c in &self.cells {
            let (dm, ds) = c.dsc_stats();
            let (hm, hs) = c.hd_stats();
            w.write_record([
                c.cell.name().to_string(),
                c.cell.enable_spc.to_string(),
                c.cell.enable_consistency.to_string(),
                c.dsc.len().to_string(),
                dm.to_string(),
                ds.to_string(),
                hm.to_string(),
                hs.to_string(),
                c.failures.len().to_string(),
            ])
            .expect("memory");
        }
        String::from_utf8(w.into_inner().expect("memory")).expect("ascii")
    }
}

/// Final test DSC, test HD and unlabeled entropy of one run.
type RunSummary = (f64, Option<f64>, f64);

/// Trains every grid cell for every seed (in parallel) and keeps the
/// final-epoch metrics. A failing run is recorded and the rest continue.
pub fn run_ablation(base: &TrainConfig, ds: &Dataset, seeds: &[u64]) -> Result<AblationReport, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("ablation needs at least one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..CellConfig::GRID.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let outcomes: Vec<Result<RunSummary, String>> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let cell = CellConfig::GRID[c];
            let cfg = TrainConfig {
                seed,
                enable_spc: cell.enable_spc,
                enable_consistency: cell.enable_consistency,
                ..base.clone()
            };
            let (_, rec) = train(&cfg, ds).map_err(|e| e.to_string())?;
            let last = rec.last().ok_or("no epochs were trained")?;
            Ok((last.val_dsc, last.val_hd, last.unlabeled_entropy))
        })
        .collect();
    let mut cells: Vec<AblationCell> = CellConfig::GRID
        .iter()
        .map(|&cell| AblationCell {
            cell,
            dsc: Vec::new(),
            hd: Vec::new(),
            entropy: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (&(c, seed), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok((d, h, e)) => {
                cells[c].dsc.push(d);
                cells[c].hd.push(h);
                cells[c].entropy.push(e);
            }
            Err(msg) => cells[c].failures.push((seed, msg)),
        }
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        cells,
    })
}
