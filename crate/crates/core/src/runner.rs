//! Batch runner behind the `run` and `compare` commands.
//!
//! `run` executes every (variant, seed) cell of a scenario and writes one
//! trajectory log and one metric report per cell plus a median summary.
//! `compare` reads reports back and prints per-scenario median tables.
//!
//! Exit codes: 0 success, 1 an episode failed, 2 bad input (unreadable or
//! malformed scenario, bad arguments, no reports).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::controller::ControllerVariant;
use crate::error::{Error, Result};
use crate::gpr::fit;
use crate::metrics::{evaluate, MetricReport};
use crate::scenario::{Scenario, Seeds};
use crate::simulator::{collect_excitation_data, run_episode, EpisodeSetup};

pub const EXIT_OK: i32 = 0;
pub const EXIT_EPISODE_FAILED: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;

const REPORT_EXT: &str = "report";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub scenario: PathBuf,
    pub variants: Vec<ControllerVariant>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub emit_logs: bool,
    pub emit_report: bool,
    /// Overrides the scenario's `gp.offline_samples`.
    pub gp_offline_samples: Option<usize>,
    /// Overrides the scenario's `gp.window`.
    pub gp_window: Option<usize>,
}

impl RunSpec {
    /// All variants, seed 0, logs and reports on.
    pub fn new(scenario: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            variants: ControllerVariant::ALL.to_vec(),
            seeds: vec![0],
            output_dir: output_dir.into(),
            emit_logs: true,
            emit_report: true,
            gp_offline_samples: None,
            gp_window: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no variants selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds selected".into()));
        }
        if self.gp_offline_samples == Some(0) || self.gp_window == Some(0) {
            return Err(Error::Config("GP sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// `"0-9"`, `"3"`, `"1,4,7"` or a mix such as `"0-2,10"`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = |p: &str| Error::Config(format!("bad seed list entry '{p}'"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad(part))?;
                let b: u64 = b.trim().parse().map_err(|_| bad(part))?;
                if a > b {
                    return Err(bad(part));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad(part))?),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    Ok(out)
}

/// Comma-separated variant names, or `all`.
pub fn parse_variants(text: &str) -> Result<Vec<ControllerVariant>> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(ControllerVariant::ALL.to_vec());
    }
    let v: Vec<ControllerVariant> =
        text.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::parse).collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::Config("empty variant list".into()));
    }
    Ok(v)
}

/// One (variant, seed) result.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub scenario: String,
    pub variant: ControllerVariant,
    pub seed: u64,
    pub seeds: Seeds,
    pub steps: usize,
    pub metrics: MetricReport,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "--".to_string(), |v| v.to_string())
}

impl CellReport {
    /// `key = value` lines; floats are written in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "# fovpc metric report");
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "variant = {}", self.variant.name());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "seed_dh = {}", self.seeds.dh);
        let _ = writeln!(s, "seed_noise = {}", self.seeds.noise);
        let _ = writeln!(s, "seed_excitation = {}", self.seeds.excitation);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "fovsr = {}", m.fovsr);
        let _ = writeln!(s, "mae = {}", fmt_opt(m.mae));
        let _ = writeln!(s, "rmse = {}", fmt_opt(m.rmse));
        let _ = writeln!(s, "avss = {}", m.avss);
        let _ = writeln!(s, "mac = {}", m.mac);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            kv.insert(k.trim().to_string(), (n + 1, v.trim().to_string()));
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Config(format!("missing key '{k}'")));
        let num = |k: &str| -> Result<f64> {
            let (n, v) = get(k)?;
            v.parse().map_err(|_| Error::Config(format!("line {n}: '{k}' is not a number")))
        };
        let int = |k: &str| -> Result<u64> {
            let (n, v) = get(k)?;
            v.parse().map_err(|_| Error::Config(format!("line {n}: '{k}' is not an integer")))
        };
        let opt = |k: &str| -> Result<Option<f64>> {
            if get(k)?.1 == "--" {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        Ok(Self {
            scenario: get("scenario")?.1.clone(),
            variant: get("variant")?.1.parse()?,
            seed: int("seed")?,
            seeds: Seeds { dh: int("seed_dh")?, noise: int("seed_noise")?, excitation: int("seed_excitation")? },
            steps: int("steps")? as usize,
            metrics: MetricReport {
                fovsr: num("fovsr")?,
                mae: opt("mae")?,
                rmse: opt("rmse")?,
                avss: num("avss")?,
                mac: num("mac")?,
            },
        })
    }
}

/// Failure of a batch, already classified by exit code.
#[derive(Debug)]
pub struct RunFailure {
    pub code: i32,
    pub message: String,
}

impl RunFailure {
    fn input(e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_BAD_INPUT, message: e.to_string() }
    }
}

fn cell_stem(scenario: &str, variant: ControllerVariant, seed: u64) -> String {
    format!("{scenario}_{}_seed{seed}", variant.name())
}

/// Runs one cell: offline excitation and GP fit (enhanced variant only),
/// then the evaluation episode.
pub fn run_cell(
    scenario: &Scenario,
    variant: ControllerVariant,
    seed: u64,
    offline_samples: usize,
) -> Result<(CellReport, crate::simulator::TrajectoryLog, Option<crate::gpr::GpDataset>)> {
    let cfg = scenario.vpc_config()?;
    let setup = EpisodeSetup::new(scenario, seed)?;
    let (gp, data) = if variant.is_enhanced() {
        let data = collect_excitation_data(scenario, &setup, offline_samples)?;
        (Some(fit(data.clone(), scenario.gp_hyperparams()?)?), Some(data))
    } else {
        (None, None)
    };
    let log = run_episode(scenario, variant, &cfg, &setup, gp)?;
    let metrics = evaluate(&log, &scenario.fov_disc()?, &scenario.mac_reference()?, scenario.metrics.sustained_threshold)?;
    let report = CellReport {
        scenario: scenario.name.clone(),
        variant,
        seed,
        seeds: scenario.seeds.for_run(seed),
        steps: log.len(),
        metrics,
    };
    Ok((report, log, data))
}

/// Runs every cell and writes the requested files. Returns the reports in
/// (variant, seed) order.
pub fn run_batch(spec: &RunSpec) -> std::result::Result<Vec<CellReport>, RunFailure> {
    spec.validate().map_err(RunFailure::input)?;
    let mut scenario = Scenario::load(&spec.scenario).map_err(RunFailure::input)?;
    if let Some(n) = spec.gp_offline_samples {
        scenario.gp.offline_samples = n;
    }
    if let Some(w) = spec.gp_window {
        scenario.gp.window = w;
    }
    fs::create_dir_all(&spec.output_dir).map_err(RunFailure::input)?;

    let mut reports = Vec::new();
    for &variant in &spec.variants {
        for &seed in &spec.seeds {
            let stem = cell_stem(&scenario.name, variant, seed);
            let (report, log, data) = run_cell(&scenario, variant, seed, scenario.gp.offline_samples)
                .map_err(|e| RunFailure { code: EXIT_EPISODE_FAILED, message: format!("episode {stem}: {e}") })?;
            let write_err = |e: Error| RunFailure { code: EXIT_EPISODE_FAILED, message: format!("episode {stem}: {e}") };
            if spec.emit_logs {
                let f = fs::File::create(spec.output_dir.join(format!("{stem}.csv"))).map_err(|e| write_err(e.into()))?;
                log.write_csv(f).map_err(write_err)?;
                if let Some(d) = data {
                    let f = fs::File::create(spec.output_dir.join(format!("{stem}_gp.csv"))).map_err(|e| write_err(e.into()))?;
                    d.write_csv(f).map_err(write_err)?;
                }
            }
            if spec.emit_report {
                fs::write(spec.output_dir.join(format!("{stem}.{REPORT_EXT}")), report.to_text())
                    .map_err(|e| write_err(e.into()))?;
            }
            reports.push(report);
        }
    }
    if spec.emit_report {
        fs::write(spec.output_dir.join(format!("{}_summary.txt", scenario.name)), summary_table(&reports))
            .map_err(RunFailure::input)?;
    }
    Ok(reports)
}

/// `run` entry point: prints the summary table and returns the exit code.
pub fn cmd_run(spec: &RunSpec) -> i32 {
    match run_batch(spec) {
        Ok(reports) => {
            print!("{}", summary_table(&reports));
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Median of a nonempty sample; averages the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-variant medians of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: ControllerVariant,
    pub runs: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub fovsr: f64,
    pub avss: f64,
    pub mac: f64,
}

/// Rows in table order; MAE/RMSE medians only over runs where they exist.
pub fn summarize(reports: &[CellReport]) -> Vec<SummaryRow> {
    ControllerVariant::ALL
        .iter()
        .filter_map(|&variant| {
            let rs: Vec<&MetricReport> = reports.iter().filter(|r| r.variant == variant).map(|r| &r.metrics).collect();
            if rs.is_empty() {
                return None;
            }
            let col = |f: fn(&MetricReport) -> Option<f64>| median(&rs.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
            Some(SummaryRow {
                variant,
                runs: rs.len(),
                mae: col(|m| m.mae),
                rmse: col(|m| m.rmse),
                fovsr: col(|m| Some(m.fovsr)).unwrap_or(f64::NAN),
                avss: col(|m| Some(m.avss)).unwrap_or(f64::NAN),
                mac: col(|m| Some(m.mac)).unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Median table grouped by scenario name.
pub fn summary_table(reports: &[CellReport]) -> String {
    let mut groups: BTreeMap<&str, Vec<CellReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.scenario.as_str()).or_default().push(r.clone());
    }
    let mut out = String::new();
    for (name, rs) in groups {
        let _ = writeln!(out, "scenario: {name}");
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>10} {:>10} {:>9} {:>10} {:>10}",
            "variant", "runs", "MAE", "RMSE", "FoVSR", "AVSS", "MAC"
        );
        for row in summarize(&rs) {
            let o = |x: Option<f64>| x.map_or_else(|| "--".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{:<20} {:>5} {:>10} {:>10} {:>8.2}% {:>10.3e} {:>10.4}",
                row.variant.name(),
                row.runs,
                o(row.mae),
                o(row.rmse),
                row.fovsr,
                row.avss,
                row.mac
            );
        }
        out.push('\n');
    }
    out
}

/// All `*.report` files directly inside `dir`, sorted by file name.
pub fn load_reports(dir: &Path) -> Result<Vec<CellReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::MissingData(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == REPORT_EXT))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            CellReport::parse(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                other => other,
            })
        })
        .collect()
}

/// `compare` entry point.
pub fn cmd_compare(dir: &Path) -> i32 {
    match load_reports(dir) {
        Ok(r) if r.is_empty() => {
            eprintln!("error: no reports in {}", dir.display());
            EXIT_BAD_INPUT
        }
        Ok(r) => {
            print!("{}", summary_table(&r));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_BAD_INPUT
        }
    }
}
