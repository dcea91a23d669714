//! Command-line front end: suite generation, evaluation and ablation reports.

use crate::error::{Error, Result};
use crate::metrics::{aggregate, conflicts_at, evaluate_trajectory, MetricConvention, MetricsRow, ScenarioMetrics, HORIZONS};
use crate::oracles::{oracle_dacr, oracle_select, CandidateFlags, StepVerdict};
use crate::scenario::{generate_suite, GeneratorParams, Manifest, Scenario, TurnMix};
use crate::selection::{ucas_select, SelectionConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "ucas", version, about = "Uncertainty- and collision-aware trajectory selection on synthetic scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario suite and its manifest.
    Generate(GenerateArgs),
    /// Run one selection preset over a suite and report metrics.
    Eval(EvalArgs),
    /// Run every preset over a suite and report one row per preset.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub count: usize,
    /// `turn-only`, `straight-only`, `T/S` such as `60/40`, or a Turn fraction.
    #[arg(long, default_value = "50/50")]
    pub mix: String,
    /// Laplace scale of the map noise, meters.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Candidates per driving command.
    #[arg(long, default_value_t = 5)]
    pub candidates: usize,
    #[arg(long, default_value_t = 3)]
    pub agents: usize,
    /// Output directory; receives `manifest.json` and `scenarios/`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// First candidate only, no filters.
    Baseline,
    /// First candidate only, uncertainty filter on.
    UncOnly,
    /// All candidates, no filters.
    Multimodal,
    /// All candidates, agent and boundary filters.
    Cas,
    /// All candidates, all filters.
    Ucas,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Baseline, Preset::UncOnly, Preset::Multimodal, Preset::Cas, Preset::Ucas];

    /// Selection settings and candidate limit for this preset, starting
    /// from the thresholds in `base`.
    pub fn apply(self, base: &SelectionConfig) -> (SelectionConfig, Option<usize>) {
        let cfg = base.clone();
        match self {
            Preset::Baseline => (cfg.with_filters(false, false, false), Some(1)),
            Preset::UncOnly => (cfg.with_filters(true, false, false), Some(1)),
            Preset::Multimodal => (cfg.with_filters(false, false, false), None),
            Preset::Cas => (cfg.with_filters(false, true, true), None),
            Preset::Ucas => (cfg.with_filters(true, true, true), None),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.to_possible_value().expect("no skipped variants");
        f.write_str(name.get_name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Cumulative,
    Instantaneous,
}

impl From<ConventionArg> for MetricConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Cumulative => MetricConvention::Cumulative,
            ConventionArg::Instantaneous => MetricConvention::Instantaneous,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    /// JSON file with a selection config; the flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nll_threshold: Option<f64>,
    /// Minimum corner distance to a boundary, meters.
    #[arg(long)]
    pub clearance: Option<f64>,
    #[arg(long, value_enum, default_value_t = ConventionArg::Cumulative)]
    pub convention: ConventionArg,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Suite manifest.
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Ucas)]
    pub preset: Preset,
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Cross-check selection and drivable-area results against the oracles.
    #[arg(long)]
    pub verify: bool,
    /// CSV report path; an aligned table is written next to it with a `.txt` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything that determines an evaluation run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub suite: PathBuf,
    pub selection: SelectionConfig,
    pub convention: MetricConvention,
    pub preset: Preset,
    pub verify: bool,
}

impl SelectionArgs {
    fn resolve(&self) -> Result<SelectionConfig> {
        let mut cfg = match &self.config {
            None => SelectionConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(de).map_err(|e| {
                    Error::invalid(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner()))
                })?
            }
        };
        if let Some(t) = self.nll_threshold {
            cfg.nll_threshold = t;
        }
        if let Some(c) = self.clearance {
            cfg.boundary_clearance = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn flags(&self) -> String {
        let mut s = String::new();
        if let Some(c) = &self.config {
            let _ = write!(s, " --config {}", c.display());
        }
        if let Some(t) = self.nll_threshold {
            let _ = write!(s, " --nll-threshold {t}");
        }
        if let Some(c) = self.clearance {
            let _ = write!(s, " --clearance {c}");
        }
        let conv = self.convention.to_possible_value().expect("no skipped variants");
        let _ = write!(s, " --convention {}", conv.get_name());
        s
    }
}

/// Prefixes an error message with the scenario it came from.
fn in_scenario(id: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("scenario {id}: {m}")),
        Error::Invariant { field, message } => Error::Invariant {
            field,
            message: format!("scenario {id}: {message}"),
        },
        Error::OracleMismatch(m) => Error::OracleMismatch(format!("scenario {id}: {m}")),
        other => other,
    }
}

/// Selects a trajectory for one scenario under `preset` and scores it.
pub fn evaluate_scenario(
    s: &Scenario,
    preset: Preset,
    base: &SelectionConfig,
    convention: MetricConvention,
    verify: bool,
) -> Result<ScenarioMetrics> {
    let run = || -> Result<ScenarioMetrics> {
        let (cfg, limit) = preset.apply(base);
        let set = match limit {
            Some(n) => s.candidates.truncated(n)?,
            None => s.candidates.clone(),
        };
        let report = ucas_select(&set, s.command, &s.map, &s.agents, &s.ego_dims, &cfg)?;
        let gt = s.ground_truth();
        if verify {
            verify_selection(&report.records, &cfg, report.chosen_index)?;
            verify_dacr(s, &report.chosen)?;
        }
        evaluate_trajectory(&s.id, s.scenario_class, &report.chosen, &s.ego_dims, &gt, convention)
    };
    run().map_err(|e| in_scenario(&s.id, e))
}

fn verify_selection(
    records: &[crate::selection::CandidateRecord<f64>],
    cfg: &SelectionConfig,
    chosen: usize,
) -> Result<()> {
    let flags: Vec<CandidateFlags> = records
        .iter()
        .map(|r| CandidateFlags {
            confidence: r.confidence,
            risk_nll: r.risk_nll,
            uncertainty: r.uncertainty_flag,
            agent: r.agent_collision,
            boundary: r.boundary_collision,
        })
        .collect();
    let expected = oracle_select(&flags, cfg);
    if expected != chosen {
        return Err(Error::OracleMismatch(format!(
            "selection chose candidate {chosen}, oracle chose {expected}"
        )));
    }
    Ok(())
}

fn verify_dacr(s: &Scenario, traj: &crate::selection::CandidateTrajectory<f64>) -> Result<()> {
    let da = &s.map.drivable_area;
    let oracle = oracle_dacr(traj, &s.ego_dims, da, *HORIZONS.last().expect("non-empty"));
    for (t, verdict) in oracle.steps.iter().enumerate() {
        let main = conflicts_at(traj, &s.ego_dims, da, t);
        let agrees = match verdict {
            StepVerdict::Ambiguous => true,
            StepVerdict::Conflict => main,
            StepVerdict::Inside => !main,
        };
        if !agrees {
            return Err(Error::OracleMismatch(format!(
                "drivable-area conflict at step {t}: main {main}, oracle {verdict:?}"
            )));
        }
    }
    Ok(())
}

/// Evaluates every scenario in parallel; rows come back sorted by id.
pub fn run_suite(
    scenarios: &[Scenario],
    preset: Preset,
    base: &SelectionConfig,
    convention: MetricConvention,
    verify: bool,
) -> Result<Vec<ScenarioMetrics>> {
    let mut rows = scenarios
        .par_iter()
        .map(|s| evaluate_scenario(s, preset, base, convention, verify))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(rows)
}

fn load_suite(path: &Path) -> Result<(Manifest, Vec<Scenario>)> {
    let manifest = Manifest::load(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let scenarios = manifest.load_scenarios(dir)?;
    Ok((manifest, scenarios))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<PathBuf> {
    let mix: TurnMix = args.mix.parse()?;
    let params = GeneratorParams {
        noise_scale: args.noise,
        n_candidates: args.candidates,
        n_agents: args.agents,
        ..GeneratorParams::default()
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    generate_suite(args.count, mix, &params, args.seed, &args.out)
}

fn header(lines: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in lines {
        let _ = writeln!(s, "# {k}: {v}");
    }
    s
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn metric_cells(row: &MetricsRow) -> Vec<String> {
    row.de()
        .into_iter()
        .chain([row.de_avg])
        .chain(row.cr())
        .chain([row.cr_avg])
        .chain(row.dacr())
        .chain([row.dacr_avg])
        .map(fmt_num)
        .collect()
}

const METRIC_COLUMNS: [&str; 12] = [
    "de_1s", "de_2s", "de_3s", "de_avg", "cr_1s", "cr_2s", "cr_3s", "cr_avg", "dacr_1s", "dacr_2s", "dacr_3s",
    "dacr_avg",
];

fn write_csv(path: &Path, head: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(columns).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    let mut out = head.as_bytes().to_vec();
    out.extend(body);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Aligned text table with the displacement error in meters and the two
/// rates in percent, grouped by 1s / 2s / 3s / Avg.
pub fn render_table(labels: &[String], label_title: &str, rows: &[&MetricsRow]) -> String {
    let mut cells: Vec<Vec<String>> = Vec::new();
    cells.push(
        std::iter::once(label_title.to_owned())
            .chain(["n".to_owned()])
            .chain(["DE 1s", "2s", "3s", "Avg", "CR% 1s", "2s", "3s", "Avg", "DACR% 1s", "2s", "3s", "Avg"].map(String::from))
            .collect(),
    );
    for (label, row) in labels.iter().zip(rows) {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let mut line = vec![label.clone(), row.count.to_string()];
        line.extend(row.de().into_iter().chain([row.de_avg]).map(|v| format!("{v:.3}")));
        line.extend(row.cr().into_iter().chain([row.cr_avg]).map(pct));
        line.extend(row.dacr().into_iter().chain([row.dacr_avg]).map(pct));
        cells.push(line);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in cells.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}

fn text_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("txt")
}

/// Runs one preset and writes the CSV and text reports. Returns the
/// stratified rows and the text report.
pub fn cmd_eval(args: &EvalArgs) -> Result<(Vec<MetricsRow>, String)> {
    let selection = args.selection.resolve()?;
    let run = RunConfig {
        suite: args.suite.clone(),
        selection,
        convention: args.selection.convention.into(),
        preset: args.preset,
        verify: args.verify,
    };
    let (manifest, scenarios) = load_suite(&run.suite)?;
    let rows = run_suite(&scenarios, run.preset, &run.selection, run.convention, run.verify)?;
    let table = aggregate(&rows, true)?;

    let config_json = serde_json::to_string(&run.preset.apply(&run.selection).0).map_err(|e| Error::invalid(e.to_string()))?;
    let rerun = format!(
        "ucas eval --suite {} --preset {}{}{} --out {}",
        run.suite.display(),
        run.preset,
        args.selection.flags(),
        if run.verify { " --verify" } else { "" },
        args.out.display()
    );
    let head = header(&[
        ("tool", format!("ucas {TOOL_VERSION}")),
        ("command", rerun),
        ("master_seed", manifest.master_seed.to_string()),
        ("scenarios", scenarios.len().to_string()),
        ("preset", run.preset.to_string()),
        ("convention", run.convention.to_string()),
        ("selection_config", config_json),
        ("verify", run.verify.to_string()),
    ]);
    let mut columns = vec!["stratum", "count"];
    columns.extend(METRIC_COLUMNS);
    let csv_rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| [r.stratum.to_string(), r.count.to_string()].into_iter().chain(metric_cells(r)).collect())
        .collect();
    write_csv(&args.out, &head, &columns, &csv_rows)?;

    let labels: Vec<String> = table.iter().map(|r| r.stratum.to_string()).collect();
    let text = format!("{head}\n{}", render_table(&labels, "stratum", &table.iter().collect::<Vec<_>>()));
    let txt = text_path(&args.out);
    std::fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
    Ok((table, text))
}

/// Overall rows for every preset, in preset order.
pub fn ablation_rows(
    scenarios: &[Scenario],
    base: &SelectionConfig,
    convention: MetricConvention,
) -> Result<Vec<(Preset, Vec<MetricsRow>)>> {
    Preset::ALL
        .iter()
        .map(|&p| Ok((p, aggregate(&run_suite(scenarios, p, base, convention, false)?, true)?)))
        .collect()
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(Vec<(Preset, MetricsRow)>, String)> {
    let selection = args.selection.resolve()?;
    let convention: MetricConvention = args.selection.convention.into();
    let (manifest, scenarios) = load_suite(&args.suite)?;
    let results = ablation_rows(&scenarios, &selection, convention)?;
    let overall: Vec<(Preset, MetricsRow)> = results.into_iter().map(|(p, rows)| (p, rows[0].clone())).collect();

    let head = header(&[
        ("tool", format!("ucas {TOOL_VERSION}")),
        (
            "command",
            format!(
                "ucas ablate --suite {}{} --out {}",
                args.suite.display(),
                args.selection.flags(),
                args.out.display()
            ),
        ),
        ("master_seed", manifest.master_seed.to_string()),
        ("scenarios", scenarios.len().to_string()),
        ("convention", convention.to_string()),
        (
            "selection_config",
            serde_json::to_string(&selection).map_err(|e| Error::invalid(e.to_string()))?,
        ),
    ]);
    let mut columns = vec!["preset", "count"];
    columns.extend(METRIC_COLUMNS);
    let csv_rows: Vec<Vec<String>> = overall
        .iter()
        .map(|(p, r)| [p.to_string(), r.count.to_string()].into_iter().chain(metric_cells(r)).collect())
        .collect();
    write_csv(&args.out, &head, &columns, &csv_rows)?;

    let labels: Vec<String> = overall.iter().map(|(p, _)| p.to_string()).collect();
    let rows: Vec<&MetricsRow> = overall.iter().map(|(_, r)| r).collect();
    let text = format!("{head}\n{}", render_table(&labels, "preset", &rows));
    let txt = text_path(&args.out);
    std::fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
    Ok((overall, text))
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let manifest = cmd_generate(&a)?;
            println!("{}", manifest.display());
        }
        Command::Eval(a) => {
            print!("{}", cmd_eval(&a)?.1);
        }
        Command::Ablate(a) => {
            print!("{}", cmd_ablate(&a)?.1);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn presets_set_filters() {
        let base = SelectionConfig::default();
        let (c, n) = Preset::Baseline.apply(&base);
        assert_eq!(n, Some(1));
        assert!(!c.enable_uncertainty_filter && !c.enable_agent_filter && !c.enable_boundary_filter);
        let (c, _) = Preset::Cas.apply(&base);
        assert!(!c.enable_uncertainty_filter && c.enable_agent_filter && c.enable_boundary_filter);
        let (c, n) = Preset::Ucas.apply(&base);
        assert_eq!(n, None);
        assert!(c.enable_uncertainty_filter && c.enable_agent_filter && c.enable_boundary_filter);
        assert_eq!(Preset::UncOnly.to_string(), "unc-only");
    }

    #[test]
    fn table_is_aligned() {
        let row = MetricsRow {
            stratum: crate::metrics::Stratum::Overall,
            count: 3,
            de_1s: 0.1,
            de_2s: 0.2,
            de_3s: 0.3,
            de_avg: 0.2,
            cr_1s: 0.0,
            cr_2s: 0.0,
            cr_3s: 1.0 / 3.0,
            cr_avg: 1.0 / 9.0,
            dacr_1s: 0.5,
            dacr_2s: 0.25,
            dacr_3s: 0.0,
            dacr_avg: 0.25,
        };
        let t = render_table(&["overall".into()], "stratum", &[&row]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].len(), lines[2].len());
        assert!(lines[2].contains("33.33"));
    }
}
