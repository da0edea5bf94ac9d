use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use topk_core::costsens::CostSpec;
use topk_core::gradcheck::{self, GradCheckResult};
use topk_core::oracle::montecarlo::{
    run_campaign, run_grid_config, sample_grid_config, CampaignConfig, CampaignSummary, CardinalityN, Theorem,
};
use topk_core::rng::SeedSplitter;
use topk_core::train::{self, Checkpoint, EpochLog, Model};
use topk_core::types::{CardinalitySet, Dataset};

use crate::config::{kset_tag, DataSource, ExperimentConfig, SyntheticKind, SyntheticRecipe};
use crate::io::{read_json, write_atomic, write_json};
use crate::{
    data, Cli, CliError, Command, CurveArgs, GammaN, GradcheckArgs, Outcome, SelectorArgs, SynthArgs, VerifyArgs,
};

const DEFAULT_OUT: &str = "topk-lab-out";

/// Expectation-level sampler limits: instances, classes, grid size.
pub const GRID_MAX_INSTANCES: usize = 6;
pub const GRID_MAX_N: usize = 5;
pub const GRID_MAX_HYPOTHESES: usize = 64;

macro_rules! say {
    ($log:expr, $($arg:tt)*) => {
        writeln!($log, $($arg)*).map_err(|e| CliError::Usage(format!("writing output: {e}")))?
    };
}

pub fn dispatch(cli: &Cli, log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::VerifyBounds(a) => verify_bounds(cli, a, log),
        Command::Gradcheck(a) => gradcheck(cli, a, log),
        Command::Synth(a) => synth(cli, a, log),
        Command::TrainBase => train_base(cli, log),
        Command::TrainSelector(a) => train_selector(cli, a, log),
        Command::Curve(a) => curve(cli, a, log),
    }
}

fn optional_config(cli: &Cli) -> Result<Option<ExperimentConfig>, CliError> {
    cli.config.as_deref().map(ExperimentConfig::load).transpose()
}

fn master_seed(cli: &Cli, cfg: Option<&ExperimentConfig>) -> u64 {
    cli.seed.or(cfg.map(|c| c.seed)).unwrap_or(0)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out.clone().or_else(|| cfg.and_then(|c| c.out_dir.clone())).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::Usage(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Usage(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Usage(e.to_string()))
}

/// One line of the expectation-level JSONL report.
#[derive(Debug, Clone, Serialize)]
pub struct GridRecord {
    pub theorem: String,
    pub config: usize,
    pub hypotheses: usize,
    pub target_gap: f64,
    pub surrogate_gap: f64,
    pub min_slack: f64,
    pub satisfied: bool,
}

pub fn verify_bounds(cli: &Cli, a: &VerifyArgs, log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    let cfg = optional_config(cli)?;
    let seed = master_seed(cli, cfg.as_ref());
    let out = out_dir(cli, cfg.as_ref());
    let theorems: Vec<Theorem> = if a.theorems.is_empty() {
        Theorem::all(a.alpha, a.rho)
    } else {
        a.theorems
            .iter()
            .map(|t| t.parse::<Theorem>().map_err(|e| CliError::Usage(format!("theorem {t:?}: {e}"))))
            .collect::<Result<_, _>>()?
    };
    let split = SeedSplitter::new(seed);
    let campaign = CampaignConfig {
        trials: a.trials as usize,
        seed: split.derive("montecarlo"),
        max_n: a.max_n,
        k: a.k,
        cardinality_n: match a.cardinality_n {
            GammaN::KSize => CardinalityN::KSize,
            GammaN::Classes => CardinalityN::Classes,
        },
    };
    let mut all = Vec::new();
    let mut failed = false;
    say!(log, "{:<22} {:>7} {:>10} {:>14}", "theorem", "trials", "violations", "min_slack");
    for t in &theorems {
        let recs = run_campaign(*t, &campaign)?;
        let s = CampaignSummary::from_records(&t.name(), &recs);
        failed |= s.violations > 0;
        say!(log, "{:<22} {:>7} {:>10} {:>14.6e}", s.theorem, s.trials, s.violations, s.min_slack);
        all.extend(recs);
    }
    let path = out.join("verify_bounds.jsonl");
    write_atomic(&path, &jsonl(&all)?)?;
    say!(log, "wrote {}", path.display());

    if a.grid_configs > 0 {
        let mut rows = Vec::new();
        say!(
            log,
            "{:<22} {:>7} {:>10} {:>12} {:>12}",
            "theorem",
            "configs",
            "violations",
            "max_gap_tgt",
            "max_gap_sur"
        );
        for t in &theorems {
            let mut rng = split.stream(&format!("grid/{}", t.name()));
            let configs: Vec<_> = (0..a.grid_configs)
                .map(|_| sample_grid_config(&mut rng, *t, GRID_MAX_INSTANCES, GRID_MAX_N, GRID_MAX_HYPOTHESES))
                .collect();
            let outcomes = configs.par_iter().map(run_grid_config).collect::<Result<Vec<_>, _>>()?;
            let start = rows.len();
            for (i, o) in outcomes.iter().enumerate() {
                rows.push(GridRecord {
                    theorem: t.name(),
                    config: i,
                    hypotheses: o.reports.len(),
                    target_gap: o.target_gap,
                    surrogate_gap: o.surrogate_gap,
                    min_slack: o.reports.iter().map(|r| r.rhs - r.lhs).fold(f64::INFINITY, f64::min),
                    satisfied: o.reports.iter().all(|r| r.satisfied),
                });
            }
            let mine = &rows[start..];
            let bad = mine.iter().filter(|r| !r.satisfied).count();
            failed |= bad > 0;
            let gt = mine.iter().map(|r| r.target_gap).fold(0.0, f64::max);
            let gs = mine.iter().map(|r| r.surrogate_gap).fold(0.0, f64::max);
            say!(log, "{:<22} {:>7} {:>10} {:>12.4e} {:>12.4e}", t.name(), mine.len(), bad, gt, gs);
        }
        let path = out.join("verify_bounds_expectation.jsonl");
        write_atomic(&path, &jsonl(&rows)?)?;
        say!(log, "wrote {}", path.display());
    }
    Ok(if failed { Outcome::Failed } else { Outcome::Ok })
}

pub fn gradcheck(cli: &Cli, a: &GradcheckArgs, log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    let cfg = optional_config(cli)?;
    let seed = master_seed(cli, cfg.as_ref());
    if a.points == 0 {
        return Err(CliError::Usage("--points must be >= 1".into()));
    }
    let mut results = gradcheck::kernel_suite(a.alpha, a.rho, a.points, seed);
    results.extend(gradcheck::model_suite(a.alpha, a.rho, a.points, seed));
    report_gradcheck(&results, log)
}

/// Prints one line per check; `Failed` if any check exceeds its tolerance.
pub fn report_gradcheck(results: &[GradCheckResult], log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    say!(log, "{:<28} {:>7} {:>12} {:>8}  result", "check", "points", "max_rel_err", "tol");
    for r in results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        say!(log, "{:<28} {:>7} {:>12.3e} {:>8.0e}  {verdict}", r.name, r.points, r.max_rel_err, r.tol);
    }
    Ok(if results.iter().all(|r| r.passed()) { Outcome::Ok } else { Outcome::Failed })
}

pub fn synth(cli: &Cli, a: &SynthArgs, log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    let cfg = optional_config(cli)?;
    let from_cfg = match cfg.as_ref().map(|c| &c.data) {
        Some(DataSource::Synthetic { recipe }) => Some(recipe.clone()),
        _ => None,
    };
    let need = |v: Option<usize>, base: Option<usize>, name: &str| {
        v.or(base).ok_or_else(|| CliError::Usage(format!("--{name} is required without a synthetic config")))
    };
    let recipe = SyntheticRecipe {
        kind: SyntheticKind::GaussianClusters,
        n_classes: need(a.classes, from_cfg.as_ref().map(|r| r.n_classes), "classes")?,
        dim: need(a.dim, from_cfg.as_ref().map(|r| r.dim), "dim")?,
        samples: need(a.samples, from_cfg.as_ref().map(|r| r.samples), "samples")?,
        cluster_spread: a.spread.or(from_cfg.as_ref().map(|r| r.cluster_spread)).unwrap_or(1.0),
        overlap_factor: a.overlap.or(from_cfg.as_ref().map(|r| r.overlap_factor)).unwrap_or(0.0),
        seed: if cli.seed.is_some() { None } else { from_cfg.as_ref().and_then(|r| r.seed) },
    };
    let seed = master_seed(cli, cfg.as_ref());
    let ds = data::load(&DataSource::Synthetic { recipe }, seed)?;
    let path = a.output.clone().unwrap_or_else(|| out_dir(cli, cfg.as_ref()).join("synth.csv"));
    data::write_csv(&path, &ds)?;
    say!(log, "wrote {} ({} rows, {} features, {} classes)", path.display(), ds.len(), ds.dim(), ds.n_classes());
    Ok(Outcome::Ok)
}

/// A loaded experiment: config with CLI overrides applied, and the split.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub train: Dataset,
    pub test: Dataset,
}

impl Experiment {
    pub fn load(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = optional_config(cli)?.ok_or_else(|| CliError::Usage("this command needs --config".into()))?;
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        let out = out_dir(cli, Some(&cfg));
        let ds = data::load(&cfg.data, cfg.seed)?;
        let (train, test) = ds.split(cfg.test_fraction, &mut cfg.splitter().stream("data"))?;
        Ok(Self { cfg, out, train, test })
    }

    /// Held-out split, or the training split when none was held out.
    pub fn eval_set(&self) -> &Dataset {
        if self.test.is_empty() {
            &self.train
        } else {
            &self.test
        }
    }

    pub fn ksets(&self) -> Result<Vec<CardinalitySet>, CliError> {
        self.cfg.k_schedule.sets(self.train.n_classes())
    }

    pub fn base_path(&self, given: Option<&Path>) -> PathBuf {
        given.map(Path::to_path_buf).unwrap_or_else(|| self.out.join("base.json"))
    }

    pub fn selector_path(&self, kset: &CardinalitySet) -> PathBuf {
        self.out.join(format!("selector_{}.json", kset_tag(kset)))
    }
}

fn log_csv(path: &Path, logs: &[EpochLog]) -> Result<(), CliError> {
    let mut header = vec!["epoch".to_string(), "loss".to_string()];
    if let Some(first) = logs.first() {
        header.extend(first.metrics.iter().map(|(k, _)| k.clone()));
    }
    let rows: Vec<Vec<String>> = logs
        .iter()
        .map(|l| {
            let mut r = vec![l.epoch.to_string(), l.loss.to_string()];
            r.extend(l.metrics.iter().map(|(_, v)| v.to_string()));
            r
        })
        .collect();
    write_atomic(path, &csv_bytes(&header, &rows)?)
}

fn load_model(path: &Path, what: &str) -> Result<Model, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("{what} checkpoint {} not found", path.display())));
    }
    let ck: Checkpoint = read_json(path)?;
    Ok(Model::from_checkpoint(ck)?)
}

pub fn train_base(cli: &Cli, log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    let exp = Experiment::load(cli)?;
    let mut eval_ks: Vec<usize> = exp.ksets()?.last().map(|s| s.ks().to_vec()).unwrap_or_default();
    if !eval_ks.contains(&1) {
        eval_ks.insert(0, 1);
    }
    let out = train::train_base(&exp.train, &exp.cfg.base_train(), &eval_ks)?;
    let ck = exp.base_path(None);
    write_json(&ck, &out.model.to_checkpoint())?;
    log_csv(&exp.out.join("base_log.csv"), &out.log)?;
    for &k in &eval_ks {
        let tr = train::topk_accuracy(&exp.train, &out.model, k)?;
        let te = train::topk_accuracy(exp.eval_set(), &out.model, k)?;
        say!(log, "top-{k} accuracy: train {tr:.4}, eval {te:.4}");
    }
    say!(log, "wrote {} after {} epochs", ck.display(), out.log.len());
    Ok(Outcome::Ok)
}

pub fn train_selector(cli: &Cli, a: &SelectorArgs, log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    let exp = Experiment::load(cli)?;
    let base = load_model(&exp.base_path(a.base.as_deref()), "base")?;
    let ksets = if a.kset.is_empty() {
        exp.ksets()?
    } else {
        let s = CardinalitySet::new(a.kset.clone())?;
        s.check_within(exp.train.n_classes())?;
        vec![s]
    };
    for kset in ksets {
        let spec = exp.cfg.cost.spec(kset.clone())?;
        let out = train::train_selector(&exp.train, &base, &spec, &exp.cfg.selector_train(&kset))?;
        let path = exp.selector_path(&kset);
        write_json(&path, &out.model.to_checkpoint())?;
        log_csv(&exp.out.join(format!("selector_{}_log.csv", kset_tag(&kset))), &out.log)?;
        let (acc, card) = train::selector_metrics(exp.eval_set(), &base, &out.model, &spec)?;
        say!(log, "K = {{{}}}: accuracy {acc:.4}, avg cardinality {card:.4} -> {}", kset_tag(&kset), path.display());
    }
    Ok(Outcome::Ok)
}

/// One row of `curve.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub method: &'static str,
    pub kset: String,
    pub avg_cardinality: f64,
    pub accuracy: f64,
}

/// Top-k points for every `k` and one selector point per K-set.
pub fn curve_points(ds: &Dataset, base: &Model, selectors: &[(CostSpec, Model)]) -> Result<Vec<CurvePoint>, CliError> {
    let mut pts = Vec::new();
    for k in 1..=ds.n_classes() {
        pts.push(CurvePoint {
            method: "topk",
            kset: k.to_string(),
            avg_cardinality: k as f64,
            accuracy: train::topk_accuracy(ds, base, k)?,
        });
    }
    for (spec, sel) in selectors {
        let (accuracy, avg_cardinality) = train::selector_metrics(ds, base, sel, spec)?;
        pts.push(CurvePoint { method: "selector", kset: kset_tag(&spec.kset), avg_cardinality, accuracy });
    }
    Ok(pts)
}

pub fn curve(cli: &Cli, a: &CurveArgs, log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    let exp = Experiment::load(cli)?;
    let base = load_model(&exp.base_path(a.base.as_deref()), "base")?;
    let mut selectors = Vec::new();
    for kset in exp.ksets()? {
        let sel = load_model(&exp.selector_path(&kset), "selector")?;
        selectors.push((exp.cfg.cost.spec(kset)?, sel));
    }
    let pts = curve_points(exp.eval_set(), &base, &selectors)?;
    let header: Vec<String> = ["method", "kset", "avg_cardinality", "accuracy"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = pts
        .iter()
        .map(|p| vec![p.method.to_string(), p.kset.clone(), p.avg_cardinality.to_string(), p.accuracy.to_string()])
        .collect();
    let path = exp.out.join("curve.csv");
    write_atomic(&path, &csv_bytes(&header, &rows)?)?;
    for p in &pts {
        say!(log, "{:<9} {:>8} cardinality {:>7.4} accuracy {:.4}", p.method, p.kset, p.avg_cardinality, p.accuracy);
    }
    say!(log, "wrote {}", path.display());
    Ok(Outcome::Ok)
}

/// Linear interpolation of the top-k curve at cardinality `c`.
pub fn interpolate_topk(points: &[CurvePoint], c: f64) -> Option<f64> {
    let topk: Vec<(f64, f64)> =
        points.iter().filter(|p| p.method == "topk").map(|p| (p.avg_cardinality, p.accuracy)).collect();
    let hi = topk.iter().position(|&(k, _)| k >= c)?;
    if hi == 0 {
        return (topk[0].0 == c).then_some(topk[0].1);
    }
    let ((k0, a0), (k1, a1)) = (topk[hi - 1], topk[hi]);
    Some(a0 + (a1 - a0) * (c - k0) / (k1 - k0))
}
