//! Acceptance suite. Prints one PASS/FAIL line per criterion at its pinned
//! tolerance, then exits non-zero if any criterion failed outside the
//! documented set of bounds that do not hold (see `KNOWN_VIOLATED`).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::SeedableRng;
use topk_core::bounds::{psi, psi_inv, sum_exp_psi_inv_closed, BoundKind};
use topk_core::gradcheck::{kernel_suite, model_suite};
use topk_core::losses::LossKind;
use topk_core::oracle::montecarlo::{
    dirichlet, run_campaign, run_grid_config, sample_grid_config, CampaignConfig, CampaignSummary, CardinalityN,
    Theorem,
};
use topk_core::oracle::{
    best_conditional_error_surrogate, best_conditional_error_topk, enumerate_best_topk, OptimizerConfig, PointLoss,
};
use topk_core::rng::{SeedSplitter, StreamRng};
use topk_core::train::{self, TrainConfig};
use topk_lab::commands::{interpolate_topk, CurvePoint};
use topk_lab::config::{SyntheticKind, SyntheticRecipe};
use topk_lab::{data, Cli, Outcome};

const SEED: u64 = 20_240_601;

/// Top-k bounds that have counterexamples for k ≥ 2 (recorded in the
/// decisions ledger). Their campaigns run at full size and are reported as
/// FAIL; a violation anywhere else fails the suite.
const KNOWN_VIOLATED: [&str; 5] = ["comp_mae", "comp_gce", "cstnd_sq_hinge", "cstnd_hinge", "cstnd_rho"];

struct Verdict {
    id: u8,
    title: &'static str,
    pass: bool,
    /// Failure confined to `KNOWN_VIOLATED`.
    known: bool,
    detail: String,
}

fn seed(name: &str) -> u64 {
    SeedSplitter::new(SEED).derive(name)
}

fn report(v: &Verdict) {
    let tag = match (v.pass, v.known) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known)",
        (false, false) => "FAIL",
    };
    println!("criterion {} [{}] {}: {}", v.id, v.title, tag, v.detail);
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn c1_topk_closed_form() -> Verdict {
    let t0 = Instant::now();
    let mut rng = StreamRng::seed_from_u64(seed("c1"));
    let mut worst = 0.0f64;
    let mut checks = 0;
    for i in 0..1000 {
        let n = 2 + i % 5;
        let p = dirichlet(&mut rng, n, 1.0);
        for k in 1..=n {
            let a = best_conditional_error_topk(&p, k).unwrap();
            let b = enumerate_best_topk(&p, k).unwrap();
            worst = worst.max((a - b).abs());
            checks += 1;
        }
    }
    let el = t0.elapsed();
    Verdict {
        id: 1,
        title: "top-k closed form vs enumeration",
        pass: worst <= 1e-12 && el <= Duration::from_secs(10),
        known: false,
        detail: format!("{checks} (p, k) pairs, max |diff| {worst:.2e} (tol 1e-12), {}", secs(el)),
    }
}

fn campaign(theorems: &[Theorem], cardinality_n: CardinalityN) -> (BTreeMap<String, CampaignSummary>, Duration) {
    let t0 = Instant::now();
    let cfg = CampaignConfig { trials: 10_000, seed: seed("montecarlo"), max_n: 8, k: None, cardinality_n };
    let mut out = BTreeMap::new();
    for t in theorems {
        let recs = run_campaign(*t, &cfg).unwrap();
        out.insert(t.name(), CampaignSummary::from_records(&t.name(), &recs));
    }
    (out, t0.elapsed())
}

fn summarize(sums: &BTreeMap<String, CampaignSummary>) -> String {
    sums.values()
        .map(|s| format!("{}={}/{} (min slack {:.1e})", s.theorem, s.violations, s.trials, s.min_slack))
        .collect::<Vec<_>>()
        .join(", ")
}

fn c2_topk_campaign() -> Verdict {
    let theorems: Vec<Theorem> = LossKind::all_default().into_iter().map(Theorem::TopK).collect();
    let (sums, el) = campaign(&theorems, CardinalityN::KSize);
    let violated: Vec<&str> = sums.values().filter(|s| s.violations > 0).map(|s| s.theorem.as_str()).collect();
    let in_time = el <= Duration::from_secs(300);
    Verdict {
        id: 2,
        title: "conditional top-k bounds, 10^4 trials each",
        pass: violated.is_empty() && in_time,
        known: in_time && violated.iter().all(|v| KNOWN_VIOLATED.contains(v)),
        detail: format!("violations {}; {}", summarize(&sums), secs(el)),
    }
}

fn c3_cardinality_campaign() -> Verdict {
    let theorems: Vec<Theorem> = LossKind::all_default().into_iter().map(Theorem::Cardinality).collect();
    let (sums, el) = campaign(&theorems, CardinalityN::KSize);
    let bad: usize = sums.values().map(|s| s.violations).sum();
    // The other reading of n in γ, reported only.
    let (alt, _) = campaign(&theorems, CardinalityN::Classes);
    let alt_bad: usize = alt.values().map(|s| s.violations).sum();
    Verdict {
        id: 3,
        title: "conditional cardinality-aware bounds, 10^4 trials each",
        pass: bad == 0 && el <= Duration::from_secs(300),
        known: false,
        detail: format!("violations {}; {}; with n = #classes: {alt_bad} violations", summarize(&sums), secs(el)),
    }
}

fn c4_expectation() -> Verdict {
    let t0 = Instant::now();
    let split = SeedSplitter::new(seed("c4"));
    let mut lines = Vec::new();
    let mut violated = Vec::new();
    let mut gaps_ok = true;
    for t in Theorem::all(0.7, 1.0) {
        let mut rng = split.stream(&t.name());
        let mut bad = 0;
        let (mut tgt_gap, mut sur_gap) = (false, false);
        for _ in 0..100 {
            let cfg = sample_grid_config(&mut rng, t, 6, 5, 64);
            let out = run_grid_config(&cfg).unwrap();
            bad += usize::from(out.reports.iter().any(|r| !r.satisfied));
            tgt_gap |= out.target_gap > 1e-3;
            sur_gap |= out.surrogate_gap > 1e-3;
        }
        gaps_ok &= tgt_gap && sur_gap;
        if bad > 0 {
            violated.push(t.name());
        }
        lines.push(format!("{}={bad}/100{}", t.name(), if tgt_gap && sur_gap { "" } else { " (no gap > 1e-3)" }));
    }
    Verdict {
        id: 4,
        title: "expectation-level bounds with minimizability gaps",
        pass: violated.is_empty() && gaps_ok,
        known: gaps_ok && violated.iter().all(|v| KNOWN_VIOLATED.contains(&v.as_str())),
        detail: format!("violating configs {}; {}", lines.join(", "), secs(t0.elapsed())),
    }
}

fn c5_gradients() -> Verdict {
    let t0 = Instant::now();
    let mut all = kernel_suite(0.7, 1.0, 100, seed("c5"));
    let kernels = all.len();
    all.extend(model_suite(0.7, 1.0, 100, seed("c5")));
    let failed: Vec<&str> = all.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let worst_k = all[..kernels].iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let worst_m = all[kernels..].iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Verdict {
        id: 5,
        title: "gradients vs central differences",
        pass: failed.is_empty() && kernels == 16,
        known: false,
        detail: format!(
            "{kernels} kernels worst {worst_k:.2e} (tol 1e-5), {} model checks worst {worst_m:.2e} (tol 1e-4), failed {:?}, {}",
            all.len() - kernels,
            failed,
            secs(t0.elapsed())
        ),
    }
}

fn c6_analytic() -> Verdict {
    let mut rng = StreamRng::seed_from_u64(seed("c6"));
    let cfg = OptimizerConfig::default();
    let mut worst_h = 0.0f64;
    for i in 0..100 {
        let n = 2 + i % 7;
        let p = dirichlet(&mut rng, n, 1.0);
        let h: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        let v = best_conditional_error_surrogate(&PointLoss::Surrogate(LossKind::CompLog), &p, &cfg).unwrap().value;
        worst_h = worst_h.max((v - h).abs());
    }
    let mut worst_rt = 0.0f64;
    for loss in [LossKind::CompLog, LossKind::CompExp, LossKind::CompGce { alpha: 0.7 }] {
        for (k, n) in [(1, 2), (2, 5), (3, 8)] {
            let b = BoundKind::TopK { loss, k, n };
            for i in 1..1000 {
                let t = i as f64 / 1000.0;
                let v = psi(&b, t).unwrap();
                worst_rt = worst_rt.max((psi_inv(&b, v).unwrap() - t).abs());
                worst_rt = worst_rt.max((psi(&b, psi_inv(&b, v).unwrap()).unwrap() - v).abs());
            }
        }
    }
    let mut worst_cf = 0.0f64;
    let b = BoundKind::TopK { loss: LossKind::CompExp, k: 1, n: 4 };
    for i in 0..=1000 {
        let v = i as f64 / 1000.0;
        worst_cf = worst_cf.max((psi_inv(&b, v).unwrap() - sum_exp_psi_inv_closed(v)).abs());
    }
    Verdict {
        id: 6,
        title: "analytic optima and ψ⁻¹",
        pass: worst_h <= 1e-8 && worst_rt <= 1e-10 && worst_cf <= 1e-10,
        known: false,
        detail: format!(
            "entropy max err {worst_h:.2e} (tol 1e-8), ψ⁻¹ roundtrip {worst_rt:.2e} (tol 1e-10), sum-exp closed form {worst_cf:.2e} (tol 1e-10)"
        ),
    }
}

fn c7_realizable() -> Verdict {
    let t0 = Instant::now();
    let recipe = SyntheticRecipe {
        kind: SyntheticKind::GaussianClusters,
        n_classes: 3,
        dim: 2,
        samples: 3000,
        cluster_spread: 0.25,
        overlap_factor: 0.0,
        seed: None,
    };
    let ds = data::gaussian_clusters(&recipe, 7).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for loss in [LossKind::CompLog, LossKind::CompExp, LossKind::CompGce { alpha: 0.7 }, LossKind::CompMae] {
        let cfg = TrainConfig { epochs: 500, loss, seed: 7, early_stop_error: Some(0.0), ..Default::default() };
        assert_eq!((cfg.lr, cfg.batch_size, cfg.weight_decay), (1e-3, 128, 1e-5));
        let out = train::train_base(&ds, &cfg, &[1]).unwrap();
        let err = 1.0 - train::topk_accuracy(&ds, &out.model, 1).unwrap();
        pass &= err == 0.0;
        parts.push(format!("{}: error {err:.4} after {} epochs", loss.name(), out.log.len()));
    }
    Verdict {
        id: 7,
        title: "realizable top-1 training",
        pass,
        known: false,
        detail: format!("{}; {}", parts.join(", "), secs(t0.elapsed())),
    }
}

fn experiment_config(dir: &Path, samples: usize, epochs: usize) -> String {
    format!(
        r#"{{
  "version": 1,
  "seed": 11,
  "test_fraction": 0.2,
  "data": {{"source": "synthetic", "recipe": {{"kind": "gaussian_clusters", "n_classes": 20, "dim": 10,
           "samples": {samples}, "cluster_spread": 0.6, "overlap_factor": 4.0}}}},
  "base": {{"lr": 0.001, "batch_size": 128, "weight_decay": 1e-5, "epochs": {epochs}, "loss": {{"family": "comp_log"}}}},
  "selector": {{"lr": 0.001, "batch_size": 128, "weight_decay": 1e-5, "epochs": {epochs}, "loss": {{"family": "comp_log"}},
               "hidden_dim": 64}},
  "cost": {{"lambda": 0.05, "penalty": "log_k", "normalize": true}},
  "k_schedule": {{"kind": "doubling", "max": 8}},
  "out_dir": {:?}
}}"#,
        dir.display().to_string()
    )
}

fn cli(args: &[&str]) -> Outcome {
    let cli = Cli::try_parse_from(std::iter::once("topk-lab").chain(args.iter().copied())).unwrap();
    let mut sink = Vec::new();
    topk_lab::run(&cli, &mut sink).unwrap_or_else(|e| panic!("{args:?}: {e}"))
}

fn run_pipeline(dir: &Path, samples: usize, epochs: usize, threads: &str) {
    let cfg = dir.join("experiment.json");
    std::fs::write(&cfg, experiment_config(dir, samples, epochs)).unwrap();
    let c = cfg.to_str().unwrap();
    for cmd in ["train-base", "train-selector", "curve"] {
        assert_eq!(cli(&["--config", c, "--threads", threads, cmd]), Outcome::Ok);
    }
}

fn read_curve(path: &Path) -> Vec<CurvePoint> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            CurvePoint {
                method: if &r[0] == "topk" { "topk" } else { "selector" },
                kset: r[1].to_string(),
                avg_cardinality: r[2].parse().unwrap(),
                accuracy: r[3].parse().unwrap(),
            }
        })
        .collect()
}

fn c8_dominance() -> Verdict {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), 10_000, 100, "4");
    let pts = read_curve(&dir.path().join("curve.csv"));
    let top1 = pts.iter().find(|p| p.method == "topk" && p.kset == "1").unwrap().accuracy;
    let mut weak = true;
    let mut best_margin = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for p in pts.iter().filter(|p| p.method == "selector") {
        let reference = interpolate_topk(&pts, p.avg_cardinality).unwrap();
        let margin = p.accuracy - reference;
        if p.kset == "1" {
            weak &= p.accuracy == top1;
        } else {
            weak &= margin >= 0.0;
            best_margin = best_margin.max(margin);
        }
        parts.push(format!(
            "K={{{}}}: card {:.3} acc {:.4} vs top-k {:.4} ({:+.2} pts)",
            p.kset.replace('-', ","),
            p.avg_cardinality,
            p.accuracy,
            reference,
            100.0 * margin
        ));
    }
    let el = t0.elapsed();
    Verdict {
        id: 8,
        title: "selector dominates the top-k curve",
        pass: weak && best_margin >= 0.005 && el <= Duration::from_secs(900),
        known: false,
        detail: format!("{}; {}", parts.join(", "), secs(el)),
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "experiment.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn c9_determinism() -> Verdict {
    let t0 = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, threads) in [(&a, "1"), (&b, "3")] {
        let out = d.path().to_str().unwrap();
        // The known-violated bounds make the outcome `Failed`; only the bytes matter here.
        cli(&[
            "--seed",
            "5",
            "--out",
            out,
            "--threads",
            threads,
            "verify-bounds",
            "--trials",
            "500",
            "--grid-configs",
            "5",
        ]);
        run_pipeline(d.path(), 2000, 5, threads);
    }
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    let same = fa == fb;
    let names: Vec<&String> = fa.keys().collect();
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    Verdict {
        id: 9,
        title: "byte-identical reruns",
        pass: same && fa.len() >= 10,
        known: false,
        detail: format!("{} files compared {:?}, differing {:?}; {}", fa.len(), names, differing, secs(t0.elapsed())),
    }
}

fn main() -> ExitCode {
    let criteria: [fn() -> Verdict; 9] = [
        c1_topk_closed_form,
        c2_topk_campaign,
        c3_cardinality_campaign,
        c4_expectation,
        c5_gradients,
        c6_analytic,
        c7_realizable,
        c8_dominance,
        c9_determinism,
    ];
    let mut unexpected = 0;
    for c in criteria {
        let v = c();
        report(&v);
        unexpected += usize::from(!v.pass && !v.known);
    }
    if unexpected > 0 {
        println!("acceptance: {unexpected} criteria failed outside the documented exceptions");
        ExitCode::FAILURE
    } else {
        println!("acceptance: done; failures, if any, are limited to the documented bound exceptions");
        ExitCode::SUCCESS
    }
}
