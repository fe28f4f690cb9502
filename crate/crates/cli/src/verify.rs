//! The `verify` subcommand: score the target with every requested method,
//! decide the verdict and write the report.

use std::fmt::Write as _;
use std::time::Instant;

use cafe_core::baselines::{
    fairness_by_feature, fairness_metrics, permutation_importances, LabelRule, Metric,
};
use cafe_core::cafe::{cafe_estimate, CafeConfig, CafeResult, Verdict};
use cafe_core::data::{Dataset, Predicate, UnlearningTarget};
use cafe_core::error::Error;
use cafe_core::fuzz::{fuzz, fuzz_paths, target_paths, Aggregation, FuzzConfig};
use cafe_core::influence::{rank_by_magnitude, FeatureInfluence, RankEntry};
use cafe_core::linalg;
use cafe_core::models::{binary_labels, predict_dataset, PredictionModel};
use cafe_core::report::{
    FuzzSection, InfluenceReport, PermutationSection, Provenance, Subgroup, TargetSummary, Volatile,
};
use cafe_core::robustness::{Method, Timing};
use cafe_core::sem::fit_sem;

use crate::args::{FuzzModeFlag, MethodFlag, MetricFlag, VerifyArgs};
use crate::io::{self, Inputs};

pub fn run(args: &VerifyArgs) -> Result<Option<Verdict>, Error> {
    let inputs = io::load_inputs(&args.input)?;
    let target = io::target(&args.target)?;
    let bound = target.bind(&inputs.data)?;
    let (model, model_desc) = io::load_model(&args.model, inputs.data.schema())?;
    let config = serde_json::to_string(args).expect("arguments serialize");
    let provenance = Provenance {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: args.seed,
        config_hash: io::sha256_hex(config.as_bytes()),
        graph_hash: inputs.graph_hash.clone(),
        data_hash: inputs.data_hash.clone(),
        model: model_desc,
    };
    let mut report = InfluenceReport::new(
        TargetSummary {
            features: bound.names.clone(),
            selector: target.selector.to_string(),
            rows: bound.rows.n_rows(),
        },
        provenance,
    );
    let mut timings = Vec::new();
    let timed = |method: Method, secs: f64| Timing {
        method,
        median_secs: secs,
        runs_secs: vec![secs],
    };

    let scored = if args.rank_all {
        UnlearningTarget::new(target.selector.clone(), inputs.data.schema().feature_names())
    } else {
        target.clone()
    };

    if args.runs(MethodFlag::Fuzz) {
        let start = Instant::now();
        let section = run_fuzz(args, &inputs, model.as_ref(), &target, &scored)?;
        timings.push(timed(Method::Fuzz, start.elapsed().as_secs_f64()));
        report.fuzz = Some(section);
    }

    let cafe_cfg = CafeConfig {
        estimator: args.estimator.into(),
        contrasts: args.contrast.iter().cloned().collect(),
        tau: args.tau,
        strata_cap: args.strata_cap,
        unweighted: false,
        bootstrap: args.bootstrap,
        seed: args.seed,
    };
    if args.runs(MethodFlag::Cafe) {
        let start = Instant::now();
        let full = cafe_estimate(&inputs.graph, &inputs.data, model.as_ref(), &scored, &cafe_cfg)?;
        timings.push(timed(Method::Cafe, start.elapsed().as_secs_f64()));
        if args.rank_all {
            let result = full.restricted_to(&bound.names);
            report.set_cafe(cafe_cfg.clone(), result);
            if let Some(section) = report.cafe.as_mut() {
                section.context = Some(full);
            }
        } else {
            report.set_cafe(cafe_cfg.clone(), full);
        }
    }
    for text in &args.subgroup {
        let extra = io::parse_selector(text)?;
        let mut atoms = target.selector.atoms.clone();
        atoms.extend(extra.atoms);
        let predicate = Predicate { atoms };
        let sub = UnlearningTarget::new(predicate.clone(), target.features.clone());
        let result = cafe_estimate(&inputs.graph, &inputs.data, model.as_ref(), &sub, &cafe_cfg)?;
        report.subgroups.push(Subgroup {
            predicate: predicate.to_string(),
            result,
        });
    }

    if args.runs(MethodFlag::Perm) {
        let start = Instant::now();
        report.permutation = Some(run_permutation(args, &inputs.data, model.as_ref())?);
        timings.push(timed(Method::Permutation, start.elapsed().as_secs_f64()));
    }

    if args.runs(MethodFlag::Fairness) {
        run_fairness(args, &inputs.data, model.as_ref(), &mut report)?;
    }

    report.volatile = Volatile {
        timestamp: io::unix_timestamp(),
        timings,
    };

    if let Some(out) = &args.out {
        io::write_text(out, &report.to_json_pretty())?;
        io::write_text(&io::sibling(out, "effects"), &report.effects_csv())?;
        if let Some(csv) = report.paths_csv() {
            io::write_text(&io::sibling(out, "paths"), &csv)?;
        }
        if let Some(csv) = report.fairness_csv() {
            io::write_text(&io::sibling(out, "fairness"), &csv)?;
        }
    }
    print!("{}", summary(&report));
    Ok(report.verdict)
}

fn run_fuzz(
    args: &VerifyArgs,
    inputs: &Inputs,
    model: &dyn PredictionModel,
    target: &UnlearningTarget,
    scored: &UnlearningTarget,
) -> Result<FuzzSection, Error> {
    let (g, ds) = (&inputs.graph, &inputs.data);
    let cfg = FuzzConfig {
        samples: args.samples,
        strategy: args.strategy.into(),
        contrasts: args.contrast.iter().cloned().collect(),
        aggregation: Aggregation::Mean,
        seed: args.seed,
        stochastic: args.stochastic,
    };
    let sem = fit_sem(g, ds)?;
    let features = fuzz(g, &sem, model, ds, scored, &cfg)?;
    let paths = if args.mode == FuzzModeFlag::Paths {
        fuzz_paths(g, &sem, model, ds, target, &target_paths(g, target)?, &cfg)?
    } else {
        Vec::new()
    };
    let mut section = FuzzSection::new(cfg, features, paths);
    if args.mode == FuzzModeFlag::Direct {
        let names: Vec<String> = section.features.iter().map(|f| f.feature.clone()).collect();
        let direct: Vec<f64> = section.features.iter().map(|f| f.direct).collect();
        section.ranking = rank_by_magnitude(&names, &direct);
    }
    Ok(section)
}

fn run_permutation(
    args: &VerifyArgs,
    ds: &Dataset,
    model: &dyn PredictionModel,
) -> Result<PermutationSection, Error> {
    let (metric, label) = match args.metric {
        MetricFlag::Rmse => (Metric::NegRmse, "neg-rmse"),
        MetricFlag::Accuracy => (
            Metric::Accuracy {
                threshold: args.threshold.unwrap_or(0.5),
            },
            "accuracy",
        ),
    };
    let scores = permutation_importances(ds, model, metric, args.seed, args.perm_repeats)?;
    let (names, values): (Vec<String>, Vec<f64>) = scores.into_iter().unzip();
    Ok(PermutationSection {
        metric: label.to_string(),
        repeats: args.perm_repeats,
        seed: args.seed,
        scores: rank_by_magnitude(&names, &values),
    })
}

fn run_fairness(
    args: &VerifyArgs,
    ds: &Dataset,
    model: &dyn PredictionModel,
    report: &mut InfluenceReport,
) -> Result<(), Error> {
    let threshold = match args.threshold {
        Some(t) => t,
        None => linalg::median(&predict_dataset(model, ds)?),
    };
    let labels = if binary_labels(ds).is_ok() {
        Some(LabelRule::Binary)
    } else {
        ds.outcome().ok().map(|y| LabelRule::AtLeast(linalg::median(&y)))
    };
    report.fairness = match &args.protected {
        Some(text) => {
            let privileged = io::parse_selector(text)?;
            vec![fairness_metrics(ds, model, &privileged, threshold, labels)?]
        }
        None => fairness_by_feature(ds, model, threshold, labels)?
            .into_iter()
            .map(|(_, r)| r)
            .collect(),
    };
    report.notes.push(format!(
        "fairness: a prediction is positive when the model output is at least {threshold}"
    ));
    report
        .notes
        .push("fairness: differences and ratios are unprivileged relative to privileged".to_string());
    if args.protected.is_none() {
        report.notes.push(
            "fairness: each feature is protected in turn; the privileged group is the second \
             category of a binary feature, the last category of a wider one, or values above \
             the median"
                .to_string(),
        );
    }
    Ok(())
}

fn selector_text(s: &str) -> &str {
    if s.is_empty() {
        "all rows"
    } else {
        s
    }
}

fn influence_table(out: &mut String, feats: &[FeatureInfluence], ranking: &[RankEntry]) {
    let width = feats.iter().map(|f| f.feature.len()).max().unwrap_or(0).max(7);
    let _ = writeln!(
        out,
        "  {:<width$} {:>12} {:>12} {:>12} {:>5}",
        "feature", "total", "direct", "indirect", "rank"
    );
    for f in feats {
        let rank = ranking
            .iter()
            .find(|r| r.feature == f.feature)
            .map_or(0, |r| r.rank);
        let _ = writeln!(
            out,
            "  {:<width$} {:>12.6} {:>12.6} {:>12.6} {:>5}",
            f.feature, f.total, f.direct, f.indirect, rank
        );
    }
}

fn verdict_line(out: &mut String, r: &CafeResult) {
    let word = match r.verdict {
        Verdict::Unlearned => "unlearned",
        Verdict::ResidualInfluence => "residual influence",
    };
    let _ = writeln!(
        out,
        "  |sum of totals| = {:.6}, tau = {:.6}: {word}",
        r.combined_total.abs(),
        r.tau
    );
}

fn summary(report: &InfluenceReport) -> String {
    let mut out = String::new();
    let t = &report.target;
    let _ = writeln!(
        out,
        "target: {} ({}, {} rows)",
        t.features.join(", "),
        selector_text(&t.selector),
        t.rows
    );
    if let Some(f) = &report.fuzz {
        let _ = writeln!(out, "fuzz ({} draws per instance):", f.config.samples);
        influence_table(&mut out, &f.features, &f.ranking);
        for p in &f.paths {
            let _ = writeln!(out, "  path {}: {:.6}", p.path.join(" -> "), p.score);
        }
    }
    if let Some(c) = &report.cafe {
        let _ = writeln!(
            out,
            "cafe ({}):",
            serde_json::to_value(c.config.estimator)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default()
        );
        match &c.context {
            Some(all) => influence_table(&mut out, &all.features, &all.ranking),
            None => influence_table(&mut out, &c.result.features, &c.result.ranking),
        }
        verdict_line(&mut out, &c.result);
    }
    for s in &report.subgroups {
        let _ = writeln!(out, "subgroup {} ({} rows):", s.predicate, s.result.rows);
        influence_table(&mut out, &s.result.features, &s.result.ranking);
    }
    if let Some(p) = &report.permutation {
        let _ = writeln!(
            out,
            "permutation importance ({}, {} shuffles):",
            p.metric, p.repeats
        );
        for e in &p.scores {
            let _ = writeln!(out, "  {:>3}. {} {:.6}", e.rank, e.feature, e.score);
        }
    }
    for f in &report.fairness {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let di = if f.di_infinite {
            "inf".to_string()
        } else {
            fmt(f.di)
        };
        let _ = writeln!(
            out,
            "fairness [{}]: SPD {:.4}, DI {di}, EOD {}, AOD {}",
            f.privileged,
            f.spd,
            fmt(f.eod),
            fmt(f.aod)
        );
    }
    out
}
