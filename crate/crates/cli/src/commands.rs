//! Every subcommand except `verify`.

use std::fmt::Write as _;
use std::path::Path;

use cafe_core::baselines::read_scores;
use cafe_core::cafe::{CafeConfig, Verdict};
use cafe_core::data::UnlearningTarget;
use cafe_core::error::Error;
use cafe_core::fuzz::FuzzConfig;
use cafe_core::models::{serve, simulate_unlearning, train, BuiltinModel, Hyperparams};
use cafe_core::report::{compare, InfluenceReport, ScoreSource};
use cafe_core::robustness::{
    architecture_sweep, benchmark, perturb_graph, rank_change, BenchConfig, Perturbation, PerturbationSpec,
    RankChange,
};
use cafe_core::synth::GeneratorSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{
    BenchArgs, CompareArgs, GenerateArgs, PerturbArgs, PerturbKind, ServeArgs, SweepArgs, TrainArgs,
};
use crate::io;

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialize");
    s.push('\n');
    s
}

pub fn generate(args: &GenerateArgs) -> Result<(), Error> {
    let mut spec = GeneratorSpec::load(&args.spec)?;
    if let Some(n) = args.rows {
        spec.n = n;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let g = spec.causal_graph()?;
    let ds = spec.generate()?;
    let mut csv = Vec::new();
    ds.write_csv(&mut csv, &g)?;
    let data_path = args.out_dir.join("data.csv");
    io::write_text(&data_path, &String::from_utf8(csv).expect("csv output is utf-8"))?;
    io::write_text(&args.out_dir.join("graph.json"), &g.to_json_pretty())?;
    if spec.is_linear() {
        io::write_text(
            &args.out_dir.join("truth.json"),
            &to_json(&spec.ground_truth_effects()?),
        )?;
    }
    println!(
        "wrote {} rows x {} features to {}",
        ds.n_rows(),
        ds.n_features(),
        args.out_dir.display()
    );
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

pub fn compare_sources(args: &CompareArgs) -> Result<(), Error> {
    let reports = args
        .inputs
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .count();
    let mut sources = Vec::new();
    for path in &args.inputs {
        let text = io::read_text(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let report = InfluenceReport::from_json_str(&text).map_err(|e| io::io_error(path, e))?;
            for mut s in report.sources() {
                if reports > 1 {
                    s.name = format!("{}.{}", file_stem(path), s.name);
                }
                sources.push(s);
            }
        } else {
            let scores = read_scores(text.as_bytes()).map_err(|e| io::io_error(path, e))?;
            sources.push(ScoreSource {
                name: file_stem(path),
                scores,
            });
        }
    }
    let table = compare(&sources).map_err(|e| {
        Error::new(
            "report",
            e.to_string(),
            Some("pass at least two reports or score files"),
        )
    })?;
    for (feature, method) in table.missing() {
        eprintln!("warning: `{method}` has no score for `{feature}`");
    }
    let width = table.features.iter().map(String::len).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "feature");
    for m in &table.methods {
        let _ = write!(out, " {:>24}", m);
    }
    out.push('\n');
    for (i, f) in table.features.iter().enumerate() {
        let _ = write!(out, "{f:<width$}");
        for cell in &table.cells[i] {
            let text = match cell {
                Some(c) => format!("{:.4} (#{})", c.normalized, c.rank),
                None => "-".to_string(),
            };
            let _ = write!(out, " {text:>24}");
        }
        out.push('\n');
    }
    print!("{out}");
    if let Some(path) = &args.out {
        io::write_text(path, &table.to_csv())?;
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<(), Error> {
    let inputs = io::load_inputs(&args.input)?;
    let target = io::target(&args.target)?;
    let (model, _) = io::load_model(&args.model, inputs.data.schema())?;
    let cfg = BenchConfig {
        repeats: args.repeats,
        threads: args.threads,
        fuzz: FuzzConfig {
            samples: args.samples,
            seed: args.seed,
            ..FuzzConfig::default()
        },
        cafe: CafeConfig {
            seed: args.seed,
            ..CafeConfig::default()
        },
        seed: args.seed,
        ..BenchConfig::default()
    };
    let methods: Vec<_> = args.methods.iter().map(|&m| m.into()).collect();
    let timings = benchmark(
        &methods,
        &inputs.graph,
        &inputs.data,
        model.as_ref(),
        &target,
        &cfg,
    )?;
    for t in &timings {
        println!(
            "{:<12} median {:.4}s over {} runs",
            format!("{:?}", t.method).to_lowercase(),
            t.median_secs,
            t.runs_secs.len()
        );
    }
    if let Some(path) = &args.out {
        io::write_text(path, &to_json(&timings))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PerturbRun {
    seed: u64,
    edges: Vec<(String, String)>,
    rank_change: RankChange,
}

#[derive(Serialize)]
struct PerturbSummary {
    kind: &'static str,
    fraction: f64,
    mean_percentage: f64,
    runs: Vec<PerturbRun>,
}

pub fn perturb(args: &PerturbArgs) -> Result<(), Error> {
    let inputs = io::load_inputs(&args.input)?;
    let (model, _) = io::load_model(&args.model, inputs.data.schema())?;
    let (perturbation, kind) = match args.kind {
        PerturbKind::AddEdges => (Perturbation::AddEdges(args.fraction), "add-edges"),
        PerturbKind::RemoveEdges => (Perturbation::RemoveEdges(args.fraction), "remove-edges"),
        PerturbKind::FullyConnect => (Perturbation::FullyConnect, "fully-connect"),
    };
    let cafe = CafeConfig {
        estimator: args.estimator.into(),
        seed: args.seed,
        ..CafeConfig::default()
    };
    let runs = (0..args.runs.max(1))
        .into_par_iter()
        .map(|i| {
            let seed = args.seed.wrapping_add(i);
            let g2 = perturb_graph(&inputs.graph, &PerturbationSpec { perturbation, seed })?;
            let change = rank_change(&inputs.graph, &g2, &inputs.data, model.as_ref(), &cafe)?;
            let edges = g2.edges().map(|(a, b)| (a.to_string(), b.to_string())).collect();
            Ok(PerturbRun {
                seed,
                edges,
                rank_change: change,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    for r in &runs {
        println!(
            "seed {}: {:.1}% of features changed rank{}",
            r.seed,
            r.rank_change.percentage,
            if r.rank_change.changed.is_empty() {
                String::new()
            } else {
                format!(" ({})", r.rank_change.changed.join(", "))
            }
        );
    }
    let mean_percentage = runs.iter().map(|r| r.rank_change.percentage).sum::<f64>() / runs.len() as f64;
    println!("mean rank change: {mean_percentage:.1}%");
    if let Some(path) = &args.out {
        let summary = PerturbSummary {
            kind,
            fraction: args.fraction,
            mean_percentage,
            runs,
        };
        io::write_text(path, &to_json(&summary))?;
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<(), Error> {
    let inputs = io::load_inputs(&args.input)?;
    let target = io::target(&args.target)?;
    let cafe = CafeConfig {
        seed: args.seed,
        ..CafeConfig::default()
    };
    let entries = architecture_sweep(
        &inputs.graph,
        &inputs.data,
        &target,
        &args.kinds,
        args.unlearn.into(),
        &Hyperparams::default(),
        args.seed,
        &cafe,
    )?;
    for e in &entries {
        let verdict = match e.result.verdict {
            Verdict::Unlearned => "unlearned",
            Verdict::ResidualInfluence => "residual influence",
        };
        println!(
            "{}: sum of totals {:.6} (tau {:.6}), {verdict}",
            e.kind, e.result.combined_total, e.result.tau
        );
        for f in &e.result.features {
            println!(
                "  {} total {:.6} direct {:.6} indirect {:.6}",
                f.feature, f.total, f.direct, f.indirect
            );
        }
    }
    if let Some(path) = &args.out {
        io::write_text(path, &to_json(&entries))?;
    }
    Ok(())
}

pub fn train_model(args: &TrainArgs) -> Result<(), Error> {
    let inputs = io::load_inputs(&args.input)?;
    let ds = &inputs.data;
    let hp = Hyperparams {
        trees: args.trees,
        depth: args.depth,
        hidden: args.hidden,
        iterations: args.iterations,
        learning_rate: args.learning_rate,
        ..Hyperparams::default()
    };
    let model = if args.target_features.is_empty() {
        train(args.kind, ds, &ds.schema().feature_names(), &hp, args.seed)?
    } else {
        let target = UnlearningTarget::new(io::parse_selector(&args.selector)?, args.target_features.clone());
        simulate_unlearning(args.kind, ds, &target, args.unlearn.into(), &hp, args.seed)?
    };
    io::write_text(&args.out, &model.to_json_pretty())?;
    println!(
        "{} model reading {} written to {}",
        model.kind(),
        model.used_features().join(", "),
        args.out.display()
    );
    Ok(())
}

pub fn serve_model(args: &ServeArgs) -> Result<(), Error> {
    let model = BuiltinModel::from_json_str(&io::read_text(&args.model)?)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(&model, stdin.lock(), stdout.lock())?;
    Ok(())
}
