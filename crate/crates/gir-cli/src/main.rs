//! `gir`: certify anchor distances, train and sweep models, fuse experts,
//! and score expert complementarity.
//!
//! Every failure exits nonzero after printing a single machine-readable
//! JSON line to stderr; certification mismatches use exit code 2.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gir_core::anchors::{read_anchor_file, select_anchors, AnchorStrategy};
use gir_core::certify::{certify_per_anchor, certify_set_distance, Verdict};
use gir_core::fusion::expert_complementarity;
use gir_core::graph::{build_graph, read_edge_list};
use gir_core::harness::{
    aggregate_runs, desk_scale_seeds, full_protocol_seeds, load_experiment_config,
    load_fusion_config, load_sweep_config, result_rows, run_experiment, run_fusion_experiment,
    run_sweep, runs_csv, sort_rows, summary_csv, CsvRow,
};
use gir_core::schedule::ScheduleMode;

#[derive(Parser)]
#[command(name = "gir", version, about = "Anchor-based graph embedding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check decoded anchor distances against breadth-first oracles.
    Certify(CertifyArgs),
    /// Run one experiment config and emit per-run and summary CSV.
    Train(TrainArgs),
    /// Run a dataset x variant grid and emit combined CSV.
    Sweep(SweepArgs),
    /// Train a fused expert bundle over a seed grid.
    Fuse(FuseArgs),
    /// Expert complementarity report from a predictions CSV.
    Ec(EcArgs),
}

#[derive(Args)]
struct CertifyArgs {
    /// Whitespace-separated edge list ("u v" per line).
    #[arg(long)]
    edges: PathBuf,
    /// Treat listed edges as bidirected.
    #[arg(long)]
    undirected: bool,
    /// Anchor id file (one id per line); selected by strategy when absent.
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    anchor_count: usize,
    #[arg(long, value_parser = parse_strategy, default_value = "top-degree")]
    strategy: AnchorStrategy,
    /// Propagation depth to certify.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Frontier schedule; the per-anchor matrix check needs `literal`.
    #[arg(long, value_parser = parse_mode, default_value = "literal")]
    mode: ScheduleMode,
    /// Anchor selection seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for runs.csv and summary.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's schedule mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ScheduleMode>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// 5 model seeds x 3 split seeds, replacing the config's lists.
    #[arg(long, conflicts_with = "full_protocol")]
    desk_scale: bool,
    /// 20 model seeds x 5 split seeds, replacing the config's lists.
    #[arg(long)]
    full_protocol: bool,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ScheduleMode>,
}

#[derive(Args)]
struct FuseArgs {
    /// Fusion config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EcArgs {
    /// CSV with header `truth,expert0,expert1,...` and one item per row.
    #[arg(long)]
    predictions: PathBuf,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<ScheduleMode, String> {
    match s {
        "literal" => Ok(ScheduleMode::Literal),
        "bfs-shell" => Ok(ScheduleMode::BfsShell),
        other => Err(format!("unknown mode {other:?}, expected literal|bfs-shell")),
    }
}

fn parse_strategy(s: &str) -> Result<AnchorStrategy, String> {
    match s {
        "random" => Ok(AnchorStrategy::Random),
        "top-degree" => Ok(AnchorStrategy::TopDegree),
        "greedy-cover" => Ok(AnchorStrategy::GreedyCover),
        other => Err(format!(
            "unknown strategy {other:?}, expected random|top-degree|greedy-cover"
        )),
    }
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn new(kind: &'static str, message: impl ToString) -> Failure {
        Failure {
            kind,
            message: message.to_string(),
            code: 1,
        }
    }
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure::new("error", e)
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::new(
            "missing-file",
            format!("no such file: {}", path.display()),
        ))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify(args) => cmd_certify(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Ec(args) => cmd_ec(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": f.kind, "message": f.message}})
            );
            ExitCode::from(f.code)
        }
    }
}

fn verdict_json(v: &Verdict) -> serde_json::Value {
    serde_json::json!({
        "checked": v.checked,
        "mismatches": v.mismatches.iter().map(|m| serde_json::json!({
            "node": m.node,
            "anchor": m.anchor,
            "expected": m.expected,
            "got": m.got,
        })).collect::<Vec<_>>(),
    })
}

fn cmd_certify(args: CertifyArgs) -> Result<(), Failure> {
    require_file(&args.edges)?;
    if let Some(path) = &args.anchors {
        require_file(path)?;
    }
    let edges = read_edge_list(&args.edges)?;
    let n = edges
        .iter()
        .map(|&(u, v)| u.max(v) as usize + 1)
        .max()
        .ok_or_else(|| Failure::new("config", "edge list is empty"))?;
    let g = build_graph(&edges, n, args.undirected)?;
    let anchors = match &args.anchors {
        Some(path) => read_anchor_file(path, n)?,
        None => select_anchors(&g, args.anchor_count, args.strategy, args.seed)?,
    };

    let set_cert = certify_set_distance(&g, &anchors, args.layers)?;
    print!("{}", set_cert.verdict.to_text("set distances"));
    let mut all_passed = set_cert.verdict.passed();
    let mut report = serde_json::json!({
        "nodes": n,
        "anchors": anchors.ids(),
        "layers": args.layers,
        "mode": args.mode.to_string(),
        "set_distance": verdict_json(&set_cert.verdict),
    });

    if args.mode == ScheduleMode::Literal {
        let per_anchor = certify_per_anchor(&g, &anchors, args.layers)?;
        print!("{}", per_anchor.verdict.to_text("per-anchor matrix"));
        all_passed &= per_anchor.verdict.passed();
        report["per_anchor"] = verdict_json(&per_anchor.verdict);
    } else {
        println!("per-anchor matrix: skipped (needs --mode literal)");
    }

    if let Some(path) = &args.out {
        write_text(path, &format!("{report:#}\n"))?;
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure {
            kind: "certification-failed",
            message: "decoded distances disagree with the oracle".into(),
            code: 2,
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(Failure::from)?;
        }
    }
    std::fs::write(path, text).map_err(Failure::from)
}

fn emit_csvs(out: &Path, mut rows: Vec<CsvRow>) -> Result<(), Failure> {
    sort_rows(&mut rows);
    write_text(&out.join("runs.csv"), &runs_csv(&rows))?;
    let summary = aggregate_runs(&rows);
    write_text(&out.join("summary.csv"), &summary_csv(&summary))?;
    for s in &summary {
        println!(
            "{} {} {} {}: mean {:.4} std {:.4} over {} runs ({} diverged)",
            s.dataset, s.task, s.variant, s.metric_name, s.mean, s.std, s.runs, s.diverged
        );
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    require_file(&args.config)?;
    let mut config = load_experiment_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(mode) = args.mode {
        config.schedule_mode = mode;
    }
    let result = run_experiment(&config)?;
    emit_csvs(&args.out, result_rows(&result))
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    require_file(&args.config)?;
    let mut config = load_sweep_config(&args.config)?;
    if args.desk_scale {
        (config.seeds, config.split_seeds) = desk_scale_seeds();
    }
    if args.full_protocol {
        (config.seeds, config.split_seeds) = full_protocol_seeds();
    }
    if let Some(mode) = args.mode {
        config.schedule_mode = mode;
    }
    let results = run_sweep(&config)?;
    let rows: Vec<CsvRow> = results.iter().flat_map(result_rows).collect();
    emit_csvs(&args.out, rows)
}

fn cmd_fuse(args: FuseArgs) -> Result<(), Failure> {
    require_file(&args.config)?;
    let mut config = load_fusion_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    let rows = run_fusion_experiment(&config)?;
    emit_csvs(&args.out, rows)
}

fn read_predictions_csv(path: &Path) -> Result<(Vec<Vec<u32>>, Vec<u32>), Failure> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Failure::new("config", "predictions file is empty"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "truth" {
        return Err(Failure::new(
            "config",
            "expected header truth,expert0,expert1,...",
        ));
    }
    let experts = columns.len() - 1;
    let mut truth = Vec::new();
    let mut preds = vec![Vec::new(); experts];
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Failure::new(
                "config",
                format!("row {} has {} fields, expected {}", i + 2, fields.len(), columns.len()),
            ));
        }
        let parse = |s: &str| -> Result<u32, Failure> {
            s.trim()
                .parse()
                .map_err(|e| Failure::new("config", format!("row {}: {e}", i + 2)))
        };
        truth.push(parse(fields[0])?);
        for (k, f) in fields[1..].iter().enumerate() {
            preds[k].push(parse(f)?);
        }
    }
    Ok((preds, truth))
}

fn cmd_ec(args: EcArgs) -> Result<(), Failure> {
    let (preds, truth) = read_predictions_csv(&args.predictions)?;
    let report = expert_complementarity(&preds, &truth)?;
    let json = serde_json::json!({
        "experts": report.per_expert.len(),
        "items": truth.len(),
        "per_expert": report.per_expert,
        "aggregate": report.aggregate,
        "false_sizes": report.false_sizes,
        "others_true_sizes": report.others_true_sizes,
        "intersection_sizes": report.intersection_sizes,
    });
    let text = format!("{json:#}\n");
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_and_strategy_parsers() {
        assert_eq!(parse_mode("literal").unwrap(), ScheduleMode::Literal);
        assert_eq!(parse_mode("bfs-shell").unwrap(), ScheduleMode::BfsShell);
        assert!(parse_mode("eager").is_err());
        assert_eq!(
            parse_strategy("greedy-cover").unwrap(),
            AnchorStrategy::GreedyCover
        );
        assert!(parse_strategy("degree").is_err());
    }

    #[test]
    fn predictions_csv_parses_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "truth,expert0,expert1\n1,1,0\n0,1,0\n").unwrap();
        let (preds, truth) = read_predictions_csv(&path).unwrap();
        assert_eq!(truth, vec![1, 0]);
        assert_eq!(preds, vec![vec![1, 1], vec![0, 0]]);

        std::fs::write(&path, "a,b,c\n1,1,0\n").unwrap();
        assert!(read_predictions_csv(&path).is_err());

        std::fs::write(&path, "truth,expert0,expert1\n1,1\n").unwrap();
        assert!(read_predictions_csv(&path).is_err());
    }
}
