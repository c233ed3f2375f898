//! Command-line surface. Every run-producing subcommand writes its
//! artifacts into an `--out-dir` together with a `manifest.json` keyed by
//! the effective configuration hash, so interrupted runs resume instead of
//! restarting and differently-configured runs refuse to share a directory.
//!
//! Exit codes: 0 on success, 1 when some work items failed (the run is
//! partial and resumable), 2 on configuration or manifest errors.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{AgentKind, RunConfig};
use crate::dataset::{
    bin_estimate, dedup_test_set, embed_problems, estimate_pass1, load_problems, Pass1Report,
};
use crate::engine::run_vr_loop;
use crate::error::{Result, VrError};
use crate::jsonl::{read_jsonl_or_empty, write_atomic, write_dataset, JsonlWriter};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::metrics::{
    frontier_csv, matched_compute_compare, matched_compute_csv, precision_coverage,
    round_pass1_csv, round_pass1_series, run_bon, score_accuracy_csv, score_accuracy_series,
    BonRecord,
};
use crate::runner::{
    completed_loop_keys, load_traces_deduped, pending_loop_items, schedule_loops, ScheduleReport,
};
use crate::seed::{ROLE_GENERATOR, ROLE_VERIFIER};
use crate::stv::{
    build_opd_records, build_verdict_records, export_opd_dataset, export_verdict_dataset,
    stv_loss_report, OpdPair,
};
use crate::types::{Problem, VRTrace};
use crate::vil::{collect_vil_episode, VilEpisode, VilEpisodeOutcome};

#[derive(Parser)]
#[command(
    name = "vrloop",
    version,
    about = "Verification-refinement loop runner and evaluation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate pass@1 per problem over seeded rollouts and assign bins.
    Bin(BinArgs),
    /// Drop test problems too similar to any training problem.
    Dedup(DedupArgs),
    /// Run verification-refinement loops over a problem set.
    RunVr(RunVrArgs),
    /// Run best-of-N sampling over a problem set.
    RunBon(RunBonArgs),
    /// Build distillation and verdict-reward training data from traces.
    BuildOpd(BuildOpdArgs),
    /// Collect generator-training episodes with a frozen verifier.
    CollectVil(CollectVilArgs),
    /// Compute evaluation tables from persisted traces (no network).
    Metrics(MetricsArgs),
}

/// Config file plus the overrides every run-producing subcommand shares.
#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the refinement-round cap.
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Override loops (or best-of-N runs) per problem.
    #[arg(long)]
    loops_per_problem: Option<u64>,
    /// Override the concurrent work-item bound.
    #[arg(long)]
    in_flight: Option<usize>,
}

impl ConfigArgs {
    /// Load, overlay the flags, and re-validate: an override that breaks
    /// the config is the same class of error as a broken file.
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            config.base_seed = s;
        }
        if let Some(r) = self.max_rounds {
            config.max_rounds = r;
        }
        if let Some(l) = self.loops_per_problem {
            config.loops_per_problem = l;
        }
        if let Some(f) = self.in_flight {
            config.in_flight = f;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct BinArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Problem set (JSONL).
    #[arg(long)]
    problems: PathBuf,
    /// Rollouts per problem for the pass@1 estimate.
    #[arg(long, default_value_t = 32)]
    rollouts: u32,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Claim at most this many problems, then stop (resumable).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct DedupArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training problem set (JSONL).
    #[arg(long)]
    train: PathBuf,
    /// Test problem set to decontaminate (JSONL).
    #[arg(long)]
    test: PathBuf,
    /// Drop test problems whose similarity strictly exceeds this.
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunVrArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Problem set (JSONL).
    #[arg(long)]
    problems: PathBuf,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Claim at most this many loops, then stop (resumable).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct RunBonArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Problem set (JSONL).
    #[arg(long)]
    problems: PathBuf,
    /// Samples per best-of-N run.
    #[arg(long)]
    n: u32,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Claim at most this many runs, then stop (resumable).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct BuildOpdArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Problem set the traces were produced from (JSONL).
    #[arg(long)]
    problems: PathBuf,
    /// Persisted loop traces (JSONL).
    #[arg(long)]
    traces: PathBuf,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CollectVilArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Problem set (JSONL).
    #[arg(long)]
    problems: PathBuf,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Claim at most this many loops, then stop (resumable).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Persisted loop traces (JSONL).
    #[arg(long)]
    traces: PathBuf,
    /// Best-of-N record files, one per N (repeatable).
    #[arg(long = "bon")]
    bon: Vec<PathBuf>,
    /// Budget cap for the per-round tables; defaults to the largest round
    /// cap found in the traces.
    #[arg(long)]
    max_budget: Option<u32>,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Entry point for `main`: parse, dispatch, translate errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                VrError::Config(_) | VrError::Manifest(_) | VrError::Template(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Bin(args) => cmd_bin(args),
        Command::Dedup(args) => cmd_dedup(args),
        Command::RunVr(args) => cmd_run_vr(args),
        Command::RunBon(args) => cmd_run_bon(args),
        Command::BuildOpd(args) => cmd_build_opd(args),
        Command::CollectVil(args) => cmd_collect_vil(args),
        Command::Metrics(args) => cmd_metrics(args),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| VrError::io(dir, e))
}

fn generator_tag(config: &RunConfig) -> String {
    match config.generator.kind {
        AgentKind::Sim => "sim:generator".to_string(),
        AgentKind::Http => match &config.generator.http {
            Some(e) => format!("http:{}", e.model),
            None => "http:?".to_string(),
        },
    }
}

/// Open (or start) the manifest for an out-dir, refusing config drift.
fn open_manifest(
    out_dir: &Path,
    config: &RunConfig,
    problems: &[Problem],
) -> Result<(RunManifest, PathBuf)> {
    let path = out_dir.join(MANIFEST_FILE);
    let ids = problems.iter().map(|p| p.id.clone()).collect();
    let manifest = RunManifest::open_or_create(&path, &config.hash()?, config.base_seed, ids)?;
    Ok((manifest, path))
}

fn print_schedule_summary(arm: &str, report: &ScheduleReport, extra: &str) {
    println!(
        "{arm}: {} completed, {} failed, {} left unclaimed{extra}",
        report.succeeded,
        report.failures.len(),
        report.remaining
    );
    for f in &report.failures {
        eprintln!("{arm}: item {} failed: {}", f.index, f.error);
    }
}

fn exit_code_for(report: &ScheduleReport) -> i32 {
    i32::from(!report.all_succeeded())
}

fn cmd_bin(args: BinArgs) -> Result<i32> {
    let config = args.config.load()?;
    let problems = load_problems(&args.problems)?;
    ensure_out_dir(&args.out_dir)?;
    let (mut manifest, manifest_path) = open_manifest(&args.out_dir, &config, &problems)?;

    let binned_path = args.out_dir.join("problems_binned.jsonl");
    let reports_path = args.out_dir.join("pass1_reports.jsonl");
    let done: BTreeSet<(String, u64)> = read_jsonl_or_empty::<Problem>(&binned_path)?
        .into_iter()
        .map(|p| (p.id, 0))
        .collect();
    let ids: Vec<String> = problems.iter().map(|p| p.id.clone()).collect();
    let items = pending_loop_items(&ids, 1, &done);

    let templates = config.templates()?;
    let generator = config.build_generator(&templates)?;
    let checker = config.answer_checker()?;
    let mut binned_writer = JsonlWriter::append_to(&binned_path)?;
    let mut report_writer = JsonlWriter::append_to(&reports_path)?;

    let report = schedule_loops(
        &items,
        config.in_flight,
        args.stop_after,
        |_, item| {
            let problem = &problems[item.problem_index];
            let pass1 = estimate_pass1(problem, generator.as_ref(), &checker, args.rollouts, config.base_seed)?;
            if !pass1.complete {
                return Err(VrError::Transport(format!(
                    "problem {}: only {}/{} rollouts completed; re-run to bin it",
                    problem.id, pass1.completed, pass1.requested
                )));
            }
            let estimate = pass1.estimate();
            let bin = bin_estimate(estimate)?;
            let mut updated = problem.clone();
            updated.bin = Some(bin);
            updated.pass1_estimate = Some(estimate);
            Ok((updated, pass1))
        },
        |_, (updated, pass1): (Problem, Pass1Report)| {
            binned_writer.append(&updated)?;
            report_writer.append(&pass1)?;
            manifest.mark_completed("bin", &updated.id, 0);
            Ok(())
        },
    )?;
    binned_writer.sync()?;
    report_writer.sync()?;
    manifest.save(&manifest_path)?;
    print_schedule_summary("bin", &report, &format!(" ({})", binned_path.display()));
    Ok(exit_code_for(&report))
}

fn cmd_dedup(args: DedupArgs) -> Result<i32> {
    let config = args.config.load()?;
    let train = load_problems(&args.train)?;
    let test = load_problems(&args.test)?;
    let train_ids: BTreeSet<&str> = train.iter().map(|p| p.id.as_str()).collect();
    if let Some(shared) = test.iter().find(|p| train_ids.contains(p.id.as_str())) {
        return Err(VrError::InvalidParameter(format!(
            "problem id {} appears in both the training and test sets",
            shared.id
        )));
    }
    ensure_out_dir(&args.out_dir)?;
    let (manifest, manifest_path) = open_manifest(&args.out_dir, &config, &test)?;

    let embedder = config.build_embedder()?;
    let mut embeddings = embed_problems(embedder.as_ref(), &test)?;
    embeddings.extend(embed_problems(embedder.as_ref(), &train)?);
    let report = dedup_test_set(&test, &train, &embeddings, args.threshold)?;

    let kept_path = args.out_dir.join("test_deduped.jsonl");
    write_dataset(&kept_path, "problems", &report.kept)?;
    let mut report_json = serde_json::to_string_pretty(&report)?;
    report_json.push('\n');
    write_atomic(&args.out_dir.join("dedup_report.json"), &report_json)?;
    manifest.save(&manifest_path)?;
    println!(
        "dedup: kept {} of {} test problems ({} removed at threshold {}; {})",
        report.kept.len(),
        test.len(),
        report.removed.len(),
        report.threshold,
        kept_path.display()
    );
    Ok(0)
}

fn cmd_run_vr(args: RunVrArgs) -> Result<i32> {
    let config = args.config.load()?;
    let problems = load_problems(&args.problems)?;
    ensure_out_dir(&args.out_dir)?;
    let (mut manifest, manifest_path) = open_manifest(&args.out_dir, &config, &problems)?;

    let traces_path = args.out_dir.join("traces.jsonl");
    // The trace file is the ground truth for what is done; the manifest is
    // healed from it on every open, so losing one never loses the other.
    let done = completed_loop_keys(&traces_path)?;
    for (problem_id, loop_id) in &done {
        manifest.mark_completed("run-vr", problem_id, *loop_id);
    }
    let ids: Vec<String> = problems.iter().map(|p| p.id.clone()).collect();
    let items = pending_loop_items(&ids, config.loops_per_problem, &done);

    let templates = config.templates()?;
    let generator = config.build_generator(&templates)?;
    let verifier = config.build_verifier(&templates)?;
    let checker = config.answer_checker()?;
    let loop_config = config.loop_config();
    let gen_tag = generator_tag(&config);
    let ver_tag = verifier.tag();

    let mut writer = JsonlWriter::append_to(&traces_path)?;
    let report = schedule_loops(
        &items,
        config.in_flight,
        args.stop_after,
        |_, item| {
            run_vr_loop(
                &problems[item.problem_index],
                generator.as_ref(),
                verifier.as_ref(),
                &checker,
                &loop_config,
                item.loop_id,
                config.base_seed,
            )
        },
        |_, trace: VRTrace| {
            writer.append(&trace)?;
            manifest.mark_completed("run-vr", &trace.problem_id, trace.loop_id);
            for usage in &trace.usage {
                let tag = if usage.role == ROLE_VERIFIER { &ver_tag } else { &gen_tag };
                manifest.add_usage(tag, usage);
            }
            Ok(())
        },
    )?;
    writer.sync()?;
    manifest.save(&manifest_path)?;
    print_schedule_summary("run-vr", &report, &format!(" ({})", traces_path.display()));
    Ok(exit_code_for(&report))
}

fn cmd_run_bon(args: RunBonArgs) -> Result<i32> {
    let config = args.config.load()?;
    if args.n < 1 {
        return Err(VrError::Config("--n must be >= 1".into()));
    }
    let problems = load_problems(&args.problems)?;
    ensure_out_dir(&args.out_dir)?;
    let (mut manifest, manifest_path) = open_manifest(&args.out_dir, &config, &problems)?;

    let arm = format!("run-bon-n{}", args.n);
    let bon_path = args.out_dir.join(format!("bon_n{}.jsonl", args.n));
    let done: BTreeSet<(String, u64)> = read_jsonl_or_empty::<BonRecord>(&bon_path)?
        .into_iter()
        .map(|r| (r.problem_id, r.run_id))
        .collect();
    let ids: Vec<String> = problems.iter().map(|p| p.id.clone()).collect();
    let items = pending_loop_items(&ids, config.loops_per_problem, &done);

    let templates = config.templates()?;
    let generator = config.build_generator(&templates)?;
    let verifier = config.build_verifier(&templates)?;
    let checker = config.answer_checker()?;
    let gen_tag = generator_tag(&config);
    let ver_tag = verifier.tag();

    let mut writer = JsonlWriter::append_to(&bon_path)?;
    let report = schedule_loops(
        &items,
        config.in_flight,
        args.stop_after,
        |_, item| {
            run_bon(
                &problems[item.problem_index],
                generator.as_ref(),
                verifier.as_ref(),
                &checker,
                args.n,
                config.verdict_mode,
                item.loop_id,
                config.base_seed,
            )
        },
        |_, record: BonRecord| {
            writer.append(&record)?;
            manifest.mark_completed(&arm, &record.problem_id, record.run_id);
            for usage in &record.usage {
                let tag = if usage.role == ROLE_GENERATOR { &gen_tag } else { &ver_tag };
                manifest.add_usage(tag, usage);
            }
            Ok(())
        },
    )?;
    writer.sync()?;
    manifest.save(&manifest_path)?;
    print_schedule_summary(&arm, &report, &format!(" ({})", bon_path.display()));
    Ok(exit_code_for(&report))
}

fn cmd_build_opd(args: BuildOpdArgs) -> Result<i32> {
    let config = args.config.load()?;
    let problems = load_problems(&args.problems)?;
    let traces = load_traces_deduped(&args.traces)?;
    if traces.is_empty() {
        return Err(VrError::EmptyInput(format!(
            "no traces in {}",
            args.traces.display()
        )));
    }
    ensure_out_dir(&args.out_dir)?;
    let (mut manifest, manifest_path) = open_manifest(&args.out_dir, &config, &problems)?;

    let by_id: BTreeMap<&str, &Problem> = problems.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut pairs = Vec::new();
    for trace in &traces {
        let problem = by_id.get(trace.problem_id.as_str()).ok_or_else(|| {
            VrError::InvalidParameter(format!(
                "trace {}/{} references a problem not in {}",
                trace.problem_id,
                trace.loop_id,
                args.problems.display()
            ))
        })?;
        pairs.extend(OpdPair::from_trace(problem, trace));
    }

    let templates = config.templates()?;
    let (student, teacher) = config.build_logprob_agents()?;
    let build = build_opd_records(
        student.as_ref(),
        teacher.as_ref(),
        &templates,
        &pairs,
        &config.stv,
        config.base_seed,
    )?;
    let verdicts = build_verdict_records(&problems, &traces, &templates)?;

    let opd_path = args.out_dir.join("opd.jsonl");
    export_opd_dataset(&build.records, &opd_path)?;
    export_verdict_dataset(&verdicts, &args.out_dir.join("verdict.jsonl"))?;
    write_dataset(&args.out_dir.join("opd_skips.jsonl"), "opd-skips", &build.skipped)?;
    let loss = stv_loss_report(&build.records, &verdicts, config.stv.lambda)?;
    let mut loss_json = serde_json::to_string_pretty(&loss)?;
    loss_json.push('\n');
    write_atomic(&args.out_dir.join("stv_loss.json"), &loss_json)?;

    manifest.teacher_mechanism = Some(teacher.mechanism().to_string());
    manifest.save(&manifest_path)?;
    println!(
        "build-opd: {} distillation records ({} skipped), {} verdict records, \
         objective {:.6} ({})",
        build.records.len(),
        build.skipped.len(),
        verdicts.len(),
        loss.total,
        opd_path.display()
    );
    Ok(0)
}

fn cmd_collect_vil(args: CollectVilArgs) -> Result<i32> {
    let config = args.config.load()?;
    let problems = load_problems(&args.problems)?;
    ensure_out_dir(&args.out_dir)?;
    let (mut manifest, manifest_path) = open_manifest(&args.out_dir, &config, &problems)?;

    let episodes_path = args.out_dir.join("episodes.jsonl");
    let discards_path = args.out_dir.join("discards.jsonl");
    // Discarded loops are not "done": a resume retries them, which is what
    // you want when the discard was a transient transport failure.
    let done: BTreeSet<(String, u64)> = read_jsonl_or_empty::<VilEpisode>(&episodes_path)?
        .into_iter()
        .map(|e| (e.problem_id, e.loop_id))
        .collect();
    let ids: Vec<String> = problems.iter().map(|p| p.id.clone()).collect();
    let items = pending_loop_items(&ids, config.loops_per_problem, &done);

    let templates = config.templates()?;
    let generator = config.build_generator(&templates)?;
    let verifier = config.build_verifier(&templates)?;
    let checker = config.answer_checker()?;
    let loop_config = config.loop_config();
    let gen_tag = generator_tag(&config);

    let mut episode_writer = JsonlWriter::append_to(&episodes_path)?;
    let mut discard_writer = JsonlWriter::append_to(&discards_path)?;
    let mut discarded = 0usize;
    let report = schedule_loops(
        &items,
        config.in_flight,
        args.stop_after,
        |_, item| {
            collect_vil_episode(
                &problems[item.problem_index],
                generator.as_ref(),
                verifier.as_ref(),
                &checker,
                &loop_config,
                &templates,
                item.loop_id,
                config.base_seed,
            )
        },
        |_, outcome: VilEpisodeOutcome| match outcome {
            VilEpisodeOutcome::Collected(episode) => {
                episode_writer.append(&*episode)?;
                manifest.mark_completed("collect-vil", &episode.problem_id, episode.loop_id);
                for turn in &episode.turns {
                    if let crate::vil::VilTurn::Generator {
                        prompt_tokens,
                        completion_tokens,
                        wall_time_ms,
                        ..
                    } = turn
                    {
                        manifest.add_usage(
                            &gen_tag,
                            &crate::types::CallUsage {
                                role: ROLE_GENERATOR.to_string(),
                                round: 0,
                                prompt_tokens: *prompt_tokens,
                                completion_tokens: *completion_tokens,
                                wall_time_ms: *wall_time_ms,
                            },
                        );
                    }
                }
                Ok(())
            }
            VilEpisodeOutcome::Discarded(discard) => {
                discarded += 1;
                discard_writer.append(&discard)?;
                Ok(())
            }
        },
    )?;
    episode_writer.sync()?;
    discard_writer.sync()?;
    manifest.save(&manifest_path)?;
    print_schedule_summary(
        "collect-vil",
        &report,
        &format!(", {} discarded ({})", discarded, episodes_path.display()),
    );
    Ok(exit_code_for(&report))
}

fn cmd_metrics(args: MetricsArgs) -> Result<i32> {
    let traces = load_traces_deduped(&args.traces)?;
    if traces.is_empty() {
        return Err(VrError::EmptyInput(format!(
            "no traces in {}",
            args.traces.display()
        )));
    }
    ensure_out_dir(&args.out_dir)?;
    let cap = args
        .max_budget
        .unwrap_or_else(|| traces.iter().map(|t| t.max_rounds).max().unwrap_or(0));

    let series = round_pass1_series(&traces, cap)?;
    write_atomic(&args.out_dir.join("round_pass1.csv"), &round_pass1_csv(&series))?;
    let frontier = precision_coverage(&traces, cap.max(1))?;
    write_atomic(&args.out_dir.join("frontier.csv"), &frontier_csv(&frontier))?;

    let mut written = vec!["round_pass1.csv".to_string(), "frontier.csv".to_string()];
    match score_accuracy_series(&traces) {
        Ok(series) => {
            write_atomic(
                &args.out_dir.join("score_accuracy.csv"),
                &score_accuracy_csv(&series.points),
            )?;
            written.push("score_accuracy.csv".to_string());
        }
        Err(VrError::EmptyInput(_)) => {
            println!("metrics: traces carry no verifier scores; skipping score_accuracy.csv");
        }
        Err(e) => return Err(e),
    }

    if !args.bon.is_empty() {
        let mut by_n: BTreeMap<u32, Vec<BonRecord>> = BTreeMap::new();
        for path in &args.bon {
            let records: Vec<BonRecord> = read_jsonl_or_empty(path)?;
            if records.is_empty() {
                return Err(VrError::EmptyInput(format!(
                    "no best-of-N records in {}",
                    path.display()
                )));
            }
            for r in records {
                by_n.entry(r.n_requested).or_default().push(r);
            }
        }
        let budgets: Vec<u32> = by_n.keys().map(|n| n - 1).collect();
        let rows = matched_compute_compare(&traces, &by_n, &budgets)?;
        write_atomic(
            &args.out_dir.join("matched_compute.csv"),
            &matched_compute_csv(&rows),
        )?;
        written.push("matched_compute.csv".to_string());
    }

    println!(
        "metrics: wrote {} under {} from {} traces (budget cap {})",
        written.join(", "),
        args.out_dir.display(),
        traces.len(),
        cap
    );
    Ok(0)
}
