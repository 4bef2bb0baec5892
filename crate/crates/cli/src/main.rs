use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attrieval_core::attention::LayerSet;
use attrieval_core::backend::tokens_overlapping;
use attrieval_core::format::{read_trace_file, write_trace_file, Section, TraceFile};
use attrieval_core::pipeline::{retrieve_from_trace, run, Mode, PipelineConfig};
use attrieval_core::{
    make_synthetic_backend, GenerationBackend, ReplayBackend, SyntheticTraceSpec, TaskInput,
    TokenDistributionPair,
};
use attrieval_deduction::analysis::{heatmap_svg, ranking_svg, write_csv};
use attrieval_deduction::{
    export_heatmap_data, export_ranking_data, generate_dataset, measure_recall, read_jsonl,
    to_task, write_jsonl, BenchConfig, DeductionInstance, EvalMode, Filler, NamedSpan,
    RecallReport,
};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "attrieval",
    version,
    about = "Attention-guided fact retrieval for long-context reasoning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the retrieval pipeline for one task and print the result as JSON.
    Retrieve(RetrieveArgs),
    /// Fact scores, attention heatmaps and statement rankings.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Inspect or synthesize trace files.
    #[command(subcommand)]
    Trace(TraceCommand),
    /// Deduction benchmark generation and grading.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct RetrieveArgs {
    /// Task JSON file.
    #[arg(long)]
    task: PathBuf,
    /// Directory holding `<id>.cot.atrv`, optionally `<id>.short.atrv` and `<id>.answer.txt`.
    #[arg(long, conflicts_with = "synthetic")]
    trace_dir: Option<PathBuf>,
    /// Synthetic backend spec (JSON) instead of recorded traces.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pipeline config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "attrieval")]
    mode: Mode,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Fact score table for a recorded trace.
    Facts {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Trace holding short-prompt rows for KL token selection.
        #[arg(long)]
        short: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer attention share of each span, as CSV.
    Heatmap(SpanArgs),
    /// Per-layer rank of each span's most attended token, as CSV.
    Ranking(SpanArgs),
}

#[derive(Args)]
struct SpanArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Adds the task's gold facts and its whole context as spans.
    #[arg(long)]
    task: Option<PathBuf>,
    /// Named token span, `name=start..end`.
    #[arg(long = "span", value_parser = parse_span)]
    spans: Vec<NamedSpan>,
    /// Layers: `all`, `last-quarter`, `last:q` or a comma-separated list.
    #[arg(long, default_value = "all")]
    layers: LayerSet,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render an SVG plot to this path.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Print a trace file header and section sizes.
    Inspect { file: PathBuf },
    /// Write synthetic trace files for a task with attention planted on its gold facts.
    Synth {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        cot_tokens: usize,
        /// Attention mass per gold fact on the rows that carry it.
        #[arg(long, default_value_t = 0.3)]
        mass: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Answer text saved next to the traces.
        #[arg(long)]
        answer: Option<String>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate a dataset as JSON lines.
    Generate {
        /// Bench config (TOML); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        main_entities: Option<usize>,
        #[arg(long)]
        distractor_entities: Option<usize>,
        /// Comma-separated token targets.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long)]
        per_length: Option<usize>,
        #[arg(long)]
        filler: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grade responses (`{"id", "response"}` lines) against gold answers.
    Grade {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, default_value = "standard")]
        mode: EvalMode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fact recall of texts (`{"id", "text", "response"?}` lines).
    Recall {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        texts: PathBuf,
        #[arg(long, default_value = "standard")]
        mode: EvalMode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one task JSON per instance for `retrieve`.
    ExportTasks {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "standard")]
        mode: EvalMode,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_span(s: &str) -> Result<NamedSpan, String> {
    let (name, range) = s.split_once('=').ok_or("expected name=start..end")?;
    let (a, b) = range.split_once("..").ok_or("expected name=start..end")?;
    let start = a.trim().parse().map_err(|e| format!("{e}"))?;
    let end: usize = b.trim().parse().map_err(|e| format!("{e}"))?;
    if end <= start {
        return Err("span must be non-empty".into());
    }
    Ok(NamedSpan {
        name: name.to_string(),
        tokens: start..end,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f))
        .with_context(|| format!("parsing {}", path.display()))
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn emit_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PipelineConfig::from_toml(&text).with_context(|| format!("loading {}", p.display()))
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn trace_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{id}.cot.atrv")),
        dir.join(format!("{id}.short.atrv")),
        dir.join(format!("{id}.answer.txt")),
    )
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let task: TaskInput = read_json(&args.task)?;
    let config = load_config(args.config.as_deref())?;
    let mut backend: Box<dyn GenerationBackend> = match (&args.trace_dir, &args.synthetic) {
        (Some(dir), None) => {
            let (cot, short, answer) = trace_paths(dir, &task.id);
            let cot =
                read_trace_file(&cot).with_context(|| format!("reading {}", cot.display()))?;
            let short = short
                .exists()
                .then(|| read_trace_file(&short))
                .transpose()?;
            let answer = answer
                .exists()
                .then(|| std::fs::read_to_string(&answer))
                .transpose()?;
            Box::new(ReplayBackend::new(cot, short, answer))
        }
        (None, Some(spec)) => Box::new(make_synthetic_backend(
            read_json::<SyntheticTraceSpec>(spec)?,
            args.seed,
        )?),
        _ => bail!("pass either --trace-dir or --synthetic"),
    };
    let result = run(backend.as_mut(), &task, &config, args.mode)?;
    emit_json(&result, args.out.as_deref())
}

fn distributions(cot: &TraceFile, short: Option<&TraceFile>) -> Option<TokenDistributionPair> {
    let long = cot.long_logprobs.clone()?;
    let short = short?.short_logprobs.clone()?;
    Some(TokenDistributionPair {
        token_ids: cot.header.generated_tokens.iter().map(|t| t.id).collect(),
        long_logprobs: long,
        short_logprobs: short,
    })
}

fn task_spans(task: &TaskInput, file: &TraceFile) -> Vec<NamedSpan> {
    let tokens = &file.header.input_tokens;
    let mut spans = vec![NamedSpan {
        name: "context".into(),
        tokens: file.header.ctx_start..file.header.ctx_end,
    }];
    for (i, g) in task.gold_facts.iter().enumerate() {
        let r: Range<usize> = tokens_overlapping(tokens, g);
        if !r.is_empty() {
            spans.push(NamedSpan {
                name: format!("gold{i}"),
                tokens: r,
            });
        }
    }
    spans
}

fn cmd_analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Facts {
            task,
            trace,
            short,
            config,
            out,
        } => {
            let task: TaskInput = read_json(&task)?;
            let config = load_config(config.as_deref())?;
            let file = read_trace_file(&trace)?;
            let short = short.map(|p| read_trace_file(&p)).transpose()?;
            let pair = distributions(&file, short.as_ref());
            let tr = retrieve_from_trace(
                &file.to_trace()?,
                &task,
                &config.retrieval,
                file.header.num_model_layers,
                pair.as_ref(),
            )?;
            emit_json(
                &serde_json::json!({
                    "task_id": task.id,
                    "facts": tr.table.facts,
                    "sink_fallback": tr.table.sink_fallback,
                    "retrieved": tr.retrieved,
                    "token_subset": tr.token_subset,
                    "kl_scores": tr.kl_scores,
                    "degenerate_rows": tr.degenerate_rows,
                }),
                out.as_deref(),
            )
        }
        AnalyzeCommand::Heatmap(a) | AnalyzeCommand::Ranking(a)
            if a.spans.is_empty() && a.task.is_none() =>
        {
            bail!("give at least one --span or a --task")
        }
        AnalyzeCommand::Heatmap(a) => {
            let (trace, layers, spans) = span_inputs(&a)?;
            let rows = export_heatmap_data(&trace, &layers, &spans)?;
            write_csv(&rows, output(a.out.as_deref())?)?;
            if let Some(p) = &a.plot {
                std::fs::write(p, heatmap_svg(&rows))?;
            }
            Ok(())
        }
        AnalyzeCommand::Ranking(a) => {
            let (trace, layers, spans) = span_inputs(&a)?;
            let rows = export_ranking_data(&trace, &layers, &spans)?;
            write_csv(&rows, output(a.out.as_deref())?)?;
            if let Some(p) = &a.plot {
                std::fs::write(p, ranking_svg(&rows))?;
            }
            Ok(())
        }
    }
}

fn span_inputs(
    a: &SpanArgs,
) -> Result<(attrieval_core::AttentionTrace, Vec<usize>, Vec<NamedSpan>)> {
    let file = read_trace_file(&a.trace)?;
    let trace = file.to_trace()?;
    let layers = a
        .layers
        .resolve(&trace.layer_ids, file.header.num_model_layers)?;
    let mut spans = a.spans.clone();
    if let Some(t) = &a.task {
        spans.extend(task_spans(&read_json(t)?, &file));
    }
    Ok((trace, layers, spans))
}

fn cmd_trace(cmd: TraceCommand) -> Result<()> {
    match cmd {
        TraceCommand::Inspect { file } => {
            let bytes =
                std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let header = attrieval_core::format::read_header(&bytes)?;
            let sections: Vec<_> = header
                .sections
                .iter()
                .map(|s| serde_json::json!({"section": s.to_string(), "bytes": header.section_bytes(*s)}))
                .collect();
            let summary = serde_json::json!({
                "model_id": header.model_id,
                "N": header.num_input_tokens,
                "T": header.num_generated_tokens,
                "V": header.vocab_size,
                "num_model_layers": header.num_model_layers,
                "layer_ids": header.layer_ids,
                "mode": header.mode,
                "ctx_start": header.ctx_start,
                "ctx_end": header.ctx_end,
                "sections": sections,
                "file_bytes": bytes.len(),
            });
            emit_json(&summary, None)
        }
        TraceCommand::Synth {
            task,
            out_dir,
            cot_tokens,
            mass,
            seed,
            answer,
        } => {
            let task: TaskInput = read_json(&task)?;
            task.validate()?;
            let prompt = task.long_prompt();
            let mut spec =
                SyntheticTraceSpec::for_prompt(&prompt.text, &prompt.context, cot_tokens);
            // Each gold fact is carried by most, not all, rows so that it is not a sink.
            let rows: Vec<usize> = (0..cot_tokens).filter(|t| t % 4 != 3).collect();
            for g in &task.gold_facts {
                spec.plant_bytes(&prompt.text, g, mass, Some(rows.clone()));
            }
            spec.answer = answer.clone().unwrap_or_default();
            let mut backend = make_synthetic_backend(spec, seed)?;
            let cap =
                backend.generate_with_capture(&prompt.text, prompt.context.clone(), cot_tokens)?;
            let short = backend.force_score(&task.short_prompt().text, &cap.token_ids())?;
            let cot = TraceFile::from_trace(
                &cap.trace,
                cap.vocab_size,
                cap.num_model_layers,
                cap.long_logprobs,
                None,
            );
            let mut forced = cot.clone();
            forced.attention = None;
            forced.long_logprobs = None;
            forced.short_logprobs = Some(short);
            forced.sync_sections();
            std::fs::create_dir_all(&out_dir)?;
            let (cot_path, short_path, answer_path) = trace_paths(&out_dir, &task.id);
            write_trace_file(&cot_path, &cot)?;
            write_trace_file(&short_path, &forced)?;
            if let Some(a) = answer {
                std::fs::write(answer_path, a)?;
            }
            debug_assert_eq!(forced.header.sections, vec![Section::ShortLogprobs]);
            log::info!("wrote {} and {}", cot_path.display(), short_path.display());
            Ok(())
        }
    }
}

#[derive(Deserialize)]
struct ResponseLine {
    id: String,
    response: String,
}

#[derive(Deserialize)]
struct TextLine {
    id: String,
    text: String,
    #[serde(default)]
    response: Option<String>,
}

fn by_id(data: &[DeductionInstance], id: &str) -> Result<usize> {
    data.iter()
        .position(|d| d.id == id)
        .with_context(|| format!("no instance with id {id}"))
}

fn cmd_bench(cmd: BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Generate {
            config,
            seed,
            main_entities,
            distractor_entities,
            lengths,
            per_length,
            filler,
            out,
        } => {
            let mut cfg: BenchConfig = match config {
                Some(p) => toml::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("loading {}", p.display()))?,
                None => BenchConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.main_entities = main_entities.unwrap_or(cfg.main_entities);
            cfg.distractor_entities = distractor_entities.unwrap_or(cfg.distractor_entities);
            cfg.target_lengths = lengths.unwrap_or(cfg.target_lengths);
            cfg.instances_per_length = per_length.unwrap_or(cfg.instances_per_length);
            cfg.filler_path = filler.or(cfg.filler_path);
            let filler = match &cfg.filler_path {
                Some(p) => Filler::load(p)?,
                None => Filler::bundled(),
            };
            let data = generate_dataset(&cfg, &filler)?;
            let mut w = output(Some(&out))?;
            write_jsonl(&data, &mut w)?;
            w.flush()?;
            log::info!("wrote {} instances to {}", data.len(), out.display());
            Ok(())
        }
        BenchCommand::Grade {
            data,
            responses,
            mode,
            out,
        } => {
            let data: Vec<DeductionInstance> = read_lines(&data)?;
            let responses: Vec<ResponseLine> = read_lines(&responses)?;
            let mut graded = Vec::new();
            for r in &responses {
                let inst = &data[by_id(&data, &r.id)?];
                let gold = attrieval_deduction::task::gold_answer(inst, mode);
                let correct = attrieval_deduction::grade::answer_matches(gold as f64, &r.response);
                graded.push(serde_json::json!({"id": r.id, "target_tokens": inst.target_tokens, "gold": gold, "correct": correct}));
            }
            let correct = graded.iter().filter(|g| g["correct"] == true).count();
            let accuracy = if graded.is_empty() {
                0.0
            } else {
                correct as f64 / graded.len() as f64
            };
            emit_json(
                &serde_json::json!({"accuracy": accuracy, "graded": graded}),
                out.as_deref(),
            )
        }
        BenchCommand::Recall {
            data,
            texts,
            mode,
            out,
        } => {
            let data: Vec<DeductionInstance> = read_lines(&data)?;
            let texts: Vec<TextLine> = read_lines(&texts)?;
            let mut entries = Vec::new();
            for t in &texts {
                let inst = &data[by_id(&data, &t.id)?];
                let mut e = measure_recall(inst, &t.text);
                e.answer_correct = t.response.as_ref().map(|r| {
                    let gold = attrieval_deduction::task::gold_answer(inst, mode);
                    attrieval_deduction::grade::answer_matches(gold as f64, r)
                });
                entries.push(e);
            }
            emit_json(&RecallReport::new(entries), out.as_deref())
        }
        BenchCommand::ExportTasks {
            data,
            mode,
            out_dir,
        } => {
            let data: Vec<DeductionInstance> = read_lines(&data)?;
            std::fs::create_dir_all(&out_dir)?;
            for inst in &data {
                let path = out_dir.join(format!("{}.task.json", inst.id));
                std::fs::write(&path, serde_json::to_vec_pretty(&to_task(inst, mode))?)?;
            }
            log::info!("wrote {} tasks to {}", data.len(), out_dir.display());
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Analyze(c) => cmd_analyze(c),
        Command::Trace(c) => cmd_trace(c),
        Command::Bench(c) => cmd_bench(c),
    }
}
