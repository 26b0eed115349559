use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qb_core::answer_map::{map_corpus, MappingRules, Pool, TitleSet};
use qb_core::buzzer::{tune_threshold, BuzzerModel, MlpBuzzer};
use qb_core::corpus::{
    dedup_questions, filter_gameplay, load_gameplay, load_questions, write_gameplay, write_questions, CorpusStore, Fold,
    GameplayRecord, QuestionRecord,
};
use qb_core::eval::{
    buzzer_confusion, decision_accuracy, expected_wins, write_accuracy_table, write_buzzer_table, BuzzerReport,
    EvalReport, EwVariant, WinProbCurve, PUBLISHED_CUBIC,
};
use qb_core::folds::{assign_all, FoldConfig};
use qb_core::guesser::{
    guess_stream, question_examples, read_streams, sentence_examples, write_streams, DanModel, GuessStream,
    GuesserModel, LinearModel, TfidfIndex,
};
use qb_core::session::{JudgeConfig, MachineAgent, SessionQuestion};
use qb_core::simulate::{simulate_machine_match, simulate_records, MachineSide};
use qb_cli::config::PipelineConfig;
use qb_cli::server::{self, AppState, ServiceConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "qb", version, about = "Incremental quizbowl QA pipeline")]
struct Cli {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalise tournaments, drop duplicate questions and filter gameplay.
    Ingest {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "gameplay_out")]
        gameplay: Option<PathBuf>,
        #[arg(long)]
        gameplay_out: Option<PathBuf>,
    },
    /// Map raw answer strings onto encyclopedia titles.
    MapAnswers {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        titles: PathBuf,
        #[arg(long)]
        redirects: Option<PathBuf>,
        #[arg(long)]
        train_rules: Option<PathBuf>,
        #[arg(long)]
        test_rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Assign train/dev/test folds.
    AssignFolds {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        gameplay: Option<PathBuf>,
        /// Fold configuration; overrides the `folds` section of --config.
        #[arg(long)]
        fold_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a guesser on the guesstrain fold.
    TrainGuesser {
        #[arg(long, value_enum)]
        model: GuesserKind,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a guesser over every prefix of the selected questions.
    MakeStreams {
        #[arg(long)]
        guesser: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        /// Comma-separated fold names.
        #[arg(long, value_delimiter = ',', default_value = "buzztrain,buzzdev,buzztest")]
        folds: Vec<Fold>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        step: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a buzzer on guess streams.
    TrainBuzzer {
        #[arg(long, value_enum)]
        kind: BuzzerKind,
        #[arg(long)]
        streams: PathBuf,
        #[arg(long, value_enum, default_value = "empirical")]
        curve: CurveKind,
        /// Gameplay used to fit the empirical curve for threshold tuning.
        #[arg(long)]
        gameplay: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, expected wins and buzzer diagnostics.
    Evaluate {
        #[arg(long)]
        streams: PathBuf,
        #[arg(long, value_enum, default_value = "empirical")]
        curve: CurveKind,
        #[arg(long)]
        gameplay: Option<PathBuf>,
        /// Questions, for start-of-question accuracy and gameplay lookup.
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        buzzer: Option<PathBuf>,
        /// Label for the report rows.
        #[arg(long, default_value = "guesser")]
        model: String,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Simulate the machine against recorded human play or another machine.
    Simulate {
        #[arg(long)]
        streams: PathBuf,
        #[arg(long)]
        buzzer: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, required_unless_present = "opponent_streams")]
        gameplay: Option<PathBuf>,
        #[arg(long, requires = "opponent_buzzer")]
        opponent_streams: Option<PathBuf>,
        #[arg(long)]
        opponent_buzzer: Option<PathBuf>,
        #[arg(long, default_value = "match_report.json")]
        out: PathBuf,
    },
    /// Host live matches over HTTP and WebSocket.
    Serve {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, requires = "buzzer")]
        guesser: Option<PathBuf>,
        #[arg(long, requires = "guesser")]
        buzzer: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "buzztest")]
        folds: Vec<Fold>,
        #[arg(long)]
        judge: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = server::DEFAULT_TICK_MS)]
        tick_ms: u64,
        #[arg(long, default_value_t = 20)]
        packet_size: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GuesserKind {
    Ir,
    Linear,
    Dan,
}

#[derive(Clone, Copy, ValueEnum)]
enum BuzzerKind {
    Mlp,
    Threshold,
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveKind {
    Empirical,
    Cubic,
}

fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Ingest {
            questions,
            out,
            gameplay,
            gameplay_out,
        } => ingest(&cfg, &questions, &out, gameplay.as_deref().zip(gameplay_out.as_deref())),
        Command::MapAnswers {
            questions,
            titles,
            redirects,
            train_rules,
            test_rules,
            out,
            report,
        } => {
            let qs = load_questions(&questions)?;
            let (wiki, dangling) = TitleSet::load(&titles, redirects.as_deref())?;
            if dangling > 0 {
                tracing::warn!(dangling, "redirects pointing at unknown titles were ignored");
            }
            let rules = |p: Option<PathBuf>, pool| -> Result<MappingRules> {
                Ok(match p {
                    Some(p) => MappingRules::load(&p, pool)?,
                    None => MappingRules::empty(pool),
                })
            };
            let train = rules(train_rules, Pool::Train)?;
            let test = rules(test_rules, Pool::Test)?;
            let (mapped, rep) = map_corpus(qs, &wiki, &train, &test, |q| cfg.folds.pool(q));
            write_questions(&out, &mapped)?;
            print_json(&rep.by_method)?;
            if let Some(p) = report {
                write_json(&p, &rep)?;
            }
            Ok(())
        }
        Command::AssignFolds {
            questions,
            gameplay,
            fold_config,
            out,
        } => {
            let folds = match fold_config {
                Some(p) => FoldConfig::load(&p)?,
                None => cfg.folds.clone(),
            };
            let qs = load_questions(&questions)?;
            let records = match gameplay {
                Some(p) => load_gameplay(&p)?.records,
                None => Vec::new(),
            };
            let with_gameplay = CorpusStore::new(qs.clone(), records).questions_with_gameplay();
            let (assigned, stats) = assign_all(qs, &with_gameplay, &folds)?;
            write_questions(&out, &assigned)?;
            print_json(&stats)
        }
        Command::TrainGuesser { model, questions, out } => {
            let qs = load_questions(&questions)?;
            let train: Vec<&QuestionRecord> = qs.iter().filter(|q| q.fold == Fold::Guesstrain).collect();
            if train.is_empty() {
                bail!("no guesstrain questions in {}", questions.display());
            }
            let trained = match model {
                GuesserKind::Ir => GuesserModel::Ir(TfidfIndex::build(&question_examples(train), cfg.ir)?),
                GuesserKind::Linear => GuesserModel::Linear(LinearModel::train(&sentence_examples(train), cfg.linear)?),
                GuesserKind::Dan => {
                    let dev = sentence_examples(qs.iter().filter(|q| q.fold == Fold::Guessdev));
                    let dev = (!dev.is_empty()).then_some(dev.as_slice());
                    let (m, report) = DanModel::train(&sentence_examples(train), dev, cfg.dan.clone())?;
                    print_json(&report)?;
                    GuesserModel::Dan(m)
                }
            };
            trained.save(&out)?;
            eprintln!("wrote {} to {}", trained.kind(), out.display());
            Ok(())
        }
        Command::MakeStreams {
            guesser,
            questions,
            folds,
            k,
            step,
            out,
        } => {
            let model = GuesserModel::load(&guesser)?;
            let qs = load_questions(&questions)?;
            let wanted: HashSet<Fold> = folds.into_iter().collect();
            let streams = qs
                .iter()
                .filter(|q| wanted.contains(&q.fold) && q.page.is_some())
                .map(|q| guess_stream(&model, q, k, step))
                .collect::<qb_core::Result<Vec<_>>>()?;
            write_streams(&out, &streams)?;
            eprintln!("wrote {} streams to {}", streams.len(), out.display());
            Ok(())
        }
        Command::TrainBuzzer {
            kind,
            streams,
            curve,
            gameplay,
            out,
        } => {
            let streams = read_streams(&streams)?;
            let model = match kind {
                BuzzerKind::Mlp => BuzzerModel::Mlp(MlpBuzzer::train(&streams, cfg.buzzer.clone())?),
                BuzzerKind::Threshold => {
                    let records = match gameplay {
                        Some(p) => load_gameplay(&p)?.records,
                        None => Vec::new(),
                    };
                    let curve = build_curve(curve, &records);
                    let threshold = tune_threshold(&streams, &curve, EwVariant::Stable)?;
                    eprintln!("tuned threshold {threshold:.2}");
                    BuzzerModel::Threshold { threshold }
                }
            };
            model.save(&out)?;
            eprintln!("wrote {} to {}", model.kind(), out.display());
            Ok(())
        }
        Command::Evaluate {
            streams,
            curve,
            gameplay,
            questions,
            buzzer,
            model,
            bins,
            out_dir,
        } => evaluate(EvalArgs {
            cfg: &cfg,
            streams: &streams,
            curve,
            gameplay: gameplay.as_deref(),
            questions: questions.as_deref(),
            buzzer: buzzer.as_deref(),
            model: &model,
            bins,
            out_dir: &out_dir,
        }),
        Command::Simulate {
            streams,
            buzzer,
            questions,
            gameplay,
            opponent_streams,
            opponent_buzzer,
            out,
        } => {
            let streams = stream_map(read_streams(&streams)?);
            let buzzer = BuzzerModel::load(&buzzer)?;
            let qs = load_questions(&questions)?;
            if let (Some(os), Some(ob)) = (opponent_streams, opponent_buzzer) {
                let other_streams = stream_map(read_streams(&os)?);
                let other_buzzer = BuzzerModel::load(&ob)?;
                let mut packet: Vec<u64> = streams.keys().filter(|q| other_streams.contains_key(q)).copied().collect();
                packet.sort_unstable();
                let a = MachineSide {
                    name: "machine".into(),
                    streams: &streams,
                    buzzer: &buzzer,
                };
                let b = MachineSide {
                    name: "opponent".into(),
                    streams: &other_streams,
                    buzzer: &other_buzzer,
                };
                let m = simulate_machine_match(&a, &b, &packet, &cfg.rules, cfg.buzzer.seed)?;
                write_json(&out, &m)?;
                println!("machine {} opponent {} over {} questions", m.total_a, m.total_b, m.questions.len());
                return Ok(());
            }
            let gameplay = gameplay.context("--gameplay is required without an opponent")?;
            let store = CorpusStore::new(qs, load_gameplay(&gameplay)?.records);
            let pairs = record_pairs(&store, streams.keys().copied());
            let (report, skipped) = simulate_records(&streams, &buzzer, &pairs, &cfg.rules)?;
            if skipped > 0 {
                tracing::warn!(skipped, "records without a stream were skipped");
            }
            write_json(&out, &report)?;
            println!("pairs,mean_machine_points,win_rate");
            println!(
                "{},{:.2},{:.3}",
                report.summary.pairs, report.summary.mean_machine_points, report.summary.win_rate
            );
            Ok(())
        }
        Command::Serve {
            questions,
            guesser,
            buzzer,
            folds,
            judge,
            addr,
            tick_ms,
            packet_size,
            k,
        } => {
            let wanted: HashSet<Fold> = folds.into_iter().collect();
            let qs: Vec<SessionQuestion> = load_questions(&questions)?
                .iter()
                .filter(|q| wanted.contains(&q.fold))
                .filter_map(SessionQuestion::from_record)
                .collect();
            let agent = match (guesser, buzzer) {
                (Some(g), Some(b)) => Some(Arc::new(MachineAgent {
                    guesser: GuesserModel::load(&g)?,
                    buzzer: BuzzerModel::load(&b)?,
                    k,
                })),
                _ => None,
            };
            let judge = match judge {
                Some(p) => JudgeConfig::load(&p)?,
                None => JudgeConfig::default(),
            };
            let state = AppState::new(ServiceConfig {
                agent,
                judge: Arc::new(judge),
                questions: qs,
                packet_size,
                tick_ms,
                rules: cfg.rules,
            });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                axum::serve(listener, server::router(state)).await?;
                Ok(())
            })
        }
    }
}

fn ingest(cfg: &PipelineConfig, questions: &Path, out: &Path, gameplay: Option<(&Path, &Path)>) -> Result<()> {
    let mut qs = load_questions(questions)?;
    let before = qs.len();
    cfg.tournament_aliases.apply(&mut qs);
    let qs = dedup_questions(qs);
    write_questions(out, &qs)?;
    eprintln!("questions: {before} read, {} kept", qs.len());
    if let Some((src, dst)) = gameplay {
        let load = load_gameplay(src)?;
        let kept = filter_gameplay(&load.records);
        write_gameplay(dst, &kept)?;
        eprintln!(
            "gameplay: {} read, {} schema rejects, {} position rejects, {} kept",
            load.records.len(),
            load.rejected_schema,
            load.rejected_position,
            kept.len()
        );
    }
    Ok(())
}

struct EvalArgs<'a> {
    cfg: &'a PipelineConfig,
    streams: &'a Path,
    curve: CurveKind,
    gameplay: Option<&'a Path>,
    questions: Option<&'a Path>,
    buzzer: Option<&'a Path>,
    model: &'a str,
    bins: usize,
    out_dir: &'a Path,
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let streams = read_streams(a.streams)?;
    let qs = match a.questions {
        Some(p) => load_questions(p)?,
        None => Vec::new(),
    };
    let records = match a.gameplay {
        Some(p) => load_gameplay(p)?.records,
        None => Vec::new(),
    };
    let curve = build_curve(a.curve, &records);
    let first_sentence: Option<Vec<usize>> = (!qs.is_empty())
        .then(|| {
            let by_id: HashMap<u64, &QuestionRecord> = qs.iter().map(|q| (q.qanta_id, q)).collect();
            streams
                .iter()
                .map(|s| by_id.get(&s.qanta_id).map(|q| q.first_sentence_words()))
                .collect()
        })
        .flatten();
    if !qs.is_empty() && first_sentence.is_none() {
        tracing::warn!("some streams have no matching question; start accuracy omitted");
    }
    let report = EvalReport::compute(a.model, &streams, first_sentence.as_deref(), &curve, a.bins);
    std::fs::create_dir_all(a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_json(&a.out_dir.join("eval_report.json"), &report)?;
    write_accuracy_table(create(&a.out_dir.join("accuracy_table.csv"))?, std::slice::from_ref(&report))?;
    curve.write_csv(create(&a.out_dir.join("curve.csv"))?, 101)?;
    println!(
        "{}: end_acc {:.4} ew_stable {:.4} ew_first_correct {:.4}",
        report.model, report.end_accuracy, report.ew_stable, report.ew_first_correct
    );

    if let Some(bp) = a.buzzer {
        let buzzer = BuzzerModel::load(bp)?;
        let decisions = streams
            .iter()
            .map(|s| buzzer.decisions(s))
            .collect::<qb_core::Result<Vec<_>>>()?;
        let buzzes: Vec<Option<usize>> = decisions.iter().map(|d| d.iter().position(|&b| b).map(|i| i + 1)).collect();
        let score = if !records.is_empty() && !qs.is_empty() {
            let map = stream_map(streams.clone());
            let store = CorpusStore::new(qs, records);
            let pairs = record_pairs(&store, map.keys().copied());
            if pairs.is_empty() {
                None
            } else {
                Some(simulate_records(&map, &buzzer, &pairs, &a.cfg.rules)?.0.summary.mean_machine_points)
            }
        } else {
            None
        };
        let row = BuzzerReport {
            model: buzzer.kind().to_string(),
            accuracy: matches!(buzzer, BuzzerModel::Mlp(_)).then(|| decision_accuracy(&streams, &decisions)),
            ew: expected_wins(&streams, &buzzes, &curve, EwVariant::Stable),
            score,
        };
        write_buzzer_table(create(&a.out_dir.join("buzzer_table.csv"))?, std::slice::from_ref(&row))?;
        buzzer_confusion(&streams, &decisions, 10)?.write_csv(create(&a.out_dir.join("confusion.csv"))?)?;
        write_json(&a.out_dir.join("buzzer_report.json"), &row)?;
        println!("{}: ew {:.4}", row.model, row.ew);
    }
    Ok(())
}

/// The empirical curve needs gameplay; without it every position is
/// treated as uncontested (π = 1).
fn build_curve(kind: CurveKind, records: &[GameplayRecord]) -> WinProbCurve {
    match kind {
        CurveKind::Cubic => WinProbCurve::cubic(PUBLISHED_CUBIC),
        CurveKind::Empirical if records.is_empty() => {
            tracing::warn!("no gameplay given; empirical curve is constant 1");
            WinProbCurve::Empirical { steps: Vec::new() }
        }
        CurveKind::Empirical => WinProbCurve::from_gameplay(records),
    }
}

fn stream_map(streams: Vec<GuessStream>) -> HashMap<u64, GuessStream> {
    streams.into_iter().map(|s| (s.qanta_id, s)).collect()
}

/// Gameplay records of the given questions, in question order.
fn record_pairs(store: &CorpusStore, ids: impl Iterator<Item = u64>) -> Vec<(u64, GameplayRecord)> {
    let mut ids: Vec<u64> = ids.collect();
    ids.sort_unstable();
    ids.into_iter()
        .flat_map(|id| store.gameplay_for(id).iter().map(move |r| (id, r.clone())))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, value)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
