use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::ArgMatches;

use passrank::aggregate::{
    self, fit_alpha, load_passage_scores, rerank, write_passage_scores, Normalization,
    PassageScoreRecord, RerankOptions, Strategy,
};
use passrank::bench::bench_inference;
use passrank::corpus::{
    export_training, group_run, load_corpus, load_qrels, load_queries, load_run,
    load_training_jsonl, make_folds, write_run, CorpusFormat, FoldRole, FoldSpec, Qrels, Query,
    RunEntry, TrainingFormat,
};
use passrank::eval::{
    compare_reports, cross_validate, evaluate_grouped, Gain, Metric, MetricReport,
};
use passrank::index::{retrieve, retrieve_all, InvertedIndex, RetrievalParams};
use passrank::label::{
    enforce_split_hygiene, label_passages, passages_by_doc, sample_negatives, LabeledPool,
    LabelingPolicy,
};
use passrank::passage::{chunk_corpus, load_passages, parse_policy, write_passages, Passage};
use passrank::scorer::stub::serve_stub;
use passrank::scorer::{ScoreInput, ScorerContext, ScorerSpec};
use passrank::scorer::{ScoreJob, ScorerPool};
use passrank::textproc::AnalyzerConfig;

use crate::manifest::{flag_values, Recorder};
use crate::{
    BenchArgs, ChunkArgs, Cli, Command, CompareArgs, EvaluateArgs, FoldsArgs, IndexBuildArgs,
    IndexCommand, LabelArgs, ModelArgs, RerankArgs, RetrieveArgs, SampleArgs, ScoreArgs,
    ScorerArgs, StubArgs,
};

pub fn run(cli: Cli, root: &clap::Command, matches: &ArgMatches, argv: Vec<String>) -> Result<()> {
    let mut name = Vec::new();
    let mut sub = matches;
    let mut cmd = root;
    while let Some((n, m)) = sub.subcommand() {
        name.push(n);
        sub = m;
        cmd = cmd.find_subcommand(n).expect("matched subcommand exists");
    }
    let mut rec = Recorder::new(&name.join(" "), argv, flag_values(cmd, sub));
    rec.seed("seed", cli.seed);
    let seed = cli.seed;
    match cli.command {
        Command::Index(IndexCommand::Build(a)) => index_build(a, &mut rec),
        Command::Retrieve(a) => retrieve_cmd(a, &mut rec),
        Command::Chunk(a) => chunk(a, seed, &mut rec),
        Command::Label(a) => label(a, &mut rec),
        Command::Sample(a) => sample(a, seed, &mut rec),
        Command::Score(a) => score(a, &mut rec),
        Command::Rerank(a) => rerank_cmd(a, &mut rec),
        Command::Evaluate(a) => evaluate_cmd(a, &mut rec),
        Command::Compare(a) => compare(a),
        Command::Folds(a) => folds(a, seed, &mut rec),
        Command::Bench(a) => bench(a, &mut rec),
        Command::StubScorer(a) => stub(a),
    }
}

fn index_build(a: IndexBuildArgs, rec: &mut Recorder) -> Result<()> {
    rec.input("corpus", &a.corpus)?;
    let format: CorpusFormat = a.format.parse().map_err(|e: String| anyhow!(e))?;
    let corpus = load_corpus(&a.corpus, format)?;
    let config = AnalyzerConfig {
        remove_stopwords: a.stopwords,
        stem: a.stem,
    };
    let index = InvertedIndex::build_with(corpus.docs(), config);
    index.save(&a.out)?;
    rec.write(&a.out)?;
    eprintln!(
        "indexed {} documents, {} terms, {} tokens",
        index.doc_count(),
        index.num_terms(),
        index.collection_length()
    );
    Ok(())
}

fn retrieval_params(m: &ModelArgs) -> Result<RetrievalParams> {
    let params = match m.model.as_str() {
        "bm25" => RetrievalParams::bm25(m.k1, m.b, m.top_k),
        _ => RetrievalParams::ql(m.mu, m.top_k),
    };
    params.validate()?;
    Ok(params)
}

fn retrieve_cmd(a: RetrieveArgs, rec: &mut Recorder) -> Result<()> {
    rec.input("index", &a.index)?;
    rec.input("queries", &a.queries)?;
    let params = retrieval_params(&a.model)?;
    let index = InvertedIndex::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let mut run = retrieve_all(&queries, &index, &params)?;
    if let Some(tag) = &a.tag {
        for e in &mut run {
            e.tag.clone_from(tag);
        }
    }
    let skipped = queries.len() - group_run(&run).len();
    if skipped > 0 {
        eprintln!("{skipped} queries had no indexable terms and retrieved nothing");
    }
    write_run(&run, &a.run_out)?;
    rec.write(&a.run_out)?;
    Ok(())
}

fn chunk(a: ChunkArgs, seed: u64, rec: &mut Recorder) -> Result<()> {
    rec.input("corpus", &a.corpus)?;
    let policy = parse_policy(&a.policy, seed)?;
    let format: CorpusFormat = a.format.parse().map_err(|e: String| anyhow!(e))?;
    let corpus = load_corpus(&a.corpus, format)?;
    let passages = chunk_corpus(corpus.docs(), &policy)?;
    write_passages(&passages, &a.out)?;
    rec.write(&a.out)?;
    eprintln!(
        "{} passages from {} documents",
        passages.len(),
        corpus.len()
    );
    Ok(())
}

fn connect_pool(s: &ScorerArgs, rec: &mut Recorder) -> Result<Option<ScorerPool>> {
    let Some(text) = &s.scorer else {
        return Ok(None);
    };
    let spec: ScorerSpec = text.parse()?;
    let mut ctx = ScorerContext {
        index: None,
        timeout: Some(Duration::from_secs(s.timeout_secs)),
    };
    match &spec {
        ScorerSpec::Lexical => {
            let path = s
                .index
                .as_ref()
                .ok_or_else(|| anyhow!("the lexical scorer needs --index"))?;
            rec.input("scorer index", path)?;
            ctx.index = Some(Arc::new(InvertedIndex::load(path)?));
        }
        ScorerSpec::Oracle(path) => rec.input("oracle passage qrels", path)?,
        _ => {}
    }
    Ok(Some(ScorerPool::connect(&spec, &ctx, s.scorer_pool)?))
}

fn load_fold_round(
    folds: &Option<std::path::PathBuf>,
    round: Option<usize>,
    rec: &mut Recorder,
) -> Result<Option<(FoldSpec, usize)>> {
    match (folds, round) {
        (Some(path), Some(round)) => {
            rec.input("folds", path)?;
            let spec = FoldSpec::load(path)?;
            if round >= spec.rounds.len() {
                bail!(
                    "round {round} does not exist; the fold file has {} rounds",
                    spec.rounds.len()
                );
            }
            Ok(Some((spec, round)))
        }
        _ => Ok(None),
    }
}

fn queries_by_id(queries: Vec<Query>) -> HashMap<String, Query> {
    queries.into_iter().map(|q| (q.id.clone(), q)).collect()
}

fn label(a: LabelArgs, rec: &mut Recorder) -> Result<()> {
    for (role, path) in [
        ("run", &a.run),
        ("queries", &a.queries),
        ("qrels", &a.qrels),
        ("passages", &a.passages),
    ] {
        rec.input(role, path)?;
    }
    let policy = match a.policy.as_str() {
        "doc-transfer" => LabelingPolicy::DocTransfer,
        _ => LabelingPolicy::Teacher { tau: a.tau },
    };
    let fold_round = load_fold_round(&a.folds, a.round, rec)?;
    let mut queries = load_queries(&a.queries)?;
    let mut run = load_run(&a.run)?;
    if let Some((spec, round)) = &fold_round {
        let test = spec.queries_with_role(*round, FoldRole::Test);
        let before = queries.len();
        queries.retain(|q| !test.contains(q.id.as_str()));
        run.retain(|e| !test.contains(e.query_id.as_str()));
        eprintln!(
            "left out {} test-fold queries of round {round}",
            before - queries.len()
        );
    }
    let qrels = load_qrels(&a.qrels)?.qrels;
    let passages = passages_by_doc(load_passages(&a.passages)?);
    let mut pool = connect_pool(&a.scorer, rec)?;
    let labeled = label_passages(&queries, &run, &passages, &qrels, policy, pool.as_mut())?;
    let instances = labeled.instances();
    if let Some((spec, round)) = &fold_round {
        let report = enforce_split_hygiene(spec, *round, &instances)?;
        eprintln!("split hygiene: {}", serde_json::to_string(&report)?);
    }
    export_training(&instances, &a.out, TrainingFormat::Jsonl)?;
    rec.write(&a.out)?;
    eprintln!("{}", serde_json::to_string(&labeled.stats)?);
    Ok(())
}

fn sample(a: SampleArgs, seed: u64, rec: &mut Recorder) -> Result<()> {
    rec.input("pool", &a.pool)?;
    let format: TrainingFormat = a.format.parse().map_err(|e: String| anyhow!(e))?;
    let fold_round = load_fold_round(&a.folds, a.round, rec)?;
    let pool = LabeledPool::from_instances(load_training_jsonl(&a.pool)?);
    let set = sample_negatives(&pool, seed);
    if let Some((spec, round)) = &fold_round {
        let report = enforce_split_hygiene(spec, *round, &set.instances)?;
        eprintln!("split hygiene: {}", serde_json::to_string(&report)?);
    }
    let summary = export_training(&set.instances, &a.out, format)?;
    rec.write(&a.out)?;
    for (qid, missing) in &set.shortfalls {
        eprintln!("query {qid}: {missing} fewer negatives than positives");
    }
    if !set.excluded_queries.is_empty() {
        eprintln!(
            "{} queries without positives were dropped",
            set.excluded_queries.len()
        );
    }
    eprintln!(
        "wrote {} instances ({} sanitized)",
        summary.written, summary.sanitized
    );
    Ok(())
}

fn score_jobs<'a>(
    run: &'a [RunEntry],
    queries: &'a HashMap<String, Query>,
    passages: &'a HashMap<String, Vec<Passage>>,
) -> Result<Vec<ScoreJob<'a>>> {
    run.iter()
        .map(|e| {
            let query = queries
                .get(&e.query_id)
                .ok_or_else(|| anyhow!("run mentions query {:?} which has no text", e.query_id))?;
            let passages = passages
                .get(&e.doc_id)
                .map(|ps| {
                    ps.iter()
                        .map(|p| ScoreInput {
                            doc_id: &p.doc_id,
                            passage_index: p.index,
                            text: &p.text,
                        })
                        .collect()
                })
                .unwrap_or_default();
            Ok(ScoreJob { query, passages })
        })
        .collect()
}

fn score(a: ScoreArgs, rec: &mut Recorder) -> Result<()> {
    for (role, path) in [
        ("run", &a.run),
        ("queries", &a.queries),
        ("passages", &a.passages),
    ] {
        rec.input(role, path)?;
    }
    let mut pool = connect_pool(&a.scorer, rec)?.ok_or_else(|| anyhow!("score needs --scorer"))?;
    let queries = queries_by_id(load_queries(&a.queries)?);
    let passages = passages_by_doc(load_passages(&a.passages)?);
    let run = load_run(&a.run)?;
    let jobs = score_jobs(&run, &queries, &passages)?;
    let scores = pool.score_jobs(&jobs)?;
    let mut records = Vec::new();
    for (job, scores) in jobs.iter().zip(scores) {
        for (p, score) in job.passages.iter().zip(scores) {
            records.push(PassageScoreRecord {
                query_id: job.query.id.clone(),
                doc_id: p.doc_id.to_string(),
                passage_index: p.passage_index,
                score,
            });
        }
    }
    write_passage_scores(&records, &a.out)?;
    rec.write(&a.out)?;
    eprintln!("scored {} passages", records.len());
    Ok(())
}

fn strategy_of(agg: &str, k: usize, alpha: f64) -> Result<Strategy> {
    let s = match agg {
        "interp" => Strategy::InterpTopK { k, alpha },
        other => other.parse()?,
    };
    s.validate()?;
    Ok(s)
}

fn report_line(run: &[RunEntry], qrels: &Qrels, label: &str) -> Result<String> {
    let grouped = group_run(run);
    let map = evaluate_grouped(&grouped, qrels, Metric::AveragePrecision, None)?.mean;
    let ndcg = evaluate_grouped(&grouped, qrels, Metric::NdcgAt(20, Gain::Exponential), None)?.mean;
    Ok(format!("{label:<8}\tmap {map:.4}\tndcg_cut_20 {ndcg:.4}"))
}

fn rerank_cmd(a: RerankArgs, rec: &mut Recorder) -> Result<()> {
    rec.input("run", &a.run)?;
    rec.input("passage scores", &a.passage_scores)?;
    let normalization: Normalization = a.normalize.parse()?;
    let first_stage = load_run(&a.run)?;
    let scores = load_passage_scores(&a.passage_scores)?;
    let qrels = match &a.qrels {
        Some(path) => {
            rec.input("qrels", path)?;
            Some(load_qrels(path)?.qrels)
        }
        None => None,
    };
    let fold_round = load_fold_round(&a.folds, a.round, rec)?;

    let alpha = if a.agg != "interp" {
        0.0
    } else if a.alpha == "auto" {
        let (Some(qrels), Some((spec, round))) = (&qrels, &fold_round) else {
            bail!("--alpha auto needs --qrels, --folds and --round to fit on validation queries");
        };
        let validation = spec.queries_with_role(*round, FoldRole::Validation);
        let val_run: Vec<RunEntry> = first_stage
            .iter()
            .filter(|e| validation.contains(e.query_id.as_str()))
            .cloned()
            .collect();
        let alpha = fit_alpha(&val_run, &scores, qrels, a.k, normalization)?;
        eprintln!(
            "fitted alpha = {alpha:.1} on {} validation queries",
            group_run(&val_run).len()
        );
        alpha
    } else {
        a.alpha
            .parse::<f64>()
            .with_context(|| format!("--alpha must be a number or auto, got {:?}", a.alpha))?
    };
    let strategy = strategy_of(&a.agg, a.k, alpha)?;
    let options = RerankOptions {
        strategy,
        normalization,
    };
    let tag = a
        .tag
        .clone()
        .unwrap_or_else(|| format!("passrank-{}", strategy.name()));
    let reranked = rerank(&first_stage, &scores, options, &tag)?;
    write_run(&reranked, &a.out)?;
    rec.write(&a.out)?;

    if let Some(qrels) = &qrels {
        println!("{}", report_line(&first_stage, qrels, "first")?);
        for s in Strategy::SIMPLE {
            let run = rerank(
                &first_stage,
                &scores,
                RerankOptions {
                    strategy: s,
                    normalization,
                },
                "r",
            )?;
            println!("{}", report_line(&run, qrels, s.name())?);
        }
        if matches!(strategy, Strategy::InterpTopK { .. }) {
            println!("{}", report_line(&reranked, qrels, "interp")?);
        }
    }
    Ok(())
}

fn write_per_query(reports: &[MetricReport], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    let header: Vec<String> = reports.iter().map(|r| r.metric.to_string()).collect();
    writeln!(out, "query_id,{}", header.join(","))?;
    let ids: BTreeSet<&String> = reports.iter().flat_map(|r| r.per_query.keys()).collect();
    for id in ids {
        let values: Vec<String> = reports
            .iter()
            .map(|r| {
                r.per_query
                    .get(id)
                    .map_or(String::new(), |v| format!("{v:.6}"))
            })
            .collect();
        writeln!(out, "{id},{}", values.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, rec: &mut Recorder) -> Result<()> {
    rec.input("qrels", &a.qrels)?;
    let gain: Gain = a.gain.parse()?;
    let metrics = Metric::parse_list(&a.metrics, gain)?;
    let loaded = load_qrels(&a.qrels)?;
    if loaded.overwrites > 0 {
        eprintln!(
            "qrels: {} duplicate judgments, the last one kept",
            loaded.overwrites
        );
    }
    let reports = if let Some(run_path) = &a.run {
        rec.input("run", run_path)?;
        let grouped = group_run(&load_run(run_path)?);
        metrics
            .iter()
            .map(|&m| evaluate_grouped(&grouped, &loaded.qrels, m, None))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let folds_path = a
            .folds
            .as_ref()
            .expect("clap requires --folds with --fold-run");
        rec.input("folds", folds_path)?;
        let spec = FoldSpec::load(folds_path)?;
        let mut runs = BTreeMap::new();
        for (round, path) in a.fold_run.iter().enumerate() {
            rec.input(&format!("run round {round}"), path)?;
            runs.insert(round, load_run(path)?);
        }
        cross_validate(&spec, &runs, &loaded.qrels, &metrics)?
    };
    for r in &reports {
        println!("{}\tall\t{:.4}", r.metric, r.mean);
    }
    if let Some(first) = reports.first() {
        println!("num_q\tall\t{}", first.per_query.len());
        if !first.excluded.is_empty() {
            eprintln!(
                "{} run queries without relevant documents were left out",
                first.excluded.len()
            );
        }
    }
    if let Some(path) = &a.per_query {
        write_per_query(&reports, path)?;
        rec.write(path)?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let gain: Gain = a.gain.parse()?;
    let metric = Metric::parse(&a.metric, gain)?;
    let qrels = load_qrels(&a.qrels)?.qrels;
    let ra = evaluate_grouped(&group_run(&load_run(&a.run_a)?), &qrels, metric, None)?;
    let rb = evaluate_grouped(&group_run(&load_run(&a.run_b)?), &qrels, metric, None)?;
    let result = compare_reports(&ra, &rb, a.bonferroni, a.alpha)?;
    let out = serde_json::json!({
        "metric": metric.to_string(),
        "mean_a": ra.mean,
        "mean_b": rb.mean,
        "t_statistic": result.t_statistic,
        "p_value": result.p_value,
        "corrected_p": result.corrected_p,
        "n_pairs": result.n_pairs,
        "alpha": result.alpha,
        "significant": result.significant(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn folds(a: FoldsArgs, seed: u64, rec: &mut Recorder) -> Result<()> {
    rec.input("queries", &a.queries)?;
    let ids: Vec<String> = load_queries(&a.queries)?
        .into_iter()
        .map(|q| q.id)
        .collect();
    let spec = make_folds(&ids, a.k, seed)?;
    fs::write(&a.out, spec.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    rec.write(&a.out)?;
    Ok(())
}

fn bench(a: BenchArgs, rec: &mut Recorder) -> Result<()> {
    rec.input("queries", &a.queries)?;
    rec.input("passages", &a.passages)?;
    let index_path = a
        .scorer
        .index
        .clone()
        .ok_or_else(|| anyhow!("bench needs --index for first-stage retrieval"))?;
    rec.input("index", &index_path)?;
    let params = retrieval_params(&a.model)?;
    let strategy = strategy_of(&a.agg, a.k, a.alpha)?;
    let index = InvertedIndex::load(&index_path)?;
    let queries = load_queries(&a.queries)?;
    let passages = passages_by_doc(load_passages(&a.passages)?);
    let mut pool = connect_pool(&a.scorer, rec)?.ok_or_else(|| anyhow!("bench needs --scorer"))?;

    let stats = bench_inference(
        &queries,
        |q| -> Result<(Vec<RunEntry>, Vec<f64>)> {
            let run = match retrieve(q, &index, &params) {
                Err(passrank::index::IndexError::EmptyQuery) => Vec::new(),
                other => other?,
            };
            let norm = aggregate::normalize_scores(
                &run.iter().map(|e| e.score).collect::<Vec<_>>(),
                Normalization::MinMax,
            );
            Ok((run, norm))
        },
        |q, (run, norm)| {
            let jobs: Vec<ScoreJob<'_>> = run
                .iter()
                .map(|e| ScoreJob {
                    query: q,
                    passages: passages
                        .get(&e.doc_id)
                        .map(|ps| {
                            ps.iter()
                                .map(|p| ScoreInput {
                                    doc_id: &p.doc_id,
                                    passage_index: p.index,
                                    text: &p.text,
                                })
                                .collect()
                        })
                        .unwrap_or_default(),
                })
                .collect();
            let scores = pool.score_jobs(&jobs)?;
            let mut ranked: Vec<(f64, &str)> = Vec::with_capacity(run.len());
            for ((e, s), n) in run.iter().zip(&scores).zip(&norm) {
                if !s.is_empty() {
                    ranked.push((aggregate::aggregate(s, strategy, Some(*n))?, &e.doc_id));
                }
            }
            ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(y.1)));
            std::hint::black_box(&ranked);
            Ok(())
        },
    )?;
    if let Some(csv) = &a.csv {
        let file = fs::File::create(csv).with_context(|| format!("creating {}", csv.display()))?;
        stats.write_csv(BufWriter::new(file))?;
        rec.write(csv)?;
    }
    let summary = serde_json::json!({
        "queries": stats.per_query.len(),
        "mean_ms": stats.mean_ms,
        "median_ms": stats.median_ms,
        "stddev_ms": stats.stddev_ms,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn stub(a: StubArgs) -> Result<()> {
    match a.tcp {
        None => {
            let stdin = io::stdin();
            serve_stub(stdin.lock(), io::stdout().lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            for stream in listener.incoming() {
                let stream = stream?;
                thread::spawn(move || {
                    let reader = match stream.try_clone() {
                        Ok(s) => BufReader::new(s),
                        Err(e) => return eprintln!("stub-scorer: {e}"),
                    };
                    if let Err(e) = serve_stub(reader, stream) {
                        eprintln!("stub-scorer: {e}");
                    }
                });
            }
        }
    }
    Ok(())
}
