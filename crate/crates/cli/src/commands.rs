use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hybridq_core::bench::{
    gen_ground_truth, gen_queries, gen_queries_by_local_rate, gen_table, read_workload, write_workload, GroundTruth,
};
use hybridq_core::exec::{parse_query, Engine, EngineConfig};
use hybridq_core::harness::{execute_static, run_eval, run_static, run_throughput, EvalOptions};
use hybridq_core::plan::{generate_training_data, write_examples_csv, ConfigGrid, OptimizerModels, StaticConfig};
use hybridq_core::stats::StatsCatalog;
use hybridq_core::store::{load_table, read_fvecs, read_scalar_csv, Table, TableSchema, Tuple};

use crate::config::{BenchSpec, Config, Stratifier};
use crate::{BenchgenArgs, Cli, Command, EvalArgs, IndexCommand, IngestArgs, QueryArgs, StatsCommand, TrainCommand};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Ingest(a) => ingest(&cfg, a),
        Command::Stats(StatsCommand::Build { db, bins }) => {
            let mut e = open(&cfg, &db.db)?;
            if let Some(b) = bins {
                let mut c = e.config().clone();
                c.stats_bins = b;
                e.set_config(c);
            }
            e.build_stats()?;
            e.save(&db.db)?;
            println!("built statistics for {} scalar columns", e.table().schema().num_scalar_columns());
            Ok(())
        }
        Command::Index(IndexCommand::Build { db }) => {
            let mut e = open(&cfg, &db.db)?;
            e.build_indexes()?;
            e.save(&db.db)?;
            println!("built {} indexes over {} rows", e.indexes().len(), e.table().len());
            Ok(())
        }
        Command::Train(TrainCommand::Encoder { db, incremental }) => {
            let mut e = open(&cfg, &db.db)?;
            if incremental {
                match e.apply_pending_updates()? {
                    Some(_) => println!("fine-tuned encoder on pending rows"),
                    None => println!("no pending rows"),
                }
            } else {
                e.train_encoder(cfg.encoder.clone())?;
                println!("trained encoder on {} rows", e.table().len());
            }
            Ok(e.save(&db.db)?)
        }
        Command::Train(TrainCommand::Optimizer {
            db,
            queries,
            grid,
            examples,
        }) => train_optimizer(&cfg, &db.db, queries, grid.as_deref(), examples.as_deref()),
        Command::Benchgen(a) => benchgen(&cfg, cli.seed, a),
        Command::Query(a) => query(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
    }
}

/// Loads an engine directory, applying any engine overrides from the config.
fn open(cfg: &Config, dir: &Path) -> Result<Engine> {
    let mut e = Engine::load(dir).with_context(|| format!("opening engine at {}", dir.display()))?;
    if cfg.engine.is_some() || cfg.seed().is_some() {
        let c = cfg.engine_config(e.config());
        e.set_config(c);
    }
    Ok(e)
}

fn read_table(a: &IngestArgs) -> Result<Table> {
    if let Some(dir) = &a.table_dir {
        return Ok(load_table(dir)?);
    }
    let (Some(schema), Some(scalars)) = (&a.schema, &a.scalars) else {
        bail!("ingest needs --table-dir or --schema with --scalars");
    };
    let schema: TableSchema = serde_json::from_reader(BufReader::new(
        File::open(schema).with_context(|| format!("opening {}", schema.display()))?,
    ))?;
    let rows = read_scalar_csv(File::open(scalars)?, &schema)?;
    let mut columns = Vec::new();
    for col in &schema.vector_columns {
        let path = a
            .vector
            .iter()
            .find_map(|v| v.strip_prefix(&format!("{}=", col.name)))
            .ok_or_else(|| anyhow!("missing --vector {}=FILE", col.name))?;
        let vs = read_fvecs(BufReader::new(File::open(path).with_context(|| format!("opening {path}"))?))?;
        if vs.len() != rows.len() {
            bail!("{path} has {} vectors but the scalar file has {} rows", vs.len(), rows.len());
        }
        columns.push(vs);
    }
    for v in &a.vector {
        let name = v.split('=').next().unwrap_or_default();
        if schema.vector_column(name).is_err() {
            bail!("--vector {v}: no vector column `{name}` in the schema");
        }
    }
    let tuples = rows
        .into_iter()
        .enumerate()
        .map(|(r, (id, vals))| Tuple::new(id, columns.iter_mut().map(|c| std::mem::take(&mut c[r])).collect(), vals))
        .collect();
    let mut t = Table::new(schema)?;
    t.insert_batch(tuples)?;
    t.clear_pending_updates();
    Ok(t)
}

fn ingest(cfg: &Config, a: IngestArgs) -> Result<()> {
    let table = read_table(&a)?;
    let dir = &a.db.db;
    if a.append {
        let mut e = open(cfg, dir)?;
        if table.schema() != e.table().schema() {
            bail!("schema of the new rows differs from the engine's table");
        }
        let n = e.insert_batch(table.scan().collect())?;
        e.save(dir)?;
        println!("appended {n} rows ({} total, {} pending)", e.table().len(), e.table().pending_updates().len());
    } else {
        if dir.join("engine.json").exists() {
            bail!("{} already holds an engine; use --append", dir.display());
        }
        let rows = table.len();
        let e = Engine::new(table, cfg.engine_config(&EngineConfig::default()));
        e.save(dir)?;
        println!("ingested {rows} rows into {}", dir.display());
    }
    Ok(())
}

fn train_optimizer(
    cfg: &Config,
    dir: &Path,
    queries: usize,
    grid: Option<&Path>,
    examples_out: Option<&Path>,
) -> Result<()> {
    let e = open(cfg, dir)?;
    let mut opts = cfg.labels.clone();
    if let Some(g) = grid {
        let text = fs::read_to_string(g).with_context(|| format!("reading grid {}", g.display()))?;
        opts.grid = toml::from_str::<ConfigGrid>(&text).with_context(|| format!("parsing grid {}", g.display()))?;
    }
    let examples = generate_training_data(&e, queries, &opts, cfg.label_seed)?;
    if let Some(p) = examples_out {
        write_examples_csv(BufWriter::new(File::create(p)?), e.layout(), &examples)?;
    }
    let models = OptimizerModels::train(&examples, &cfg.model)?;
    let m = models.metrics().clone();
    let mut e = e;
    e.set_models(models)?;
    e.save(dir)?;
    println!(
        "trained optimizer on {} examples ({} held out): plan accuracy {:.3} (train {:.3}), mode accuracy {:.3}",
        m.train_examples, m.holdout_examples, m.plan_accuracy, m.plan_train_accuracy, m.mode_accuracy
    );
    println!(
        "parameter MAE (log2): k {:.3}, ef {:.3}, max_scan {:.3}",
        m.param_mae_log2[0], m.param_mae_log2[1], m.param_mae_log2[2]
    );
    Ok(())
}

fn benchgen(cfg: &Config, seed: Option<u64>, a: BenchgenArgs) -> Result<()> {
    let spec = BenchSpec::load(&a.spec, seed)?;
    fs::create_dir_all(&a.out)?;
    let mut engine = match (&spec.table, &a.db) {
        (Some(_), Some(_)) => bail!("the spec defines a table; drop --db or the [table] section"),
        (None, None) => bail!("the spec has no [table] section; pass --db"),
        (Some(t), None) => {
            let table = gen_table(t)?;
            hybridq_core::store::save_table(&table, &a.out.join("table"))?;
            println!("generated {} rows into {}", table.len(), a.out.join("table").display());
            Engine::new(table, cfg.engine_config(&EngineConfig::default()))
        }
        (None, Some(db)) => open(cfg, db)?,
    };
    let stats = match engine.stats() {
        Some(s) => s.clone(),
        None => StatsCatalog::build(engine.table(), spec.stats_bins)?,
    };
    let workload = match spec.stratify {
        Stratifier::Selectivity => gen_queries(engine.table(), &stats, &spec.workload)?,
        Stratifier::LocalRate => {
            if engine.indexes().is_empty() {
                engine.build_indexes()?;
            }
            let idx = engine.index_refs()?;
            gen_queries_by_local_rate(engine.table(), &stats, &idx, spec.probe_k, &spec.workload)?
        }
    };
    let gt = gen_ground_truth(engine.table(), &workload.queries)?;
    write_workload(&a.out.join("workload.jsonl"), &workload)?;
    gt.write_csv(BufWriter::new(File::create(a.out.join("ground_truth.csv"))?))?;
    let counts = workload.stratum_counts(spec.workload.strata);
    println!(
        "wrote {} queries over {} non-empty strata (max {} per stratum) to {}",
        workload.len(),
        counts.iter().filter(|&&c| c > 0).count(),
        counts.iter().max().copied().unwrap_or(0),
        a.out.display()
    );
    Ok(())
}

fn query(cfg: &Config, a: QueryArgs) -> Result<()> {
    let e = open(cfg, &a.db.db)?;
    let text = if a.sql == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        s
    } else {
        a.sql
    };
    let parsed = parse_query(&text)?;
    let q = parsed.to_hybrid(e.table().schema())?;
    let rs = match &a.plan {
        Some(p) => execute_static(&e, &q, &p.parse::<StaticConfig>()?)?,
        None => e.execute(&q)?,
    };
    let mut out = io::stdout().lock();
    if a.explain {
        writeln!(out, "# plan: {}", rs.plan)?;
        if let Some(p) = &rs.params {
            for (i, c) in p.columns.iter().enumerate() {
                writeln!(
                    out,
                    "# column {i}: k={} ef_search={} iterative_scan={} max_scan_tuples={}",
                    c.k,
                    c.ef_search,
                    c.iterative_scan.as_str(),
                    c.max_scan_tuples
                )?;
            }
        }
        writeln!(
            out,
            "# rows_scanned={} converged={} elapsed_us={}",
            rs.rows_scanned,
            rs.converged,
            (rs.timings.planning + rs.timings.execution + rs.timings.merge).as_micros()
        )?;
    }
    writeln!(out, "id,score")?;
    for r in &rs.rows {
        writeln!(out, "{},{}", r.id, r.score)?;
    }
    Ok(())
}

fn eval(cfg: &Config, a: EvalArgs) -> Result<()> {
    let e = open(cfg, &a.db.db)?;
    let workload = read_workload(&a.workload).with_context(|| format!("reading {}", a.workload.display()))?;
    let gt = match &a.ground_truth {
        Some(p) => GroundTruth::read_csv(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))?,
        None => gen_ground_truth(e.table(), &workload.queries)?,
    };
    let opts = EvalOptions {
        repeats: a.repeats,
        warmup: !a.no_warmup,
    };
    let report = match &a.plan {
        Some(p) => run_static(&e, &workload.queries, &gt, &p.parse()?, &opts)?,
        None => {
            let baseline = a.baseline.as_deref().map(str::parse::<StaticConfig>).transpose()?;
            run_eval(&e, &workload.queries, &gt, baseline.as_ref(), &opts)?
        }
    };
    match &a.report {
        Some(p) => report.write_csv(BufWriter::new(File::create(p)?))?,
        None => report.write_csv(io::stdout().lock())?,
    }
    print!("{}", report.summary());
    if let Some(t) = a.throughput_threads {
        let qps = match &a.plan {
            Some(_) => bail!("--throughput-threads measures the learned planner; drop --plan"),
            None => run_throughput(&e, &workload.queries, t)?,
        };
        println!("throughput ({t} threads): {qps:.1} qps");
    }
    Ok(())
}
