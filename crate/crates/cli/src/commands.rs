use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use canvas_forge::catalog::{
    self, classify_license, normalize_license, weighted_alt_text_percentage, CatalogRecord, LicenseRate, Partitioner,
    Pool,
};
use canvas_forge::diffusion::scarcity::{run_sweep, SweepConfig};
use canvas_forge::diffusion::{
    caption_embedding, load_checkpoint, sample, save_checkpoint, train, CheckpointMeta, TrainConfig,
};
use canvas_forge::human_eval::{
    normal_parity_test, parity_test, preference_rate, read_ratings, summarize, tally_ratings, PreferenceTally,
    TiePolicy,
};
use canvas_forge::latent_cache::{precompute, LatentDims, LatentStore, RandomProjectionEncoder};
use canvas_forge::metrics::{self, load_features, save_features, FeatureSet, MetricResult};
use canvas_forge::planner::{
    critical_size, cumulative_speedup, fit_stage_budgets, plan_cost, CapacityQuery, CostTableRow, SpeedupLedger,
    StagePlan,
};
use canvas_forge::telephoning::{
    caption_batch, caption_stats, read_captions, AltTextFilter, BatchOptions, CaptionCache, CaptionRecord,
    CaptionerClient, DirectoryImages, FixtureImages, HttpCaptioner, ImageSource, MockCaptioner, RetryPolicy,
    SystemClock,
};
use serde_json::json;

use crate::args::*;
use crate::{usage, Output, Status};

pub fn run(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Catalog(CatalogCommand::Partition(a)) => catalog_partition(a),
        Command::Catalog(CatalogCommand::Stats(a)) => catalog_stats(a),
        Command::Caption(CaptionCommand::Run(a)) => caption_run(a),
        Command::Caption(CaptionCommand::Stats(a)) => {
            let captions = read_captions(&a.input).with_context(|| a.input.display().to_string())?;
            Ok(Output::new(caption_stats(&captions))?.inputs([&a.input]))
        }
        Command::Latents(LatentsCommand::Precompute(a)) => latents_precompute(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Metrics(m) => metrics_cmd(m),
        Command::Prefs(PrefsCommand::Rate(a)) => prefs(a, None),
        Command::Prefs(PrefsCommand::Test(a)) => prefs(&a.tally, Some(a.normal)),
        Command::Plan(PlanCommand::Cost(a)) => plan_cost_cmd(a),
        Command::Plan(PlanCommand::Capacity(a)) => {
            let q = CapacityQuery { n_params: a.n_params, c: a.c, h: a.h, w: a.w, dataset_size: a.dataset_size };
            let cap = critical_size(&q).map_err(|e| usage(format!("--c/--h/--w: {e}")))?;
            Output::new(
                json!({ "query": q, "critical_size": cap.critical_size, "memorization_possible": cap.memorization_possible }),
            )
        }
        Command::Plan(PlanCommand::Speedup(a)) => plan_speedup(a),
        Command::Sweep(SweepCommand::Scarcity(a)) => sweep(a, cli.global.workers),
    }
}

fn read_records(r: &RecordsIn) -> Result<Vec<CatalogRecord>> {
    read_records_from(&r.input, r.format)
}

fn read_records_from(path: &Path, format: RecordFormat) -> Result<Vec<CatalogRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let csv = match format {
        RecordFormat::Csv => true,
        RecordFormat::Jsonl => false,
        RecordFormat::Auto => path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")),
    };
    let records = if csv { catalog::read_csv(file) } else { catalog::read_jsonl(BufReader::new(file)) };
    records.with_context(|| path.display().to_string())
}

fn filter(blacklist: Option<&PathBuf>) -> Result<AltTextFilter> {
    match blacklist {
        Some(p) => AltTextFilter::from_file(p).with_context(|| format!("reading blacklist {}", p.display())),
        None => Ok(AltTextFilter::default()),
    }
}

fn write_pool(dir: &Path, name: &str, records: &[CatalogRecord]) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| path.display().to_string())?;
    catalog::write_jsonl(std::io::BufWriter::new(file), records).with_context(|| path.display().to_string())?;
    Ok(path)
}

fn catalog_partition(a: &PartitionArgs) -> Result<Output> {
    let records = read_records(&a.records)?;
    let mut partitioner = Partitioner::new(filter(a.blacklist.as_ref())?);
    let (mut c, mut nc, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    for record in records {
        match partitioner.push(&record)?.pool() {
            Pool::Commercial => {
                nc.push(record.clone());
                c.push(record);
            }
            Pool::NonCommercial => nc.push(record),
            Pool::Excluded => excluded.push(record),
        }
    }
    let summary = partitioner.summary();
    let mut out = Output::new(summary)?.table(summary.to_table()).inputs([&a.records.input]);
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        out = out.outputs([
            write_pool(dir, "c.jsonl", &c)?,
            write_pool(dir, "nc.jsonl", &nc)?,
            write_pool(dir, "excluded.jsonl", &excluded)?,
        ]);
        out = out.manifest_path(dir.join("run-manifest.json"));
    }
    if let Some(b) = &a.blacklist {
        out = out.inputs([b]);
    }
    Ok(out)
}

fn catalog_stats(a: &CatalogStatsArgs) -> Result<Output> {
    let mut result = serde_json::Map::new();
    let mut inputs = Vec::new();
    if let Some(path) = &a.input {
        let records = read_records_from(path, a.format)?;
        let f = filter(a.blacklist.as_ref())?;
        let mut licenses: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for r in &records {
            let e = licenses.entry(normalize_license(&r.license_raw)).or_default();
            e.0 += r.multiplicity;
            if f.usable(r.title.as_deref(), r.user_description.as_deref()) {
                e.1 += r.multiplicity;
            }
        }
        let rows: Vec<_> = licenses
            .iter()
            .map(|(license, (count, usable))| {
                let class = classify_license(license);
                json!({
                    "license": license,
                    "class": class,
                    "pool": class.pool(),
                    "count": count,
                    "alt_text_pct": 100.0 * *usable as f64 / *count as f64,
                })
            })
            .collect();
        let pct = |pool| catalog::alt_text_percentage(&records, pool, &f).ok();
        result.insert("licenses".into(), json!(rows));
        result.insert("alt_text_pct_c".into(), json!(pct(Pool::Commercial)));
        result.insert("alt_text_pct_nc".into(), json!(pct(Pool::NonCommercial)));
        inputs.push(path.clone());
    }
    if let Some(path) = &a.rates {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| path.display().to_string())?;
        let rows =
            rdr.deserialize().collect::<Result<Vec<LicenseRate>, _>>().with_context(|| path.display().to_string())?;
        let pct = |pool| weighted_alt_text_percentage(&rows, pool).ok();
        result.insert(
            "weighted".into(),
            json!({ "alt_text_pct_c": pct(Pool::Commercial), "alt_text_pct_nc": pct(Pool::NonCommercial) }),
        );
        inputs.push(path.clone());
    }
    Ok(Output::new(result)?.inputs(inputs))
}

fn caption_run(a: &CaptionRunArgs) -> Result<Output> {
    let records = read_records(&a.records)?;
    let client: Box<dyn CaptionerClient> = match (&a.captioner_url, a.mock) {
        (_, true) => {
            let mut mock = match &a.captioner_id {
                Some(id) => MockCaptioner::new(id.clone()),
                None => MockCaptioner::default(),
            };
            if let Some(p) = &a.mock_fixtures {
                let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
                let fixtures: HashMap<String, String> =
                    serde_json::from_str(&text).with_context(|| p.display().to_string())?;
                mock = mock.with_fixtures(fixtures);
            }
            if let Some(n) = a.mock_fail_every {
                mock = mock.failing_every(n);
            }
            Box::new(mock)
        }
        (Some(url), false) => Box::new(HttpCaptioner::new(
            url.clone(),
            a.captioner_id.clone().unwrap_or_else(|| url.clone()),
            Duration::from_secs(a.timeout_secs),
        )),
        (None, false) => {
            return Err(usage("one of --captioner-url (or CANVAS_FORGE_CAPTIONER_URL) or --mock is required"))
        }
    };
    let images: Box<dyn ImageSource> = match (&a.images_dir, a.mock) {
        (Some(dir), _) => Box::new(DirectoryImages { dir: dir.clone() }),
        (None, true) => Box::new(FixtureImages),
        (None, false) => return Err(usage("--images-dir is required unless --mock is set")),
    };
    if a.inflight == 0 {
        return Err(usage("--inflight must be at least 1"));
    }

    let mut cache = CaptionCache::open(&a.cache).with_context(|| a.cache.display().to_string())?;
    let options = BatchOptions {
        concurrency: a.inflight,
        retry: RetryPolicy { attempts: a.attempts, base_delay: Duration::from_millis(a.base_delay_ms) },
        clock: &SystemClock,
    };
    let report = caption_batch(&records, client.as_ref(), images.as_ref(), &mut cache, &options)?;

    let service_failures = report.dead_letters.iter().filter(|d| d.attempts > 0).count();
    let status = if service_failures > 0 {
        Status::Service
    } else if !report.dead_letters.is_empty() {
        Status::Data
    } else {
        Status::Ok
    };
    if status != Status::Ok {
        eprintln!("{} record(s) dead-lettered, {service_failures} by the captioner", report.dead_letters.len());
    }
    let mut out = Output::new(json!({
        "captioner_id": client.captioner_id(),
        "captioned": report.captions.len(),
        "cache_hits": report.cache_hits,
        "service_calls": report.service_calls,
        "retried_calls": report.retried_calls,
        "dead_letters": report.dead_letters,
        "cache_entries": cache.len(),
    }))?
    .inputs([&a.records.input])
    .outputs([&a.cache])
    .manifest_path(suffixed(&a.cache, ".manifest.json"));
    if let Some(dir) = &a.images_dir {
        out = out.inputs([dir]);
    }
    out.status = status;
    Ok(out)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn latents_precompute(a: &PrecomputeArgs) -> Result<Output> {
    let records = read_records(&a.records)?;
    if a.shard_size == 0 {
        return Err(usage("--shard-size must be at least 1"));
    }
    let [c, h, w] = a.dims[..] else {
        return Err(usage("--dims takes exactly three values, c,h,w"));
    };
    let dims = LatentDims::new(c, h, w);
    if dims.is_empty() {
        return Err(usage("--dims must all be positive"));
    }
    let encoder = RandomProjectionEncoder::new(dims, a.seed);
    let report = precompute(&records, &encoder, &a.out_dir, a.shard_size)?;
    let new_shards: Vec<PathBuf> = report.new_shards.iter().map(|s| a.out_dir.join(s)).collect();
    let mut out = Output::new(&report)?
        .inputs([&a.records.input])
        .outputs(new_shards)
        .outputs([a.out_dir.join(canvas_forge::latent_cache::MANIFEST_FILE)])
        .seed(a.seed)
        .manifest_path(a.out_dir.join("run-manifest.json"));
    if !report.dead_letters.is_empty() {
        eprintln!("{} record(s) failed to encode", report.dead_letters.len());
        out.status = Status::Data;
    }
    Ok(out)
}

/// Last record per image id; torn or foreign lines are skipped as the
/// cache itself does.
fn caption_map(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str::<CaptionRecord>(l).ok())
        .map(|r| (r.image_id, r.caption))
        .collect())
}

fn train_cmd(a: &TrainArgs) -> Result<Output> {
    let store = LatentStore::open(&a.latents_dir).with_context(|| a.latents_dir.display().to_string())?;
    let entries = store.entries_sorted();
    if entries.is_empty() {
        bail!("{} holds no latents", a.latents_dir.display());
    }
    let latents: Vec<Vec<f64>> = entries.iter().map(|e| e.payload.iter().map(|&x| f64::from(x)).collect()).collect();
    let conditions: Vec<Vec<f64>> = match &a.captions {
        Some(path) => {
            let captions = caption_map(path)?;
            entries
                .iter()
                .map(|e| match captions.get(&e.image_id) {
                    Some(c) => Ok(caption_embedding(c, a.cond_dim)),
                    None => bail!("no caption for latent `{}` in {}", e.image_id, path.display()),
                })
                .collect::<Result<_>>()?
        }
        None => vec![Vec::new(); latents.len()],
    };

    let config = TrainConfig {
        total_steps: a.steps,
        batch_size: a.batch_size,
        microbatch_size: a.microbatch_size.unwrap_or(a.batch_size),
        learning_rate: a.lr,
        momentum: a.momentum,
        seed: a.seed,
        dataset_fraction: a.dataset_fraction,
        timesteps: a.timesteps,
        beta_min: a.beta_min,
        beta_max: a.beta_max,
        hidden: a.hidden,
        time_dim: a.time_dim,
        ema_decay: a.ema_decay,
        ema_fraction: a.ema_fraction,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let outcome = train(&config, &latents, &conditions)?;

    let (weights, model) = match a.weights {
        Weights::Ema => ("ema", outcome.ema_model()),
        Weights::Theta => ("theta", outcome.model.clone()),
    };
    let meta = CheckpointMeta::new(&config, model.shape(), config.total_steps, weights);
    save_checkpoint(&a.checkpoint, model.params(), &meta)?;
    let mut outputs = vec![a.checkpoint.with_extension("bin"), a.checkpoint.with_extension("json")];
    if let Some(path) = &a.loss_out {
        let mut csv = String::from("step,loss\n");
        for (i, l) in outcome.loss_curve.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        std::fs::write(path, csv).with_context(|| path.display().to_string())?;
        outputs.push(path.clone());
    }

    let mut inputs = vec![a.latents_dir.clone()];
    inputs.extend(a.captions.clone());
    Ok(Output::new(json!({
        "steps": config.total_steps,
        "latents": latents.len(),
        "subset_size": outcome.subset.len(),
        "final_loss": outcome.loss_curve.last(),
        "param_count": meta.param_count,
        "weights": weights,
        "denoiser": meta.denoiser,
    }))?
    .inputs(inputs)
    .outputs(outputs)
    .seed(a.seed)
    .manifest_path(suffixed(&a.checkpoint, ".manifest.json")))
}

fn sample_cmd(a: &SampleArgs) -> Result<Output> {
    let (model, meta) = load_checkpoint(&a.checkpoint).with_context(|| a.checkpoint.display().to_string())?;
    let cond_dim = meta.denoiser.cond_dim;
    let condition: Vec<f64> = match (&a.caption, cond_dim) {
        (Some(_), 0) => return Err(usage("--caption given but the checkpoint is unconditional")),
        (caption, d) => caption_embedding(caption.as_deref().unwrap_or(""), d),
    };
    let schedule = meta.config.schedule::<f64>()?;
    let samples = sample(&model, &schedule, a.n, &condition, a.seed)?;
    let mut out = Output::new(json!({
        "n": samples.len(),
        "dim": meta.denoiser.latent_dim,
        "samples": samples,
    }))?
    .inputs([a.checkpoint.with_extension("bin"), a.checkpoint.with_extension("json")])
    .seed(a.seed);
    if let Some(path) = &a.features_out {
        save_features(path, &FeatureSet::from_rows(&samples)?)?;
        out = out.outputs([path]).manifest_path(suffixed(path, ".manifest.json"));
    }
    Ok(out)
}

fn load(path: &Path) -> Result<FeatureSet<f64>> {
    Ok(load_features(path).with_context(|| path.display().to_string())?.cast())
}

fn metrics_cmd(m: &MetricsCommand) -> Result<Output> {
    let (name, a, b, value, params, seed) = match m {
        MetricsCommand::Fid(p) | MetricsCommand::Clipfid(p) => {
            let (x, y) = (load(&p.a)?, load(&p.b)?);
            let (name, v) = match m {
                MetricsCommand::Fid(_) => ("fid", metrics::fid(&x, &y)?),
                _ => ("clipfid", metrics::clip_fid(&x, &y)?),
            };
            (name, (&p.a, x.n()), (&p.b, y.n()), v, json!({}), None)
        }
        MetricsCommand::Kid(k) => {
            let (x, y) = (load(&k.pair.a)?, load(&k.pair.b)?);
            let (v, params, seed) = if k.blocks == 0 {
                (metrics::kid(&x, &y)?, json!({}), None)
            } else {
                let r = metrics::kid_blocks(&x, &y, k.blocks, k.block_size, k.seed)?;
                (
                    r.mean,
                    json!({ "blocks": r.blocks, "block_size": r.block_size, "std": r.std, "seed": k.seed }),
                    Some(k.seed),
                )
            };
            ("kid", (&k.pair.a, x.n()), (&k.pair.b, y.n()), v, params, seed)
        }
        MetricsCommand::Clipscore(c) => {
            let (x, y) = (load(&c.image)?, load(&c.text)?);
            let v = metrics::clip_score(&x, &y, c.weight)?;
            ("clipscore", (&c.image, x.n()), (&c.text, y.n()), v, json!({ "weight": c.weight }), None)
        }
    };
    let result = MetricResult { metric: name.into(), value, n_a: a.1, n_b: b.1, params };
    let mut out = Output::new(result)?.inputs([a.0, b.0]);
    out.seed = seed;
    Ok(out)
}

fn tie_policy(s: &str) -> TiePolicy {
    match s {
        "half-win" => TiePolicy::HalfWin,
        _ => TiePolicy::Drop,
    }
}

fn tally_of(wins: u64, total: u64) -> Result<PreferenceTally> {
    PreferenceTally::new(wins, total).map_err(|e| usage(format!("--wins/--total: {e}")))
}

/// `test` is `None` for a rate, or whether to use the normal approximation.
fn prefs(a: &TallyArgs, test: Option<bool>) -> Result<Output> {
    let p_value = |t: &PreferenceTally, normal: bool| if normal { normal_parity_test(t) } else { parity_test(t) };
    let method = |normal: bool| if normal { "normal" } else { "exact" };
    if let (Some(wins), Some(total)) = (a.wins, a.total) {
        let t = tally_of(wins, total)?;
        return match test {
            None => {
                let r = preference_rate(&t)?;
                Output::new(json!({ "wins": wins, "total": total, "rate": r.rate, "wilson_95": r.wilson_95 }))
            }
            Some(normal) => Output::new(
                json!({ "wins": wins, "total": total, "p_value": p_value(&t, normal)?, "method": method(normal) }),
            ),
        };
    }
    let (Some(path), Some(reference)) = (&a.ratings, &a.reference) else {
        return Err(usage("either --wins and --total, or --ratings and --reference, are required"));
    };
    let file = File::open(path).with_context(|| path.display().to_string())?;
    let rows = read_ratings(file).with_context(|| path.display().to_string())?;
    let tallies = tally_ratings(&rows, reference, tie_policy(&a.ties))?;
    if tallies.is_empty() {
        bail!("no decided comparisons against `{reference}` in {}", path.display());
    }
    let summaries = tallies
        .iter()
        .map(|(model, t)| match test {
            None => Ok(serde_json::to_value(summarize(model, reference, t)?)?),
            Some(normal) => Ok(json!({
                "model": model,
                "reference": reference,
                "wins": t.wins,
                "total": t.total,
                "p_value": p_value(t, normal)?,
                "method": method(normal),
            })),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Output::new(summaries)?.inputs([path]))
}

fn parse_stage(s: &str) -> Result<StagePlan> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(format!("--stage `{s}`: expected name:images:images_per_second"));
    let [name, images, rate] = parts[..] else {
        return Err(bad());
    };
    Ok(StagePlan {
        name: name.to_string(),
        images_to_process: images.parse().map_err(|_| bad())?,
        throughput: rate.parse().map_err(|_| bad())?,
    })
}

fn plan_cost_cmd(a: &CostArgs) -> Result<Output> {
    let Some(path) = &a.table else {
        let stages = a.stage.iter().map(|s| parse_stage(s)).collect::<Result<Vec<_>>>()?;
        let plan = plan_cost(&stages, a.gpus, a.price).map_err(|e| usage(e.to_string()))?;
        let table = plan.to_table();
        return Ok(Output::new(plan)?.table(table));
    };
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let rows: Vec<CostTableRow> = serde_json::from_str(&text).with_context(|| path.display().to_string())?;
    let pick = |gpus: u32| {
        rows.iter()
            .find(|r| r.gpus == gpus)
            .ok_or_else(|| usage(format!("--fit-rows: no row with {gpus} GPUs in {}", path.display())))
    };
    let [first, second] = a.fit_rows[..] else {
        return Err(usage("--fit-rows takes exactly two GPU counts"));
    };
    let budgets = fit_stage_budgets(pick(first)?, pick(second)?, a.ema_fraction)?;
    let mut table = format!(
        "{:>6} {:>10} {:>10} {:>8} {:>10} {:>12}\n",
        "GPUs", "days", "predicted", "error", "cost", "$/GPU-hour"
    );
    let mut out_rows = Vec::new();
    for r in &rows {
        let predicted = budgets.predict_days(r)?;
        let error_pct = 100.0 * (predicted - r.days) / r.days;
        table.push_str(&format!(
            "{:>6} {:>10.2} {:>10.2} {:>7.2}% {:>10} {:>12.4}\n",
            r.gpus,
            r.days,
            predicted,
            error_pct,
            format!("${}", catalog::group_thousands(r.cost.round() as u64)),
            r.implied_price()
        ));
        out_rows.push(json!({
            "gpus": r.gpus,
            "days": r.days,
            "predicted_days": predicted,
            "error_pct": error_pct,
            "cost": r.cost,
            "implied_price": r.implied_price(),
        }));
    }
    Ok(Output::new(json!({ "budgets": budgets, "rows": out_rows }))?.table(table).inputs([path]))
}

fn plan_speedup(a: &SpeedupArgs) -> Result<Output> {
    let mut ledger = SpeedupLedger::default();
    for s in &a.step {
        let bad = |why: String| usage(format!("--step `{s}`: {why}"));
        let (name, mult) = s.rsplit_once('=').ok_or_else(|| bad("expected name=multiplier".into()))?;
        let mult: f64 = mult.trim().parse().map_err(|_| bad("multiplier is not a number".into()))?;
        ledger.push(name.trim(), mult).map_err(|e| bad(e.to_string()))?;
    }
    let s = cumulative_speedup(&ledger)?;
    Output::new(json!({ "steps": ledger.steps, "curve": s.curve, "total": s.total }))
}

fn sweep(a: &ScarcityArgs, workers: usize) -> Result<Output> {
    let mut c = SweepConfig::default();
    if let Some(v) = &a.fractions {
        c.fractions = v.clone();
    }
    macro_rules! set {
        ($($field:ident => $($target:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$field { c.$($target).+ = v; })*
        };
    }
    set! {
        n_train => n_train,
        n_heldout => n_heldout,
        n_samples => n_samples,
        steps => train.total_steps,
        lr => train.learning_rate,
        seed => train.seed,
        replicates => replicates,
        bandwidth => bandwidth,
        components => mixture.components,
        data_seed => data_seed,
    }
    if let Some(b) = a.batch_size {
        c.train.batch_size = b;
        c.train.microbatch_size = b;
    }
    c.use_ema = !a.no_ema;
    c.train.validate().map_err(|e| usage(e.to_string()))?;
    if workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    // Echoed before the worker count is applied so the output is identical
    // whatever --workers is.
    let shown = serde_json::to_value(&c)?;
    c.workers = workers;
    let report = run_sweep(&c)?;
    let table = report.to_table();
    Ok(Output::new(json!({ "config": shown, "report": report }))?.table(table).seed(c.train.seed))
}
