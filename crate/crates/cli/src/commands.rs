use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use mctsteg_core::corpus::CorpusSpec;
use mctsteg_core::environment::{train, Environment, LinearModel, RemoteEnv, TrainHyper};
use mctsteg_core::media::{self, Domain, ModificationMap, PixelMatrix};
use mctsteg_core::metrics::{p_e, MethodRow, Report, DEFAULT_FCC_ORDERS};
use mctsteg_core::pipeline::{self, CostSource, EmbedPlan, EmbedTrace, Stego};
use mctsteg_core::rng::derive_seed;
use mctsteg_core::simulator::change_rate;

use crate::config::{BaselineMethod, CostChoice, EnvChoice, RunConfig};
use crate::error::CliError;

type Result<T, E = CliError> = std::result::Result<T, E>;

pub struct Cover {
    pub path: PathBuf,
    pub stem: String,
    pub image: PixelMatrix,
}

pub fn load_covers(manifest: &Path) -> Result<Vec<Cover>> {
    let paths = media::read_manifest(manifest).map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
    let mut seen = BTreeSet::new();
    let mut covers = Vec::with_capacity(paths.len());
    for path in paths {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !seen.insert(stem.clone()) {
            return Err(CliError::Config(format!("manifest lists two images named {stem:?}")));
        }
        let image = media::read_image(&path).map_err(|e| CliError::run(path.display().to_string(), e))?;
        covers.push(Cover { path, stem, image });
    }
    Ok(covers)
}

fn load_images(manifest: &Path) -> Result<Vec<PixelMatrix>> {
    let paths = media::read_manifest(manifest).map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
    paths
        .iter()
        .map(|p| media::read_image(p).map_err(|e| CliError::run(p.display().to_string(), e)))
        .collect()
}

/// Absolute payload: rate times pixel count, or times nonzero coefficients for JPEG-domain input.
pub fn payload_bits(rate: f64, img: &PixelMatrix) -> f64 {
    match img.domain() {
        Domain::Spatial => pipeline::payload_bits(rate, img),
        Domain::Jpeg => rate * img.data().iter().filter(|&&v| v != 0.0).count() as f64,
    }
}

fn cost_source(cfg: &RunConfig, cover: &Cover) -> Result<CostSource> {
    match &cfg.cost {
        CostChoice::Hill => {
            if cover.image.domain() != Domain::Spatial {
                return Err(CliError::Config(format!(
                    "{}: HILL needs spatial input; pass --cost file:<dir> for JPEG-domain images",
                    cover.path.display()
                )));
            }
            Ok(CostSource::BuiltinHill)
        }
        CostChoice::Files(dir) => {
            let path = dir.join(format!("{}.cost", cover.stem));
            media::read_cost_map(&path).map(CostSource::External).map_err(|e| CliError::run(path.display().to_string(), e))
        }
    }
}

fn image_seed(cfg: &RunConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, &[index as u64])
}

pub fn make_env(choice: &EnvChoice) -> Result<Box<dyn Environment + Send>> {
    match choice {
        EnvChoice::Builtin(path) => {
            let model = LinearModel::load(path)
                .map_err(|e| CliError::Config(format!("environment model {}: {e}", path.display())))?;
            Ok(Box::new(model))
        }
        EnvChoice::Remote(spec) => {
            let env = RemoteEnv::connect(spec).map_err(|e| CliError::run("remote environment", e))?;
            Ok(Box::new(env))
        }
    }
}

/// Runs `work` over `0..n` on `jobs` threads; each thread owns a state from
/// `init`. Results come back in index order; the lowest-index error wins.
pub fn run_pool<S, T, I, F>(n: usize, jobs: usize, init: I, work: F) -> Result<Vec<T>>
where
    T: Send,
    I: Fn() -> Result<S> + Sync,
    F: Fn(usize, &mut S) -> Result<T> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    let init_error: Mutex<Option<CliError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            scope.spawn(|| {
                let mut state = match init() {
                    Ok(s) => s,
                    Err(e) => {
                        init_error.lock().expect("lock").get_or_insert(e);
                        return;
                    }
                };
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = work(i, &mut state);
                    let failed = r.is_err();
                    slots.lock().expect("lock")[i] = Some(r);
                    if failed {
                        // Stop handing out work; earlier indices still finish.
                        next.fetch_max(n, Ordering::Relaxed);
                    }
                }
            });
        }
    });
    if let Some(e) = init_error.into_inner().expect("lock") {
        return Err(e);
    }
    let mut out = Vec::with_capacity(n);
    for slot in slots.into_inner().expect("lock") {
        match slot {
            Some(r) => out.push(r?),
            None => break,
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    image: &'a str,
    method: &'a str,
    payload_bits: f64,
    change_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a EmbedTrace>,
}

fn stego_extension(img: &PixelMatrix) -> &'static str {
    match img.domain() {
        Domain::Spatial => "pgm",
        Domain::Jpeg => "pixf",
    }
}

/// Writes `<stem>.<ext>` and `<stem>.modm` under `dir`; returns the stego file name.
fn write_outputs(dir: &Path, stem: &str, stego: &PixelMatrix, mods: &ModificationMap) -> Result<String> {
    let name = format!("{stem}.{}", stego_extension(stego));
    media::write_image(stego, dir.join(&name)).map_err(|e| CliError::run(&name, e))?;
    let map = format!("{stem}.modm");
    media::write_modification_map(mods, dir.join(&map)).map_err(|e| CliError::run(&map, e))?;
    Ok(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::run(path.display().to_string(), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::run(dir.display().to_string(), e))
}

struct Embedded {
    name: String,
    line: String,
    mods: ModificationMap,
    stego: PixelMatrix,
}

fn finish_batch(dir: &Path, results: &[Embedded]) -> Result<()> {
    let trace: String = results.iter().map(|r| format!("{}\n", r.line)).collect();
    write_text(&dir.join("trace.jsonl"), &trace)?;
    let names: Vec<&str> = results.iter().map(|r| r.name.as_str()).collect();
    media::write_manifest(dir.join("manifest.txt"), &names).map_err(|e| CliError::run("manifest", e))
}

fn warn_zero_payload(cfg: &RunConfig) {
    if cfg.payload == 0.0 {
        log::warn!("payload is 0: stegos will be identical to their covers");
    }
}

fn run_mctsteg(cfg: &RunConfig, covers: &[Cover], dir: &Path) -> Result<Vec<Embedded>> {
    let env_choice = cfg.require_env()?.clone();
    create_dir(dir)?;
    run_pool(
        covers.len(),
        cfg.jobs,
        || make_env(&env_choice),
        |i, env| {
            let cover = &covers[i];
            let bits = payload_bits(cfg.payload, &cover.image);
            let plan = EmbedPlan {
                payload_bits_total: bits,
                scheme: cfg.scheme,
                budget: cfg.budget.clone(),
                cost_source: cost_source(cfg, cover)?,
                rng_seed: image_seed(cfg, i),
                adjust_first_sublattice: cfg.adjust_first,
                common_random_numbers: false,
            };
            let result = pipeline::embed(&cover.image, &plan, env).map_err(|e| CliError::run(&cover.stem, e))?;
            let name = write_outputs(dir, &cover.stem, &result.stego, &result.mods)?;
            let line = serde_json::to_string(&TraceRecord {
                image: &cover.stem,
                method: "mctsteg",
                payload_bits: bits,
                change_rate: result.trace.change_rate,
                trace: Some(&result.trace),
            })
            .expect("trace serializes");
            log::info!("{}: change rate {:.4}", cover.stem, result.trace.change_rate);
            Ok(Embedded { name, line, mods: result.mods, stego: result.stego })
        },
    )
}

fn run_baseline(cfg: &RunConfig, method: BaselineMethod, covers: &[Cover], dir: &Path) -> Result<Vec<Embedded>> {
    create_dir(dir)?;
    run_pool(
        covers.len(),
        cfg.jobs,
        || Ok(()),
        |i, _| {
            let cover = &covers[i];
            let bits = payload_bits(cfg.payload, &cover.image);
            let source = cost_source(cfg, cover)?;
            let seed = image_seed(cfg, i);
            let Stego { stego, mods } = match method {
                BaselineMethod::Plain => pipeline::embed_plain(&cover.image, bits, &source, seed),
                BaselineMethod::Cmd => pipeline::embed_cmd(&cover.image, bits, cfg.cmd_alpha, cfg.scheme, &source, seed),
            }
            .map_err(|e| CliError::run(&cover.stem, e))?;
            let name = write_outputs(dir, &cover.stem, &stego, &mods)?;
            let line = serde_json::to_string(&TraceRecord {
                image: &cover.stem,
                method: method.name(),
                payload_bits: bits,
                change_rate: change_rate(&mods),
                trace: None,
            })
            .expect("trace serializes");
            Ok(Embedded { name, line, mods, stego })
        },
    )
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<()> {
    let covers = load_covers(cfg.require_covers()?)?;
    let out = cfg.require_out()?;
    cfg.require_env()?;
    warn_zero_payload(cfg);
    let results = run_mctsteg(cfg, &covers, out)?;
    finish_batch(out, &results)
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<()> {
    let covers = load_covers(cfg.require_covers()?)?;
    let out = cfg.require_out()?;
    warn_zero_payload(cfg);
    let results = run_baseline(cfg, cfg.method, &covers, out)?;
    finish_batch(out, &results)
}

#[derive(Serialize)]
struct TrainSummary {
    model: String,
    pairs: usize,
    train_accuracy: f64,
    validation_accuracy: f64,
}

pub fn cmd_train_env(cfg: &RunConfig) -> Result<()> {
    let covers = load_covers(cfg.require_covers()?)?;
    let out = cfg.require_out()?;
    let stegos: Vec<PixelMatrix> = match cfg.stegos.as_slice() {
        [] => {
            log::info!("no --stegos given; embedding plain stegos at payload {}", cfg.payload);
            run_pool(covers.len(), cfg.jobs, || Ok(()), |i, _| {
                let c = &covers[i];
                pipeline::embed_plain(&c.image, payload_bits(cfg.payload, &c.image), &cost_source(cfg, c)?, image_seed(cfg, i))
                    .map(|s| s.stego)
                    .map_err(|e| CliError::run(&c.stem, e))
            })?
        }
        [one] => load_images(Path::new(split_label(one).1))?,
        _ => return Err(CliError::Usage("train-env takes a single --stegos manifest".into())),
    };
    let images: Vec<PixelMatrix> = covers.into_iter().map(|c| c.image).collect();
    let hyper = TrainHyper { epochs: cfg.epochs, seed: cfg.seed, ..TrainHyper::default() };
    let outcome = train(&images, &stegos, &hyper).map_err(|e| CliError::run("training", e))?;
    outcome.model.save(out).map_err(|e| CliError::run(out.display().to_string(), e))?;
    let summary = TrainSummary {
        model: out.display().to_string(),
        pairs: images.len(),
        train_accuracy: outcome.train_accuracy,
        validation_accuracy: outcome.validation_accuracy,
    };
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

/// `label=path` or a bare path labelled by its parent directory name.
fn split_label(spec: &str) -> (String, &str) {
    match spec.split_once('=') {
        Some((label, path)) => (label.to_string(), path),
        None => {
            let label = Path::new(spec)
                .parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (label, spec)
        }
    }
}

fn detector_scores(detector: &LinearModel, images: &[PixelMatrix]) -> Result<Vec<f64>> {
    images
        .iter()
        .map(|img| detector.score(img).map(|s| 1.0 - s.value()).map_err(|e| CliError::run("detector", e)))
        .collect()
}

fn row_for(
    label: &str,
    maps: &[ModificationMap],
    stegos: &[PixelMatrix],
    detector: Option<(&LinearModel, &[f64])>,
) -> Result<MethodRow> {
    let mut row = MethodRow::from_maps(label, maps, &DEFAULT_FCC_ORDERS).map_err(|e| CliError::run(label, e))?;
    if let Some((det, cover_scores)) = detector {
        let scores = detector_scores(det, stegos)?;
        row.p_e = Some(p_e(cover_scores, &scores).map_err(|e| CliError::run(label, e))?);
    }
    Ok(row)
}

fn emit_report(report: &Report, out: Option<&Path>) -> Result<()> {
    print!("{}", report.to_text());
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("report.json"), &report.to_json())?;
        write_text(&dir.join("report.txt"), &report.to_text())?;
    }
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let covers = load_covers(cfg.require_covers()?)?;
    if cfg.stegos.is_empty() {
        return Err(CliError::Config("evaluate needs at least one --stegos manifest".into()));
    }
    let detector = cfg.load_detector()?;
    let cover_images: Vec<PixelMatrix> = covers.iter().map(|c| c.image.clone()).collect();
    let cover_scores = detector.as_ref().map(|d| detector_scores(d, &cover_images)).transpose()?;
    let mut report = Report::default();
    for spec in &cfg.stegos {
        let (label, path) = split_label(spec);
        let stegos = load_images(Path::new(path))?;
        if stegos.len() != covers.len() {
            return Err(CliError::Config(format!("{label}: {} stegos for {} covers", stegos.len(), covers.len())));
        }
        let maps = covers
            .iter()
            .zip(&stegos)
            .map(|(c, s)| ModificationMap::between(&c.image, s).map_err(|e| CliError::run(&c.stem, e)))
            .collect::<Result<Vec<_>>>()?;
        let det = detector.as_ref().zip(cover_scores.as_deref());
        report.push(row_for(&label, &maps, &stegos, det)?);
    }
    emit_report(&report, cfg.out.as_deref())
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let covers = load_covers(cfg.require_covers()?)?;
    let out = cfg.require_out()?;
    cfg.require_env()?;
    warn_zero_payload(cfg);
    let detector = cfg.load_detector()?;
    let cover_images: Vec<PixelMatrix> = covers.iter().map(|c| c.image.clone()).collect();
    let cover_scores = detector.as_ref().map(|d| detector_scores(d, &cover_images)).transpose()?;
    let det = detector.as_ref().zip(cover_scores.as_deref());

    let mut report = Report::default();
    for method in [BaselineMethod::Plain, BaselineMethod::Cmd] {
        let dir = out.join(method.name());
        let results = run_baseline(cfg, method, &covers, &dir)?;
        finish_batch(&dir, &results)?;
        report.push(summarize(method.name(), &results, det)?);
    }
    let dir = out.join("mctsteg");
    let results = run_mctsteg(cfg, &covers, &dir)?;
    finish_batch(&dir, &results)?;
    report.push(summarize("mctsteg", &results, det)?);

    emit_report(&report, Some(out))?;
    match report.fcc_direction("mctsteg", "plain") {
        Some(true) => println!("F(2) direction: mctsteg above plain (holds)"),
        Some(false) => println!("F(2) direction: mctsteg not above plain (violated)"),
        None => {}
    }
    Ok(())
}

fn summarize(label: &str, results: &[Embedded], det: Option<(&LinearModel, &[f64])>) -> Result<MethodRow> {
    let maps: Vec<ModificationMap> = results.iter().map(|r| r.mods.clone()).collect();
    let stegos: Vec<PixelMatrix> = results.iter().map(|r| r.stego.clone()).collect();
    row_for(label, &maps, &stegos, det)
}

pub fn cmd_gen_corpus(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    create_dir(out)?;
    let spec = CorpusSpec::new(cfg.size, cfg.size, cfg.seed);
    let names = run_pool(cfg.count, cfg.jobs, || Ok(()), |i, _| {
        let name = format!("cover_{i:05}.pgm");
        media::write_pgm(&spec.image(i as u64), out.join(&name)).map_err(|e| CliError::run(&name, e))?;
        Ok(name)
    })?;
    media::write_manifest(out.join("manifest.txt"), &names).map_err(|e| CliError::run("manifest", e))
}
