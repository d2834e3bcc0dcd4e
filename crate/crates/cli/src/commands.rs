use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use cnsl_core::agentsim::{calibrate, episodes_to_dataset, init_world, observe, run_episodes};
use cnsl_core::baselines::lpsi_cross;
use cnsl_core::dataset::{default_test_samples, Dataset, DatasetMeta, META_FILE};
use cnsl_core::diffusion::generate_dataset;
use cnsl_core::eval::{run_experiment_grid, GridCell, PredictionRecord};
use cnsl_core::model::{infer_seeds, train, CnslModel};
use cnsl_core::rng::stage;
use cnsl_core::synth::generate_cross_network;

use crate::config::{DataKind, RunConfig};
use crate::error::{io_err, CliError, CliResult};
use crate::predictions::{dataset_label, find_prediction_dirs, read_predictions, write_case, write_json, RunInfo, RUN_FILE};

pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    if !dir.join(META_FILE).is_file() {
        return Err(CliError::Usage(format!("no dataset at {} (missing {META_FILE})", dir.display())));
    }
    Ok(Dataset::load(dir)?)
}

pub fn simulate_data(cfg: &RunConfig, out: &Path) -> CliResult<Dataset> {
    let n = cfg.data.samples;
    let test = cfg.data.test_samples.unwrap_or_else(|| default_test_samples(n));
    let dataset = match cfg.data.kind {
        DataKind::CrossPlatform | DataKind::Toy => {
            let cross = generate_cross_network(&cfg.synth, cfg.stage_seed(stage::SYNTH))?;
            let data_seed = cfg.stage_seed(stage::DATASET_SAMPLE);
            let samples = generate_dataset(&cross, n, cfg.data.seed_fraction, &cfg.source, &cfg.target, data_seed)?;
            let kind = if cfg.data.kind == DataKind::Toy { "toy" } else { "cross-platform" };
            Dataset {
                meta: DatasetMeta {
                    kind: kind.into(),
                    diffusion: cfg.diffusion_label(),
                    source_config: Some(cfg.source.clone()),
                    target_config: Some(cfg.target.clone()),
                    n_samples: n,
                    test_samples: test,
                    seed_fraction: Some(cfg.data.seed_fraction),
                    rng_seed: data_seed,
                    n_source: cross.n_source(),
                    n_target: cross.n_target(),
                    n_bridges: cross.bridges.len(),
                    source_role: "source".into(),
                    target_role: "target".into(),
                    warnings: vec![],
                    generator: json!({ "synth": cfg.synth, "synth_seed": cfg.stage_seed(stage::SYNTH) }),
                },
                cross,
                samples,
            }
        }
        DataKind::G2s => {
            let world_seed = cfg.stage_seed(stage::WORLD);
            let world = init_world(&cfg.world, world_seed)?;
            let episode_seed = cfg.stage_seed(stage::EPISODE);
            let episodes = run_episodes(&world, &cfg.episode, n, episode_seed)?;
            let generator = json!({
                "world": cfg.world,
                "world_seed": world_seed,
                "episode": cfg.episode,
                "seed_mode": cfg.data.seed_mode,
            });
            let mut d = episodes_to_dataset(&episodes, cfg.data.seed_mode, cfg.world.n_agents, generator)?;
            d.meta.test_samples = test;
            d.meta.rng_seed = episode_seed;
            d
        }
    };
    dataset.save(out)?;
    log::info!(
        "wrote {} samples ({} held out) of {} to {}",
        dataset.samples.len(),
        dataset.meta.test_samples,
        dataset_label(&dataset),
        out.display()
    );
    for w in &dataset.meta.warnings {
        log::warn!("{w}");
    }
    Ok(dataset)
}

pub fn train_model(cfg: &RunConfig, data_dir: &Path, out: &Path) -> CliResult<()> {
    let ds = load_dataset(data_dir)?;
    create_dir(out)?;
    let mut model = CnslModel::new(&ds.cross, cfg.model.clone(), cfg.stage_seed(stage::INIT))?;
    let start = Instant::now();
    let report = train(&mut model, ds.train(), &cfg.train)?;
    let seconds = start.elapsed().as_secs_f64();
    model.save(&out.join(MODEL_FILE), json!({ "train": cfg.train, "dataset": dataset_label(&ds) }))?;

    let mut csv = String::from("step,loss\n");
    for (i, l) in report.loss_history.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    write_text(&out.join("loss_history.csv"), &csv)?;
    let mut csv = String::from("epoch,train_loss,validation_loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        let v = report.validation_losses.get(i).map_or(String::new(), |v| v.to_string());
        let _ = writeln!(csv, "{i},{l},{v}");
    }
    write_text(&out.join("epoch_losses.csv"), &csv)?;
    write_json(&out.join(TRAIN_REPORT_FILE), &json!({ "report": report, "train_seconds": seconds }))?;
    log::info!(
        "trained {} epochs on {} samples in {seconds:.1}s; kept epoch {:?}",
        report.epoch_losses.len(),
        report.train_samples,
        report.best_epoch
    );
    Ok(())
}

fn checkpoint_path(model: &Path) -> PathBuf {
    if model.is_dir() {
        model.join(MODEL_FILE)
    } else {
        model.to_path_buf()
    }
}

fn train_seconds_near(ckpt: &Path) -> f64 {
    let report = ckpt.parent().map(|d| d.join(TRAIN_REPORT_FILE));
    report
        .and_then(|p| std::fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v["train_seconds"].as_f64())
        .unwrap_or(0.0)
}

fn test_indices(ds: &Dataset) -> Vec<usize> {
    let start = ds.samples.len() - ds.test().len();
    (start..ds.samples.len()).collect()
}

fn ensure_test_cases(ds: &Dataset, dir: &Path) -> CliResult<()> {
    if ds.test().is_empty() {
        return Err(CliError::Usage(format!("dataset {} has no held-out test samples", dir.display())));
    }
    Ok(())
}

pub fn infer(cfg: &RunConfig, data_dir: &Path, model: &Path, out: &Path) -> CliResult<()> {
    let ds = load_dataset(data_dir)?;
    ensure_test_cases(&ds, data_dir)?;
    let ckpt = checkpoint_path(model);
    if !ckpt.is_file() {
        return Err(CliError::Usage(format!("no checkpoint at {}", ckpt.display())));
    }
    let (model, _) = CnslModel::load(&ckpt, &ds.cross)?;
    create_dir(out)?;
    let seeds = ds.train_seeds();
    let mut times = Vec::new();
    for (i, s) in ds.test().iter().enumerate() {
        let start = Instant::now();
        let res = infer_seeds(&model, &s.y_t, &seeds, &cfg.infer)?;
        times.push(start.elapsed().as_secs_f64());
        write_case(out, i, &res.probs, &res.seeds, &s.x_s)?;
        write_json(&out.join(format!("case_{i}_trace.json")), &res.trace)?;
    }
    let info = RunInfo {
        method: "CNSL".into(),
        dataset: dataset_label(&ds),
        dataset_dir: data_dir.display().to_string(),
        sample_indices: test_indices(&ds),
        n_source: ds.cross.n_source(),
        train_seconds: train_seconds_near(&ckpt),
        infer_seconds: times,
    };
    write_json(&out.join(RUN_FILE), &info)?;
    log::info!("inferred seeds for {} cases into {}", info.sample_indices.len(), out.display());
    Ok(())
}

pub fn lpsi(cfg: &RunConfig, data_dir: &Path, out: &Path) -> CliResult<()> {
    let ds = load_dataset(data_dir)?;
    ensure_test_cases(&ds, data_dir)?;
    create_dir(out)?;
    let mut times = Vec::new();
    for (i, s) in ds.test().iter().enumerate() {
        let start = Instant::now();
        let res = lpsi_cross(&ds.cross, &s.y_t, &cfg.lpsi)?;
        times.push(start.elapsed().as_secs_f64());
        write_case(out, i, &res.scores, &res.seeds, &s.x_s)?;
        write_json(
            &out.join(format!("case_{i}_trace.json")),
            &json!({ "target_iterations": res.iterations.0, "source_iterations": res.iterations.1, "seeds_selected": res.seeds.count() }),
        )?;
    }
    let info = RunInfo {
        method: "LPSI".into(),
        dataset: dataset_label(&ds),
        dataset_dir: data_dir.display().to_string(),
        sample_indices: test_indices(&ds),
        n_source: ds.cross.n_source(),
        train_seconds: 0.0,
        infer_seconds: times,
    };
    write_json(&out.join(RUN_FILE), &info)?;
    Ok(())
}

/// Groups prediction directories into (dataset, method) cells in order of
/// first appearance.
fn collect_cells(dirs: &[PathBuf]) -> CliResult<Vec<GridCell>> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String), Vec<PredictionRecord>> = BTreeMap::new();
    for d in dirs {
        let (info, records) = read_predictions(d)?;
        let key = (info.dataset, info.method);
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        cells.entry(key).or_default().extend(records);
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let records = cells.remove(&k).unwrap_or_default();
            GridCell {
                dataset: k.0,
                method: k.1,
                records: Ok(records),
            }
        })
        .collect())
}

pub fn evaluate(roots: &[PathBuf], out: &Path) -> CliResult<()> {
    let mut dirs = Vec::new();
    for r in roots {
        if !r.is_dir() {
            return Err(CliError::Usage(format!("predictions directory {} does not exist", r.display())));
        }
        dirs.extend(find_prediction_dirs(r)?);
    }
    dirs.sort();
    dirs.dedup();
    if dirs.is_empty() {
        let names: Vec<String> = roots.iter().map(|r| r.display().to_string()).collect();
        return Err(CliError::Usage(format!("nothing to evaluate: no {RUN_FILE} under {}", names.join(", "))));
    }
    let report = run_experiment_grid(collect_cells(&dirs)?, out)?;
    for m in &report.missing {
        log::warn!("missing: {m}");
    }
    let table = std::fs::read_to_string(out.join("metrics.md")).map_err(|e| io_err(out, e))?;
    print!("{table}");
    Ok(())
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Cnsl,
    Lpsi,
}

/// Train and infer every method on every dataset, then tabulate.
pub fn benchmark(cfg: &RunConfig, datasets: &[PathBuf], methods: &[Method], out: &Path) -> CliResult<()> {
    create_dir(out)?;
    let mut dirs = Vec::new();
    for (j, data) in datasets.iter().enumerate() {
        let ds = load_dataset(data)?;
        let base = out.join(format!("{j}_{}", slug(&dataset_label(&ds))));
        for m in methods {
            let dir = match m {
                Method::Cnsl => {
                    let dir = base.join("cnsl");
                    train_model(cfg, data, &dir)?;
                    infer(cfg, data, &dir, &dir)?;
                    dir
                }
                Method::Lpsi => {
                    let dir = base.join("lpsi");
                    lpsi(cfg, data, &dir)?;
                    dir
                }
            };
            log::info!("{} done on {}", dir.display(), data.display());
            dirs.push(dir);
        }
    }
    let report = run_experiment_grid(collect_cells(&dirs)?, out)?;
    let mut rt = String::from("dataset,method,train_seconds,infer_seconds_mean\n");
    for s in &report.summaries {
        let _ = writeln!(rt, "{},{},{:.3},{:.3}", s.dataset, s.method, s.train_seconds, s.infer_seconds.mean);
    }
    print!("{rt}");
    Ok(())
}

pub fn validate(cfg: &RunConfig, data: Option<&Path>, model: Option<&Path>) -> CliResult<()> {
    println!("config: ok (seed {}, data kind {:?})", cfg.seed, cfg.data.kind);
    let Some(dir) = data else {
        if model.is_some() {
            return Err(CliError::Usage("--model needs --data to check against".into()));
        }
        return Ok(());
    };
    let ds = load_dataset(dir)?;
    let train_seeds = ds.train().iter().map(|s| s.x_s.count()).collect::<Vec<_>>();
    println!(
        "dataset: ok ({}; source {} nodes / {} edges, target {} nodes / {} edges, {} bridges; {} samples, {} held out; seeds per sample {}..={})",
        dataset_label(&ds),
        ds.cross.n_source(),
        ds.cross.source.num_edges(),
        ds.cross.n_target(),
        ds.cross.target.num_edges(),
        ds.cross.bridges.len(),
        ds.samples.len(),
        ds.test().len(),
        train_seeds.iter().min().unwrap_or(&0),
        train_seeds.iter().max().unwrap_or(&0),
    );
    for w in &ds.meta.warnings {
        println!("warning: {w}");
    }
    if let Some(m) = model {
        let ckpt = checkpoint_path(m);
        if !ckpt.is_file() {
            return Err(CliError::Usage(format!("no checkpoint at {}", ckpt.display())));
        }
        let (model, _) = CnslModel::load(&ckpt, &ds.cross)?;
        println!("model: ok ({:?})", model.config);
    }
    Ok(())
}

pub fn agentsim_calibrate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    create_dir(out)?;
    let world = init_world(&cfg.world, cfg.stage_seed(stage::WORLD))?;
    let grid: Vec<(f64, f64)> = cfg.calibrate.grid.iter().map(|&[c, s]| (c, s)).collect();
    if grid.is_empty() {
        return Err(CliError::Config("calibrate.grid is empty".into()));
    }
    let [lo, hi] = cfg.calibrate.band;
    let points = calibrate(&world, &cfg.episode, &grid, cfg.calibrate.episodes, (lo, hi), cfg.stage_seed(stage::EPISODE))?;
    let obs = observe(&world, cfg.episode.observe_rate_coloc, cfg.episode.observe_rate_social, cfg.episode.observation_seed);
    let mut csv = String::from("p_coloc,p_social,mean_infected,min_infected,max_infected,in_band\n");
    for p in &points {
        let _ = writeln!(csv, "{},{},{:.3},{},{},{:.3}", p.p_coloc, p.p_social, p.mean_infected, p.min_infected, p.max_infected, p.in_band);
    }
    write_text(&out.join("calibration.csv"), &csv)?;
    write_json(
        &out.join("world_summary.json"),
        &json!({
            "agents": world.agents.len(),
            "complete_coloc_edges": world.complete_coloc.num_edges(),
            "complete_social_edges": world.social.num_edges(),
            "observed_coloc": [obs.observed_coloc.num_nodes(), obs.observed_coloc.num_edges()],
            "observed_social": [obs.observed_social.num_nodes(), obs.observed_social.num_edges()],
            "bridges": obs.bridges.len(),
        }),
    )?;
    println!(
        "observed co-location {} nodes / {} edges, social {} nodes / {} edges",
        obs.observed_coloc.num_nodes(),
        obs.observed_coloc.num_edges(),
        obs.observed_social.num_nodes(),
        obs.observed_social.num_edges()
    );
    print!("{csv}");
    Ok(())
}
