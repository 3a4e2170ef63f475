use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clickmil::annotator::{
    fit_error_model as fit_model, generate_polygon_corpus, DmaxPolicy, ErrorModel, FitOptions, PolygonCorpus,
    ReplicaAnnotator,
};
use clickmil::config;
use clickmil::datastore::{
    load_error_model, load_metrics, load_polygons, load_selections, read_clicks, read_json, save_error_model,
    save_metrics, save_polygons, save_selections, save_trace, write_atomic, write_clicks, write_json, ClickEntry,
    Dataset, SyntheticConfig, CLICKS_FILE, ERROR_MODEL_FILE, GT_FILE, MANIFEST_FILE, METRICS_FILE, POLYGONS_FILE,
    PROPOSALS_FILE, SELECTIONS_FILE, TRACE_FILE,
};
use clickmil::eval::{annotation_time, AnnotationMode, ApMode, MetricReport};
use clickmil::mil::{AppearanceModel, MilConfig, Supervision, SvmParams};
use clickmil::pipeline;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::provenance::Run;
use crate::settings::{Resolver, UsageError};
use crate::{Evaluate, FitErrorModel, GenPolygons, GenSynthetic, Report, Serve, SimulateClicks, Train};

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.txt";
const REPLICA: &str = "replica";

/// Trained appearance models plus the configuration that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub mil: MilConfig,
    pub models: BTreeMap<String, AppearanceModel>,
}

fn dataset_inputs(run: &mut Run, data: &Path) {
    for f in [MANIFEST_FILE, PROPOSALS_FILE, GT_FILE] {
        run.input(data.join(f));
    }
}

fn load_dataset(data: &Path) -> Result<Dataset> {
    Dataset::load(data).with_context(|| format!("cannot load dataset {}", data.display()))
}

fn parse_supervision(s: &str) -> Result<Supervision> {
    s.parse()
        .map_err(|_| anyhow!("invalid config field `supervision`: expected none, one-click or two-click, got `{s}`"))
}

fn parse_ap_mode(s: &str) -> Result<ApMode> {
    match s.replace('_', "-").as_str() {
        "eleven-point" => Ok(ApMode::ElevenPoint),
        "all-point" => Ok(ApMode::AllPoint),
        _ => Err(anyhow!("invalid config field `ap_mode`: expected eleven-point or all-point, got `{s}`")),
    }
}

fn parse_d_max(s: &str) -> Result<DmaxPolicy> {
    if s == "percentile" {
        return Ok(DmaxPolicy::Percentile);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(DmaxPolicy::Pinned(v)),
        _ => Err(anyhow!("invalid config field `d_max`: expected pixels > 0 or `percentile`, got `{s}`")),
    }
}

/// An explicit error-model file, or the model fitted on the replica corpus.
fn error_model_from(path: &Option<String>, run: &mut Run) -> Result<ErrorModel> {
    match path.as_deref() {
        None | Some(REPLICA) => Ok(pipeline::replica_error_model(pipeline::REPLICA_SEED, &FitOptions::default())?),
        Some(p) => {
            let p = PathBuf::from(p);
            let m = load_error_model(&p).with_context(|| format!("cannot load error model {}", p.display()))?;
            run.input(p);
            Ok(m)
        }
    }
}

pub fn gen_polygons(a: GenPolygons, cfg: Option<&Path>) -> Result<()> {
    let mut r = Resolver::new(cfg, "gen-polygons")?;
    let out: PathBuf = r.get("out", a.out, "polygons".into())?;
    let count = r.get("count", a.count, pipeline::REPLICA_POLYGONS)?;
    let per = r.get("clicks_per_polygon", a.clicks_per_polygon, config::CLICKS_PER_OBJECT)?;
    let seed = r.get("seed", a.seed, pipeline::REPLICA_SEED)?;
    let mut run = Run::new("gen-polygons", r.finish()?, Some(seed));

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let corpus = generate_polygon_corpus(
        &mut rng,
        count,
        per,
        config::QUALIFICATION_CANVAS,
        &ReplicaAnnotator::default(),
    )?;
    std::fs::create_dir_all(&out)?;
    let clicks: Vec<ClickEntry> = corpus
        .clicks
        .iter()
        .enumerate()
        .map(|(i, c)| ClickEntry {
            seq: i as u64,
            image_id: c.target_id.clone(),
            class: "polygon".into(),
            annotator_id: c.annotator_id.clone(),
            x: c.position.x,
            y: c.position.y,
            time_ms: c.response_time_ms,
            supersedes: None,
        })
        .collect();
    save_polygons(&out.join(POLYGONS_FILE), corpus.canvas, &corpus.polygons)?;
    write_clicks(&out.join(CLICKS_FILE), &clicks)?;
    run.output(out.join(POLYGONS_FILE));
    run.output(out.join(CLICKS_FILE));
    run.write(&out)?;
    println!("{count} polygons, {} clicks -> {}", clicks.len(), out.display());
    Ok(())
}

pub fn fit_error_model(a: FitErrorModel, cfg: Option<&Path>) -> Result<()> {
    let mut r = Resolver::new(cfg, "fit-error-model")?;
    let dir: PathBuf = r.required("polygons", a.polygons)?;
    let out: PathBuf = r.get("out", a.out, "error-model".into())?;
    let mu_degree = r.get("mu_degree", a.mu_degree, config::MU_DEGREE)?;
    let sim_law_degree = r.get("sim_law_degree", a.sim_law_degree, config::SIM_LAW_DEGREE)?;
    let d_max: String = r.get("d_max", a.d_max, config::D_MAX_PX.to_string())?;
    let opts = FitOptions {
        mu_degree,
        sim_law_degree,
        d_max: parse_d_max(&d_max)?,
        ..FitOptions::default()
    };
    let mut run = Run::new("fit-error-model", r.finish()?, None);

    let (canvas, polygons) = load_polygons(&dir.join(POLYGONS_FILE))?;
    let clicks = read_clicks(&dir.join(CLICKS_FILE))?;
    if clicks.is_empty() {
        return Err(anyhow!("no clicks in {}", dir.join(CLICKS_FILE).display()));
    }
    run.input(dir.join(POLYGONS_FILE));
    run.input(dir.join(CLICKS_FILE));
    let corpus = PolygonCorpus {
        canvas,
        polygons,
        clicks: clicks.iter().map(ClickEntry::to_record).collect(),
    };
    let model = fit_model(&corpus, &opts)?;
    std::fs::create_dir_all(&out)?;
    save_error_model(&out.join(ERROR_MODEL_FILE), &model)?;
    run.output(out.join(ERROR_MODEL_FILE));
    run.write(&out)?;
    println!(
        "sigma_bc {:.3} px, d_max {:.1} px, sigma_ba {:.4}, mu degree {}",
        model.sigma_bc,
        model.d_max,
        model.sigma_ba,
        model.mu_coeffs.degree()
    );
    Ok(())
}

pub fn gen_synthetic(a: GenSynthetic, cfg: Option<&Path>) -> Result<()> {
    let d = SyntheticConfig::default();
    let mut r = Resolver::new(cfg, "gen-synthetic")?;
    let out: PathBuf = r.get("out", a.out, "data".into())?;
    let sc = SyntheticConfig {
        name: d.name,
        seed: r.get("seed", a.seed, d.seed)?,
        classes: r.get("classes", a.classes, d.classes)?,
        positive_images: r.get("positive_images", a.positive_images, d.positive_images)?,
        negative_images: r.get("negative_images", a.negative_images, d.negative_images)?,
        test_images: r.get("test_images", a.test_images, d.test_images)?,
        proposals_per_image: r.get("proposals", a.proposals, d.proposals_per_image)?,
        feature_dim: r.get("feature_dim", a.feature_dim, d.feature_dim)?,
        feature_noise: r.get("feature_noise", a.feature_noise, d.feature_noise)?,
        iou_floor: r.get("iou_floor", a.iou_floor, d.iou_floor)?,
        overlap: r.get("overlap", a.overlap, d.overlap)?,
        objectness_noise: r.get("objectness_noise", a.objectness_noise, d.objectness_noise)?,
    };
    let mut run = Run::new("gen-synthetic", r.finish()?, Some(sc.seed));
    let ds = clickmil::datastore::generate_synthetic(&sc)?;
    ds.save(&out)?;
    for f in [MANIFEST_FILE, PROPOSALS_FILE, GT_FILE] {
        run.output(out.join(f));
    }
    run.write(&out)?;
    println!(
        "{} images ({} train / {} test) -> {}",
        ds.manifest.images.len(),
        ds.manifest.images.iter().filter(|i| i.split == clickmil::datastore::Split::Train).count(),
        ds.manifest.images.iter().filter(|i| i.split == clickmil::datastore::Split::Test).count(),
        out.display()
    );
    Ok(())
}

pub fn simulate_clicks(a: SimulateClicks, cfg: Option<&Path>) -> Result<()> {
    let mut r = Resolver::new(cfg, "simulate-clicks")?;
    let data: PathBuf = r.get("data", a.data, "data".into())?;
    let model_path = r.get("error_model", a.error_model.map(|p| p.display().to_string()), REPLICA.to_string())?;
    let clicks_per_object = r.get("clicks", a.clicks, config::CLICKS_PER_OBJECT)?;
    let seed: u64 = r.required("seed", a.seed)?;
    let out: PathBuf = r.get("out", a.out, "clicks".into())?;
    let mut run = Run::new("simulate-clicks", r.finish()?, Some(seed));

    let ds = load_dataset(&data)?;
    dataset_inputs(&mut run, &data);
    let model = error_model_from(&Some(model_path), &mut run)?;
    let clicks = pipeline::simulate_dataset_clicks(&ds, &model, clicks_per_object, seed);
    std::fs::create_dir_all(&out)?;
    write_clicks(&out.join(CLICKS_FILE), &clicks)?;
    run.output(out.join(CLICKS_FILE));
    run.write(&out)?;
    println!("{} clicks -> {}", clicks.len(), out.join(CLICKS_FILE).display());
    Ok(())
}

pub fn train(a: Train, cfg: Option<&Path>) -> Result<()> {
    let d = MilConfig::default();
    let mut r = Resolver::new(cfg, "train")?;
    let data: PathBuf = r.get("data", a.data, "data".into())?;
    let supervision = parse_supervision(&r.get("supervision", a.supervision, "none".into())?)?;
    let clicks: Option<PathBuf> = r.optional("clicks", a.clicks)?;
    let model_path = r.get("error_model", a.error_model.map(|p| p.display().to_string()), REPLICA.to_string())?;
    let seed: u64 = r.required("seed", a.seed)?;
    let mut mil = MilConfig {
        folds: r.get("folds", a.folds, d.folds)?,
        iterations: r.get("iterations", a.iterations, d.iterations)?,
        deep_mil_surrogate_iterations: r.get(
            "deep_mil_iterations",
            a.deep_mil_iterations,
            d.deep_mil_surrogate_iterations,
        )?,
        svm: SvmParams {
            lambda: r.get("lambda", a.lambda, d.svm.lambda)?,
            ..d.svm
        },
        negatives_per_image: r.get("negatives_per_image", a.negatives_per_image, d.negatives_per_image)?,
        supervision,
        error_model: None,
        seed,
    };
    let out: PathBuf = r.get("out", a.out, "run".into())?;
    let mut run = Run::new("train", r.finish()?, Some(seed));

    let ds = load_dataset(&data)?;
    dataset_inputs(&mut run, &data);
    let entries = match (supervision, clicks) {
        (Supervision::None, _) => Vec::new(),
        (_, None) => {
            return Err(UsageError(format!("`clicks` is required for {supervision} supervision: pass --clicks")).into())
        }
        (_, Some(p)) => {
            let p = if p.is_dir() { p.join(CLICKS_FILE) } else { p };
            let e = read_clicks(&p).with_context(|| format!("cannot read clicks {}", p.display()))?;
            run.input(p);
            e
        }
    };
    if supervision != Supervision::None {
        mil.error_model = Some(error_model_from(&Some(model_path), &mut run)?);
    }
    mil.validate()?;

    let trained = pipeline::train(&ds, &entries, &mil)?;
    for (class, id) in &trained.skipped {
        eprintln!("warning: {class}/{id} has no proposals; skipped");
    }
    std::fs::create_dir_all(&out)?;
    save_selections(&out.join(SELECTIONS_FILE), &trained.selections)?;
    save_trace(&out.join(TRACE_FILE), &trained.trace)?;
    write_json(
        &out.join(MODEL_FILE),
        &ModelFile {
            schema_version: 1,
            mil,
            models: trained.models,
        },
    )?;
    for f in [SELECTIONS_FILE, TRACE_FILE, MODEL_FILE] {
        run.output(out.join(f));
    }
    run.write(&out)?;
    for (class, corloc) in pipeline::corloc_per_class(&ds, &trained.selections) {
        println!("{class}: CorLoc {:.1}%", 100.0 * corloc);
    }
    Ok(())
}

pub fn evaluate(a: Evaluate, cfg: Option<&Path>) -> Result<()> {
    let mut r = Resolver::new(cfg, "evaluate")?;
    let data: PathBuf = r.get("data", a.data, "data".into())?;
    let run_dir: PathBuf = r.get("run", a.run, "run".into())?;
    let mode = parse_ap_mode(&r.get("ap_mode", a.ap_mode, "eleven-point".into())?)?;
    let out: PathBuf = r.get("out", a.out, "eval".into())?;
    let mut run = Run::new("evaluate", r.finish()?, None);

    let ds = load_dataset(&data)?;
    dataset_inputs(&mut run, &data);
    let model: ModelFile = read_json(&run_dir.join(MODEL_FILE))?;
    let selections = load_selections(&run_dir.join(SELECTIONS_FILE))?;
    run.input(run_dir.join(MODEL_FILE));
    run.input(run_dir.join(SELECTIONS_FILE));
    let report = pipeline::evaluate(&ds, &selections, &model.models, &model.mil, mode);
    std::fs::create_dir_all(&out)?;
    save_metrics(&out.join(METRICS_FILE), &report)?;
    run.output(out.join(METRICS_FILE));
    run.write(&out)?;
    println!(
        "{}: CorLoc {:.1}%, mAP {:.1}%, {:.2} h annotation",
        report.supervision,
        100.0 * report.corloc,
        100.0 * report.map,
        report.annotation_time_hours
    );
    Ok(())
}

pub fn serve(a: Serve, cfg: Option<&Path>) -> Result<()> {
    let d = clickmil_service::ServiceConfig::default();
    let mut r = Resolver::new(cfg, "serve")?;
    let data: PathBuf = r.get("data", a.data, "data".into())?;
    let store: PathBuf = r.get("store", a.store, "store".into())?;
    let addr: String = r.get("addr", a.addr, "127.0.0.1:8080".into())?;
    let sc = clickmil_service::ServiceConfig {
        clicks_per_object: r.get("clicks_per_object", a.clicks_per_object, d.clicks_per_object)?,
        golden_per_class: r.get("golden_per_class", a.golden_per_class, d.golden_per_class)?,
        seed: r.get("seed", a.seed, d.seed)?,
        ..d
    };
    let addr: SocketAddr = addr
        .parse()
        .map_err(|e| anyhow!("invalid config field `addr`: {e}"))?;
    let mut run = Run::new("serve", r.finish()?, Some(sc.seed));

    let ds = load_dataset(&data)?;
    dataset_inputs(&mut run, &data);
    std::fs::create_dir_all(&store)?;
    let service = clickmil_service::Service::open(&ds, &store, sc)?;
    run.write(&store)?;

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(rayon::current_num_threads())
        .enable_all()
        .build()?;
    println!("serving on http://{addr}");
    runtime.block_on(clickmil_service::serve(addr, Arc::new(service)))?;
    Ok(())
}

fn render_report(reports: &[(PathBuf, MetricReport)]) -> String {
    use std::fmt::Write;
    let mut rows: Vec<(f64, String)> = reports
        .iter()
        .map(|(path, m)| {
            let sup = if m.deep_mil_surrogate {
                format!("{}*", m.supervision)
            } else {
                m.supervision.to_string()
            };
            let line = format!(
                "{:<12} {:>7} {:>9.2} {:>8.1} {:>7.1}  {}",
                sup,
                m.positive_pairs,
                m.annotation_time_hours,
                100.0 * m.corloc,
                100.0 * m.map,
                path.display()
            );
            (m.annotation_time_hours, line)
        })
        .collect();
    // reference: the same pairs annotated with drawn boxes
    if let Some(pairs) = reports.iter().map(|(_, m)| m.positive_pairs).max() {
        let hours = annotation_time(pairs, AnnotationMode::DrawnBox);
        rows.push((
            hours,
            format!("{:<12} {:>7} {:>9.2} {:>8} {:>7}  reference", "drawn_box", pairs, hours, "-", "-"),
        ));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>7} {:>9} {:>8} {:>7}  source", "supervision", "pairs", "hours", "CorLoc", "mAP");
    for (_, line) in rows {
        let _ = writeln!(s, "{line}");
    }
    if reports.iter().any(|(_, m)| m.deep_mil_surrogate) {
        let _ = writeln!(s, "* includes the linear deep-MIL surrogate iterations");
    }
    s
}

pub fn report(a: Report, cfg: Option<&Path>) -> Result<()> {
    let mut r = Resolver::new(cfg, "report")?;
    let metrics: Vec<PathBuf> = r.get("metrics", (!a.metrics.is_empty()).then_some(a.metrics), Vec::new())?;
    let out: PathBuf = r.get("out", a.out, "report".into())?;
    if metrics.is_empty() {
        return Err(UsageError("`metrics` is required: pass one or more metrics.json paths".into()).into());
    }
    let mut run = Run::new("report", r.finish()?, None);

    let mut reports = Vec::new();
    for p in metrics {
        let p = if p.is_dir() { p.join(METRICS_FILE) } else { p };
        let m = load_metrics(&p).with_context(|| format!("cannot read metrics {}", p.display()))?;
        run.input(&p);
        reports.push((p, m));
    }
    let table = render_report(&reports);
    std::fs::create_dir_all(&out)?;
    write_atomic(&out.join(REPORT_FILE), |w| {
        w.write_all(table.as_bytes())
            .map_err(|e| clickmil::Error::Io {
                path: REPORT_FILE.into(),
                source: e,
            })
    })?;
    run.output(out.join(REPORT_FILE));
    run.write(&out)?;
    print!("{table}");
    Ok(())
}
