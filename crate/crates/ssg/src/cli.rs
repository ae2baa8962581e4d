//! The `ssg` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use ssg_core::encoder::ObjectEncoder;
use ssg_core::eval::diagnostics::{
    embedding_diagnostics, entropy, entropy_error_histogram, error_category_table, factorization_check, marginalize,
    ConditionalTable, DiscreteWorld,
};
use ssg_core::eval::{metrics_report, triplet_recall_at_k, PredictionDump, TrainStatistics};
use ssg_core::model::{ModelConfig, SceneGraphModel, ENCODER_PREFIX};
use ssg_core::scene::{center, downsample, Scene};
use ssg_core::synth::generate_dataset;
use ssg_core::trainer::{
    objects_from_scenes, predict_dump, prepare_inputs, run_pretraining, run_sg_training, AblationFlags,
};
use ssg_core::ParameterStore;

use crate::checkpoint::{blob_path, load_checkpoint, save_checkpoint, CheckpointKind, CheckpointMeta};
use crate::config::{load_config, FactorizationWorld, RunConfig};
use crate::dump::{load_dump, save_dump};
use crate::manifest::{manifest_path, Manifest};
use crate::report::{
    class_cosine_csv, embeddings_csv, entropy_histogram_csv, error_table_csv, filter_report, save_report, to_csv, GC,
    NO_GC,
};
use crate::scenes::{load_scenes, save_scenes};
use crate::{write_bytes, Error, Result};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const ENCODER_FILE: &str = "encoder.json";
pub const MODEL_FILE: &str = "model.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const THREADS_ENV: &str = "SSG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ssg", version, about = "3D semantic scene-graph pipeline on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Run configuration, JSON or TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Gse,
    Beg,
    Lse,
    Ofl,
    Gating,
}

impl Component {
    fn name(self) -> &'static str {
        match self {
            Component::Gse => "gse",
            Component::Beg => "beg",
            Component::Lse => "lse",
            Component::Ofl => "ofl",
            Component::Gating => "gating",
        }
    }

    fn slot(self, f: &mut AblationFlags) -> &mut bool {
        match self {
            Component::Gse => &mut f.gse,
            Component::Beg => &mut f.beg,
            Component::Lse => &mut f.lse,
            Component::Ofl => &mut f.ofl,
            Component::Gating => &mut f.gating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset into `--out`.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining of the object encoder.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scene-graph training; `--ckpt` is the pretrained encoder.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Exactly the enabled components; unlisted ones are switched off.
        #[arg(long, value_delimiter = ',')]
        flags: Option<Vec<Component>>,
    },
    /// Write a prediction dump from a scene-graph checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitChoice,
    },
    /// Metrics from a prediction dump alone.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Training data for the head/body/tail and seen/unseen rows.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long, action = clap::ArgAction::Set)]
        graph_constraint: Option<bool>,
    },
    /// Entropy histogram, error table, factorization check and, with a
    /// checkpoint and data, embedding diagnostics.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train every on/off combination of the listed components.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained encoder; pretrained on `--data` when absent.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "gse,beg,lse")]
        flags: Vec<Component>,
        #[arg(long, value_delimiter = ',', default_value = "50")]
        k: Vec<usize>,
        #[arg(long, action = clap::ArgAction::Set, default_value = "true")]
        graph_constraint: bool,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let cfg = load_config(common.config.as_deref())?;
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn manifest(command: &str, args: &[String], common: &Common, cfg: &RunConfig) -> Result<Manifest> {
    let mut m = Manifest::new(command, args.to_vec(), common.seed, cfg);
    if let Some(p) = &common.config {
        m.input(p)?;
    }
    Ok(m)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::invalid(e.to_string()))
}

struct Dataset {
    train: Vec<Scene>,
    val: Vec<Scene>,
}

fn load_data(dir: &Path, m: &mut Manifest) -> Result<Dataset> {
    let (tp, vp) = (dir.join(TRAIN_FILE), dir.join(VAL_FILE));
    let data = Dataset {
        train: load_scenes(&tp)?,
        val: load_scenes(&vp)?,
    };
    m.input(&tp)?;
    m.input(&vp)?;
    Ok(data)
}

fn check_labels(scenes: &[Scene], model: &ModelConfig) -> Result<()> {
    for s in scenes {
        if let Some(i) = s.instances.iter().find(|i| i.label >= model.n_obj) {
            return Err(Error::invalid(format!("{}: label {} exceeds {} classes", s.id, i.label, model.n_obj)));
        }
        if let Some(e) = s.edges.iter().find(|e| e.preds.iter().any(|&p| p >= model.n_pred)) {
            return Err(Error::invalid(format!("{}: edge {}->{} has an unknown predicate", s.id, e.sub, e.obj)));
        }
    }
    Ok(())
}

fn load_encoder(path: &Path, model: &ModelConfig, m: &mut Manifest) -> Result<ParameterStore> {
    let (store, meta) = load_checkpoint(path)?;
    m.input(path)?;
    m.input(&blob_path(path))?;
    if meta.model.encoder != model.encoder {
        return Err(Error::invalid(format!("{}: encoder configuration differs from the run's", path.display())));
    }
    Ok(match meta.kind {
        CheckpointKind::Encoder => store,
        CheckpointKind::SceneGraph => store.extract(ENCODER_PREFIX),
    })
}

fn run(command: Command, args: Vec<String>) -> Result<()> {
    match command {
        Command::Gen { common, out } => gen(&common, &out, &args),
        Command::Pretrain { common, data, out } => pretrain(&common, &data, &out, &args),
        Command::Train {
            common,
            data,
            ckpt,
            out,
            flags,
        } => train(&common, &data, ckpt.as_deref(), &out, flags.as_deref(), &args),
        Command::Predict {
            common,
            ckpt,
            data,
            dump,
            split,
        } => predict(&common, &ckpt, &data, &dump, split, &args),
        Command::Eval {
            common,
            dump,
            report,
            data,
            k,
            graph_constraint,
        } => eval(&common, &dump, &report, data.as_deref(), k.as_deref(), graph_constraint, &args),
        Command::Analyze {
            common,
            dump,
            out,
            ckpt,
            data,
        } => analyze(&common, &dump, &out, ckpt.as_deref(), data.as_deref(), &args),
        Command::Ablate {
            common,
            data,
            ckpt,
            out,
            flags,
            k,
            graph_constraint,
        } => ablate(&common, &data, ckpt.as_deref(), &out, &flags, &k, graph_constraint, &args),
    }
}

fn gen(common: &Common, out: &Path, args: &[String]) -> Result<()> {
    let cfg = resolve(common)?;
    let mut m = manifest("gen", args, common, &cfg)?;
    let (train, val) = generate_dataset(&cfg.data)?;
    for (file, scenes) in [(TRAIN_FILE, &train), (VAL_FILE, &val)] {
        let p = out.join(file);
        save_scenes(&p, scenes)?;
        m.output(&p)?;
    }
    m.summary = json!({ "train_scenes": train.len(), "val_scenes": val.len() });
    log::info!("wrote {} train and {} val scenes to {}", train.len(), val.len(), out.display());
    m.save(&manifest_path(out, "gen"))
}

fn pretrain(common: &Common, data: &Path, out: &Path, args: &[String]) -> Result<()> {
    let cfg = resolve(common)?;
    let mut m = manifest("pretrain", args, common, &cfg)?;
    let ds = load_data(data, &mut m)?;
    let model = cfg.model();
    check_labels(&ds.train, &model)?;
    check_labels(&ds.val, &model)?;
    let enc = ObjectEncoder::new(model.encoder.clone(), ENCODER_PREFIX);
    let res = run_pretraining(
        &enc,
        model.n_obj,
        &objects_from_scenes(&ds.train),
        &objects_from_scenes(&ds.val),
        &cfg.pretrain,
    )?;
    let ckpt = out.join(ENCODER_FILE);
    let meta = CheckpointMeta {
        kind: CheckpointKind::Encoder,
        model,
        flags: None,
    };
    save_checkpoint(&ckpt, &res.store, &meta)?;
    let history = out.join("pretrain_history.json");
    write_bytes(&history, to_json(&res.history)?.as_bytes())?;
    for p in [ckpt.clone(), blob_path(&ckpt), history] {
        m.output(&p)?;
    }
    m.summary = json!({ "best_epoch": res.best_epoch, "last": res.history.last() });
    m.save(&manifest_path(out, "pretrain"))
}

fn train(
    common: &Common,
    data: &Path,
    ckpt: Option<&Path>,
    out: &Path,
    flags: Option<&[Component]>,
    args: &[String],
) -> Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(list) = flags {
        let mut f = AblationFlags {
            gse: false,
            beg: false,
            lse: false,
            ofl: false,
            gating: false,
        };
        for c in list {
            *c.slot(&mut f) = true;
        }
        cfg.train.flags = f;
    }
    let mut m = manifest("train", args, common, &cfg)?;
    let ds = load_data(data, &mut m)?;
    let model = cfg.model();
    check_labels(&ds.train, &model)?;
    check_labels(&ds.val, &model)?;
    let encoder = match ckpt {
        Some(p) => Some(load_encoder(p, &model, &mut m)?),
        None if cfg.train.flags.ofl => {
            return Err(Error::invalid("train needs --ckpt with a pretrained encoder unless ofl is off"));
        }
        None => None,
    };
    let res = run_sg_training(&model, &ds.train, &ds.val, encoder.as_ref(), &cfg.train)?;
    let path = out.join(MODEL_FILE);
    let meta = CheckpointMeta {
        kind: CheckpointKind::SceneGraph,
        model,
        flags: Some(cfg.train.flags),
    };
    save_checkpoint(&path, &res.store, &meta)?;
    let history = out.join("train_history.json");
    write_bytes(&history, to_json(&res.history)?.as_bytes())?;
    for p in [path.clone(), blob_path(&path), history] {
        m.output(&p)?;
    }
    m.summary = json!({ "best_epoch": res.best_epoch, "last": res.history.last() });
    m.save(&manifest_path(out, "train"))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn predict(common: &Common, ckpt: &Path, data: &Path, dump: &Path, split: SplitChoice, args: &[String]) -> Result<()> {
    let cfg = resolve(common)?;
    let mut m = manifest("predict", args, common, &cfg)?;
    let (store, meta) = load_checkpoint(ckpt)?;
    m.input(ckpt)?;
    m.input(&blob_path(ckpt))?;
    let flags = match (meta.kind, meta.flags) {
        (CheckpointKind::SceneGraph, Some(f)) => f,
        _ => return Err(Error::invalid(format!("{} is not a scene-graph checkpoint", ckpt.display()))),
    };
    let ds = load_data(data, &mut m)?;
    let scenes: Vec<Scene> = match split {
        SplitChoice::Train => ds.train,
        SplitChoice::Val => ds.val,
        SplitChoice::All => ds.train.into_iter().chain(ds.val).collect(),
    };
    check_labels(&scenes, &meta.model)?;
    let model = SceneGraphModel::new(meta.model, flags.gnn());
    let inputs = prepare_inputs(&model, &store, &scenes, flags.ofl)?;
    let out = predict_dump(&model, &store, &inputs);
    save_dump(dump, &out)?;
    m.output(dump)?;
    m.summary = json!({ "scenes": out.scenes.len() });
    m.save(&sidecar(dump))
}

fn eval(
    common: &Common,
    dump: &Path,
    report: &Path,
    data: Option<&Path>,
    ks: Option<&[usize]>,
    gc: Option<bool>,
    args: &[String],
) -> Result<()> {
    let cfg = resolve(common)?;
    let mut m = manifest("eval", args, common, &cfg)?;
    let d = load_dump(dump)?;
    m.input(dump)?;
    let stats = match data {
        Some(dir) => {
            let p = dir.join(TRAIN_FILE);
            let train = load_scenes(&p)?;
            m.input(&p)?;
            Some(TrainStatistics::from_scenes(&train, d.n_pred()))
        }
        None => None,
    };
    let full = metrics_report(&d, stats.as_ref(), cfg.eval);
    let rep = filter_report(&full, ks, gc);
    save_report(report, &rep)?;
    m.output(report)?;
    m.output(&crate::report::json_mirror_path(report))?;
    m.summary = json!({ "rows": rep.entries.len() });
    m.save(&sidecar(report))
}

#[derive(Serialize)]
struct FactorizationSummary {
    max_deviation: f64,
    sweep_entropies: Vec<f64>,
    strictly_decreasing: bool,
}

fn factorization_summary(w: &FactorizationWorld) -> Result<FactorizationSummary> {
    let c = w.prior.len();
    let table = ConditionalTable::new(c, w.n_outcomes, w.table.clone())?;
    let world = DiscreteWorld::new(w.prior.clone(), w.likelihood.clone(), table.clone())?;
    let n_obs = w.likelihood.first().map_or(0, Vec::len);
    let mut max_deviation: f64 = 0.0;
    for zi in 0..n_obs {
        for zj in 0..n_obs {
            let d = factorization_check(
                &table,
                &world.posterior(zi),
                &world.posterior(zj),
                &world.direct_edge_posterior(zi, zj),
            )?;
            max_deviation = max_deviation.max(d);
        }
    }
    // Both posteriors move from uniform to one-hot on class 0.
    let steps = w.sweep_steps.max(1);
    let mut sweep_entropies = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let post: Vec<f64> = (0..c)
            .map(|k| (1.0 - t) / c as f64 + if k == 0 { t } else { 0.0 })
            .collect();
        sweep_entropies.push(entropy(&marginalize(&table, &post, &post)?));
    }
    let strictly_decreasing = sweep_entropies.windows(2).all(|p| p[1] < p[0]);
    Ok(FactorizationSummary {
        max_deviation,
        sweep_entropies,
        strictly_decreasing,
    })
}

fn analyze(
    common: &Common,
    dump: &Path,
    out: &Path,
    ckpt: Option<&Path>,
    data: Option<&Path>,
    args: &[String],
) -> Result<()> {
    let cfg = resolve(common)?;
    let mut m = manifest("analyze", args, common, &cfg)?;
    let d: PredictionDump = load_dump(dump)?;
    m.input(dump)?;
    let mut files: Vec<(PathBuf, String)> = vec![
        (
            out.join("entropy_histogram.csv"),
            entropy_histogram_csv(&entropy_error_histogram(&d, cfg.analyze.entropy_bins)?)?,
        ),
        (out.join("error_table.csv"), error_table_csv(&error_category_table(&d))?),
    ];
    if let Some(w) = &cfg.analyze.factorization {
        files.push((out.join("factorization.json"), to_json(&factorization_summary(w)?)?));
    }
    match (ckpt, data) {
        (Some(ck), Some(dir)) => {
            let model = cfg.model();
            let store = load_encoder(ck, &model, &mut m)?;
            let ds = load_data(dir, &mut m)?;
            let scenes: Vec<Scene> = ds.train.into_iter().chain(ds.val).collect();
            check_labels(&scenes, &model)?;
            let enc = ObjectEncoder::new(model.encoder.clone(), "");
            let objects = objects_from_scenes(&scenes);
            let emb: Vec<Vec<f64>> = objects
                .iter()
                .map(|o| enc.embed(&store, &center(&downsample(&o.points, model.encoder.n_points, o.key))))
                .collect();
            let labels: Vec<usize> = objects.iter().map(|o| o.label).collect();
            let diag = embedding_diagnostics(&emb, &labels)?;
            files.push((out.join("class_cosine.csv"), class_cosine_csv(&diag)?));
            files.push((out.join("embeddings.csv"), embeddings_csv(&emb, &labels)?));
            m.summary = json!({ "intra_mean": diag.intra_mean, "inter_mean": diag.inter_mean });
        }
        (None, None) => {}
        _ => return Err(Error::invalid("embedding diagnostics need both --ckpt and --data")),
    }
    for (p, text) in &files {
        write_bytes(p, text.as_bytes())?;
        m.output(p)?;
    }
    m.save(&manifest_path(out, "analyze"))
}

/// Worker threads: `SSG_THREADS` when set, else the available parallelism.
pub fn worker_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `jobs` on at most `threads` scoped workers; results keep job order.
pub fn parallel_map<T, R, F>(jobs: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = f(job);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Every on/off assignment of `components` over `base`, all-on first.
pub fn sweep(base: AblationFlags, components: &[Component]) -> Vec<AblationFlags> {
    let n = components.len();
    (0..1usize << n)
        .map(|mask| {
            let mut f = base;
            for (i, c) in components.iter().enumerate() {
                *c.slot(&mut f) = mask >> (n - 1 - i) & 1 == 0;
            }
            f
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn ablate(
    common: &Common,
    data: &Path,
    ckpt: Option<&Path>,
    out: &Path,
    components: &[Component],
    ks: &[usize],
    gc: bool,
    args: &[String],
) -> Result<()> {
    if components.iter().enumerate().any(|(i, c)| components[..i].contains(c)) {
        return Err(Error::invalid("--flags lists a component twice"));
    }
    let cfg = resolve(common)?;
    let mut m = manifest("ablate", args, common, &cfg)?;
    let ds = load_data(data, &mut m)?;
    let model = cfg.model();
    check_labels(&ds.train, &model)?;
    check_labels(&ds.val, &model)?;
    let configs = sweep(cfg.train.flags, components);
    let encoder = match ckpt {
        Some(p) => Some(load_encoder(p, &model, &mut m)?),
        None if configs.iter().any(|f| f.ofl) => {
            let enc = ObjectEncoder::new(model.encoder.clone(), ENCODER_PREFIX);
            let res = run_pretraining(
                &enc,
                model.n_obj,
                &objects_from_scenes(&ds.train),
                &objects_from_scenes(&ds.val),
                &cfg.pretrain,
            )?;
            Some(res.store)
        }
        None => None,
    };
    let eval_scenes = if ds.val.is_empty() {
        log::warn!("no validation scenes; scoring the training scenes");
        &ds.train
    } else {
        &ds.val
    };
    let threads = worker_threads()?;
    let results = parallel_map(&configs, threads, |&flags| -> Result<PredictionDump> {
        let tc = ssg_core::trainer::TrainConfig {
            flags,
            ..cfg.train.clone()
        };
        // Held-out scenes are only scored, never used for selection.
        let run = run_sg_training(&model, &ds.train, &[], encoder.as_ref(), &tc)?;
        let inputs = prepare_inputs(&run.model, &run.store, eval_scenes, flags.ofl)?;
        Ok(predict_dump(&run.model, &run.store, &inputs))
    });
    let mut header: Vec<String> = vec!["configuration".into()];
    header.extend(components.iter().map(|c| c.name().to_string()));
    header.extend(["metric", "k", "constraint", "value"].map(String::from));
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, (flags, dump)) in configs.iter().zip(results).enumerate() {
        let dump = dump?;
        for &k in ks {
            let r = triplet_recall_at_k(&dump, k, gc, cfg.eval);
            let mut row = vec![i.to_string()];
            let mut f = *flags;
            row.extend(components.iter().map(|c| c.slot(&mut f).to_string()));
            row.push("triplet_mR".into());
            row.push(k.to_string());
            row.push(if gc { GC } else { NO_GC }.into());
            row.push(r.mr.map_or(String::new(), |v| v.to_string()));
            rows.push(row);
        }
    }
    let text = to_csv(std::iter::once(header).chain(rows.iter().cloned()))?;
    let path = out.join(ABLATION_FILE);
    write_bytes(&path, text.as_bytes())?;
    m.output(&path)?;
    m.summary = json!({ "rows": rows.len(), "threads": threads });
    m.save(&manifest_path(out, "ablate"))
}
