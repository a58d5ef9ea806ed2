//! End-to-end commands over an artifact directory: preprocessing, training,
//! evaluation, footprint estimation and Bloom row inspection.
//!
//! Layout of `output`:
//!
//! ```text
//! entities.dict  relations.dict        id<TAB>label
//! bloom.ghbf                           Bloom bank
//! transe_entities.ghem  transe_relations.ghem
//! fusion.ghnn                          fusion parameters after warmup
//! preprocess.manifest.json
//! checkpoint/{config.toml, model.ghnn, history.txt, history.json, train.manifest.json}
//! eval/{valid,test}.{txt,json}
//! ```

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::bloom::{build_bank_sharded, BloomBank};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, RankingReport};
use crate::footprint::Footprint;
use crate::fusion::{FeatureStore, TextFeatures};
use crate::kg::{degree_stats, load_triples, DegreeStats, Dictionary, KnowledgeGraph, LoadOptions, NodeLabels, Split, SplitPaths};
use crate::kge::{train_transe, TransEModel};
use crate::nn::load_checkpoint;
use crate::trainer::{evaluate_link_model, evaluate_node_model, train, warmup, History, Model, Task, TaskData};

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn entities(&self) -> PathBuf {
        self.dir.join("entities.dict")
    }
    pub fn relations(&self) -> PathBuf {
        self.dir.join("relations.dict")
    }
    pub fn bloom(&self) -> PathBuf {
        self.dir.join("bloom.ghbf")
    }
    pub fn transe_entities(&self) -> PathBuf {
        self.dir.join("transe_entities.ghem")
    }
    pub fn transe_relations(&self) -> PathBuf {
        self.dir.join("transe_relations.ghem")
    }
    pub fn fusion(&self) -> PathBuf {
        self.dir.join("fusion.ghnn")
    }
    pub fn preprocess_manifest(&self) -> PathBuf {
        self.dir.join("preprocess.manifest.json")
    }
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.dir.join("checkpoint")
    }
    pub fn model(&self) -> PathBuf {
        self.checkpoint_dir().join("model.ghnn")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.dir.join("eval")
    }

    fn require(&self, path: PathBuf) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact(path))
        }
    }
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Serialize)]
struct FileHash {
    path: PathBuf,
    bytes: u64,
    sha256: String,
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
            Ok(FileHash {
                path: p.clone(),
                bytes,
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn input_paths(cfg: &PipelineConfig) -> Vec<PathBuf> {
    let d = &cfg.data;
    std::iter::once(d.train.clone())
        .chain([&d.valid, &d.test, &d.labels, &d.text_features].into_iter().flatten().cloned())
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn load_graph(cfg: &PipelineConfig) -> Result<KnowledgeGraph> {
    let (g, report) = load_triples(
        &SplitPaths {
            train: cfg.data.train.clone(),
            valid: cfg.data.valid.clone(),
            test: cfg.data.test.clone(),
        },
        LoadOptions { strict: cfg.data.strict },
    )?;
    log::info!(
        "graph: {} entities, {} relations, {}/{}/{} triples, duplicates dropped {:?}, {} entities without train edges",
        g.num_entities(),
        g.num_relations(),
        g.train.len(),
        g.valid.len(),
        g.test.len(),
        report.duplicates_dropped,
        report.unseen_entities
    );
    Ok(g)
}

/// Reads an `id<TAB>label` file written by [`Dictionary::write`].
pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut d = Dictionary::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: message.into(),
        };
        let (id, label) = line.split_once('\t').ok_or_else(|| parse_err("expected id<TAB>label"))?;
        if id.parse::<usize>().ok() != Some(i) {
            return Err(parse_err("ids must count up from 0"));
        }
        d.intern(label);
    }
    Ok(d)
}

/// Inputs assembled for training or evaluation.
pub struct Prepared {
    pub graph: KnowledgeGraph,
    pub features: FeatureStore,
    pub labels: Option<NodeLabels>,
}

impl Prepared {
    pub fn data(&self) -> TaskData<'_> {
        TaskData {
            graph: &self.graph,
            features: &self.features,
            labels: self.labels.as_ref(),
        }
    }
}

fn load_labels(cfg: &PipelineConfig, g: &KnowledgeGraph) -> Result<Option<NodeLabels>> {
    match (&cfg.data.labels, cfg.train.task) {
        (Some(p), _) => Ok(Some(NodeLabels::load(p, &g.entities)?)),
        (None, Task::Node) => Err(Error::Config(vec!["data.labels is required for node tasks".into()])),
        (None, Task::Link) => Ok(None),
    }
}

fn load_text(cfg: &PipelineConfig, g: &KnowledgeGraph) -> Result<Option<TextFeatures>> {
    match (&cfg.data.text_features, cfg.model.use_text) {
        (Some(p), true) => {
            let t = TextFeatures::load(p)?;
            if t.rows != g.num_entities() {
                return Err(Error::shape(format!(
                    "text features have {} rows, graph has {} entities",
                    t.rows,
                    g.num_entities()
                )));
            }
            Ok(Some(t))
        }
        _ => Ok(None),
    }
}

/// Loads the frozen preprocessing artifacts and checks them against the
/// graph and configuration.
pub fn load_prepared(cfg: &PipelineConfig) -> Result<Prepared> {
    let art = Artifacts::new(&cfg.output);
    let graph = load_graph(cfg)?;
    let bloom = BloomBank::load(&art.require(art.bloom())?)?;
    if bloom.num_entities() != graph.num_entities() {
        return Err(Error::shape(format!(
            "Bloom bank has {} rows, graph has {} entities",
            bloom.num_entities(),
            graph.num_entities()
        )));
    }
    let transe = TransEModel::load(
        &art.require(art.transe_entities())?,
        &art.require(art.transe_relations())?,
        cfg.transe.p_norm,
    )?;
    if transe.dim() != cfg.transe.dim {
        return Err(Error::shape(format!(
            "TransE tables have dim {} but transe.dim = {}",
            transe.dim(),
            cfg.transe.dim
        )));
    }
    if transe.entities.rows != graph.num_entities() || transe.relations.rows != graph.num_relations() {
        return Err(Error::shape(format!(
            "TransE tables are {}x{} entities and {} relations, graph has {} and {}",
            transe.entities.rows,
            transe.dim(),
            transe.relations.rows,
            graph.num_entities(),
            graph.num_relations()
        )));
    }
    let text = load_text(cfg, &graph)?;
    let labels = load_labels(cfg, &graph)?;
    Ok(Prepared {
        graph,
        features: FeatureStore {
            bloom: Some(bloom),
            transe: Some(transe),
            text,
        },
        labels,
    })
}

fn build_model(cfg: &PipelineConfig, p: &Prepared) -> Result<Model<f32>> {
    Model::build(
        &cfg.model,
        cfg.train.task,
        &p.features,
        p.graph.num_entities(),
        p.graph.num_relations(),
        p.labels.as_ref().map(|l| l.num_classes()),
        cfg.seed,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub degree: DegreeStats,
    pub bloom_m: u32,
    pub bloom_k: u16,
    pub transe_valid_mrr: Vec<(usize, f64)>,
    pub warmed: bool,
}

/// Builds the Bloom bank, trains TransE, runs the fusion warmup and writes
/// all three with a manifest.
pub fn preprocess(cfg: &PipelineConfig, threads: usize) -> Result<PreprocessSummary> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.output);
    create_dir(&art.dir)?;
    let graph = load_graph(cfg)?;
    graph.entities.write(&art.entities())?;
    graph.relations.write(&art.relations())?;

    let degree = degree_stats(&graph)?;
    let bloom_cfg = cfg.bloom.resolve(degree.n_estimate as u64, cfg.seed_for("bloom"))?;
    log::info!(
        "bloom: n_estimate {} = out_p95 {} + in_p95 {}; sizing {:?} gives m = {}, k = {}",
        degree.n_estimate,
        degree.out_p95,
        degree.in_p95,
        cfg.bloom.sizing,
        bloom_cfg.m,
        bloom_cfg.k
    );
    let bloom = build_bank_sharded(&graph, &bloom_cfg, threads)?;
    bloom.save(&art.bloom())?;

    let transe_cfg = cfg.transe.to_config(cfg.seed_for("transe"));
    let (transe, transe_hist) = train_transe(&graph, &transe_cfg)?;
    log::info!(
        "transe: {} epochs in {:.1}s, validation MRR {:?}",
        transe_hist.epoch_loss.len(),
        transe_hist.seconds,
        transe_hist.valid_mrr.last()
    );
    transe.entities.save(&art.transe_entities())?;
    transe.relations.save(&art.transe_relations())?;

    let prepared = Prepared {
        features: FeatureStore {
            bloom: Some(bloom),
            transe: Some(transe),
            text: load_text(cfg, &graph)?,
        },
        labels: load_labels(cfg, &graph)?,
        graph,
    };
    let mut model = build_model(cfg, &prepared)?;
    let warm = cfg.train.warmup && model.fusion.config.branches.count() > 0;
    let warm_record = if warm {
        Some(warmup(&mut model, prepared.data(), &cfg.train, cfg.seed)?)
    } else {
        None
    };
    model.save_fusion(&art.fusion())?;

    let artifacts = [
        art.entities(),
        art.relations(),
        art.bloom(),
        art.transe_entities(),
        art.transe_relations(),
        art.fusion(),
    ];
    let manifest = json!({
        "command": "preprocess",
        "seed": cfg.seed,
        "seeds": {
            "bloom": bloom_cfg.seed,
            "transe": transe_cfg.seed,
            "model": cfg.seed,
        },
        "config": cfg,
        "inputs": hashes(&input_paths(cfg))?,
        "graph": {
            "entities": prepared.graph.num_entities(),
            "relations": prepared.graph.num_relations(),
            "train": prepared.graph.train.len(),
            "valid": prepared.graph.valid.len(),
            "test": prepared.graph.test.len(),
        },
        "degree": {
            "out_p95": degree.out_p95,
            "in_p95": degree.in_p95,
            "n_estimate": degree.n_estimate,
        },
        "bloom": { "m": bloom_cfg.m, "k": bloom_cfg.k, "sizing": cfg.bloom.sizing },
        "transe": {
            "epochs_run": transe_hist.epoch_loss.len(),
            "best_epoch": transe_hist.best_epoch,
            "valid_mrr": transe_hist.valid_mrr,
        },
        "warmup": warm_record,
        "artifacts": hashes(&artifacts)?,
    });
    write_text(&art.preprocess_manifest(), &serde_json::to_string_pretty(&manifest).expect("json value"))?;
    Ok(PreprocessSummary {
        degree,
        bloom_m: bloom_cfg.m,
        bloom_k: bloom_cfg.k,
        transe_valid_mrr: transe_hist.valid_mrr,
        warmed: warm,
    })
}

/// One `key=value` line per epoch.
pub fn history_text(h: &History) -> String {
    let mut s = String::new();
    for r in &h.records {
        s.push_str(&format!(
            "epoch={} phase={} loss={:.6} lr_fusion={} lr_encoder={} lr_decoder={}",
            r.epoch, r.phase, r.loss, r.lr_fusion, r.lr_encoder, r.lr_decoder
        ));
        if let Some(v) = r.valid {
            s.push_str(&format!(" valid={v:.6}"));
        }
        s.push('\n');
    }
    if let (Some(e), Some(v)) = (h.best_epoch, h.best_valid) {
        s.push_str(&format!("best_epoch={e} best_valid={v:.6} stopped_early={}\n", h.stopped_early));
    }
    s
}

/// Joint training from the preprocessing artifacts. Writes the best model
/// and its history under `checkpoint/`.
pub fn train_model(cfg: &PipelineConfig) -> Result<History> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.output);
    let prepared = load_prepared(cfg)?;
    let mut model = build_model(cfg, &prepared)?;
    let fusion = load_checkpoint(&art.require(art.fusion())?)?;
    model.load_tensors(&fusion, &["fusion."])?;
    let warmed = cfg.train.warmup && model.fusion.config.branches.count() > 0;
    let history = train(&mut model, prepared.data(), &cfg.train, cfg.seed, warmed)?;

    let dir = art.checkpoint_dir();
    create_dir(&dir)?;
    model.save(&art.model())?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    write_text(&dir.join("history.txt"), &history_text(&history))?;
    write_text(&dir.join("history.json"), &history.to_json())?;
    let mut inputs = input_paths(cfg);
    inputs.extend([art.bloom(), art.transe_entities(), art.transe_relations(), art.fusion()]);
    let manifest = json!({
        "command": "train",
        "seed": cfg.seed,
        "warmed": warmed,
        "config": cfg,
        "inputs": hashes(&inputs)?,
        "best_epoch": history.best_epoch,
        "best_valid": history.best_valid,
        "artifacts": hashes(&[art.model()])?,
    });
    write_text(
        &dir.join("train.manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("json value"),
    )?;
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    Link { valid: RankingReport, test: Option<RankingReport> },
    Node { valid: f64, test: Option<f64> },
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        match self {
            EvalReport::Link { valid, test } => {
                let mut s = format!("[valid]\n{}", valid.to_text());
                if let Some(t) = test {
                    s.push_str(&format!("[test]\n{}", t.to_text()));
                }
                s
            }
            EvalReport::Node { valid, test } => {
                let mut s = format!("valid_accuracy={valid:.6}\n");
                if let Some(t) = test {
                    s.push_str(&format!("test_accuracy={t:.6}\n"));
                }
                s
            }
        }
    }
}

/// Evaluates a saved model. `checkpoint` may be the model file or the
/// checkpoint directory. Validation uses the same options as during
/// training; the test split is ranked in full.
pub fn evaluate(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.output);
    let path = match checkpoint {
        Some(p) if p.is_dir() => p.join("model.ghnn"),
        Some(p) => p.to_path_buf(),
        None => art.model(),
    };
    let path = art.require(path)?;
    let prepared = load_prepared(cfg)?;
    let mut model = build_model(cfg, &prepared)?;
    model.load(&path)?;
    let data = prepared.data();
    let out = art.eval_dir();
    create_dir(&out)?;
    let chunk = cfg.train.eval_chunk;
    let report = match cfg.train.task {
        Task::Link => {
            let protocol = cfg.train.protocol(cfg.seed);
            let valid_opts = EvalOptions {
                protocol,
                tail_only: false,
                max_triples: cfg.train.eval_max_triples,
            };
            let valid = evaluate_link_model(&model, data, Split::Valid, &valid_opts, chunk, cfg.seed)?;
            valid.write(&out.join("valid"))?;
            let test = if prepared.graph.test.is_empty() {
                None
            } else {
                let opts = EvalOptions {
                    max_triples: None,
                    ..valid_opts
                };
                let t = evaluate_link_model(&model, data, Split::Test, &opts, chunk, cfg.seed)?;
                t.write(&out.join("test"))?;
                Some(t)
            };
            EvalReport::Link { valid, test }
        }
        Task::Node => {
            let labels = prepared.labels.as_ref().ok_or_else(|| Error::invalid("node evaluation needs labels"))?;
            let valid = evaluate_node_model(&model, data, Split::Valid, chunk, cfg.seed)?;
            let test = if labels.nodes(Split::Test).is_empty() {
                None
            } else {
                Some(evaluate_node_model(&model, data, Split::Test, chunk, cfg.seed)?)
            };
            EvalReport::Node { valid, test }
        }
    };
    write_text(&out.join("report.txt"), &report.to_text())?;
    Ok(report)
}

/// Sizes for the configured run, or for the counts in `[footprint]`.
pub fn footprint(cfg: &PipelineConfig) -> Result<Footprint> {
    use crate::config::BloomSizing;
    let need_graph = cfg.footprint.entities.is_none()
        || cfg.footprint.relations.is_none()
        || cfg.bloom.sizing == BloomSizing::Derive;
    let graph = if need_graph { Some(load_graph(cfg)?) } else { None };
    let entities = cfg
        .footprint
        .entities
        .or(graph.as_ref().map(|g| g.num_entities() as u64))
        .unwrap_or(0);
    let relations = cfg
        .footprint
        .relations
        .or(graph.as_ref().map(|g| g.num_relations() as u64))
        .unwrap_or(0);
    let n_estimate = match &graph {
        Some(g) => degree_stats(g)?.n_estimate as u64,
        None => 1,
    };
    let bloom = cfg.bloom.resolve(n_estimate, 0)?;
    let hidden = cfg
        .footprint
        .hidden
        .unwrap_or_else(|| cfg.model.effective_dim(Some(cfg.transe.dim))) as u64;
    Ok(Footprint::new(entities, relations, bloom.m as u64, cfg.transe.dim as u64, hidden))
}

/// One row of the saved Bloom bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomRow {
    pub entity: u32,
    pub label: String,
    pub bits: Vec<u32>,
    pub m: u32,
}

/// Reads one row of the saved Bloom bank. `entity` is a label, or a numeric
/// id when no label matches.
pub fn bloom_inspect(cfg: &PipelineConfig, entity: &str) -> Result<BloomRow> {
    let art = Artifacts::new(&cfg.output);
    let dict = read_dictionary(&art.require(art.entities())?)?;
    let id = match dict.id(entity) {
        Some(id) => id,
        None => entity
            .parse::<u32>()
            .ok()
            .filter(|&i| (i as usize) < dict.len())
            .ok_or_else(|| Error::invalid(format!("unknown entity `{entity}`")))?,
    };
    let bank = BloomBank::load(&art.require(art.bloom())?)?;
    Ok(BloomRow {
        entity: id,
        label: dict.label(id).unwrap_or_default().to_string(),
        bits: bank.active_bits(id)?,
        m: bank.config().m,
    })
}
