use std::path::Path;

use ghawk::config::PipelineConfig;
use ghawk::pipeline::{self, Artifacts, EvalReport};
use ghawk::synthetic::{random_graph, separability, write_graph, write_labels, SeparabilityConfig};

fn config(dir: &Path, body: &str) -> PipelineConfig {
    let text = format!(
        "seed = 11\noutput = \"out\"\n[data]\ntrain = \"data/train.txt\"\nvalid = \"data/valid.txt\"\n\
         test = \"data/test.txt\"\n{body}"
    );
    let cfg = PipelineConfig::parse(&text, dir).unwrap();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn node_task_learns_majority_relation_from_bloom_rows() {
    let dir = tempfile::tempdir().unwrap();
    let task = separability(
        &SeparabilityConfig {
            nodes: 2000,
            ..SeparabilityConfig::default()
        },
        4,
    )
    .unwrap();
    let data = dir.path().join("data");
    write_graph(&task.graph, &data).unwrap();
    write_labels(&task.labels, &data).unwrap();
    let cfg = config(
        dir.path(),
        "labels = \"data/labels.txt\"\n\
         [transe]\ndim = 8\nepochs = 2\n\
         [model]\ndim = 32\nuse_transe = false\nbackbone = \"decoder_only\"\nlayers = 0\nfanouts = []\n\
         [train]\ntask = \"node\"\nepochs = 25\nbatch_size = 128\nlr_fusion = 0.003\nlr_encoder = 0.003\n\
         lr_decoder = 0.003\nwarmup = false\n",
    );
    pipeline::preprocess(&cfg, 2).unwrap();
    let history = pipeline::train_model(&cfg).unwrap();
    let EvalReport::Node { valid, test } = pipeline::evaluate(&cfg, None).unwrap() else {
        panic!("expected a node report");
    };
    let best = history.best_valid.unwrap();
    assert!((valid - best).abs() < 1e-9, "{valid} vs {best}");
    assert!(test.unwrap() > 0.85, "test accuracy {test:?}");
}

#[test]
fn guided_sage_run_records_hashes_and_config() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(&random_graph(80, 3, 700, 0.2, 8).unwrap(), &dir.path().join("data")).unwrap();
    let cfg = config(
        dir.path(),
        "[transe]\ndim = 8\nepochs = 5\n\
         [model]\nbackbone = \"sage\"\nlayers = 2\nfanouts = [4, 2]\n\
         [train]\nepochs = 3\nbatch_size = 64\neval_sampled = 20\n\
         [train.negatives]\nk = 4\nmode = \"transe_guided\"\nk_pool = 16\n",
    );
    pipeline::preprocess(&cfg, 1).unwrap();
    pipeline::train_model(&cfg).unwrap();
    let EvalReport::Link { valid, test } = pipeline::evaluate(&cfg, None).unwrap() else {
        panic!("expected a link report");
    };
    assert!(valid.protocol.contains("20"), "{}", valid.protocol);
    assert!(valid.mrr > 0.0 && valid.mrr <= 1.0);
    assert!(test.unwrap().n_queries > 0);

    let art = Artifacts::new(&cfg.output);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(art.preprocess_manifest()).unwrap()).unwrap();
    let recorded = manifest["artifacts"].as_array().unwrap();
    assert!(recorded.len() >= 5);
    for entry in recorded {
        let path = Path::new(entry["path"].as_str().unwrap());
        assert_eq!(pipeline::sha256_file(path).unwrap(), entry["sha256"].as_str().unwrap(), "{}", path.display());
    }

    let saved = std::fs::read_to_string(art.checkpoint_dir().join("config.toml")).unwrap();
    let reparsed = PipelineConfig::parse(&saved, Path::new("/")).unwrap();
    assert_eq!(reparsed, cfg);
}

#[test]
fn eval_with_explicit_checkpoint_file_matches_default() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(&random_graph(60, 2, 400, 0.2, 9).unwrap(), &dir.path().join("data")).unwrap();
    let cfg = config(
        dir.path(),
        "[transe]\ndim = 8\nepochs = 3\n[model]\nlayers = 1\nfanouts = [3]\n[train]\nepochs = 2\nbatch_size = 32\n",
    );
    pipeline::preprocess(&cfg, 1).unwrap();
    pipeline::train_model(&cfg).unwrap();
    let a = pipeline::evaluate(&cfg, None).unwrap();
    let b = pipeline::evaluate(&cfg, Some(&Artifacts::new(&cfg.output).model())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["fb15k237.toml", "separability.toml"] {
        let text = std::fs::read_to_string(dir.join(name)).unwrap();
        let cfg = PipelineConfig::parse(&text, &dir).unwrap();
        let only_missing_files = cfg.errors().iter().all(|e| e.contains("no such file"));
        assert!(only_missing_files, "{name}: {:?}", cfg.errors());
    }
}
