use xdoge::corpus::{
    dedup_report, generate_synthetic, ingest_manifest, split, tokenize, write_corpus,
    AlphabetTokenizer, Manifest, SplitSpec, SyntheticConfig,
};
use xdoge::optimizer::{run, XdogeConfig};
use xdoge::rescale::{plan, plan_report, LanguageInventory, LanguageSampler, PlanCaps};
use xdoge::weights::{aggregate_languages, smooth, Trajectory};

const CONFIG: &str = r#"
vocab_size = 16
[generators.shared]
kind = "bigram"
seed = 4
[[source]]
language = "aa"
domain = "web"
documents = 60
doc_length = 40
generator = "shared"
[[source]]
language = "aa"
domain = "wiki"
documents = 60
doc_length = 40
generator = "shared"
noise = 0.5
[[source]]
language = "bb"
domain = "web"
documents = 60
doc_length = 40
noise = 1.0
"#;

#[test]
fn files_to_plan() {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = generate_synthetic(&SyntheticConfig::parse(CONFIG).unwrap(), 2).unwrap();
    write_corpus(&synthetic, dir.path()).unwrap();

    let manifest = Manifest::from_path(dir.path().join("manifest.toml")).unwrap();
    let raw = ingest_manifest(&manifest).unwrap();
    let (deduped, report) = dedup_report(&raw);
    assert_eq!(report.total_removed(), 0);
    let tokenized = tokenize(&deduped, &AlphabetTokenizer::synthetic(16).unwrap()).unwrap();
    for (a, b) in tokenized.sources().iter().zip(synthetic.sources()) {
        for (x, y) in a.documents().iter().zip(b.documents()) {
            assert_eq!(x.token_ids, y.token_ids);
        }
    }
    let (train, valid, test) = split(&tokenized, &SplitSpec::new(0.1, 0.1, 0).unwrap()).unwrap();
    assert_eq!(
        train.document_count() + valid.document_count() + test.document_count(),
        180
    );

    let config = XdogeConfig {
        steps: 60,
        batch_instances: 16,
        context_length: 16,
        lr_peak: 0.2,
        seed: 5,
        ..XdogeConfig::default()
    };
    let traj = run(&config, &train, None).unwrap();
    assert_eq!(traj.len(), 61);
    let path = dir.path().join("trajectory.tsv");
    traj.write(&path).unwrap();
    assert_eq!(Trajectory::read(&path).unwrap(), traj);

    let smoothed = smooth(&traj, 20).unwrap();
    assert!(smoothed.min() >= 0.02 - 1e-12);
    let languages = aggregate_languages(&smoothed).unwrap();
    let inventory = LanguageInventory::from_corpus(&train).unwrap();
    let budget = 10 * train.token_count();
    let p = plan(&languages, &inventory, budget, PlanCaps::default()).unwrap();
    assert_eq!(p.total_demanded(), budget);
    assert!(plan_report(&p).contains("uncapped"));

    let draws: Vec<_> = LanguageSampler::new(&languages, &train, 1)
        .unwrap()
        .take(500)
        .collect();
    assert!(draws.iter().any(|d| d.language == "aa") && draws.iter().any(|d| d.language == "bb"));
}
