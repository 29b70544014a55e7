use xdoge::corpus::{generate_synthetic, SyntheticConfig};
use xdoge::optimizer::{run, XdogeConfig};
use xdoge::weights::smooth;
use xdoge::SourceKey;

const TWINS: &str = "
vocab_size = 16
[generators.shared]
kind = 'bigram'
seed = 8
[generators.other]
kind = 'bigram'
seed = 9
[[source]]
language = 'aa'
domain = 'web'
documents = 100
doc_length = 100
generator = 'shared'
[[source]]
language = 'bb'
domain = 'web'
documents = 100
doc_length = 100
generator = 'shared'
[[source]]
language = 'cc'
domain = 'web'
documents = 100
doc_length = 100
generator = 'other'
noise = 0.5
";

fn config(seed: u64, thresholded: bool) -> XdogeConfig {
    XdogeConfig {
        steps: 300,
        batch_instances: 32,
        context_length: 32,
        lr_peak: 0.2,
        thresholded,
        seed,
        ..XdogeConfig::default()
    }
}

#[test]
fn identical_sources_end_with_similar_weights() {
    let cfg = SyntheticConfig::parse(TWINS).unwrap();
    let key = |l: &str| SourceKey::new(l, "web").unwrap();
    let mut gap = 0.0;
    for seed in 0..5 {
        let corpus = generate_synthetic(&cfg, seed).unwrap();
        let w = smooth(&run(&config(seed, true), &corpus, None).unwrap(), 100).unwrap();
        gap += (w.get(&key("aa")).unwrap() - w.get(&key("bb")).unwrap()).abs();
    }
    assert!(gap / 5.0 < 0.02, "mean gap {}", gap / 5.0);
}

#[test]
fn modes_share_the_first_update() {
    // with every weight far above the floor the projection is inactive
    let corpus = generate_synthetic(&SyntheticConfig::parse(TWINS).unwrap(), 1).unwrap();
    let a = run(
        &XdogeConfig {
            steps: 1,
            ..config(2, true)
        },
        &corpus,
        None,
    )
    .unwrap();
    let b = run(
        &XdogeConfig {
            steps: 1,
            ..config(2, false)
        },
        &corpus,
        None,
    )
    .unwrap();
    assert_eq!(a.records()[1].alpha.values(), b.records()[1].alpha.values());
    assert_eq!(a.records()[1].losses, b.records()[1].losses);
}
