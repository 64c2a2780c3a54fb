//! Shared setup for the criterion benches.

use chrono::{TimeZone, Utc};
use mbd_core::pipeline::run_fixture_pipeline;
use mbd_core::synth::{generate, Corpus, Preset, SynthConfig};
use mbd_core::Store;

/// A store filled from a synthetic corpus. The directories live as long as
/// the value.
pub struct Loaded {
    pub store: Store,
    pub corpus: Corpus,
    _dirs: (tempfile::TempDir, tempfile::TempDir),
}

pub fn load(seed: u64, articles: usize, preset: Preset) -> Loaded {
    let corpus = generate(&SynthConfig::new(seed, articles), preset);
    let fixtures = tempfile::tempdir().expect("tempdir");
    corpus.write(fixtures.path()).expect("write corpus");
    let dir = tempfile::tempdir().expect("tempdir");
    let store = Store::open(dir.path()).expect("open store");
    let now = Utc.with_ymd_and_hms(2024, 9, 1, 0, 0, 0).unwrap();
    tokio::runtime::Runtime::new()
        .expect("runtime")
        .block_on(run_fixture_pipeline(&store, &corpus, fixtures.path(), now))
        .expect("pipeline");
    Loaded {
        store,
        corpus,
        _dirs: (fixtures, dir),
    }
}
