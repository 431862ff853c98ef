//! The oracle wrapper: a mock backend, stop sequences, and the persistent
//! response cache that makes reruns free.
//!
//! `cargo run --example oracle_cache`

use fiat::oracle::{default_oracle_decode, BackendConfig, MockBackend, MockPolicy, Oracle, ResponseCache};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let dp = default_oracle_decode();
    let prompts = ["Input: abc", "Input: hello", "Input: abc"];

    for round in 1..=2 {
        let oracle = Oracle::with_backend(
            BackendConfig::mock("demo"),
            Box::new(MockBackend::new(MockPolicy::EchoLastLineReversed)),
            Some(ResponseCache::new(dir.path())),
        );
        for r in oracle.batch_generate(&prompts, &dp) {
            let r = r?;
            println!("round {round}: {:<16} cache_hit={}", r.text, r.cache_hit);
        }
        println!("round {round}: {} backend call(s)\n", oracle.backend_calls());
    }

    let key = Oracle::with_backend(BackendConfig::mock("demo"), Box::new(MockBackend::new(MockPolicy::Fixed(String::new()))), None)
        .key("Input: abc", &dp);
    println!("cache key for \"Input: abc\": {key}");
    Ok(())
}
