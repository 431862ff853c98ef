//! Driving the command line in-process: preview a prompt, train on the
//! bundled tiny fixture, then evaluate and infer with the run directory.
//!
//! `cargo run --release --example cli`

use std::path::PathBuf;

use fiat::cli::dispatch;

fn run(args: &[&str]) -> i32 {
    println!("$ fiat {}", args.join(" "));
    let mut argv = vec!["fiat"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let code = dispatch(argv, &mut out, &mut err);
    println!("exit {code}\n");
    code
}

fn main() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let config = fixtures.join("tiny/run.json");
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let dir = tmp.path().join("run");
    let (config, cache, dir) = (config.to_str().unwrap(), cache.to_str().unwrap(), dir.to_str().unwrap());
    let iset = fixtures.join("prompting/tuning_iset.json");

    run(&["prompt", "preview", "--iset", iset.to_str().unwrap(), "--example", "tiny-train-00", "--config", config]);
    run(&["train", "--config", config, "--cache-dir", cache, "--out", dir]);
    run(&["eval", "--artifact", dir, "--split", "test", "--cache-dir", cache]);
    let input = fixtures.join("tiny/test.jsonl");
    run(&["infer", "--artifact", dir, "--input", input.to_str().unwrap(), "--cache-dir", cache]);
    run(&["eval", "--artifact", "no-such-run"]);
}
