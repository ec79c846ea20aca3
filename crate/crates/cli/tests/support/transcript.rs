//! Runs spmvbench in-process with a fake timer and renders one transcript.
#![allow(dead_code)]

use std::path::PathBuf;

use sellkit_cli::{run, RunEnv};

pub fn tests_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests")
}

/// `@DATA` in arguments stands for the test data directory.
pub fn transcript(args: &[&str]) -> String {
    let data = tests_dir().join("data").display().to_string();
    let argv: Vec<String> =
        std::iter::once("spmvbench".to_string()).chain(args.iter().map(|a| a.replace("@DATA", &data))).collect();
    let mut env = RunEnv::fake(vec![2.0e-6, 2.5e-6, 1.6e-6, 2.2e-6], 2);
    let out = run(argv, &mut env);
    let stderr = out.stderr.replace(&data, "@DATA");
    format!("$ spmvbench {}\n--- stdout\n{}--- stderr\n{}--- exit {}\n", args.join(" "), out.stdout, stderr, out.code)
}

/// Re-runs the command recorded on the first line of a golden file.
pub fn replay(golden: &str) -> String {
    let first = golden.lines().next().unwrap_or_default();
    let args: Vec<&str> = first.strip_prefix("$ spmvbench").unwrap_or_default().split_whitespace().collect();
    transcript(&args)
}
