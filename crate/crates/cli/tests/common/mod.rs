#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Runs the `ssd` binary in `dir` with the thread cap unset.
pub fn ssd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssd"))
        .args(args)
        .current_dir(dir)
        .env_remove("SSD_THREADS")
        .output()
        .expect("spawn ssd")
}

/// Like [`ssd`] but panics with stderr unless the command succeeds; returns stdout.
pub fn ssd_ok(dir: &Path, args: &[&str]) -> String {
    let out = ssd(dir, args);
    assert!(
        out.status.success(),
        "ssd {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// Value of `column` in the first data row of a header-plus-rows TSV table.
pub fn tsv_field(table: &str, column: &str) -> f64 {
    tsv_field_in_row(table, 1, column)
}

pub fn tsv_field_in_row(table: &str, row: usize, column: &str) -> f64 {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().expect("header").split('\t').collect();
    let idx = header
        .iter()
        .position(|h| *h == column)
        .unwrap_or_else(|| panic!("no column {column} in {header:?}"));
    let line = lines.nth(row - 1).expect("data row");
    line.split('\t').nth(idx).expect("field").parse().expect("number")
}
