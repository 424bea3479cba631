#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{DateTime, Days};

pub const PERIOD: usize = 20_000;
pub const LAMBDA: f64 = 0.0017;
pub const DIFF1: f64 = 4_295_032_833.000_015;
/// Seconds since the epoch at 2024-01-01 00:00 UTC.
pub const T0: i64 = 1_704_067_200;

/// Per-miner block counts for one 20000-block period (35 miners).
pub const COUNTS: [u64; 35] = [
    5500, 3950, 2350, 1700, 1250, 930, 720, 580, 470, 390, 330, 280, 240, 205, 175, 150, 130, 110, 95, 80,
    70, 60, 50, 42, 35, 28, 22, 17, 13, 10, 7, 5, 3, 2, 1,
];

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_forkcast")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("FORKCAST_THREADS")
        .output()
        .expect("spawn forkcast")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Runs and requires exit 0.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "forkcast {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout(&out)
}

/// Counts for period `k`: the base shape with some blocks moved from the
/// largest miner to the next ones.
pub fn period_counts(k: usize) -> Vec<u64> {
    let mut c = COUNTS.to_vec();
    c[0] -= 400 * k as u64;
    c[1] += 300 * k as u64;
    c[2] += 100 * k as u64;
    c
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub periods: usize,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    pub fn blocks(&self) -> String {
        self.arg("blocks.csv")
    }

    /// blocks.csv restricted to one period.
    pub fn period_blocks(&self, k: usize) -> String {
        let name = format!("period{k}.csv");
        let text = fs::read_to_string(self.path("blocks.csv")).unwrap();
        let mut lines = text.lines();
        let mut out = String::from(lines.next().unwrap());
        out.push('\n');
        for line in lines.skip(k * PERIOD).take(PERIOD) {
            out.push_str(line);
            out.push('\n');
        }
        fs::write(self.path(&name), out).unwrap();
        self.arg(&name)
    }

    pub fn pipeline_args(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (flag, file) in [
            ("--blocks", "blocks.csv"),
            ("--stale", "stale.csv"),
            ("--propagation", "propagation.csv"),
            ("--hashrate", "hashrate.csv"),
        ] {
            v.push(flag.to_string());
            v.push(self.arg(file));
        }
        v
    }
}

/// Writes blocks, stale, propagation and hash-rate files for `periods`
/// complete periods plus `extra` trailing blocks. Blocks are 600 s apart
/// at difficulty 1, and the hash rate is `LAMBDA` times difficulty.
pub fn fixture(periods: usize, extra: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), periods, extra);
    Fixture { dir, periods }
}

fn write_fixture(dir: &Path, periods: usize, extra: usize) {
    let mut blocks = String::from("height,timestamp,bits,miner_id\n");
    let mut height = 700_000u64;
    let mut t = T0;
    let mut emit = |miner: usize, blocks: &mut String| {
        let _ = writeln!(blocks, "{height},{t},0x1d00ffff,pool{miner:02}");
        height += 1;
        t += 600;
    };
    for k in 0..periods {
        // Round-robin over miners until each has its quota.
        let mut left = period_counts(k);
        while left.iter().any(|&c| c > 0) {
            for (m, c) in left.iter_mut().enumerate() {
                if *c > 0 {
                    *c -= 1;
                    emit(m, &mut blocks);
                }
            }
        }
    }
    for i in 0..extra {
        emit(i % 3, &mut blocks);
    }
    fs::write(dir.join("blocks.csv"), blocks).unwrap();

    let mut stale = String::from("height\n");
    for k in 0..periods {
        let first = 700_000 + (k * PERIOD) as u64;
        for j in 0..56u64 {
            let _ = writeln!(stale, "{}", first + 3 + 357 * j);
        }
        // Repeated heights count once.
        let _ = writeln!(stale, "{}", first + 3);
    }
    fs::write(dir.join("stale.csv"), stale).unwrap();

    let total = (periods * PERIOD + extra) as i64;
    let hours = total * 600 / 3600 + 2;
    let mut prop = String::from("timestamp,p50,p90,p99\n");
    for h in 0..hours {
        let wobble = 0.05 * ((h % 7) as f64 - 3.0);
        let _ = writeln!(prop, "{},{},{},{}", T0 + 3600 * h, 1.2 + wobble, 4.4 + wobble, 8.7 + wobble);
    }
    fs::write(dir.join("propagation.csv"), prop).unwrap();

    let days = total * 600 / 86_400 + 2;
    let mut hr = String::from("date,hashes_per_second\n");
    let start = DateTime::from_timestamp(T0, 0).unwrap().date_naive();
    for d in 0..days {
        let _ = writeln!(hr, "{},{:e}", start + Days::new(d as u64), LAMBDA * DIFF1);
    }
    fs::write(dir.join("hashrate.csv"), hr).unwrap();
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn load_schema(name: &str) -> serde_json::Value {
    let text = fs::read_to_string(schema_dir().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Validates `doc` against one of the shipped schemas.
pub fn check_schema(name: &str, doc: &serde_json::Value) {
    let defs = jsonschema::Resource::from_contents(load_schema("defs.schema.json")).unwrap();
    let validator = jsonschema::options()
        .with_resource("https://forkcast.invalid/schemas/defs.schema.json", defs)
        .build(&load_schema(name))
        .unwrap();
    let errors: Vec<String> = validator
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}
