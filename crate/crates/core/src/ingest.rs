//! CSV inputs and per-period statistics.
//!
//! Four files feed the pipeline, all UTF-8 CSV with a header row; columns
//! are located by name and unknown columns are ignored.
//!
//! | file              | columns                               |
//! |-------------------|---------------------------------------|
//! | `blocks.csv`      | `height,timestamp,bits,miner_id`      |
//! | `propagation.csv` | `timestamp,p50,p90,p99`               |
//! | `stale.csv`       | `height`                              |
//! | `hashrate.csv`    | `date,hashes_per_second`              |
//!
//! `bits` is the 0x-prefixed compact target of a block header, `date` is
//! `YYYY-MM-DD`, timestamps are unix seconds.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compensated_sum, PeriodRecord};

pub const DEFAULT_PERIOD_LEN: usize = 20_000;
/// Correction for stale blocks that never reached the public record.
pub const DEFAULT_RESCALE: f64 = 1.476;
/// Target block interval used for the `Λ` sanity check.
pub const TARGET_BLOCK_TIME: f64 = 600.0;

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRow {
    pub height: u64,
    pub timestamp: i64,
    pub bits: u32,
    pub miner_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationRow {
    pub timestamp: i64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StaleRow {
    pub height: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HashrateRow {
    pub date: NaiveDate,
    pub hashes_per_second: f64,
}

impl HashrateRow {
    /// Days since the unix epoch.
    pub fn day(&self) -> i64 {
        (self.date - NaiveDate::default()).num_days()
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a headed CSV table, handing each record's named columns (in the
/// order of `columns`) to `parse`.
fn read_table<R, T, F>(reader: R, path: &Path, columns: &[&str], parse: F) -> Result<Vec<T>>
where
    R: Read,
    F: Fn(&[&str]) -> std::result::Result<T, String>,
{
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        // Completely empty file: no header and therefore no rows.
        return Ok(Vec::new());
    }
    let index: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| parse_error(path, 1, format!("missing column `{c}`")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = index.iter().map(|&i| record.get(i).unwrap_or("")).collect();
        rows.push(parse(&fields).map_err(|m| parse_error(path, line, m))?);
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn field<T: std::str::FromStr>(name: &str, raw: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| format!("bad {name} `{raw}`: {e}"))
}

fn positive(name: &str, raw: &str) -> std::result::Result<f64, String> {
    let v: f64 = field(name, raw)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name} must be positive, got `{raw}`"))
    }
}

/// Parses a 0x-prefixed compact target.
pub fn parse_bits(raw: &str) -> std::result::Result<u32, String> {
    let hex = raw
        .strip_prefix("0x")
        .or_else(|| raw.strip_prefix("0X"))
        .ok_or_else(|| format!("bits `{raw}` must be 0x-prefixed hex"))?;
    let bits = u32::from_str_radix(hex, 16).map_err(|e| format!("bad bits `{raw}`: {e}"))?;
    bits_to_expected_hashes(bits).map_err(|e| e.to_string())?;
    Ok(bits)
}

pub fn parse_blocks<R: Read>(reader: R, path: &Path) -> Result<Vec<BlockRow>> {
    read_table(reader, path, &["height", "timestamp", "bits", "miner_id"], |f| {
        if f[3].is_empty() {
            return Err("empty miner_id".into());
        }
        Ok(BlockRow {
            height: field("height", f[0])?,
            timestamp: field("timestamp", f[1])?,
            bits: parse_bits(f[2])?,
            miner_id: f[3].to_string(),
        })
    })
}

pub fn parse_propagation<R: Read>(reader: R, path: &Path) -> Result<Vec<PropagationRow>> {
    read_table(reader, path, &["timestamp", "p50", "p90", "p99"], |f| {
        let row = PropagationRow {
            timestamp: field("timestamp", f[0])?,
            p50: positive("p50", f[1])?,
            p90: positive("p90", f[2])?,
            p99: positive("p99", f[3])?,
        };
        if row.p50 <= row.p90 && row.p90 <= row.p99 {
            Ok(row)
        } else {
            Err(format!("percentiles must be ordered, got {}, {}, {}", row.p50, row.p90, row.p99))
        }
    })
}

pub fn parse_stales<R: Read>(reader: R, path: &Path) -> Result<Vec<StaleRow>> {
    read_table(reader, path, &["height"], |f| Ok(StaleRow { height: field("height", f[0])? }))
}

pub fn parse_hashrate<R: Read>(reader: R, path: &Path) -> Result<Vec<HashrateRow>> {
    read_table(reader, path, &["date", "hashes_per_second"], |f| {
        Ok(HashrateRow {
            date: NaiveDate::parse_from_str(f[0], "%Y-%m-%d").map_err(|e| format!("bad date `{}`: {e}", f[0]))?,
            hashes_per_second: positive("hashes_per_second", f[1])?,
        })
    })
}

pub fn read_blocks(path: &Path) -> Result<Vec<BlockRow>> {
    parse_blocks(open(path)?, path)
}

pub fn read_propagation(path: &Path) -> Result<Vec<PropagationRow>> {
    parse_propagation(open(path)?, path)
}

pub fn read_stales(path: &Path) -> Result<Vec<StaleRow>> {
    parse_stales(open(path)?, path)
}

pub fn read_hashrate(path: &Path) -> Result<Vec<HashrateRow>> {
    parse_hashrate(open(path)?, path)
}

/// Expected number of hashes to find a block at compact target `bits`:
/// `2²⁵⁶ / (target + 1)` with `target = mantissa · 256^(exponent−3)`.
pub fn bits_to_expected_hashes(bits: u32) -> Result<f64> {
    let exponent = bits >> 24;
    let mantissa = bits & 0x007f_ffff;
    if bits & 0x0080_0000 != 0 || !(3..=32).contains(&exponent) || mantissa == 0 {
        return Err(Error::InvalidBits(bits));
    }
    let target = BigUint::from(mantissa) << (8 * (exponent - 3));
    let denom = target + BigUint::one();
    let numer = BigUint::one() << 256u32;
    let quotient = &numer / &denom;
    let remainder = &numer % &denom;
    let whole = quotient.to_f64().ok_or(Error::InvalidBits(bits))?;
    let frac = remainder.to_f64().unwrap_or(0.0) / denom.to_f64().unwrap_or(f64::INFINITY);
    Ok(whole + frac)
}

/// `Λ` for a run of blocks and its distance from the target block time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    /// blocks/s
    pub lambda: f64,
    /// Days that had both a hash-rate sample and at least one block.
    pub days: usize,
    /// `|Λ·600 − 1|`
    pub block_time_deviation: f64,
}

/// Mean over days of `hash rate / difficulty`, where a day's difficulty is
/// the mean expected-hash count of that day's blocks.
pub fn compute_lambda(hashrate: &[HashrateRow], blocks: &[BlockRow]) -> Result<LambdaEstimate> {
    let mut difficulty: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for b in blocks {
        let d = bits_to_expected_hashes(b.bits)?;
        let e = difficulty.entry(b.timestamp.div_euclid(SECONDS_PER_DAY)).or_default();
        e.0 += d;
        e.1 += 1;
    }
    let mut rates: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for h in hashrate {
        if difficulty.contains_key(&h.day()) {
            let e = rates.entry(h.day()).or_default();
            e.0 += h.hashes_per_second;
            e.1 += 1;
        }
    }
    if rates.is_empty() {
        return Err(Error::EmptyPeriod);
    }
    let ratios = rates.iter().map(|(day, (sum, n))| {
        let (dsum, dn) = difficulty[day];
        (sum / *n as f64) / (dsum / dn as f64)
    });
    let lambda = compensated_sum(ratios) / rates.len() as f64;
    Ok(LambdaEstimate {
        lambda,
        days: rates.len(),
        block_time_deviation: (lambda * TARGET_BLOCK_TIME - 1.0).abs(),
    })
}

/// Index ranges of complete periods plus the trailing partial window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    pub periods: Vec<Range<usize>>,
    pub remainder: Range<usize>,
}

/// Splits contiguous blocks into windows of `period_len`.
pub fn segment_periods(blocks: &[BlockRow], period_len: usize) -> Result<Segmentation> {
    if period_len == 0 {
        return Err(Error::param("period length must be >= 1"));
    }
    for w in blocks.windows(2) {
        if w[1].height != w[0].height + 1 {
            return Err(Error::NonContiguous {
                height: w[0].height + 1,
            });
        }
    }
    let full = blocks.len() / period_len;
    Ok(Segmentation {
        periods: (0..full).map(|k| k * period_len..(k + 1) * period_len).collect(),
        remainder: full * period_len..blocks.len(),
    })
}

/// Distinct stale heights in `[first_height, last_height]` per block,
/// multiplied by `rescale` and capped at 1.
pub fn fork_rate_empirical(stales: &[StaleRow], first_height: u64, last_height: u64, rescale: f64) -> Result<f64> {
    if last_height < first_height {
        return Err(Error::param("empty period"));
    }
    if !(rescale > 0.0 && rescale.is_finite()) {
        return Err(Error::param(format!("rescale must be > 0, got {rescale}")));
    }
    let distinct: BTreeSet<u64> = stales
        .iter()
        .map(|s| s.height)
        .filter(|h| (first_height..=last_height).contains(h))
        .collect();
    let len = (last_height - first_height + 1) as f64;
    Ok((distinct.len() as f64 / len * rescale).min(1.0))
}

/// Aggregates one period of blocks with the stale, propagation and hash-rate
/// series.
pub fn build_period_record(
    index: usize,
    blocks: &[BlockRow],
    stales: &[StaleRow],
    propagation: &[PropagationRow],
    hashrate: &[HashrateRow],
    rescale: f64,
) -> Result<PeriodRecord> {
    let (first, last) = match (blocks.first(), blocks.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyPeriod),
    };
    let start_time = blocks.iter().map(|b| b.timestamp).min().unwrap_or(first.timestamp);
    let end_time = blocks.iter().map(|b| b.timestamp).max().unwrap_or(last.timestamp);

    let mut tally: BTreeMap<&str, u64> = BTreeMap::new();
    for b in blocks {
        *tally.entry(b.miner_id.as_str()).or_default() += 1;
    }
    let mut miners: Vec<(String, u64)> = tally.into_iter().map(|(id, c)| (id.to_string(), c)).collect();
    miners.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total = blocks.len() as f64;
    let hhi = compensated_sum(miners.iter().map(|(_, c)| (*c as f64 / total).powi(2)));

    let inside: Vec<&PropagationRow> = propagation
        .iter()
        .filter(|p| (start_time..=end_time).contains(&p.timestamp))
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyPeriod);
    }
    let mean = |f: fn(&PropagationRow) -> f64| compensated_sum(inside.iter().map(|p| f(p))) / inside.len() as f64;

    let lambda = compute_lambda(hashrate, blocks)?;
    Ok(PeriodRecord {
        index,
        first_height: first.height,
        last_height: last.height,
        start_time,
        end_time,
        n_miners: miners.len(),
        usable: miners.len() >= 2,
        miners,
        lambda_total: lambda.lambda,
        hhi,
        fork_rate_empirical: fork_rate_empirical(stales, first.height, last.height, rescale)?,
        prop_p50: mean(|p| p.p50),
        prop_p90: mean(|p| p.p90),
        prop_p99: mean(|p| p.p99),
    })
}

/// All four input series.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub blocks: Vec<BlockRow>,
    pub stales: Vec<StaleRow>,
    pub propagation: Vec<PropagationRow>,
    pub hashrate: Vec<HashrateRow>,
}

/// Paths of the four input files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub blocks: PathBuf,
    pub stales: PathBuf,
    pub propagation: PathBuf,
    pub hashrate: PathBuf,
}

impl Dataset {
    pub fn load(paths: &DatasetPaths) -> Result<Self> {
        Ok(Dataset {
            blocks: read_blocks(&paths.blocks)?,
            stales: read_stales(&paths.stales)?,
            propagation: read_propagation(&paths.propagation)?,
            hashrate: read_hashrate(&paths.hashrate)?,
        })
    }

    /// One record (or error) per complete period, in period order, and the
    /// number of blocks left over.
    pub fn period_records(&self, period_len: usize, rescale: f64) -> Result<(Vec<Result<PeriodRecord>>, usize)> {
        let seg = segment_periods(&self.blocks, period_len)?;
        let records = seg
            .periods
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                build_period_record(i, &self.blocks[r.clone()], &self.stales, &self.propagation, &self.hashrate, rescale)
            })
            .collect();
        Ok((records, seg.remainder.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_traits::ToPrimitive;

    fn oracle(bits: u32) -> f64 {
        let target = BigUint::from(bits & 0x00ff_ffff) << (8 * ((bits >> 24) - 3));
        let numer = BigUint::one() << 256u32;
        // Scale by 2^64 before dividing so the f64 ratio keeps its fraction.
        let scaled = (numer << 64u32) / (target + BigUint::one());
        scaled.to_f64().unwrap() / 2f64.powi(64)
    }

    #[test]
    fn difficulty_one() {
        let v = bits_to_expected_hashes(0x1d00ffff).unwrap();
        assert_relative_eq!(v, oracle(0x1d00ffff), max_relative = 1e-15);
        assert!((v - 4.295032833e9).abs() < 1.0);
    }

    #[test]
    fn regtest_target() {
        let v = bits_to_expected_hashes(0x207fffff).unwrap();
        assert_relative_eq!(v, oracle(0x207fffff), max_relative = 1e-15);
        assert!((v - 2.0).abs() < 1e-6);
    }

    #[test]
    fn doubling_mantissa_halves() {
        let a = bits_to_expected_hashes(0x1b00_4000).unwrap();
        let b = bits_to_expected_hashes(0x1b00_8000).unwrap();
        assert!((a / b - 2.0).abs() <= 2.0 * f64::EPSILON * 2.0);
    }

    #[test]
    fn invalid_bits() {
        for bits in [0x0100_ffff, 0x2100_ffff, 0x1d80_ffff, 0x1d00_0000] {
            assert!(matches!(bits_to_expected_hashes(bits), Err(Error::InvalidBits(b)) if b == bits));
        }
    }

    fn block(height: u64, timestamp: i64, miner: &str) -> BlockRow {
        BlockRow {
            height,
            timestamp,
            bits: 0x1d00ffff,
            miner_id: miner.into(),
        }
    }

    #[test]
    fn segmentation() {
        let blocks: Vec<_> = (0..60).map(|h| block(h, 0, "a")).collect();
        let seg = segment_periods(&blocks, 20).unwrap();
        assert_eq!(seg.periods.len(), 3);
        assert!(seg.remainder.is_empty());
        let seg = segment_periods(&blocks[..21], 20).unwrap();
        assert_eq!((seg.periods.len(), seg.remainder.len()), (1, 1));
        let mut gap = blocks.clone();
        gap.remove(7);
        assert!(matches!(segment_periods(&gap, 20), Err(Error::NonContiguous { height: 7 })));
    }

    #[test]
    fn empirical_fork_rate() {
        let stales: Vec<_> = (0..56).map(|i| StaleRow { height: 1000 + 300 * i }).collect();
        let c = fork_rate_empirical(&stales, 0, 19_999, DEFAULT_RESCALE).unwrap();
        assert_relative_eq!(c, 0.0041328, max_relative = 1e-12);
        assert_eq!(fork_rate_empirical(&[], 0, 99, 1.476).unwrap(), 0.0);
        let dup = [5, 5, 9].map(|height| StaleRow { height });
        assert_relative_eq!(fork_rate_empirical(&dup, 0, 9, 1.0).unwrap(), 0.2);
        let outside = [StaleRow { height: 50 }];
        assert_eq!(fork_rate_empirical(&outside, 0, 9, 1.0).unwrap(), 0.0);
        let all: Vec<_> = (0..10).map(|height| StaleRow { height }).collect();
        assert_eq!(fork_rate_empirical(&all, 0, 9, 1.476).unwrap(), 1.0);
    }

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, d).unwrap()
    }

    #[test]
    fn lambda_examples() {
        let diff = bits_to_expected_hashes(0x1d00ffff).unwrap();
        let t0 = (day(1) - NaiveDate::default()).num_days() * 86_400;
        let blocks = vec![block(0, t0 + 10, "a"), block(1, t0 + 86_400 + 10, "b")];
        let rows = vec![
            HashrateRow { date: day(1), hashes_per_second: 1.0 * diff },
            HashrateRow { date: day(2), hashes_per_second: 3.0 * diff },
            HashrateRow { date: day(9), hashes_per_second: 100.0 * diff },
        ];
        let est = compute_lambda(&rows, &blocks).unwrap();
        assert_relative_eq!(est.lambda, 2.0, max_relative = 1e-15);
        assert_eq!(est.days, 2);
        assert!(matches!(compute_lambda(&rows[2..], &blocks), Err(Error::EmptyPeriod)));
    }

    #[test]
    fn parses_with_extra_columns() {
        let text = "miner_id,height,extra,timestamp,bits\nF2Pool,7,x,1600000000,0x1d00ffff\n";
        let rows = parse_blocks(text.as_bytes(), Path::new("blocks.csv")).unwrap();
        assert_eq!(rows, vec![BlockRow { height: 7, timestamp: 1_600_000_000, bits: 0x1d00ffff, miner_id: "F2Pool".into() }]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "height,timestamp,bits,miner_id\n1,2,0x1d00ffff,a\n2,3,1d00ffff,b\n";
        match parse_blocks(text.as_bytes(), Path::new("b.csv")) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, Path::new("b.csv"));
            }
            other => panic!("{other:?}"),
        }
        let text = "timestamp,p50,p90,p99\n1,2,1,3\n";
        assert!(matches!(parse_propagation(text.as_bytes(), Path::new("p")), Err(Error::Parse { line: 2, .. })));
        let text = "date,hashes_per_second\n2021-02-30,5\n";
        assert!(matches!(parse_hashrate(text.as_bytes(), Path::new("h")), Err(Error::Parse { line: 2, .. })));
        let text = "heigth\n3\n";
        assert!(matches!(parse_stales(text.as_bytes(), Path::new("s")), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_stale_files() {
        assert!(parse_stales("".as_bytes(), Path::new("s")).unwrap().is_empty());
        assert!(parse_stales("height\n".as_bytes(), Path::new("s")).unwrap().is_empty());
    }

    #[test]
    fn period_record() {
        let t0 = (day(1) - NaiveDate::default()).num_days() * 86_400;
        let blocks: Vec<_> = (0..10)
            .map(|h| block(100 + h, t0 + 600 * h as i64, if h < 6 { "a" } else if h < 9 { "b" } else { "c" }))
            .collect();
        let diff = bits_to_expected_hashes(0x1d00ffff).unwrap();
        let hashrate = [HashrateRow { date: day(1), hashes_per_second: diff / 600.0 }];
        let prop = [
            PropagationRow { timestamp: t0 - 5, p50: 100.0, p90: 100.0, p99: 100.0 },
            PropagationRow { timestamp: t0, p50: 1.0, p90: 2.0, p99: 4.0 },
            PropagationRow { timestamp: t0 + 5400, p50: 3.0, p90: 4.0, p99: 8.0 },
        ];
        let stales = [StaleRow { height: 103 }, StaleRow { height: 103 }, StaleRow { height: 5 }];
        let rec = build_period_record(4, &blocks, &stales, &prop, &hashrate, 1.0).unwrap();
        assert_eq!(rec.miners, vec![("a".into(), 6), ("b".into(), 3), ("c".into(), 1)]);
        assert_eq!(rec.n_miners, 3);
        assert!(rec.usable);
        assert_relative_eq!(rec.hhi, 0.46, max_relative = 1e-14);
        assert_relative_eq!(rec.fork_rate_empirical, 0.1);
        assert_eq!((rec.prop_p50, rec.prop_p90, rec.prop_p99), (2.0, 3.0, 6.0));
        assert_relative_eq!(rec.lambda_total, 1.0 / 600.0, max_relative = 1e-14);
        assert_eq!(rec.total_blocks(), 10);

        let solo: Vec<_> = blocks.iter().cloned().map(|mut b| { b.miner_id = "a".into(); b }).collect();
        let rec = build_period_record(0, &solo, &[], &prop, &hashrate, 1.0).unwrap();
        assert_eq!(rec.n_miners, 1);
        assert!(!rec.usable);
    }
}
