//! Timing harness comparing the Mamba block with a full self-attention
//! layer over growing sequence lengths, and log-log scaling fits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::nn::{seeded_rng, Graph, ParamId, ParamStore, Tensor};
use crate::ssm::{MambaBlock, SsmConfig};

pub const WARMUP_RUNS: usize = 2;
pub const MIN_REPEATS: usize = 5;
pub const DEFAULT_LENGTHS: [usize; 4] = [256, 512, 1024, 2048];

static RUNNING: AtomicBool = AtomicBool::new(false);

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("another benchmark is already running in this process")]
    Busy,
    #[error("at least {MIN_REPEATS} repeats are required, got {0}")]
    TooFewRepeats(usize),
    #[error("lengths must be positive and strictly ascending")]
    BadLengths,
    #[error("scaling fit needs at least 3 rows, got {0}")]
    TooFewRows(usize),
    #[error("non-positive timing {seconds} at n = {n}")]
    NonPositiveTiming { n: usize, seconds: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Shape(#[from] crate::nn::ShapeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub median_seconds: f64,
    pub iqr_seconds: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

struct Guard;

impl Guard {
    fn acquire() -> Result<Self, BenchError> {
        RUNNING.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).map_err(|_| BenchError::Busy)?;
        Ok(Guard)
    }
}

impl Drop for Guard {
    fn drop(&mut self) {
        RUNNING.store(false, Ordering::Release);
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Random `n × d` input rows for a given seed.
pub fn bench_inputs(n: usize, d: usize, seed: u64) -> Tensor<f32> {
    Tensor::uniform(&[n, d], 1.0, &mut seeded_rng(seed ^ n as u64))
}

fn time_rows(
    n_list: &[usize],
    d_model: usize,
    repeats: usize,
    mut run: impl FnMut(&Tensor<f32>) -> Result<(), BenchError>,
) -> Result<Vec<TimingRow>, BenchError> {
    if repeats < MIN_REPEATS {
        return Err(BenchError::TooFewRepeats(repeats));
    }
    if n_list.is_empty() || n_list[0] == 0 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::BadLengths);
    }
    let _guard = Guard::acquire()?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let x = bench_inputs(n, d_model, 0xbe9c);
        for _ in 0..WARMUP_RUNS {
            run(&x)?;
        }
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            run(&x)?;
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        rows.push(TimingRow {
            n,
            median_seconds: quantile(&times, 0.5),
            iqr_seconds: quantile(&times, 0.75) - quantile(&times, 0.25),
            repeats,
        });
    }
    Ok(rows)
}

/// Forward-only Mamba block timings.
pub fn bench_scan(n_list: &[usize], d_model: usize, repeats: usize) -> Result<Vec<TimingRow>, BenchError> {
    let cfg = SsmConfig { d_model, ..SsmConfig::default() };
    let mut store = ParamStore::<f32>::new();
    let block = MambaBlock::init(&mut store, "bench", &cfg, &mut seeded_rng(7));
    time_rows(n_list, d_model, repeats, |x| {
        let mut g = Graph::new(&store);
        let h = g.input(x.clone());
        let m = block.forward(&mut g, h, 0.0, None)?;
        std::hint::black_box(g.value(m));
        Ok(())
    })
}

struct AttentionLayer {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

/// Forward-only timings of one full single-head self-attention layer.
pub fn bench_attention_baseline(n_list: &[usize], d_model: usize, repeats: usize) -> Result<Vec<TimingRow>, BenchError> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = seeded_rng(7);
    let bound = 1.0 / (d_model as f64).sqrt();
    let mut w = |name: &str| store.add(name, Tensor::uniform(&[d_model, d_model], bound, &mut rng));
    let layer = AttentionLayer { wq: w("wq"), wk: w("wk"), wv: w("wv"), wo: w("wo") };
    time_rows(n_list, d_model, repeats, |x| {
        let mut g = Graph::new(&store);
        let h = g.input(x.clone());
        let [wq, wk, wv, wo] = [layer.wq, layer.wk, layer.wv, layer.wo].map(|id| g.param(id));
        let q = g.matmul(h, wq)?;
        let k = g.matmul(h, wk)?;
        let v = g.matmul(h, wv)?;
        let scores = g.matmul_nt(q, k)?;
        let scores = g.scale(scores, bound);
        let p = g.softmax(scores);
        let o = g.matmul(p, v)?;
        let o = g.matmul(o, wo)?;
        let out = g.add(h, o)?;
        std::hint::black_box(g.value(out));
        Ok(())
    })
}

/// Least squares line through `(ln n, ln t)`.
pub fn fit_scaling(rows: &[TimingRow]) -> Result<ScalingFit, BenchError> {
    if rows.len() < 3 {
        return Err(BenchError::TooFewRows(rows.len()));
    }
    if let Some(r) = rows.iter().find(|r| !(r.median_seconds > 0.0)) {
        return Err(BenchError::NonPositiveTiming { n: r.n, seconds: r.median_seconds });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_seconds.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(ScalingFit { exponent, intercept, r_squared })
}

/// `t(n) / t(n_prev)` for each row after the first.
pub fn doubling_ratios(rows: &[TimingRow]) -> Vec<(usize, f64)> {
    rows.windows(2).map(|w| (w[1].n, w[1].median_seconds / w[0].median_seconds)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCsvRow {
    pub method: String,
    pub n: usize,
    pub median_seconds: f64,
    pub iqr_seconds: f64,
    pub repeats: usize,
}

pub fn read_bench_csv(path: impl AsRef<Path>) -> Result<Vec<BenchCsvRow>, BenchError> {
    let path = path.as_ref();
    let err = |source| BenchError::Csv { path: path.to_path_buf(), source };
    csv::Reader::from_path(path).map_err(err)?.deserialize().collect::<Result<_, _>>().map_err(err)
}

pub fn bench_markdown(scan: &[TimingRow], attention: &[TimingRow], scan_fit: &ScalingFit, attention_fit: &ScalingFit) -> String {
    let mut md = String::from("| n | SSM median (s) | SSM IQR (s) | Attention median (s) | Attention IQR (s) |\n|---|---|---|---|---|\n");
    for (s, a) in scan.iter().zip(attention) {
        let _ = writeln!(md, "| {} | {:.6} | {:.6} | {:.6} | {:.6} |", s.n, s.median_seconds, s.iqr_seconds, a.median_seconds, a.iqr_seconds);
    }
    let _ = writeln!(md, "\nSSM exponent: {:.2} (r² = {:.3})", scan_fit.exponent, scan_fit.r_squared);
    let _ = writeln!(md, "Attention exponent: {:.2} (r² = {:.3})", attention_fit.exponent, attention_fit.r_squared);
    for (name, rows) in [("SSM", scan), ("Attention", attention)] {
        let _ = writeln!(md, "\n| {name} n | t(n) / t(n/2) |\n|---|---|");
        let _ = writeln!(md, "| {} | n/a |", rows.first().map_or(0, |r| r.n));
        for (n, ratio) in doubling_ratios(rows) {
            let _ = writeln!(md, "| {n} | {ratio:.3} |");
        }
    }
    md
}

/// Write `bench.csv` and `bench.md` into `dir`.
pub fn emit_bench_report(
    scan: &[TimingRow],
    attention: &[TimingRow],
    scan_fit: &ScalingFit,
    attention_fit: &ScalingFit,
    dir: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf), BenchError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BenchError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join("bench.csv");
    let err = |source| BenchError::Csv { path: csv_path.clone(), source };
    let mut w = csv::Writer::from_path(&csv_path).map_err(err)?;
    for (method, rows) in [("ssm", scan), ("attention", attention)] {
        for r in rows {
            let row = BenchCsvRow {
                method: method.into(),
                n: r.n,
                median_seconds: r.median_seconds,
                iqr_seconds: r.iqr_seconds,
                repeats: r.repeats,
            };
            w.serialize(row).map_err(err)?;
        }
    }
    w.flush().map_err(io(&csv_path))?;
    let md_path = dir.join("bench.md");
    std::fs::write(&md_path, bench_markdown(scan, attention, scan_fit, attention_fit)).map_err(io(&md_path))?;
    Ok((csv_path, md_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use std::sync::Mutex;

    static SERIAL: Mutex<()> = Mutex::new(());

    fn rows_from(f: impl Fn(f64) -> f64) -> Vec<TimingRow> {
        DEFAULT_LENGTHS
            .iter()
            .map(|&n| TimingRow { n, median_seconds: f(n as f64), iqr_seconds: 0.0, repeats: 5 })
            .collect()
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let lin = fit_scaling(&rows_from(|n| 3.0 * n)).unwrap();
        assert!((lin.exponent - 1.0).abs() < 1e-12 && (lin.r_squared - 1.0).abs() < 1e-12);
        let quad = fit_scaling(&rows_from(|n| 2.0 * n * n)).unwrap();
        assert!((quad.exponent - 2.0).abs() < 1e-12);
        assert!((quad.intercept - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn noisy_power_law_within_tolerance() {
        let mut rng = seeded_rng(15);
        let rows: Vec<TimingRow> = [64usize, 128, 256, 512, 1024, 2048, 4096]
            .iter()
            .map(|&n| {
                let noise = 1.0 + rng.gen_range(-0.01..0.01);
                TimingRow { n, median_seconds: (n as f64).powf(1.5) * noise, iqr_seconds: 0.0, repeats: 5 }
            })
            .collect();
        let fit = fit_scaling(&rows).unwrap();
        assert!((1.4..=1.6).contains(&fit.exponent), "{}", fit.exponent);
    }

    #[test]
    fn fit_rejects_bad_rows() {
        assert!(matches!(fit_scaling(&rows_from(|n| n)[..2]), Err(BenchError::TooFewRows(2))));
        let mut rows = rows_from(|n| n);
        rows[1].median_seconds = 0.0;
        assert!(matches!(fit_scaling(&rows), Err(BenchError::NonPositiveTiming { n: 512, .. })));
    }

    #[test]
    fn harness_bookkeeping_and_monotone_cost() {
        let _l = SERIAL.lock().unwrap();
        let rows = bench_scan(&[256, 512], 16, 5).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.repeats == 5 && r.iqr_seconds >= 0.0));
        assert!(rows[1].median_seconds > rows[0].median_seconds);
        let att = bench_attention_baseline(&[256, 512], 16, 5).unwrap();
        assert_eq!(att.len(), 2);
        assert!(att[1].median_seconds > att[0].median_seconds);
        assert!(matches!(bench_scan(&[8], 16, 4), Err(BenchError::TooFewRepeats(4))));
        assert!(matches!(bench_scan(&[16, 8], 16, 5), Err(BenchError::BadLengths)));
    }

    #[test]
    fn refuses_to_run_concurrently() {
        let _l = SERIAL.lock().unwrap();
        let held = Guard::acquire().unwrap();
        assert!(matches!(bench_scan(&[8], 8, 5), Err(BenchError::Busy)));
        drop(held);
        assert!(bench_scan(&[8], 8, 5).is_ok());
    }

    #[test]
    fn inputs_are_seeded() {
        assert_eq!(bench_inputs(32, 8, 1), bench_inputs(32, 8, 1));
        assert_ne!(bench_inputs(32, 8, 1), bench_inputs(32, 8, 2));
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let scan = rows_from(|n| 1e-6 * n);
        let att = rows_from(|n| 1e-8 * n * n);
        let (sf, af) = (fit_scaling(&scan).unwrap(), fit_scaling(&att).unwrap());
        let (csv_path, md_path) = emit_bench_report(&scan, &att, &sf, &af, dir.path()).unwrap();
        let back = read_bench_csv(&csv_path).unwrap();
        assert_eq!(back.len(), 8);
        assert_eq!(back[4].method, "attention");
        assert_eq!(back[7].median_seconds, att[3].median_seconds);
        let md = std::fs::read_to_string(md_path).unwrap();
        assert!(md.contains("SSM exponent: 1.00") && md.contains("Attention exponent: 2.00"));
        let ratio_rows = md.lines().filter(|l| l.ends_with(" |") && l.matches('|').count() == 3 && !l.contains("---") && !l.contains(" n |")).count();
        assert_eq!(ratio_rows, 8);
    }
}
