//! Testing time cost: wall-clock time to score (and, with a user field,
//! rank per user) every test instance, best of several repetitions after
//! one warm-up pass.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use dfm_core::{Dataset, DfmModel, FmModel, Predictor};

use crate::error::{Error, Result};

/// Reference acceleration ratios of binary over float scoring for
/// k = 8, 16, 32, 64. They come from a different implementation pair and
/// machine and are printed for orientation only.
pub const REFERENCE_RATIOS: [(usize, f64); 4] = [(8, 13.19), (16, 15.95), (32, 17.29), (64, 17.51)];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub k: usize,
    /// Seconds.
    pub ttc_float: f64,
    pub ttc_binary: f64,
    /// `ttc_float / ttc_binary`.
    pub acceleration_ratio: f64,
    pub instance_count: usize,
    pub n_features: usize,
    pub nnz_min: usize,
    pub nnz_mean: f64,
    pub nnz_max: usize,
    pub threads: usize,
    pub repetitions: usize,
}

/// Per-user instance ids with their item ids, when the test set has both fields.
fn user_groups(test: &Dataset) -> Vec<Vec<(usize, usize)>> {
    let (Some(_), Some(_)) = (test.user_field(), test.item_field()) else { return Vec::new() };
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for id in 0..test.len() {
        if let (Some(u), Some(i)) = (test.user_of(id), test.item_of(id)) {
            groups.entry(u).or_default().push((id, i));
        }
    }
    groups.into_values().collect()
}

fn chunk_len(len: usize, threads: usize) -> usize {
    len.div_ceil(threads).max(1)
}

fn score_all<P: Predictor + Sync>(model: &P, test: &Dataset, out: &mut [f64], threads: usize) {
    let instances = test.instances();
    let size = chunk_len(instances.len(), threads);
    let run = |insts: &[dfm_core::SparseInstance], dst: &mut [f64]| {
        for (inst, d) in insts.iter().zip(dst) {
            *d = model.predict(&inst.features).expect("validated dimensions");
        }
    };
    if threads <= 1 {
        run(instances, out);
        return;
    }
    std::thread::scope(|s| {
        for (insts, dst) in instances.chunks(size).zip(out.chunks_mut(size)) {
            s.spawn(move || run(insts, dst));
        }
    });
}

fn rank_all(groups: &mut [Vec<(usize, usize)>], scores: &[f64], threads: usize) {
    let rank = |gs: &mut [Vec<(usize, usize)>]| {
        for g in gs {
            g.sort_unstable_by(|a, b| scores[b.0].total_cmp(&scores[a.0]).then(a.1.cmp(&b.1)));
        }
    };
    if threads <= 1 {
        rank(groups);
        return;
    }
    let size = chunk_len(groups.len(), threads);
    std::thread::scope(|s| {
        for gs in groups.chunks_mut(size) {
            s.spawn(move || rank(gs));
        }
    });
}

/// Best-of-`repetitions` seconds to score and rank `test` with `model`.
pub fn time_scoring<P: Predictor + Sync>(model: &P, test: &Dataset, repetitions: usize, threads: usize) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Usage("timing needs a nonempty test set".into()));
    }
    if test.n_features() > model.n_features() {
        return Err(Error::Core(dfm_core::Error::Dimension(format!(
            "test set has {} features, model {}",
            test.n_features(),
            model.n_features()
        ))));
    }
    let threads = threads.max(1);
    let groups = user_groups(test);
    let mut scores = vec![0.0; test.len()];
    let mut best = f64::INFINITY;
    for rep in 0..=repetitions.max(1) {
        let mut work = groups.clone();
        let start = Instant::now();
        score_all(model, test, &mut scores, threads);
        rank_all(&mut work, &scores, threads);
        let elapsed = start.elapsed().as_secs_f64();
        black_box((&scores, &work));
        // rep 0 is the warm-up
        if rep > 0 {
            best = best.min(elapsed);
        }
    }
    Ok(best)
}

pub fn measure_ttc(
    fm: &FmModel,
    dfm: &DfmModel,
    test: &Dataset,
    repetitions: usize,
    threads: usize,
) -> Result<BenchReport> {
    if fm.k() != dfm.k() || fm.n_features() != dfm.n_features() {
        return Err(Error::Usage(format!(
            "models differ in shape: FM n={} k={}, DFM n={} k={}",
            fm.n_features(),
            fm.k(),
            dfm.n_features(),
            dfm.k()
        )));
    }
    let ttc_float = time_scoring(fm, test, repetitions, threads)?;
    let ttc_binary = time_scoring(dfm, test, repetitions, threads)?;
    let nnz: Vec<usize> = test.instances().iter().map(|i| i.features.nnz()).collect();
    Ok(BenchReport {
        k: dfm.k(),
        ttc_float,
        ttc_binary,
        acceleration_ratio: ttc_float / ttc_binary,
        instance_count: test.len(),
        n_features: dfm.n_features(),
        nnz_min: nnz.iter().copied().min().unwrap_or(0),
        nnz_mean: nnz.iter().sum::<usize>() as f64 / nnz.len() as f64,
        nnz_max: nnz.iter().copied().max().unwrap_or(0),
        threads: threads.max(1),
        repetitions: repetitions.max(1),
    })
}

fn reference_ratio(k: usize) -> Option<f64> {
    REFERENCE_RATIOS.iter().find(|r| r.0 == k).map(|r| r.1)
}

/// Table with one column per code length: float TTC, binary TTC, the
/// measured ratio and the reference ratio.
pub fn format_table(reports: &[BenchReport]) -> String {
    let mut s = String::new();
    if let Some(r) = reports.first() {
        let _ = writeln!(
            s,
            "TTC in seconds: {} instances, {} features, nnz {}..{} (mean {:.1}), {} thread(s), best of {}",
            r.instance_count, r.n_features, r.nnz_min, r.nnz_max, r.nnz_mean, r.threads, r.repetitions
        );
    }
    let _ = write!(s, "{:<22}", "code length");
    for r in reports {
        let _ = write!(s, "{:>12}", r.k);
    }
    s.push('\n');
    let mut row = |label: &str, f: &dyn Fn(&BenchReport) -> String| {
        let _ = write!(s, "{label:<22}");
        for r in reports {
            let _ = write!(s, "{:>12}", f(r));
        }
        s.push('\n');
    };
    row("FM (float)", &|r| format!("{:.4}", r.ttc_float));
    row("DFM (binary)", &|r| format!("{:.4}", r.ttc_binary));
    row("acceleration ratio", &|r| format!("{:.2}", r.acceleration_ratio));
    row("reference ratio", &|r| reference_ratio(r.k).map_or("-".into(), |v| format!("{v:.2}")));
    s.push_str(
        "note: the reference ratios (13.19-17.51) were measured with a different float FM\n\
         implementation on other hardware; they are not a target for this build.\n",
    );
    s
}
