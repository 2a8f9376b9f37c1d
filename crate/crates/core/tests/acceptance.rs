//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lorentzfm::commands::{blank_checkpoint, cmd_inspect};
use lorentzfm::data::{self, DatasetBundle, SchemaFile, Split, Task, UNKNOWN_TOKEN};
use lorentzfm::eval::{self, RankingOptions};
use lorentzfm::geometry::{
    exp_map, geodesic_distance, tangent_project, triangle_score, LorentzPoint,
};
use lorentzfm::model::{lfm_forward, lfm_grad, EmbeddingTable, FmParameters, Model, ModelKind};
use lorentzfm::optim::rsgd_step;
use lorentzfm::synthetic::{generate_synthetic, SyntheticSpec};
use lorentzfm::train::{train, TrainConfig, TrainOptions};
use lorentzfm::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Option<Duration>, elapsed: Duration) -> Result<(), String> {
    match limit {
        Some(l) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
        _ => Ok(()),
    }
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for k in [3, 10] {
        let l = common::fd_check_lfm(k, 100, 1000 + k as u64);
        let f = common::fd_check_fm(k, 100, 2000 + k as u64);
        parts.push(format!("k={k} lfm {l:.1e} fm {f:.1e}"));
        worst = worst.max(l).max(f);
    }
    let detail = parts.join(", ");
    ensure(worst < 1e-5, || {
        format!("max relative error {worst:.2e} ({detail})")
    })?;
    Ok(detail)
}

fn manifold_preservation() -> Outcome {
    const STEPS: usize = 10_000;
    let (count, dim) = (20, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut table = EmbeddingTable::init(count, dim, 7).map_err(|e| e.to_string())?;
    let mut steps = 0;
    let mut worst: f64 = 0.0;
    while steps < STEPS {
        let slots = rng.gen_range(2..=6);
        let inst = common::random_instance(&mut rng, count, slots);
        let (grad, _) = lfm_grad(&inst, &table).map_err(|e| e.to_string())?;
        for (index, g) in grad.iter() {
            if steps == STEPS {
                break;
            }
            let x = table.point(index as usize).map_err(|e| e.to_string())?;
            let next = rsgd_step(&x, g, 0.1).map_err(|e| e.to_string())?;
            let r = index as usize * dim;
            table.as_mut_slice()[r..r + dim].copy_from_slice(next.ambient());
            steps += 1;
            // independent check on the raw row
            worst = worst.max((common::minkowski(next.ambient(), next.ambient()) + 1.0).abs());
        }
    }
    for i in 0..count {
        let row = table.row(i);
        worst = worst.max((common::minkowski(row, row) + 1.0).abs());
    }
    ensure(worst < 1e-9, || {
        format!("residual {worst:.2e} after {steps} steps")
    })?;
    Ok(format!("{steps} steps, max |<x,x>+1| = {worst:.1e}"))
}

fn score_bound() -> Outcome {
    const PAIRS: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut antipodal_err: f64 = 0.0;
    for n in [2usize, 9] {
        let draw = |rng: &mut ChaCha8Rng| -> LorentzPoint {
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..=10.0)).collect();
            LorentzPoint::lift(&s).unwrap()
        };
        for _ in 0..PAIRS {
            let u = draw(&mut rng);
            let v = draw(&mut rng);
            let t = triangle_score(&u, &v).unwrap();
            lo = lo.min(t);
            hi = hi.max(t);
            if !(-0.5..=2.0).contains(&t) {
                return Err(format!("n={n}: score {t} out of range"));
            }
        }
        for _ in 0..1000 {
            let u = draw(&mut rng);
            let flipped: Vec<f64> = u.spatial().iter().map(|c| -c).collect();
            let v = LorentzPoint::lift(&flipped).unwrap();
            let t = triangle_score(&u, &v).unwrap();
            antipodal_err = antipodal_err.max((t - (2.0 - 2.0 / u.time())).abs());
        }
        // |s|^2 = 3 puts the point at u0 = 2
        let mut s = vec![0.0; n.max(3)];
        s[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let u = LorentzPoint::lift(&s).unwrap();
        ensure(u.time() == 2.0, || format!("lift gave u0 = {}", u.time()))?;
        let t = triangle_score(&u, &u).unwrap();
        ensure(t == -0.5, || {
            format!("T(u,u) at u0=2 is {t:e}, expected -0.5")
        })?;
    }
    ensure(antipodal_err < 1e-10, || {
        format!("antipodal error {antipodal_err:.2e}")
    })?;
    Ok(format!(
        "2x{PAIRS} pairs in [{lo:.4}, {hi:.4}], T(u,u)|u0=2 = -0.5, antipodal err {antipodal_err:.1e}"
    ))
}

fn exp_map_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for trial in 0..10_000 {
        let n = if trial % 2 == 0 { 2 } else { 9 };
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = LorentzPoint::lift(&s).unwrap();
        let g: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = tangent_project(&x, &g).map_err(|e| e.to_string())?;
        let norm = t.lorentz_norm();
        if norm == 0.0 {
            continue;
        }
        let target = rng.gen_range(0.0..=5.0);
        let v = t.scaled(target / norm);
        let y = exp_map(&x, &v).map_err(|e| e.to_string())?;
        let d = geodesic_distance(&x, &y).unwrap();
        worst = worst.max((d - v.lorentz_norm()).abs());
    }
    ensure(worst < 1e-7, || format!("max |d - |v|_L| = {worst:.2e}"))?;
    Ok(format!("10000 tangents, max deviation {worst:.1e}"))
}

/// Users u0..u2, items i0..i4; the FM scores items by a linear weight only:
/// i0 .5, i1 .4, i2 .3, i3 .3, i4 .1.
fn micro_bundle() -> (DatasetBundle, Model) {
    let b = DatasetBundle::from_id_pairs(
        3,
        5,
        &[(0, 0), (1, 1), (2, 2), (2, 3)],
        &[(1, 3)],
        &[(0, 2), (1, 4), (2, 0)],
    )
    .unwrap();
    let mut p = FmParameters::zeros(b.feature_count(), 2);
    // user field: unk + 3 users, then the item field's unknown
    p.linear[5..10].copy_from_slice(&[0.5, 0.4, 0.3, 0.3, 0.1]);
    (b, Model::Fm(p))
}

fn oracle_equivalence() -> Outcome {
    // pooled forward vs double loop
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fwd_err: f64 = 0.0;
    for k in [3, 10] {
        for _ in 0..500 {
            let count = 30;
            let rows: Vec<Vec<f64>> = (0..count)
                .map(|_| {
                    common::lift(&(1..k).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>())
                })
                .collect();
            let table = EmbeddingTable::from_raw(count, k, rows.concat()).unwrap();
            let slots = rng.gen_range(1..=12);
            let inst = common::random_instance(&mut rng, count, slots);
            let fast = lfm_forward(&inst, &table).unwrap();
            fwd_err = fwd_err.max((fast - common::naive_lfm(&rows, &inst)).abs());
        }
    }
    ensure(fwd_err < 1e-10, || {
        format!("forward deviates by {fwd_err:.2e}")
    })?;

    // AUC vs all-pairs count, ties included
    for trial in 0..200 {
        let n = rng.gen_range(2..300);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 * 0.25).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let (mut num, mut den) = (0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 2;
                    num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        let fast = eval::auc(&scores, &labels).unwrap();
        let oracle = num as f64 / den as f64;
        ensure(fast == oracle, || {
            format!("trial {trial}: auc {fast} vs pairwise {oracle}")
        })?;
    }

    // hand-traced micro bundle
    let (b, model) = micro_bundle();
    let opts = RankingOptions::default();
    let results = eval::evaluate_ranking(&model, &b, Split::Test, &opts, Execution::Sequential)
        .map_err(|e| e.to_string())?;
    let ranks: Vec<f64> = results.iter().map(|r| r.rank).collect();
    ensure(ranks == [2.5, 3.0, 1.0], || format!("ranks {ranks:?}"))?;
    let mrr = eval::mrr(&results).unwrap();
    let hr2 = eval::hit_rate_at(&results, 2).unwrap();
    let hr10 = eval::hit_rate_at(&results, 10).unwrap();
    let ndcg = eval::ndcg(&results).unwrap();
    let expect_mrr = (1.0 / 2.5 + 1.0 / 3.0 + 1.0) / 3.0;
    let expect_ndcg = (1.0 / 3.5f64.log2() + 0.5 + 1.0) / 3.0;
    ensure(mrr == expect_mrr, || format!("MRR {mrr} vs {expect_mrr}"))?;
    ensure(hr2 == 1.0 / 3.0 && hr10 == 1.0, || {
        format!("HR@2 {hr2}, HR@10 {hr10}")
    })?;
    ensure(ndcg == expect_ndcg, || {
        format!("NDCG {ndcg} vs {expect_ndcg}")
    })?;
    let keep = RankingOptions {
        exclude_val: false,
        ..opts
    };
    let kept =
        eval::evaluate_ranking(&model, &b, Split::Test, &keep, Execution::Sequential).unwrap();
    ensure(kept[1].rank == 4.0, || {
        format!("rank with val kept {}", kept[1].rank)
    })?;
    Ok(format!(
        "forward err {fwd_err:.1e}, AUC exact on 200 sets, micro-bundle ranks [2.5, 3, 1]"
    ))
}

fn synthetic_learnability() -> Outcome {
    let d = generate_synthetic(&SyntheticSpec::default(), 1).map_err(|e| e.to_string())?;
    let b = &d.bundle;
    ensure(d.bayes_auc >= 0.95, || {
        format!("Bayes AUC {:.4}", d.bayes_auc)
    })?;
    let mut parts = vec![format!(
        "|V|={} n={} Bayes AUC {:.4}",
        b.feature_count(),
        b.train.len() + b.val.len() + b.test.len(),
        d.bayes_auc
    )];
    let mut failed = false;
    for (kind, floor) in [(ModelKind::LorentzFm, 0.90), (ModelKind::Fm, 0.85)] {
        let config = TrainConfig {
            model: kind,
            embedding_size: 10,
            max_epochs: 50,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&config, b, &TrainOptions::default()).map_err(|e| e.to_string())?;
        let probs = eval::predict(&out.best.model, &b.val, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        let labels: Vec<u8> = b.val.iter().map(|e| e.instance.label).collect();
        let auc = eval::auc(&probs, &labels).map_err(|e| e.to_string())?;
        failed |= auc < floor;
        parts.push(format!(
            "{kind} val AUC {auc:.4} (>= {floor}) in {} epochs",
            out.history.records.len()
        ));
    }
    let detail = parts.join(", ");
    if failed {
        Err(detail)
    } else {
        Ok(detail)
    }
}

fn parameter_accounting() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for (v, k) in [(46_200usize, 10usize), (100, 10), (7, 3), (2004, 16)] {
        for kind in [ModelKind::LorentzFm, ModelKind::Fm] {
            let expect = match kind {
                ModelKind::LorentzFm => (k - 1) * v,
                ModelKind::Fm => 1 + v + k * v,
            };
            let path = dir.path().join(format!("{kind}-{v}-{k}.ckpt"));
            blank_checkpoint(kind, Task::Ranking, v, k)
                .and_then(|c| c.save(&path))
                .map_err(|e| e.to_string())?;
            let text = cmd_inspect(&path).map_err(|e| e.to_string())?;
            let line = format!("free_parameters: {expect}\n");
            ensure(text.contains(&line), || {
                format!("{kind} |V|={v} k={k}: {text}")
            })?;
            if v == 46_200 {
                seen.push(format!("{kind} {expect}"));
            }
        }
    }
    ensure(seen[0] == "lorentzfm 415800", || seen[0].clone())?;
    Ok(format!("|V|=46200 k=10: {}", seen.join(", ")))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lorentzfm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    common::write_ranking_fixture(root, 120, 80, 8);
    let config = root.join("train.toml");
    std::fs::write(
        &config,
        "embedding_size = 6\nmax_epochs = 4\nnegatives = 4\nval_candidates = 40\n",
    )
    .map_err(|e| e.to_string())?;
    let p = |p: &Path| p.to_str().unwrap().to_string();
    let pipeline = |name: &str, threads: &str| -> Result<PathBuf, String> {
        let data = root.join(format!("{name}-data"));
        let run = root.join(format!("{name}-run"));
        let common_flags = ["--deterministic", "--seed", "7", "--threads", threads];
        let with = |mut a: Vec<String>| -> Vec<String> {
            a.extend(common_flags.iter().map(|s| s.to_string()));
            a
        };
        let go = |a: Vec<String>| cli(&a.iter().map(String::as_str).collect::<Vec<_>>());
        go(with(vec![
            "preprocess".into(),
            "--schema".into(),
            p(&root.join("schema.toml")),
            "--input".into(),
            p(&root.join("raw.csv")),
            "--out".into(),
            p(&data),
        ]))?;
        go(with(vec![
            "train".into(),
            "--config".into(),
            p(&config),
            "--data".into(),
            p(&data),
            "--out".into(),
            p(&run),
        ]))?;
        go(with(vec![
            "evaluate".into(),
            "--checkpoint".into(),
            p(&run.join("best.ckpt")),
            "--data".into(),
            p(&data),
        ]))?;
        Ok(run)
    };
    let a = pipeline("a", "1")?;
    let b = pipeline("b", "1")?;
    let c = pipeline("c", "4")?;
    let files = [
        "history.tsv",
        "metrics_val.txt",
        "metrics_val.kv",
        "metrics_test.txt",
        "metrics_test.kv",
        "best.ckpt",
    ];
    for f in files {
        let read = |d: &Path| std::fs::read(d.join(f)).map_err(|e| format!("{f}: {e}"));
        let base = read(&a)?;
        ensure(base == read(&b)?, || {
            format!("{f} differs between identical runs")
        })?;
        ensure(base == read(&c)?, || {
            format!("{f} differs between 1 and 4 threads")
        })?;
    }
    Ok(format!(
        "{} files identical across 3 runs (1, 1, 4 threads)",
        files.len()
    ))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn pipeline_fixtures() -> Outcome {
    let load = |min_freq: usize, splits: Option<(usize, usize)>| -> Result<DatasetBundle, String> {
        let mut schema = SchemaFile::load(&fixture("kcore20.toml")).map_err(|e| e.to_string())?;
        schema.min_freq = min_freq;
        if let Some((v, t)) = splits {
            schema.splits.val = data::SplitSize::Count(v);
            schema.splits.test = data::SplitSize::Count(t);
        }
        let records =
            data::read_raw(&schema, &fixture("kcore20.csv")).map_err(|e| e.to_string())?;
        data::preprocess(&schema, records).map_err(|e| e.to_string())
    };
    // k-core: 20 raw rows, one duplicate, three peeled components
    let b = load(1, None)?;
    ensure(b.users == ["u1", "u2", "u3", "u6", "u9"], || {
        format!("users {:?}", b.users)
    })?;
    ensure(b.items == ["i1", "i2", "i3"], || {
        format!("items {:?}", b.items)
    })?;
    ensure(b.train.len() == 12, || {
        format!("{} pairs survive", b.train.len())
    })?;

    let tokens = |b: &DatasetBundle, f: u32| -> Vec<String> {
        (0..b.vocab.len() as u32)
            .filter(|&i| b.vocab.field_of(i) == f)
            .map(|i| b.vocab.token(i).to_string())
            .collect()
    };
    let folded = load(5, None)?;
    let vocab: Vec<Vec<String>> = (0..4).map(|f| tokens(&folded, f)).collect();
    let expect = [
        vec![UNKNOWN_TOKEN],
        vec![UNKNOWN_TOKEN, "i2"],
        vec![UNKNOWN_TOKEN, "Action", "Indie"],
        vec![UNKNOWN_TOKEN, "9.99", "free"],
    ];
    ensure(vocab == expect, || {
        format!("min_freq=5 vocabulary {vocab:?}")
    })?;

    let slot_tokens: Vec<&str> = b.item_entries[1]
        .iter()
        .map(|e| b.vocab.token(e.index))
        .collect();
    ensure(
        slot_tokens == ["i2", "Indie", UNKNOWN_TOKEN, "9.99"],
        || format!("i2 slots {slot_tokens:?}"),
    )?;
    let slot_tokens: Vec<&str> = b.item_entries[2]
        .iter()
        .map(|e| b.vocab.token(e.index))
        .collect();
    ensure(slot_tokens == ["i3", "Action", "RPG", "free"], || {
        format!("i3 slots {slot_tokens:?}")
    })?;

    let s = load(1, Some((2, 3)))?;
    let sizes = (s.train.len(), s.val.len(), s.test.len());
    ensure(sizes == (7, 2, 3), || format!("count split {sizes:?}"))?;
    let sizes = data::split_sizes(12, &data::SplitSpec::default()).map_err(|e| e.to_string())?;
    ensure(sizes == (1, 1), || format!("fraction split {sizes:?}"))?;
    Ok(format!(
        "12 pairs / 5 users / 3 items, |V| {} -> {} at min_freq 5, padding and splits exact",
        b.feature_count(),
        folded.feature_count()
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion {
            id: 1,
            name: "gradient correctness",
            limit: secs(10),
            run: gradient_correctness,
        },
        Criterion {
            id: 2,
            name: "manifold preservation",
            limit: secs(5),
            run: manifold_preservation,
        },
        Criterion {
            id: 3,
            name: "score bound",
            limit: secs(30),
            run: score_bound,
        },
        Criterion {
            id: 4,
            name: "exponential map identity",
            limit: None,
            run: exp_map_identity,
        },
        Criterion {
            id: 5,
            name: "oracle equivalence",
            limit: None,
            run: oracle_equivalence,
        },
        Criterion {
            id: 6,
            name: "synthetic learnability",
            limit: secs(300),
            run: synthetic_learnability,
        },
        Criterion {
            id: 7,
            name: "parameter accounting",
            limit: None,
            run: parameter_accounting,
        },
        Criterion {
            id: 8,
            name: "determinism",
            limit: None,
            run: determinism,
        },
        Criterion {
            id: 9,
            name: "pipeline fixtures",
            limit: None,
            run: pipeline_fixtures,
        },
    ];
    let mut failures = 0;
    for c in &criteria {
        if !args.is_empty() && !args.iter().any(|a| c.name.contains(a.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = result.and_then(|d| within(c.limit, elapsed).map(|_| d));
        match result {
            Ok(detail) => println!("PASS [{}] {} ({elapsed:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                failures += 1;
                println!("FAIL [{}] {} ({elapsed:.2?}): {why}", c.id, c.name);
            }
        }
    }
    println!("acceptance: {} criteria, {failures} failed", criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
