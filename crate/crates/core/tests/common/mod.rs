//! Independent oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use lorentzfm::model::{Entry, SparseInstance};
use rand::Rng;

pub fn minkowski(u: &[f64], v: &[f64]) -> f64 {
    -u[0] * v[0] + u[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>()
}

/// Triangle score written out directly from the Lorentz inner product.
pub fn triangle(u: &[f64], v: &[f64]) -> f64 {
    (1.0 - minkowski(u, v) - u[0] - v[0]) / (u[0] * v[0])
}

pub fn lift(spatial: &[f64]) -> Vec<f64> {
    let mut x = vec![(1.0 + spatial.iter().map(|s| s * s).sum::<f64>()).sqrt()];
    x.extend_from_slice(spatial);
    x
}

/// Double loop over ordered pairs of distinct slots.
pub fn naive_lfm(rows: &[Vec<f64>], inst: &SparseInstance) -> f64 {
    let e = &inst.entries;
    let mut s = 0.0;
    for i in 0..e.len() {
        for j in 0..e.len() {
            if i != j {
                s += triangle(&rows[e[i].index as usize], &rows[e[j].index as usize])
                    * e[i].value
                    * e[j].value;
            }
        }
    }
    s
}

/// `w0 + sum w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j` by double loop.
pub fn naive_fm(bias: f64, linear: &[f64], factors: &[Vec<f64>], inst: &SparseInstance) -> f64 {
    let e = &inst.entries;
    let mut s = bias;
    for a in e {
        s += linear[a.index as usize] * a.value;
    }
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            let dot: f64 = factors[e[i].index as usize]
                .iter()
                .zip(&factors[e[j].index as usize])
                .map(|(a, b)| a * b)
                .sum();
            s += dot * e[i].value * e[j].value;
        }
    }
    s
}

/// Unclamped logistic loss of a logit.
pub fn logistic_loss(z: f64, y: f64) -> f64 {
    // log(1 + exp(-z)) for y = 1, log(1 + exp(z)) for y = 0
    let m = if y == 1.0 { -z } else { z };
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

/// Random instance over `count` features with `slots` entries in distinct
/// fields; repeats and non-unit values occur.
pub fn random_instance<R: Rng>(rng: &mut R, count: usize, slots: usize) -> SparseInstance {
    let entries = (0..slots)
        .map(|f| {
            let value = if rng.gen_bool(0.7) {
                1.0
            } else {
                rng.gen_range(0.2..1.5)
            };
            Entry::new(f as u32, rng.gen_range(0..count) as u32, value)
        })
        .collect();
    SparseInstance::new(entries, rng.gen_range(0..2))
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Writes a ranking CSV (`user,item,genre,price`) where each of `users`
/// users interacts with `per_user` items in a structured way, plus a
/// schema that splits 10% / 10%.
pub fn write_ranking_fixture(dir: &Path, users: usize, items: usize, per_user: usize) {
    let genres = ["Action", "Indie", "RPG", "Sim", "Racing"];
    let prices = ["free", "4.99", "9.99"];
    let mut csv = String::from("user,item,genre,price\n");
    for u in 0..users {
        for k in 0..per_user {
            let i = (u * 7 + k * (1 + u % 3)) % items;
            let g = format!("{}|{}", genres[i % 5], genres[(i / 5) % 5]);
            let _ = writeln!(csv, "user{u},item{i},{g},{}", prices[i % 3]);
        }
    }
    std::fs::write(dir.join("raw.csv"), csv).unwrap();
    std::fs::write(
        dir.join("schema.toml"),
        r#"task = "ranking"
user_column = "user"
item_column = "item"
min_freq = 1
seed = 5

[splits]
val = 0.1
test = 0.1

[[fields]]
name = "user"
side = "user"

[[fields]]
name = "item"
side = "item"

[[fields]]
name = "genre"
side = "item"
multiplicity = 2

[[fields]]
name = "price"
side = "item"
"#,
    )
    .unwrap();
}

pub const FD_STEP: f64 = 1e-5;

/// Draws an instance whose logit stays inside `[-10, 10]`, where the loss
/// clamp is inactive and finite differences stay well conditioned.
fn unclamped<R: Rng>(
    rng: &mut R,
    count: usize,
    slots: usize,
    score: impl Fn(&SparseInstance) -> f64,
) -> SparseInstance {
    loop {
        let inst = random_instance(rng, count, slots);
        if score(&inst).abs() <= 10.0 {
            return inst;
        }
    }
}

/// Largest per-instance relative error between `lfm_grad` and central
/// differences of the naive loss, over `n` random instances with ambient
/// dimension `k`.
pub fn fd_check_lfm(k: usize, n: usize, seed: u64) -> f64 {
    use lorentzfm::model::{lfm_grad, EmbeddingTable};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let count = 15;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let rows: Vec<Vec<f64>> = (0..count)
            .map(|_| lift(&(1..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let table = EmbeddingTable::from_raw(count, k, rows.concat()).unwrap();
        let slots = rng.gen_range(2..=7);
        let inst = unclamped(&mut rng, count, slots, |i| naive_lfm(&rows, i));
        let (grad, _) = lfm_grad(&inst, &table).unwrap();
        let loss = |r: &[Vec<f64>]| logistic_loss(naive_lfm(r, &inst), inst.target());

        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for (index, g) in grad.iter() {
            for c in 0..k {
                let mut plus = rows.clone();
                plus[index as usize][c] += FD_STEP;
                let mut minus = rows.clone();
                minus[index as usize][c] -= FD_STEP;
                numeric.push((loss(&plus) - loss(&minus)) / (2.0 * FD_STEP));
                analytic.push(g[c]);
            }
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// As [`fd_check_lfm`] for the FM baseline with factor size `k`; covers the
/// bias, linear weights and factors.
pub fn fd_check_fm(k: usize, n: usize, seed: u64) -> f64 {
    use lorentzfm::model::{fm_grad, FmParameters};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let count = 15;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let bias: f64 = rng.gen_range(-0.5..0.5);
        let linear: Vec<f64> = (0..count).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let factors: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..k).map(|_| rng.gen_range(-0.7..0.7)).collect())
            .collect();
        let mut flat = vec![bias];
        flat.extend_from_slice(&linear);
        flat.extend(factors.concat());
        let params = FmParameters::from_flat(count, k, &flat).unwrap();
        let slots = rng.gen_range(2..=7);
        let inst = unclamped(&mut rng, count, slots, |i| {
            naive_fm(bias, &linear, &factors, i)
        });
        let (grad, _) = fm_grad(&inst, &params).unwrap();
        let y = inst.target();
        let loss = |b: f64, l: &[f64], f: &[Vec<f64>]| logistic_loss(naive_fm(b, l, f, &inst), y);
        let central = |up: f64, down: f64| (up - down) / (2.0 * FD_STEP);

        let mut analytic = vec![grad.bias];
        let mut numeric = vec![central(
            loss(bias + FD_STEP, &linear, &factors),
            loss(bias - FD_STEP, &linear, &factors),
        )];
        for (slot, &(index, gl)) in grad.linear.iter().enumerate() {
            let i = index as usize;
            let (mut lp, mut lm) = (linear.clone(), linear.clone());
            lp[i] += FD_STEP;
            lm[i] -= FD_STEP;
            analytic.push(gl);
            numeric.push(central(
                loss(bias, &lp, &factors),
                loss(bias, &lm, &factors),
            ));
            for c in 0..k {
                let (mut fp, mut fm) = (factors.clone(), factors.clone());
                fp[i][c] += FD_STEP;
                fm[i][c] -= FD_STEP;
                analytic.push(grad.factor(slot)[c]);
                numeric.push(central(loss(bias, &linear, &fp), loss(bias, &linear, &fm)));
            }
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}
