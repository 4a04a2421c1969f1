#![allow(dead_code)]

//! Test helpers and brute-force oracles shared by the integration tests.

use rand::Rng;
use segrsd_core::appearance::{AppearanceParams, Dense, Encoder, LabeledVideo};
use segrsd_core::lengths::LengthModel;
use segrsd_core::mallows::MallowsModel;
use segrsd_core::rng::{rng_from_seed, Rng as ChaRng};
use segrsd_core::rsd::{smooth_l1, AuxHead, Objective, RsdParams};
use segrsd_core::{Matrix, VideoSequence};

pub fn rng(seed: u64) -> ChaRng {
    rng_from_seed(seed)
}

pub fn random_video(rng: &mut impl Rng, id: &str, frames: usize, dim: usize, period: f64) -> VideoSequence {
    let data = (0..frames * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    VideoSequence::new(id, Matrix::from_vec(frames, dim, data), period, None).unwrap()
}

pub fn dense_apply(d: &Dense, x: &[f64]) -> Vec<f64> {
    (0..d.output_dim())
        .map(|o| d.bias[o] + d.weights.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

/// Embeddings of every frame through a tanh stack.
pub fn embed(layers: &[Dense], x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|t| {
            let mut a = x.row(t).to_vec();
            for l in layers {
                a = dense_apply(l, &a).into_iter().map(f64::tanh).collect();
            }
            a
        })
        .collect()
}

pub fn context(e: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(e.len());
    for (t, row) in e.iter().enumerate() {
        if t == 0 {
            out.push(row.clone());
        } else {
            let prev = &out[t - 1];
            out.push(row.iter().zip(prev).map(|(x, p)| lambda * p + (1.0 - lambda) * x).collect());
        }
    }
    out
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Relative error `|a - n| / max(|a|, |n|)` between the analytic gradient
/// and central differences of `f` over every parameter of `layers`.
pub fn fd_rel_error<F: Fn(&[Dense]) -> f64>(layers: &[Dense], analytic: &[Dense], f: F) -> f64 {
    let h = 1e-5;
    let mut work = layers.to_vec();
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for l in 0..layers.len() {
        for p in 0..layers[l].num_params() {
            let orig = layers[l].param(p);
            work[l].set_param(p, orig + h);
            let up = f(&work);
            work[l].set_param(p, orig - h);
            let down = f(&work);
            work[l].set_param(p, orig);
            let num = (up - down) / (2.0 * h);
            let a = analytic[l].param(p);
            diff2 += (a - num) * (a - num);
            a2 += a * a;
            n2 += num * num;
        }
    }
    let denom = a2.sqrt().max(n2.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff2.sqrt() / denom
    }
}

pub fn batch_for(rng: &mut impl Rng, videos: &[VideoSequence], n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(0..videos.len());
            (v, rng.random_range(0..videos[v].len()))
        })
        .collect()
}

pub fn ce_oracle(layers: &[Dense], lambda: f64, data: &[LabeledVideo<'_>], batch: &[(usize, usize)]) -> f64 {
    let (enc, head) = layers.split_at(layers.len() - 1);
    let mut total = 0.0;
    for &(v, t) in batch {
        let e = embed(enc, &data[v].video.features);
        let c = context(&e, lambda);
        let f: Vec<f64> = e[t].iter().chain(&c[t]).copied().collect();
        let z = dense_apply(&head[0], &f);
        total += log_sum_exp(&z) - z[data[v].labels[t]];
    }
    total / batch.len() as f64
}

pub fn coherence_oracle(layers: &[Dense], video: &VideoSequence, pairs: &[(usize, usize)], margin: f64) -> f64 {
    let e = embed(layers, &video.features);
    let n = e.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let slow: f64 = (0..n - 1).map(|t| sq(&e[t + 1], &e[t])).sum::<f64>() / (n - 1) as f64;
    let second: f64 = (0..n - 2)
        .map(|t| {
            e[t].iter()
                .zip(&e[t + 1])
                .zip(&e[t + 2])
                .map(|((a, b), c)| (c - 2.0 * b + a) * (c - 2.0 * b + a))
                .sum::<f64>()
        })
        .sum::<f64>()
        / (n - 2) as f64;
    let rep: f64 = pairs
        .iter()
        .map(|&(t, u)| (margin - sq(&e[t], &e[u]).sqrt()).max(0.0).powi(2))
        .sum::<f64>()
        / pairs.len() as f64;
    slow + second + rep
}

pub struct RsdCase {
    pub videos: Vec<VideoSequence>,
    pub batch: Vec<(usize, usize)>,
    pub labels: Vec<Vec<usize>>,
}

/// Independent evaluation of the batch objective. `pi` holds the corridor
/// weights frozen at the unperturbed parameters.
pub fn rsd_oracle(params: &RsdParams, case: &RsdCase, obj: &Objective, pi: &[f64]) -> f64 {
    let cp = &obj.corridor;
    let n_enc = params.encoder.layers.len();
    let mut videos: Vec<usize> = case.batch.iter().map(|b| b.0).collect();
    videos.sort();
    videos.dedup();
    let mut total = 0.0;
    for &vi in &videos {
        let video = &case.videos[vi];
        let e = embed(&params.encoder.layers[..n_enc], &video.features);
        let c = context(&e, params.encoder.context_lambda);
        let frames: Vec<(usize, usize)> = case.batch.iter().enumerate().filter(|(_, b)| b.0 == vi).map(|(i, b)| (i, b.1)).collect();
        let mut sum = 0.0;
        for &(bi, t) in &frames {
            let mut x: Vec<f64> = e[t].iter().chain(&c[t]).copied().collect();
            x.push(params.scale * video.elapsed_min(t));
            let h: Vec<f64> = dense_apply(&params.hidden, &x).into_iter().map(f64::tanh).collect();
            let y = dense_apply(&params.output, &h)[0];
            sum += obj.rsd_weight * pi[bi] * smooth_l1(y, cp.scale * video.remaining_min(t), cp.beta);
            match &params.aux {
                Some(AuxHead::Classes(d)) => {
                    let z = dense_apply(d, &e[t]);
                    sum += obj.aux_weight * (log_sum_exp(&z) - z[case.labels[vi][t]]);
                }
                Some(AuxHead::Progress(d)) => {
                    let z = dense_apply(d, &e[t])[0];
                    sum += obj.aux_weight * smooth_l1(z, video.elapsed_min(t) / video.duration_min(), cp.beta);
                }
                None => {}
            }
        }
        total += sum / frames.len() as f64;
    }
    total / videos.len() as f64
}

pub fn with_layers(base: &RsdParams, layers: &[Dense]) -> RsdParams {
    let mut p = base.clone();
    for (dst, src) in p.layers_mut().into_iter().zip(layers) {
        *dst = src.clone();
    }
    p
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// All ordered selections of distinct ids from `0..k`.
pub fn arrangements(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn rec(k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        for i in 0..k {
            if !cur.contains(&i) {
                cur.push(i);
                rec(k, cur, out);
                cur.pop();
            }
        }
    }
    rec(k, &mut Vec::new(), &mut out);
    out
}

/// Compositions of `t` into `parts` positive parts.
pub fn compositions(t: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return if t >= 1 { vec![vec![t]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 1..t {
        for mut rest in compositions(t - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

pub fn all_segmentations(t: usize, k: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for order in arrangements(k) {
        for lens in compositions(t, order.len()) {
            out.push(order.iter().copied().zip(lens).collect());
        }
    }
    out
}

/// Brute-force log joint: absent ids sit first in ascending order, each
/// slot normalizer is summed term by term, the multinomial uses factorials.
pub fn brute_log_joint(segs: &[(usize, usize)], probs: &Matrix, rho: &[f64], theta: &[f64]) -> f64 {
    let k = theta.len();
    let mut full: Vec<usize> = (0..k).filter(|i| !segs.iter().any(|s| s.0 == *i)).collect();
    full.extend(segs.iter().map(|s| s.0));
    let mut order_lp = 0.0;
    for i in 0..k - 1 {
        let pos = full.iter().position(|&x| x == i).unwrap();
        let v = full[..pos].iter().filter(|&&j| j > i).count();
        let psi: f64 = (0..k - i).map(|x| (-rho[i] * x as f64).exp()).sum();
        order_lp += -rho[i] * v as f64 - psi.ln();
    }
    let z: f64 = segs.iter().map(|s| theta[s.0]).sum();
    let extra: usize = segs.iter().map(|s| s.1 - 1).sum();
    let mut len_p = factorial(extra);
    for &(id, len) in segs {
        len_p *= (theta[id] / z).powi((len - 1) as i32) / factorial(len - 1);
    }
    let mut app = 0.0;
    let mut t = 0;
    for &(id, len) in segs {
        for f in t..t + len {
            app += probs.get(f, id).ln();
        }
        t += len;
    }
    app + order_lp + len_p.ln()
}

pub fn random_probs(r: &mut impl Rng, t: usize, k: usize) -> Matrix {
    let mut m = Matrix::zeros(t, k);
    for f in 0..t {
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for (c, v) in raw.iter().enumerate() {
            m.set(f, c, v / s);
        }
    }
    m
}

pub fn random_models(r: &mut impl Rng, k: usize) -> (MallowsModel, LengthModel, Vec<f64>, Vec<f64>) {
    let rho: Vec<f64> = (0..k - 1).map(|_| r.random_range(0.0..2.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let theta: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let mm = MallowsModel::new(k, rho.clone(), 0.1, 1.0).unwrap();
    let lm = LengthModel::new(theta.clone(), 1.0).unwrap();
    (mm, lm, rho, theta)
}

pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Every order of the present labels, blocks of their own counts, ties to
/// the lexicographically smallest order.
pub fn brute_force(pred: &[usize]) -> (Vec<usize>, usize) {
    let mut present: Vec<usize> = pred.to_vec();
    present.sort();
    present.dedup();
    let count = |l: usize| pred.iter().filter(|&&x| x == l).count();
    let mut best: Option<(Vec<usize>, usize)> = None;
    for order in permutations(&present) {
        let blocks: Vec<usize> = order.iter().flat_map(|&l| std::iter::repeat_n(l, count(l))).collect();
        let m = blocks.iter().zip(pred).filter(|(a, b)| a == b).count();
        let better = match &best {
            None => true,
            Some((o, s)) => m > *s || (m == *s && order < *o),
        };
        if better {
            best = Some((order, m));
        }
    }
    best.unwrap()
}

pub fn random_labels(r: &mut impl Rng, k: usize, t: usize) -> Vec<usize> {
    // mix of noisy blocks and pure noise
    if r.random::<bool>() {
        (0..t).map(|_| r.random_range(0..k)).collect()
    } else {
        let mut out = Vec::with_capacity(t);
        while out.len() < t {
            let l = r.random_range(0..k);
            for _ in 0..r.random_range(1..8) {
                out.push(if r.random_range(0.0..1.0) < 0.2 { r.random_range(0..k) } else { l });
            }
        }
        out.truncate(t);
        out
    }
}

/// A model whose arg-max reproduces one-hot encoded labels.
pub fn label_echo_model(k: usize) -> AppearanceParams {
    let mut layer = Dense::zeros(k, k);
    let mut head = Dense::zeros(2 * k, k);
    for i in 0..k {
        layer.weights.set(i, i, 5.0);
        head.weights.set(i, i, 1.0);
    }
    AppearanceParams {
        encoder: Encoder {
            layers: vec![layer],
            context_lambda: 0.0,
        },
        head,
        trainable: vec![true, true],
    }
}

pub fn one_hot_video(id: &str, labels: &[usize], k: usize) -> VideoSequence {
    let mut m = Matrix::zeros(labels.len(), k);
    for (t, &l) in labels.iter().enumerate() {
        m.set(t, l, 1.0);
    }
    VideoSequence::new(id, m, 1.0, None).unwrap()
}
