//! Forward algorithm, Viterbi decoding, and forward-filter backward-sampling
//! over a fixed emission log-likelihood matrix.
//!
//! Missing steps are represented by all-zero rows in the emission log matrix
//! (likelihood 1 for every state), so they pass through the chain without
//! contributing evidence.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

/// Scaled forward pass; returns the marginal log-likelihood.
pub fn log_likelihood_forward(
    e_log: &ArrayView2<f64>,
    trans: &ArrayView2<f64>,
    init: &[f64],
) -> f64 {
    let t_len = e_log.nrows();
    let k = e_log.ncols();
    if t_len == 0 {
        return 0.0;
    }
    let mut alpha = vec![0.0f64; k];
    let mut next = vec![0.0f64; k];
    let mut ll = 0.0;

    let m0 = (0..k).map(|s| e_log[[0, s]]).fold(f64::NEG_INFINITY, f64::max);
    for s in 0..k {
        alpha[s] = init[s] * (e_log[[0, s]] - m0).exp();
    }
    let c0: f64 = alpha.iter().sum();
    for a in alpha.iter_mut() {
        *a /= c0;
    }
    ll += c0.ln() + m0;

    for t in 1..t_len {
        let mt = (0..k).map(|s| e_log[[t, s]]).fold(f64::NEG_INFINITY, f64::max);
        for (j, nj) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, ai) in alpha.iter().enumerate() {
                acc += ai * trans[[i, j]];
            }
            *nj = acc * (e_log[[t, j]] - mt).exp();
        }
        let ct: f64 = next.iter().sum();
        for n in next.iter_mut() {
            *n /= ct;
        }
        ll += ct.ln() + mt;
        std::mem::swap(&mut alpha, &mut next);
    }
    ll
}

/// Max-probability state path (log space, first-max tie-breaking).
pub fn viterbi(e_log: &ArrayView2<f64>, trans: &ArrayView2<f64>, init: &[f64]) -> Vec<u16> {
    let t_len = e_log.nrows();
    let k = e_log.ncols();
    if t_len == 0 {
        return Vec::new();
    }
    let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
    let log_trans: Vec<f64> = trans.iter().copied().map(ln).collect();

    let mut delta = vec![0.0f64; k];
    let mut back = Array2::<u16>::zeros((t_len, k));
    for s in 0..k {
        delta[s] = ln(init[s]) + e_log[[0, s]];
    }
    let mut next = vec![0.0f64; k];
    for t in 1..t_len {
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0u16;
            for i in 0..k {
                let v = delta[i] + log_trans[i * k + j];
                if v > best {
                    best = v;
                    arg = i as u16;
                }
            }
            next[j] = best + e_log[[t, j]];
            back[[t, j]] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0usize;
    let mut best = f64::NEG_INFINITY;
    for (s, &v) in delta.iter().enumerate() {
        if v > best {
            best = v;
            last = s;
        }
    }
    let mut path = vec![0u16; t_len];
    path[t_len - 1] = last as u16;
    for t in (1..t_len).rev() {
        path[t - 1] = back[[t, path[t] as usize]];
    }
    path
}

/// Draw a state path from the posterior given emissions and transitions
/// (forward filter, backward sample).
pub fn ffbs<R: Rng>(
    e_log: &ArrayView2<f64>,
    trans: &ArrayView2<f64>,
    init: &[f64],
    rng: &mut R,
) -> Vec<u16> {
    let t_len = e_log.nrows();
    let k = e_log.ncols();
    if t_len == 0 {
        return Vec::new();
    }
    let mut alphas = Array2::<f64>::zeros((t_len, k));
    for s in 0..k {
        alphas[[0, s]] = init[s] * (e_log[[0, s]] - row_max(e_log, 0)).exp();
    }
    normalize_row(&mut alphas, 0);
    for t in 1..t_len {
        let mt = row_max(e_log, t);
        for j in 0..k {
            let mut acc = 0.0;
            for i in 0..k {
                acc += alphas[[t - 1, i]] * trans[[i, j]];
            }
            alphas[[t, j]] = acc * (e_log[[t, j]] - mt).exp();
        }
        normalize_row(&mut alphas, t);
    }

    let mut path = vec![0u16; t_len];
    path[t_len - 1] = sample_index(&alphas.row(t_len - 1).to_vec(), rng);
    for t in (1..t_len).rev() {
        let nxt = path[t] as usize;
        let mut w = vec![0.0f64; k];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = alphas[[t - 1, i]] * trans[[i, nxt]];
        }
        path[t - 1] = sample_index(&w, rng);
    }
    path
}

fn row_max(e: &ArrayView2<f64>, t: usize) -> f64 {
    e.row(t).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn normalize_row(a: &mut Array2<f64>, t: usize) {
    let s: f64 = a.row(t).sum();
    if s > 0.0 {
        for v in a.row_mut(t).iter_mut() {
            *v /= s;
        }
    } else {
        let k = a.ncols();
        for v in a.row_mut(t).iter_mut() {
            *v = 1.0 / k as f64;
        }
    }
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> u16 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i as u16;
        }
    }
    (weights.len() - 1) as u16
}
