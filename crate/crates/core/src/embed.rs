//! Day embeddings: stationary distribution of each day's empirical state
//! transition matrix, plus per-person centroids.
//!
//! Each decoded day becomes a length-K simplex vector of time spent in each
//! shared state; detection features concatenate the day, the next day, and
//! the person's training-set centroid.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::data::DayKey;
use crate::error::{Error, Result};
use crate::hmm::StateSequence;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 100_000;
const SMOOTHING_EPS: f64 = 1e-6;

/// Empirical transition matrix of a decoded day.
///
/// Transitions are counted over consecutive non-missing steps. Rows of
/// visited states are normalized to sum to one (a visited state with no
/// outgoing transition gets a self-loop); unvisited states are flagged in
/// the returned mask and their rows left at zero.
pub fn transition_counts(seq: &StateSequence, k: usize) -> Result<(Array2<f64>, Vec<bool>)> {
    transition_counts_raw(&seq.states, &seq.missing, k)
}

/// Slice-level variant of [`transition_counts`].
pub fn transition_counts_raw(
    states: &[u16],
    missing: &[bool],
    k: usize,
) -> Result<(Array2<f64>, Vec<bool>)> {
    if states.len() != missing.len() {
        return Err(Error::DimensionMismatch { expected: states.len(), got: missing.len() });
    }
    let present: Vec<usize> =
        (0..states.len()).filter(|&t| !missing[t]).map(|t| states[t] as usize).collect();
    if present.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 non-missing steps for transitions, got {}",
            present.len()
        )));
    }
    let mut visited = vec![false; k];
    for (&s, ok) in states.iter().zip(missing.iter().map(|m| !m)) {
        if ok {
            let s = s as usize;
            if s >= k {
                return Err(Error::validation(format!("state id {s} out of range (K={k})")));
            }
            visited[s] = true;
        }
    }
    let mut counts = Array2::<f64>::zeros((k, k));
    for t in 0..states.len() - 1 {
        if !missing[t] && !missing[t + 1] {
            counts[[states[t] as usize, states[t + 1] as usize]] += 1.0;
        }
    }
    for i in 0..k {
        if !visited[i] {
            continue;
        }
        let row_sum: f64 = counts.row(i).sum();
        if row_sum > 0.0 {
            for j in 0..k {
                counts[[i, j]] /= row_sum;
            }
        } else {
            counts[[i, i]] = 1.0; // visited only at the final step
        }
    }
    Ok((counts, visited))
}

/// Stationary distribution of a row-stochastic matrix restricted to visited
/// states, by power iteration on the dominant left eigenvector.
///
/// Unvisited states receive zero mass. If the raw chain does not converge
/// (periodic or reducible visited submatrix), the submatrix is smoothed with
/// a small uniform component and iteration retried.
pub fn stationary_distribution(p: &ArrayView2<f64>, visited: &[bool]) -> Result<Vec<f64>> {
    let k = p.nrows();
    if p.ncols() != k || visited.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: p.ncols().max(visited.len()) });
    }
    let idx: Vec<usize> = (0..k).filter(|&i| visited[i]).collect();
    let m = idx.len();
    if m == 0 {
        return Err(Error::Degenerate("no visited states".into()));
    }
    let mut out = vec![0.0; k];
    if m == 1 {
        out[idx[0]] = 1.0;
        return Ok(out);
    }
    let mut sub = Array2::<f64>::zeros((m, m));
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            sub[[a, b]] = p[[i, j]];
        }
    }
    let pi = match power_iterate(&sub) {
        Some(pi) => pi,
        None => {
            // periodic or reducible: mix in a uniform component
            let eps = SMOOTHING_EPS;
            let denom = 1.0 + eps * m as f64;
            let mut smoothed = sub.clone();
            smoothed.mapv_inplace(|x| (x + eps) / denom);
            power_iterate(&smoothed)
                .ok_or(Error::NoConvergence { iterations: POWER_MAX_ITERS })?
        }
    };
    for (a, &i) in idx.iter().enumerate() {
        out[i] = pi[a];
    }
    Ok(out)
}

fn power_iterate(p: &Array2<f64>) -> Option<Vec<f64>> {
    let m = p.nrows();
    let mut pi = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    for _ in 0..POWER_MAX_ITERS {
        next.fill(0.0);
        for i in 0..m {
            let w = pi[i];
            if w == 0.0 {
                continue;
            }
            for j in 0..m {
                next[j] += w * p[[i, j]];
            }
        }
        let total: f64 = next.iter().sum();
        for x in next.iter_mut() {
            *x /= total;
        }
        let delta: f64 = pi.iter().zip(next.iter()).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if delta < POWER_TOL {
            return Some(pi);
        }
    }
    None
}

/// Stationary embedding of one decoded day.
pub fn embed_state_sequence(seq: &StateSequence, k: usize) -> Result<Vec<f64>> {
    let (p, visited) = transition_counts(seq, k)?;
    stationary_distribution(&p.view(), &visited)
}

/// Detection feature vector: `[π_day, π_next, centroid]`, total length 3K.
/// A missing next-day embedding is replaced by the person centroid.
pub fn embed_day(
    pi_day: &[f64],
    pi_next: Option<&[f64]>,
    centroid: &[f64],
) -> Result<Vec<f64>> {
    let k = pi_day.len();
    if centroid.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: centroid.len() });
    }
    if let Some(nx) = pi_next {
        if nx.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: nx.len() });
        }
    }
    let mut v = Vec::with_capacity(3 * k);
    v.extend_from_slice(pi_day);
    v.extend_from_slice(pi_next.unwrap_or(centroid));
    v.extend_from_slice(centroid);
    Ok(v)
}

/// Arithmetic mean of one participant's training-day embeddings.
pub fn person_centroid(training_embeddings: &[&[f64]]) -> Result<Vec<f64>> {
    let n = training_embeddings.len();
    if n == 0 {
        return Err(Error::Degenerate("no training days for centroid".into()));
    }
    let k = training_embeddings[0].len();
    let mut c = vec![0.0; k];
    for e in training_embeddings {
        if e.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: e.len() });
        }
        for (ci, xi) in c.iter_mut().zip(e.iter()) {
            *ci += xi;
        }
    }
    for ci in c.iter_mut() {
        *ci /= n as f64;
    }
    Ok(c)
}

/// Per-participant centroids over a set of training rows, with a global
/// fallback for participants absent from training (cold start).
#[derive(Debug, Clone)]
pub struct CentroidMap {
    per_participant: BTreeMap<String, Vec<f64>>,
    global: Vec<f64>,
    pub k: usize,
}

impl CentroidMap {
    /// `rows` supplies (participant, π_day) pairs drawn from training data only.
    pub fn build<'a, I>(rows: I) -> Result<CentroidMap>
    where
        I: IntoIterator<Item = (&'a str, &'a [f64])>,
    {
        let mut grouped: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
        let mut all: Vec<&[f64]> = Vec::new();
        for (pid, pi) in rows {
            grouped.entry(pid.to_string()).or_default().push(pi);
            all.push(pi);
        }
        let global = person_centroid(&all)?;
        let k = global.len();
        let mut per_participant = BTreeMap::new();
        for (pid, embs) in grouped {
            per_participant.insert(pid, person_centroid(&embs)?);
        }
        Ok(CentroidMap { per_participant, global, k })
    }

    /// Centroid for a participant; the flag is true when the global fallback
    /// was used.
    pub fn get(&self, participant: &str) -> (&[f64], bool) {
        match self.per_participant.get(participant) {
            Some(c) => (c, false),
            None => (&self.global, true),
        }
    }

    pub fn global(&self) -> &[f64] {
        &self.global
    }

    pub fn participants(&self) -> impl Iterator<Item = &String> {
        self.per_participant.keys()
    }
}

/// Stationary embeddings for every day of a decoded cohort, aligned with the
/// record order used to produce `seqs`.
#[derive(Debug, Clone)]
pub struct DayEmbeddings {
    pub k: usize,
    pub keys: Vec<DayKey>,
    pub pi: Vec<Vec<f64>>,
}

impl DayEmbeddings {
    pub fn compute(keys: Vec<DayKey>, seqs: &[StateSequence], k: usize) -> Result<DayEmbeddings> {
        use rayon::prelude::*;
        if keys.len() != seqs.len() {
            return Err(Error::DimensionMismatch { expected: keys.len(), got: seqs.len() });
        }
        let pi: Result<Vec<Vec<f64>>> =
            seqs.par_iter().map(|s| embed_state_sequence(s, k)).collect();
        Ok(DayEmbeddings { k, keys, pi: pi? })
    }

    /// For each day, the index of the same participant's next calendar day,
    /// when present.
    pub fn next_day_index(&self) -> Vec<Option<usize>> {
        let index: BTreeMap<DayKey, usize> =
            self.keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        self.keys
            .iter()
            .map(|k| {
                k.date
                    .succ_opt()
                    .map(|d| DayKey::new(k.participant_id.clone(), d))
                    .and_then(|nk| index.get(&nk).copied())
            })
            .collect()
    }

    /// Write `participant_id,date,slot,state_0..` rows. Centroids here are
    /// full-data per-person means (fold-aware centroids are recomputed inside
    /// the evaluation harness).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let fname = path.display().to_string();
        let file = std::fs::File::create(path).map_err(|e| Error::io(&fname, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut header = String::from("participant_id,date,slot");
        for s in 0..self.k {
            header.push_str(&format!(",state_{s}"));
        }
        writeln!(w, "{header}").map_err(|e| Error::io(&fname, e))?;

        let next = self.next_day_index();
        let centroids = CentroidMap::build(
            self.keys.iter().zip(self.pi.iter()).map(|(k, p)| (k.participant_id.as_str(), p.as_slice())),
        )?;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.9}")).collect::<Vec<_>>().join(",");
        for (i, key) in self.keys.iter().enumerate() {
            writeln!(w, "{},{},day,{}", key.participant_id, key.date, fmt(&self.pi[i]))
                .map_err(|e| Error::io(&fname, e))?;
            if let Some(j) = next[i] {
                writeln!(w, "{},{},next,{}", key.participant_id, key.date, fmt(&self.pi[j]))
                    .map_err(|e| Error::io(&fname, e))?;
            }
            let (c, _) = centroids.get(&key.participant_id);
            writeln!(w, "{},{},centroid,{}", key.participant_id, key.date, fmt(c))
                .map_err(|e| Error::io(&fname, e))?;
        }
        w.flush().map_err(|e| Error::io(&fname, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn seq(states: &[u16]) -> StateSequence {
        StateSequence {
            key: String::new(),
            states: states.to_vec(),
            missing: vec![false; states.len()],
        }
    }

    #[test]
    fn counts_match_hand_examples() {
        let (p, v) = transition_counts(&seq(&[0, 0, 1, 1, 0]), 2).unwrap();
        assert_eq!(p, array![[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(v, vec![true, true]);

        let (p, v) = transition_counts(&seq(&[1, 1, 1]), 2).unwrap();
        assert_eq!(p.row(1).to_vec(), vec![0.0, 1.0]);
        assert_eq!(p.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(v, vec![false, true]);

        let (p, _) = transition_counts(&seq(&[0, 1, 0, 1]), 2).unwrap();
        assert_eq!(p, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn counts_skip_missing_pairs() {
        let s = StateSequence {
            key: String::new(),
            states: vec![0, 1, 1, 0],
            missing: vec![false, true, false, false],
        };
        // only the (1,0) pair at t=2..3 survives; plus state 0 visited at t=0
        let (p, v) = transition_counts(&s, 2).unwrap();
        assert_eq!(v, vec![true, true]);
        assert_eq!(p.row(1).to_vec(), vec![1.0, 0.0]);
        // state 0 has no outgoing transition -> self-loop
        assert_eq!(p.row(0).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn counts_error_on_single_step() {
        assert!(transition_counts(&seq(&[0]), 2).is_err());
    }

    #[test]
    fn stationary_matches_contract_examples() {
        let p = array![[1.0]];
        let pi = stationary_distribution(&p.view(), &[true]).unwrap();
        assert_eq!(pi, vec![1.0]);

        let p = array![[0.9, 0.1], [0.5, 0.5]];
        let pi = stationary_distribution(&p.view(), &[true, true]).unwrap();
        assert!((pi[0] - 5.0 / 6.0).abs() < 1e-8, "{pi:?}");
        assert!((pi[1] - 1.0 / 6.0).abs() < 1e-8);

        let p = array![[0.5, 0.5], [0.5, 0.5]];
        let pi = stationary_distribution(&p.view(), &[true, true]).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_handles_periodic_chain_via_smoothing() {
        let p = array![[0.0, 1.0], [1.0, 0.0]];
        let pi = stationary_distribution(&p.view(), &[true, true]).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-6);
        assert!((pi[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn stationary_zeroes_unvisited_states() {
        let (p, v) = transition_counts(&seq(&[1, 1, 1]), 3).unwrap();
        let pi = stationary_distribution(&p.view(), &v).unwrap();
        assert_eq!(pi, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn embed_day_shapes_and_fallback() {
        let pi = vec![0.0, 0.0, 0.0, 1.0, 0.0];
        let c = vec![0.2; 5];
        let v = embed_day(&pi, None, &c).unwrap();
        assert_eq!(v.len(), 15);
        assert_eq!(&v[5..10], &c[..]);
        let nx = vec![0.1, 0.2, 0.3, 0.2, 0.2];
        let v = embed_day(&pi, Some(&nx), &c).unwrap();
        assert_eq!(&v[5..10], &nx[..]);
        assert!(embed_day(&pi, None, &vec![0.1; 4]).is_err());
    }

    #[test]
    fn centroid_examples() {
        let e0 = vec![1.0, 0.0];
        let e1 = vec![0.0, 1.0];
        assert_eq!(person_centroid(&[&e0]).unwrap(), e0);
        assert_eq!(person_centroid(&[&e0, &e1]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn centroid_map_falls_back_to_global() {
        let e0 = vec![1.0, 0.0];
        let e1 = vec![0.0, 1.0];
        let rows: Vec<(&str, &[f64])> = vec![("a", &e0), ("b", &e1)];
        let m = CentroidMap::build(rows).unwrap();
        let (c, fallback) = m.get("zz");
        assert!(fallback);
        assert_eq!(c, &[0.5, 0.5]);
        let (c, fallback) = m.get("a");
        assert!(!fallback);
        assert_eq!(c, &[1.0, 0.0]);
    }

    proptest! {
        // π is a fixed point of the visited submatrix
        #[test]
        fn stationary_is_fixed_point(raw in proptest::collection::vec(0.05f64..1.0, 9)) {
            let mut p = Array2::<f64>::zeros((3, 3));
            for i in 0..3 {
                let s: f64 = raw[i * 3..i * 3 + 3].iter().sum();
                for j in 0..3 {
                    p[[i, j]] = raw[i * 3 + j] / s;
                }
            }
            let pi = stationary_distribution(&p.view(), &[true; 3]).unwrap();
            let mut err = 0.0;
            for j in 0..3 {
                let pij: f64 = (0..3).map(|i| pi[i] * p[[i, j]]).sum();
                err += (pij - pi[j]).abs();
            }
            prop_assert!(err < 1e-8);
        }

        // splitting a decode into contiguous overlapping chunks and summing
        // counts gives the same embedding
        #[test]
        fn chunked_counts_equal_whole(states in proptest::collection::vec(0u16..3, 10..60), cut in 1usize..9) {
            let cut = cut.min(states.len() - 1);
            let k = 3;
            let whole = seq(&states);
            let (pw, vw) = transition_counts(&whole, k).unwrap();
            // raw counts from chunks [0..=cut] and [cut..]
            let mut counts = Array2::<f64>::zeros((k, k));
            for part in [&states[..=cut], &states[cut..]] {
                for t in 0..part.len() - 1 {
                    counts[[part[t] as usize, part[t + 1] as usize]] += 1.0;
                }
            }
            let mut visited = vec![false; k];
            for &s in &states { visited[s as usize] = true; }
            for i in 0..k {
                let rs: f64 = counts.row(i).sum();
                if rs > 0.0 { for j in 0..k { counts[[i, j]] /= rs; } }
                else if visited[i] { counts[[i, i]] = 1.0; }
            }
            prop_assert_eq!(visited.clone(), vw);
            for (a, b) in counts.iter().zip(pw.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let pi_a = stationary_distribution(&counts.view(), &visited).unwrap();
            let pi_b = stationary_distribution(&pw.view(), &vw).unwrap();
            for (a, b) in pi_a.iter().zip(pi_b.iter()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
