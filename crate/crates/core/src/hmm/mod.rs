//! Shared-state autoregressive HMM with a beta-process-style shared state
//! library: every sequence draws its states from one global set of AR
//! emission models, each sequence keeps its own transition weights, and the
//! number of global states is inferred by birth/death moves inside a Gibbs
//! sampler.
//!
//! [`fit`] runs the sampler over all participant-day sequences and returns
//! the highest joint-probability sample after burn-in; [`HmmModel::decode`]
//! produces the per-day state sequences consumed by the embedding stage.

mod emission;
mod forward;
mod sampler;

pub use emission::ArState;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DayMatrix;
use crate::error::{Error, Result};
use crate::util;

/// Sampler and prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmConfig {
    /// AR order r of the state emissions.
    pub ar_order: usize,
    /// Beta-process mass α: appetite for new global states.
    pub ibp_mass: f64,
    /// Extra prior weight κ on self-transitions.
    pub sticky_kappa: f64,
    /// Dirichlet concentration γ of transition rows.
    pub trans_gamma: f64,
    /// Scale of the matrix-normal prior on AR coefficients.
    pub prior_a_scale: f64,
    /// Scale of the inverse-Wishart prior on noise covariance.
    pub prior_noise_scale: f64,
    /// Degrees of freedom of the inverse-Wishart prior.
    pub prior_noise_df: f64,
    pub n_iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Hard cap on instantiated global states.
    pub max_states: usize,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            ar_order: 1,
            ibp_mass: 1.0,
            sticky_kappa: 10.0,
            trans_gamma: 1.0,
            prior_a_scale: 1.0,
            prior_noise_scale: 0.5,
            prior_noise_df: 4.0,
            n_iterations: 500,
            burn_in: 250,
            seed: 0,
            max_states: 200,
        }
    }
}

impl HmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ar_order < 1 {
            return Err(Error::Config("ar_order must be >= 1".into()));
        }
        if self.ibp_mass <= 0.0 || self.sticky_kappa <= 0.0 || self.trans_gamma <= 0.0 {
            return Err(Error::Config("ibp_mass, sticky_kappa, trans_gamma must be > 0".into()));
        }
        if self.n_iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "n_iterations {} must exceed burn_in {}",
                self.n_iterations, self.burn_in
            )));
        }
        if self.max_states == 0 {
            return Err(Error::Config("max_states must be >= 1".into()));
        }
        if self.prior_a_scale <= 0.0 || self.prior_noise_scale <= 0.0 || self.prior_noise_df <= 1.0 {
            return Err(Error::Config("emission prior scales must be positive (df > 1)".into()));
        }
        Ok(())
    }
}

/// Decoded state path for one day. States cover steps `r..T`, so the path
/// has length `T − r`; `missing[s]` marks steps whose emission was skipped
/// (observation or one of its lags missing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSequence {
    pub key: String,
    pub states: Vec<u16>,
    pub missing: Vec<bool>,
}

/// Per-fitted-sequence part of the model: which global states the sequence
/// uses and its transition weights over them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub key: String,
    pub features: Vec<bool>,
    /// K×K rows; rows of inactive states are zero, active rows sum to 1 over
    /// the active set.
    pub transitions: Vec<Vec<f64>>,
}

/// Fitted shared-state AR-HMM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmmModel {
    pub k: usize,
    pub ar_order: usize,
    pub states: Vec<ArState>,
    pub sequences: Vec<SequenceInfo>,
    /// Pooled transition weights used to decode days outside the fit set.
    #[serde(with = "array2_serde")]
    pub global_transitions: Array2<f64>,
    pub config: HmmConfig,
    /// Joint log-probability of the selected sample.
    pub map_score: f64,
    /// Joint log-probability of the initialization sample.
    pub init_score: f64,
}

pub(crate) mod array2_serde {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut a = Array2::zeros((nrows, ncols));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(serde::de::Error::custom("ragged matrix"));
            }
            for (j, &v) in row.iter().enumerate() {
                a[[i, j]] = v;
            }
        }
        Ok(a)
    }
}

/// Lagged regression view of one sequence: targets, stacked-lag regressors,
/// and per-step validity (target and all lags observed).
#[derive(Debug, Clone)]
pub(crate) struct PreparedSeq {
    pub y: Array2<f64>,
    pub x: Array2<f64>,
    pub valid: Vec<bool>,
}

impl PreparedSeq {
    pub fn from_day(day: &DayMatrix, r: usize) -> Option<PreparedSeq> {
        let t_len = day.len();
        if t_len <= r {
            return None;
        }
        let d = day.values.ncols();
        let n = t_len - r;
        let mut y = Array2::zeros((n, d));
        let mut x = Array2::zeros((n, d * r));
        let mut valid = vec![false; n];
        for s in 0..n {
            let t = s + r;
            for c in 0..d {
                y[[s, c]] = day.values[[t, c]];
            }
            for lag in 1..=r {
                for c in 0..d {
                    x[[s, (lag - 1) * d + c]] = day.values[[t - lag, c]];
                }
            }
            valid[s] = (t - r..=t).all(|u| day.step_observed(u));
        }
        Some(PreparedSeq { y, x, valid })
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }
}

/// Emission log-likelihood matrix: rows are steps, columns states. Invalid
/// steps get all-zero rows (likelihood 1, skipped evidence).
pub(crate) fn emission_log_matrix(
    states: &[emission::EmissionEval],
    prep: &PreparedSeq,
) -> Array2<f64> {
    let n = prep.len();
    let k = states.len();
    let mut e = Array2::<f64>::zeros((n, k));
    for s in 0..n {
        if !prep.valid[s] {
            continue;
        }
        let y = prep.y.row(s);
        let x = prep.x.row(s);
        for (j, st) in states.iter().enumerate() {
            e[[s, j]] = st.log_density(&y, &x);
        }
    }
    e
}

/// Fit the shared-state AR-HMM across all sequences.
///
/// Runs Gibbs sweeps (state paths, emission parameters, transition weights)
/// with birth/death moves on the global state set and returns the sample
/// with the highest collapsed joint log-probability after burn-in (never
/// worse than the initialization sample).
pub fn fit(sequences: &[DayMatrix], config: &HmmConfig) -> Result<HmmModel> {
    config.validate()?;
    let r = config.ar_order;
    let preps: Vec<PreparedSeq> = sequences
        .iter()
        .filter_map(|day| PreparedSeq::from_day(day, r))
        .collect();
    if preps.len() != sequences.len() {
        return Err(Error::Degenerate(format!(
            "{} of {} sequences shorter than ar_order+1",
            sequences.len() - preps.len(),
            sequences.len()
        )));
    }
    if preps.is_empty() {
        return Err(Error::Degenerate("no sequences to fit".into()));
    }
    sampler::run(&preps, config)
}

impl HmmModel {
    /// Construct a model directly from state parameters and a shared
    /// transition matrix (test and generation support).
    pub fn from_states(
        states: Vec<ArState>,
        transitions: Array2<f64>,
        ar_order: usize,
        config: HmmConfig,
    ) -> Result<HmmModel> {
        let k = states.len();
        if k == 0 {
            return Err(Error::Degenerate("need at least one state".into()));
        }
        if transitions.nrows() != k || transitions.ncols() != k {
            return Err(Error::DimensionMismatch { expected: k, got: transitions.nrows() });
        }
        for st in &states {
            if st.a.ncols() != st.channels() * ar_order {
                return Err(Error::DimensionMismatch {
                    expected: st.channels() * ar_order,
                    got: st.a.ncols(),
                });
            }
        }
        Ok(HmmModel {
            k,
            ar_order,
            states,
            sequences: Vec::new(),
            global_transitions: transitions,
            config,
            map_score: f64::NAN,
            init_score: f64::NAN,
        })
    }

    fn evals(&self) -> Result<Vec<emission::EmissionEval>> {
        self.states.iter().map(emission::EmissionEval::new).collect()
    }

    fn prepare(&self, day: &DayMatrix) -> Result<PreparedSeq> {
        PreparedSeq::from_day(day, self.ar_order).ok_or_else(|| {
            Error::Degenerate(format!(
                "sequence length {} too short for ar_order {}",
                day.len(),
                self.ar_order
            ))
        })
    }

    /// Viterbi path under the pooled transition weights.
    pub fn decode(&self, day: &DayMatrix, key: &str) -> Result<StateSequence> {
        self.decode_with_transitions(day, key, &self.global_transitions.view())
    }

    /// Viterbi path under explicit transition weights (e.g. a fitted
    /// sequence's own weights). Zero rows mark inactive states.
    pub fn decode_with_transitions(
        &self,
        day: &DayMatrix,
        key: &str,
        trans: &ArrayView2<f64>,
    ) -> Result<StateSequence> {
        if trans.nrows() != self.k || trans.ncols() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: trans.nrows() });
        }
        let prep = self.prepare(day)?;
        let evals = self.evals()?;
        let e = emission_log_matrix(&evals, &prep);
        let init = initial_from_transitions(trans);
        let states = forward::viterbi(&e.view(), trans, &init);
        Ok(StateSequence {
            key: key.to_string(),
            states,
            missing: prep.valid.iter().map(|v| !v).collect(),
        })
    }

    /// Marginal log-likelihood of a day under the pooled transition weights.
    pub fn log_likelihood(&self, day: &DayMatrix) -> Result<f64> {
        self.log_likelihood_with(day, &self.global_transitions.clone().view())
    }

    pub fn log_likelihood_with(&self, day: &DayMatrix, trans: &ArrayView2<f64>) -> Result<f64> {
        if trans.nrows() != self.k || trans.ncols() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: trans.nrows() });
        }
        let prep = self.prepare(day)?;
        let evals = self.evals()?;
        let e = emission_log_matrix(&evals, &prep);
        let init = initial_from_transitions(trans);
        Ok(forward::log_likelihood_forward(&e.view(), trans, &init))
    }

    /// Transition weights of fitted sequence `i` as a dense matrix.
    pub fn sequence_transitions(&self, i: usize) -> Result<Array2<f64>> {
        let info = self
            .sequences
            .get(i)
            .ok_or_else(|| Error::validation(format!("no fitted sequence {i}")))?;
        let mut t = Array2::<f64>::zeros((self.k, self.k));
        for (a, row) in info.transitions.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                t[[a, b]] = v;
            }
        }
        Ok(t)
    }

    /// Generative roll-out of the switching AR process under the pooled
    /// transition weights; initial lags drawn standard-normal.
    pub fn sample_sequence(&self, length: usize, seed: u64) -> Result<(Array2<f64>, Vec<u16>)> {
        let d = self.states[0].channels();
        let mut rng = util::stream_rng(seed, &[util::tag("hmm-sample-init")]);
        let mut init = Array2::<f64>::zeros((self.ar_order, d));
        for v in init.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        self.sample_sequence_from(&init, length, seed)
    }

    /// Generative roll-out starting from explicit initial lag rows (r×d).
    pub fn sample_sequence_from(
        &self,
        init: &Array2<f64>,
        length: usize,
        seed: u64,
    ) -> Result<(Array2<f64>, Vec<u16>)> {
        let r = self.ar_order;
        let d = self.states[0].channels();
        if init.nrows() != r || init.ncols() != d {
            return Err(Error::DimensionMismatch { expected: r * d, got: init.nrows() * init.ncols() });
        }
        if length <= r {
            return Err(Error::Degenerate(format!("length {length} must exceed ar_order {r}")));
        }
        let mut rng = util::stream_rng(seed, &[util::tag("hmm-sample")]);
        let mut y = Array2::<f64>::zeros((length, d));
        for lag in 0..r {
            for c in 0..d {
                y[[lag, c]] = init[[lag, c]];
            }
        }
        let init_dist = initial_from_transitions(&self.global_transitions.view());
        let mut states = Vec::with_capacity(length - r);
        let mut z = sample_categorical(&init_dist, &mut rng);
        let mut x = ndarray::Array1::<f64>::zeros(d * r);
        for t in r..length {
            if t > r {
                let row = self.global_transitions.row(z);
                z = sample_categorical(&row.to_vec(), &mut rng);
            }
            for lag in 1..=r {
                for c in 0..d {
                    x[(lag - 1) * d + c] = y[[t - lag, c]];
                }
            }
            let obs = emission::sample_emission(&self.states[z], &x.view(), &mut rng)?;
            for c in 0..d {
                y[[t, c]] = obs[c];
            }
            states.push(z as u16);
        }
        Ok((y, states))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<HmmModel> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Uniform over states with nonzero transition rows.
fn initial_from_transitions(trans: &ArrayView2<f64>) -> Vec<f64> {
    let k = trans.nrows();
    let active: Vec<bool> = (0..k).map(|i| trans.row(i).sum() > 0.0).collect();
    let n_active = active.iter().filter(|&&a| a).count().max(1);
    (0..k).map(|i| if active[i] { 1.0 / n_active as f64 } else { 0.0 }).collect()
}

fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
