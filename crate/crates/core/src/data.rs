//! Canonical in-memory cohort types shared by every stage.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds in a day; all sample timestamps live in `[0, DAY_SECONDS)`.
pub const DAY_SECONDS: u32 = 86_400;

/// Signal channels carried by every record, in column order.
pub const CHANNELS: [&str; 2] = ["heart_rate", "steps"];

/// Fixed vocabulary of static daily summary features.
pub const SUMMARY_KEYS: [&str; 8] = [
    "minutes_fat_burn",
    "minutes_cardio",
    "minutes_out_of_range",
    "minutes_in_bed",
    "minutes_asleep",
    "sleep_efficiency",
    "sleep_start",
    "sleep_end",
];

/// One raw wristband sample inside a day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSample {
    /// Seconds since local midnight.
    pub timestamp: f64,
    pub heart_rate: Option<f64>,
    pub steps: Option<f64>,
}

impl SignalSample {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..f64::from(DAY_SECONDS)).contains(&self.timestamp) {
            return Err(Error::validation(format!(
                "timestamp {} outside [0, 86400)",
                self.timestamp
            )));
        }
        if let Some(hr) = self.heart_rate {
            if !(20.0 < hr && hr < 250.0) {
                return Err(Error::validation(format!("heart_rate {hr} outside (20, 250)")));
            }
        }
        if let Some(st) = self.steps {
            if st < 0.0 {
                return Err(Error::validation(format!("steps {st} negative")));
            }
        }
        Ok(())
    }
}

/// Severity class of an atypical event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    Positive,
    MinorNegative,
    MajorNegative,
}

impl EventCategory {
    pub const ALL: [EventCategory; 3] =
        [EventCategory::Positive, EventCategory::MinorNegative, EventCategory::MajorNegative];

    /// Token used in the surveys CSV.
    pub fn csv_token(self) -> &'static str {
        match self {
            EventCategory::Positive => "pos",
            EventCategory::MinorNegative => "minor_neg",
            EventCategory::MajorNegative => "major_neg",
        }
    }

    pub fn from_csv_token(s: &str) -> Option<EventCategory> {
        match s {
            "pos" => Some(EventCategory::Positive),
            "minor_neg" => Some(EventCategory::MinorNegative),
            "major_neg" => Some(EventCategory::MajorNegative),
            _ => None,
        }
    }
}

impl std::fmt::Display for EventCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.csv_token())
    }
}

/// Daily self-report: psychological constructs plus the atypical-event flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyEntry {
    /// 1–5 scale.
    pub stress: f64,
    /// 1–5 scale.
    pub anxiety: f64,
    /// 5–25 scale.
    pub positive_affect: f64,
    /// 5–25 scale.
    pub negative_affect: f64,
    pub atypical: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<EventCategory>,
}

impl SurveyEntry {
    pub fn validate(&self) -> Result<()> {
        for (name, v, lo, hi) in [
            ("stress", self.stress, 1.0, 5.0),
            ("anxiety", self.anxiety, 1.0, 5.0),
            ("pos_affect", self.positive_affect, 5.0, 25.0),
            ("neg_affect", self.negative_affect, 5.0, 25.0),
        ] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::validation(format!("{name} {v} outside [{lo}, {hi}]")));
            }
        }
        if self.category.is_some() && !self.atypical {
            return Err(Error::validation("category present on a non-atypical day".to_string()));
        }
        Ok(())
    }

    /// Construct value by name.
    pub fn construct(&self, c: Construct) -> f64 {
        match c {
            Construct::Stress => self.stress,
            Construct::Anxiety => self.anxiety,
            Construct::PositiveAffect => self.positive_affect,
            Construct::NegativeAffect => self.negative_affect,
        }
    }
}

/// The four daily psychological constructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construct {
    Stress,
    Anxiety,
    PositiveAffect,
    NegativeAffect,
}

impl Construct {
    pub const ALL: [Construct; 4] = [
        Construct::Stress,
        Construct::Anxiety,
        Construct::PositiveAffect,
        Construct::NegativeAffect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Construct::Stress => "stress",
            Construct::Anxiety => "anxiety",
            Construct::PositiveAffect => "positive_affect",
            Construct::NegativeAffect => "negative_affect",
        }
    }

    /// Legal reporting range of the scale.
    pub fn range(self) -> (f64, f64) {
        match self {
            Construct::Stress | Construct::Anxiety => (1.0, 5.0),
            Construct::PositiveAffect | Construct::NegativeAffect => (5.0, 25.0),
        }
    }
}

impl std::fmt::Display for Construct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Identifies one participant-day.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DayKey {
    pub participant_id: String,
    pub date: NaiveDate,
}

impl DayKey {
    pub fn new(participant_id: impl Into<String>, date: NaiveDate) -> Self {
        DayKey { participant_id: participant_id.into(), date }
    }
}

impl std::fmt::Display for DayKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.participant_id, self.date)
    }
}

/// One participant-day: raw samples, static summary features, and the survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub participant_id: String,
    pub date: NaiveDate,
    pub samples: Vec<SignalSample>,
    /// Static summary features; keys from [`SUMMARY_KEYS`].
    pub summary: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survey: Option<SurveyEntry>,
}

impl DayRecord {
    pub fn key(&self) -> DayKey {
        DayKey::new(self.participant_id.clone(), self.date)
    }

    /// Checks sample ordering/ranges, survey ranges, and summary vocabulary.
    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for s in &self.samples {
            s.validate()?;
            if s.timestamp <= prev {
                return Err(Error::validation(format!(
                    "{}: samples not strictly increasing at t={}",
                    self.key(),
                    s.timestamp
                )));
            }
            prev = s.timestamp;
        }
        for k in self.summary.keys() {
            if !SUMMARY_KEYS.contains(&k.as_str()) {
                return Err(Error::validation(format!("unknown summary key `{k}`")));
            }
        }
        if let Some(sv) = &self.survey {
            sv.validate()?;
        }
        Ok(())
    }

    pub fn is_atypical(&self) -> bool {
        self.survey.as_ref().is_some_and(|s| s.atypical)
    }
}

/// Per-channel z-scoring statistics, computed cohort-wide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

/// The canonical cohort: day records sorted by (participant, date).
#[derive(Debug, Clone, Default)]
pub struct Cohort {
    pub records: Vec<DayRecord>,
    /// Populated once signals have been z-normalized.
    pub norm_stats: Option<NormStats>,
}

impl Cohort {
    pub fn new(mut records: Vec<DayRecord>) -> Self {
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        Cohort { records, norm_stats: None }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Participant ids in sorted order, deduplicated.
    pub fn participants(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.participant_id.clone()).collect();
        ids.dedup();
        ids
    }

    /// Index of each (participant, date) into `records`.
    pub fn index(&self) -> BTreeMap<DayKey, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.key(), i)).collect()
    }

    /// Fraction of days flagged atypical (days without a survey count as typical).
    pub fn atypical_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let n = self.records.iter().filter(|r| r.is_atypical()).count();
        n as f64 / self.records.len() as f64
    }
}

/// A day resampled onto the fixed grid: `values` is T×2 (heart rate, steps)
/// and `observed` marks which cells hold real or filled-in data.
#[derive(Debug, Clone)]
pub struct DayMatrix {
    pub values: Array2<f64>,
    pub observed: Array2<bool>,
}

impl DayMatrix {
    pub fn missing(len: usize) -> Self {
        DayMatrix {
            values: Array2::zeros((len, 2)),
            observed: Array2::from_elem((len, 2), false),
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A step is usable downstream only when both channels are observed.
    pub fn step_observed(&self, t: usize) -> bool {
        self.observed[[t, 0]] && self.observed[[t, 1]]
    }

    /// Per-step joint mask over both channels.
    pub fn step_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|t| self.step_observed(t)).collect()
    }

    /// Count of steps with both channels observed.
    pub fn observed_steps(&self) -> usize {
        (0..self.len()).filter(|&t| self.step_observed(t)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn survey_rejects_out_of_range_stress() {
        let sv = SurveyEntry {
            stress: 6.0,
            anxiety: 2.0,
            positive_affect: 15.0,
            negative_affect: 8.0,
            atypical: false,
            category: None,
        };
        assert!(sv.validate().is_err());
    }

    #[test]
    fn category_requires_atypical_flag() {
        let sv = SurveyEntry {
            stress: 3.0,
            anxiety: 2.0,
            positive_affect: 15.0,
            negative_affect: 8.0,
            atypical: false,
            category: Some(EventCategory::Positive),
        };
        assert!(sv.validate().is_err());
    }

    #[test]
    fn record_rejects_unsorted_samples() {
        let rec = DayRecord {
            participant_id: "p1".into(),
            date: d("2018-03-05"),
            samples: vec![
                SignalSample { timestamp: 60.0, heart_rate: Some(70.0), steps: Some(0.0) },
                SignalSample { timestamp: 30.0, heart_rate: Some(71.0), steps: Some(0.0) },
            ],
            summary: BTreeMap::new(),
            survey: None,
        };
        assert!(rec.validate().is_err());
    }

    #[test]
    fn cohort_sorts_records() {
        let mk = |p: &str, day: &str| DayRecord {
            participant_id: p.into(),
            date: d(day),
            samples: vec![],
            summary: BTreeMap::new(),
            survey: None,
        };
        let c = Cohort::new(vec![mk("b", "2018-01-02"), mk("a", "2018-01-03"), mk("a", "2018-01-01")]);
        let keys: Vec<String> = c.records.iter().map(|r| r.key().to_string()).collect();
        assert_eq!(keys, vec!["a/2018-01-01", "a/2018-01-03", "b/2018-01-02"]);
    }
}
