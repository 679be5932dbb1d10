//! Parsing, resampling, compliance filtering, and normalization of
//! participant-day records.
//!
//! File formats:
//! - signals CSV: `participant_id,date,timestamp_s,heart_rate,steps`
//!   (empty field = missing)
//! - surveys CSV: `participant_id,date,stress,anxiety,pos_affect,neg_affect,atypical,category`
//!   with `atypical` in {0,1} and `category` in {pos,minor_neg,major_neg,""}
//! - canonical cohort: JSON Lines, one [`DayRecord`] per line

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;

use crate::data::{
    Cohort, DayKey, DayMatrix, DayRecord, EventCategory, NormStats, SignalSample, SurveyEntry,
    DAY_SECONDS,
};
use crate::error::{Error, Result};

/// Grid and filtering parameters for turning raw samples into day matrices.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResampleSpec {
    /// Grid cell width in seconds; must divide 86400. Default 60.
    pub grid_seconds: u32,
    /// Gaps up to this length are filled (heart rate interpolated, steps
    /// zeroed); longer gaps stay missing. Default 300 s.
    pub max_gap_seconds: u32,
    /// A day needs at least this many hours with both channels present to
    /// count as valid. Default 5.
    pub min_valid_hours: f64,
}

impl Default for ResampleSpec {
    fn default() -> Self {
        ResampleSpec { grid_seconds: 60, max_gap_seconds: 300, min_valid_hours: 5.0 }
    }
}

impl ResampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_seconds == 0 || DAY_SECONDS % self.grid_seconds != 0 {
            return Err(Error::Config(format!(
                "grid_seconds {} must divide 86400",
                self.grid_seconds
            )));
        }
        if self.min_valid_hours < 0.0 || self.min_valid_hours > 24.0 {
            return Err(Error::Config(format!(
                "min_valid_hours {} outside [0, 24]",
                self.min_valid_hours
            )));
        }
        Ok(())
    }

    /// Number of grid cells per day.
    pub fn steps_per_day(&self) -> usize {
        (DAY_SECONDS / self.grid_seconds) as usize
    }

    fn max_gap_cells(&self) -> usize {
        (self.max_gap_seconds / self.grid_seconds) as usize
    }

    fn min_valid_cells(&self) -> usize {
        (self.min_valid_hours * 3600.0 / f64::from(self.grid_seconds)).ceil() as usize
    }
}

/// Join diagnostics from [`parse_cohort`].
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ParseReport {
    pub n_records: usize,
    /// Survey rows whose (participant, date) had no signal data.
    pub unmatched_surveys: Vec<DayKey>,
}

/// Day/participant counts removed by [`filter_compliance`].
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct ComplianceReport {
    pub dropped_days: usize,
    pub dropped_participants: usize,
    pub kept_days: usize,
    pub kept_participants: usize,
}

fn parse_field<T: std::str::FromStr>(
    file: &str,
    line: u64,
    name: &str,
    raw: &str,
) -> Result<T> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| Error::parse(file, line, format!("bad {name}: `{raw}`")))
}

fn parse_opt_field(file: &str, line: u64, name: &str, raw: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    Ok(Some(parse_field::<f64>(file, line, name, t)?))
}

fn parse_date(file: &str, line: u64, raw: &str) -> Result<NaiveDate> {
    raw.trim()
        .parse::<NaiveDate>()
        .map_err(|_| Error::parse(file, line, format!("bad date: `{raw}`")))
}

/// Parse signal and survey CSVs into the canonical cohort.
///
/// Signal rows are grouped by (participant, date); survey rows are joined by
/// the same key. Duplicate survey keys and malformed rows are errors; survey
/// rows without matching signals are collected in the report.
pub fn parse_cohort<P: AsRef<Path>>(
    signal_paths: &[P],
    survey_path: &Path,
) -> Result<(Cohort, ParseReport)> {
    let mut days: BTreeMap<DayKey, Vec<SignalSample>> = BTreeMap::new();

    for path in signal_paths {
        let path = path.as_ref();
        let fname = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(false)
            .from_path(path)
            .map_err(|e| Error::io(&fname, std::io::Error::other(e)))?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::parse(&fname, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 5 {
                return Err(Error::parse(&fname, line, format!("expected 5 fields, got {}", rec.len())));
            }
            let key = DayKey::new(rec[0].trim(), parse_date(&fname, line, &rec[1])?);
            let sample = SignalSample {
                timestamp: parse_field(&fname, line, "timestamp_s", &rec[2])?,
                heart_rate: parse_opt_field(&fname, line, "heart_rate", &rec[3])?,
                steps: parse_opt_field(&fname, line, "steps", &rec[4])?,
            };
            sample
                .validate()
                .map_err(|e| Error::parse(&fname, line, e.to_string()))?;
            days.entry(key).or_default().push(sample);
        }
    }

    let mut records: Vec<DayRecord> = Vec::with_capacity(days.len());
    for (key, mut samples) in days {
        samples.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        for w in samples.windows(2) {
            if w[0].timestamp == w[1].timestamp {
                return Err(Error::validation(format!(
                    "{key}: duplicate sample timestamp {}",
                    w[0].timestamp
                )));
            }
        }
        records.push(DayRecord {
            participant_id: key.participant_id,
            date: key.date,
            samples,
            summary: BTreeMap::new(),
            survey: None,
        });
    }
    let mut cohort = Cohort::new(records);
    let index = cohort.index();

    let fname = survey_path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(survey_path)
        .map_err(|e| Error::io(&fname, std::io::Error::other(e)))?;
    let mut report = ParseReport::default();
    let mut seen: BTreeMap<DayKey, u64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(&fname, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 8 {
            return Err(Error::parse(&fname, line, format!("expected 8 fields, got {}", rec.len())));
        }
        let key = DayKey::new(rec[0].trim(), parse_date(&fname, line, &rec[1])?);
        if seen.insert(key.clone(), line).is_some() {
            return Err(Error::parse(&fname, line, format!("duplicate survey row for {key}")));
        }
        let atypical = match rec[6].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(&fname, line, format!("bad atypical flag: `{other}`"))),
        };
        let cat_raw = rec[7].trim();
        let category = if cat_raw.is_empty() {
            None
        } else {
            Some(EventCategory::from_csv_token(cat_raw).ok_or_else(|| {
                Error::parse(&fname, line, format!("bad category: `{cat_raw}`"))
            })?)
        };
        let survey = SurveyEntry {
            stress: parse_field(&fname, line, "stress", &rec[2])?,
            anxiety: parse_field(&fname, line, "anxiety", &rec[3])?,
            positive_affect: parse_field(&fname, line, "pos_affect", &rec[4])?,
            negative_affect: parse_field(&fname, line, "neg_affect", &rec[5])?,
            atypical,
            category,
        };
        survey
            .validate()
            .map_err(|e| Error::parse(&fname, line, e.to_string()))?;
        match index.get(&key) {
            Some(&i) => cohort.records[i].survey = Some(survey),
            None => report.unmatched_surveys.push(key),
        }
    }
    report.n_records = cohort.len();
    Ok((cohort, report))
}

/// Serialize the cohort as canonical JSON Lines.
pub fn write_cohort_jsonl(cohort: &Cohort, path: &Path) -> Result<()> {
    let fname = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&fname, e))?;
    let mut w = std::io::BufWriter::new(file);
    for rec in &cohort.records {
        let line = serde_json::to_string(rec)?;
        writeln!(w, "{line}").map_err(|e| Error::io(&fname, e))?;
    }
    w.flush().map_err(|e| Error::io(&fname, e))?;
    Ok(())
}

/// Read a canonical JSON Lines cohort, validating every record.
pub fn read_cohort_jsonl(path: &Path) -> Result<Cohort> {
    let fname = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&fname, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&fname, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DayRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&fname, (i + 1) as u64, e.to_string()))?;
        rec.validate()
            .map_err(|e| Error::parse(&fname, (i + 1) as u64, e.to_string()))?;
        records.push(rec);
    }
    Ok(Cohort::new(records))
}

/// Resample one day's samples onto the fixed grid.
///
/// Heart rate cells take the mean of their samples, step cells the sum.
/// Interior gaps no longer than `max_gap_seconds` are filled (linear
/// interpolation for heart rate, zeros for steps) and count as observed;
/// longer gaps and day edges stay missing.
pub fn resample_signals(record: &DayRecord, spec: &ResampleSpec) -> DayMatrix {
    let g = f64::from(spec.grid_seconds);
    let t_len = spec.steps_per_day();
    let mut values = Array2::<f64>::zeros((t_len, 2));
    let mut observed = Array2::from_elem((t_len, 2), false);

    let mut hr_sum = vec![0.0f64; t_len];
    let mut hr_cnt = vec![0u32; t_len];
    let mut st_sum = vec![0.0f64; t_len];
    let mut st_seen = vec![false; t_len];
    for s in &record.samples {
        let cell = ((s.timestamp / g) as usize).min(t_len - 1);
        if let Some(hr) = s.heart_rate {
            hr_sum[cell] += hr;
            hr_cnt[cell] += 1;
        }
        if let Some(st) = s.steps {
            st_sum[cell] += st;
            st_seen[cell] = true;
        }
    }
    for t in 0..t_len {
        if hr_cnt[t] > 0 {
            values[[t, 0]] = hr_sum[t] / f64::from(hr_cnt[t]);
            observed[[t, 0]] = true;
        }
        if st_seen[t] {
            values[[t, 1]] = st_sum[t];
            observed[[t, 1]] = true;
        }
    }

    let max_gap = spec.max_gap_cells();
    for ch in 0..2 {
        let mut prev: Option<usize> = None;
        for t in 0..t_len {
            if !observed[[t, ch]] {
                continue;
            }
            if let Some(p) = prev {
                let gap = t - p - 1;
                if gap > 0 && gap <= max_gap {
                    for u in p + 1..t {
                        values[[u, ch]] = if ch == 0 {
                            let frac = (u - p) as f64 / (t - p) as f64;
                            values[[p, ch]] + frac * (values[[t, ch]] - values[[p, ch]])
                        } else {
                            0.0
                        };
                        observed[[u, ch]] = true;
                    }
                }
            }
            prev = Some(t);
        }
    }

    DayMatrix { values, observed }
}

/// Resample every record; output order matches `cohort.records`.
pub fn resample_cohort(cohort: &Cohort, spec: &ResampleSpec) -> Vec<DayMatrix> {
    use rayon::prelude::*;
    cohort.records.par_iter().map(|r| resample_signals(r, spec)).collect()
}

/// Drop invalid days (below the valid-hours threshold), then participants
/// with fewer than two remaining days or no atypical day.
pub fn filter_compliance(cohort: &Cohort, spec: &ResampleSpec) -> (Cohort, ComplianceReport) {
    let min_cells = spec.min_valid_cells();
    let mut report = ComplianceReport::default();

    let mut valid_days: Vec<DayRecord> = Vec::new();
    for rec in &cohort.records {
        let m = resample_signals(rec, spec);
        if m.observed_steps() >= min_cells {
            valid_days.push(rec.clone());
        } else {
            report.dropped_days += 1;
        }
    }

    let mut by_participant: BTreeMap<String, Vec<DayRecord>> = BTreeMap::new();
    for rec in valid_days {
        by_participant.entry(rec.participant_id.clone()).or_default().push(rec);
    }
    let mut kept: Vec<DayRecord> = Vec::new();
    for (_, recs) in by_participant {
        let has_atypical = recs.iter().any(|r| r.is_atypical());
        if recs.len() >= 2 && has_atypical {
            report.kept_participants += 1;
            kept.extend(recs);
        } else {
            report.dropped_participants += 1;
            report.dropped_days += recs.len();
        }
    }
    report.kept_days = kept.len();
    let mut out = Cohort::new(kept);
    out.norm_stats = cohort.norm_stats.clone();
    (out, report)
}

/// Z-score both channels in place using cohort-wide statistics over observed
/// cells, returning the statistics for reuse on held-out data.
pub fn z_normalize(days: &mut [DayMatrix]) -> Result<NormStats> {
    let mut stats = NormStats { mean: [0.0; 2], std: [0.0; 2] };
    for ch in 0..2 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for d in days.iter() {
            for t in 0..d.len() {
                if d.observed[[t, ch]] {
                    sum += d.values[[t, ch]];
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::ZeroVariance(format!(
                "channel `{}` has no observed cells",
                crate::data::CHANNELS[ch]
            )));
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for d in days.iter() {
            for t in 0..d.len() {
                if d.observed[[t, ch]] {
                    let e = d.values[[t, ch]] - mean;
                    ss += e * e;
                }
            }
        }
        let var = ss / n as f64;
        if var <= f64::EPSILON {
            return Err(Error::ZeroVariance(crate::data::CHANNELS[ch].to_string()));
        }
        stats.mean[ch] = mean;
        stats.std[ch] = var.sqrt();
    }
    apply_norm_stats(days, &stats);
    Ok(stats)
}

/// Apply previously computed normalization statistics (held-out data path).
pub fn apply_norm_stats(days: &mut [DayMatrix], stats: &NormStats) {
    for d in days.iter_mut() {
        for ch in 0..2 {
            for t in 0..d.len() {
                if d.observed[[t, ch]] {
                    d.values[[t, ch]] = (d.values[[t, ch]] - stats.mean[ch]) / stats.std[ch];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SUMMARY_KEYS;
    use std::io::Write as _;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn day_with_samples(p: &str, d: &str, samples: Vec<SignalSample>) -> DayRecord {
        DayRecord {
            participant_id: p.into(),
            date: date(d),
            samples,
            summary: BTreeMap::new(),
            survey: None,
        }
    }

    fn grid_samples(hours: f64) -> Vec<SignalSample> {
        let n = (hours * 60.0) as usize;
        (0..n)
            .map(|i| SignalSample {
                timestamp: i as f64 * 60.0,
                heart_rate: Some(70.0 + (i % 7) as f64),
                steps: Some((i % 3) as f64),
            })
            .collect()
    }

    fn survey(atypical: bool) -> SurveyEntry {
        SurveyEntry {
            stress: 3.0,
            anxiety: 2.0,
            positive_affect: 15.0,
            negative_affect: 8.0,
            atypical,
            category: None,
        }
    }

    #[test]
    fn parse_joins_signals_and_surveys() {
        let dir = tempfile::tempdir().unwrap();
        let sig = dir.path().join("signals.csv");
        let sur = dir.path().join("surveys.csv");
        let mut f = std::fs::File::create(&sig).unwrap();
        writeln!(f, "participant_id,date,timestamp_s,heart_rate,steps").unwrap();
        for (p, d) in [("p1", "2018-03-05"), ("p1", "2018-03-06"), ("p2", "2018-03-05")] {
            for t in 0..3 {
                writeln!(f, "{p},{d},{},71.5,2", t * 60).unwrap();
            }
        }
        let mut f = std::fs::File::create(&sur).unwrap();
        writeln!(f, "participant_id,date,stress,anxiety,pos_affect,neg_affect,atypical,category").unwrap();
        writeln!(f, "p1,2018-03-05,3,2,15,8,1,pos").unwrap();
        writeln!(f, "p1,2018-03-06,2,2,16,7,0,").unwrap();
        writeln!(f, "p9,2018-03-05,2,2,16,7,0,").unwrap();

        let (cohort, report) = parse_cohort(&[&sig], &sur).unwrap();
        assert_eq!(cohort.len(), 3);
        assert_eq!(report.unmatched_surveys.len(), 1);
        assert_eq!(report.unmatched_surveys[0].participant_id, "p9");
        let idx = cohort.index();
        let r = &cohort.records[idx[&DayKey::new("p1", date("2018-03-05"))]];
        assert_eq!(r.survey.as_ref().unwrap().category, Some(EventCategory::Positive));
    }

    #[test]
    fn parse_rejects_out_of_range_stress_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let sig = dir.path().join("signals.csv");
        let sur = dir.path().join("surveys.csv");
        std::fs::write(&sig, "participant_id,date,timestamp_s,heart_rate,steps\np1,2018-03-05,0,70,1\n").unwrap();
        std::fs::write(
            &sur,
            "participant_id,date,stress,anxiety,pos_affect,neg_affect,atypical,category\np1,2018-03-05,6,2,15,8,0,\n",
        )
        .unwrap();
        let err = parse_cohort(&[&sig], &sur).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "missing line number: {msg}");
        assert!(msg.contains("stress"), "{msg}");
    }

    #[test]
    fn parse_rejects_duplicate_survey_rows() {
        let dir = tempfile::tempdir().unwrap();
        let sig = dir.path().join("signals.csv");
        let sur = dir.path().join("surveys.csv");
        std::fs::write(&sig, "participant_id,date,timestamp_s,heart_rate,steps\np1,2018-03-05,0,70,1\n").unwrap();
        std::fs::write(
            &sur,
            "participant_id,date,stress,anxiety,pos_affect,neg_affect,atypical,category\n\
             p1,2018-03-05,3,2,15,8,0,\np1,2018-03-05,3,2,15,8,0,\n",
        )
        .unwrap();
        assert!(parse_cohort(&[&sig], &sur).is_err());
    }

    #[test]
    fn empty_signal_file_gives_empty_cohort() {
        let dir = tempfile::tempdir().unwrap();
        let sig = dir.path().join("signals.csv");
        let sur = dir.path().join("surveys.csv");
        std::fs::write(&sig, "participant_id,date,timestamp_s,heart_rate,steps\n").unwrap();
        std::fs::write(&sur, "participant_id,date,stress,anxiety,pos_affect,neg_affect,atypical,category\n").unwrap();
        let (cohort, _) = parse_cohort(&[&sig], &sur).unwrap();
        assert!(cohort.is_empty());
    }

    #[test]
    fn resample_identity_on_grid_aligned_samples() {
        let spec = ResampleSpec::default();
        let rec = day_with_samples("p", "2018-01-01", grid_samples(2.0));
        let m = resample_signals(&rec, &spec);
        assert_eq!(m.len(), 1440);
        for (i, s) in rec.samples.iter().enumerate() {
            assert_eq!(m.values[[i, 0]], s.heart_rate.unwrap());
            assert_eq!(m.values[[i, 1]], s.steps.unwrap());
            assert!(m.step_observed(i));
        }
    }

    #[test]
    fn resample_averages_heart_rate_and_sums_steps() {
        let spec = ResampleSpec::default();
        let rec = day_with_samples(
            "p",
            "2018-01-01",
            vec![
                SignalSample { timestamp: 0.0, heart_rate: Some(70.0), steps: Some(3.0) },
                SignalSample { timestamp: 30.0, heart_rate: Some(74.0), steps: Some(4.0) },
            ],
        );
        let m = resample_signals(&rec, &spec);
        assert_eq!(m.values[[0, 0]], 72.0);
        assert_eq!(m.values[[0, 1]], 7.0);
    }

    #[test]
    fn short_gap_interpolated_long_gap_missing() {
        let spec = ResampleSpec::default();
        // observed at minutes 10 and 14 (3-cell gap) and again at minute 15;
        // then a 2-hour hole before minute 135.
        let mk = |min: usize, hr: f64| SignalSample {
            timestamp: min as f64 * 60.0,
            heart_rate: Some(hr),
            steps: Some(1.0),
        };
        let rec = day_with_samples(
            "p",
            "2018-01-01",
            vec![mk(10, 60.0), mk(14, 68.0), mk(15, 70.0), mk(135, 80.0)],
        );
        let m = resample_signals(&rec, &spec);
        // linear fill across the 3-cell gap
        assert!((m.values[[11, 0]] - 62.0).abs() < 1e-12);
        assert!((m.values[[12, 0]] - 64.0).abs() < 1e-12);
        assert!((m.values[[13, 0]] - 66.0).abs() < 1e-12);
        assert_eq!(m.values[[11, 1]], 0.0);
        assert!(m.step_observed(12));
        // 2-hour gap: minutes 16..135 stay missing
        let missing = (16..135).filter(|&t| !m.step_observed(t)).count();
        assert_eq!(missing, 119);
    }

    #[test]
    fn compliance_rules_match_contract() {
        let spec = ResampleSpec::default();
        // p1: one valid day only -> removed
        let mut r1 = day_with_samples("p1", "2018-01-01", grid_samples(6.0));
        r1.survey = Some(survey(true));
        // p2: 3 valid days, none atypical -> removed
        let mut p2: Vec<DayRecord> = (1..=3)
            .map(|i| day_with_samples("p2", &format!("2018-01-0{i}"), grid_samples(6.0)))
            .collect();
        for r in &mut p2 {
            r.survey = Some(survey(false));
        }
        // p3: 2 valid days, 1 atypical -> kept
        let mut r3a = day_with_samples("p3", "2018-01-01", grid_samples(6.0));
        r3a.survey = Some(survey(true));
        let r3b = day_with_samples("p3", "2018-01-02", grid_samples(6.0));
        // p4: enough days but each under 5 h -> all days invalid -> removed
        let mut r4 = day_with_samples("p4", "2018-01-01", grid_samples(2.0));
        r4.survey = Some(survey(true));
        let r4b = day_with_samples("p4", "2018-01-02", grid_samples(2.0));

        let mut all = vec![r1, r3a, r3b, r4, r4b];
        all.extend(p2);
        let cohort = Cohort::new(all);
        let (kept, report) = filter_compliance(&cohort, &spec);
        assert_eq!(kept.participants(), vec!["p3".to_string()]);
        assert_eq!(kept.len(), 2);
        assert_eq!(report.kept_participants, 1);
        assert_eq!(report.dropped_participants, 3);

        // idempotent
        let (kept2, report2) = filter_compliance(&kept, &spec);
        assert_eq!(kept2.len(), kept.len());
        assert_eq!(report2.dropped_days, 0);
        assert_eq!(report2.dropped_participants, 0);
    }

    #[test]
    fn znorm_centers_and_scales() {
        let spec = ResampleSpec::default();
        let rec = day_with_samples("p", "2018-01-01", grid_samples(24.0));
        let mut days = vec![resample_signals(&rec, &spec)];
        let stats = z_normalize(&mut days).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> =
                (0..days[0].len()).filter(|&t| days[0].observed[[t, ch]]).map(|t| days[0].values[[t, ch]]).collect();
            let m = crate::util::mean(&vals);
            let v = vals.iter().map(|x| x * x).sum::<f64>() / vals.len() as f64 - m * m;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-8);
            assert!(stats.std[ch] > 0.0);
        }
    }

    #[test]
    fn znorm_errors_on_constant_or_missing_channel() {
        let spec = ResampleSpec::default();
        let samples: Vec<SignalSample> = (0..600)
            .map(|i| SignalSample { timestamp: i as f64 * 60.0, heart_rate: Some(70.0), steps: Some((i % 5) as f64) })
            .collect();
        let rec = day_with_samples("p", "2018-01-01", samples);
        let mut days = vec![resample_signals(&rec, &spec)];
        let err = z_normalize(&mut days).unwrap_err();
        assert!(err.to_string().contains("heart_rate"), "{err}");

        let mut empty = vec![DayMatrix::missing(1440)];
        assert!(z_normalize(&mut empty).is_err());
    }

    #[test]
    fn jsonl_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = day_with_samples("p1", "2018-03-05", grid_samples(1.0));
        rec.survey = Some(SurveyEntry {
            stress: 3.0,
            anxiety: 2.0,
            positive_affect: 15.5,
            negative_affect: 8.25,
            atypical: true,
            category: Some(EventCategory::MinorNegative),
        });
        rec.summary.insert(SUMMARY_KEYS[3].to_string(), 431.0);
        let cohort = Cohort::new(vec![rec]);

        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        write_cohort_jsonl(&cohort, &p1).unwrap();
        let reread = read_cohort_jsonl(&p1).unwrap();
        write_cohort_jsonl(&reread, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
