//! EEG preprocessing: per-trial partition medians and per-subject trial
//! averaging, plus a tolerant parser for the UCI per-trial text format.
//!
//! Each trial is a channels × time-points matrix. Every channel's time
//! series is split into `PARTITIONS` contiguous blocks whose medians form
//! one row of the output, giving a partitions × channels matrix per trial;
//! a subject's matrix is the elementwise mean over their trials.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::RealMatrix;

pub const PARTITIONS: usize = 16;
pub const EXPECTED_CHANNELS: usize = 64;
pub const EXPECTED_SAMPLES: usize = 256;

/// One trial: named channels, each with the same number of time points.
#[derive(Debug, Clone)]
pub struct TrialRecording {
    pub channels: Vec<String>,
    /// channels × time points.
    pub data: RealMatrix,
}

fn median_of(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Partition medians of one trial: a PARTITIONS × channels matrix.
/// Row b holds the median of each channel's b-th contiguous time block.
pub fn trial_partition_medians(trial: &RealMatrix) -> Result<RealMatrix> {
    let (channels, samples) = (trial.nrows(), trial.ncols());
    if samples == 0 || samples % PARTITIONS != 0 {
        return Err(Error::ShortTrial {
            channel: "*".into(),
            got: samples,
            expected: EXPECTED_SAMPLES,
        });
    }
    let block = samples / PARTITIONS;
    let mut out = DMatrix::zeros(PARTITIONS, channels);
    let mut buf = vec![0.0; block];
    for c in 0..channels {
        for b in 0..PARTITIONS {
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = trial[(c, b * block + k)];
            }
            out[(b, c)] = median_of(&mut buf);
        }
    }
    Ok(out)
}

/// Subject-level matrix: elementwise mean of the per-trial partition
/// medians. All trials must share the channel count.
pub fn eeg_preprocess(trials: &[RealMatrix]) -> Result<RealMatrix> {
    if trials.is_empty() {
        return Err(Error::Schema("subject has no trials".into()));
    }
    let channels = trials[0].nrows();
    let mut acc = DMatrix::zeros(PARTITIONS, channels);
    for t in trials {
        if t.nrows() != channels {
            return Err(Error::ShapeMismatch(format!(
                "trial has {} channels, expected {channels}",
                t.nrows()
            )));
        }
        acc += trial_partition_medians(t)?;
    }
    Ok(acc / trials.len() as f64)
}

/// Parses one UCI-style trial file. Lines starting with '#' are comments;
/// data lines are whitespace-separated as either
/// `<trial> <channel> <sample> <value>` or `<channel> <sample> <value>`.
/// Channel order follows first appearance.
pub fn parse_trial(text: &str) -> Result<TrialRecording> {
    let mut order: Vec<String> = Vec::new();
    let mut series: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (chan, sample_tok, value_tok) = match toks.len() {
            4 => (toks[1], toks[2], toks[3]),
            3 => (toks[0], toks[1], toks[2]),
            _ => {
                return Err(Error::Parse(format!(
                    "trial line {}: expected 3 or 4 fields, got {}",
                    lineno + 1,
                    toks.len()
                )))
            }
        };
        let sample: usize = sample_tok
            .parse()
            .map_err(|_| Error::Parse(format!("trial line {}: bad sample index", lineno + 1)))?;
        let value: f64 = value_tok
            .parse()
            .map_err(|_| Error::Parse(format!("trial line {}: bad value", lineno + 1)))?;
        if !value.is_finite() {
            return Err(Error::NonFiniteValue(format!("trial line {}", lineno + 1)));
        }
        if !series.contains_key(chan) {
            order.push(chan.to_string());
        }
        series
            .entry(chan.to_string())
            .or_default()
            .push((sample, value));
    }
    if order.is_empty() {
        return Err(Error::Parse("trial file contains no data lines".into()));
    }
    let samples = series[&order[0]].len();
    let mut data = DMatrix::zeros(order.len(), samples);
    for (c, chan) in order.iter().enumerate() {
        let mut points = series.remove(chan).unwrap();
        if points.len() != samples {
            return Err(Error::ShortTrial {
                channel: chan.clone(),
                got: points.len(),
                expected: samples,
            });
        }
        points.sort_by_key(|&(idx, _)| idx);
        for (t, &(_, v)) in points.iter().enumerate() {
            data[(c, t)] = v;
        }
    }
    Ok(TrialRecording {
        channels: order,
        data,
    })
}

pub struct SubjectLoad {
    pub matrix: RealMatrix,
    pub trials_used: usize,
    pub trials_skipped: usize,
}

/// Loads all trial files in a subject directory, skipping (and counting)
/// trials whose channel set does not match the first good trial.
pub fn load_subject_dir(dir: &Path) -> Result<SubjectLoad> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut reference_channels: Option<Vec<String>> = None;
    let mut trials = Vec::new();
    let mut skipped = 0usize;
    for path in &paths {
        let text = fs::read_to_string(path)?;
        let trial = match parse_trial(&text) {
            Ok(t) => t,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        match &reference_channels {
            None => {
                reference_channels = Some(trial.channels.clone());
                trials.push(trial.data);
            }
            Some(reference) => {
                if &trial.channels == reference && trial.data.ncols() == trials[0].ncols() {
                    trials.push(trial.data);
                } else {
                    skipped += 1;
                }
            }
        }
    }
    if trials.is_empty() {
        return Err(Error::Schema(format!(
            "no usable trials in {}",
            dir.display()
        )));
    }
    Ok(SubjectLoad {
        matrix: eeg_preprocess(&trials)?,
        trials_used: trials.len(),
        trials_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_trial_gives_constant_subject_matrix() {
        let trial = DMatrix::from_element(64, 256, 3.5);
        let out = eeg_preprocess(&[trial]).unwrap();
        assert_eq!(out.nrows(), 16);
        assert_eq!(out.ncols(), 64);
        assert!(out.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn ramp_channel_medians() {
        // one channel with values 1..=256: block medians 8.5, 24.5, ..., 248.5
        let trial = DMatrix::from_fn(1, 256, |_, t| (t + 1) as f64);
        let out = trial_partition_medians(&trial).unwrap();
        for b in 0..16 {
            assert_eq!(out[(b, 0)], 8.5 + 16.0 * b as f64);
        }
    }

    #[test]
    fn preprocess_is_linear_over_trials() {
        let a = DMatrix::from_fn(4, 64, |c, t| (c * t) as f64 * 0.01 - 1.0);
        let b = DMatrix::from_fn(4, 64, |c, t| ((c + 1) * (64 - t)) as f64 * 0.02);
        let combined = eeg_preprocess(&[a.clone(), b.clone()]).unwrap();
        let pa = eeg_preprocess(&[a]).unwrap();
        let pb = eeg_preprocess(&[b]).unwrap();
        assert!((combined - (pa + pb) * 0.5).amax() < 1e-12);
    }

    #[test]
    fn short_trial_is_rejected() {
        let trial = DMatrix::from_element(2, 250, 1.0);
        assert!(matches!(
            trial_partition_medians(&trial),
            Err(Error::ShortTrial { .. })
        ));
    }

    #[test]
    fn parser_handles_comments_and_formats() {
        let text = "# subject co2a0000364\n# comment\n0 FP1 0 -8.9\n0 FP1 1 2.0\n0 FP2 0 1.5\n0 FP2 1 0.5\n";
        let trial = parse_trial(text).unwrap();
        assert_eq!(trial.channels, vec!["FP1", "FP2"]);
        assert_eq!(trial.data[(0, 0)], -8.9);
        assert_eq!(trial.data[(1, 1)], 0.5);
        // 3-field variant
        let text = "FP1 0 1.0\nFP1 1 2.0\n";
        let trial = parse_trial(text).unwrap();
        assert_eq!(trial.data.ncols(), 2);
    }

    #[test]
    fn parser_rejects_uneven_channels() {
        let text = "0 FP1 0 1.0\n0 FP1 1 2.0\n0 FP2 0 1.0\n";
        assert!(matches!(parse_trial(text), Err(Error::ShortTrial { .. })));
    }

    #[test]
    fn subject_dir_skips_mismatched_trials() {
        let dir = tempfile::tempdir().unwrap();
        let good = "0 A 0 1.0\n0 A 1 2.0\n0 B 0 3.0\n0 B 1 4.0\n";
        // 2 time points is not divisible into 16 partitions, so use 16
        let mut full = String::new();
        for t in 0..16 {
            full.push_str(&format!("0 A {t} {}\n", t as f64));
            full.push_str(&format!("0 B {t} {}\n", 2.0 * t as f64));
        }
        std::fs::write(dir.path().join("t1"), &full).unwrap();
        std::fs::write(dir.path().join("t2"), good).unwrap(); // wrong length, skipped
        std::fs::write(dir.path().join("t3"), "0 C 0 1.0\n").unwrap(); // wrong channels
        let loaded = load_subject_dir(dir.path()).unwrap();
        assert_eq!(loaded.trials_used, 1);
        assert_eq!(loaded.trials_skipped, 2);
        assert_eq!(loaded.matrix.ncols(), 2);
    }
}
