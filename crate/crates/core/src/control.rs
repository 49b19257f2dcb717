//! Predictive gating, early cutoff, notion hinting, and the schedule switch.

use serde::{Deserialize, Serialize};

use crate::textmeta::lemmatize_words;
use crate::types::{MetaPrediction, MetaRecord};

/// Float slack for comparing a mean against the extremeness bounds.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    Kept,
    PredictedTrivial,
    PredictedUnsolvable,
    LowConfidenceKeep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub keep: bool,
    pub reason: GateReason,
    /// Mean and population std of the parsed pass fractions; absent when
    /// fewer than two predictions parsed.
    pub pred_mean: Option<f64>,
    pub pred_std: Option<f64>,
}

fn parsed(metas: &[MetaPrediction]) -> impl Iterator<Item = &MetaRecord> {
    metas.iter().filter(|m| m.parse_ok).filter_map(|m| m.parsed.as_ref())
}

/// Gates on predicted pass fractions in [0, 1].
///
/// A task is dropped when the predictions are confident (std below
/// `std_threshold`) and extreme: mean above `1 - 1/G` (trivial) or below
/// `1/G` (unsolvable). Both bounds are strict, so a group with exactly one
/// correct or one incorrect rollout is never predicted zero-variance.
pub fn gate_on_fractions(fractions: &[f64], group_size: usize, std_threshold: f64) -> GateDecision {
    if fractions.len() < 2 {
        return GateDecision {
            keep: true,
            reason: GateReason::LowConfidenceKeep,
            pred_mean: None,
            pred_std: None,
        };
    }
    let n = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let std = (fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n).sqrt();
    let inv_g = 1.0 / group_size as f64;
    let reason = if std >= std_threshold {
        GateReason::Kept
    } else if mean > 1.0 - inv_g + BOUND_SLACK {
        GateReason::PredictedTrivial
    } else if mean < inv_g - BOUND_SLACK {
        GateReason::PredictedUnsolvable
    } else {
        GateReason::Kept
    };
    GateDecision {
        keep: reason == GateReason::Kept,
        reason,
        pred_mean: Some(mean),
        pred_std: Some(std),
    }
}

/// Gate decision from the parsed meta predictions of one task.
pub fn gate_decision(metas: &[MetaPrediction], group_size: usize, std_threshold: f64) -> GateDecision {
    let fractions: Vec<f64> = parsed(metas).map(MetaRecord::pass_fraction).collect();
    gate_on_fractions(&fractions, group_size, std_threshold)
}

/// Lower median of a non-empty list.
pub fn lower_median<T: Copy + Ord>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

/// `multiplier` times the lower median predicted length, clamped to
/// `[1, budget]`; `budget` when nothing parsed.
pub fn cutoff_threshold(metas: &[MetaPrediction], multiplier: f64, budget: u32) -> u32 {
    let lengths: Vec<u32> = parsed(metas).map(|r| r.solution_length).collect();
    match lower_median(&lengths) {
        None => budget,
        Some(m) => {
            let t = (multiplier * f64::from(m)).floor();
            t.clamp(1.0, f64::from(budget.max(1))) as u32
        }
    }
}

/// Notions named by at least half of the parsed meta rollouts, ranked by
/// rollout count and then first appearance, at most `cap` of them. Notions
/// are compared by lemma; the first surface form seen is returned.
pub fn build_hints(metas: &[MetaPrediction], cap: usize) -> Vec<String> {
    struct Entry {
        lemma: Vec<String>,
        surface: String,
        count: usize,
        first: usize,
    }
    let mut entries: Vec<Entry> = Vec::new();
    let mut order = 0;
    let mut n_parsed: usize = 0;
    for record in parsed(metas) {
        n_parsed += 1;
        let mut seen: Vec<Vec<String>> = Vec::new();
        for notion in &record.math_notion {
            let lemma = lemmatize_words(notion);
            if lemma.is_empty() || seen.contains(&lemma) {
                continue;
            }
            match entries.iter_mut().find(|e| e.lemma == lemma) {
                Some(e) => e.count += 1,
                None => {
                    entries.push(Entry {
                        lemma: lemma.clone(),
                        surface: notion.trim().to_string(),
                        count: 1,
                        first: order,
                    });
                    order += 1;
                }
            }
            seen.push(lemma);
        }
    }
    let need = n_parsed.div_ceil(2).max(1);
    let mut kept: Vec<Entry> = entries.into_iter().filter(|e| e.count >= need).collect();
    kept.sort_by(|a, b| b.count.cmp(&a.count).then(a.first.cmp(&b.first)));
    kept.into_iter().take(cap).map(|e| e.surface).collect()
}

/// Whether the efficient pipeline runs at `step` (1-based).
pub fn schedule_active(step: u64, k: u64) -> bool {
    step > k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmeta::{parse_meta_output, render_meta_text};

    fn meta(notions: &[&str], pass: u32, len: u32) -> MetaPrediction {
        let rec = MetaRecord {
            math_notion: notions.iter().map(|s| s.to_string()).collect(),
            pass_rate: pass,
            solution_length: len,
        };
        parse_meta_output(&render_meta_text("r", &rec), 8192)
    }

    fn garbage() -> MetaPrediction {
        parse_meta_output("nothing", 8192)
    }

    #[test]
    fn gate_examples() {
        let all8: Vec<_> = (0..16).map(|_| meta(&[], 8, 500)).collect();
        let d = gate_decision(&all8, 16, 0.1);
        assert_eq!((d.keep, d.reason), (false, GateReason::PredictedTrivial));
        assert_eq!(d.pred_std, Some(0.0));

        let spread: Vec<_> = [2, 5, 7].iter().map(|&p| meta(&[], p, 500)).collect();
        let d = gate_decision(&spread, 16, 0.1);
        assert!(d.keep);
        assert!((d.pred_std.unwrap() - 0.2577).abs() < 1e-3);

        let half: Vec<_> = (0..16).map(|_| meta(&[], 4, 500)).collect();
        assert_eq!(gate_decision(&half, 16, 0.1).reason, GateReason::Kept);

        let zero: Vec<_> = (0..4).map(|_| meta(&[], 0, 500)).collect();
        assert_eq!(gate_decision(&zero, 8, 0.1).reason, GateReason::PredictedUnsolvable);

        let lone = vec![meta(&[], 8, 500), garbage(), garbage()];
        assert_eq!(gate_decision(&lone, 8, 0.1).reason, GateReason::LowConfidenceKeep);
    }

    #[test]
    fn one_off_groups_are_not_extreme() {
        for g in [2usize, 8, 16] {
            let near_full = vec![(g - 1) as f64 / g as f64; 4];
            assert!(gate_on_fractions(&near_full, g, 0.1).keep);
            let near_empty = vec![1.0 / g as f64; 4];
            assert!(gate_on_fractions(&near_empty, g, 0.1).keep);
        }
    }

    #[test]
    fn cutoff_examples() {
        let m: Vec<_> = [800, 1000, 1200].iter().map(|&l| meta(&[], 4, l)).collect();
        assert_eq!(cutoff_threshold(&m, 2.0, 8192), 2000);
        assert_eq!(cutoff_threshold(&[meta(&[], 4, 128)], 2.0, 8192), 256);
        assert_eq!(cutoff_threshold(&[meta(&[], 4, 5000)], 2.0, 8192), 8192);
        assert_eq!(cutoff_threshold(&[garbage()], 2.0, 8192), 8192);
        let even: Vec<_> = [400, 600].iter().map(|&l| meta(&[], 4, l)).collect();
        assert_eq!(cutoff_threshold(&even, 2.0, 8192), 800);
    }

    #[test]
    fn hints_majority_rule() {
        let mut metas = Vec::new();
        for i in 0..16 {
            let mut n = vec![];
            if i < 9 {
                n.push("law of sines");
            }
            if i < 7 {
                n.push("vieta formulas");
            }
            metas.push(meta(&n, 4, 500));
        }
        assert_eq!(build_hints(&metas, 5), vec!["law of sines"]);

        let sparse: Vec<_> = (0..4).map(|i| meta(&[["a b", "c d", "e f", "g h"][i]], 4, 500)).collect();
        assert!(build_hints(&sparse, 5).is_empty());
    }

    #[test]
    fn hints_rank_and_dedup() {
        let metas = vec![
            meta(&["Stars and Bars", "pigeonhole principle", "stars and bar"], 4, 500),
            meta(&["pigeonhole principle", "stars and bars"], 4, 500),
            meta(&["modular arithmetic"], 4, 500),
            garbage(),
        ];
        // Three parsed: majority is two.
        assert_eq!(build_hints(&metas, 5), vec!["Stars and Bars", "pigeonhole principle"]);
        assert_eq!(build_hints(&metas, 1), vec!["Stars and Bars"]);
    }

    #[test]
    fn schedule_boundary() {
        assert!(!schedule_active(120, 120));
        assert!(schedule_active(121, 120));
        assert!(schedule_active(1, 0));
    }
}
