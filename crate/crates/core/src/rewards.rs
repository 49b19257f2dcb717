//! Self-alignment rewards for meta predictions, solution correctness, and
//! the notion-score diagnostic.
//!
//! Pass rates are compared as fractions in [0, 1]: a prediction `p` on the
//! 0..=8 scale becomes `p / 8`, the truth is `#correct / G`.

use serde::{Deserialize, Serialize};

use crate::error::{MasaError, Result};
use crate::textmeta::{lemmatize_words, LemmatizedText};
use crate::types::MetaPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_length: f64,
    pub r_difficulty: f64,
    pub r_notion: f64,
    pub r_meta: f64,
}

impl RewardBreakdown {
    pub const ZERO: Self = Self {
        r_length: 0.0,
        r_difficulty: 0.0,
        r_notion: 0.0,
        r_meta: 0.0,
    };
}

fn matching_brace(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' if depth == 0 => return Some(i),
            '}' => depth -= 1,
            _ => {}
        }
    }
    None
}

/// The last `\boxed{...}` content, falling back to the last
/// `final answer:` line.
pub fn extract_answer(text: &str) -> Option<String> {
    const BOXED: &str = "\\boxed{";
    for (i, _) in text.rmatch_indices(BOXED) {
        let inner = &text[i + BOXED.len()..];
        if let Some(end) = matching_brace(inner) {
            return Some(inner[..end].to_string());
        }
    }
    let lower = text.to_lowercase();
    const MARKER: &str = "final answer:";
    let at = lower.rfind(MARKER)?;
    // Lowercasing can shift byte offsets for non-ASCII text; only trust the
    // position when the prefix is unchanged in length.
    if lower.len() != text.len() {
        return None;
    }
    let rest = text[at + MARKER.len()..].lines().next().unwrap_or("");
    let answer = rest.trim().trim_end_matches('.').trim();
    (!answer.is_empty()).then(|| answer.to_string())
}

/// Trims, drops `$` and whitespace, and normalizes plain numerals
/// ("007" -> "7", "2.50" -> "2.5"). Anything else, fractions included,
/// stays symbolic.
pub fn canonical_answer(raw: &str) -> String {
    let s: String = raw
        .trim()
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '$')
        .collect();
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", s.strip_prefix('+').unwrap_or(&s)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    let numeric = match frac_part {
        None => digits(int_part),
        Some(f) => (digits(int_part) || int_part.is_empty()) && digits(f),
    };
    if !numeric {
        return s;
    }
    let int_norm = int_part.trim_start_matches('0');
    let int_norm = if int_norm.is_empty() { "0" } else { int_norm };
    let frac_norm = frac_part.map(|f| f.trim_end_matches('0')).unwrap_or("");
    let mut out = int_norm.to_string();
    if !frac_norm.is_empty() {
        out.push('.');
        out.push_str(frac_norm);
    }
    if out == "0" {
        return out;
    }
    format!("{sign}{out}")
}

/// 1 iff the extracted answer matches the ground truth after canonicalization.
pub fn solution_reward(text: &str, ground_truth: &str) -> f64 {
    match extract_answer(text) {
        Some(ans) if canonical_answer(&ans) == canonical_answer(ground_truth) => 1.0,
        _ => 0.0,
    }
}

/// 1 iff `predicted` lies within [min, max] of the correct lengths; 0 when
/// there are no correct rollouts.
pub fn length_reward(predicted: u32, correct_lengths: &[usize]) -> f64 {
    let (Some(lo), Some(hi)) = (correct_lengths.iter().min(), correct_lengths.iter().max()) else {
        return 0.0;
    };
    let p = predicted as usize;
    if *lo <= p && p <= *hi {
        1.0
    } else {
        0.0
    }
}

/// `b^|d_pred - d_sol|` on normalized pass rates.
pub fn difficulty_reward(d_pred: f64, d_sol: f64, base: f64) -> f64 {
    base.powf((d_pred - d_sol).abs())
}

/// A solution rollout prepared for notion counting.
#[derive(Debug, Clone)]
pub struct JudgedSolution {
    pub lemmas: LemmatizedText,
    pub correct: bool,
}

impl JudgedSolution {
    pub fn new(text: &str, reward: f64) -> Self {
        Self {
            lemmas: LemmatizedText::new(text),
            correct: reward == 1.0,
        }
    }
}

fn count_lemma(phrase: &[String], solutions: &[JudgedSolution], correct: bool) -> usize {
    solutions
        .iter()
        .filter(|s| s.correct == correct && s.lemmas.contains_phrase(phrase))
        .count()
}

/// Number of rollouts with reward `t` whose text contains `notion`.
pub fn f_count(notion: &str, solutions: &[JudgedSolution], t: u8) -> Result<usize> {
    let phrase = lemmatize_words(notion);
    if phrase.is_empty() {
        return Err(MasaError::Precondition("notion must be non-empty".into()));
    }
    Ok(count_lemma(&phrase, solutions, t == 1))
}

/// Fraction of predicted notions, after dropping those already in the
/// problem and deduplicating by lemma, that appear in more correct than
/// incorrect rollouts.
pub fn notion_reward(notions: &[String], solutions: &[JudgedSolution], problem: &LemmatizedText) -> f64 {
    let mut survivors: Vec<Vec<String>> = Vec::new();
    for n in notions {
        let phrase = lemmatize_words(n);
        if phrase.is_empty() || problem.contains_phrase(&phrase) || survivors.contains(&phrase) {
            continue;
        }
        survivors.push(phrase);
    }
    if survivors.is_empty() {
        return 0.0;
    }
    let positive = survivors
        .iter()
        .filter(|p| count_lemma(p, solutions, true) > count_lemma(p, solutions, false))
        .count();
    positive as f64 / survivors.len() as f64
}

pub fn meta_reward(r_length: f64, r_difficulty: f64, r_notion: f64) -> RewardBreakdown {
    RewardBreakdown {
        r_length,
        r_difficulty,
        r_notion,
        r_meta: (r_length + r_difficulty + r_notion) / 3.0,
    }
}

/// Positive when `notion` is relatively more frequent among correct rollouts.
pub fn notion_score(notion: &str, solutions: &[JudgedSolution]) -> Result<f64> {
    let phrase = lemmatize_words(notion);
    if phrase.is_empty() {
        return Err(MasaError::Precondition("notion must be non-empty".into()));
    }
    let n_correct = solutions.iter().filter(|s| s.correct).count();
    let n_incorrect = solutions.len() - n_correct;
    let pos = count_lemma(&phrase, solutions, true) as f64 / n_correct.max(1) as f64;
    let neg = count_lemma(&phrase, solutions, false) as f64 / n_incorrect.max(1) as f64;
    Ok(pos - neg)
}

/// Statistics of a solution group that every meta rollout is scored against.
#[derive(Debug, Clone)]
pub struct GroupTruth {
    pub solutions: Vec<JudgedSolution>,
    pub correct_lengths: Vec<usize>,
    /// `#correct / G`.
    pub pass_fraction: f64,
    pub problem: LemmatizedText,
}

impl GroupTruth {
    /// `texts`, `lengths`, and `rewards` are parallel per-rollout slices.
    pub fn new(problem: &str, texts: &[&str], lengths: &[usize], rewards: &[f64]) -> Self {
        let solutions: Vec<JudgedSolution> = texts
            .iter()
            .zip(rewards)
            .map(|(t, &r)| JudgedSolution::new(t, r))
            .collect();
        let correct_lengths = lengths
            .iter()
            .zip(rewards)
            .filter(|(_, &r)| r == 1.0)
            .map(|(&l, _)| l)
            .collect();
        let correct = rewards.iter().filter(|&&r| r == 1.0).count();
        Self {
            pass_fraction: correct as f64 / rewards.len().max(1) as f64,
            solutions,
            correct_lengths,
            problem: LemmatizedText::new(problem),
        }
    }
}

/// Full reward breakdown of one meta rollout. Unparsed output scores 0 on
/// every component.
pub fn score_meta(meta: &MetaPrediction, truth: &GroupTruth, base: f64) -> RewardBreakdown {
    match (&meta.parsed, meta.parse_ok) {
        (Some(rec), true) => meta_reward(
            length_reward(rec.solution_length, &truth.correct_lengths),
            difficulty_reward(rec.pass_fraction(), truth.pass_fraction, base),
            notion_reward(&rec.math_notion, &truth.solutions, &truth.problem),
        ),
        _ => RewardBreakdown::ZERO,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::MetaRecord;
    use proptest::prelude::*;

    fn sols(items: &[(&str, f64)]) -> Vec<JudgedSolution> {
        items.iter().map(|(t, r)| JudgedSolution::new(t, *r)).collect()
    }

    #[test]
    fn solution_reward_cases() {
        assert_eq!(solution_reward(r"so the answer is \boxed{42}", "42"), 1.0);
        assert_eq!(solution_reward(r"\boxed{41}", "42"), 0.0);
        assert_eq!(solution_reward("I think it is 42", "42"), 0.0);
        assert_eq!(solution_reward(r"\boxed{7} then \boxed{007}", "7"), 1.0);
        assert_eq!(solution_reward(r"\boxed{\frac{1}{2}}", r"\frac{1}{2}"), 1.0);
        assert_eq!(solution_reward("Final Answer: 12.\n", "12"), 1.0);
        assert_eq!(solution_reward(r"\boxed{1/2}", "0.5"), 0.0);
    }

    #[test]
    fn canonicalization() {
        assert_eq!(canonical_answer(" 007 "), "7");
        assert_eq!(canonical_answer("1/2"), "1/2");
        assert_eq!(canonical_answer("2.50"), "2.5");
        assert_eq!(canonical_answer("2.0"), "2");
        assert_eq!(canonical_answer("-0"), "0");
        assert_eq!(canonical_answer("$-03$"), "-3");
        assert_eq!(canonical_answer("x + 1"), "x+1");
    }

    #[test]
    fn length_reward_cases() {
        assert_eq!(length_reward(500, &[400, 800]), 1.0);
        assert_eq!(length_reward(399, &[400, 800]), 0.0);
        assert_eq!(length_reward(400, &[400, 800]), 1.0);
        assert_eq!(length_reward(800, &[800, 400]), 1.0);
        assert_eq!(length_reward(801, &[400, 800]), 0.0);
        assert_eq!(length_reward(500, &[]), 0.0);
    }

    #[test]
    fn difficulty_reward_cases() {
        assert_eq!(difficulty_reward(0.5, 0.5, 0.01), 1.0);
        assert!((difficulty_reward(0.0, 1.0, 0.01) - 0.01).abs() < 1e-15);
        let r = difficulty_reward(4.0 / 8.0, 12.0 / 16.0, 0.01);
        assert!((r - 0.316_227_766_016_837_94).abs() < 1e-9);
    }

    #[test]
    fn f_count_cases() {
        let s = sols(&[
            ("use vieta here", 1.0),
            ("vieta again", 1.0),
            ("nothing", 1.0),
            ("by vieta", 1.0),
            ("plain", 1.0),
            ("wrong path", 0.0),
        ]);
        assert_eq!(f_count("vieta", &s, 1).unwrap(), 3);
        assert_eq!(f_count("vieta", &s, 0).unwrap(), 0);
        assert!(f_count("vieta", &s, 1).unwrap() + f_count("vieta", &s, 0).unwrap() <= s.len());
        assert!(f_count("", &s, 1).is_err());
    }

    #[test]
    fn notion_reward_cases() {
        // "alpha": 3 correct vs 1 incorrect; "beta": 1 vs 1.
        let s = sols(&[
            ("alpha beta", 1.0),
            ("alpha", 1.0),
            ("alpha", 1.0),
            ("gamma", 1.0),
            ("alpha beta", 0.0),
            ("delta", 0.0),
        ]);
        let problem = LemmatizedText::new("compute the value");
        let r = notion_reward(&["alpha".into(), "beta".into()], &s, &problem);
        assert_eq!(r, 0.5);

        let echo = LemmatizedText::new("use alpha and beta");
        assert_eq!(notion_reward(&["alpha".into(), "beta".into()], &s, &echo), 0.0);

        let none = sols(&[("x", 1.0), ("y", 0.0)]);
        assert_eq!(notion_reward(&["alpha".into()], &none, &problem), 0.0);
        assert_eq!(notion_reward(&[], &s, &problem), 0.0);
    }

    #[test]
    fn notion_reward_deduplicates_by_lemma() {
        let s = sols(&[("use triangles", 1.0), ("nothing", 0.0), ("circles", 0.0)]);
        let problem = LemmatizedText::new("q");
        let once = notion_reward(&["triangle".into(), "circle".into()], &s, &problem);
        let repeated = notion_reward(
            &["triangle".into(), "Triangles".into(), "triangle".into(), "circle".into()],
            &s,
            &problem,
        );
        assert_eq!(once, 0.5);
        assert_eq!(repeated, once);
    }

    #[test]
    fn meta_reward_mean() {
        assert_eq!(meta_reward(1.0, 1.0, 1.0).r_meta, 1.0);
        assert_eq!(meta_reward(0.0, 0.0, 0.0).r_meta, 0.0);
        let b = meta_reward(1.0, 0.01, 0.5);
        assert!((b.r_meta - 0.503_333_333_333_333_3).abs() < 1e-15);
        assert_eq!(b.r_meta, (b.r_length + b.r_difficulty + b.r_notion) / 3.0);
    }

    #[test]
    fn notion_score_cases() {
        let all = sols(&[("k", 1.0), ("k", 1.0), ("z", 0.0)]);
        assert_eq!(notion_score("k", &all).unwrap(), 1.0);
        let sym = sols(&[("k", 1.0), ("z", 1.0), ("k", 0.0), ("z", 0.0)]);
        assert_eq!(notion_score("k", &sym).unwrap(), 0.0);
        // counts (1, 3) with 4 correct and 4 incorrect: 1/4 - 3/4.
        let neg = sols(&[
            ("k", 1.0),
            ("z", 1.0),
            ("z", 1.0),
            ("z", 1.0),
            ("k", 0.0),
            ("k", 0.0),
            ("k", 0.0),
            ("z", 0.0),
        ]);
        assert_eq!(notion_score("k", &neg).unwrap(), -0.5);
    }

    #[test]
    fn unparsed_meta_scores_zero() {
        let truth = GroupTruth::new("p", &["a"], &[300], &[1.0]);
        let bad = crate::textmeta::parse_meta_output("garbage", 8192);
        assert_eq!(score_meta(&bad, &truth, 0.01), RewardBreakdown::ZERO);
    }

    #[test]
    fn score_meta_combines_components() {
        let truth = GroupTruth::new(
            "find x",
            &["use vieta", "use vieta", "guess", "guess"],
            &[300, 500, 900, 100],
            &[1.0, 1.0, 0.0, 0.0],
        );
        let rec = MetaRecord {
            math_notion: vec!["vieta".into()],
            pass_rate: 4,
            solution_length: 400,
        };
        let text = crate::textmeta::render_meta_text("r", &rec);
        let meta = crate::textmeta::parse_meta_output(&text, 8192);
        let b = score_meta(&meta, &truth, 0.01);
        assert_eq!(b, meta_reward(1.0, 1.0, 1.0));
    }

    /// Independent scan: word-boundary containment via space padding.
    fn oracle_notion_reward(notions: &[String], sols: &[(String, bool)], problem: &str) -> f64 {
        let pad = |s: &str| format!(" {} ", crate::textmeta::lemmatize(s));
        let problem = pad(problem);
        let mut seen: Vec<String> = Vec::new();
        let mut survivors = Vec::new();
        for n in notions {
            let l = crate::textmeta::lemmatize(n);
            if l.is_empty() || seen.contains(&l) {
                continue;
            }
            seen.push(l.clone());
            let needle = format!(" {l} ");
            if problem.contains(&needle) {
                continue;
            }
            survivors.push(needle);
        }
        if survivors.is_empty() {
            return 0.0;
        }
        let mut hits = 0;
        for needle in &survivors {
            let mut c = [0i64; 2];
            for (text, ok) in sols {
                if pad(text).contains(needle.as_str()) {
                    c[usize::from(*ok)] += 1;
                }
            }
            if c[1] - c[0] > 0 {
                hits += 1;
            }
        }
        hits as f64 / survivors.len() as f64
    }

    fn vocab_word() -> impl Strategy<Value = String> {
        (0usize..50).prop_map(|i| {
            const STEMS: [&str; 10] = ["sine", "ratio", "prime", "graph", "root", "angle", "sum", "mod", "set", "path"];
            const SUFFIX: [&str; 5] = ["", "s", "es", "ing", "ed"];
            format!("{}{}", STEMS[i % 10], SUFFIX[i / 10])
        })
    }

    fn phrase() -> impl Strategy<Value = String> {
        proptest::collection::vec(vocab_word(), 1..3).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn notion_reward_matches_oracle(
            notions in proptest::collection::vec(phrase(), 0..6),
            sols in proptest::collection::vec((proptest::collection::vec(vocab_word(), 0..12), any::<bool>()), 1..=8),
            problem in proptest::collection::vec(vocab_word(), 0..5),
        ) {
            let sols: Vec<(String, bool)> = sols.into_iter().map(|(w, ok)| (w.join(" "), ok)).collect();
            let problem = problem.join(" ");
            let judged: Vec<JudgedSolution> = sols
                .iter()
                .map(|(t, ok)| JudgedSolution::new(t, if *ok { 1.0 } else { 0.0 }))
                .collect();
            let got = notion_reward(&notions, &judged, &LemmatizedText::new(&problem));
            prop_assert_eq!(got, oracle_notion_reward(&notions, &sols, &problem));
        }

        #[test]
        fn notion_reward_order_and_duplication_invariant(
            notions in proptest::collection::vec(phrase(), 1..5),
            sols in proptest::collection::vec((proptest::collection::vec(vocab_word(), 0..10), any::<bool>()), 1..=8),
            seed in any::<u64>(),
        ) {
            let judged: Vec<JudgedSolution> = sols
                .iter()
                .map(|(w, ok)| JudgedSolution::new(&w.join(" "), if *ok { 1.0 } else { 0.0 }))
                .collect();
            let problem = LemmatizedText::new("");
            let base = notion_reward(&notions, &judged, &problem);
            let mut shuffled = notions.clone();
            shuffled.extend(notions.iter().take(2).cloned());
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(notion_reward(&shuffled, &judged, &problem), base);
        }

        #[test]
        fn difficulty_monotone_and_symmetric(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0, base in 0.001f64..0.999) {
            let r = difficulty_reward(a, b, base);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(r, difficulty_reward(b, a, base));
            if (a - b).abs() <= (a - c).abs() {
                prop_assert!(r >= difficulty_reward(a, c, base));
            }
        }
    }
}
