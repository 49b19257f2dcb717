use serde::{Deserialize, Serialize};

use crate::error::{MasaError, Result};
use crate::textmeta::lemmatize_words;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotionDef {
    pub phrase: String,
    /// The strategy this notion leads to.
    pub strategy: usize,
}

/// The closed vocabulary of the simulated universe: observable topics and
/// levels, solution strategies, and notion phrases grouped by strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimWorld {
    pub topics: Vec<String>,
    pub levels: usize,
    pub strategies: Vec<String>,
    pub notions: Vec<NotionDef>,
}

const DEFAULT_NOTIONS: [[&str; 6]; 4] = [
    [
        "law of cosines",
        "law of sines",
        "similar triangles",
        "pythagorean theorem",
        "inscribed angle theorem",
        "angle bisector theorem",
    ],
    [
        "vieta formulas",
        "quadratic formula",
        "completing the square",
        "am gm inequality",
        "polynomial remainder theorem",
        "telescoping sums",
    ],
    [
        "modular arithmetic",
        "chinese remainder theorem",
        "euclidean algorithm",
        "fermat little theorem",
        "prime factorization",
        "greatest common divisor",
    ],
    [
        "pigeonhole principle",
        "inclusion exclusion",
        "binomial coefficients",
        "stars and bars",
        "recursive counting",
        "generating functions",
    ],
];

impl Default for SimWorld {
    fn default() -> Self {
        Self {
            topics: ["alpha", "beta", "gamma", "delta"].map(String::from).to_vec(),
            levels: 5,
            strategies: [
                "synthetic construction",
                "algebraic manipulation",
                "residue analysis",
                "counting argument",
            ]
            .map(String::from)
            .to_vec(),
            notions: DEFAULT_NOTIONS
                .iter()
                .enumerate()
                .flat_map(|(s, family)| {
                    family.iter().map(move |p| NotionDef {
                        phrase: p.to_string(),
                        strategy: s,
                    })
                })
                .collect(),
        }
    }
}

impl SimWorld {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MasaError::Config(m));
        if self.topics.is_empty() || self.levels == 0 {
            return fail("world needs at least one topic and one level".into());
        }
        if self.strategies.is_empty() {
            return fail("world needs at least one strategy".into());
        }
        if self.notions.is_empty() {
            return fail("notion vocabulary is empty".into());
        }
        if self.notions.len() + 1 > super::decision::MAX_WIDTH {
            return fail(format!("at most {} notions supported", super::decision::MAX_WIDTH - 1));
        }
        let mut seen: Vec<Vec<String>> = Vec::new();
        for n in &self.notions {
            let lemma = lemmatize_words(&n.phrase);
            if lemma.is_empty() {
                return fail("empty notion phrase".into());
            }
            if seen.contains(&lemma) {
                return fail(format!("duplicate notion {:?}", n.phrase));
            }
            if n.strategy >= self.strategies.len() {
                return fail(format!("notion {:?} names unknown strategy", n.phrase));
            }
            seen.push(lemma);
        }
        for t in &self.topics {
            if t.is_empty() || t.contains([',', ']']) {
                return fail(format!("bad topic name {t:?}"));
            }
        }
        Ok(())
    }

    pub fn contexts(&self) -> usize {
        self.topics.len() * self.levels
    }

    /// Context index for a topic and a 1-based level.
    pub fn context_index(&self, topic: usize, level: usize) -> usize {
        topic * self.levels + (level - 1)
    }

    pub fn context_parts(&self, ctx: usize) -> (usize, usize) {
        (ctx / self.levels, ctx % self.levels + 1)
    }

    /// The observable tag a task prompt opens with.
    pub fn context_tag(&self, ctx: usize) -> String {
        let (topic, level) = self.context_parts(ctx);
        format!("[topic {}, level {}]", self.topics[topic], level)
    }

    /// Recovers the context bucket from any prompt embedding a task's tag.
    pub fn context_of(&self, prompt: &str) -> Result<usize> {
        let unknown = || MasaError::UnknownContext(prompt.chars().take(80).collect());
        let start = prompt.find("[topic ").ok_or_else(unknown)? + "[topic ".len();
        let rest = &prompt[start..];
        let (topic, rest) = rest.split_once(", level ").ok_or_else(unknown)?;
        let (level, _) = rest.split_once(']').ok_or_else(unknown)?;
        let topic = self.topics.iter().position(|t| t == topic).ok_or_else(unknown)?;
        let level: usize = level.parse().map_err(|_| unknown())?;
        if level == 0 || level > self.levels {
            return Err(unknown());
        }
        Ok(self.context_index(topic, level))
    }

    /// Vocabulary id of a notion phrase, compared after lemmatization.
    pub fn notion_id(&self, phrase: &str) -> Option<usize> {
        let lemma = lemmatize_words(phrase);
        self.notions
            .iter()
            .position(|n| lemmatize_words(&n.phrase) == lemma)
    }

    pub fn family(&self, strategy: usize) -> Vec<usize> {
        self.notions
            .iter()
            .enumerate()
            .filter(|(_, n)| n.strategy == strategy)
            .map(|(i, _)| i)
            .collect()
    }
}
