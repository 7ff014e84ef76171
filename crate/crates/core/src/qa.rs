//! Multi-document QA prompts with a controlled number of documents and a
//! controlled position for the gold document, plus answer scoring.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAInstance {
    pub id: usize,
    pub question: String,
    /// Acceptable answers; the first one is the primary answer.
    pub answers: Vec<String>,
    pub gold_document: Document,
    pub distractor_pool: Vec<Document>,
}

impl QAInstance {
    pub fn validate(&self) -> Result<()> {
        if self.answers.iter().all(|a| a.trim().is_empty()) {
            return Err(Error::InvalidInput(alloc::format!(
                "instance {} has no non-empty answer",
                self.id
            )));
        }
        if self.gold_document.text.trim().is_empty() && self.gold_document.title.trim().is_empty()
        {
            return Err(Error::InvalidInput(alloc::format!(
                "instance {} has an empty gold document",
                self.id
            )));
        }
        Ok(())
    }

    /// The answer the lens is scored against.
    pub fn primary_answer(&self) -> Result<&str> {
        match self.answers.first() {
            Some(a) if !a.trim().is_empty() => Ok(a.as_str()),
            _ => Err(Error::InvalidInput("empty answer".into())),
        }
    }
}

/// Text layout of a prompt. Placeholders: `{index}`, `{title}`, `{text}` in
/// `document`; `{question}` in `question`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    pub instruction: String,
    pub document: String,
    pub question: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            version: "qa-v1".into(),
            instruction: "Write a high-quality answer for the given question using only the provided search results (some of which might be irrelevant).".into(),
            document: "Document [{index}](Title: {title}) {text}".into(),
            question: "Question: {question}\nAnswer:".into(),
        }
    }
}

impl PromptTemplate {
    fn render_document(&self, index: usize, doc: &Document) -> String {
        self.document
            .replace("{index}", &index.to_string())
            .replace("{title}", &doc.title)
            .replace("{text}", &doc.text)
    }
}

/// Which document occupies a prompt slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocSlot {
    Gold,
    /// Index into the instance's distractor pool.
    Distractor(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltPrompt {
    pub text: String,
    pub slots: Vec<DocSlot>,
}

impl BuiltPrompt {
    pub fn gold_index(&self) -> Option<usize> {
        self.slots.iter().position(|s| *s == DocSlot::Gold)
    }
}

/// Instruction, `k` numbered documents with the gold one at `gold_pos`, then
/// the question and answer cue. Distractors are drawn without replacement and
/// ordered by a generator seeded with `seed`.
pub fn build_prompt(
    instance: &QAInstance,
    k: usize,
    gold_pos: usize,
    seed: u64,
    template: &PromptTemplate,
) -> Result<BuiltPrompt> {
    if k == 0 {
        return Err(Error::InvalidInput("k_documents must be at least 1".into()));
    }
    if gold_pos >= k {
        return Err(Error::Index {
            what: "gold position",
            index: gold_pos,
            len: k,
        });
    }
    let available = instance.distractor_pool.len();
    if available < k - 1 {
        return Err(Error::PoolExhausted {
            needed: k - 1,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, available, k - 1).into_vec();
    picked.shuffle(&mut rng);

    let mut slots: Vec<DocSlot> = picked.into_iter().map(DocSlot::Distractor).collect();
    slots.insert(gold_pos, DocSlot::Gold);

    let mut text = String::new();
    text.push_str(&template.instruction);
    text.push_str("\n\n");
    for (i, slot) in slots.iter().enumerate() {
        let doc = match slot {
            DocSlot::Gold => &instance.gold_document,
            DocSlot::Distractor(j) => &instance.distractor_pool[*j],
        };
        if i > 0 {
            text.push('\n');
        }
        text.push_str(&template.render_document(i + 1, doc));
    }
    text.push_str("\n\n");
    text.push_str(&template.question.replace("{question}", &instance.question));
    Ok(BuiltPrompt { text, slots })
}

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let words: Vec<&str> = stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect();
    words.join(" ")
}

/// True iff some normalized alias occurs inside the normalized generation.
/// Plain substring matching: "parisian" matches "Paris".
pub fn evaluate_answer(generated: &str, answers: &[String]) -> bool {
    let gen = normalize_answer(generated);
    if gen.is_empty() {
        return false;
    }
    answers
        .iter()
        .map(|a| normalize_answer(a))
        .any(|a| !a.is_empty() && gen.contains(&a))
}

/// Stable per-(seed, run, instance) generator seed.
pub fn derive_seed(base: u64, run: u64, instance_id: u64) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ run.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(h ^ instance_id.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters of a position sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub k_documents: usize,
    pub gold_positions: Vec<usize>,
    pub n_runs: usize,
    pub seed: u64,
    pub max_answer_tokens: usize,
    pub confidence: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_documents: 5,
            gold_positions: alloc::vec![0, 2, 4],
            n_runs: 10,
            seed: 0,
            max_answer_tokens: 16,
            confidence: 0.95,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_documents == 0 {
            return Err(Error::InvalidInput("k_documents must be at least 1".into()));
        }
        if let Some(&p) = self.gold_positions.iter().find(|&&p| p >= self.k_documents) {
            return Err(Error::Index {
                what: "gold position",
                index: p,
                len: self.k_documents,
            });
        }
        if self.n_runs == 0 {
            return Err(Error::InvalidInput("n_runs must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidInput("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn doc(t: &str) -> Document {
        Document {
            title: format!("T{t}"),
            text: format!("text {t}"),
        }
    }

    fn instance(pool: usize) -> QAInstance {
        QAInstance {
            id: 3,
            question: "who?".into(),
            answers: vec!["Paris".into()],
            gold_document: doc("gold"),
            distractor_pool: (0..pool).map(|i| doc(&format!("d{i}"))).collect(),
        }
    }

    #[test]
    fn single_document_prompt_has_only_gold() {
        let p = build_prompt(&instance(4), 1, 0, 9, &PromptTemplate::default()).unwrap();
        assert_eq!(p.slots, vec![DocSlot::Gold]);
        assert_eq!(
            p.text,
            "Write a high-quality answer for the given question using only the provided search results (some of which might be irrelevant).\n\nDocument [1](Title: Tgold) text gold\n\nQuestion: who?\nAnswer:"
        );
    }

    #[test]
    fn gold_lands_where_requested() {
        let t = PromptTemplate::default();
        for pos in 0..3 {
            let p = build_prompt(&instance(5), 3, pos, 1, &t).unwrap();
            assert_eq!(p.gold_index(), Some(pos));
            let line = format!("Document [{}](Title: Tgold)", pos + 1);
            assert!(p.text.contains(&line));
        }
    }

    #[test]
    fn prompt_is_deterministic_per_seed() {
        let t = PromptTemplate::default();
        let a = build_prompt(&instance(20), 5, 2, 42, &t).unwrap();
        let b = build_prompt(&instance(20), 5, 2, 42, &t).unwrap();
        assert_eq!(a, b);
        let distinct = (0..20u64)
            .map(|s| build_prompt(&instance(20), 5, 2, s, &t).unwrap().slots)
            .collect::<Vec<_>>();
        assert!(distinct.iter().any(|s| *s != distinct[0]));
    }

    #[test]
    fn prompt_errors() {
        let t = PromptTemplate::default();
        assert!(matches!(
            build_prompt(&instance(1), 3, 0, 0, &t),
            Err(Error::PoolExhausted { needed: 2, available: 1 })
        ));
        assert!(matches!(
            build_prompt(&instance(5), 3, 3, 0, &t),
            Err(Error::Index { .. })
        ));
        assert!(build_prompt(&instance(5), 0, 0, 0, &t).is_err());
    }

    #[test]
    fn answer_scoring_examples() {
        let paris = vec!["Paris".to_string()];
        assert!(evaluate_answer("The answer is Paris.", &paris));
        assert!(!evaluate_answer("", &paris));
        assert!(evaluate_answer("parisian nights", &paris));
        assert!(!evaluate_answer("London", &paris));
        assert!(evaluate_answer("  the   UNITED states!", &["United States".into()]));
        assert!(!evaluate_answer("anything", &["the".into()]));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The  Eiffel-Tower, in Paris!"), "eiffeltower in paris");
        assert_eq!(normalize_answer("An apple a day"), "apple day");
    }

    #[test]
    fn seeds_differ_by_run_and_instance() {
        let a = derive_seed(1, 0, 0);
        assert_ne!(a, derive_seed(1, 1, 0));
        assert_ne!(a, derive_seed(1, 0, 1));
        assert_ne!(a, derive_seed(2, 0, 0));
        assert_eq!(a, derive_seed(1, 0, 0));
    }

    #[test]
    fn sweep_config_validation() {
        SweepConfig::default().validate().unwrap();
        let bad = SweepConfig {
            gold_positions: vec![5],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SweepConfig {
            n_runs: 0,
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
