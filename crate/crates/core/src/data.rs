//! Matched-pair datasets: a seeded synthetic hallucination task, the
//! whitespace tokenizer, template encoding, and pair-preserving splits.
//!
//! Each pair shares one context and knowledge string; the factual member
//! (label 0) uses only words present in the knowledge, the hallucinated
//! member (label 1) has `corrupt_count` response words swapped for words
//! absent from the knowledge. Words are opaque ids rendered as
//! `w<number>`; the task verifies the mechanism, not linguistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CLS_ID: usize = 0;
pub const SEP_ID: usize = 1;
pub const PAD_ID: usize = 2;
pub const UNK_ID: usize = 3;
/// Number of reserved ids; vocabulary words start here.
pub const FIRST_WORD_ID: usize = 4;

/// Whitespace tokenizer over a fixed word list with four reserved ids.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Tokenizer {
    pub fn from_words(words: Vec<String>) -> Tokenizer {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), FIRST_WORD_ID + i))
            .collect();
        Tokenizer { words, index }
    }

    /// Reserved ids plus one id per word.
    pub fn vocab_size(&self) -> usize {
        FIRST_WORD_ID + self.words.len()
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn decode_id(&self, id: usize) -> &str {
        match id {
            CLS_ID => "[CLS]",
            SEP_ID => "[SEP]",
            PAD_ID => "[PAD]",
            UNK_ID => "[UNK]",
            _ => self
                .words
                .get(id - FIRST_WORD_ID)
                .map(String::as_str)
                .unwrap_or("[UNK]"),
        }
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.word_id(w)).collect()
    }

    pub fn decode_tokens(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.decode_id(id));
        }
        out
    }

    /// (word, id) pairs in id order, for the vocabulary sidecar file.
    pub fn entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), FIRST_WORD_ID + i))
    }
}

/// Input rendering: QA/dialogue uses context, response and knowledge;
/// summary style omits the knowledge segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTemplate {
    QaDialogueStyle,
    SummaryStyle,
}

impl TaskTemplate {
    pub fn parse(s: &str) -> Result<TaskTemplate> {
        match s {
            "qa" | "dialogue" | "qa_dialogue_style" => Ok(TaskTemplate::QaDialogueStyle),
            "summary" | "summary_style" => Ok(TaskTemplate::SummaryStyle),
            other => Err(Error::InvalidArgument {
                op: "template",
                msg: format!("unknown template '{other}'"),
            }),
        }
    }
}

/// One member of a matched pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedExample {
    pub pair_id: String,
    pub context: String,
    pub response: String,
    pub knowledge: String,
    /// 0 factual, 1 hallucinated.
    pub label: u8,
}

/// Examples plus the vocabulary they were generated against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<PairedExample>,
    pub tokenizer: Tokenizer,
}

impl Dataset {
    /// Wraps externally loaded examples, enforcing the pairing invariant.
    pub fn from_parts(examples: Vec<PairedExample>, tokenizer: Tokenizer) -> Result<Dataset> {
        let ds = Dataset {
            examples,
            tokenizer,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Every pair_id must appear exactly twice, once per label, with both
    /// members sharing context and knowledge.
    pub fn validate(&self) -> Result<()> {
        let mut by_pair: BTreeMap<&str, Vec<&PairedExample>> = BTreeMap::new();
        for ex in &self.examples {
            if ex.label > 1 {
                return Err(Error::Data {
                    msg: format!("pair {}: label {} outside {{0,1}}", ex.pair_id, ex.label),
                });
            }
            by_pair.entry(&ex.pair_id).or_default().push(ex);
        }
        let mut broken: Vec<&str> = Vec::new();
        for (id, members) in &by_pair {
            let ok = members.len() == 2
                && members[0].label + members[1].label == 1
                && members[0].context == members[1].context
                && members[0].knowledge == members[1].knowledge;
            if !ok {
                broken.push(id);
            }
        }
        if !broken.is_empty() {
            return Err(Error::Data {
                msg: format!("broken pairs: {}", broken.join(", ")),
            });
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.examples.len() / 2
    }

    /// Indices grouped per pair: (factual, hallucinated), in order of
    /// first appearance.
    pub fn pair_indices(&self) -> Vec<(usize, usize)> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut pairs: Vec<(Option<usize>, Option<usize>)> = Vec::new();
        let mut order: Vec<(usize, usize)> = Vec::new();
        for (i, ex) in self.examples.iter().enumerate() {
            let slot = *seen.entry(&ex.pair_id).or_insert_with(|| {
                pairs.push((None, None));
                pairs.len() - 1
            });
            if ex.label == 0 {
                pairs[slot].0 = Some(i);
            } else {
                pairs[slot].1 = Some(i);
            }
        }
        for (f, h) in pairs {
            order.push((f.expect("validated pair"), h.expect("validated pair")));
        }
        order
    }
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub vocab_words: usize,
    pub knowledge_len: usize,
    pub response_len: usize,
    pub corrupt_count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        // calibrated so a 2-layer toy encoder separates the task easily
        SyntheticSpec {
            n_pairs: 4000,
            vocab_words: 4096,
            knowledge_len: 12,
            response_len: 8,
            corrupt_count: 3,
            seed: 42,
        }
    }
}

/// Number of context words prepended to every synthetic example.
pub const CONTEXT_WORDS: usize = 2;

/// Builds a balanced matched-pair dataset. Per pair: knowledge is a set
/// of distinct random words, the factual response samples from it, and
/// the hallucinated response replaces `corrupt_count` of those words with
/// words absent from the knowledge. Deterministic per seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n_pairs == 0
        || spec.response_len == 0
        || spec.corrupt_count > spec.response_len
        || spec.response_len > spec.knowledge_len
    {
        return Err(Error::InvalidArgument {
            op: "generate_synthetic",
            msg: format!(
                "need corrupt_count <= response_len <= knowledge_len and n_pairs > 0, got {spec:?}"
            ),
        });
    }
    if spec.vocab_words < 2 * spec.knowledge_len {
        return Err(Error::InvalidArgument {
            op: "generate_synthetic",
            msg: format!(
                "vocab_words {} leaves no room for distractors (need >= {})",
                spec.vocab_words,
                2 * spec.knowledge_len
            ),
        });
    }

    let words: Vec<String> = (0..spec.vocab_words).map(|i| format!("w{i}")).collect();
    let mut rng = Rng::seed_from(spec.seed);
    let mut examples = Vec::with_capacity(2 * spec.n_pairs);

    for pair in 0..spec.n_pairs {
        let pair_id = format!("p{pair:06}");
        let knowledge_ids = rng.sample_distinct(spec.vocab_words, spec.knowledge_len);
        let in_knowledge: alloc::collections::BTreeSet<usize> =
            knowledge_ids.iter().copied().collect();

        // context: a couple of knowledge words standing in for a question
        let ctx_positions = rng.sample_distinct(spec.knowledge_len, CONTEXT_WORDS);
        let context = ctx_positions
            .iter()
            .map(|&p| words[knowledge_ids[p]].as_str())
            .collect::<Vec<_>>()
            .join(" ");

        let resp_positions = rng.sample_distinct(spec.knowledge_len, spec.response_len);
        let factual: Vec<usize> = resp_positions.iter().map(|&p| knowledge_ids[p]).collect();

        let mut hallucinated = factual.clone();
        let corrupt_at = rng.sample_distinct(spec.response_len, spec.corrupt_count);
        let mut used = alloc::collections::BTreeSet::new();
        for &pos in &corrupt_at {
            let replacement = loop {
                let cand = rng.below(spec.vocab_words);
                if !in_knowledge.contains(&cand) && !used.contains(&cand) {
                    break cand;
                }
            };
            used.insert(replacement);
            hallucinated[pos] = replacement;
        }

        let knowledge_text = knowledge_ids
            .iter()
            .map(|&w| words[w].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let render = |ids: &[usize]| {
            ids.iter()
                .map(|&w| words[w].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };

        examples.push(PairedExample {
            pair_id: pair_id.clone(),
            context: context.clone(),
            response: render(&factual),
            knowledge: knowledge_text.clone(),
            label: 0,
        });
        examples.push(PairedExample {
            pair_id,
            context,
            response: render(&hallucinated),
            knowledge: knowledge_text,
            label: 1,
        });
    }

    Dataset::from_parts(examples, Tokenizer::from_words(words))
}

/// Renders an example to token ids: `[CLS] context [SEP] response [SEP]
/// knowledge` (QA/dialogue) or `[CLS] document [SEP] summary` (summary),
/// truncated to `max_len` and padded with PAD to exactly `max_len`.
pub fn encode(
    example: &PairedExample,
    template: TaskTemplate,
    max_len: usize,
    tokenizer: &Tokenizer,
) -> Vec<usize> {
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(tokenizer.encode_text(&example.context));
    ids.push(SEP_ID);
    ids.extend(tokenizer.encode_text(&example.response));
    if template == TaskTemplate::QaDialogueStyle {
        ids.push(SEP_ID);
        ids.extend(tokenizer.encode_text(&example.knowledge));
    }
    ids.truncate(max_len);
    ids.resize(max_len, PAD_ID);
    ids
}

/// Pair-preserving deterministic split into train/validation/test
/// example-index lists (80/10/10 by pair).
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_dataset(dataset: &Dataset, seed: u64) -> Split {
    let mut pairs = dataset.pair_indices();
    let mut rng = Rng::seed_from(seed);
    rng.shuffle(&mut pairs);
    let n = pairs.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let take = |slice: &[(usize, usize)]| {
        let mut out = Vec::with_capacity(slice.len() * 2);
        for &(f, h) in slice {
            out.push(f);
            out.push(h);
        }
        out
    };
    Split {
        train: take(&pairs[..n_train]),
        val: take(&pairs[n_train..n_train + n_val]),
        test: take(&pairs[n_train + n_val..]),
    }
}

/// Set-membership oracle: predicts hallucinated iff any response word is
/// absent from the knowledge. Exact on uncorrupted synthetic data.
pub fn token_overlap_prediction(example: &PairedExample) -> u8 {
    let knowledge: alloc::collections::BTreeSet<&str> =
        example.knowledge.split_whitespace().collect();
    let novel = example
        .response
        .split_whitespace()
        .any(|w| !knowledge.contains(w));
    u8::from(novel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_pairs: 50,
            vocab_words: 64,
            knowledge_len: 12,
            response_len: 8,
            corrupt_count: 3,
            seed: 7,
        }
    }

    #[test]
    fn labels_are_balanced_by_construction() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let ones: usize = ds.examples.iter().map(|e| e.label as usize).sum();
        assert_eq!(ds.examples.len(), 100);
        assert_eq!(ones * 2, ds.examples.len());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = generate_synthetic(&small_spec()).unwrap();
        let b = generate_synthetic(&small_spec()).unwrap();
        assert_eq!(a.examples, b.examples);
        let c = generate_synthetic(&SyntheticSpec {
            seed: 8,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a.examples, c.examples);
    }

    #[test]
    fn corrupt_zero_makes_members_identical() {
        let ds = generate_synthetic(&SyntheticSpec {
            corrupt_count: 0,
            ..small_spec()
        })
        .unwrap();
        for (f, h) in ds.pair_indices() {
            assert_eq!(ds.examples[f].response, ds.examples[h].response);
        }
        // oracle is at chance: every prediction is 0
        for ex in &ds.examples {
            assert_eq!(token_overlap_prediction(ex), 0);
        }
    }

    #[test]
    fn token_overlap_oracle_is_exact_on_corrupted_data() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        for ex in &ds.examples {
            assert_eq!(token_overlap_prediction(ex), ex.label);
        }
    }

    #[test]
    fn infeasible_sizes_are_rejected() {
        assert!(generate_synthetic(&SyntheticSpec {
            corrupt_count: 9,
            ..small_spec()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            response_len: 13,
            ..small_spec()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            vocab_words: 20,
            ..small_spec()
        })
        .is_err());
    }

    #[test]
    fn validation_rejects_orphan_and_duplicate_labels() {
        let tok = Tokenizer::from_words(vec!["a".to_string()]);
        let ex = |pair_id: &str, label: u8| PairedExample {
            pair_id: pair_id.to_string(),
            context: "a".to_string(),
            response: "a".to_string(),
            knowledge: "a".to_string(),
            label,
        };
        // orphan
        assert!(Dataset::from_parts(vec![ex("p1", 0)], tok.clone()).is_err());
        // duplicate label
        assert!(Dataset::from_parts(vec![ex("p1", 1), ex("p1", 1)], tok.clone()).is_err());
        // well-formed
        assert!(Dataset::from_parts(vec![ex("p1", 0), ex("p1", 1)], tok).is_ok());
    }

    #[test]
    fn encode_pads_to_exact_length_and_keeps_adjacent_seps() {
        let tok = Tokenizer::from_words(vec!["a".to_string(), "b".to_string()]);
        let ex = PairedExample {
            pair_id: "p".to_string(),
            context: "a".to_string(),
            response: String::new(),
            knowledge: "b".to_string(),
            label: 0,
        };
        let ids = encode(&ex, TaskTemplate::QaDialogueStyle, 10, &tok);
        assert_eq!(ids.len(), 10);
        // [CLS] a [SEP] [SEP] b [PAD]...
        assert_eq!(
            ids,
            vec![CLS_ID, 4, SEP_ID, SEP_ID, 5, PAD_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]
        );
    }

    #[test]
    fn summary_template_omits_knowledge() {
        let tok = Tokenizer::from_words(vec!["a".to_string(), "b".to_string()]);
        let ex = PairedExample {
            pair_id: "p".to_string(),
            context: "a".to_string(),
            response: "b".to_string(),
            knowledge: "a a a".to_string(),
            label: 0,
        };
        let ids = encode(&ex, TaskTemplate::SummaryStyle, 6, &tok);
        assert_eq!(ids, vec![CLS_ID, 4, SEP_ID, 5, PAD_ID, PAD_ID]);
    }

    #[test]
    fn tokenizer_round_trips_in_vocabulary_text() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        for ex in ds.examples.iter().take(10) {
            let ids = ds.tokenizer.encode_text(&ex.response);
            assert_eq!(ds.tokenizer.decode_tokens(&ids), ex.response);
        }
    }

    #[test]
    fn encode_is_injective_on_untruncated_examples() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let mut seen = alloc::collections::BTreeSet::new();
        let mut distinct = 0usize;
        for ex in &ds.examples {
            let ids = encode(ex, TaskTemplate::QaDialogueStyle, 32, &ds.tokenizer);
            if seen.insert(ids) {
                distinct += 1;
            }
        }
        // members of a pair differ; distinct pairs differ (knowledge differs
        // with overwhelming probability at this vocab size)
        assert_eq!(distinct, ds.examples.len());
    }

    #[test]
    fn split_never_separates_a_pair_and_is_deterministic() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let s1 = split_dataset(&ds, 3);
        let s2 = split_dataset(&ds, 3);
        assert_eq!(s1.train, s2.train);
        assert_eq!(s1.val, s2.val);
        assert_eq!(s1.test, s2.test);
        assert_eq!(s1.train.len(), 80);
        assert_eq!(s1.val.len(), 10);
        assert_eq!(s1.test.len(), 10);
        for part in [&s1.train, &s1.val, &s1.test] {
            for chunk in part.chunks(2) {
                assert_eq!(
                    ds.examples[chunk[0]].pair_id,
                    ds.examples[chunk[1]].pair_id
                );
            }
        }
    }

    #[test]
    fn hallucinated_members_differ_in_exactly_corrupt_count_words() {
        let spec = small_spec();
        let ds = generate_synthetic(&spec).unwrap();
        for (f, h) in ds.pair_indices() {
            let fw: Vec<&str> = ds.examples[f].response.split_whitespace().collect();
            let hw: Vec<&str> = ds.examples[h].response.split_whitespace().collect();
            assert_eq!(fw.len(), hw.len());
            let diffs = fw.iter().zip(&hw).filter(|(a, b)| **a != **b).count();
            assert_eq!(diffs, spec.corrupt_count);
        }
    }
}
