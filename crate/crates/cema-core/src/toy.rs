//! Toy benchmark substrate: a seeded synthetic sentiment corpus and the
//! built-in lexicon/dictionary victims it pairs with. Desk-scale runs use
//! these to make trend claims checkable without external models.

use crate::dataset::DatasetRecord;
use crate::error::Result;
use crate::victim::{
    DictionaryTranslatorTask, LexiconClassifierTask, TaskKind, TaskSpec, ToyTask, ToyVictim,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const POSITIVE_WORDS: [&str; 10] = [
    "good",
    "great",
    "lovely",
    "wonderful",
    "charming",
    "delightful",
    "superb",
    "pleasant",
    "cheerful",
    "shining",
];

pub const NEGATIVE_WORDS: [&str; 10] = [
    "bad",
    "awful",
    "terrible",
    "horrible",
    "dreadful",
    "ugly",
    "boring",
    "painful",
    "gloomy",
    "rotten",
];

pub const SCREEN_WORDS: [&str; 6] = ["movie", "plot", "acting", "scenes", "story", "film"];
pub const DAILY_WORDS: [&str; 6] = ["morning", "weather", "walk", "coffee", "garden", "evening"];

const NEUTRAL_FILLERS: [&str; 6] = ["the", "was", "with", "quite", "rather", "very"];

fn vec_of(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

fn full_vocabulary() -> Vec<String> {
    let mut v = Vec::new();
    v.extend(vec_of(&POSITIVE_WORDS));
    v.extend(vec_of(&NEGATIVE_WORDS));
    v.extend(vec_of(&SCREEN_WORDS));
    v.extend(vec_of(&DAILY_WORDS));
    v.extend(vec_of(&NEUTRAL_FILLERS));
    v
}

/// Word-for-word pseudo-translation dictionaries over the toy vocabulary;
/// targets are distinct from every source token so out-of-vocabulary
/// passthrough is visible in BLEU.
fn pseudo_dictionary(suffix: &str) -> BTreeMap<String, String> {
    full_vocabulary()
        .into_iter()
        .map(|w| {
            let mapped = format!("{w}{suffix}");
            (w, mapped)
        })
        .collect()
}

fn sentiment_lexicon() -> Vec<(String, Vec<String>)> {
    vec![
        ("positive".into(), vec_of(&POSITIVE_WORDS)),
        ("negative".into(), vec_of(&NEGATIVE_WORDS)),
    ]
}

/// The standard two-task toy victim: sentiment classification plus a
/// word-substitution translation.
pub fn toy_two_task_victim() -> Result<ToyVictim> {
    crate::victim::two_task_toy_victim(sentiment_lexicon(), pseudo_dictionary("é"))
}

/// Six-task toy victim: four classification tasks and two translations.
pub fn toy_six_task_victim() -> Result<ToyVictim> {
    let emotion = vec![
        (
            "joy".to_string(),
            vec_of(&["lovely", "wonderful", "delightful", "cheerful", "charming"]),
        ),
        (
            "anger".to_string(),
            vec_of(&["terrible", "horrible", "dreadful", "rotten", "awful"]),
        ),
    ];
    let topic = vec![
        ("screen".to_string(), vec_of(&SCREEN_WORDS)),
        ("daily".to_string(), vec_of(&DAILY_WORDS)),
    ];
    let intensity = vec![
        (
            "strong".to_string(),
            vec_of(&["wonderful", "horrible", "superb", "dreadful", "terrible"]),
        ),
        (
            "mild".to_string(),
            vec_of(&["pleasant", "boring", "good", "bad", "gloomy"]),
        ),
    ];
    let cls = |id: &str, lexicon: Vec<(String, Vec<String>)>| -> Result<(TaskSpec, ToyTask)> {
        let task = LexiconClassifierTask::new(lexicon)?;
        Ok((
            TaskSpec {
                task_id: id.to_string(),
                kind: TaskKind::Classification,
                labels: task.labels(),
                notes: String::new(),
            },
            ToyTask::Lexicon(task),
        ))
    };
    let trans = |id: &str, suffix: &str| -> (TaskSpec, ToyTask) {
        (
            TaskSpec {
                task_id: id.to_string(),
                kind: TaskKind::Translation,
                labels: vec![],
                notes: String::new(),
            },
            ToyTask::Dictionary(DictionaryTranslatorTask::new(pseudo_dictionary(suffix))),
        )
    };
    Ok(ToyVictim::new(vec![
        cls("sentiment-cls", sentiment_lexicon())?,
        cls("emotion-cls", emotion)?,
        cls("topic-cls", topic)?,
        cls("intensity-cls", intensity)?,
        trans("fr-translation", "é"),
        trans("de-translation", "en"),
    ]))
}

/// Seeded synthetic corpus: each text mixes majority- and minority-polarity
/// sentiment words (margins of one or two hits) with topic and neutral
/// fillers, so a handful of character edits can move the lexicon argmax.
pub fn generate_toy_corpus(n: usize, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let majority_positive = rng.gen_bool(0.5);
            let (maj_count, min_count) = *[(2usize, 1usize), (3, 1), (3, 2)]
                .choose(&mut rng)
                .unwrap();
            let (maj_pool, min_pool) = if majority_positive {
                (&POSITIVE_WORDS, &NEGATIVE_WORDS)
            } else {
                (&NEGATIVE_WORDS, &POSITIVE_WORDS)
            };
            let topic_pool = if rng.gen_bool(0.5) {
                &SCREEN_WORDS
            } else {
                &DAILY_WORDS
            };
            let mut words: Vec<String> = Vec::new();
            words.extend(
                maj_pool
                    .choose_multiple(&mut rng, maj_count)
                    .map(|w| w.to_string()),
            );
            words.extend(
                min_pool
                    .choose_multiple(&mut rng, min_count)
                    .map(|w| w.to_string()),
            );
            words.extend(
                topic_pool
                    .choose_multiple(&mut rng, 2)
                    .map(|w| w.to_string()),
            );
            let filler_count = 11usize.saturating_sub(words.len());
            for _ in 0..filler_count {
                words.push(NEUTRAL_FILLERS.choose(&mut rng).unwrap().to_string());
            }
            words.shuffle(&mut rng);
            DatasetRecord {
                id: format!("t{i:04}"),
                text: words.join(" "),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize_and_tokenize;
    use crate::victim::Victim;

    #[test]
    fn six_task_victim_declares_four_cls_two_translation() {
        let v = toy_six_task_victim().unwrap();
        let tasks = v.declare_tasks().unwrap();
        assert_eq!(tasks.len(), 6);
        let cls = tasks
            .iter()
            .filter(|t| t.kind == TaskKind::Classification)
            .count();
        let trans = tasks
            .iter()
            .filter(|t| t.kind == TaskKind::Translation)
            .count();
        assert_eq!((cls, trans), (4, 2));
    }

    #[test]
    fn corpus_is_seeded_and_reasonable() {
        let a = generate_toy_corpus(50, 7);
        let b = generate_toy_corpus(50, 7);
        assert_eq!(a.len(), 50);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.text, y.text);
        }
        let c = generate_toy_corpus(50, 8);
        assert!(a.iter().zip(&c).any(|(x, y)| x.text != y.text));
        for r in &a {
            let t = normalize_and_tokenize(&r.text).unwrap();
            assert!(t.token_count() >= 8);
        }
    }

    #[test]
    fn victim_labels_follow_majority_polarity() {
        let v = toy_two_task_victim().unwrap();
        let t = normalize_and_tokenize("good great the bad movie was").unwrap();
        let resp = v.respond(&t).unwrap();
        assert_eq!(resp.output_for("sentiment-cls"), Some("positive"));
        // translation maps every known word
        let trans = resp.output_for("word-sub-translation").unwrap();
        assert!(trans.contains("goodé"));
        assert!(trans.contains("movieé"));
    }
}
