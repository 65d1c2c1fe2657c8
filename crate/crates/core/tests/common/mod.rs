//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rahp::data::{LabeledQAInstance, RawAnswerRecord, RawReviewRecord, ReviewSet, ReviewSlot};
use rahp::nli::{NliInstance, NliLabel};
use rahp::text::{tokenize, Vocabulary};

pub const NOUNS: &[&str] = &["blender", "kettle", "lamp", "charger", "case", "mouse", "speaker", "camera"];
pub const ASPECTS: &[&str] = &["battery", "motor", "lid", "cable", "button", "screen", "handle", "strap"];
pub const POSITIVE: &[&str] = &["great", "excellent", "sturdy", "reliable", "perfect"];
pub const NEGATIVE: &[&str] = &["terrible", "flimsy", "broken", "awful", "useless"];
pub const FILLER: &[&str] = &["really", "quite", "very", "so", "truly", "honestly"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

/// Random lowercase word of 2..=7 letters.
pub fn random_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=7);
    (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

pub fn random_text(rng: &mut ChaCha8Rng, words: &[String], min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| words.choose(rng).unwrap().as_str()).collect::<Vec<_>>().join(" ")
}

/// Instances whose label is whether the answer's polarity word agrees with
/// the polarity of the reviews. Question and answer alone carry no
/// information about the label.
pub fn polarity_dataset(n: usize, k: usize, seed: u64) -> Vec<LabeledQAInstance> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let noun = pick(&mut rng, NOUNS);
            let aspect = pick(&mut rng, ASPECTS);
            let answer_pos = rng.gen_bool(0.5);
            let review_pos = rng.gen_bool(0.5);
            let polar = |rng: &mut ChaCha8Rng, pos: bool| pick(rng, if pos { POSITIVE } else { NEGATIVE });
            let question = format!("is the {aspect} of this {noun} good ?");
            let answer = format!("the {aspect} is {} {}", pick(&mut rng, FILLER), polar(&mut rng, answer_pos));
            let filled = rng.gen_range(1..=k);
            let mut slots: Vec<Option<ReviewSlot>> = (0..filled)
                .map(|j| {
                    Some(ReviewSlot {
                        text: format!("{} {aspect} {}", polar(&mut rng, review_pos), pick(&mut rng, FILLER)),
                        score: 1.0 - j as f64 * 0.1,
                    })
                })
                .collect();
            slots.resize(k, None);
            let helpful = answer_pos == review_pos;
            LabeledQAInstance {
                id: format!("s{i:05}"),
                product_id: format!("p{}", i % 50),
                question,
                answer,
                votes: if helpful { [3, 3] } else { [0, 3] },
                helpful,
                reviews: ReviewSet(slots),
            }
        })
        .collect()
}

/// Random instances with random labels over a small word list.
pub fn random_instances(n: usize, k: usize, seed: u64) -> Vec<LabeledQAInstance> {
    let mut rng = rng(seed);
    let words: Vec<String> = (0..40).map(|_| random_word(&mut rng)).collect();
    (0..n)
        .map(|i| {
            let filled = rng.gen_range(0..=k);
            let mut slots: Vec<Option<ReviewSlot>> = (0..filled)
                .map(|j| {
                    Some(ReviewSlot {
                        text: random_text(&mut rng, &words, 1, 6),
                        score: -(j as f64),
                    })
                })
                .collect();
            slots.resize(k, None);
            let helpful = rng.gen_bool(0.5);
            LabeledQAInstance {
                id: format!("r{i:04}"),
                product_id: "p".into(),
                question: random_text(&mut rng, &words, 1, 7),
                answer: random_text(&mut rng, &words, 1, 7),
                votes: if helpful { [2, 2] } else { [0, 1] },
                helpful,
                reviews: ReviewSet(slots),
            }
        })
        .collect()
}

pub fn vocab_of(instances: &[LabeledQAInstance]) -> Vocabulary {
    let mut v = Vocabulary::new();
    for i in instances {
        let texts = [i.question.as_str(), i.answer.as_str()]
            .into_iter()
            .chain(i.reviews.filled().map(|s| s.text.as_str()));
        for t in texts.flat_map(tokenize) {
            v.add(&t);
        }
    }
    v.freeze();
    v
}

/// 60 inference pairs, 20 per class: entailed hypotheses are contiguous
/// pieces of the premise, contradicting ones use a disjoint vocabulary and
/// neutral ones mix premise words with new words.
pub fn nli_corpus(seed: u64) -> Vec<NliInstance> {
    let mut rng = rng(seed);
    let premise_words: Vec<String> = (0..30).map(|i| format!("{}{i}", random_word(&mut rng))).collect();
    let other_words: Vec<String> = (0..30).map(|i| format!("{}x{i}", random_word(&mut rng))).collect();
    let mut out = Vec::new();
    for i in 0..60 {
        let premise_toks: Vec<&str> = (0..6).map(|_| premise_words.choose(&mut rng).unwrap().as_str()).collect();
        let premise = premise_toks.join(" ");
        let (label, hypothesis) = match i % 3 {
            0 => {
                let start = rng.gen_range(0..3);
                let len = rng.gen_range(2..=3);
                (NliLabel::Entailment, premise_toks[start..start + len].join(" "))
            }
            1 => {
                let mut h: Vec<&str> = vec![premise_toks[rng.gen_range(0..6)]];
                h.push(other_words.choose(&mut rng).unwrap());
                h.push(other_words.choose(&mut rng).unwrap());
                h.shuffle(&mut rng);
                (NliLabel::Neutral, h.join(" "))
            }
            _ => (NliLabel::Contradiction, random_text(&mut rng, &other_words, 2, 3)),
        };
        out.push(NliInstance {
            premise,
            hypothesis,
            label,
        });
    }
    out
}

/// Raw answer and review records for a small end-to-end pipeline run.
pub fn raw_corpus(n_answers: usize, seed: u64) -> (Vec<RawAnswerRecord>, Vec<RawReviewRecord>) {
    let mut rng = rng(seed);
    let mut answers = Vec::new();
    let mut reviews = Vec::new();
    for p in 0..8 {
        let pid = format!("prod{p}");
        for r in 0..4 {
            let pos = rng.gen_bool(0.5);
            let w = |rng: &mut ChaCha8Rng| pick(rng, if pos { POSITIVE } else { NEGATIVE });
            reviews.push(RawReviewRecord {
                product_id: pid.clone(),
                review_text: format!(
                    "The {} is {}. I think the {} feels {}! Dr. Who approves.",
                    pick(&mut rng, ASPECTS),
                    w(&mut rng),
                    pick(&mut rng, ASPECTS),
                    w(&mut rng)
                ),
                review_id: Some(format!("{pid}-r{r}")),
            });
        }
    }
    for i in 0..n_answers {
        let y = rng.gen_range(0..=5);
        let x = rng.gen_range(0..=y);
        let polarity = if rng.gen_bool(0.5) { POSITIVE } else { NEGATIVE };
        answers.push(RawAnswerRecord {
            product_id: format!("prod{}", i % 9),
            question: format!("how is the {} ?", pick(&mut rng, ASPECTS)),
            answer: format!("it is {}", pick(&mut rng, polarity)),
            vote_x: x,
            vote_y: y,
        });
    }
    (answers, reviews)
}
