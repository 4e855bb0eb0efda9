//! Randomized equivalence between the production tag matcher / filter and an
//! independently written brute-force reference, plus threshold monotonicity.
//!
//! The reference enumerates every tag word against every text token with its
//! own tokenizer and fold code; it shares only the normative definitions
//! (the stop-word list and the fold rule) with the implementation.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tagsynth::tags::{
    tag_presence_ratio, MatchMode, TagMatchConfig, VisualTags, STOP_WORDS,
};

// ---------------------------------------------------------------------------
// Brute-force reference matcher
// ---------------------------------------------------------------------------

fn naive_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            for lower in c.to_lowercase() {
                current.push(lower);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn naive_fold_forms(token: &str) -> Vec<String> {
    let mut forms = vec![token.to_string()];
    let n = token.len();
    if n >= 3 && token.ends_with('s') && !token.ends_with("ss") {
        forms.push(token[..n - 1].to_string());
    }
    if n >= 4 && token.ends_with("es") {
        forms.push(token[..n - 2].to_string());
    }
    forms
}

fn naive_words_match(a: &str, b: &str, folding: bool) -> bool {
    if !folding {
        return a == b;
    }
    for fa in naive_fold_forms(a) {
        for fb in naive_fold_forms(b) {
            if fa == fb {
                return true;
            }
        }
    }
    false
}

fn naive_tag_present(tag: &str, text_tokens: &[String], mode: MatchMode, folding: bool) -> bool {
    let tag_tokens = naive_tokens(tag);
    let required: Vec<String> = match mode {
        MatchMode::ExactToken => tag_tokens,
        MatchMode::AllContentWords => {
            let content: Vec<String> = tag_tokens
                .iter()
                .filter(|t| !STOP_WORDS.contains(&t.as_str()))
                .cloned()
                .collect();
            if content.is_empty() {
                tag_tokens
            } else {
                content
            }
        }
    };
    if required.is_empty() {
        return false;
    }
    required.iter().all(|word| {
        text_tokens
            .iter()
            .any(|token| naive_words_match(word, token, folding))
    })
}

fn naive_ratio(tags: &VisualTags, text: &str, cfg: TagMatchConfig) -> f64 {
    let text_tokens = naive_tokens(text);
    let total = tags.total_len();
    let present = tags
        .iter_all()
        .filter(|tag| naive_tag_present(tag, &text_tokens, cfg.mode, cfg.plural_folding))
        .count();
    present as f64 / total as f64
}

// ---------------------------------------------------------------------------
// Randomized case generation
// ---------------------------------------------------------------------------

const VOCAB: &[&str] = &[
    "candle", "sofa", "rug", "table", "lamp", "window", "curtain", "vase", "plant", "shelf",
    "mirror", "cushion", "frame", "bowl", "glass", "boxes", "chair", "carpet", "light", "wall",
    "white", "red", "wooden", "patterned", "sectional", "round", "tall", "small",
];

fn random_word(rng: &mut StdRng) -> String {
    let mut word = VOCAB[rng.gen_range(0..VOCAB.len())].to_string();
    if rng.gen_bool(0.25) {
        word.push('s');
    }
    word
}

fn random_tag(rng: &mut StdRng) -> String {
    match rng.gen_range(0..4) {
        0 => random_word(rng),
        1 => format!("{} {}", random_word(rng), random_word(rng)),
        2 => format!("in front of {}", random_word(rng)),
        _ => format!("{} on the {}", random_word(rng), random_word(rng)),
    }
}

fn random_case(rng: &mut StdRng) -> (VisualTags, String) {
    let objects: Vec<String> = (0..rng.gen_range(1..5)).map(|_| random_tag(rng)).collect();
    let attributes: Vec<String> = (0..rng.gen_range(0..3)).map(|_| random_word(rng)).collect();
    let relations: Vec<String> = (0..rng.gen_range(0..3)).map(|_| random_tag(rng)).collect();
    let tags = VisualTags::new(objects, attributes, relations);

    let words: Vec<String> = (0..rng.gen_range(3..25)).map(|_| random_word(rng)).collect();
    let mut text = words.join(" ");
    if rng.gen_bool(0.3) {
        text.push_str(", with some punctuation. And a sentence!");
    }
    (tags, text)
}

fn configs() -> [TagMatchConfig; 4] {
    [
        TagMatchConfig {
            mode: MatchMode::AllContentWords,
            plural_folding: true,
        },
        TagMatchConfig {
            mode: MatchMode::AllContentWords,
            plural_folding: false,
        },
        TagMatchConfig {
            mode: MatchMode::ExactToken,
            plural_folding: true,
        },
        TagMatchConfig {
            mode: MatchMode::ExactToken,
            plural_folding: false,
        },
    ]
}

#[test]
fn ratio_matches_brute_force_on_random_cases() {
    let mut rng = StdRng::seed_from_u64(0xC0FFEE);
    let mut checked = 0;
    for _ in 0..200 {
        let (tags, text) = random_case(&mut rng);
        if tags.is_empty() {
            continue;
        }
        for cfg in configs() {
            let fast = tag_presence_ratio(&tags, &text, cfg).unwrap();
            let slow = naive_ratio(&tags, &text, cfg);
            assert_eq!(fast, slow, "tags={tags:?} text={text:?} cfg={cfg:?}");
        }
        checked += 1;
    }
    assert!(checked >= 190);
}

#[test]
fn filter_decisions_match_brute_force_across_threshold_grid() {
    use tagsynth::filter::{filter_text_sample, FilterConfig, FilterTarget};

    let mut rng = StdRng::seed_from_u64(0xBEEF);
    let grid = [0.0, 0.1, 0.2, 0.3, 0.5, 1.0];
    for _ in 0..500 {
        let (tags, text) = random_case(&mut rng);
        if tags.is_empty() {
            continue;
        }
        let cfg_match = TagMatchConfig::default();
        let reference = naive_ratio(&tags, &text, cfg_match);
        for p_f in grid {
            let cfg = FilterConfig {
                p_f,
                match_config: cfg_match,
                apply_to: [FilterTarget::Text].into_iter().collect(),
            };
            let decision = filter_text_sample(&tags, &text, &cfg);
            assert_eq!(
                decision.is_pass(),
                reference >= p_f,
                "p_f={p_f} reference={reference} tags={tags:?} text={text:?}"
            );
        }
    }
}

#[test]
fn passed_sets_nest_as_threshold_rises() {
    use tagsynth::filter::{filter_text_sample, FilterConfig, FilterTarget};

    let mut rng = StdRng::seed_from_u64(0xF00D);
    let cases: Vec<(VisualTags, String)> = (0..120)
        .map(|_| random_case(&mut rng))
        .filter(|(tags, _)| !tags.is_empty())
        .collect();

    let mut previous: Option<Vec<usize>> = None;
    for p_f in [0.0, 0.1, 0.2, 0.3, 0.5, 1.0] {
        let cfg = FilterConfig {
            p_f,
            match_config: TagMatchConfig::default(),
            apply_to: [FilterTarget::Text].into_iter().collect(),
        };
        let passed: Vec<usize> = cases
            .iter()
            .enumerate()
            .filter(|(_, (tags, text))| filter_text_sample(tags, text, &cfg).is_pass())
            .map(|(i, _)| i)
            .collect();
        if let Some(prev) = &previous {
            assert!(passed.iter().all(|i| prev.contains(i)), "p_f={p_f}");
        }
        previous = Some(passed);
    }
}
