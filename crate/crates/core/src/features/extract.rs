//! Raw (unbinned) linguistic features of one prompt/response pair.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::charclass::{CharClass, CharClassTable};
use crate::io::IoError;
use crate::model::{Prompt, Response};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pos {
    Noun,
    ProperNoun,
    Verb,
    Adjective,
    Adverb,
    Particle,
    Auxiliary,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub pos: Pos,
}

/// Externally produced morphological analysis of a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphAnnotation {
    pub response_id: String,
    #[serde(default)]
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawFeatureVector {
    pub continuous: BTreeMap<String, f64>,
    pub boolean: BTreeMap<String, bool>,
}

/// Substring lexicon loaded from a one-term-per-line file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    terms: Vec<String>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Self {
        let terms = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Lexicon { terms }
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn default_exaggeration() -> Self {
        Self::parse(include_str!("../../lexicons/exaggeration.txt"))
    }

    pub fn default_negation() -> Self {
        Self::parse(include_str!("../../lexicons/negation.txt"))
    }

    pub fn matches(&self, text: &str) -> bool {
        self.terms.iter().any(|t| text.contains(t.as_str()))
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

const POLITE_ENDINGS: &[&str] = &[
    "です", "ます", "でした", "ました", "ません", "でしょう", "ましょう", "ですか", "ますか",
    "ですね", "ますね", "ですよ", "ますよ",
];
const CASUAL_ENDINGS: &[&str] = &[
    "だ", "だよ", "だね", "だな", "だぞ", "だぜ", "だろ", "だろう", "だった", "じゃん",
];
const SENTENCE_FINAL: &[char] = &['。', '.', '！', '？', '!', '?'];

fn is_w(c: char) -> bool {
    c == 'w' || c == 'ｗ'
}

/// Removes trailing whitespace and laughter markers (`w` runs, `草`).
fn strip_trailing_laughs(text: &str) -> &str {
    let mut s = text.trim_end();
    loop {
        let before = s.len();
        if let Some(rest) = s.strip_suffix('草') {
            s = rest.trim_end();
        }
        let trimmed = s.trim_end_matches(is_w);
        if trimmed.len() != s.len() {
            // Only strip when the run is not the tail of an ASCII word.
            let prev = trimmed.chars().last();
            if prev.is_none_or(|c| !c.is_ascii_alphabetic()) {
                s = trimmed.trim_end();
            }
        }
        if s.len() == before {
            return s;
        }
    }
}

fn contains_slang(text: &str) -> bool {
    if text.contains('草') {
        return true;
    }
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !is_w(chars[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && is_w(chars[i]) {
            i += 1;
        }
        let before_ok = start == 0 || !chars[start - 1].is_ascii_alphabetic();
        let after_ok = i == chars.len() || !chars[i].is_ascii_alphabetic();
        let at_end = chars[i..].iter().all(|c| c.is_whitespace());
        if before_ok && after_ok && (i - start >= 2 || (at_end && start > 0)) {
            return true;
        }
    }
    false
}

/// Number of sentences: 1 plus every run of sentence-final marks that is
/// followed by more text. Empty text has none.
pub fn sentence_count(text: &str) -> usize {
    let text = text.trim();
    if text.is_empty() {
        return 0;
    }
    let mut count = 1;
    let mut in_marks = false;
    for c in text.chars() {
        if SENTENCE_FINAL.contains(&c) {
            in_marks = true;
        } else {
            if in_marks && !c.is_whitespace() {
                count += 1;
            }
            if !c.is_whitespace() {
                in_marks = false;
            }
        }
    }
    count
}

fn clauses(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| SENTENCE_FINAL.contains(&c) || c == '\n')
        .map(|s| strip_trailing_laughs(s).trim_end_matches(|c: char| !c.is_alphanumeric()))
        .filter(|s| !s.is_empty())
}

fn multiset(chars: impl Iterator<Item = char>) -> HashMap<char, usize> {
    let mut m = HashMap::new();
    for c in chars {
        *m.entry(c).or_insert(0) += 1;
    }
    m
}

/// Size of the multiset intersection of `a` and `b`.
fn multiset_overlap(a: &HashMap<char, usize>, b: &HashMap<char, usize>) -> usize {
    a.iter()
        .map(|(c, n)| (*n).min(b.get(c).copied().unwrap_or(0)))
        .sum()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub classes: CharClassTable,
    pub exaggeration: Lexicon,
    pub negation: Lexicon,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor {
            classes: CharClassTable::default(),
            exaggeration: Lexicon::default_exaggeration(),
            negation: Lexicon::default_negation(),
        }
    }
}

impl FeatureExtractor {
    pub fn extract(
        &self,
        prompt: &Prompt,
        response: &Response,
        morph: Option<&MorphAnnotation>,
    ) -> RawFeatureVector {
        let mut v = RawFeatureVector::default();
        let text = response.text.as_str();
        let n_chars = text.chars().count();

        // basic
        let counts = self.classes.counts(text);
        v.continuous.insert("len-char".into(), n_chars as f64);
        for class in CharClass::ALL {
            v.continuous.insert(
                class.feature_name().into(),
                ratio(counts[class as usize], n_chars),
            );
        }
        v.continuous.insert(
            "punct-count".into(),
            counts[CharClass::Punctuation as usize] as f64,
        );
        v.continuous
            .insert("sentences".into(), sentence_count(text) as f64);

        // special symbols
        let flag = |v: &mut RawFeatureVector, name: &str, on: bool| {
            v.boolean.insert(name.to_string(), on);
        };
        flag(&mut v, "dialogue", text.contains(['「', '」']));
        flag(&mut v, "parentheses", text.contains(['(', ')', '（', '）']));
        flag(&mut v, "tilde", text.contains(['~', '～', '〜']));
        flag(
            &mut v,
            "number",
            counts[CharClass::Digit as usize] > 0,
        );
        flag(&mut v, "slang", contains_slang(text));

        // endings
        let core = strip_trailing_laughs(text);
        let ellipsis = core.ends_with('…')
            || core.ends_with('‥')
            || core.ends_with("...")
            || core.ends_with("・・・");
        let last = core.chars().last();
        flag(&mut v, "ending-ellipsis", ellipsis);
        flag(
            &mut v,
            "ending-period",
            !ellipsis && matches!(last, Some('。' | '.')),
        );
        flag(&mut v, "ending-question", matches!(last, Some('？' | '?')));
        flag(&mut v, "ending-exclamation", matches!(last, Some('！' | '!')));

        // style
        flag(
            &mut v,
            "polite-style",
            clauses(text).any(|c| POLITE_ENDINGS.iter().any(|e| c.ends_with(e))),
        );
        flag(
            &mut v,
            "casual-style",
            clauses(text).any(|c| CASUAL_ENDINGS.iter().any(|e| c.ends_with(e))),
        );
        flag(&mut v, "exaggeration-rule", self.exaggeration.matches(text));
        flag(&mut v, "negation", self.negation.matches(text));

        // relations
        let prompt_text = prompt.text.as_str();
        let resp_set = multiset(text.chars());
        let prompt_set = multiset(prompt_text.chars());
        v.continuous.insert(
            "prompt-overlap".into(),
            ratio(multiset_overlap(&resp_set, &prompt_set), n_chars),
        );
        let resp_kanji = multiset(text.chars().filter(|&c| self.classes.is_kanji(c)));
        let n_kanji: usize = resp_kanji.values().sum();
        v.continuous.insert(
            "prompt-kanji-share".into(),
            ratio(multiset_overlap(&resp_kanji, &prompt_set), n_kanji),
        );
        v.continuous.insert(
            "length-ratio".into(),
            ratio(n_chars, prompt_text.chars().count()),
        );

        if let Some(m) = morph {
            self.morph_features(&mut v, m, prompt_text);
        }
        v
    }

    fn morph_features(&self, v: &mut RawFeatureVector, m: &MorphAnnotation, prompt_text: &str) {
        let tokens = &m.tokens;
        let n = tokens.len();
        let count = |pred: &dyn Fn(Pos) -> bool| tokens.iter().filter(|t| pred(t.pos)).count();
        let is_noun = |p: Pos| matches!(p, Pos::Noun | Pos::ProperNoun);
        let pos_ratio = [
            ("pos-noun", ratio(count(&is_noun), n)),
            ("pos-verb", ratio(count(&|p| p == Pos::Verb), n)),
            ("pos-adj", ratio(count(&|p| p == Pos::Adjective), n)),
            ("pos-adverb", ratio(count(&|p| p == Pos::Adverb), n)),
            ("pos-particle", ratio(count(&|p| p == Pos::Particle), n)),
            ("pos-auxiliary", ratio(count(&|p| p == Pos::Auxiliary), n)),
        ];
        for (name, value) in pos_ratio {
            v.continuous.insert(name.into(), value);
        }
        let unique: HashSet<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
        v.continuous.insert("len-token".into(), n as f64);
        v.continuous
            .insert("vocab-unique".into(), unique.len() as f64);
        v.continuous
            .insert("vocab-diversity".into(), ratio(unique.len(), n));
        v.boolean.insert(
            "proper-noun".into(),
            tokens.iter().any(|t| t.pos == Pos::ProperNoun),
        );

        // Trailing punctuation-only tokens do not count as the ending word.
        let final_pos = tokens
            .iter()
            .rev()
            .find(|t| t.surface.chars().any(|c| c.is_alphanumeric()))
            .map(|t| t.pos);
        let endings = [
            ("ending-noun", final_pos.is_some_and(is_noun)),
            ("ending-verb", final_pos == Some(Pos::Verb)),
            ("ending-adjective", final_pos == Some(Pos::Adjective)),
            ("ending-particle", final_pos == Some(Pos::Particle)),
            ("ending-auxiliary", final_pos == Some(Pos::Auxiliary)),
        ];
        for (name, on) in endings {
            v.boolean.insert(name.into(), on);
        }

        let reuses = |pred: &dyn Fn(Pos) -> bool| {
            tokens
                .iter()
                .any(|t| pred(t.pos) && !t.surface.is_empty() && prompt_text.contains(&t.surface))
        };
        v.boolean.insert("prompt-noun".into(), reuses(&is_noun));
        v.boolean
            .insert("prompt-verb".into(), reuses(&|p| p == Pos::Verb));
        v.boolean.insert(
            "prompt-proper-noun".into(),
            reuses(&|p| p == Pos::ProperNoun),
        );
    }
}

/// Raw features with the default Japanese character table and lexicons.
pub fn extract_raw_features(
    prompt: &Prompt,
    response: &Response,
    morph: Option<&MorphAnnotation>,
) -> RawFeatureVector {
    FeatureExtractor::default().extract(prompt, response, morph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(prompt: &str, response: &str) -> (Prompt, Response) {
        (
            Prompt {
                prompt_id: "p".into(),
                text: prompt.into(),
            },
            Response {
                response_id: "r".into(),
                prompt_id: "p".into(),
                text: response.into(),
            },
        )
    }

    #[test]
    fn character_class_ratios() {
        let (p, r) = pair("お題", "あAア");
        let v = extract_raw_features(&p, &r, None);
        assert_eq!(v.continuous["hiragana"], 1.0 / 3.0);
        assert_eq!(v.continuous["katakana"], 1.0 / 3.0);
        assert_eq!(v.continuous["alphabet"], 1.0 / 3.0);
        assert_eq!(v.continuous["kanji"], 0.0);
        assert_eq!(v.continuous["len-char"], 3.0);
    }

    #[test]
    fn identical_prompt_and_response() {
        let (p, r) = pair("猫が空を飛ぶ日", "猫が空を飛ぶ日");
        let v = extract_raw_features(&p, &r, None);
        assert_eq!(v.continuous["prompt-overlap"], 1.0);
        assert_eq!(v.continuous["length-ratio"], 1.0);
        assert_eq!(v.continuous["prompt-kanji-share"], 1.0);
    }

    #[test]
    fn exclamation_with_trailing_laughter() {
        let (p, r) = pair("お題", "すごい！！www");
        let v = extract_raw_features(&p, &r, None);
        assert!(v.boolean["ending-exclamation"]);
        assert!(v.boolean["slang"]);
        assert!(!v.boolean["ending-period"]);
    }

    #[test]
    fn ellipsis_is_not_a_period() {
        let (p, r) = pair("お題", "まさかの...");
        let v = extract_raw_features(&p, &r, None);
        assert!(v.boolean["ending-ellipsis"]);
        assert!(!v.boolean["ending-period"]);
    }

    #[test]
    fn slang_rules() {
        assert!(contains_slang("草生える"));
        assert!(contains_slang("それなｗｗ"));
        assert!(contains_slang("やばいw"));
        assert!(!contains_slang("I know"));
        assert!(!contains_slang("wow"));
    }

    #[test]
    fn sentence_counting() {
        assert_eq!(sentence_count(""), 0);
        assert_eq!(sentence_count("ひとつ"), 1);
        assert_eq!(sentence_count("ひとつ。"), 1);
        assert_eq!(sentence_count("ひとつ。ふたつ！？みっつ"), 3);
    }

    #[test]
    fn style_flags() {
        let (p, r) = pair("お題", "それは無理です。");
        let v = extract_raw_features(&p, &r, None);
        assert!(v.boolean["polite-style"]);
        assert!(!v.boolean["casual-style"]);
        assert!(v.boolean["negation"]);
        let (p, r) = pair("お題", "世界一の猫だよ！");
        let v = extract_raw_features(&p, &r, None);
        assert!(v.boolean["casual-style"]);
        assert!(v.boolean["exaggeration-rule"]);
    }

    #[test]
    fn degenerate_prompt_gives_zero_ratio() {
        let p = Prompt {
            prompt_id: "p".into(),
            text: String::new(),
        };
        let r = Response {
            response_id: "r".into(),
            prompt_id: "p".into(),
            text: "あ".into(),
        };
        let v = extract_raw_features(&p, &r, None);
        assert_eq!(v.continuous["length-ratio"], 0.0);
        assert_eq!(v.continuous["prompt-kanji-share"], 0.0);
    }

    #[test]
    fn morph_features_from_tokens() {
        let (p, r) = pair("東京の猫", "東京で猫が走る");
        let tok = |s: &str, pos| Token {
            surface: s.into(),
            pos,
        };
        let m = MorphAnnotation {
            response_id: "r".into(),
            tokens: vec![
                tok("東京", Pos::ProperNoun),
                tok("で", Pos::Particle),
                tok("猫", Pos::Noun),
                tok("が", Pos::Particle),
                tok("走る", Pos::Verb),
            ],
        };
        let v = extract_raw_features(&p, &r, Some(&m));
        assert_eq!(v.continuous["pos-noun"], 0.4);
        assert_eq!(v.continuous["pos-particle"], 0.4);
        assert_eq!(v.continuous["len-token"], 5.0);
        assert_eq!(v.continuous["vocab-diversity"], 1.0);
        assert!(v.boolean["proper-noun"]);
        assert!(v.boolean["ending-verb"]);
        assert!(v.boolean["prompt-noun"]);
        assert!(v.boolean["prompt-proper-noun"]);
        assert!(!v.boolean["prompt-verb"]);

        let without = extract_raw_features(&p, &r, None);
        assert!(!without.continuous.contains_key("pos-noun"));
        assert!(!without.boolean.contains_key("ending-verb"));
    }

    proptest! {
        #[test]
        fn class_ratios_are_a_partition(text in "\\PC{1,40}") {
            let (p, r) = pair("お題", &text);
            let v = extract_raw_features(&p, &r, None);
            let mut sum = 0.0;
            for c in CharClass::ALL {
                let x = v.continuous[c.feature_name()];
                prop_assert!((0.0..=1.0).contains(&x));
                sum += x;
            }
            prop_assert!(sum <= 1.0 + 1e-12);
            prop_assert_eq!(v.clone(), extract_raw_features(&p, &r, None));
        }
    }
}
