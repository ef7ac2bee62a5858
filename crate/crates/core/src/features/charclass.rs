use std::ops::RangeInclusive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CharClass {
    Hiragana,
    Katakana,
    Kanji,
    Alphabet,
    Digit,
    Punctuation,
    Space,
    Symbol,
}

impl CharClass {
    pub const ALL: [CharClass; 8] = [
        CharClass::Hiragana,
        CharClass::Katakana,
        CharClass::Kanji,
        CharClass::Alphabet,
        CharClass::Digit,
        CharClass::Punctuation,
        CharClass::Space,
        CharClass::Symbol,
    ];

    /// Feature-family name of this class's ratio.
    pub fn feature_name(self) -> &'static str {
        match self {
            CharClass::Hiragana => "hiragana",
            CharClass::Katakana => "katakana",
            CharClass::Kanji => "kanji",
            CharClass::Alphabet => "alphabet",
            CharClass::Digit => "digit",
            CharClass::Punctuation => "punct",
            CharClass::Space => "space",
            CharClass::Symbol => "symbol",
        }
    }
}

/// Unicode-range table used to class characters. Classes are tested in
/// field order; anything unmatched is a symbol.
#[derive(Debug, Clone)]
pub struct CharClassTable {
    pub hiragana: Vec<RangeInclusive<char>>,
    pub katakana: Vec<RangeInclusive<char>>,
    pub kanji: Vec<RangeInclusive<char>>,
    pub alphabet: Vec<RangeInclusive<char>>,
    pub digit: Vec<RangeInclusive<char>>,
    pub punctuation: Vec<char>,
}

impl Default for CharClassTable {
    /// Japanese defaults.
    fn default() -> Self {
        CharClassTable {
            hiragana: vec!['\u{3040}'..='\u{309F}'],
            katakana: vec!['\u{30A0}'..='\u{30FF}'],
            kanji: vec![
                '\u{4E00}'..='\u{9FFF}',
                '\u{3400}'..='\u{4DBF}',
                '\u{F900}'..='\u{FAFF}',
                '\u{20000}'..='\u{2A6DF}',
            ],
            alphabet: vec!['a'..='z', 'A'..='Z'],
            digit: vec!['0'..='9', '\u{FF10}'..='\u{FF19}'],
            punctuation: vec!['、', '。', ',', '.'],
        }
    }
}

impl CharClassTable {
    pub fn classify(&self, c: char) -> CharClass {
        let hit = |ranges: &[RangeInclusive<char>]| ranges.iter().any(|r| r.contains(&c));
        if hit(&self.hiragana) {
            CharClass::Hiragana
        } else if hit(&self.katakana) {
            CharClass::Katakana
        } else if hit(&self.kanji) {
            CharClass::Kanji
        } else if hit(&self.alphabet) {
            CharClass::Alphabet
        } else if hit(&self.digit) {
            CharClass::Digit
        } else if self.punctuation.contains(&c) {
            CharClass::Punctuation
        } else if c.is_whitespace() {
            CharClass::Space
        } else {
            CharClass::Symbol
        }
    }

    pub fn is_kanji(&self, c: char) -> bool {
        self.classify(c) == CharClass::Kanji
    }

    /// Per-class character counts, indexed like [`CharClass::ALL`].
    pub fn counts(&self, text: &str) -> [usize; 8] {
        let mut out = [0usize; 8];
        for c in text.chars() {
            out[self.classify(c) as usize] += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_japanese_scripts() {
        let t = CharClassTable::default();
        assert_eq!(t.classify('あ'), CharClass::Hiragana);
        assert_eq!(t.classify('ア'), CharClass::Katakana);
        assert_eq!(t.classify('ー'), CharClass::Katakana);
        assert_eq!(t.classify('草'), CharClass::Kanji);
        assert_eq!(t.classify('A'), CharClass::Alphabet);
        assert_eq!(t.classify('７'), CharClass::Digit);
        assert_eq!(t.classify('。'), CharClass::Punctuation);
        assert_eq!(t.classify('\u{3000}'), CharClass::Space);
        assert_eq!(t.classify('！'), CharClass::Symbol);
        assert_eq!(t.classify('「'), CharClass::Symbol);
    }
}
