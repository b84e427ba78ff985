//! Porter stemming.
//!
//! Classic five-step suffix stripper used by METEOR's second matching
//! stage. The implementation follows the original published rule tables
//! (step 2 keeps `abli -> able`, no `logi` rule). Words of length one or
//! two are returned unchanged.

/// Stems a single lowercase token. Tokens containing non-ASCII-alphabetic
/// characters (digits, codes like `4c`) are returned unchanged: suffix
/// rules are only meaningful for plain words.
pub fn porter_stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut s = Stemmer {
        b: word.as_bytes().to_vec(),
        j: 0,
    };
    s.step1ab();
    s.step1c();
    s.step2();
    s.step3();
    s.step4();
    s.step5();
    String::from_utf8(s.b).expect("stemmer operates on ascii")
}

/// Working buffer. `b` always holds the current word; `j` is the stem
/// length left after the most recent successful suffix match.
struct Stemmer {
    b: Vec<u8>,
    j: usize,
}

impl Stemmer {
    fn len(&self) -> usize {
        self.b.len()
    }

    /// True when `b[i]` acts as a consonant. `y` is a consonant exactly
    /// when it starts the word or follows a vowel.
    fn cons(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.cons(i - 1),
            _ => true,
        }
    }

    /// The measure m of `b[..upto]`: the number of vowel-consonant
    /// alternations in the form [C](VC)^m[V].
    fn measure(&self, upto: usize) -> usize {
        let mut n = 0;
        let mut i = 0;
        while i < upto && self.cons(i) {
            i += 1;
        }
        loop {
            while i < upto && !self.cons(i) {
                i += 1;
            }
            if i == upto {
                return n;
            }
            n += 1;
            while i < upto && self.cons(i) {
                i += 1;
            }
            if i == upto {
                return n;
            }
        }
    }

    fn vowel_in_stem(&self, upto: usize) -> bool {
        (0..upto).any(|i| !self.cons(i))
    }

    /// True when the word ends in a doubled consonant.
    fn double_cons_at_end(&self) -> bool {
        let k = self.len();
        k >= 2 && self.b[k - 1] == self.b[k - 2] && self.cons(k - 1)
    }

    /// consonant-vowel-consonant ending at index `i`, where the final
    /// consonant is not w, x or y.
    fn cvc(&self, i: usize) -> bool {
        if i < 2 || !self.cons(i) || self.cons(i - 1) || !self.cons(i - 2) {
            return false;
        }
        !matches!(self.b[i], b'w' | b'x' | b'y')
    }

    /// If the word ends with `suffix`, records the stem length in `j`.
    fn ends(&mut self, suffix: &str) -> bool {
        let s = suffix.as_bytes();
        if s.len() > self.len() || !self.b.ends_with(s) {
            return false;
        }
        self.j = self.len() - s.len();
        true
    }

    /// Replaces everything past the stem with `text`.
    fn set_to(&mut self, text: &str) {
        self.b.truncate(self.j);
        self.b.extend_from_slice(text.as_bytes());
    }

    /// step 2/3 helper: rewrite only when the stem has positive measure.
    fn replace_if_m(&mut self, text: &str) {
        if self.measure(self.j) > 0 {
            self.set_to(text);
        }
    }

    /// Plurals and -ed / -ing.
    fn step1ab(&mut self) {
        if self.b.last() == Some(&b's') {
            if self.ends("sses") {
                self.set_to("ss");
            } else if self.ends("ies") {
                self.set_to("i");
            } else if self.len() >= 2 && self.b[self.len() - 2] != b's' {
                self.b.pop();
            }
        }
        if self.ends("eed") {
            if self.measure(self.j) > 0 {
                self.b.pop();
            }
        } else if (self.ends("ed") || self.ends("ing")) && self.vowel_in_stem(self.j) {
            self.b.truncate(self.j);
            if self.ends("at") {
                self.set_to("ate");
            } else if self.ends("bl") {
                self.set_to("ble");
            } else if self.ends("iz") {
                self.set_to("ize");
            } else if self.double_cons_at_end() {
                if !matches!(self.b[self.len() - 1], b'l' | b's' | b'z') {
                    self.b.pop();
                }
            } else if self.measure(self.len()) == 1 && self.cvc(self.len() - 1) {
                self.b.push(b'e');
            }
        }
    }

    /// Terminal y -> i when the stem contains a vowel.
    fn step1c(&mut self) {
        if self.ends("y") && self.vowel_in_stem(self.j) {
            let k = self.len();
            self.b[k - 1] = b'i';
        }
    }

    /// Double-suffix reductions, keyed on the penultimate letter.
    fn step2(&mut self) {
        if self.len() < 2 {
            return;
        }
        let rules: &[(&str, &str)] = match self.b[self.len() - 2] {
            b'a' => &[("ational", "ate"), ("tional", "tion")],
            b'c' => &[("enci", "ence"), ("anci", "ance")],
            b'e' => &[("izer", "ize")],
            b'l' => &[
                ("abli", "able"),
                ("alli", "al"),
                ("entli", "ent"),
                ("eli", "e"),
                ("ousli", "ous"),
            ],
            b'o' => &[("ization", "ize"), ("ation", "ate"), ("ator", "ate")],
            b's' => &[
                ("alism", "al"),
                ("iveness", "ive"),
                ("fulness", "ful"),
                ("ousness", "ous"),
            ],
            b't' => &[("aliti", "al"), ("iviti", "ive"), ("biliti", "ble")],
            _ => return,
        };
        for &(suffix, replacement) in rules {
            if self.ends(suffix) {
                self.replace_if_m(replacement);
                return;
            }
        }
    }

    /// -icate, -ative and friends, keyed on the final letter.
    fn step3(&mut self) {
        let rules: &[(&str, &str)] = match self.b[self.len() - 1] {
            b'e' => &[("icate", "ic"), ("ative", ""), ("alize", "al")],
            b'i' => &[("iciti", "ic")],
            b'l' => &[("ical", "ic"), ("ful", "")],
            b's' => &[("ness", "")],
            _ => return,
        };
        for &(suffix, replacement) in rules {
            if self.ends(suffix) {
                self.replace_if_m(replacement);
                return;
            }
        }
    }

    /// Drops remaining suffixes when the stem's measure exceeds one.
    fn step4(&mut self) {
        if self.len() < 2 {
            return;
        }
        let matched = match self.b[self.len() - 2] {
            b'a' => self.ends("al"),
            b'c' => self.ends("ance") || self.ends("ence"),
            b'e' => self.ends("er"),
            b'i' => self.ends("ic"),
            b'l' => self.ends("able") || self.ends("ible"),
            b'n' => {
                self.ends("ant") || self.ends("ement") || self.ends("ment") || self.ends("ent")
            }
            b'o' => {
                (self.ends("ion")
                    && self.j >= 1
                    && matches!(self.b[self.j - 1], b's' | b't'))
                    || self.ends("ou")
            }
            b's' => self.ends("ism"),
            b't' => self.ends("ate") || self.ends("iti"),
            b'u' => self.ends("ous"),
            b'v' => self.ends("ive"),
            b'z' => self.ends("ize"),
            _ => false,
        };
        if matched && self.measure(self.j) > 1 {
            let j = self.j;
            self.b.truncate(j);
        }
    }

    /// Final -e removal and -ll reduction.
    fn step5(&mut self) {
        let k = self.len();
        if self.b[k - 1] == b'e' {
            let m = self.measure(k);
            if m > 1 || (m == 1 && !self.cvc(k - 2)) {
                self.b.pop();
            }
        }
        let k = self.len();
        if self.b[k - 1] == b'l' && self.double_cons_at_end() && self.measure(k) > 1 {
            self.b.pop();
        }
    }
}
