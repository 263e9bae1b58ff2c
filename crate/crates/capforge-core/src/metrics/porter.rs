//! Porter stemmer (the classic 1980 algorithm), used by the word-matching
//! stage of the METEOR variant. Operates on lowercase ASCII words; anything
//! else passes through untouched.

fn is_consonant(word: &[u8], i: usize) -> bool {
    match word[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => {
            if i == 0 {
                true
            } else {
                !is_consonant(word, i - 1)
            }
        }
        _ => true,
    }
}

/// The measure m: number of vowel->consonant transitions in `word[..len]`,
/// i.e. m in the form [C](VC)^m[V].
fn measure(word: &[u8], len: usize) -> usize {
    let mut m = 0;
    let mut i = 0;
    // skip initial consonants
    while i < len && is_consonant(word, i) {
        i += 1;
    }
    loop {
        // vowel run
        if i >= len {
            return m;
        }
        while i < len && !is_consonant(word, i) {
            i += 1;
        }
        if i >= len {
            return m;
        }
        // consonant run completes a VC pair
        while i < len && is_consonant(word, i) {
            i += 1;
        }
        m += 1;
    }
}

fn has_vowel(word: &[u8], len: usize) -> bool {
    (0..len).any(|i| !is_consonant(word, i))
}

fn ends_double_consonant(word: &[u8]) -> bool {
    let n = word.len();
    n >= 2 && word[n - 1] == word[n - 2] && is_consonant(word, n - 1)
}

/// *o: stem ends consonant-vowel-consonant with the final consonant not
/// w, x or y.
fn ends_cvc(word: &[u8], len: usize) -> bool {
    if len < 3 {
        return false;
    }
    let (a, b, c) = (len - 3, len - 2, len - 1);
    is_consonant(word, a)
        && !is_consonant(word, b)
        && is_consonant(word, c)
        && !matches!(word[c], b'w' | b'x' | b'y')
}

fn ends_with(word: &[u8], suffix: &str) -> bool {
    word.len() >= suffix.len() && &word[word.len() - suffix.len()..] == suffix.as_bytes()
}

/// Replaces `suffix` with `replacement` when the remaining stem satisfies
/// `cond`; returns whether the suffix matched (not necessarily fired).
fn replace(
    word: &mut Vec<u8>,
    suffix: &str,
    replacement: &str,
    cond: impl Fn(&[u8], usize) -> bool,
) -> bool {
    if !ends_with(word, suffix) {
        return false;
    }
    let stem_len = word.len() - suffix.len();
    if cond(word, stem_len) {
        word.truncate(stem_len);
        word.extend_from_slice(replacement.as_bytes());
    }
    true
}

pub fn stem(input: &str) -> String {
    if input.len() <= 2 || !input.bytes().all(|b| b.is_ascii_lowercase()) {
        return input.to_owned();
    }
    let mut w: Vec<u8> = input.as_bytes().to_vec();

    // Step 1a
    if ends_with(&w, "sses") {
        w.truncate(w.len() - 2);
    } else if ends_with(&w, "ies") {
        w.truncate(w.len() - 2);
    } else if !ends_with(&w, "ss") && ends_with(&w, "s") {
        w.truncate(w.len() - 1);
    }

    // Step 1b
    let mut cleanup = false;
    if ends_with(&w, "eed") {
        if measure(&w, w.len() - 3) > 0 {
            w.truncate(w.len() - 1);
        }
    } else if ends_with(&w, "ed") && has_vowel(&w, w.len() - 2) {
        w.truncate(w.len() - 2);
        cleanup = true;
    } else if ends_with(&w, "ing") && has_vowel(&w, w.len() - 3) {
        w.truncate(w.len() - 3);
        cleanup = true;
    }
    if cleanup {
        if ends_with(&w, "at") || ends_with(&w, "bl") || ends_with(&w, "iz") {
            w.push(b'e');
        } else if ends_double_consonant(&w) && !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
            w.truncate(w.len() - 1);
        } else if measure(&w, w.len()) == 1 && ends_cvc(&w, w.len()) {
            w.push(b'e');
        }
    }

    // Step 1c
    if ends_with(&w, "y") && has_vowel(&w, w.len() - 1) {
        let n = w.len();
        w[n - 1] = b'i';
    }

    // Step 2 (longest match first within the step)
    let step2: &[(&str, &str)] = &[
        ("ational", "ate"),
        ("ization", "ize"),
        ("iveness", "ive"),
        ("fulness", "ful"),
        ("ousness", "ous"),
        ("tional", "tion"),
        ("biliti", "ble"),
        ("entli", "ent"),
        ("ousli", "ous"),
        ("ation", "ate"),
        ("alism", "al"),
        ("aliti", "al"),
        ("iviti", "ive"),
        ("enci", "ence"),
        ("anci", "ance"),
        ("izer", "ize"),
        ("abli", "able"),
        ("alli", "al"),
        ("ator", "ate"),
        ("eli", "e"),
    ];
    for (suffix, rep) in step2 {
        if replace(&mut w, suffix, rep, |word, len| measure(word, len) > 0) {
            break;
        }
    }

    // Step 3
    let step3: &[(&str, &str)] = &[
        ("icate", "ic"),
        ("ative", ""),
        ("alize", "al"),
        ("iciti", "ic"),
        ("ical", "ic"),
        ("ness", ""),
        ("ful", ""),
    ];
    for (suffix, rep) in step3 {
        if replace(&mut w, suffix, rep, |word, len| measure(word, len) > 0) {
            break;
        }
    }

    // Step 4
    let step4: &[&str] = &[
        "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ism", "ate", "iti",
        "ous", "ive", "ize", "ion", "al", "er", "ic", "ou",
    ];
    for suffix in step4 {
        if ends_with(&w, suffix) {
            let stem_len = w.len() - suffix.len();
            let fires = measure(&w, stem_len) > 1
                && (*suffix != "ion" || (stem_len > 0 && matches!(w[stem_len - 1], b's' | b't')));
            if fires {
                w.truncate(stem_len);
            }
            break;
        }
    }

    // Step 5a
    if ends_with(&w, "e") {
        let stem_len = w.len() - 1;
        let m = measure(&w, stem_len);
        if m > 1 || (m == 1 && !ends_cvc(&w, stem_len)) {
            w.truncate(stem_len);
        }
    }

    // Step 5b
    if measure(&w, w.len()) > 1 && ends_double_consonant(&w) && w[w.len() - 1] == b'l' {
        w.truncate(w.len() - 1);
    }

    String::from_utf8(w).expect("ascii in, ascii out")
}
