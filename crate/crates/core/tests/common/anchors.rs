use signbridge::anchors::TaggedSentence;

/// `(word, tag, sentence range)`: the word appears once, with that tag, in
/// every sentence of the range. Later rows may repeat a word with another
/// tag.
const PLAN: &[(&str, &str, std::ops::Range<usize>)] = &[
    ("the", "DT", 0..100),
    ("go", "VB", 0..95),
    ("make", "VB", 0..90),
    ("take", "VB", 0..89),
    ("snow", "NN", 0..10),
    ("rain", "NN", 0..11),
    ("rain", "NN", 50..51),
    ("walk", "NN", 0..15),
    ("walk", "VB", 15..30),
    ("quick", "JJ", 10..30),
    ("slowly", "RB", 40..55),
    ("teacher", "NN", 20..60),
    ("teachers", "NNS", 60..72),
    ("paris", "NNP", 30..43),
    ("running", "VBG", 70..82),
    ("eaten", "VBN", 5..17),
    ("house", "NN", 80..92),
    ("house", "NN", 80..92),
    ("blue", "JJ", 0..9),
    ("and", "CC", 0..50),
    ("ate", "VBD", 33..45),
    ("sings", "VBZ", 44..56),
    ("sing", "VBP", 56..68),
];

/// A 100-sentence pre-tagged corpus with boundary words: `snow` occurs
/// exactly 10 times, `make` in exactly 90% of sentences, `house` twice per
/// sentence.
pub fn fixture() -> Vec<TaggedSentence> {
    (0..100)
        .map(|i| {
            let (tokens, tags): (Vec<String>, Vec<String>) = PLAN
                .iter()
                .filter(|(_, _, r)| r.contains(&i))
                .map(|(w, t, _)| (w.to_string(), t.to_string()))
                .unzip();
            TaggedSentence::new(tokens, tags, i).unwrap()
        })
        .collect()
}

/// Independent recount: one full corpus scan per distinct word, then a
/// selection sort.
pub fn brute_force(corpus: &[TaggedSentence], tags: &[&str], min_count: usize, frac: f64) -> Vec<(String, usize, usize)> {
    let mut words: Vec<String> = Vec::new();
    for s in corpus {
        for t in &s.tokens {
            if !words.contains(t) {
                words.push(t.clone());
            }
        }
    }
    let mut kept = Vec::new();
    for w in words {
        let mut count = 0;
        let mut docs = 0;
        let mut tagged = false;
        for s in corpus {
            let mut here = false;
            for k in 0..s.tokens.len() {
                if s.tokens[k] == w {
                    count += 1;
                    here = true;
                    if tags.iter().any(|t| *t == s.tags[k]) {
                        tagged = true;
                    }
                }
            }
            if here {
                docs += 1;
            }
        }
        if tagged && count > min_count && (docs as f64) < frac * corpus.len() as f64 {
            kept.push((w, count, docs));
        }
    }
    let mut out = Vec::new();
    while !kept.is_empty() {
        let mut best = 0;
        for k in 1..kept.len() {
            let (a, b) = (&kept[k], &kept[best]);
            if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                best = k;
            }
        }
        out.push(kept.remove(best));
    }
    out
}

pub const V: &[&str] = &["VB", "VBD", "VBG", "VBN", "VBP", "VBZ"];
pub const N: &[&str] = &["NN", "NNP", "NNS"];
pub const A: &[&str] = &["JJ", "JJR", "JJS", "RB", "RBR", "RBS"];
