/// (hypothesis, reference, BLEU-1..4 of the pair alone, ROUGE-L F1).
/// Computed independently of the crate, by a brute-force LCS and n-gram
/// counter.
#[allow(clippy::approx_constant)]
pub const GOLDEN: [(&str, &str, [f64; 4], f64); 20] = [
    ("the cat sat on the mat", "the cat sat on the mat", [1.0, 1.0, 1.0, 1.0], 1.0),
    ("the the the the", "the cat", [0.25, 0.0, 0.0, 0.0], 1.0 / 3.0),
    ("the cat sat", "the cat on the mat", [0.3422780793550613, 0.29642151188002913, 0.0, 0.0], 0.5),
    ("a b c d", "e f g h", [0.0, 0.0, 0.0, 0.0], 0.0),
    ("snow falls in winter", "snow falls in the winter", [0.7788007830714049, 0.6358881766016378, 0.5399903034156615, 0.0], 0.888888888888889),
    ("the teacher reads a book", "a teacher reads the book", [1.0, 0.5, 0.0, 0.0], 0.6),
    ("dog", "dog", [1.0, 0.0, 0.0, 0.0], 1.0),
    ("i eat rice", "i eat rice every day", [0.513417119032592, 0.513417119032592, 0.513417119032592, 0.0], 0.75),
    ("we walk to school together", "we walk together to school", [1.0, 0.7071067811865476, 0.0, 0.0], 0.8),
    ("rain rain rain", "rain", [1.0 / 3.0, 0.0, 0.0, 0.0], 0.5),
    ("my mother drinks water", "my mother drinks hot water now", [0.6065306597126334, 0.49523020988320327, 0.42054487115108263, 0.0], 0.8),
    ("the city is big", "the city is very big", [0.7788007830714049, 0.6358881766016378, 0.5399903034156615, 0.0], 0.888888888888889),
    ("hello", "goodbye", [0.0, 0.0, 0.0, 0.0], 0.0),
    ("The Dog Barks", "the dog barks", [1.0, 1.0, 1.0, 0.0], 1.0),
    ("a a b b", "a b a b", [1.0, 0.5773502691896257, 0.0, 0.0], 0.75),
    ("one two three four five", "one two three four five six", [0.8187307530779819; 4], 0.9090909090909091),
    ("friends meet at the house", "friends meet at my house", [0.8, 0.6324555320336759, 0.5108729549290354, 0.0], 0.8),
    ("x y", "x y z w", [0.36787944117144233, 0.36787944117144233, 0.0, 0.0], 2.0 / 3.0),
    ("tree tree house", "house tree", [2.0 / 3.0, 0.0, 0.0, 0.0], 0.4),
    ("read the book now please", "please read the book now", [1.0, 0.8660254037844387, 0.7937005259840997, 0.7071067811865475], 0.8),
];

