//! Global token vocabulary shared by every task.
//!
//! Token ids are fixed so that the binary digits are literally 0 and 1,
//! which lets the sequence programs compute XOR/AND directly on token
//! values. The unique-set alphabet occupies ids 2..=51 and renders as the
//! decimal symbols "1".."50".

pub type Tok = u16;

pub const TOK_ZERO: Tok = 0;
pub const TOK_ONE: Tok = 1;
/// First id of the 50-symbol unique-set alphabet (ids 2..=51).
pub const ALPHABET_BASE: Tok = 2;
pub const ALPHABET_SIZE: usize = 50;
pub const TOK_PLUS: Tok = 52;
pub const TOK_TIMES: Tok = 53;
/// End-of-query marker `>`.
pub const TOK_EOQ: Tok = 54;
/// End-of-sequence padding `#`.
pub const TOK_EOS: Tok = 55;
/// Unsupervised output position `*`.
pub const TOK_IGNORE: Tok = 56;
/// Pause filler `.` for the pause-token baselines.
pub const TOK_PAUSE: Tok = 57;
pub const VOCAB_SIZE: usize = 58;

/// Maps a unique-set symbol (1..=50) to its token id.
pub fn alphabet_tok(symbol: usize) -> Tok {
    assert!(
        (1..=ALPHABET_SIZE).contains(&symbol),
        "alphabet symbol {symbol} out of range 1..=50"
    );
    ALPHABET_BASE + (symbol - 1) as Tok
}

/// Inverse of [`alphabet_tok`]; `None` if the id is not an alphabet token.
pub fn alphabet_symbol(tok: Tok) -> Option<usize> {
    if (ALPHABET_BASE..ALPHABET_BASE + ALPHABET_SIZE as Tok).contains(&tok) {
        Some((tok - ALPHABET_BASE) as usize + 1)
    } else {
        None
    }
}

pub fn glyph(tok: Tok) -> String {
    match tok {
        TOK_ZERO => "0".to_string(),
        TOK_ONE => "1".to_string(),
        TOK_PLUS => "+".to_string(),
        TOK_TIMES => "×".to_string(),
        TOK_EOQ => ">".to_string(),
        TOK_EOS => "#".to_string(),
        TOK_IGNORE => "*".to_string(),
        TOK_PAUSE => ".".to_string(),
        t => match alphabet_symbol(t) {
            Some(s) => s.to_string(),
            None => format!("<{t}>"),
        },
    }
}

/// How numeric glyphs are read back: binary tasks use ids 0/1, the
/// unique-set task maps "1".."50" onto the alphabet ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumeralMode {
    Binary,
    Alphabet,
}

/// A sequence of token ids over the global vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<Tok>);

impl TokenSeq {
    pub fn new(toks: Vec<Tok>) -> Self {
        TokenSeq(toks)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Tok] {
        &self.0
    }

    /// Token values widened to integers for the sequence interpreter.
    pub fn to_ints(&self) -> Vec<i64> {
        self.0.iter().map(|&t| t as i64).collect()
    }

    pub fn from_ints(vals: &[i64]) -> Self {
        TokenSeq(vals.iter().map(|&v| v as Tok).collect())
    }

    /// Space-separated glyph rendering, e.g. `1 1 0 1 > # # #`.
    pub fn render(&self) -> String {
        self.0
            .iter()
            .map(|&t| glyph(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parses a space-separated glyph string. Numerals are interpreted
    /// according to `mode`.
    pub fn parse(text: &str, mode: NumeralMode) -> Result<Self, String> {
        let mut toks = Vec::new();
        for word in text.split_whitespace() {
            let tok = match word {
                "+" => TOK_PLUS,
                "×" | "x" => TOK_TIMES,
                ">" => TOK_EOQ,
                "#" => TOK_EOS,
                "*" => TOK_IGNORE,
                "." => TOK_PAUSE,
                w => {
                    let v: usize = w.parse().map_err(|_| format!("bad token {w:?}"))?;
                    match mode {
                        NumeralMode::Binary => match v {
                            0 => TOK_ZERO,
                            1 => TOK_ONE,
                            _ => return Err(format!("non-binary digit {v}")),
                        },
                        NumeralMode::Alphabet => {
                            if (1..=ALPHABET_SIZE).contains(&v) {
                                alphabet_tok(v)
                            } else {
                                return Err(format!("alphabet symbol {v} out of range"));
                            }
                        }
                    }
                }
            };
            toks.push(tok);
        }
        Ok(TokenSeq(toks))
    }
}

impl std::fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<Vec<Tok>> for TokenSeq {
    fn from(v: Vec<Tok>) -> Self {
        TokenSeq(v)
    }
}
