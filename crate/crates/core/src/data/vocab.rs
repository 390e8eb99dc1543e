/// Padding id; never a real token.
pub const PAD: u32 = 0;
/// Classification token at position 0.
pub const CLS: u32 = 1;
/// Separates a question from its context.
pub const SEP: u32 = 2;
pub const UNK: u32 = 3;
/// First id available to ordinary words.
pub const FIRST_WORD: u32 = 4;

const SPECIALS: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Fixed integer alphabet: special tokens plus words spelled `t<id>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Self {
        Vocab { size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn word(&self, id: u32) -> String {
        match SPECIALS.get(id as usize) {
            Some(s) => (*s).to_string(),
            None => format!("t{id}"),
        }
    }

    pub fn id(&self, word: &str) -> u32 {
        if let Some(i) = SPECIALS.iter().position(|s| *s == word) {
            return i as u32;
        }
        word.strip_prefix('t')
            .filter(|d| {
                !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && !d.starts_with('0')
            })
            .and_then(|d| d.parse::<u32>().ok())
            .filter(|&id| id >= FIRST_WORD && (id as usize) < self.size)
            .unwrap_or(UNK)
    }

    /// Whitespace tokenization.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
