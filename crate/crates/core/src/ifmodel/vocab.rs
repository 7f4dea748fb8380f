use crate::error::{Error, Result};

/// The 20 canonical amino acids, in index order.
pub const AMINO_ACIDS: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

pub const UNK: usize = 20;
pub const BOS: usize = 21;
pub const PAD: usize = 22;
pub const VOCAB_SIZE: usize = 23;
pub const NUM_CANONICAL: usize = 20;

/// Token alphabet: 20 amino acids, then `UNK` (`X`), `BOS` and `PAD`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vocabulary;

impl Vocabulary {
    pub fn size(&self) -> usize {
        VOCAB_SIZE
    }

    /// Index of a one-letter residue code. `X` maps to `UNK`.
    pub fn index_of(&self, letter: char) -> Option<usize> {
        let upper = letter.to_ascii_uppercase() as u8;
        if upper == b'X' {
            return Some(UNK);
        }
        AMINO_ACIDS.iter().position(|&c| c == upper)
    }

    pub fn letter(&self, index: usize) -> Option<char> {
        match index {
            i if i < NUM_CANONICAL => Some(AMINO_ACIDS[i] as char),
            UNK => Some('X'),
            _ => None,
        }
    }

    pub fn symbol(&self, index: usize) -> &'static str {
        const NAMES: [&str; VOCAB_SIZE] = [
            "A", "C", "D", "E", "F", "G", "H", "I", "K", "L", "M", "N", "P", "Q", "R", "S", "T", "V", "W",
            "Y", "<unk>", "<bos>", "<pad>",
        ];
        NAMES[index]
    }

    pub fn is_special(&self, index: usize) -> bool {
        index >= NUM_CANONICAL
    }

    pub fn encode(&self, seq: &str) -> Result<Vec<usize>> {
        seq.chars()
            .enumerate()
            .map(|(i, c)| {
                self.index_of(c)
                    .ok_or_else(|| Error::Sequence(format!("letter {c:?} at position {i} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens.iter().filter_map(|&t| self.letter(t)).collect()
    }
}

/// Which part of the token stream contributes to sequence scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpan {
    /// Antibody and antigen tokens.
    #[default]
    Full,
    /// Only the leading antibody chain.
    AntibodyOnly,
}

/// An encoded token stream (antibody chain followed by antigen chain).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSequence {
    pub tokens: Vec<usize>,
    /// Number of residues in the leading antibody chain.
    pub antibody_len: usize,
    pub structure_id: String,
}

impl TokenizedSequence {
    pub fn new(tokens: Vec<usize>, antibody_len: usize, structure_id: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Sequence("empty sequence".into()));
        }
        if antibody_len > tokens.len() {
            return Err(Error::Sequence(format!(
                "antibody length {antibody_len} exceeds stream length {}",
                tokens.len()
            )));
        }
        if let Some(p) = tokens.iter().position(|&t| t == PAD || t == BOS || t >= VOCAB_SIZE) {
            return Err(Error::Sequence(format!("special token inside scored span at position {p}")));
        }
        Ok(Self {
            tokens,
            antibody_len,
            structure_id: structure_id.into(),
        })
    }

    /// Encodes `antibody ++ antigen`.
    pub fn from_chains(antibody: &str, antigen: &str, structure_id: impl Into<String>) -> Result<Self> {
        let vocab = Vocabulary;
        let mut tokens = vocab.encode(antibody)?;
        let antibody_len = tokens.len();
        tokens.extend(vocab.encode(antigen)?);
        Self::new(tokens, antibody_len, structure_id)
    }

    /// `|y|`: number of residue tokens.
    pub fn length(&self) -> usize {
        self.tokens.len()
    }

    pub fn span(&self, span: ScoreSpan) -> std::ops::Range<usize> {
        match span {
            ScoreSpan::Full => 0..self.tokens.len(),
            ScoreSpan::AntibodyOnly => 0..self.antibody_len,
        }
    }
}
