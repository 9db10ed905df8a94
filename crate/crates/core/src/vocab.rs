//! Token inventories with the four reserved control symbols.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Index into a [`Vocabulary`]'s token list.
pub type TokenId = usize;

/// Ordered token inventory. The blank, start, end, and unknown symbols are
/// ordinary entries in the token list, addressed by the four reserved ids;
/// they must be distinct and in range.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    blank_id: TokenId,
    sos_id: TokenId,
    eos_id: TokenId,
    unk_id: TokenId,
}

/// On-disk shape shared by lattice and scorer files.
#[derive(Clone, Serialize, Deserialize)]
struct VocabRepr {
    vocab: Vec<String>,
    blank_id: TokenId,
    sos_id: TokenId,
    eos_id: TokenId,
    unk_id: TokenId,
}

impl TryFrom<VocabRepr> for Vocabulary {
    type Error = CoreError;

    fn try_from(r: VocabRepr) -> Result<Self, CoreError> {
        Vocabulary::new(r.vocab, r.blank_id, r.sos_id, r.eos_id, r.unk_id)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> VocabRepr {
        VocabRepr {
            vocab: v.tokens,
            blank_id: v.blank_id,
            sos_id: v.sos_id,
            eos_id: v.eos_id,
            unk_id: v.unk_id,
        }
    }
}

impl Vocabulary {
    pub fn new(
        tokens: Vec<String>,
        blank_id: TokenId,
        sos_id: TokenId,
        eos_id: TokenId,
        unk_id: TokenId,
    ) -> Result<Self, CoreError> {
        let n = tokens.len();
        for (name, id) in [
            ("blank_id", blank_id),
            ("sos_id", sos_id),
            ("eos_id", eos_id),
            ("unk_id", unk_id),
        ] {
            if id >= n {
                return Err(CoreError::Vocab(format!(
                    "{name} {id} out of range for {n} tokens"
                )));
            }
        }
        let specials = [blank_id, sos_id, eos_id, unk_id];
        let distinct: HashSet<_> = specials.iter().collect();
        if distinct.len() != specials.len() {
            return Err(CoreError::Vocab(format!(
                "special ids must be distinct, got {specials:?}"
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, t) in tokens.iter().enumerate() {
            if !seen.insert(t.as_str()) {
                return Err(CoreError::Vocab(format!("duplicate token {t:?} at id {i}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            blank_id,
            sos_id,
            eos_id,
            unk_id,
        })
    }

    /// Conventional layout: `<blank> <sos> <eos> <unk>` followed by
    /// `n_regular` emittable tokens named `a`, `b`, ... (or `w{i}` past `z`).
    pub fn standard(n_regular: usize) -> Vocabulary {
        let mut tokens = vec![
            "<blank>".to_string(),
            "<sos>".to_string(),
            "<eos>".to_string(),
            "<unk>".to_string(),
        ];
        for i in 0..n_regular {
            tokens.push(Self::regular_name(i));
        }
        Vocabulary::new(tokens, 0, 1, 2, 3).expect("standard layout is valid")
    }

    fn regular_name(i: usize) -> String {
        if i < 26 {
            char::from(b'a' + i as u8).to_string()
        } else {
            format!("w{i}")
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn blank_id(&self) -> TokenId {
        self.blank_id
    }

    pub fn sos_id(&self) -> TokenId {
        self.sos_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    /// Blank, start, or end symbol. Unknown counts as emittable.
    pub fn is_reserved(&self, id: TokenId) -> bool {
        id == self.blank_id || id == self.sos_id || id == self.eos_id
    }

    /// Ids a search may emit: everything except blank, start, and end.
    pub fn emittable_ids(&self) -> Vec<TokenId> {
        (0..self.size()).filter(|&id| !self.is_reserved(id)).collect()
    }

    /// Render a token-id sequence as a space-joined string.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
