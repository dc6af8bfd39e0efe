//! Byte-level byte-pair encoding.
//!
//! Ids `0..256` are the raw bytes. Training repeatedly merges the most
//! frequent adjacent pair (ties broken by the smallest `(left, right)` id
//! pair) into a fresh id, stopping at the target size or when no pair
//! occurs at least twice. Encoding replays the merges in training order.
//!
//! Vocabulary files are JSON lines: a header object, then one
//! `[left_id, right_id, new_id]` array per merge.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BYTE_TOKENS: usize = 256;
pub const FORMAT_VERSION: u32 = 1;

/// One learned merge rule: `(left, right) -> id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Merge {
    pub left: TokenId,
    pub right: TokenId,
    pub id: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    target_size: usize,
    merges: Vec<Merge>,
    ranks: HashMap<(TokenId, TokenId), usize>,
    /// Byte expansion of every id.
    pieces: Vec<Vec<u8>>,
}

/// Decoded text plus whether any invalid UTF-8 had to be replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    pub lossy: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    target_size: usize,
}

impl Vocabulary {
    /// Only the 256 byte tokens.
    pub fn bytes_only() -> Self {
        Self::from_merges(BYTE_TOKENS, Vec::new()).expect("empty merge list is valid")
    }

    /// Rebuilds a vocabulary from an ordered merge list, checking that ids
    /// are dense, increasing and only reference earlier tokens.
    pub fn from_merges(target_size: usize, merges: Vec<Merge>) -> Result<Self> {
        if target_size < BYTE_TOKENS {
            return Err(Error::param("target_size", format!("{target_size} < {BYTE_TOKENS}")));
        }
        if BYTE_TOKENS + merges.len() > target_size {
            return Err(Error::param("merges", "more merges than the target size allows"));
        }
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, m) in merges.iter().enumerate() {
            let expected = (BYTE_TOKENS + rank) as TokenId;
            if m.id != expected {
                return Err(Error::Parse(format!("merge {rank} assigns id {} (expected {expected})", m.id)));
            }
            if m.left >= expected || m.right >= expected {
                return Err(Error::Parse(format!("merge {rank} references a later token")));
            }
            if ranks.insert((m.left, m.right), rank).is_some() {
                return Err(Error::Parse(format!("merge {rank} duplicates an earlier pair")));
            }
            let mut piece = pieces[m.left as usize].clone();
            piece.extend_from_slice(&pieces[m.right as usize]);
            pieces.push(piece);
        }
        Ok(Self {
            target_size,
            merges,
            ranks,
            pieces,
        })
    }

    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Bytes spelled by `id`.
    pub fn piece(&self, id: TokenId) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    /// Same vocabulary keeping only the first `n` merges.
    pub fn truncated(&self, n: usize) -> Self {
        Self::from_merges(self.target_size, self.merges[..n.min(self.merges.len())].to_vec())
            .expect("prefix of a valid merge list is valid")
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            version: FORMAT_VERSION,
            target_size: self.target_size,
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for m in &self.merges {
            writeln!(w, "[{},{},{}]", m.left, m.right, m.id)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header_line = lines.next().ok_or(Error::Empty("vocabulary file"))??;
        let header: Header = serde_json::from_str(&header_line)?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported vocabulary version {}", header.version)));
        }
        let mut merges = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let [left, right, id]: [TokenId; 3] = serde_json::from_str(&line)?;
            merges.push(Merge { left, right, id });
        }
        Self::from_merges(header.target_size, merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(fs::File::open(path)?)
    }
}

/// Adjacent-pair counts (overlapping occurrences count separately).
fn pair_counts(ids: &[TokenId]) -> HashMap<(TokenId, TokenId), usize> {
    let mut counts = HashMap::new();
    for w in ids.windows(2) {
        *counts.entry((w[0], w[1])).or_insert(0) += 1;
    }
    counts
}

/// Replaces every non-overlapping left-to-right occurrence of `pair`.
fn merge_pair(ids: &[TokenId], pair: (TokenId, TokenId), new_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

pub fn train(corpus: &[u8], target_size: usize) -> Result<Vocabulary> {
    if target_size < BYTE_TOKENS {
        return Err(Error::param("target_size", format!("{target_size} < {BYTE_TOKENS}")));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut ids: Vec<TokenId> = corpus.iter().map(|&b| b as TokenId).collect();
    let mut merges = Vec::new();
    while BYTE_TOKENS + merges.len() < target_size {
        let counts = pair_counts(&ids);
        // highest count, then smallest (left, right)
        let best = counts
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let Some((pair, _)) = best else { break };
        let id = (BYTE_TOKENS + merges.len()) as TokenId;
        ids = merge_pair(&ids, pair, id);
        merges.push(Merge {
            left: pair.0,
            right: pair.1,
            id,
        });
    }
    Vocabulary::from_merges(target_size, merges)
}

pub fn encode(vocab: &Vocabulary, text: &str) -> TokenSequence {
    encode_bytes(vocab, text.as_bytes())
}

/// Applies merges to raw bytes, always taking the earliest-trained merge
/// present in the sequence next.
pub fn encode_bytes(vocab: &Vocabulary, bytes: &[u8]) -> TokenSequence {
    let mut ids: Vec<TokenId> = bytes.iter().map(|&b| b as TokenId).collect();
    while ids.len() >= 2 {
        let best = ids
            .windows(2)
            .filter_map(|w| vocab.ranks.get(&(w[0], w[1])).copied())
            .min();
        let Some(rank) = best else { break };
        let m = vocab.merges[rank];
        ids = merge_pair(&ids, (m.left, m.right), m.id);
    }
    TokenSequence(ids)
}

/// Concatenated byte expansion of `seq`.
pub fn decode_bytes(vocab: &Vocabulary, seq: &TokenSequence) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(seq.len());
    for &id in seq.ids() {
        let piece = vocab.piece(id).ok_or(Error::OutOfRange {
            what: "token id",
            index: id as usize,
            limit: vocab.size(),
        })?;
        out.extend_from_slice(piece);
    }
    Ok(out)
}

/// Decodes to text; invalid UTF-8 (a sequence cut inside a character) is
/// replaced with U+FFFD and flagged in [`Decoded::lossy`].
pub fn decode(vocab: &Vocabulary, seq: &TokenSequence) -> Result<Decoded> {
    let bytes = decode_bytes(vocab, seq)?;
    match String::from_utf8(bytes) {
        Ok(text) => Ok(Decoded { text, lossy: false }),
        Err(e) => Ok(Decoded {
            text: String::from_utf8_lossy(e.as_bytes()).into_owned(),
            lossy: true,
        }),
    }
}
