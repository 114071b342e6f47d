use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("address {0:#010x} is not word aligned")]
    MisalignedAddress(u32),
    #[error("image is empty")]
    EmptyImage,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse word-addressed big-endian memory with an entry point.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryImage {
    pub entry: u32,
    words: BTreeMap<u32, u32>,
}

impl MemoryImage {
    pub fn new(entry: u32) -> Self {
        MemoryImage { entry, words: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.words.iter().map(|(&a, &w)| (a, w))
    }

    pub fn set_word(&mut self, addr: u32, word: u32) -> Result<(), ImageError> {
        if addr % 4 != 0 {
            return Err(ImageError::MisalignedAddress(addr));
        }
        self.words.insert(addr, word);
        Ok(())
    }

    /// Unmapped words read as zero.
    pub fn word(&self, addr: u32) -> u32 {
        self.words.get(&(addr & !3)).copied().unwrap_or(0)
    }

    pub fn contains(&self, addr: u32) -> bool {
        self.words.contains_key(&(addr & !3))
    }

    pub fn byte(&self, addr: u32) -> u8 {
        let shift = (3 - (addr & 3)) * 8;
        (self.word(addr) >> shift) as u8
    }

    pub fn half(&self, addr: u32) -> u16 {
        let shift = (2 - (addr & 2)) * 8;
        (self.word(addr) >> shift) as u16
    }

    /// Replace the bytes selected by `mask` (already shifted into place).
    pub fn merge_word(&mut self, addr: u32, value: u32, mask: u32) {
        let a = addr & !3;
        let old = self.word(a);
        self.words.insert(a, (old & !mask) | (value & mask));
    }

    pub fn set_byte(&mut self, addr: u32, v: u8) {
        let shift = (3 - (addr & 3)) * 8;
        self.merge_word(addr, (v as u32) << shift, 0xFF << shift);
    }

    pub fn set_half(&mut self, addr: u32, v: u16) {
        let shift = (2 - (addr & 2)) * 8;
        self.merge_word(addr, (v as u32) << shift, 0xFFFF << shift);
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("ENTRY {:08x}\n", self.entry);
        for (a, w) in self.words() {
            let _ = writeln!(out, "{a:08x}: {w:08x}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<MemoryImage, ImageError> {
        let mut image: Option<MemoryImage> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let perr = |message: &str| ImageError::Parse { line, message: message.to_string() };
            match image.as_mut() {
                None => {
                    let hex = body.strip_prefix("ENTRY").ok_or_else(|| perr("expected ENTRY line"))?;
                    image = Some(MemoryImage::new(parse_hex(hex.trim()).ok_or_else(|| perr("bad entry address"))?));
                }
                Some(img) => {
                    let (a, w) = body.split_once(':').ok_or_else(|| perr("expected `<addr>: <word>`"))?;
                    let addr = parse_hex(a.trim()).ok_or_else(|| perr("bad address"))?;
                    let word = parse_hex(w.trim()).ok_or_else(|| perr("bad word"))?;
                    img.set_word(addr, word)?;
                }
            }
        }
        image.ok_or(ImageError::EmptyImage)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MemoryImage, ImageError> {
        MemoryImage::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_hex(s: &str) -> Option<u32> {
    let s = s.strip_prefix("0x").unwrap_or(s);
    if s.is_empty() || s.len() > 8 {
        return None;
    }
    u32::from_str_radix(s, 16).ok()
}
