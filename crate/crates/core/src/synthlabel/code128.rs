//! Code 128 subset B encoder.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Code128Error {
    #[error("cannot encode empty text")]
    EmptyText,
    #[error("character {0:?} is outside Code 128 subset B")]
    UnsupportedChar(char),
}

pub const START_B: u8 = 104;
pub const STOP: u8 = 106;

/// Bar/space widths for symbol values 0..=106; the stop symbol has 7 elements.
const PATTERNS: [&str; 107] = [
    "212222", "222122", "222221", "121223", "121322", "131222", "122213", "122312", "132212",
    "221213", "221312", "231212", "112232", "122132", "122231", "113222", "123122", "123221",
    "223211", "221132", "221231", "213212", "223112", "312131", "311222", "321122", "321221",
    "312212", "322112", "322211", "212123", "212321", "232121", "111323", "131123", "131321",
    "112313", "132113", "132311", "211313", "231113", "231311", "112133", "112331", "132131",
    "113123", "113321", "133121", "313121", "211331", "231131", "213113", "213311", "213131",
    "311123", "311321", "331121", "312113", "312311", "332111", "314111", "221411", "431111",
    "111224", "111422", "121124", "121421", "141122", "141221", "112214", "112412", "122114",
    "122411", "142112", "142211", "241211", "221114", "413111", "241112", "134111", "111242",
    "121142", "121241", "114212", "124112", "124211", "411212", "421112", "421211", "212141",
    "214121", "412121", "111143", "111341", "131141", "114113", "114311", "411113", "411311",
    "113141", "114131", "311141", "411131", "211412", "211214", "211232", "2331112",
];

/// Module widths of one symbol, starting with a bar and alternating bar/space.
pub fn symbol_pattern(value: u8) -> Vec<u8> {
    PATTERNS[value as usize].bytes().map(|b| b - b'0').collect()
}

/// Encoded barcode: symbol values including start, checksum and stop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Code128 {
    symbols: Vec<u8>,
}

impl Code128 {
    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    /// Data symbol values, between the start symbol and the checksum.
    pub fn data_symbols(&self) -> &[u8] {
        &self.symbols[1..self.symbols.len() - 2]
    }

    pub fn checksum(&self) -> u8 {
        self.symbols[self.symbols.len() - 2]
    }

    /// Alternating bar/space widths in modules, beginning and ending with a bar.
    pub fn module_widths(&self) -> Vec<u8> {
        self.symbols
            .iter()
            .flat_map(|&s| symbol_pattern(s))
            .collect()
    }

    /// Total width in modules, excluding quiet zones.
    pub fn total_modules(&self) -> u32 {
        self.module_widths().iter().map(|&w| w as u32).sum()
    }
}

pub fn checksum(start: u8, data: &[u8]) -> u8 {
    let weighted: u64 = data
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as u64 + 1) * v as u64)
        .sum();
    ((start as u64 + weighted) % 103) as u8
}

pub fn encode_code128(text: &str) -> Result<Code128, Code128Error> {
    if text.is_empty() {
        return Err(Code128Error::EmptyText);
    }
    let data = text
        .chars()
        .map(|c| match c as u32 {
            32..=127 => Ok((c as u32 - 32) as u8),
            _ => Err(Code128Error::UnsupportedChar(c)),
        })
        .collect::<Result<Vec<u8>, _>>()?;
    let mut symbols = Vec::with_capacity(data.len() + 3);
    symbols.push(START_B);
    symbols.extend_from_slice(&data);
    symbols.push(checksum(START_B, &data));
    symbols.push(STOP);
    Ok(Code128 { symbols })
}
