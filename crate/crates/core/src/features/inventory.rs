use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word-boundary marker, also used for utterance-initial and -final positions.
pub const BOUNDARY: &str = "#";

const ARPABET_CSV: &str = include_str!("../../data/arpabet_classes.csv");

/// Mapping from phoneme symbol to its natural-class descriptor.
///
/// Vowels are described as `height-backness-roundness`, consonants as
/// `place-manner`. Read from a two-column CSV with header `symbol,class_string`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NaturalClassTable {
    entries: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct ClassRow {
    symbol: String,
    class_string: String,
}

impl NaturalClassTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = BTreeMap::new();
        for row in rdr.deserialize::<ClassRow>() {
            let row = row.map_err(|e| Error::InvalidRecord(format!("natural-class table: {e}")))?;
            let symbol = row.symbol.trim().to_string();
            if symbol == BOUNDARY {
                return Err(Error::InvalidRecord(
                    "natural-class table may not define the boundary marker".into(),
                ));
            }
            if entries
                .insert(symbol.clone(), row.class_string.trim().to_string())
                .is_some()
            {
                return Err(Error::InvalidRecord(format!(
                    "natural-class table lists {symbol:?} twice"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    /// The bundled ARPABET table (39 phonemes, no stress markers).
    pub fn arpabet() -> Self {
        Self::from_reader(ARPABET_CSV.as_bytes()).expect("bundled table is well-formed")
    }

    pub fn get(&self, symbol: &str) -> Option<&str> {
        self.entries.get(symbol).map(String::as_str)
    }

    pub fn insert(&mut self, symbol: impl Into<String>, class: impl Into<String>) {
        self.entries.insert(symbol.into(), class.into());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InventoryEntry {
    pub symbol: String,
    pub natural_class: String,
}

/// Ordered phoneme vocabulary with a natural class for every symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    classes: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhonemeInventory {
    pub fn new(entries: Vec<InventoryEntry>) -> Result<Self> {
        let mut symbols = Vec::with_capacity(entries.len());
        let mut classes = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.into_iter().enumerate() {
            if entry.symbol.is_empty() || entry.symbol == BOUNDARY {
                return Err(Error::InvalidRecord(format!(
                    "invalid inventory symbol {:?}",
                    entry.symbol
                )));
            }
            if entry.natural_class.is_empty() {
                return Err(Error::InvalidRecord(format!(
                    "inventory symbol {:?} has no natural class",
                    entry.symbol
                )));
            }
            if index.insert(entry.symbol.clone(), i).is_some() {
                return Err(Error::InvalidRecord(format!(
                    "inventory symbol {:?} is listed twice",
                    entry.symbol
                )));
            }
            symbols.push(entry.symbol);
            classes.push(entry.natural_class);
        }
        Ok(Self {
            symbols,
            classes,
            index,
        })
    }

    /// Builds an inventory for `symbols`, taking each class from `table`.
    pub fn from_table<S: AsRef<str>>(symbols: &[S], table: &NaturalClassTable) -> Result<Self> {
        let entries = symbols
            .iter()
            .map(|s| {
                let s = s.as_ref();
                table
                    .get(s)
                    .map(|c| InventoryEntry {
                        symbol: s.to_string(),
                        natural_class: c.to_string(),
                    })
                    .ok_or_else(|| Error::UnknownSymbol(s.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    /// Replaces natural classes with those from `table`; symbols are unchanged.
    pub fn with_classes(&self, table: &NaturalClassTable) -> Result<Self> {
        Self::from_table(&self.symbols, table)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    pub fn natural_class(&self, symbol: &str) -> Option<&str> {
        self.index_of(symbol).map(|i| self.classes[i].as_str())
    }

    /// Distinct natural classes, sorted.
    pub fn class_set(&self) -> Vec<&str> {
        let mut set: Vec<&str> = self.classes.iter().map(String::as_str).collect();
        set.sort_unstable();
        set.dedup();
        set
    }

    pub fn entries(&self) -> Vec<InventoryEntry> {
        self.symbols
            .iter()
            .zip(&self.classes)
            .map(|(s, c)| InventoryEntry {
                symbol: s.clone(),
                natural_class: c.clone(),
            })
            .collect()
    }
}
