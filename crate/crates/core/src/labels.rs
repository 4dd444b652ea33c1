use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_LABELS: usize = 3;
pub const LABEL_NAMES: [&str; N_LABELS] = ["listening", "schizophrenia", "hallucinations"];

/// Index of a label within [`LabelVector`] and within the characteristic
/// latent partition.
pub const LISTENING: usize = 0;
pub const SCHIZOPHRENIA: usize = 1;
pub const HALLUCINATIONS: usize = 2;

/// Binary labels `[listening, schizophrenia, hallucinations]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelVector {
    pub listening: bool,
    pub schizophrenia: bool,
    pub hallucinations: bool,
}

impl LabelVector {
    pub fn new(listening: bool, schizophrenia: bool, hallucinations: bool) -> Result<Self> {
        if hallucinations && !schizophrenia {
            return Err(Error::Config("hallucinations = 1 requires schizophrenia = 1".into()));
        }
        Ok(Self { listening, schizophrenia, hallucinations })
    }

    pub fn from_bits(bits: [u8; N_LABELS]) -> Result<Self> {
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::Config(format!("labels must be 0/1, got {bits:?}")));
        }
        Self::new(bits[0] == 1, bits[1] == 1, bits[2] == 1)
    }

    pub fn bits(&self) -> [u8; N_LABELS] {
        [self.listening as u8, self.schizophrenia as u8, self.hallucinations as u8]
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits()[index] == 1
    }

    /// Cohort index: 0 healthy, 1 schizophrenia without hallucinations,
    /// 2 schizophrenia with hallucinations.
    pub fn cohort(&self) -> usize {
        match (self.schizophrenia, self.hallucinations) {
            (false, _) => 0,
            (true, false) => 1,
            (true, true) => 2,
        }
    }
}

pub fn label_index(name: &str) -> Option<usize> {
    let lower = name.to_ascii_lowercase();
    LABEL_NAMES.iter().position(|n| *n == lower).or(match lower.as_str() {
        "l" => Some(LISTENING),
        "s" | "sz" => Some(SCHIZOPHRENIA),
        "h" | "avh" => Some(HALLUCINATIONS),
        _ => None,
    })
}
