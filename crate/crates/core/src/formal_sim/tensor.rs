//! Exhaustive check of text-only versus tensor observation.
//!
//! The system holds a set of candidate responses and exports one of them.
//! Under text-only observation the judge sees the string and can only reject
//! obvious lies. Under tensor observation it also sees provenance and
//! attention topology. Every non-empty internal state and every choice
//! within it is enumerated.

use serde::{Deserialize, Serialize};

use super::FormalError;

/// Above this, enumerating all subsets gets expensive.
pub const MAX_ITEMS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    GroundTruth,
    PlausibleLie,
    ObviousLie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TrainingData,
    Confabulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Coherent,
    Fragmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseItem {
    pub name: String,
    pub kind: ItemKind,
    pub provenance: Provenance,
    pub topology: Topology,
}

impl ResponseItem {
    pub fn is_honest(&self) -> bool {
        self.kind == ItemKind::GroundTruth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    TextOnly,
    Tensor,
}

pub fn judge_accepts(mode: ObservationMode, item: &ResponseItem) -> bool {
    let text_ok = item.kind != ItemKind::ObviousLie;
    match mode {
        ObservationMode::TextOnly => text_ok,
        ObservationMode::Tensor => {
            text_ok && item.topology == Topology::Coherent && item.provenance == Provenance::TrainingData
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub state: Vec<String>,
    pub exported: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCheckResult {
    pub mode: ObservationMode,
    pub states_explored: usize,
    /// An accepted dishonest export, if any.
    pub counterexample: Option<Counterexample>,
}

/// Twelve items: four of each kind. Lies are confabulated; half the
/// plausible lies still show coherent attention.
pub fn default_items() -> Vec<ResponseItem> {
    let mut items = Vec::new();
    for i in 0..4 {
        items.push(ResponseItem {
            name: format!("truth{i}"),
            kind: ItemKind::GroundTruth,
            provenance: Provenance::TrainingData,
            topology: Topology::Coherent,
        });
    }
    for i in 0..4 {
        items.push(ResponseItem {
            name: format!("plausible{i}"),
            kind: ItemKind::PlausibleLie,
            provenance: Provenance::Confabulated,
            topology: if i % 2 == 0 { Topology::Coherent } else { Topology::Fragmented },
        });
    }
    for i in 0..4 {
        items.push(ResponseItem {
            name: format!("obvious{i}"),
            kind: ItemKind::ObviousLie,
            provenance: Provenance::Confabulated,
            topology: Topology::Fragmented,
        });
    }
    items
}

/// Visits all `2^n − 1` non-empty states and every export from each. The
/// search does not stop at the first counterexample so the state count is
/// always the full space.
pub fn model_check(items: &[ResponseItem], mode: ObservationMode) -> Result<ModelCheckResult, FormalError> {
    if items.len() > MAX_ITEMS {
        return Err(FormalError::TooManyItems(items.len()));
    }
    let mut counterexample = None;
    let mut states = 0;
    for mask in 1u32..(1u32 << items.len()) {
        states += 1;
        if counterexample.is_some() {
            continue;
        }
        let members: Vec<&ResponseItem> = (0..items.len()).filter(|i| mask >> i & 1 == 1).map(|i| &items[i]).collect();
        if let Some(bad) = members.iter().find(|it| judge_accepts(mode, it) && !it.is_honest()) {
            counterexample = Some(Counterexample {
                state: members.iter().map(|m| m.name.clone()).collect(),
                exported: bad.name.clone(),
            });
        }
    }
    Ok(ModelCheckResult {
        mode,
        states_explored: states,
        counterexample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_only_admits_a_plausible_lie() {
        let r = model_check(&default_items(), ObservationMode::TextOnly).unwrap();
        assert_eq!(r.states_explored, 4095);
        let ce = r.counterexample.expect("counterexample");
        assert!(ce.exported.starts_with("plausible"));
    }

    #[test]
    fn tensor_mode_admits_no_lie() {
        let r = model_check(&default_items(), ObservationMode::Tensor).unwrap();
        assert_eq!(r.states_explored, 4095);
        assert_eq!(r.counterexample, None);
    }

    #[test]
    fn lie_with_clean_provenance_breaks_the_escape() {
        let mut items = default_items();
        items[4].provenance = Provenance::TrainingData;
        items[4].topology = Topology::Coherent;
        assert!(model_check(&items, ObservationMode::Tensor).unwrap().counterexample.is_some());
    }

    #[test]
    fn too_many_items() {
        let items = vec![default_items()[0].clone(); 21];
        assert_eq!(model_check(&items, ObservationMode::Tensor), Err(FormalError::TooManyItems(21)));
    }
}
