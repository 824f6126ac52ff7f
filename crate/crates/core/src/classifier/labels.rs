use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ItemId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRole {
    Training,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Corpus,
    ActiveLearning,
    Human,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub value: u8,
    pub role: LabelRole,
    pub source: LabelSource,
}

/// Flat form of one store entry, used for serialisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub item: ItemId,
    pub attribute: usize,
    pub value: u8,
    pub role: LabelRole,
    pub source: LabelSource,
}

/// Known `(item, attribute)` labels. A pair holds exactly one entry, so the
/// training and validation roles never overlap.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<LabelRecord>", into = "Vec<LabelRecord>")]
pub struct LabelStore {
    entries: BTreeMap<(ItemId, usize), LabelEntry>,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every attribute label of `items` under `role`.
    pub fn add_full_labels(&mut self, corpus: &Corpus, items: &[ItemId], role: LabelRole) {
        for &id in items {
            let item = corpus.item(id);
            for (w, &v) in item.labels.iter().enumerate() {
                self.insert(id, w, v, role, LabelSource::Corpus);
            }
        }
    }

    /// Returns false (and stores nothing) if the pair is already labelled.
    pub fn insert(&mut self, item: ItemId, attribute: usize, value: u8, role: LabelRole, source: LabelSource) -> bool {
        use std::collections::btree_map::Entry;
        match self.entries.entry((item, attribute)) {
            Entry::Occupied(_) => false,
            Entry::Vacant(v) => {
                v.insert(LabelEntry { value, role, source });
                true
            }
        }
    }

    pub fn get(&self, item: ItemId, attribute: usize) -> Option<&LabelEntry> {
        self.entries.get(&(item, attribute))
    }

    pub fn contains(&self, item: ItemId, attribute: usize) -> bool {
        self.entries.contains_key(&(item, attribute))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, usize, &LabelEntry)> {
        self.entries.iter().map(|(&(i, w), e)| (i, w, e))
    }

    pub fn count(&self, role: LabelRole) -> usize {
        self.entries.values().filter(|e| e.role == role).count()
    }

    /// Items with at least one `role` entry, ascending.
    pub fn items(&self, role: LabelRole) -> Vec<ItemId> {
        let mut out: Vec<ItemId> = self
            .entries
            .iter()
            .filter(|(_, e)| e.role == role)
            .map(|(&(i, _), _)| i)
            .collect();
        out.dedup();
        out
    }

    /// Label vector and mask of the `role` entries known for `item`.
    pub fn labels_for(&self, item: ItemId, role: LabelRole, num_attributes: usize) -> (Vec<u8>, Vec<bool>) {
        let mut labels = vec![0u8; num_attributes];
        let mut mask = vec![false; num_attributes];
        for (&(_, w), e) in self.entries.range((item, 0)..(item, usize::MAX)) {
            if e.role == role && w < num_attributes {
                labels[w] = e.value;
                mask[w] = true;
            }
        }
        (labels, mask)
    }

    /// `(item, label)` pairs per attribute for one role.
    pub fn by_attribute(&self, role: LabelRole, num_attributes: usize) -> Vec<Vec<(ItemId, u8)>> {
        let mut out = vec![Vec::new(); num_attributes];
        for (&(i, w), e) in &self.entries {
            if e.role == role && w < num_attributes {
                out[w].push((i, e.value));
            }
        }
        out
    }
}

impl From<Vec<LabelRecord>> for LabelStore {
    fn from(records: Vec<LabelRecord>) -> Self {
        let mut s = LabelStore::new();
        for r in records {
            s.insert(r.item, r.attribute, r.value, r.role, r.source);
        }
        s
    }
}

impl From<LabelStore> for Vec<LabelRecord> {
    fn from(store: LabelStore) -> Self {
        store
            .iter()
            .map(|(item, attribute, e)| LabelRecord {
                item,
                attribute,
                value: e.value,
                role: e.role,
                source: e.source,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let mut s = LabelStore::new();
        s.insert(3, 1, 1, LabelRole::Validation, LabelSource::Human);
        s.insert(0, 4, 0, LabelRole::Training, LabelSource::Corpus);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<LabelStore>(&text).unwrap(), s);
    }

    #[test]
    fn first_routing_wins() {
        let mut s = LabelStore::new();
        assert!(s.insert(3, 1, 1, LabelRole::Validation, LabelSource::ActiveLearning));
        assert!(!s.insert(3, 1, 0, LabelRole::Training, LabelSource::Human));
        let e = s.get(3, 1).unwrap();
        assert_eq!((e.value, e.role), (1, LabelRole::Validation));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn labels_for_masks_unknown_attributes() {
        let mut s = LabelStore::new();
        s.insert(5, 2, 1, LabelRole::Training, LabelSource::ActiveLearning);
        s.insert(5, 0, 0, LabelRole::Validation, LabelSource::ActiveLearning);
        s.insert(6, 1, 1, LabelRole::Training, LabelSource::ActiveLearning);
        let (labels, mask) = s.labels_for(5, LabelRole::Training, 3);
        assert_eq!(labels, vec![0, 0, 1]);
        assert_eq!(mask, vec![false, false, true]);
        assert_eq!(s.items(LabelRole::Training), vec![5, 6]);
        let by = s.by_attribute(LabelRole::Validation, 3);
        assert_eq!(by[0], vec![(5, 0)]);
        assert!(by[1].is_empty());
    }
}
