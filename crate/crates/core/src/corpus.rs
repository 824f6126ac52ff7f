//! Attribute-labelled feature corpora: synthetic generation, the
//! attribute-novelty split, and the line-delimited corpus file format.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type ItemId = u64;

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub features: Vec<f64>,
    /// Ground-truth attribute applicability, one 0/1 entry per attribute.
    pub labels: Vec<u8>,
    /// Attribute indices mentioned in the item's description, ascending.
    pub description: Vec<usize>,
}

impl Item {
    pub fn has(&self, attribute: usize) -> bool {
        self.labels[attribute] == 1
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(w, _)| w)
    }
}

/// The four split names, in the order the split procedure claims items
/// (reversed: test first).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pretrain,
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Pretrain, Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    ClassifierTraining,
    ClassifierTest,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub pretrain: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    /// Contiguous 60/10/15/15 partition by attribute index (24/4/6/6 for 40
    /// attributes). Generated corpora order attributes by decreasing
    /// frequency, so later splits receive the rarer attributes.
    pub fn proportional(num_attributes: usize) -> Self {
        let n = num_attributes as f64;
        let pre = (0.6 * n).round() as usize;
        let tr = (0.1 * n).round() as usize;
        let va = (0.15 * n).round() as usize;
        let pre = pre.min(num_attributes);
        let tr = tr.min(num_attributes - pre);
        let va = va.min(num_attributes - pre - tr);
        Partition {
            pretrain: (0..pre).collect(),
            train: (pre..pre + tr).collect(),
            val: (pre + tr..pre + tr + va).collect(),
            test: (pre + tr + va..num_attributes).collect(),
        }
    }

    pub fn attributes(&self, split: Split) -> &[usize] {
        match split {
            Split::Pretrain => &self.pretrain,
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self, num_attributes: usize) -> Result<()> {
        let mut seen = vec![false; num_attributes];
        for split in Split::ALL {
            for &w in self.attributes(split) {
                if w >= num_attributes {
                    return Err(Error::Config(format!(
                        "partition attribute {w} out of range (have {num_attributes})"
                    )));
                }
                if std::mem::replace(&mut seen[w], true) {
                    return Err(Error::Config(format!(
                        "attribute {w} appears in more than one partition set"
                    )));
                }
            }
        }
        if let Some(w) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("attribute {w} is not in any partition set")));
        }
        Ok(())
    }

    /// Which split an attribute belongs to.
    pub fn split_of(&self, attribute: usize) -> Option<Split> {
        Split::ALL
            .into_iter()
            .find(|&s| self.attributes(s).contains(&attribute))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeCatalog {
    pub names: Vec<String>,
    pub partition: Partition,
}

impl AttributeCatalog {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dim: usize,
    pub catalog: AttributeCatalog,
    pub items: Vec<Item>,
    index: HashMap<ItemId, usize>,
}

impl Corpus {
    pub fn new(dim: usize, catalog: AttributeCatalog, items: Vec<Item>) -> Result<Self> {
        catalog.partition.validate(catalog.len())?;
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            check_item(item, dim, catalog.len()).map_err(Error::Config)?;
            if index.insert(item.id, pos).is_some() {
                return Err(Error::Config(format!("duplicate item id {}", item.id)));
            }
        }
        Ok(Corpus {
            dim,
            catalog,
            items,
            index,
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.catalog.len()
    }

    pub fn item(&self, id: ItemId) -> &Item {
        &self.items[self.index[&id]]
    }

    pub fn get(&self, id: ItemId) -> Option<&Item> {
        self.index.get(&id).map(|&p| &self.items[p])
    }

    pub fn ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|i| i.id).collect()
    }
}

fn check_item(item: &Item, dim: usize, num_attributes: usize) -> std::result::Result<(), String> {
    if item.features.len() != dim {
        return Err(format!(
            "item {}: {} features, expected {dim}",
            item.id,
            item.features.len()
        ));
    }
    if item.labels.len() != num_attributes {
        return Err(format!(
            "item {}: {} labels, expected {num_attributes}",
            item.id,
            item.labels.len()
        ));
    }
    if item.features.iter().any(|x| !x.is_finite()) {
        return Err(format!("item {}: non-finite feature", item.id));
    }
    if item.labels.iter().any(|&l| l > 1) {
        return Err(format!("item {}: labels must be 0 or 1", item.id));
    }
    for &w in &item.description {
        if w >= num_attributes || item.labels[w] != 1 {
            return Err(format!(
                "item {}: description attribute {w} is not a positive label",
                item.id
            ));
        }
    }
    Ok(())
}

/// Per-attribute positive rate `max_frequency / (rank + 1)^exponent`, floored
/// at `min_frequency`; attribute index is its rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyLaw {
    pub max_frequency: f64,
    pub exponent: f64,
    pub min_frequency: f64,
}

impl FrequencyLaw {
    pub fn frequency(&self, rank: usize) -> f64 {
        (self.max_frequency / ((rank + 1) as f64).powf(self.exponent)).max(self.min_frequency)
    }
}

/// Description sizes are drawn uniformly from `min..=max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptionSizeLaw {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub dim: usize,
    pub num_attributes: usize,
    pub item_count: usize,
    pub frequency: FrequencyLaw,
    pub noise_scale: f64,
    pub description_size: DescriptionSizeLaw,
    /// Explicit attribute partition; proportional 60/10/15/15 when absent.
    pub partition: Option<Partition>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            dim: 64,
            num_attributes: 40,
            item_count: 4000,
            frequency: FrequencyLaw {
                max_frequency: 0.5,
                exponent: 0.7,
                min_frequency: 0.005,
            },
            noise_scale: 0.1,
            description_size: DescriptionSizeLaw { min: 1, max: 3 },
            partition: None,
        }
    }
}

const MAX_RESAMPLES: usize = 1000;

/// Generates a synthetic corpus. Each attribute owns a random unit prototype
/// direction; an item's features are the sum of its positive attributes'
/// prototypes plus isotropic Gaussian noise, L2-normalised.
pub fn generate_corpus(config: &GenConfig, seed: u64) -> Result<Corpus> {
    let (dim, n_attr, n_items) = (config.dim, config.num_attributes, config.item_count);
    if dim < 1 {
        return Err(Error::Config("feature dimension must be at least 1".into()));
    }
    if n_attr < 2 {
        return Err(Error::Config("need at least 2 attributes".into()));
    }
    if n_items < n_attr {
        return Err(Error::Config(format!(
            "item_count ({n_items}) must be at least the number of attributes ({n_attr})"
        )));
    }
    let law = &config.description_size;
    if law.min > law.max {
        return Err(Error::Config("description size law has min > max".into()));
    }
    if !(config.noise_scale >= 0.0 && config.noise_scale.is_finite()) {
        return Err(Error::Config("noise_scale must be finite and non-negative".into()));
    }
    let partition = config
        .partition
        .clone()
        .unwrap_or_else(|| Partition::proportional(n_attr));
    partition.validate(n_attr)?;

    let mut proto_rng = rng::stream(seed, &[0]);
    let prototypes: Vec<Vec<f64>> = (0..n_attr).map(|_| random_unit(&mut proto_rng, dim)).collect();

    let mut label_rng = rng::stream(seed, &[1]);
    let mut labels = vec![vec![0u8; n_attr]; n_items];
    for w in 0..n_attr {
        let f = config.frequency.frequency(w);
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Generation(format!(
                "attribute {w} has frequency {f}, outside (0, 1]"
            )));
        }
        let mut tries = 0;
        loop {
            let mut count = 0;
            for row in labels.iter_mut() {
                let on = label_rng.random::<f64>() < f;
                row[w] = on as u8;
                count += on as usize;
            }
            if count >= 2 {
                break;
            }
            tries += 1;
            if tries >= MAX_RESAMPLES {
                return Err(Error::Generation(format!(
                    "attribute {w} could not reach 2 positives in {MAX_RESAMPLES} resamples"
                )));
            }
        }
    }

    let mut item_rng = rng::stream(seed, &[2]);
    let items = labels
        .into_iter()
        .enumerate()
        .map(|(id, labels)| {
            let mut features: Vec<f64> = (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut item_rng);
                    config.noise_scale * z
                })
                .collect();
            for (w, _) in labels.iter().enumerate().filter(|(_, &l)| l == 1) {
                for (x, p) in features.iter_mut().zip(&prototypes[w]) {
                    *x += p;
                }
            }
            normalize(&mut features);
            let mut positives: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == 1)
                .map(|(w, _)| w)
                .collect();
            let size = item_rng.random_range(law.min..=law.max).min(positives.len());
            positives.shuffle(&mut item_rng);
            let mut description = positives[..size].to_vec();
            description.sort_unstable();
            Item {
                id: id as ItemId,
                features,
                labels,
                description,
            }
        })
        .collect();

    let catalog = AttributeCatalog {
        names: (0..n_attr).map(|w| format!("attr_{w:03}")).collect(),
        partition,
    };
    Corpus::new(dim, catalog, items)
}

fn random_unit(rng: &mut rng::Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if normalize(&mut v) {
            return v;
        }
    }
}

/// Scales to unit length; returns false (leaving `v` untouched) for a zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
        true
    } else {
        false
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub items: Vec<ItemId>,
    pub classifier_training: Vec<ItemId>,
    pub classifier_test: Vec<ItemId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub pretrain: SplitSet,
    pub train: SplitSet,
    pub val: SplitSet,
    pub test: SplitSet,
}

impl SplitCorpus {
    pub fn set(&self, split: Split) -> &SplitSet {
        match split {
            Split::Pretrain => &self.pretrain,
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn set_mut(&mut self, split: Split) -> &mut SplitSet {
        match split {
            Split::Pretrain => &mut self.pretrain,
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Splits every set into classifier_training / classifier_test subsets.
    pub fn with_classifier_subsets(mut self, ratio: f64, seed: u64) -> Self {
        for (k, split) in Split::ALL.into_iter().enumerate() {
            let set = self.set_mut(split);
            let (tr, te) = split_classifier_subsets(&set.items, ratio, seed.wrapping_add(k as u64));
            set.classifier_training = tr;
            set.classifier_test = te;
        }
        self
    }

    pub fn to_sidecar(&self) -> BTreeMap<ItemId, SplitAssignment> {
        let mut out = BTreeMap::new();
        for split in Split::ALL {
            let set = self.set(split);
            for &id in &set.classifier_training {
                out.insert(
                    id,
                    SplitAssignment {
                        split,
                        subset: Subset::ClassifierTraining,
                    },
                );
            }
            for &id in &set.classifier_test {
                out.insert(
                    id,
                    SplitAssignment {
                        split,
                        subset: Subset::ClassifierTest,
                    },
                );
            }
        }
        out
    }

    pub fn from_sidecar(sidecar: &BTreeMap<ItemId, SplitAssignment>) -> Self {
        let mut out = SplitCorpus::default();
        for (&id, a) in sidecar {
            let set = out.set_mut(a.split);
            set.items.push(id);
            match a.subset {
                Subset::ClassifierTraining => set.classifier_training.push(id),
                Subset::ClassifierTest => set.classifier_test.push(id),
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &self.to_sidecar())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let sidecar: BTreeMap<ItemId, SplitAssignment> = serde_json::from_reader(BufReader::new(file))?;
        Ok(Self::from_sidecar(&sidecar))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub split: Split,
    pub subset: Subset,
}

/// Assigns items to the four policy splits: items with a positive label for
/// any test attribute form the test set, then val among the remainder, then
/// train; everything left is pretrain.
pub fn split_by_attributes(corpus: &Corpus, partition: &Partition) -> SplitCorpus {
    let claim_order = [Split::Test, Split::Val, Split::Train];
    let mut out = SplitCorpus::default();
    for item in &corpus.items {
        let split = claim_order
            .into_iter()
            .find(|&s| partition.attributes(s).iter().any(|&w| item.has(w)))
            .unwrap_or(Split::Pretrain);
        out.set_mut(split).items.push(item.id);
    }
    out
}

/// Uniform random split; the first `round(ratio * n)` shuffled items go to
/// classifier_training. Both halves are returned sorted by id.
pub fn split_classifier_subsets(items: &[ItemId], ratio: f64, seed: u64) -> (Vec<ItemId>, Vec<ItemId>) {
    let ratio = ratio.clamp(0.0, 1.0);
    let mut shuffled = items.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut rng::stream(seed, &[3]));
    let n_train = (ratio * items.len() as f64).round() as usize;
    let mut test = shuffled.split_off(n_train);
    shuffled.sort_unstable();
    test.sort_unstable();
    (shuffled, test)
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    #[serde(rename = "D")]
    dim: usize,
    num_attributes: usize,
    attribute_names: Vec<String>,
    partition: Partition,
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        version: CORPUS_FORMAT_VERSION,
        dim: corpus.dim,
        num_attributes: corpus.num_attributes(),
        attribute_names: corpus.catalog.names.clone(),
        partition: corpus.catalog.partition.clone(),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    for item in &corpus.items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Loads a corpus file. Errors carry the 1-based line number of the bad record.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header: Header = match lines.next() {
        Some(line) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, format!("bad header: {e}")))?
        }
        None => return Err(parse_err(1, "missing header".into())),
    };
    if header.version != CORPUS_FORMAT_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }
    if header.attribute_names.len() != header.num_attributes {
        return Err(parse_err(
            1,
            "attribute_names length differs from num_attributes".into(),
        ));
    }
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: Item = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        check_item(&item, header.dim, header.num_attributes).map_err(|m| parse_err(line_no, m))?;
        if !ids.insert(item.id) {
            return Err(parse_err(line_no, format!("duplicate item id {}", item.id)));
        }
        items.push(item);
    }
    let catalog = AttributeCatalog {
        names: header.attribute_names,
        partition: header.partition,
    };
    Corpus::new(header.dim, catalog, items).map_err(|e| parse_err(1, e.to_string()))
}
