//! Paired two-modality datasets and the batch samplers used in training.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::idx::{read_idx, write_idx, IdxArray, IdxData, RawImageCorpus};
use super::image::{prepare_image, rotate90_square};
use super::DataError;
use crate::tensor::Tensor;

/// Two aligned corpora: row `i` of `items1` is synchronous with row `i` of
/// `items2`. Only rows with `paired_mask[i]` may feed the synchronous losses.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub items1: Tensor,
    pub items2: Tensor,
    pub pair_id: Vec<usize>,
    /// Concept index of each pair, for evaluation only.
    pub concept: Option<Vec<usize>>,
    pub paired_mask: Vec<bool>,
    /// Grid layout `[rows, cols]` of each modality, used for rendering.
    pub shapes: [[usize; 2]; 2],
}

impl PairedDataset {
    pub fn new(
        items1: Tensor,
        items2: Tensor,
        concept: Option<Vec<usize>>,
        paired_mask: Vec<bool>,
        shapes: [[usize; 2]; 2],
    ) -> Result<Self, DataError> {
        let n = items1.rows();
        let ok = items1.shape().len() == 2
            && items2.shape().len() == 2
            && items2.rows() == n
            && paired_mask.len() == n
            && concept.as_ref().is_none_or(|c| c.len() == n);
        if !ok {
            return Err(DataError::Invalid(format!(
                "misaligned dataset: items {:?}/{:?}, mask {}, concepts {:?}",
                items1.shape(),
                items2.shape(),
                paired_mask.len(),
                concept.as_ref().map(Vec::len)
            )));
        }
        for (m, items) in [&items1, &items2].into_iter().enumerate() {
            if shapes[m][0] * shapes[m][1] != items.cols() {
                return Err(DataError::Invalid(format!(
                    "modality {} layout {:?} does not cover {} values",
                    m + 1,
                    shapes[m],
                    items.cols()
                )));
            }
            if let Some(v) = items.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(DataError::Invalid(format!(
                    "modality {} value {v} outside [-1, 1]",
                    m + 1
                )));
            }
        }
        Ok(Self {
            items1,
            items2,
            pair_id: (0..n).collect(),
            concept,
            paired_mask,
            shapes,
        })
    }

    pub fn len(&self) -> usize {
        self.items1.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.items1.cols(), self.items2.cols()]
    }

    pub fn items(&self, modality: usize) -> &Tensor {
        if modality == 0 {
            &self.items1
        } else {
            &self.items2
        }
    }

    /// Indices whose pairing information is available.
    pub fn paired_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.paired_mask[i]).collect()
    }

    /// Redraws the mask so that `round(rate · N)` uniformly chosen pairs are usable.
    pub fn apply_semi_rate<R: Rng + ?Sized>(&mut self, rate: f64, rng: &mut R) -> Result<(), DataError> {
        self.paired_mask = semi_mask(self.len(), rate, rng)?;
        Ok(())
    }

    /// Rows at `idx`, re-numbered from zero.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            items1: self.items1.select_rows(idx),
            items2: self.items2.select_rows(idx),
            pair_id: (0..idx.len()).collect(),
            concept: self.concept.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
            paired_mask: idx.iter().map(|&i| self.paired_mask[i]).collect(),
            shapes: self.shapes,
        }
    }

    pub fn save(&self, dir: &Path, manifest: &DatasetManifest) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let n = self.len();
        for (name, items) in [("items1.idx", &self.items1), ("items2.idx", &self.items2)] {
            let arr = IdxArray::new(items.shape().to_vec(), IdxData::F64(items.data().to_vec()))?;
            write_idx(&dir.join(name), &arr)?;
        }
        let ids = self.pair_id.iter().map(|&i| i as i32).collect();
        write_idx(&dir.join("pair_id.idx"), &IdxArray::new(vec![n], IdxData::I32(ids))?)?;
        let mask = self.paired_mask.iter().map(|&b| b as u8).collect();
        write_idx(
            &dir.join("paired_mask.idx"),
            &IdxArray::new(vec![n], IdxData::U8(mask))?,
        )?;
        if let Some(c) = &self.concept {
            let c = c.iter().map(|&i| i as i32).collect();
            write_idx(&dir.join("concept.idx"), &IdxArray::new(vec![n], IdxData::I32(c))?)?;
        }
        let json = serde_json::to_string_pretty(manifest)?;
        let p = dir.join("dataset.json");
        fs::write(&p, json).map_err(|e| DataError::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, DatasetManifest), DataError> {
        let p = dir.join("dataset.json");
        let text = fs::read_to_string(&p).map_err(|e| DataError::io(&p, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let matrix = |name: &str| -> Result<Tensor, DataError> {
            let arr = read_idx(&dir.join(name))?;
            if arr.dims.len() != 2 {
                return Err(DataError::Invalid(format!(
                    "{name}: expected a 2-D array, got {:?}",
                    arr.dims
                )));
            }
            Ok(Tensor::new(arr.dims.clone(), arr.data.to_f64())?)
        };
        let items1 = matrix("items1.idx")?;
        let items2 = matrix("items2.idx")?;
        let mask = read_idx(&dir.join("paired_mask.idx"))?.data.to_f64();
        let concept_path = dir.join("concept.idx");
        let concept = if concept_path.exists() {
            Some(
                read_idx(&concept_path)?
                    .data
                    .to_f64()
                    .into_iter()
                    .map(|v| v as usize)
                    .collect(),
            )
        } else {
            None
        };
        let mut ds = Self::new(
            items1,
            items2,
            concept,
            mask.iter().map(|&v| v != 0.0).collect(),
            manifest.shapes,
        )?;
        ds.pair_id = read_idx(&dir.join("pair_id.idx"))?
            .data
            .to_f64()
            .into_iter()
            .map(|v| v as usize)
            .collect();
        if ds.pair_id.len() != ds.len() {
            return Err(DataError::Invalid("pair_id length differs from item count".into()));
        }
        Ok((ds, manifest))
    }
}

/// Everything needed to describe (and rebuild) a serialized dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: String,
    pub n_pairs: usize,
    pub semi_rate: f64,
    pub seed: u64,
    pub shapes: [[usize; 2]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_map: Option<ClassMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies_hz: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_pool: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPair {
    pub concept: usize,
    pub class1: u8,
    pub class2: u8,
    pub name1: String,
    pub name2: String,
}

/// Concept index → (class in corpus 1, class in corpus 2).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassMap(pub Vec<ClassPair>);

const FASHION_NAMES: [&str; 10] = [
    "T-shirt/top",
    "Trouser",
    "Pullover",
    "Dress",
    "Coat",
    "Sandal",
    "Shirt",
    "Sneaker",
    "Bag",
    "Ankle boot",
];

impl ClassMap {
    /// Digit `i` of MNIST pairs with Fashion-MNIST class `i`.
    pub fn mnist_fashion() -> Self {
        ClassMap(
            FASHION_NAMES
                .iter()
                .enumerate()
                .map(|(i, name)| ClassPair {
                    concept: i,
                    class1: i as u8,
                    class2: i as u8,
                    name1: i.to_string(),
                    name2: name.to_string(),
                })
                .collect(),
        )
    }

    /// The same class on both sides, concepts numbered in order.
    pub fn identity(classes: &[u8]) -> Self {
        ClassMap(
            classes
                .iter()
                .enumerate()
                .map(|(i, &c)| ClassPair {
                    concept: i,
                    class1: c,
                    class2: c,
                    name1: c.to_string(),
                    name2: c.to_string(),
                })
                .collect(),
        )
    }

    /// Keeps the entries whose corpus-1 class is listed, renumbering concepts.
    pub fn restrict(&self, classes: &[u8]) -> Self {
        ClassMap(
            self.0
                .iter()
                .filter(|p| classes.contains(&p.class1))
                .enumerate()
                .map(|(i, p)| ClassPair {
                    concept: i,
                    ..p.clone()
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `round(rate · n)` uniformly chosen `true` entries.
pub fn semi_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Result<Vec<bool>, DataError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DataError::Invalid(format!(
            "semi-supervised rate {rate} outside [0, 1]"
        )));
    }
    let k = ((rate * n as f64).round() as usize).min(n);
    let mut mask = vec![false; n];
    for i in index::sample(rng, n, k) {
        mask[i] = true;
    }
    Ok(mask)
}

fn prepare_rows(corpus: &RawImageCorpus, idx: &[usize], size: usize) -> Result<Tensor, DataError> {
    let mut data = Vec::with_capacity(idx.len() * size * size);
    for &i in idx {
        data.extend(prepare_image(corpus.image(i), corpus.height, corpus.width, size)?);
    }
    Ok(Tensor::new(vec![idx.len(), size * size], data)?)
}

/// Pairs two labelled corpora through `class_map`.
///
/// Pairs are spread evenly over the mapped concepts (the first `n % k`
/// concepts get one extra); within a concept, items are drawn without
/// replacement from each corpus's class bucket. Pair order is shuffled.
pub fn build_paired_dataset<R: Rng + ?Sized>(
    corpus1: &RawImageCorpus,
    corpus2: &RawImageCorpus,
    class_map: &ClassMap,
    n_pairs: usize,
    semi_rate: f64,
    image_size: usize,
    rng: &mut R,
) -> Result<PairedDataset, DataError> {
    if class_map.is_empty() {
        return Err(DataError::Invalid("class map is empty".into()));
    }
    let k = class_map.len();
    let mut pairs: Vec<(usize, usize, usize)> = Vec::with_capacity(n_pairs);
    for (ci, entry) in class_map.0.iter().enumerate() {
        let needed = n_pairs / k + usize::from(ci < n_pairs % k);
        let mut buckets = Vec::with_capacity(2);
        for (corpus_no, (corpus, class)) in [(corpus1, entry.class1), (corpus2, entry.class2)]
            .into_iter()
            .enumerate()
        {
            let mut bucket: Vec<usize> = (0..corpus.count()).filter(|&i| corpus.labels[i] == class).collect();
            if bucket.is_empty() {
                return Err(DataError::EmptyClass {
                    class: entry.concept,
                    corpus: corpus_no + 1,
                });
            }
            if bucket.len() < needed {
                return Err(DataError::InsufficientSupply {
                    class: entry.concept,
                    needed,
                    available: bucket.len(),
                });
            }
            bucket.shuffle(rng);
            bucket.truncate(needed);
            buckets.push(bucket);
        }
        pairs.extend(buckets[0].iter().zip(&buckets[1]).map(|(&a, &b)| (entry.concept, a, b)));
    }
    pairs.shuffle(rng);

    let idx1: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let idx2: Vec<usize> = pairs.iter().map(|p| p.2).collect();
    let items1 = prepare_rows(corpus1, &idx1, image_size)?;
    let items2 = prepare_rows(corpus2, &idx2, image_size)?;
    let concept = pairs.iter().map(|p| p.0).collect();
    let mask = semi_mask(n_pairs, semi_rate, rng)?;
    let s = [image_size, image_size];
    PairedDataset::new(items1, items2, Some(concept), mask, [s, s])
}

/// Pairs each chosen image with its own 90° counter-clockwise rotation.
/// Concepts are positions of the labels in `classes`.
pub fn build_rotated_dataset<R: Rng + ?Sized>(
    corpus: &RawImageCorpus,
    classes: &[u8],
    n_pairs: usize,
    semi_rate: f64,
    image_size: usize,
    rng: &mut R,
) -> Result<PairedDataset, DataError> {
    let (h, w) = (corpus.height, corpus.width);
    if h != w {
        return Err(DataError::NotSquare { height: h, width: w });
    }
    let pool: Vec<usize> = (0..corpus.count())
        .filter(|&i| classes.contains(&corpus.labels[i]))
        .collect();
    if n_pairs > pool.len() {
        return Err(DataError::InsufficientSupply {
            class: usize::MAX,
            needed: n_pairs,
            available: pool.len(),
        });
    }
    let chosen: Vec<usize> = index::sample(rng, pool.len(), n_pairs)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    let mut d1 = Vec::with_capacity(n_pairs * image_size * image_size);
    let mut d2 = Vec::with_capacity(d1.capacity());
    for &i in &chosen {
        let img = corpus.image(i);
        d1.extend(prepare_image(img, h, w, image_size)?);
        d2.extend(prepare_image(&rotate90_square(img, h), h, w, image_size)?);
    }
    let dim = image_size * image_size;
    let concept = chosen
        .iter()
        .map(|&i| classes.iter().position(|&c| c == corpus.labels[i]).expect("filtered"))
        .collect();
    let mask = semi_mask(n_pairs, semi_rate, rng)?;
    let s = [image_size, image_size];
    PairedDataset::new(
        Tensor::new(vec![n_pairs, dim], d1)?,
        Tensor::new(vec![n_pairs, dim], d2)?,
        Some(concept),
        mask,
        [s, s],
    )
}

/// Independent uniform rows from each modality, ignoring the mask.
pub fn sample_unpaired<R: Rng + ?Sized>(ds: &PairedDataset, batch: usize, rng: &mut R) -> (Tensor, Tensor) {
    let n = ds.len();
    let i1: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
    let i2: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
    (ds.items1.select_rows(&i1), ds.items2.select_rows(&i2))
}

/// Synchronous real pairs `(x1^i, x2^i)` drawn from the paired pool.
pub fn sample_sync_real_pairs<R: Rng + ?Sized>(
    ds: &PairedDataset,
    batch: usize,
    rng: &mut R,
) -> Result<(Tensor, Tensor), DataError> {
    let pool = ds.paired_indices();
    if pool.is_empty() {
        return Err(DataError::TooFewPaired { available: 0 });
    }
    let idx: Vec<usize> = (0..batch).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    Ok((ds.items1.select_rows(&idx), ds.items2.select_rows(&idx)))
}

/// Asynchronous real pairs `(x1^i, x2^j)`, `i ≠ j`, both from the paired
/// pool. Pairs that happen to share a concept are kept.
pub fn sample_async_real_pairs<R: Rng + ?Sized>(
    ds: &PairedDataset,
    batch: usize,
    rng: &mut R,
) -> Result<(Tensor, Tensor, Vec<(usize, usize)>), DataError> {
    let pool = ds.paired_indices();
    if pool.len() < 2 {
        return Err(DataError::TooFewPaired { available: pool.len() });
    }
    let pairs: Vec<(usize, usize)> = (0..batch)
        .map(|_| {
            let a = rng.random_range(0..pool.len());
            let mut b = rng.random_range(0..pool.len() - 1);
            if b >= a {
                b += 1;
            }
            (pool[a], pool[b])
        })
        .collect();
    let i1: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let i2: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    Ok((ds.items1.select_rows(&i1), ds.items2.select_rows(&i2), pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_corpus(per_class: usize, classes: u8, side: usize) -> RawImageCorpus {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for k in 0..per_class {
                images.extend((0..side * side).map(|p| ((c as usize * 40 + k + p) % 256) as u8));
                labels.push(c);
            }
        }
        RawImageCorpus::new(images, labels, side, side).unwrap()
    }

    fn toy_dataset(n: usize, classes: usize) -> PairedDataset {
        let items = Tensor::zeros(vec![n, 4]);
        let concept = (0..n).map(|i| i % classes).collect();
        PairedDataset::new(items.clone(), items, Some(concept), vec![true; n], [[2, 2], [2, 2]]).unwrap()
    }

    #[test]
    fn table_one_mapping() {
        let m = ClassMap::mnist_fashion();
        assert_eq!(m.len(), 10);
        assert_eq!(m.0[3].name1, "3");
        assert_eq!(m.0[3].name2, "Dress");
        assert_eq!(m.0[0].name2, "T-shirt/top");
        assert_eq!(m.0[9].name2, "Ankle boot");
    }

    #[test]
    fn paired_concepts_follow_class_map() {
        let c1 = toy_corpus(20, 4, 4);
        let c2 = toy_corpus(20, 4, 4);
        // concept i pairs class i with class 3 - i
        let map = ClassMap(
            (0..4u8)
                .map(|i| ClassPair {
                    concept: i as usize,
                    class1: i,
                    class2: 3 - i,
                    name1: String::new(),
                    name2: String::new(),
                })
                .collect(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = build_paired_dataset(&c1, &c2, &map, 30, 1.0, 4, &mut rng).unwrap();
        assert_eq!(ds.len(), 30);
        assert!(ds.paired_mask.iter().all(|&b| b));
        let concept = ds.concept.as_ref().unwrap();
        for i in 0..ds.len() {
            let ci = concept[i] as u8;
            // the pixel pattern encodes the class: first pixel = (40·class + k) mod 256
            let p1 = ((ds.items1.row(i)[0] + 1.0) * 127.5).round() as usize;
            let p2 = ((ds.items2.row(i)[0] + 1.0) * 127.5).round() as usize;
            assert_eq!(p1 / 40, ci as usize);
            assert_eq!(p2 / 40, (3 - ci) as usize);
        }
        let again = build_paired_dataset(&c1, &c2, &map, 30, 1.0, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn empty_bucket_and_supply_errors() {
        let c1 = toy_corpus(5, 2, 4);
        let map = ClassMap::identity(&[0, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            build_paired_dataset(&c1, &c1, &map, 6, 1.0, 4, &mut rng),
            Err(DataError::EmptyClass { class: 2, corpus: 1 })
        ));
        let map = ClassMap::identity(&[0, 1]);
        assert!(matches!(
            build_paired_dataset(&c1, &c1, &map, 12, 1.0, 4, &mut rng),
            Err(DataError::InsufficientSupply {
                needed: 6,
                available: 5,
                ..
            })
        ));
    }

    #[test]
    fn semi_mask_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = semi_mask(30000, 0.4, &mut rng).unwrap();
        let k = m.iter().filter(|&&b| b).count();
        assert!((11999..=12001).contains(&k), "{k}");
        assert!(semi_mask(10, 1.0, &mut rng).unwrap().iter().all(|&b| b));
        assert!(semi_mask(10, 0.0, &mut rng).unwrap().iter().all(|&b| !b));
        assert!(semi_mask(10, 1.5, &mut rng).is_err());
    }

    #[test]
    fn rotated_pairs_are_exact_rotations() {
        let c = toy_corpus(10, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = build_rotated_dataset(&c, &[0, 1], 12, 0.5, 4, &mut rng).unwrap();
        for i in 0..ds.len() {
            let a = ds.items1.row(i).to_vec();
            let b = ds.items2.row(i).to_vec();
            assert_eq!(rotate90_square(&a, 4), b);
        }
        assert_eq!(ds.paired_indices().len(), 6);
    }

    #[test]
    fn async_pairs_never_match() {
        let ds = toy_dataset(50, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, _, pairs) = sample_async_real_pairs(&ds, 500, &mut rng).unwrap();
        assert!(pairs.iter().all(|(i, j)| i != j));
    }

    #[test]
    fn two_entry_pool_yields_only_cross_pairs() {
        let mut ds = toy_dataset(5, 1);
        ds.paired_mask = vec![false, true, false, true, false];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, _, pairs) = sample_async_real_pairs(&ds, 200, &mut rng).unwrap();
        assert!(pairs.iter().all(|&p| p == (1, 3) || p == (3, 1)));
        assert!(pairs.contains(&(1, 3)) && pairs.contains(&(3, 1)));
    }

    #[test]
    fn too_few_paired_rejected() {
        let mut ds = toy_dataset(5, 1);
        ds.paired_mask = vec![false, true, false, false, false];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            sample_async_real_pairs(&ds, 2, &mut rng),
            Err(DataError::TooFewPaired { available: 1 })
        ));
    }

    #[test]
    fn async_concept_sharing_rate() {
        // 10 balanced concepts: P(same concept | i ≠ j) = 99/999 ≈ 0.099.
        let ds = toy_dataset(1000, 10);
        let concept = ds.concept.clone().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut same = 0;
        let draws = 100_000;
        for _ in 0..(draws / 1000) {
            let (_, _, pairs) = sample_async_real_pairs(&ds, 1000, &mut rng).unwrap();
            same += pairs.iter().filter(|(i, j)| concept[*i] == concept[*j]).count();
        }
        let rate = same as f64 / draws as f64;
        assert!((rate - 0.0991).abs() < 0.005, "{rate}");
    }

    #[test]
    fn values_outside_unit_range_rejected() {
        let bad = Tensor::new(vec![1, 1], vec![1.5]).unwrap();
        assert!(PairedDataset::new(bad.clone(), bad, None, vec![true], [[1, 1], [1, 1]]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = toy_corpus(6, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = build_rotated_dataset(&c, &[0, 1], 10, 0.4, 4, &mut rng).unwrap();
        let manifest = DatasetManifest {
            kind: "rot90".into(),
            n_pairs: 10,
            semi_rate: 0.4,
            seed: 6,
            shapes: ds.shapes,
            image_size: Some(4),
            class_map: Some(ClassMap::identity(&[0, 1])),
            frequencies_hz: None,
            audio_pool: None,
        };
        ds.save(dir.path(), &manifest).unwrap();
        let (back, m) = PairedDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(m, manifest);
    }
}
