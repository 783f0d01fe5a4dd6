use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetTag {
    /// One mid-scan per subject.
    Md,
    /// Every scan of every subject.
    Wd,
    /// Whole-scan subjects for training and validation, mid-scans for test.
    Ad,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 3] = [DatasetTag::Md, DatasetTag::Wd, DatasetTag::Ad];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Md => "md",
            DatasetTag::Wd => "wd",
            DatasetTag::Ad => "ad",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown dataset tag `{s}` (expected md, wd or ad)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::format("manifest", format!("unknown split `{s}`")))
    }
}

/// Paths of one scan and its label mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanRef {
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// The ordered scans of one subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectScans {
    pub subject_id: String,
    scans: Vec<ScanRef>,
}

impl SubjectScans {
    /// A subject acquired with the 13- or 26-scan protocol.
    pub fn new(subject_id: impl Into<String>, scans: Vec<ScanRef>) -> Result<Self> {
        let subject_id = subject_id.into();
        if scans.len() != 13 && scans.len() != 26 {
            return Err(Error::invalid(format!("subject `{subject_id}` has {} scans; expected 13 or 26", scans.len())));
        }
        Ok(SubjectScans { subject_id, scans })
    }

    /// A subject with any non-zero number of scans. Only whole-scan pools
    /// accept these; [`select_mid_scan`] still requires 13 or 26.
    pub fn with_any_count(subject_id: impl Into<String>, scans: Vec<ScanRef>) -> Result<Self> {
        let subject_id = subject_id.into();
        if scans.is_empty() {
            return Err(Error::invalid(format!("subject `{subject_id}` has no scans")));
        }
        Ok(SubjectScans { subject_id, scans })
    }

    pub fn scans(&self) -> &[ScanRef] {
        &self.scans
    }

    pub fn scan_count(&self) -> usize {
        self.scans.len()
    }
}

/// The middle scan: number 7 of 13 or number 13 of 26 (1-based).
pub fn select_mid_scan(subject: &SubjectScans) -> Result<(usize, &ScanRef)> {
    let index = match subject.scans.len() {
        13 => 7,
        26 => 13,
        n => {
            return Err(Error::invalid(format!(
                "subject `{}` has {n} scans; mid-scan selection needs 13 or 26",
                subject.subject_id
            )))
        }
    };
    Ok((index, &subject.scans[index - 1]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestItem {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub subject_id: String,
    /// 1-based position in the subject's scan series.
    pub scan_index: usize,
    pub split: Split,
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub tag: DatasetTag,
    pub seed: u64,
    pub items: Vec<ManifestItem>,
}

/// Subjects available to [`build_manifest`]. `md` feeds mid-scan
/// datasets, `wd` feeds whole-scan datasets; AD uses both.
#[derive(Debug, Clone, Default)]
pub struct SubjectPools {
    pub md: Vec<SubjectScans>,
    pub wd: Vec<SubjectScans>,
}

fn round_share(n: usize, share: f64) -> usize {
    (n as f64 * share).round() as usize
}

/// Assigns whole groups (lists of item indices) to splits. Each group goes to
/// the split whose remaining quota is largest, ties in split order.
fn allocate(groups: &[Vec<usize>], targets: &[(Split, usize)], out: &mut [Option<Split>]) {
    let mut filled = vec![0isize; targets.len()];
    for group in groups {
        let slot = (0..targets.len())
            .max_by_key(|&i| (targets[i].1 as isize - filled[i], std::cmp::Reverse(i)))
            .expect("at least one split");
        filled[slot] += group.len() as isize;
        for &i in group {
            out[i] = Some(targets[slot].0);
        }
    }
}

struct Pending {
    scan: ScanRef,
    subject_id: String,
    scan_index: usize,
}

/// Groups item indices by subject, in a seeded random order of subjects.
fn shuffled_groups(items: &[Pending], seed: u64, label: &str) -> Vec<Vec<usize>> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_subject.entry(&it.subject_id).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_subject.into_values().collect();
    groups.shuffle(&mut rng_for(seed, label));
    groups
}

fn mid_items(subjects: &[SubjectScans]) -> Result<Vec<Pending>> {
    subjects
        .iter()
        .map(|s| {
            let (scan_index, scan) = select_mid_scan(s)?;
            Ok(Pending { scan: scan.clone(), subject_id: s.subject_id.clone(), scan_index })
        })
        .collect()
}

fn whole_items(subjects: &[SubjectScans]) -> Vec<Pending> {
    subjects
        .iter()
        .flat_map(|s| {
            s.scans.iter().enumerate().map(|(i, scan)| Pending {
                scan: scan.clone(),
                subject_id: s.subject_id.clone(),
                scan_index: i + 1,
            })
        })
        .collect()
}

fn finish(items: Vec<Pending>, splits: Vec<Option<Split>>) -> Vec<ManifestItem> {
    items
        .into_iter()
        .zip(splits)
        .map(|(p, s)| ManifestItem {
            image: p.scan.image,
            mask: p.scan.mask,
            subject_id: p.subject_id,
            scan_index: p.scan_index,
            split: s.expect("every item allocated"),
            fold: None,
        })
        .collect()
}

/// Assembles a dataset with seeded, subject-grouped splits.
///
/// MD and WD are split 70/10/20 into train/val/test. AD splits the
/// whole-scan pool 90/10 into train/val and uses every mid-scan of the MD
/// pool as test.
pub fn build_manifest(tag: DatasetTag, pools: &SubjectPools, seed: u64) -> Result<DatasetManifest> {
    let need = |pool: &[SubjectScans], name: &str| {
        if pool.is_empty() {
            Err(Error::invalid(format!("the {name} subject pool is empty")))
        } else {
            Ok(())
        }
    };
    let items = match tag {
        DatasetTag::Md | DatasetTag::Wd => {
            let items = if tag == DatasetTag::Md {
                need(&pools.md, "mid-scan")?;
                mid_items(&pools.md)?
            } else {
                need(&pools.wd, "whole-scan")?;
                whole_items(&pools.wd)
            };
            let n = items.len();
            let (train, val) = (round_share(n, 0.7), round_share(n, 0.1));
            let targets = [(Split::Train, train), (Split::Val, val), (Split::Test, n - train - val)];
            let mut splits = vec![None; n];
            allocate(&shuffled_groups(&items, seed, "manifest/split"), &targets, &mut splits);
            finish(items, splits)
        }
        DatasetTag::Ad => {
            need(&pools.md, "mid-scan")?;
            need(&pools.wd, "whole-scan")?;
            let wd = whole_items(&pools.wd);
            let n = wd.len();
            let train = round_share(n, 0.9);
            let mut splits = vec![None; n];
            allocate(&shuffled_groups(&wd, seed, "manifest/split"), &[(Split::Train, train), (Split::Val, n - train)], &mut splits);
            let md = mid_items(&pools.md)?;
            let md_splits = vec![Some(Split::Test); md.len()];
            let mut out = finish(wd, splits);
            out.extend(finish(md, md_splits));
            out
        }
    };
    Ok(DatasetManifest { tag, seed, items })
}

/// Splits `items` (grouped by subject) into `k` blocks of near-equal item
/// counts, keeping the seeded group order.
fn blocks(items: &[usize], subject: impl Fn(usize) -> String, k: usize, seed: u64, label: &str) -> Vec<Vec<Vec<usize>>> {
    let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in items {
        by_subject.entry(subject(i)).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_subject.into_values().collect();
    groups.shuffle(&mut rng_for(seed, label));
    let total = items.len();
    let mut out = vec![Vec::new(); k];
    let mut placed = 0;
    let mut block = 0;
    for g in groups {
        // Move on once this block has reached its share of the running total.
        while block + 1 < k && placed >= (block + 1) * total / k {
            block += 1;
        }
        placed += g.len();
        out[block].push(g);
    }
    out
}

/// Rotating `k`-fold partitions. The test blocks are disjoint and cover the
/// test pool (all items for MD/WD, the mid-scans for AD). For fold `i` the
/// validation set is taken from the blocks following `i` until it holds 10%
/// of the items (AD: 10% of the whole-scan pool); everything else trains.
/// Subjects never straddle splits.
pub fn kfold_splits(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<DatasetManifest>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    let all: Vec<usize> = (0..manifest.items.len()).collect();
    let subject = |i: usize| manifest.items[i].subject_id.clone();
    let (test_pool, train_pool): (Vec<usize>, Option<Vec<usize>>) = match manifest.tag {
        DatasetTag::Ad => {
            let (test, rest): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| manifest.items[i].split == Split::Test);
            (test, Some(rest))
        }
        _ => (all.clone(), None),
    };
    let subjects_in_test: std::collections::BTreeSet<String> = test_pool.iter().map(|&i| subject(i)).collect();
    if k > test_pool.len() || k > subjects_in_test.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} items / {} subjects available for testing",
            test_pool.len(),
            subjects_in_test.len()
        )));
    }
    let test_blocks = blocks(&test_pool, subject, k, seed, "kfold/test");
    let train_blocks = train_pool.as_ref().map(|p| blocks(p, subject, k, seed, "kfold/train"));

    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let mut splits: Vec<Option<Split>> = vec![None; manifest.items.len()];
        let val_target;
        let rotation: Vec<&Vec<usize>>;
        match &train_blocks {
            None => {
                for g in &test_blocks[fold] {
                    for &i in g {
                        splits[i] = Some(Split::Test);
                    }
                }
                val_target = round_share(manifest.items.len(), 0.1);
                rotation = (1..k).flat_map(|d| test_blocks[(fold + d) % k].iter()).collect();
            }
            Some(tb) => {
                for g in &test_blocks[fold] {
                    for &i in g {
                        splits[i] = Some(Split::Test);
                    }
                }
                let n_train_pool = train_pool.as_ref().map_or(0, Vec::len);
                val_target = round_share(n_train_pool, 0.1);
                rotation = (0..k).flat_map(|d| tb[(fold + d) % k].iter()).collect();
            }
        }
        let mut val = 0;
        for g in rotation {
            let to_val = val < val_target && (val + g.len()).abs_diff(val_target) <= val_target - val;
            if to_val {
                val += g.len();
            }
            for &i in g {
                splits[i] = Some(if to_val { Split::Val } else { Split::Train });
            }
        }
        let items = manifest
            .items
            .iter()
            .zip(&splits)
            .filter_map(|(it, s)| s.map(|s| ManifestItem { split: s, fold: Some(fold), ..it.clone() }))
            .collect();
        folds.push(DatasetManifest { tag: manifest.tag, seed, items });
    }
    Ok(folds)
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |it| it.split == split)
    }

    /// Item counts in train, val, test order.
    pub fn counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.split(s).count())
    }

    /// Tab-separated text: `#`-prefixed metadata, then one row per item with
    /// image_path, mask_path, subject_id, scan_index, split, fold (`-` when
    /// unset).
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# tag={}\n# seed={}\n", self.tag, self.seed);
        out += "# image_path\tmask_path\tsubject_id\tscan_index\tsplit\tfold\n";
        for it in &self.items {
            let fold = it.fold.map_or_else(|| "-".to_string(), |f| f.to_string());
            out += &format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                it.image.display(),
                it.mask.display(),
                it.subject_id,
                it.scan_index,
                it.split,
                fold
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, d: String| Error::format("manifest", format!("line {line}: {d}"));
        let mut tag = None;
        let mut seed = None;
        let mut items = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let n = n + 1;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "tag" => tag = Some(v.trim().parse::<DatasetTag>()?),
                        "seed" => seed = Some(v.trim().parse::<u64>().map_err(|e| bad(n, e.to_string()))?),
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [image, mask, subject, scan, split, fold] = cols.as_slice() else {
                return Err(bad(n, format!("expected 6 tab-separated columns, found {}", cols.len())));
            };
            items.push(ManifestItem {
                image: PathBuf::from(image),
                mask: PathBuf::from(mask),
                subject_id: subject.to_string(),
                scan_index: scan.parse().map_err(|e| bad(n, format!("scan_index: {e}")))?,
                split: split.parse()?,
                fold: match *fold {
                    "-" => None,
                    f => Some(f.parse().map_err(|e| bad(n, format!("fold: {e}")))?),
                },
            });
        }
        Ok(DatasetManifest {
            tag: tag.ok_or_else(|| Error::format("manifest", "missing `# tag=` line"))?,
            seed: seed.ok_or_else(|| Error::format("manifest", "missing `# seed=` line"))?,
            items,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; relative item paths are resolved against the
    /// manifest's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_tsv(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for it in &mut m.items {
            if it.image.is_relative() {
                it.image = base.join(&it.image);
            }
            if it.mask.is_relative() {
                it.mask = base.join(&it.mask);
            }
        }
        Ok(m)
    }
}

/// Scans a dataset directory laid out as `images/<subject>/<NN>.png` and
/// `masks/<subject>/<NN>.png`. Paths in the result are relative to `root`.
/// With `strict`, every subject must have 13 or 26 scans.
pub fn scan_dataset_dir(root: impl AsRef<Path>, strict: bool) -> Result<Vec<SubjectScans>> {
    let root = root.as_ref();
    let images = root.join("images");
    let mut subjects: Vec<String> = fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .collect();
    subjects.sort();
    let mut out = Vec::new();
    for s in subjects {
        let dir = images.join(&s);
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .filter(|n| n.ends_with(".png"))
            .collect();
        names.sort();
        let scans: Vec<ScanRef> = names
            .iter()
            .map(|n| ScanRef { image: Path::new("images").join(&s).join(n), mask: Path::new("masks").join(&s).join(n) })
            .collect();
        for scan in &scans {
            if !root.join(&scan.mask).is_file() {
                return Err(Error::invalid(format!("missing mask {}", root.join(&scan.mask).display())));
            }
        }
        out.push(if strict { SubjectScans::new(s, scans)? } else { SubjectScans::with_any_count(s, scans)? });
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("no subjects under {}", images.display())));
    }
    Ok(out)
}
