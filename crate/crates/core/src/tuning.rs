//! Exhaustive grid search over the tree-ensemble size parameters, scored by
//! mean NRMSE on a fixed validation set.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::LoadedImage;
use crate::error::{Error, Result};
use crate::evaluation::evaluate_model;
use crate::regressor::{serialize, train, TrainParams};

/// The searched axes, in enumeration order (the last varies fastest).
pub const GRID_AXES: [&str; 4] = [
    "trees_per_cascade",
    "tree_depth",
    "min_samples_per_leaf",
    "feature_pool_size",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub trees_per_cascade: Vec<usize>,
    pub tree_depth: Vec<usize>,
    pub min_samples_per_leaf: Vec<usize>,
    pub feature_pool_size: Vec<usize>,
    /// Values for every other parameter. Its `seed` is ignored; each
    /// permutation trains with `seed + index` (wrapping).
    pub base: TrainParams,
    pub seed: u64,
}

impl Default for GridSpec {
    /// 4 × 5 × 4 × 5 = 400 permutations around the default parameters.
    fn default() -> Self {
        Self {
            trees_per_cascade: vec![100, 200, 300, 500],
            tree_depth: vec![2, 3, 4, 5, 6],
            min_samples_per_leaf: vec![1, 5, 10, 20],
            feature_pool_size: vec![100, 200, 400, 600, 800],
            base: TrainParams::default(),
            seed: 0,
        }
    }
}

impl GridSpec {
    /// A grid holding exactly the values of `params`.
    pub fn single(params: TrainParams) -> Self {
        Self {
            trees_per_cascade: vec![params.trees_per_cascade],
            tree_depth: vec![params.tree_depth],
            min_samples_per_leaf: vec![params.min_samples_per_leaf],
            feature_pool_size: vec![params.feature_pool_size],
            base: params,
            seed: params.seed,
        }
    }

    /// Parses `key=v1,v2,…` lines. The four axes take lists; `seed` sets the
    /// grid seed; any other training parameter takes a single value. Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = GridSpec::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n + 1, "expected key=value"))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(n + 1, format!("duplicate key {key:?}")));
            }
            let list = || -> Result<Vec<usize>> {
                value
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse()
                            .map_err(|_| Error::parse(n + 1, format!("{key}: cannot parse {v:?}")))
                    })
                    .collect()
            };
            match key {
                "trees_per_cascade" => grid.trees_per_cascade = list()?,
                "tree_depth" => grid.tree_depth = list()?,
                "min_samples_per_leaf" => grid.min_samples_per_leaf = list()?,
                "feature_pool_size" => grid.feature_pool_size = list()?,
                "seed" => {
                    grid.seed = value
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(n + 1, format!("seed: cannot parse {value:?}")))?
                }
                _ => grid
                    .base
                    .set(key, value)
                    .map_err(|e| Error::parse(n + 1, e.to_string()))?,
            }
        }
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = format!(
            "trees_per_cascade={}\ntree_depth={}\nmin_samples_per_leaf={}\nfeature_pool_size={}\nseed={}\n",
            join(&self.trees_per_cascade),
            join(&self.tree_depth),
            join(&self.min_samples_per_leaf),
            join(&self.feature_pool_size),
            self.seed
        );
        for (k, v) in self.base.to_key_values() {
            if !GRID_AXES.contains(&k) && k != "seed" {
                out.push_str(&format!("{k}={v}\n"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in self.axes() {
            if list.is_empty() {
                return Err(Error::InvalidGrid(format!("{name} has no values")));
            }
        }
        Ok(())
    }

    fn axes(&self) -> [(&'static str, &[usize]); 4] {
        [
            (GRID_AXES[0], &self.trees_per_cascade),
            (GRID_AXES[1], &self.tree_depth),
            (GRID_AXES[2], &self.min_samples_per_leaf),
            (GRID_AXES[3], &self.feature_pool_size),
        ]
    }

    pub fn len(&self) -> usize {
        self.axes().iter().map(|(_, l)| l.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameters of permutation `index` (mixed-radix, last axis fastest).
    pub fn permutation(&self, index: usize) -> TrainParams {
        let mut rest = index;
        let mut pick = [0usize; 4];
        for (slot, (_, list)) in pick.iter_mut().zip(self.axes()).rev() {
            *slot = list[rest % list.len()];
            rest /= list.len();
        }
        TrainParams {
            trees_per_cascade: pick[0],
            tree_depth: pick[1],
            min_samples_per_leaf: pick[2],
            feature_pool_size: pick[3],
            seed: self.seed.wrapping_add(index as u64),
            ..self.base
        }
    }

    pub fn permutations(&self) -> Vec<TrainParams> {
        (0..self.len()).map(|i| self.permutation(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationRecord {
    pub index: usize,
    pub params: TrainParams,
    /// Mean validation NRMSE, percent.
    pub nrmse: f64,
    pub seconds: f64,
    pub model_bytes: usize,
}

impl PermutationRecord {
    fn axis_key(&self) -> [usize; 4] {
        let p = &self.params;
        [p.trees_per_cascade, p.tree_depth, p.min_samples_per_leaf, p.feature_pool_size]
    }

    /// Lower NRMSE, then fewer model bytes, then lexicographically smaller
    /// axis values.
    fn rank(&self, other: &Self) -> Ordering {
        self.nrmse
            .total_cmp(&other.nrmse)
            .then(self.model_bytes.cmp(&other.model_bytes))
            .then(self.axis_key().cmp(&other.axis_key()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    /// Ordered by permutation index.
    pub records: Vec<PermutationRecord>,
    /// Index into `records`.
    pub winner: usize,
}

impl TuneResult {
    pub fn winner(&self) -> &PermutationRecord {
        &self.records[self.winner]
    }

    /// One row per permutation and a final `winner` row. Wall-clock times
    /// are left out so identical searches give identical files; see
    /// [`TuneResult::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["index".to_string()];
        header.extend(TrainParams::default().to_key_values().into_iter().map(|(k, _)| k.to_string()));
        header.extend(["nrmse".into(), "bytes".into()]);
        w.write_record(&header).expect("in-memory write");
        let row = |label: String, r: &PermutationRecord| {
            let mut rec = vec![label];
            rec.extend(r.params.to_key_values().into_iter().map(|(_, v)| v));
            rec.push(r.nrmse.to_string());
            rec.push(r.model_bytes.to_string());
            rec
        };
        for r in &self.records {
            w.write_record(row(r.index.to_string(), r)).expect("in-memory write");
        }
        w.write_record(row("winner".into(), self.winner()))
            .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// `index,seconds` per permutation.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("index,seconds\n");
        for r in &self.records {
            out.push_str(&format!("{},{}\n", r.index, r.seconds));
        }
        out
    }
}

/// Trains and scores every permutation. Permutations run concurrently; the
/// first failure stops the search and is returned with its index.
pub fn grid_search(
    train_set: &[LoadedImage],
    validation_set: &[LoadedImage],
    grid: &GridSpec,
    progress: &(dyn Fn(&PermutationRecord) + Sync),
) -> Result<TuneResult> {
    grid.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for img in train_set.iter().chain(validation_set) {
        if img.record.ground_truth.is_none() {
            return Err(Error::MissingGroundTruth(img.id()));
        }
    }
    let failed = AtomicBool::new(false);
    let outcomes: Vec<Option<Result<PermutationRecord>>> = (0..grid.len())
        .into_par_iter()
        .map(|index| {
            if failed.load(AtomicOrdering::Relaxed) {
                return None;
            }
            let out = run_permutation(train_set, validation_set, grid, index);
            match &out {
                Ok(r) => progress(r),
                Err(_) => failed.store(true, AtomicOrdering::Relaxed),
            }
            Some(out)
        })
        .collect();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut first_error = None;
    for out in outcomes {
        match out {
            Some(Ok(r)) => records.push(r),
            Some(Err(e)) if first_error.is_none() => first_error = Some(e),
            _ => {}
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    let winner = (0..records.len())
        .min_by(|&a, &b| records[a].rank(&records[b]))
        .expect("grid is non-empty");
    Ok(TuneResult { records, winner })
}

fn run_permutation(
    train_set: &[LoadedImage],
    validation_set: &[LoadedImage],
    grid: &GridSpec,
    index: usize,
) -> Result<PermutationRecord> {
    let annotate = |e: Error| Error::Permutation {
        index,
        source: Box::new(e),
    };
    let params = grid.permutation(index);
    let start = Instant::now();
    let model = train(train_set, &params, &mut |_| {}).map_err(annotate)?;
    let errors = evaluate_model(&model, "candidate", validation_set).map_err(annotate)?;
    let nrmse = errors.iter().map(|e| e.nrmse).sum::<f64>() / errors.len() as f64;
    Ok(PermutationRecord {
        index,
        params,
        nrmse,
        seconds: start.elapsed().as_secs_f64(),
        model_bytes: serialize(&model).len(),
    })
}
