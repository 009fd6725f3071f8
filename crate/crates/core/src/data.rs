//! Tabular datasets: CSV ingestion, standardisation, resampling and target
//! permutation.
//!
//! A [`Dataset`] always has a single target column. Rows remember the index
//! they had in the file they were loaded from (`row_ids`), so resampled
//! subsets can be matched against each other later.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::local_model::ModelFamily;
use crate::seeded_rng;

/// Mean and (population) standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

impl ColumnScale {
    pub const IDENTITY: ColumnScale = ColumnScale { mean: 0.0, std: 1.0 };

    pub fn to_raw(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn to_normalised(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    /// The scale equivalent to applying `inner` first and then `self`'s inverse chain.
    fn then(&self, inner: &ColumnScale) -> ColumnScale {
        ColumnScale {
            mean: self.mean + self.std * inner.mean,
            std: self.std * inner.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalisation {
    pub features: Vec<ColumnScale>,
    /// Identity for classification targets, which stay probabilities.
    pub target: ColumnScale,
}

impl Normalisation {
    /// JSON sidecar: column name → `{mean, std}`, features first, then the target.
    pub fn to_json(&self, feature_names: &[String], target_name: &str) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (name, scale) in feature_names.iter().zip(&self.features) {
            map.insert(name.clone(), serde_json::to_value(scale).expect("plain struct"));
        }
        map.insert(
            target_name.to_string(),
            serde_json::to_value(self.target).expect("plain struct"),
        );
        serde_json::Value::Object(map)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    feature_names: Vec<String>,
    target_name: String,
    family: ModelFamily,
    normalisation: Option<Normalisation>,
    row_ids: Vec<usize>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Array1<f64>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
        family: ModelFamily,
    ) -> Result<Self> {
        let n = x.nrows();
        let row_ids = (0..n).collect();
        Self::from_parts(x, y, feature_names, target_name.into(), family, None, row_ids)
    }

    fn from_parts(
        x: Array2<f64>,
        y: Array1<f64>,
        feature_names: Vec<String>,
        target_name: String,
        family: ModelFamily,
        normalisation: Option<Normalisation>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let (n, m) = x.dim();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
        }
        if m < 1 {
            return Err(Error::InvalidData("need at least one feature column".into()));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} feature rows but {} targets",
                y.len()
            )));
        }
        if feature_names.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} feature columns but {} names",
                feature_names.len()
            )));
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature `{}` at row {}",
                feature_names[j],
                i + 1
            )));
        }
        if let Some((i, _)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target at row {}", i + 1)));
        }
        if family == ModelFamily::Classification {
            if let Some(&v) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::ProbabilityOutOfRange(v));
            }
        }
        Ok(Self {
            x,
            y,
            feature_names,
            target_name,
            family,
            normalisation,
            row_ids,
        })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Feature names followed by `intercept`: the coefficient column names.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = self.feature_names.clone();
        names.push("intercept".into());
        names
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn normalisation(&self) -> Option<&Normalisation> {
        self.normalisation.as_ref()
    }

    /// Row indices in the originally loaded dataset.
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    /// Standardise every feature column (and a regression target) to zero
    /// mean and unit population standard deviation. Constant columns become
    /// zeros with a recorded std of 1.
    pub fn normalise(&self) -> Dataset {
        let features: Vec<ColumnScale> = self
            .x
            .axis_iter(Axis(1))
            .zip(&self.feature_names)
            .map(|(col, name)| column_scale(col.iter().copied(), name))
            .collect();
        let target = match self.family {
            ModelFamily::Regression => column_scale(self.y.iter().copied(), &self.target_name),
            ModelFamily::Classification => ColumnScale::IDENTITY,
        };
        let mut x = self.x.clone();
        for (mut col, scale) in x.axis_iter_mut(Axis(1)).zip(&features) {
            col.mapv_inplace(|v| scale.to_normalised(v));
        }
        let y = self.y.mapv(|v| target.to_normalised(v));

        let normalisation = match &self.normalisation {
            None => Normalisation { features, target },
            Some(prev) => Normalisation {
                features: prev
                    .features
                    .iter()
                    .zip(&features)
                    .map(|(outer, inner)| outer.then(inner))
                    .collect(),
                target: prev.target.then(&target),
            },
        };
        Dataset {
            x,
            y,
            normalisation: Some(normalisation),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            x: Array2::zeros((0, 0)),
            y: Array1::zeros(0),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            family: self.family,
            normalisation: self.normalisation.clone(),
            row_ids: self.row_ids.clone(),
        }
    }

    /// Features in original units.
    pub fn raw_x(&self) -> Array2<f64> {
        let mut x = self.x.clone();
        if let Some(norm) = &self.normalisation {
            for (mut col, scale) in x.axis_iter_mut(Axis(1)).zip(&norm.features) {
                col.mapv_inplace(|v| scale.to_raw(v));
            }
        }
        x
    }

    /// Targets in original units.
    pub fn raw_y(&self) -> Array1<f64> {
        match &self.normalisation {
            Some(norm) => self.y.mapv(|v| norm.target.to_raw(v)),
            None => self.y.clone(),
        }
    }

    pub fn target_to_raw(&self, v: f64) -> f64 {
        self.normalisation
            .as_ref()
            .map_or(v, |norm| norm.target.to_raw(v))
    }

    /// Undo the normalisation, recovering the original values.
    pub fn denormalise(&self) -> Dataset {
        Dataset {
            x: self.raw_x(),
            y: self.raw_y(),
            normalisation: None,
            ..self.clone_meta()
        }
    }

    /// Rows at the given positions (not row ids), in that order.
    pub fn select(&self, positions: &[usize]) -> Result<Dataset> {
        let n = self.n();
        if let Some(&bad) = positions.iter().find(|&&p| p >= n) {
            return Err(Error::InvalidParameter(format!(
                "row position {bad} out of range for {n} rows"
            )));
        }
        let x = self.x.select(Axis(0), positions);
        let y = self.y.select(Axis(0), positions);
        let row_ids = positions.iter().map(|&p| self.row_ids[p]).collect();
        Dataset::from_parts(
            x,
            y,
            self.feature_names.clone(),
            self.target_name.clone(),
            self.family,
            self.normalisation.clone(),
            row_ids,
        )
    }

    /// Replace the targets, keeping everything else.
    pub fn with_targets(&self, y: Array1<f64>) -> Result<Dataset> {
        Dataset::from_parts(
            self.x.clone(),
            y,
            self.feature_names.clone(),
            self.target_name.clone(),
            self.family,
            self.normalisation.clone(),
            self.row_ids.clone(),
        )
    }

    /// SHA-256 over names and values; identifies the data a solution was fitted on.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.feature_names {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(self.target_name.as_bytes());
        hasher.update([0u8]);
        hasher.update((self.n() as u64).to_le_bytes());
        hasher.update((self.m() as u64).to_le_bytes());
        for v in self.x.iter().chain(self.y.iter()) {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Write raw (original-unit) features and target as CSV with a header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        writer.write_record(&header)?;
        let x = self.raw_x();
        let y = self.raw_y();
        for (row, t) in x.outer_iter().zip(y.iter()) {
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            record.push(t.to_string());
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_checksum(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn column_scale(values: impl Iterator<Item = f64> + Clone, name: &str) -> ColumnScale {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= f64::EPSILON * mean.abs().max(1.0) {
        warn!("column `{name}` is constant; it normalises to zeros");
        ColumnScale { mean, std: 1.0 }
    } else {
        ColumnScale { mean, std }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Columns to drop entirely (neither feature nor target).
    pub ignore: Vec<String>,
    pub family: ModelFamily,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            ignore: Vec::new(),
            family: ModelFamily::Regression,
        }
    }
}

/// Load a headed CSV file. Every column other than `target` (and ignored
/// columns) becomes a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, target: &str, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
    }
    let target_idx = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::UnknownColumn(target.to_string()))?;
    for name in &options.ignore {
        if !header.contains(name) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&j| j != target_idx && !options.ignore.contains(&header[j]))
        .collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::InvalidCell {
                    row: r + 1,
                    column: header[j].clone(),
                    value: raw.to_string(),
                }),
            }
        };
        for &j in &feature_idx {
            xs.push(cell(j)?);
        }
        ys.push(cell(target_idx)?);
    }
    let n = ys.len();
    let x = Array2::from_shape_vec((n, feature_idx.len()), xs)
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    let feature_names = feature_idx.iter().map(|&j| header[j].clone()).collect();
    Dataset::new(x, Array1::from(ys), feature_names, target, options.family)
}

/// Draw `size` rows without replacement. With `overlap`, exactly
/// `⌊shared_fraction · size⌋` rows are taken from `overlap` and the rest from
/// rows not in it; the shared original row ids are returned (sorted).
pub fn resample(
    data: &Dataset,
    size: usize,
    overlap: Option<&Dataset>,
    shared_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    let n = data.n();
    if size > n {
        return Err(Error::InfeasibleResample(format!(
            "sample size {size} exceeds the {n} available rows"
        )));
    }
    if size < 2 {
        return Err(Error::InfeasibleResample(format!("sample size {size} is below 2")));
    }
    if !(0.0..=1.0).contains(&shared_fraction) {
        return Err(Error::InvalidParameter(format!(
            "shared fraction {shared_fraction} is outside [0, 1]"
        )));
    }
    let mut rng = seeded_rng(seed);
    let Some(other) = overlap else {
        let positions = index::sample(&mut rng, n, size).into_vec();
        return Ok((data.select(&positions)?, Vec::new()));
    };

    let position_of: HashMap<usize, usize> = data
        .row_ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| (id, pos))
        .collect();
    let other_positions = other
        .row_ids
        .iter()
        .map(|id| {
            position_of.get(id).copied().ok_or_else(|| {
                Error::InfeasibleResample(format!("overlap row id {id} is not in the source data"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let shared_count = (shared_fraction * size as f64).floor() as usize;
    if shared_count > other_positions.len() {
        return Err(Error::InfeasibleResample(format!(
            "{shared_count} shared rows requested but the overlap sample has {}",
            other_positions.len()
        )));
    }
    let in_other: HashSet<usize> = other_positions.iter().copied().collect();
    let pool: Vec<usize> = (0..n).filter(|p| !in_other.contains(p)).collect();
    let fresh_count = size - shared_count;
    if fresh_count > pool.len() {
        return Err(Error::InfeasibleResample(format!(
            "{fresh_count} rows outside the overlap sample are needed but only {} exist",
            pool.len()
        )));
    }

    let mut positions: Vec<usize> = index::sample(&mut rng, other_positions.len(), shared_count)
        .into_iter()
        .map(|k| other_positions[k])
        .collect();
    let mut shared: Vec<usize> = positions.iter().map(|&p| data.row_ids[p]).collect();
    positions.extend(
        index::sample(&mut rng, pool.len(), fresh_count)
            .into_iter()
            .map(|k| pool[k]),
    );
    positions.shuffle(&mut rng);
    shared.sort_unstable();
    Ok((data.select(&positions)?, shared))
}

/// Randomly permute the target rows; features are untouched.
pub fn permute_targets(data: &Dataset, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let mut y = data.y.to_vec();
    y.shuffle(&mut rng);
    Dataset {
        x: data.x.clone(),
        y: Array1::from(y),
        ..data.clone_meta()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::io::Write;

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|j| format!("x{j}")).collect()
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    #[test]
    fn loads_three_row_csv() {
        let file = write_temp("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let data = load_csv(file.path(), "y", &CsvOptions::default()).unwrap();
        assert_eq!((data.n(), data.m()), (3, 2));
        assert_eq!(data.feature_names(), ["a", "b"]);
        assert_eq!(data.y(), &array![3.0, 6.0, 9.0]);
    }

    #[test]
    fn nan_cell_is_located() {
        let file = write_temp("a,b,y\n1,2,3\n4,NaN,6\n");
        match load_csv(file.path(), "y", &CsvOptions::default()) {
            Err(Error::InvalidCell { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_duplicate_columns() {
        let file = write_temp("a,b,y\n1,2,3\n4,5,6\n");
        assert!(matches!(
            load_csv(file.path(), "target", &CsvOptions::default()),
            Err(Error::UnknownColumn(c)) if c == "target"
        ));
        let file = write_temp("a,a,y\n1,2,3\n4,5,6\n");
        assert!(matches!(
            load_csv(file.path(), "y", &CsvOptions::default()),
            Err(Error::DuplicateColumn(_))
        ));
        assert!(matches!(
            load_csv("/definitely/not/here.csv", "y", &CsvOptions::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn ignored_columns_and_delimiter() {
        let file = write_temp("a;id;y\n1;10;3\n4;11;6\n");
        let options = CsvOptions {
            delimiter: b';',
            ignore: vec!["id".into()],
            ..Default::default()
        };
        let data = load_csv(file.path(), "y", &options).unwrap();
        assert_eq!(data.feature_names(), ["a"]);
    }

    #[test]
    fn classification_targets_must_be_probabilities() {
        let x = array![[1.0], [2.0]];
        let res = Dataset::new(x, array![0.2, 1.5], names(1), "y", ModelFamily::Classification);
        assert!(matches!(res, Err(Error::ProbabilityOutOfRange(_))));
    }

    #[test]
    fn normalise_simple_column() {
        let data = Dataset::new(
            array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]],
            array![0.0, 1.0, 2.0],
            names(2),
            "y",
            ModelFamily::Regression,
        )
        .unwrap();
        let norm = data.normalise();
        let expected_std = (2.0f64 / 3.0).sqrt();
        for (got, want) in norm.x().column(0).iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want / expected_std).abs() < 1e-12);
        }
        let scale = norm.normalisation().unwrap().features[0];
        assert_eq!(scale.mean, 2.0);
        assert!((scale.std - expected_std).abs() < 1e-15);
        // constant column
        assert!(norm.x().column(1).iter().all(|v| *v == 0.0));
        assert_eq!(norm.normalisation().unwrap().features[1].std, 1.0);
    }

    #[test]
    fn classification_targets_are_not_standardised() {
        let data = Dataset::new(
            array![[1.0], [2.0], [4.0]],
            array![0.1, 0.9, 0.5],
            names(1),
            "p",
            ModelFamily::Classification,
        )
        .unwrap();
        assert_eq!(data.normalise().y(), data.y());
    }

    #[test]
    fn sidecar_lists_every_column() {
        let data = Dataset::new(
            array![[1.0, 0.0], [3.0, 1.0]],
            array![1.0, 2.0],
            names(2),
            "y",
            ModelFamily::Regression,
        )
        .unwrap()
        .normalise();
        let json = data
            .normalisation()
            .unwrap()
            .to_json(data.feature_names(), data.target_name());
        assert_eq!(json["x0"]["mean"], 2.0);
        assert_eq!(json["y"]["std"], 0.5);
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["x0", "x1", "y"]);
    }

    fn random_dataset(seed: u64, n: usize, m: usize) -> Dataset {
        use rand::Rng;
        let mut rng = seeded_rng(seed);
        let x = Array2::from_shape_fn((n, m), |_| rng.random_range(-50.0..50.0));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-3.0..10.0));
        Dataset::new(x, y, names(m), "y", ModelFamily::Regression).unwrap()
    }

    proptest! {
        #[test]
        fn normalise_is_idempotent_and_invertible(seed in 0u64..1000, n in 2usize..40, m in 1usize..5) {
            let data = random_dataset(seed, n, m);
            let once = data.normalise();
            let twice = once.normalise();
            for (a, b) in once.x().iter().zip(twice.x().iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for col in once.x().axis_iter(Axis(1)) {
                let mean = col.mean().unwrap();
                let std = col.mapv(|v| (v - mean).powi(2)).mean().unwrap().sqrt();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((std - 1.0).abs() < 1e-9);
            }
            let back = twice.denormalise();
            for (a, b) in back.x().iter().zip(data.x().iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in back.y().iter().zip(data.y().iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn permutation_preserves_target_multiset(seed in 0u64..1000, n in 2usize..50) {
            let data = random_dataset(seed, n, 2);
            let permuted = permute_targets(&data, seed ^ 7);
            let mut before = data.y().to_vec();
            let mut after = permuted.y().to_vec();
            before.sort_by(f64::total_cmp);
            after.sort_by(f64::total_cmp);
            prop_assert_eq!(before, after);
            prop_assert_eq!(permuted.x(), data.x());
            prop_assert_eq!(permute_targets(&data, seed ^ 7), permuted);
        }

        #[test]
        fn resample_draws_distinct_rows(seed in 0u64..1000, size in 2usize..30) {
            let data = random_dataset(1, 30, 2);
            let (a, _) = resample(&data, size, None, 0.0, seed).unwrap();
            let (b, _) = resample(&data, size, None, 0.0, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let ids: HashSet<_> = a.row_ids().iter().collect();
            prop_assert_eq!(ids.len(), size);
        }
    }

    #[test]
    fn full_resample_is_a_permutation() {
        let data = random_dataset(4, 12, 2);
        let (sample, shared) = resample(&data, 12, None, 0.0, 9).unwrap();
        assert!(shared.is_empty());
        let mut ids = sample.row_ids().to_vec();
        ids.sort_unstable();
        assert_eq!(ids, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn overlapping_resample_shares_exactly_half() {
        let data = random_dataset(5, 300, 3);
        let (first, _) = resample(&data, 100, None, 0.0, 1).unwrap();
        let (second, shared) = resample(&data, 100, Some(&first), 0.5, 2).unwrap();
        assert_eq!(shared.len(), 50);
        let a: HashSet<_> = first.row_ids().iter().copied().collect();
        let b: HashSet<_> = second.row_ids().iter().copied().collect();
        let mut common: Vec<_> = a.intersection(&b).copied().collect();
        common.sort_unstable();
        assert_eq!(common, shared);
    }

    #[test]
    fn infeasible_resamples() {
        let data = random_dataset(5, 120, 3);
        assert!(matches!(
            resample(&data, 121, None, 0.0, 1),
            Err(Error::InfeasibleResample(_))
        ));
        let (first, _) = resample(&data, 100, None, 0.0, 1).unwrap();
        // 50 fresh rows needed, only 20 outside `first`
        assert!(matches!(
            resample(&data, 100, Some(&first), 0.5, 2),
            Err(Error::InfeasibleResample(_))
        ));
        assert!(resample(&data, 10, None, 1.5, 2).is_err());
    }

    #[test]
    fn checksum_tracks_content() {
        let a = random_dataset(1, 10, 2);
        let b = random_dataset(2, 10, 2);
        assert_eq!(a.checksum(), a.clone().checksum());
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.checksum().len(), 64);
    }
}
