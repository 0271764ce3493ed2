//! Dataset ingestion, normalisation, splitting, synthetic problems and
//! metrics.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{sample_rff_with, DEFAULT_PRIOR_FEATURES};
use crate::kernel::{Fingerprint, InputMatrix, KernelSpec};
use crate::objective::RegressionProblem;
use crate::rng::{stream, Component};

/// Docking scores above this value are clipped to it.
pub const DOCKING_SCORE_CAP: f64 = 5.0;

/// Inputs with one target per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: InputMatrix,
    pub targets: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: InputMatrix, targets: DVector<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Dataset {
            inputs: self.inputs.select(indices),
            targets: DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.targets[i])),
        }
    }

    /// The regression problem for the posterior mean: right-hand side `y − μ₀`.
    pub fn problem(&self, spec: &KernelSpec) -> Result<RegressionProblem> {
        let rhs = self.targets.add_scalar(-spec.prior_mean);
        RegressionProblem::new(spec.clone(), self.inputs.clone(), rhs)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Options for [`load_dense_csv`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvOptions {
    /// `None` detects a header: the first record is a header when any of
    /// its fields fails to parse as a number.
    pub has_header: Option<bool>,
    /// Zero-based target column; defaults to the last column.
    pub target_column: Option<usize>,
}

/// Dense CSV, one observation per row, the target in one column.
pub fn load_dense_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut width = None;
    let mut values = Vec::new();
    let mut targets = Vec::new();
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if first {
            first = false;
            let header = opts.has_header.unwrap_or_else(|| parsed.iter().any(|p| p.is_err()));
            if header {
                continue;
            }
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_error(
                path,
                line,
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        if w < 2 {
            return Err(parse_error(path, line, "need at least one input column and a target"));
        }
        let target_col = opts.target_column.unwrap_or(w - 1);
        if target_col >= w {
            return Err(parse_error(
                path,
                line,
                format!("target column {target_col} out of range"),
            ));
        }
        for (c, p) in parsed.into_iter().enumerate() {
            let v =
                p.map_err(|_| parse_error(path, line, format!("field {}: not a number: {:?}", c + 1, &record[c])))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("field {}: not finite", c + 1)));
            }
            if c == target_col {
                targets.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let Some(w) = width else {
        return Err(parse_error(path, 1, "no data rows"));
    };
    let inputs = InputMatrix::dense(targets.len(), w - 1, values)?;
    Dataset::new(inputs, DVector::from_vec(targets))
}

/// Writes inputs then target as CSV without a header. Values use the
/// shortest representation that parses back to the same bits.
pub fn write_dense_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    ds.inputs
        .dim()
        .ok_or(Error::RepresentationMismatch("dense CSV needs dense inputs"))?;
    let mut out = String::new();
    for i in 0..ds.len() {
        for v in ds.inputs.dense_row(i) {
            out.push_str(&format!("{v:?},"));
        }
        out.push_str(&format!("{:?}\n", ds.targets[i]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_fingerprint(path: &Path, line: usize, text: &str) -> Result<Fingerprint> {
    let mut pairs = Vec::new();
    for tok in text.split_whitespace() {
        let (i, c) = tok
            .split_once(':')
            .ok_or_else(|| parse_error(path, line, format!("expected index:count, found {tok:?}")))?;
        let i: u32 = i
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad index in {tok:?}")))?;
        let c: u32 = c
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad count in {tok:?}")))?;
        pairs.push((i, c));
    }
    let fp = Fingerprint::new(pairs).map_err(|e| parse_error(path, line, e.to_string()))?;
    if fp.is_empty() {
        return Err(parse_error(path, line, "empty fingerprint"));
    }
    Ok(fp)
}

/// Sparse count fingerprints (`index:count` tokens, one molecule per line)
/// with targets in a separate file, one number per line.
pub fn load_fingerprints(path: impl AsRef<Path>, targets_path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let targets_path = targets_path.as_ref();
    let rows = read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| parse_fingerprint(path, k + 1, l))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(parse_error(path, 1, "no fingerprints"));
    }
    let targets = read(targets_path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(targets_path, k + 1, format!("not a finite number: {:?}", l.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if targets.len() != rows.len() {
        return Err(parse_error(
            targets_path,
            targets.len(),
            format!("{} targets for {} fingerprints", targets.len(), rows.len()),
        ));
    }
    Dataset::new(InputMatrix::sparse(rows), DVector::from_vec(targets))
}

/// Writes fingerprints and targets in the format read by [`load_fingerprints`].
pub fn write_fingerprints(path: impl AsRef<Path>, targets_path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let fps = ds
        .inputs
        .fingerprints()
        .ok_or(Error::RepresentationMismatch("fingerprint files need sparse inputs"))?;
    let mut out = Vec::new();
    for fp in fps {
        let toks: Vec<String> = fp
            .indices()
            .iter()
            .zip(fp.counts())
            .map(|(i, c)| format!("{i}:{c}"))
            .collect();
        let _ = writeln!(out, "{}", toks.join(" "));
    }
    fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))?;
    let t: String = ds.targets.iter().map(|v| format!("{v:?}\n")).collect();
    fs::write(targets_path.as_ref(), t).map_err(|e| Error::io(targets_path.as_ref(), e))
}

/// `min(score, DOCKING_SCORE_CAP)` elementwise.
pub fn cap_docking_scores(targets: &mut DVector<f64>) {
    targets.apply(|v| *v = v.min(DOCKING_SCORE_CAP));
}

/// Affine target transform `(y − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaling {
    /// Population mean and standard deviation.
    pub fn fit(targets: &DVector<f64>) -> Result<Self> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::ZeroVariance);
        }
        let mean = targets.mean();
        let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        if !(var > 0.0) {
            return Err(Error::ZeroVariance);
        }
        Ok(TargetScaling { mean, std: var.sqrt() })
    }

    pub fn apply(&self, targets: &DVector<f64>) -> DVector<f64> {
        targets.map(|y| (y - self.mean) / self.std)
    }

    pub fn invert(&self, targets: &DVector<f64>) -> DVector<f64> {
        targets.map(|z| z * self.std + self.mean)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&read(path.as_ref())?)?)
    }
}

/// Normalises targets to zero mean and unit variance, returning the transform.
pub fn normalise_targets(ds: &Dataset) -> Result<(Dataset, TargetScaling)> {
    let s = TargetScaling::fit(&ds.targets)?;
    Ok((
        Dataset {
            inputs: ds.inputs.clone(),
            targets: s.apply(&ds.targets),
        },
        s,
    ))
}

/// Normalises both folds with statistics of the training fold.
pub fn normalise_split(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, TargetScaling)> {
    let (train, s) = normalise_targets(train)?;
    let test = Dataset {
        inputs: test.inputs.clone(),
        targets: s.apply(&test.targets),
    };
    Ok((train, test, s))
}

/// Per-dimension standardisation of dense inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub means: Vec<f64>,
    /// Dimensions with zero spread keep a scale of 1.
    pub stds: Vec<f64>,
}

impl FeatureScaling {
    pub fn fit(inputs: &InputMatrix) -> Result<Self> {
        let d = inputs
            .dim()
            .ok_or(Error::RepresentationMismatch("feature scaling needs dense inputs"))?;
        let n = inputs.len().max(1) as f64;
        let mut means = vec![0.0; d];
        for i in 0..inputs.len() {
            for (m, x) in means.iter_mut().zip(inputs.dense_row(i)) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; d];
        for i in 0..inputs.len() {
            for ((s, x), m) in stds.iter_mut().zip(inputs.dense_row(i)).zip(&means) {
                *s += (x - m).powi(2);
            }
        }
        stds.iter_mut().for_each(|s| {
            *s = (*s / n).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        });
        Ok(FeatureScaling { means, stds })
    }

    pub fn apply(&self, inputs: &InputMatrix) -> Result<InputMatrix> {
        let mut out = inputs.clone();
        let d = self.means.len();
        if inputs.dim() != Some(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: inputs.dim().unwrap_or(0),
            });
        }
        let values = out.dense_values_mut().expect("dense");
        for row in values.chunks_mut(d.max(1)) {
            for ((x, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub fold: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.9,
            seed: 0,
            fold: 0,
        }
    }
}

/// Training and test indices. A seeded permutation is cut into consecutive
/// test chunks of `n − ⌊fn⌋` entries (wrapping at the end); `fold` picks the
/// chunk and the training fold is everything else.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config("train_fraction must lie in (0, 1)"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(spec.seed, Component::Split, 0));
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    let n_test = n - n_train;
    let offset = if n == 0 { 0 } else { (spec.fold * n_test) % n };
    perm.rotate_left(offset);
    let test = perm[..n_test].to_vec();
    let train = perm[n_test..].to_vec();
    Ok((train, test))
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.len(), spec)?;
    Ok((ds.select(&train), ds.select(&test)))
}

fn check_lengths(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::config("metrics need at least one value"));
    }
    Ok(())
}

pub fn rmse(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(((pred - truth).norm_squared() / truth.len() as f64).sqrt())
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²`.
pub fn r2(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mean = truth.mean();
    let total: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(1.0 - (pred - truth).norm_squared() / total)
}

/// `n` inputs uniform on `[0, 1]^d` with targets `μ₀ + f₀(X) + ε`, where `f₀`
/// is a random-feature prior draw and `ε ~ N(0, λ)`.
pub fn synth_regression(n: usize, d: usize, spec: &KernelSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(seed, Component::Inputs, 0);
    let values: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let inputs = InputMatrix::dense(n, d, values)?;
    let fmap = sample_rff_with(
        spec,
        d,
        DEFAULT_PRIOR_FEATURES,
        &mut stream(seed, Component::Features, 0),
    )?;
    let mut wrng = stream(seed, Component::PriorWeights, 0);
    let weights: Vec<f64> = (0..fmap.len()).map(|_| StandardNormal.sample(&mut wrng)).collect();
    let f0 = fmap.prior_values(&weights, &inputs)?;
    let mut nrng = stream(seed, Component::Noise, 0);
    let sd = spec.noise.sqrt();
    let targets = f0.map(|f| {
        let e: f64 = StandardNormal.sample(&mut nrng);
        spec.prior_mean + f + sd * e
    });
    Dataset::new(inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn csv_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(&dir, "a.csv", "x1,x2,y\n1,2,3\n4,5,6\n");
        let b = write(&dir, "b.csv", "1,2,3\n4,5,6\n");
        let da = load_dense_csv(&a, &CsvOptions::default()).unwrap();
        let db = load_dense_csv(&b, &CsvOptions::default()).unwrap();
        assert_eq!(da, db);
        assert_eq!(da.targets.as_slice(), &[3.0, 6.0]);
        assert_eq!(da.inputs.dense_row(1), &[4.0, 5.0]);
        let first = load_dense_csv(
            &b,
            &CsvOptions {
                target_column: Some(0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(first.targets.as_slice(), &[1.0, 4.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(&dir, "e.csv", "");
        assert!(matches!(
            load_dense_csv(&empty, &CsvOptions::default()),
            Err(Error::Parse { .. })
        ));
        let ragged = write(&dir, "r.csv", "1,2,3\n4,5\n");
        match load_dense_csv(&ragged, &CsvOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad = write(&dir, "b.csv", "1,2,3\n4,x,6\n");
        match load_dense_csv(&bad, &CsvOptions::default()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("field 2"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_dense_csv(dir.path().join("missing.csv"), &CsvOptions::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_regression(50, 3, &KernelSpec::matern32(0.3, 1.0, 0.1), 1).unwrap();
        let p = dir.path().join("d.csv");
        write_dense_csv(&p, &ds).unwrap();
        let back = load_dense_csv(&p, &CsvOptions::default()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn fingerprints_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(&dir, "f.txt", "0:1 5:2\n3:4\n");
        let t = write(&dir, "t.txt", "-7.5\n2.0\n");
        let ds = load_fingerprints(&f, &t).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.inputs.fingerprints().unwrap()[0].indices(), &[0, 5]);
        let (f2, t2) = (dir.path().join("f2"), dir.path().join("t2"));
        write_fingerprints(&f2, &t2, &ds).unwrap();
        assert_eq!(load_fingerprints(&f2, &t2).unwrap(), ds);

        let bad = write(&dir, "bad.txt", "0:1\n2-3\n");
        match load_fingerprints(&bad, &t) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let zero = write(&dir, "z.txt", "0:1\n4:0\n");
        assert!(matches!(
            load_fingerprints(&zero, &t),
            Err(Error::Parse { line: 2, .. })
        ));
        let short = write(&dir, "s.txt", "1.0\n");
        assert!(load_fingerprints(&f, &short).is_err());
        let empty = write(&dir, "empty.txt", "\n");
        assert!(load_fingerprints(&empty, &t).is_err());
    }

    #[test]
    fn docking_cap() {
        let mut y = DVector::from_vec(vec![-12.0, 4.9, 5.0, 80.0]);
        cap_docking_scores(&mut y);
        assert_eq!(y.as_slice(), &[-12.0, 4.9, 5.0, 5.0]);
    }

    #[test]
    fn target_normalisation() {
        let ds = synth_regression(500, 2, &KernelSpec::matern32(0.3, 1.0, 0.1), 2).unwrap();
        let (norm, s) = normalise_targets(&ds).unwrap();
        assert!(norm.targets.mean().abs() < 1e-12);
        assert!((norm.targets.iter().map(|v| v * v).sum::<f64>() / 500.0 - 1.0).abs() < 1e-12);
        assert!((s.invert(&norm.targets) - &ds.targets).amax() < 1e-12);
        let (again, s2) = normalise_targets(&norm).unwrap();
        assert!((again.targets - &norm.targets).amax() < 1e-12);
        assert!(s2.mean.abs() < 1e-12 && (s2.std - 1.0).abs() < 1e-12);
        let constant = Dataset::new(ds.inputs.clone(), DVector::from_element(500, 3.0)).unwrap();
        assert!(matches!(normalise_targets(&constant), Err(Error::ZeroVariance)));

        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path().join("s.json")).unwrap();
        assert_eq!(TargetScaling::load(dir.path().join("s.json")).unwrap(), s);
    }

    #[test]
    fn test_fold_uses_training_statistics() {
        let ds = synth_regression(100, 2, &KernelSpec::matern32(0.3, 1.0, 0.1), 3).unwrap();
        let (train, test) = split(&ds, &SplitSpec::default()).unwrap();
        let (ntrain, ntest, s) = normalise_split(&train, &test).unwrap();
        assert_eq!(s, TargetScaling::fit(&train.targets).unwrap());
        assert!(ntrain.targets.mean().abs() < 1e-12);
        assert_eq!(ntest.targets, s.apply(&test.targets));
    }

    #[test]
    fn feature_standardisation() {
        let x = InputMatrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let f = FeatureScaling::fit(&x).unwrap();
        let z = f.apply(&x).unwrap();
        assert_eq!(f.stds[1], 1.0);
        let col: Vec<f64> = (0..3).map(|i| z.dense_row(i)[0]).collect();
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
        assert!((col.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        assert_eq!(z.dense_row(2)[1], 0.0);
    }

    #[test]
    fn splits_are_disjoint_exhaustive_and_seeded() {
        for n in [10usize, 37, 100] {
            let (tr, te) = split_indices(n, &SplitSpec::default()).unwrap();
            assert_eq!(tr.len(), (0.9 * n as f64).floor() as usize);
            assert_eq!(te.len(), n - tr.len());
            let all: HashSet<usize> = tr.iter().chain(&te).copied().collect();
            assert_eq!(all.len(), n);
        }
        assert_eq!(
            split_indices(50, &SplitSpec::default()).unwrap(),
            split_indices(50, &SplitSpec::default()).unwrap()
        );
        assert_ne!(
            split_indices(50, &SplitSpec::default()).unwrap(),
            split_indices(
                50,
                &SplitSpec {
                    seed: 1,
                    ..SplitSpec::default()
                }
            )
            .unwrap()
        );
        assert!(split_indices(
            10,
            &SplitSpec {
                train_fraction: 1.0,
                ..SplitSpec::default()
            }
        )
        .is_err());
    }

    #[test]
    fn folds_have_disjoint_test_sets() {
        let mut seen = HashSet::new();
        for fold in 0..10 {
            let (_, te) = split_indices(
                100,
                &SplitSpec {
                    fold,
                    ..SplitSpec::default()
                },
            )
            .unwrap();
            for i in te {
                assert!(seen.insert(i), "index {i} reused in fold {fold}");
            }
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn metrics() {
        let t = DVector::from_vec(vec![0.0, 2.0]);
        let p = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(rmse(&p, &t).unwrap(), 1.0);
        assert_eq!(r2(&p, &t).unwrap(), 0.0);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(r2(&t, &t).unwrap(), 1.0);
        assert!(rmse(&t, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn synthetic_problems() {
        let spec = KernelSpec::matern32(0.1, 1.0, 0.1);
        let a = synth_regression(200, 3, &spec, 4).unwrap();
        assert_eq!(a, synth_regression(200, 3, &spec, 4).unwrap());
        assert!(a
            .inputs
            .dense_values()
            .unwrap()
            .iter()
            .all(|&v| (0.0..1.0).contains(&v)));
        // Pooled over prior draws: E[(y − μ₀)²] = A + λ at every input.
        let second_moment = (0..100)
            .map(|s| {
                synth_regression(1_000, 2, &spec, 100 + s)
                    .unwrap()
                    .targets
                    .norm_squared()
                    / 1_000.0
            })
            .sum::<f64>()
            / 100.0;
        assert!((second_moment - 1.1).abs() < 0.11, "{second_moment}");
    }
}
