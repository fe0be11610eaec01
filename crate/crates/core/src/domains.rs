//! Synthetic source/target domain-shift generators and CSV ingestion.
//!
//! Every generator draws from a single ChaCha8 stream seeded with the spec's
//! 64-bit seed, so output is a pure function of the [`DomainSpec`].

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::SampleId;

/// Features, labels and stable ids of a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub ids: Vec<SampleId>,
    pub classes: usize,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<usize>, ids: Vec<SampleId>, classes: usize) -> Result<Self> {
        if labels.len() != features.rows() || ids.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} feature rows, {} labels, {} ids",
                features.rows(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Argument(format!("duplicate sample id {dup}")));
        }
        Ok(Self {
            features,
            labels,
            ids,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at the given positions (not ids), keeping their ids.
    pub fn subset(&self, positions: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select_rows(positions),
            labels: positions.iter().map(|&i| self.labels[i]).collect(),
            ids: positions.iter().map(|&i| self.ids[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Parameters of a synthetic source/target pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub classes: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// Target rotation in radians.
    pub rotation: f64,
    pub noise_source: f64,
    pub noise_target: f64,
    /// Target class priors; uniform when empty.
    #[serde(default)]
    pub class_priors_target: Vec<f64>,
    /// Target translation (two-moons only).
    #[serde(default)]
    pub translation: [f64; 2],
    pub seed: u64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Argument("need at least 2 classes".into()));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::Argument("sample counts must be positive".into()));
        }
        if !(self.noise_source > 0.0 && self.noise_target > 0.0) {
            return Err(Error::Argument("noise scales must be positive".into()));
        }
        if !self.rotation.is_finite() || !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::Argument("rotation and translation must be finite".into()));
        }
        if !self.class_priors_target.is_empty() {
            if self.class_priors_target.len() != self.classes {
                return Err(Error::Argument(format!(
                    "{} priors for {} classes",
                    self.class_priors_target.len(),
                    self.classes
                )));
            }
            if self.class_priors_target.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Argument("priors must be non-negative".into()));
            }
            let total: f64 = self.class_priors_target.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Argument(format!("priors sum to {total}, not 1")));
            }
        }
        Ok(())
    }

    pub fn target_priors(&self) -> Vec<f64> {
        if self.class_priors_target.is_empty() {
            vec![1.0 / self.classes as f64; self.classes]
        } else {
            self.class_priors_target.clone()
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn rotate(p: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn build_set(points: Vec<[f64; 2]>, labels: Vec<usize>, classes: usize) -> Result<LabeledSet> {
    let n = points.len();
    let data = points.into_iter().flatten().collect();
    LabeledSet::new(Tensor::new(n, 2, data)?, labels, (0..n).collect(), classes)
}

/// Class means evenly spaced on the unit circle; the target rotates every
/// mean by `rotation` and draws labels from `class_priors_target`.
///
/// Source labels cycle through the classes so the source is balanced.
pub fn gen_gaussian_ring(spec: &DomainSpec) -> Result<(LabeledSet, LabeledSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.classes;
    let means: Vec<[f64; 2]> = (0..c)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / c as f64;
            [a.cos(), a.sin()]
        })
        .collect();

    let source_labels: Vec<usize> = (0..spec.n_source).map(|i| i % c).collect();
    let source_pts = source_labels
        .iter()
        .map(|&y| {
            let m = means[y];
            [
                m[0] + spec.noise_source * normal(&mut rng),
                m[1] + spec.noise_source * normal(&mut rng),
            ]
        })
        .collect();

    let priors =
        WeightedIndex::new(spec.target_priors()).map_err(|e| Error::Argument(format!("invalid priors: {e}")))?;
    let target_labels: Vec<usize> = (0..spec.n_target).map(|_| priors.sample(&mut rng)).collect();
    let target_pts = target_labels
        .iter()
        .map(|&y| {
            let m = rotate(means[y], spec.rotation);
            [
                m[0] + spec.noise_target * normal(&mut rng),
                m[1] + spec.noise_target * normal(&mut rng),
            ]
        })
        .collect();

    Ok((
        build_set(source_pts, source_labels, c)?,
        build_set(target_pts, target_labels, c)?,
    ))
}

/// Centre of the two-moons layout; the target rotates about it.
const MOONS_CENTRE: [f64; 2] = [0.5, 0.25];

fn moons(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> (Vec<[f64; 2]>, Vec<usize>) {
    let n_upper = n.div_ceil(2);
    let n_lower = n / 2;
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n_upper {
        let t = if n_upper > 1 {
            PI * i as f64 / (n_upper - 1) as f64
        } else {
            0.0
        };
        pts.push([t.cos() + noise * normal(rng), t.sin() + noise * normal(rng)]);
        labels.push(0);
    }
    for i in 0..n_lower {
        let t = if n_lower > 1 {
            PI * i as f64 / (n_lower - 1) as f64
        } else {
            0.0
        };
        pts.push([1.0 - t.cos() + noise * normal(rng), 0.5 - t.sin() + noise * normal(rng)]);
        labels.push(1);
    }
    (pts, labels)
}

/// Two interleaved half circles. The target is rotated by `rotation` about the
/// layout centre and then shifted by `translation`. Priors are ignored: each
/// moon contributes `ceil(n/2)` / `floor(n/2)` points.
pub fn gen_two_moons_shift(spec: &DomainSpec) -> Result<(LabeledSet, LabeledSet)> {
    if spec.classes != 2 {
        return Err(Error::Argument(format!(
            "two moons needs 2 classes, got {}",
            spec.classes
        )));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (src_pts, src_labels) = moons(spec.n_source, spec.noise_source, &mut rng);
    let (tgt_pts, tgt_labels) = moons(spec.n_target, spec.noise_target, &mut rng);
    let tgt_pts = tgt_pts
        .into_iter()
        .map(|p| {
            let r = rotate([p[0] - MOONS_CENTRE[0], p[1] - MOONS_CENTRE[1]], spec.rotation);
            [
                r[0] + MOONS_CENTRE[0] + spec.translation[0],
                r[1] + MOONS_CENTRE[1] + spec.translation[1],
            ]
        })
        .collect();
    Ok((build_set(src_pts, src_labels, 2)?, build_set(tgt_pts, tgt_labels, 2)?))
}

/// How to read a CSV file: feature columns followed by an integer label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub has_header: bool,
    pub classes: usize,
}

/// Reads a CSV file; ids are the 0-based data row indices.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<LabeledSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut width: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() < 2 {
            return Err(parse_err("need at least one feature column and a label".into()));
        }
        let n_features = record.len() - 1;
        match width {
            None => width = Some(n_features),
            Some(w) if w != n_features => {
                return Err(parse_err(format!("ragged row: {n_features} features, expected {w}")));
            }
            Some(_) => {}
        }
        for cell in record.iter().take(n_features) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("non-numeric feature {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite feature {cell:?}")));
            }
            data.push(v);
        }
        let raw = &record[n_features];
        let label: usize = raw
            .parse()
            .map_err(|_| parse_err(format!("label {raw:?} is not a non-negative integer")))?;
        if label >= schema.classes {
            return Err(parse_err(format!("label {label} >= class count {}", schema.classes)));
        }
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    let features = Tensor::new(n, width.unwrap_or(0), data)?;
    LabeledSet::new(features, labels, (0..n).collect(), schema.classes)
}

/// Writes `set` as CSV. Reals use Rust's shortest round-trip formatting.
pub fn save_csv(set: &LabeledSet, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    if header {
        let mut cols: Vec<String> = (0..set.input_dim()).map(|j| format!("x{j}")).collect();
        cols.push("label".into());
        w.write_record(&cols).map_err(io)?;
    }
    for (row, &label) in set.features.row_iter().zip(&set.labels) {
        let mut cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        cells.push(label.to_string());
        w.write_record(&cells).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ring_spec() -> DomainSpec {
        DomainSpec {
            classes: 4,
            n_source: 400,
            n_target: 2000,
            rotation: 0.3,
            noise_source: 0.1,
            noise_target: 0.1,
            class_priors_target: vec![0.7, 0.1, 0.1, 0.1],
            translation: [0.0, 0.0],
            seed: 17,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = gen_gaussian_ring(&ring_spec()).unwrap();
        let b = gen_gaussian_ring(&ring_spec()).unwrap();
        assert_eq!(a, b);
        let mut other = ring_spec();
        other.seed = 18;
        assert_ne!(gen_gaussian_ring(&other).unwrap().1, a.1);
    }

    #[test]
    fn prior_counts_within_three_sigma() {
        let (_, target) = gen_gaussian_ring(&ring_spec()).unwrap();
        let n: f64 = 2000.0;
        for (count, p) in target.class_counts().iter().zip([0.7, 0.1, 0.1, 0.1]) {
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!((*count as f64 - n * p).abs() < 3.0 * sigma, "{count} vs {}", n * p);
        }
    }

    #[test]
    fn zero_shift_matches_source_distribution() {
        let mut spec = ring_spec();
        spec.rotation = 0.0;
        spec.class_priors_target.clear();
        spec.n_source = 4000;
        spec.n_target = 4000;
        let (s, t) = gen_gaussian_ring(&spec).unwrap();
        for c in 0..4 {
            let mean = |set: &LabeledSet, dim: usize| {
                let rows: Vec<f64> = (0..set.len())
                    .filter(|&i| set.labels[i] == c)
                    .map(|i| set.features.get(i, dim))
                    .collect();
                rows.iter().sum::<f64>() / rows.len() as f64
            };
            for dim in 0..2 {
                assert!((mean(&s, dim) - mean(&t, dim)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = ring_spec();
        s.class_priors_target = vec![0.5, 0.5, 0.5, 0.5];
        assert!(matches!(gen_gaussian_ring(&s), Err(Error::Argument(_))));
        let mut s = ring_spec();
        s.noise_target = 0.0;
        assert!(matches!(gen_gaussian_ring(&s), Err(Error::Argument(_))));
        let mut s = ring_spec();
        s.n_source = 0;
        assert!(matches!(gen_gaussian_ring(&s), Err(Error::Argument(_))));
        assert!(matches!(gen_two_moons_shift(&ring_spec()), Err(Error::Argument(_))));
    }

    #[test]
    fn moons_label_balance() {
        let spec = DomainSpec {
            classes: 2,
            n_source: 101,
            n_target: 50,
            rotation: 0.0,
            noise_source: 0.05,
            noise_target: 0.05,
            class_priors_target: vec![],
            translation: [0.0, 0.0],
            seed: 1,
        };
        let (s, t) = gen_two_moons_shift(&spec).unwrap();
        assert_eq!(s.class_counts(), vec![51, 50]);
        assert_eq!(t.class_counts(), vec![25, 25]);
    }

    #[test]
    fn every_class_covered_over_seeds() {
        for seed in 0..10 {
            let spec = DomainSpec {
                classes: 8,
                n_source: 400,
                n_target: 400,
                rotation: 0.5,
                noise_source: 0.1,
                noise_target: 0.1,
                class_priors_target: vec![],
                translation: [0.0, 0.0],
                seed,
            };
            let (s, t) = gen_gaussian_ring(&spec).unwrap();
            assert!(s.class_counts().iter().all(|&c| c > 0));
            assert!(t.class_counts().iter().all(|&c| c > 0));
        }
    }

    #[test]
    fn csv_three_rows() {
        let schema = CsvSchema {
            has_header: false,
            classes: 3,
        };
        let set = parse_csv("0.5,1.0,0\n-1,2e-3,2\n3,4,1\n", &schema).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.labels, vec![0, 2, 1]);
        assert_eq!(set.ids, vec![0, 1, 2]);
        assert_eq!(set.features.row(1), &[-1.0, 0.002]);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let schema = CsvSchema {
            has_header: true,
            classes: 3,
        };
        let err = parse_csv("a,b,label\n1,2,0\nabc,2,1\n", &schema).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_csv("a,b,label\n1,2,0\n1,2,3,1\n", &schema).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_csv("a,b,label\n1,2,0\n1,2,7\n", &schema).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let (_, target) = gen_gaussian_ring(&ring_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for header in [false, true] {
            let path = dir.path().join(format!("t{header}.csv"));
            save_csv(&target, &path, header).unwrap();
            let back = load_csv(
                &path,
                &CsvSchema {
                    has_header: header,
                    classes: 4,
                },
            )
            .unwrap();
            assert_eq!(back.labels, target.labels);
            for (a, b) in back.features.data().iter().zip(target.features.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn any_spec() -> impl Strategy<Value = DomainSpec> {
        (
            2usize..7,
            1usize..80,
            1usize..80,
            -3.2f64..3.2,
            0.01f64..0.5,
            0.01f64..0.5,
            any::<u64>(),
        )
            .prop_map(
                |(classes, n_source, n_target, rotation, noise_source, noise_target, seed)| DomainSpec {
                    classes,
                    n_source,
                    n_target,
                    rotation,
                    noise_source,
                    noise_target,
                    class_priors_target: vec![],
                    translation: [0.0, 0.0],
                    seed,
                },
            )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn generators_are_pure(spec in any_spec()) {
            prop_assert_eq!(gen_gaussian_ring(&spec).unwrap(), gen_gaussian_ring(&spec).unwrap());
            let moons = DomainSpec { classes: 2, translation: [0.3, -0.1], ..spec };
            prop_assert_eq!(gen_two_moons_shift(&moons).unwrap(), gen_two_moons_shift(&moons).unwrap());
        }

        #[test]
        fn csv_text_round_trip(spec in any_spec(), header in any::<bool>()) {
            let (source, _) = gen_gaussian_ring(&spec).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.csv");
            save_csv(&source, &path, header).unwrap();
            let back = load_csv(&path, &CsvSchema { has_header: header, classes: spec.classes }).unwrap();
            prop_assert_eq!(&back.labels, &source.labels);
            for (a, b) in back.features.data().iter().zip(source.features.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
