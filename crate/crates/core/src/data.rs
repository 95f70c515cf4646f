//! Synthetic imbalanced ordinal data, CSV ingestion and stratified splits.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{fuse, FeatureGroupSet};
use crate::numeric::{norm, RandomSource};
use crate::regularizer::OrdinalClassSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Class code, a member of the dataset's [`OrdinalClassSet`].
    pub label: i64,
}

/// A contiguous slice of the fused feature vector that came from one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64, config: SynthConfig },
    File { path: PathBuf, sha256: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: OrdinalClassSet,
    pub feature_names: Vec<String>,
    /// Empty unless the features were assembled from named groups.
    pub groups: Vec<FeatureGroup>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Samples per class, in class order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            if let Some(i) = self.classes.index_of(s.label) {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Class index of sample `i`.
    pub fn target(&self, i: usize) -> usize {
        self.classes
            .index_of(self.samples[i].label)
            .expect("labels validated on construction")
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            classes: self.classes.clone(),
            feature_names: self.feature_names.clone(),
            groups: self.groups.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes `feature columns…,label` with shortest round-trip decimals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
            rec.push(s.label.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassPrior {
    /// `C(n−1, k) / 2^(n−1)`; `[1,4,6,4,1]/16` for five classes.
    #[default]
    BinomialBell,
    Uniform,
    Custom(Vec<f64>),
}

impl ClassPrior {
    pub fn weights(&self, n_classes: usize) -> Result<Vec<f64>> {
        match self {
            ClassPrior::BinomialBell => {
                let mut row = vec![1.0f64];
                for _ in 1..n_classes {
                    let mut next = vec![1.0; row.len() + 1];
                    for k in 1..row.len() {
                        next[k] = row[k - 1] + row[k];
                    }
                    row = next;
                }
                let total: f64 = row.iter().sum();
                Ok(row.into_iter().map(|c| c / total).collect())
            }
            ClassPrior::Uniform => Ok(vec![1.0 / n_classes as f64; n_classes]),
            ClassPrior::Custom(w) => {
                if w.len() != n_classes {
                    return Err(Error::validation(
                        "class_prior",
                        format!("{} weights for {n_classes} classes", w.len()),
                    ));
                }
                if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::validation(
                        "class_prior",
                        "weights must be finite and >= 0",
                    ));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::validation(
                        "class_prior",
                        format!("weights sum to {sum}, expected 1"),
                    ));
                }
                Ok(w.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Manifold {
    /// Class means equally spaced along a random unit direction.
    #[default]
    LinearChain,
    /// Class means equally spaced in angle over a quarter circle on a random
    /// 2-plane.
    Arc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Distance between consecutive class means (arc length for `Arc`).
    pub class_spacing: f64,
    pub class_prior: ClassPrior,
    pub manifold: Manifold,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 1600,
            n_classes: 5,
            feature_dim: 16,
            noise_sigma: 1.0,
            class_spacing: 1.0,
            class_prior: ClassPrior::BinomialBell,
            manifold: Manifold::LinearChain,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::validation("n_samples", "must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::validation(
                "n_classes",
                "at least 2 classes required",
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::validation("feature_dim", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.class_spacing > 0.0 && self.class_spacing.is_finite()) {
            return Err(Error::validation(
                "class_spacing",
                "must be positive and finite",
            ));
        }
        self.class_prior.weights(self.n_classes)?;
        if self.manifold == Manifold::Arc && self.feature_dim < 2 {
            return Err(Error::domain("arc manifold needs feature_dim >= 2"));
        }
        Ok(())
    }

    pub fn classes(&self) -> Result<OrdinalClassSet> {
        OrdinalClassSet::contiguous(self.n_classes)
    }
}

fn gaussian_vector(dim: usize, rng: &mut RandomSource) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vector(dim: usize, rng: &mut RandomSource) -> Vec<f64> {
    loop {
        let v = gaussian_vector(dim, rng);
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Class mean vectors for `cfg`, one per class in order.
pub fn class_means(cfg: &SynthConfig, rng: &mut RandomSource) -> Vec<Vec<f64>> {
    let n = cfg.n_classes;
    let d = cfg.feature_dim;
    match cfg.manifold {
        Manifold::LinearChain => {
            let dir = unit_vector(d, rng);
            let mid = (n - 1) as f64 / 2.0;
            (0..n)
                .map(|c| {
                    let t = (c as f64 - mid) * cfg.class_spacing;
                    dir.iter().map(|u| u * t).collect()
                })
                .collect()
        }
        Manifold::Arc => {
            let e1 = unit_vector(d, rng);
            // Gram-Schmidt for the second axis
            let e2 = loop {
                let mut v = gaussian_vector(d, rng);
                let p = crate::numeric::dot(&v, &e1);
                crate::numeric::axpy(-p, &e1, &mut v);
                let nv = norm(&v);
                if nv > 1e-9 {
                    break v.into_iter().map(|x| x / nv).collect::<Vec<f64>>();
                }
            };
            let step = std::f64::consts::FRAC_PI_2 / (n - 1) as f64;
            let radius = cfg.class_spacing / step;
            (0..n)
                .map(|c| {
                    let theta = c as f64 * step;
                    e1.iter()
                        .zip(&e2)
                        .map(|(a, b)| radius * (theta.cos() * a + theta.sin() * b))
                        .collect()
                })
                .collect()
        }
    }
}

/// Draws `cfg.n_samples` labelled points: label from the class prior, then
/// `mean(label) + N(0, σ²I)`.
pub fn generate(cfg: &SynthConfig, seed: u64, rng: &mut RandomSource) -> Result<Dataset> {
    cfg.validate()?;
    let classes = cfg.classes()?;
    let weights = cfg.class_prior.weights(cfg.n_classes)?;
    let pick = WeightedIndex::new(&weights)
        .map_err(|e| Error::validation("class_prior", e.to_string()))?;
    let means = class_means(cfg, rng);
    let samples = (0..cfg.n_samples)
        .map(|_| {
            let c = pick.sample(rng);
            let features = means[c]
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(rng);
                    m + cfg.noise_sigma * e
                })
                .collect();
            Sample {
                features,
                label: classes.code(c),
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        classes,
        feature_names: (0..cfg.feature_dim).map(|i| format!("f{i}")).collect(),
        groups: Vec::new(),
        provenance: Provenance::Synthetic {
            seed,
            config: cfg.clone(),
        },
    })
}

/// Train/dev/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::validation("split", "ratios must be finite and >= 0"));
        }
        if self.train <= 0.0 {
            return Err(Error::validation("split", "train ratio must be positive"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(
                "split",
                format!("ratios sum to {sum}, expected 1"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified index partition: each class is shuffled and cut by the same
/// ratios, with rounding remainders going to train.
pub fn split_indices(
    data: &Dataset,
    ratios: SplitRatios,
    rng: &mut RandomSource,
) -> Result<SplitIndices> {
    ratios.validate()?;
    let parts = [ratios.train, ratios.dev, ratios.test]
        .iter()
        .filter(|r| **r > 0.0)
        .count();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes.len()];
    for i in 0..data.len() {
        by_class[data.target(i)].push(i);
    }
    let mut out = SplitIndices {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < parts {
            log::warn!(
                "class {} has {} samples, fewer than {parts} split parts; assigning all to train",
                data.classes.code(c),
                idx.len()
            );
            out.train.extend(idx);
            continue;
        }
        idx.shuffle(rng);
        let n = idx.len() as f64;
        let n_dev = (n * ratios.dev).floor() as usize;
        let n_test = (n * ratios.test).floor() as usize;
        let n_train = idx.len() - n_dev - n_test;
        out.train.extend_from_slice(&idx[..n_train]);
        out.dev.extend_from_slice(&idx[n_train..n_train + n_dev]);
        out.test.extend_from_slice(&idx[n_train + n_dev..]);
    }
    out.train.sort_unstable();
    out.dev.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

pub fn split(data: &Dataset, ratios: SplitRatios, rng: &mut RandomSource) -> Result<Splits> {
    let idx = split_indices(data, ratios, rng)?;
    Splits::from_indices(data, &idx)
}

impl Splits {
    /// Materializes a saved partition of `data`.
    pub fn from_indices(data: &Dataset, idx: &SplitIndices) -> Result<Self> {
        if let Some(&bad) = idx
            .train
            .iter()
            .chain(&idx.dev)
            .chain(&idx.test)
            .find(|&&i| i >= data.len())
        {
            return Err(Error::domain(format!(
                "split index {bad} out of range for {} samples",
                data.len()
            )));
        }
        Ok(Splits {
            train: data.subset(&idx.train),
            dev: data.subset(&idx.dev),
            test: data.subset(&idx.test),
        })
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a CSV with a header row, a `label` column and numeric feature
/// columns.
///
/// When every feature column is named `group.feature`, columns are gathered
/// into groups (in order of first appearance) and fused group by group.
pub fn load_csv(path: &Path, classes: &OrdinalClassSet) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_csv(&bytes, classes, &path.display().to_string())?;
    ds.provenance = Provenance::File {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    };
    Ok(ds)
}

pub fn parse_csv(bytes: &[u8], classes: &OrdinalClassSet, source: &str) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        location: source.into(),
        reason: format!("not UTF-8: {e}"),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let at = |line: u64| format!("{source}:{line}");
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            location: at(1),
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Parse {
            location: at(1),
            reason: "missing `label` column".into(),
        })?;
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&i| i != label_col).collect();
    if feature_cols.is_empty() {
        return Err(Error::Parse {
            location: at(1),
            reason: "no feature columns".into(),
        });
    }

    // group layout: name -> column positions, in first-appearance order
    let grouped = feature_cols.iter().all(|&i| header[i].contains('.'));
    let mut group_cols: Vec<(String, Vec<usize>)> = Vec::new();
    if grouped {
        for &i in &feature_cols {
            let (g, _) = header[i].split_once('.').expect("checked above");
            match group_cols.iter_mut().find(|(n, _)| n == g) {
                Some((_, cols)) => cols.push(i),
                None => group_cols.push((g.to_owned(), vec![i])),
            }
        }
    }
    let order: Vec<&str> = group_cols.iter().map(|(n, _)| n.as_str()).collect();
    let ordered_cols: Vec<usize> = if grouped {
        group_cols
            .iter()
            .flat_map(|(_, c)| c.iter().copied())
            .collect()
    } else {
        feature_cols.clone()
    };

    let mut samples = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            location: at(e.position().map(|p| p.line()).unwrap_or(0)),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                location: at(line),
                reason: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let parse = |col: usize| -> Result<f64> {
            let v: f64 = rec[col].parse().map_err(|_| Error::Parse {
                location: at(line),
                reason: format!("column `{}`: `{}` is not a number", header[col], &rec[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    location: at(line),
                    reason: format!("column `{}`: non-finite value", header[col]),
                });
            }
            Ok(v)
        };
        let label: i64 = rec[label_col].parse().map_err(|_| Error::Parse {
            location: at(line),
            reason: format!("label `{}` is not an integer", &rec[label_col]),
        })?;
        if classes.index_of(label).is_none() {
            return Err(Error::domain(format!(
                "{}: label {label} not in classes {:?}",
                at(line),
                classes.labels()
            )));
        }
        let features = if grouped {
            let mut set = FeatureGroupSet::new();
            for (name, cols) in &group_cols {
                set.insert(
                    name.clone(),
                    cols.iter().map(|&c| parse(c)).collect::<Result<_>>()?,
                );
            }
            fuse(&set, &order)?
        } else {
            feature_cols
                .iter()
                .map(|&c| parse(c))
                .collect::<Result<_>>()?
        };
        samples.push(Sample { features, label });
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            location: source.into(),
            reason: "no data rows".into(),
        });
    }

    let mut groups = Vec::new();
    let mut start = 0;
    for (name, cols) in &group_cols {
        groups.push(FeatureGroup {
            name: name.clone(),
            start,
            len: cols.len(),
        });
        start += cols.len();
    }
    Ok(Dataset {
        samples,
        classes: classes.clone(),
        feature_names: ordered_cols.iter().map(|&i| header[i].clone()).collect(),
        groups,
        provenance: Provenance::File {
            path: PathBuf::from(source),
            sha256: sha256_hex(bytes),
        },
    })
}

/// Structured record written next to every generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool_version: String,
    pub provenance: Provenance,
    pub classes: Vec<i64>,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub class_counts: Vec<usize>,
    pub csv_sha256: String,
}

impl DatasetManifest {
    pub fn for_dataset(data: &Dataset, csv_bytes: &[u8]) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            provenance: data.provenance.clone(),
            classes: data.classes.labels().to_vec(),
            n_samples: data.len(),
            feature_dim: data.feature_dim(),
            class_counts: data.class_counts(),
            csv_sha256: sha256_hex(csv_bytes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_rng;

    fn gen(cfg: &SynthConfig, seed: u64) -> Dataset {
        generate(cfg, seed, &mut seeded_rng(seed)).unwrap()
    }

    #[test]
    fn binomial_prior_for_five_classes() {
        let w = ClassPrior::BinomialBell.weights(5).unwrap();
        let expect = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        assert_eq!(w, expect.to_vec());
        assert!(ClassPrior::Custom(vec![0.5, 0.4]).weights(2).is_err());
        assert!(ClassPrior::Custom(vec![0.5, 0.5]).weights(3).is_err());
    }

    #[test]
    fn class_counts_near_multinomial_expectation() {
        let d = gen(&SynthConfig::default(), 1);
        let counts = d.class_counts();
        let p = ClassPrior::BinomialBell.weights(5).unwrap();
        for (c, pc) in counts.iter().zip(p) {
            let mean = 1600.0 * pc;
            let sd = (1600.0 * pc * (1.0 - pc)).sqrt();
            assert!((*c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn chi_square_goodness_of_fit() {
        // critical value of chi-square with 4 dof at alpha = 0.001
        const CRIT: f64 = 18.467;
        let cfg = SynthConfig {
            n_samples: 10_000,
            feature_dim: 2,
            ..Default::default()
        };
        for seed in [1, 2, 3] {
            let counts = gen(&cfg, seed).class_counts();
            let p = ClassPrior::BinomialBell.weights(5).unwrap();
            let chi: f64 = counts
                .iter()
                .zip(&p)
                .map(|(&o, pc)| {
                    let e = 10_000.0 * pc;
                    (o as f64 - e).powi(2) / e
                })
                .sum();
            assert!(chi < CRIT, "seed {seed}: chi2 = {chi}");
        }
    }

    #[test]
    fn zero_noise_samples_sit_on_means() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            n_samples: 200,
            ..Default::default()
        };
        let d = gen(&cfg, 4);
        let means = class_means(&cfg, &mut seeded_rng(4));
        let mut correct = 0;
        for (i, s) in d.samples.iter().enumerate() {
            assert_eq!(s.features, means[d.target(i)]);
            let nearest = (0..5)
                .min_by(|&a, &b| {
                    let da: f64 = s
                        .features
                        .iter()
                        .zip(&means[a])
                        .map(|(x, m)| (x - m).powi(2))
                        .sum();
                    let db: f64 = s
                        .features
                        .iter()
                        .zip(&means[b])
                        .map(|(x, m)| (x - m).powi(2))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            correct += usize::from(nearest == d.target(i));
        }
        assert_eq!(correct, 200);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen(&SynthConfig::default(), 9);
        let b = gen(&SynthConfig::default(), 9);
        assert_eq!(a, b);
        assert_ne!(a.samples, gen(&SynthConfig::default(), 10).samples);
    }

    #[test]
    fn chain_projection_increases_with_label() {
        for manifold in [Manifold::LinearChain, Manifold::Arc] {
            let cfg = SynthConfig {
                manifold,
                n_samples: 4000,
                noise_sigma: 0.5,
                ..Default::default()
            };
            let d = gen(&cfg, 12);
            let means = class_means(&cfg, &mut seeded_rng(12));
            // project onto the first-to-last mean direction
            let dir: Vec<f64> = means[4].iter().zip(&means[0]).map(|(a, b)| a - b).collect();
            let mut sums = [0.0; 5];
            let counts = d.class_counts();
            for (i, s) in d.samples.iter().enumerate() {
                sums[d.target(i)] += crate::numeric::dot(&s.features, &dir);
            }
            let avg: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| s / c as f64)
                .collect();
            assert!(avg.windows(2).all(|w| w[0] < w[1]), "{manifold:?}: {avg:?}");
        }
    }

    #[test]
    fn validation_names_fields() {
        let cfg = SynthConfig {
            noise_sigma: -1.0,
            ..Default::default()
        };
        let e = cfg.validate().unwrap_err();
        assert!(matches!(&e, Error::Validation { field, .. } if field == "noise_sigma"));
        let cfg = SynthConfig {
            manifold: Manifold::Arc,
            feature_dim: 1,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Domain(_))));
    }

    #[test]
    fn split_sizes_and_partition() {
        let cfg = SynthConfig {
            n_samples: 1000,
            feature_dim: 2,
            ..Default::default()
        };
        let d = gen(&cfg, 2);
        let idx = split_indices(&d, SplitRatios::default(), &mut seeded_rng(3)).unwrap();
        let mut all: Vec<usize> = idx
            .train
            .iter()
            .chain(&idx.dev)
            .chain(&idx.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        // 5 classes, floor rounding loses < 1 per class per part
        assert!((95..=100).contains(&idx.dev.len()), "{}", idx.dev.len());
        assert!((95..=100).contains(&idx.test.len()));
        assert!((800..=810).contains(&idx.train.len()));
        let counts = d.class_counts();
        for (c, &n) in counts.iter().enumerate() {
            let in_dev = idx.dev.iter().filter(|&&i| d.target(i) == c).count();
            assert!((in_dev as f64 - n as f64 * 0.1).abs() <= 1.0);
        }

        let again = split_indices(&d, SplitRatios::default(), &mut seeded_rng(3)).unwrap();
        assert_eq!(idx, again);

        let all_train = SplitRatios {
            train: 1.0,
            dev: 0.0,
            test: 0.0,
        };
        let idx = split_indices(&d, all_train, &mut seeded_rng(3)).unwrap();
        assert_eq!(idx.train.len(), 1000);
    }

    #[test]
    fn tiny_class_goes_to_train() {
        let classes = OrdinalClassSet::contiguous(3).unwrap();
        let mut samples: Vec<Sample> = (0..20)
            .map(|i| Sample {
                features: vec![i as f64],
                label: 1 + (i % 2) as i64,
            })
            .collect();
        samples.push(Sample {
            features: vec![99.0],
            label: 3,
        });
        let d = Dataset {
            samples,
            classes,
            feature_names: vec!["f0".into()],
            groups: vec![],
            provenance: Provenance::File {
                path: "mem".into(),
                sha256: String::new(),
            },
        };
        let idx = split_indices(&d, SplitRatios::default(), &mut seeded_rng(0)).unwrap();
        assert!(idx.train.contains(&20));
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let d = gen(
            &SynthConfig {
                n_samples: 10,
                ..Default::default()
            },
            0,
        );
        let r = SplitRatios {
            train: 0.5,
            dev: 0.1,
            test: 0.1,
        };
        assert!(split(&d, r, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn csv_parsing() {
        let classes = OrdinalClassSet::default();
        let ok = b"a,b,label\n1.0,2.5,3\n-1,0,1\n0.25,1e-3,5\n";
        let d = parse_csv(ok, &classes, "mem").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples[1].features, vec![-1.0, 0.0]);
        assert_eq!(d.samples[2].label, 5);

        let e = parse_csv(b"a,label\n1.0,3\n2.0,7\n", &classes, "mem").unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
        assert!(e.to_string().contains("mem:3"), "{e}");

        let e = parse_csv(b"a,label\n1.0,3\nx,2\n", &classes, "mem").unwrap_err();
        assert!(
            matches!(&e, Error::Parse { location, .. } if location == "mem:3"),
            "{e}"
        );

        let e = parse_csv(b"a,label\n1.0,3\n2.0\n", &classes, "mem").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));

        assert!(parse_csv(b"a,b\n1,2\n", &classes, "mem").is_err());
    }

    #[test]
    fn csv_groups_are_fused_in_first_appearance_order() {
        let classes = OrdinalClassSet::default();
        let text = b"content.a,delivery.x,content.b,label\n1,2,3,4\n";
        let d = parse_csv(text, &classes, "mem").unwrap();
        assert_eq!(d.groups.len(), 2);
        assert_eq!(d.groups[0].name, "content");
        assert_eq!(d.groups[0].len, 2);
        assert_eq!(d.groups[1].name, "delivery");
        assert_eq!(d.samples[0].features, vec![1.0, 3.0, 2.0]);
        assert_eq!(
            d.feature_names,
            vec!["content.a", "content.b", "delivery.x"]
        );
    }

    #[test]
    fn csv_write_read_roundtrip() {
        let d = gen(
            &SynthConfig {
                n_samples: 50,
                ..Default::default()
            },
            5,
        );
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = parse_csv(&buf, &d.classes, "mem").unwrap();
        assert_eq!(back.samples, d.samples);
    }
}
