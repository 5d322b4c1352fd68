//! Fréchet distance and linear-classifier discriminability scores over feature sets.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::checkpoint::{Checkpoint, RecordData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// Row-major `[n, d]`.
    pub data: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub extractor: String,
    pub dataset: String,
}

impl FeatureSet {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::shape("feature set", &[data.len()], &[n, d]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("feature set contains non-finite values".into()));
        }
        Ok(FeatureSet {
            data,
            n,
            d,
            extractor: String::new(),
            dataset: String::new(),
        })
    }

    pub fn tagged(mut self, extractor: &str, dataset: &str) -> Self {
        self.extractor = extractor.into();
        self.dataset = dataset.into();
        self
    }

    /// Records `features` (`f64`, `[n, d]`), `extractor` and `dataset`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.insert("features", &[self.n, self.d], RecordData::F64(self.data.clone()))
            .expect("extent matches");
        c.put_bytes("extractor", self.extractor.as_bytes());
        c.put_bytes("dataset", self.dataset.as_bytes());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let rec = c.get("features")?;
        let (RecordData::F64(data), [n, d]) = (&rec.data, rec.shape.as_slice()) else {
            return Err(Error::Format {
                kind: "feature set",
                msg: "'features' must be a rank-2 f64 record".into(),
            });
        };
        let text = |name: &str| -> Result<String> {
            String::from_utf8(c.bytes(name)?.to_vec()).map_err(|e| Error::Format {
                kind: "feature set",
                msg: format!("'{name}' is not UTF-8: {e}"),
            })
        };
        Ok(FeatureSet::new(data.clone(), *n, *d)?.tagged(&text("extractor")?, &text("dataset")?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.d);
        for i in 0..self.n {
            for (j, v) in self.row(i).iter().enumerate() {
                m[j] += v;
            }
        }
        m / self.n as f64
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut c = DMatrix::zeros(self.d, self.d);
        let mut centered = vec![0.0; self.d];
        for i in 0..self.n {
            for (j, v) in self.row(i).iter().enumerate() {
                centered[j] = v - mu[j];
            }
            for a in 0..self.d {
                let ca = centered[a];
                for b in a..self.d {
                    c[(a, b)] += ca * centered[b];
                }
            }
        }
        for a in 0..self.d {
            for b in 0..a {
                c[(a, b)] = c[(b, a)];
            }
        }
        c / (self.n as f64 - 1.0)
    }
}

/// Eigenvalues of a symmetric matrix with small negative round-off clamped to zero.
fn clamped_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-6 * max.max(f64::MIN_POSITIVE) {
                return Err(Error::Numerical(format!(
                    "{what} is not positive semi-definite: eigenvalue {v:e}, largest magnitude {max:e}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

fn sqrtm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clamped_eigen(m.clone(), "covariance")?;
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * s * eig.eigenvectors.transpose())
}

/// `‖μ_r − μ_f‖² + Tr(Σ_r + Σ_f − 2 (Σ_r Σ_f)^{1/2})`.
pub fn fid(real: &FeatureSet, fake: &FeatureSet) -> Result<f64> {
    if real.d != fake.d {
        return Err(Error::contract(format!("feature dims differ: {} vs {}", real.d, fake.d)));
    }
    if real.n <= real.d || fake.n <= fake.d {
        return Err(Error::contract(format!(
            "need more than {} samples per set, got {} and {}",
            real.d, real.n, fake.n
        )));
    }
    let diff = real.mean() - fake.mean();
    let (sr, sf) = (real.covariance(), fake.covariance());
    let root = sqrtm(&sr)?;
    let inner = &root * &sf * &root;
    let eig = clamped_eigen(inner, "covariance product")?;
    let tr_cross: f64 = eig.eigenvalues.iter().map(|v| v.sqrt()).sum();
    Ok(diff.norm_squared() + sr.trace() + sf.trace() - 2.0 * tr_cross)
}

/// Settings of the linear classifier behind P-IDS and U-IDS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    /// L2 regularization strength (the margin parameter).
    pub lambda: f64,
    pub iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            iterations: 1000,
        }
    }
}

/// Linear decision function over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub center: Vec<f64>,
    pub scale: f64,
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearClassifier {
    pub fn decision(&self, x: &[f64]) -> f64 {
        let dot: f64 = x
            .iter()
            .zip(&self.center)
            .zip(&self.w)
            .map(|((v, c), w)| (v - c) / self.scale * w)
            .sum();
        dot + self.b
    }
}

/// Hinge-loss SVM (real = +1, fake = −1) by full-batch subgradient descent
/// with step `1 / (λ t)` and iterate averaging.
pub fn train_svm(real: &FeatureSet, fake: &FeatureSet, cfg: SvmConfig) -> Result<LinearClassifier> {
    if real.d != fake.d {
        return Err(Error::contract(format!("feature dims differ: {} vs {}", real.d, fake.d)));
    }
    if real.n == 0 || fake.n == 0 || !(cfg.lambda > 0.0) {
        return Err(Error::contract("svm needs nonempty sets and positive lambda"));
    }
    let d = real.d;
    let total = (real.n + fake.n) as f64;
    let mut center = vec![0.0; d];
    for set in [real, fake] {
        for i in 0..set.n {
            for (c, v) in center.iter_mut().zip(set.row(i)) {
                *c += v / total;
            }
        }
    }
    let mut ss = 0.0;
    for set in [real, fake] {
        for i in 0..set.n {
            ss += set.row(i).iter().zip(&center).map(|(v, c)| (v - c).powi(2)).sum::<f64>();
        }
    }
    let scale = (ss / total / d as f64).sqrt();
    if !(scale > 1e-12) {
        return Err(Error::Numerical("features have zero variance".into()));
    }
    let xs: Vec<(Vec<f64>, f64)> = [(real, 1.0), (fake, -1.0)]
        .iter()
        .flat_map(|&(set, y)| {
            let center = &center;
            (0..set.n).map(move |i| (set.row(i).iter().zip(center).map(|(v, c)| (v - c) / scale).collect(), y))
        })
        .collect();
    // Classes are weighted equally regardless of their sizes.
    let class_weight = |y: f64| if y > 0.0 { 0.5 / real.n as f64 } else { 0.5 / fake.n as f64 };
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (mut w_avg, mut b_avg) = (vec![0.0; d], 0.0);
    for t in 1..=cfg.iterations {
        let eta = 1.0 / (cfg.lambda * (t as f64 + 1.0));
        let mut gw: Vec<f64> = w.iter().map(|v| cfg.lambda * v).collect();
        let mut gb = 0.0;
        for (x, y) in &xs {
            let f: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            if y * f < 1.0 {
                let cw = class_weight(*y);
                for (g, v) in gw.iter_mut().zip(x) {
                    *g -= cw * y * v;
                }
                gb -= cw * y;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta * g;
        }
        b -= eta * gb;
        let k = t as f64;
        for (a, wi) in w_avg.iter_mut().zip(&w) {
            *a += (wi - *a) / k;
        }
        b_avg += (b - b_avg) / k;
    }
    Ok(LinearClassifier {
        center,
        scale,
        w: w_avg,
        b: b_avg,
    })
}

/// Returns `(P-IDS, U-IDS)`. P-IDS is `None` unless `paired`.
pub fn pids_uids(real: &FeatureSet, fake: &FeatureSet, paired: bool, cfg: SvmConfig) -> Result<(Option<f64>, f64)> {
    if paired && real.n != fake.n {
        return Err(Error::contract(format!(
            "paired score needs equal sizes, got {} and {}",
            real.n, fake.n
        )));
    }
    let clf = train_svm(real, fake, cfg)?;
    let fr: Vec<f64> = (0..real.n).map(|i| clf.decision(real.row(i))).collect();
    let ff: Vec<f64> = (0..fake.n).map(|i| clf.decision(fake.row(i))).collect();
    let miss_r = fr.iter().filter(|&&v| v < 0.0).count() as f64 / real.n as f64;
    let miss_f = ff.iter().filter(|&&v| v > 0.0).count() as f64 / fake.n as f64;
    let uids = 0.5 * (miss_r + miss_f);
    let pids = paired.then(|| {
        fr.iter()
            .zip(&ff)
            .map(|(r, f)| match f.partial_cmp(r) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Equal) => 0.5,
                _ => 0.0,
            })
            .sum::<f64>()
            / real.n as f64
    });
    Ok((pids, uids))
}
