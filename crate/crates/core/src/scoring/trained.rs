//! Hashed n-gram classifier with gated fusion of tabular features.
//!
//! Forward pass for one utterance:
//!
//! ```text
//! h = mean of embedding rows over the hashed 1..3-grams
//! t = [start_time / 180, is_initiator]          (masked by the feature set)
//! g = logistic(W_g [h; t] + b_g)
//! f = h + g ⊙ (W_t t)
//! p = softmax(W_c f + b_c)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use fnv::FnvHashMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureSet, Featurizer, TabularFeatures};
use super::{ScoreContext, Scorer};
use crate::error::{Error, Result};
use crate::model::{ScoreClass, ScoreTriple};
use crate::num::{sigmoid, Scalar};

const MAGIC: &[u8; 8] = b"CPSCORER";
/// Bumped whenever the binary layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;
const CLASSES: usize = 3;
const TAB: usize = 2;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension { expected: cols, got: bad.len() });
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols).map(|_| T::lit(rng.gen_range(-scale..scale))).collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    fn at(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.cols + c]
    }

    fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`, where `x` may be split in two consecutive parts.
    fn mul_split(&self, a: &[T], b: &[T]) -> Vec<T> {
        debug_assert_eq!(a.len() + b.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let (ra, rb) = row.split_at(a.len());
                dot(ra, a) + dot(rb, b)
            })
            .collect()
    }

    fn mul(&self, x: &[T]) -> Vec<T> {
        self.mul_split(x, &[])
    }

    /// `selfᵀ · y`
    fn mul_t(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
        out
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Tabular branch and gate of the fusion layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedFusion<T> {
    /// `d × 2`
    pub w_t: Matrix<T>,
    /// `d × (d + 2)`
    pub w_g: Matrix<T>,
    /// `d`
    pub b_g: Vec<T>,
}

impl<T: Scalar> GatedFusion<T> {
    pub fn dim(&self) -> usize {
        self.b_g.len()
    }

    fn check(&self, text_dim: usize, tab_dim: usize) -> Result<()> {
        let d = self.b_g.len();
        let checks = [
            (d, text_dim),
            (d, self.w_t.rows),
            (tab_dim, self.w_t.cols),
            (d, self.w_g.rows),
            (d + tab_dim, self.w_g.cols),
        ];
        for (expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { expected, got });
            }
        }
        Ok(())
    }

    /// Returns `(u, g, fused)`.
    fn forward(&self, text: &[T], tabular: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let u = self.w_t.mul(tabular);
        let g: Vec<T> = self
            .w_g
            .mul_split(text, tabular)
            .into_iter()
            .zip(&self.b_g)
            .map(|(a, &b)| sigmoid(a + b))
            .collect();
        let fused = text
            .iter()
            .zip(g.iter().zip(&u))
            .map(|(&h, (&gi, &ui))| h + gi * ui)
            .collect();
        (u, g, fused)
    }
}

/// `text + g ⊙ (W_t · tabular)` with `g = logistic(W_g · [text; tabular] + b_g)`.
pub fn gated_fuse<T: Scalar>(text: &[T], tabular: &[T], fusion: &GatedFusion<T>) -> Result<Vec<T>> {
    fusion.check(text.len(), tabular.len())?;
    Ok(fusion.forward(text, tabular).2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub features: FeatureSet,
    pub featurizer: Featurizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 16,
            epochs: 8,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            seed: 0,
            features: FeatureSet::ALL,
            featurizer: Featurizer::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 {
            return Err(Error::Config("dim and epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.featurizer.hash_dim == 0 || self.featurizer.max_ngram == 0 {
            return Err(Error::Config("hash_dim and max_ngram must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub text: String,
    pub label: ScoreClass,
    pub start_time_s: f64,
    pub initiator: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub examples: usize,
    pub final_epoch_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScorer<T> {
    pub featurizer: Featurizer,
    pub features: FeatureSet,
    pub fusion: GatedFusion<T>,
    /// `3 × d`, rows in class order.
    pub w_c: Matrix<T>,
    pub b_c: Vec<T>,
    /// Sparse embedding rows keyed by hash bucket; absent rows are zero.
    pub embeddings: FnvHashMap<u32, Vec<T>>,
    pub meta: TrainingMeta,
}

struct Forward<T> {
    h: Vec<T>,
    x_tab: [T; TAB],
    u: Vec<T>,
    g: Vec<T>,
    f: Vec<T>,
    p: [T; CLASSES],
}

/// Parameter gradients for one example. Embedding gradient is `dh / n` per occurrence.
pub struct Gradients<T> {
    pub w_t: Matrix<T>,
    pub w_g: Matrix<T>,
    pub b_g: Vec<T>,
    pub w_c: Matrix<T>,
    pub b_c: Vec<T>,
    pub dh: Vec<T>,
}

fn softmax<T: Scalar>(z: &[T]) -> [T; CLASSES] {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p = [T::zero(); CLASSES];
    let mut s = T::zero();
    for (pi, &zi) in p.iter_mut().zip(z) {
        *pi = (zi - m).exp();
        s += *pi;
    }
    for pi in &mut p {
        *pi /= s;
    }
    p
}

impl<T: Scalar> TrainedScorer<T> {
    /// Fresh parameters drawn from the seeded generator.
    pub fn initialize(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (d as f64).sqrt();
        Ok(TrainedScorer {
            featurizer: config.featurizer,
            features: config.features,
            fusion: GatedFusion {
                w_t: Matrix::random(d, TAB, 0.1, &mut rng),
                w_g: Matrix::random(d, d + TAB, 0.1, &mut rng),
                b_g: vec![T::zero(); d],
            },
            w_c: Matrix::random(CLASSES, d, scale, &mut rng),
            b_c: vec![T::zero(); CLASSES],
            embeddings: FnvHashMap::default(),
            meta: TrainingMeta {
                epochs: config.epochs,
                learning_rate: config.learning_rate,
                weight_decay: config.weight_decay,
                seed: config.seed,
                examples: 0,
                final_epoch_loss: f64::NAN,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.fusion.dim()
    }

    fn pooled(&self, buckets: &[u32]) -> Vec<T> {
        let d = self.dim();
        let mut h = vec![T::zero(); d];
        if buckets.is_empty() {
            return h;
        }
        for b in buckets {
            if let Some(row) = self.embeddings.get(b) {
                for (hi, &e) in h.iter_mut().zip(row) {
                    *hi += e;
                }
            }
        }
        let n = T::from_usize(buckets.len()).expect("bucket count fits");
        for hi in &mut h {
            *hi /= n;
        }
        h
    }

    fn forward(&self, buckets: &[u32], tab: TabularFeatures<T>) -> Forward<T> {
        let h = self.pooled(buckets);
        let x_tab = tab.masked(self.features);
        let (u, g, f) = self.fusion.forward(&h, &x_tab);
        let z: Vec<T> = self.w_c.mul(&f).into_iter().zip(&self.b_c).map(|(a, &b)| a + b).collect();
        let p = softmax(&z);
        Forward { h, x_tab, u, g, f, p }
    }

    pub fn predict(&self, text: &str, tab: TabularFeatures<T>) -> ScoreTriple<T> {
        let fw = self.forward(&self.featurizer.buckets(text), tab);
        ScoreTriple { purpose: fw.p[0], question: fw.p[1], negative: fw.p[2] }
    }

    /// Cross-entropy loss and gradients for one example.
    pub fn loss_and_gradients(&self, text: &str, tab: TabularFeatures<T>, label: ScoreClass) -> (T, Gradients<T>) {
        let buckets = self.featurizer.buckets(text);
        let fw = self.forward(&buckets, tab);
        self.backward(&fw, label)
    }

    #[allow(clippy::needless_range_loop)]
    fn backward(&self, fw: &Forward<T>, label: ScoreClass) -> (T, Gradients<T>) {
        let d = self.dim();
        let y = label.index();
        let loss = -fw.p[y].ln();

        let mut dz = fw.p;
        dz[y] -= T::one();

        let mut w_c = Matrix::zeros(CLASSES, d);
        for (k, &dzk) in dz.iter().enumerate() {
            for j in 0..d {
                *w_c.at(k, j) = dzk * fw.f[j];
            }
        }
        let df = self.w_c.mul_t(&dz);

        let mut w_t = Matrix::zeros(d, TAB);
        let mut da = vec![T::zero(); d];
        for i in 0..d {
            let du = df[i] * fw.g[i];
            for j in 0..TAB {
                *w_t.at(i, j) = du * fw.x_tab[j];
            }
            da[i] = df[i] * fw.u[i] * fw.g[i] * (T::one() - fw.g[i]);
        }

        let mut w_g = Matrix::zeros(d, d + TAB);
        for i in 0..d {
            for j in 0..d {
                *w_g.at(i, j) = da[i] * fw.h[j];
            }
            for j in 0..TAB {
                *w_g.at(i, d + j) = da[i] * fw.x_tab[j];
            }
        }

        let dx = self.fusion.w_g.mul_t(&da);
        let dh = df.iter().zip(&dx).map(|(&a, &b)| a + b).collect();

        let grads = Gradients { w_t, w_g, b_g: da, w_c, b_c: dz.to_vec(), dh };
        (loss, grads)
    }

    fn apply(&mut self, grads: &Gradients<T>, buckets: &[u32], lr: T, decay: T) {
        let shrink = T::one() - lr * decay;
        let step = |w: &mut [T], g: &[T]| {
            for (wi, &gi) in w.iter_mut().zip(g) {
                *wi = *wi * shrink - lr * gi;
            }
        };
        step(&mut self.fusion.w_t.data, &grads.w_t.data);
        step(&mut self.fusion.w_g.data, &grads.w_g.data);
        step(&mut self.fusion.b_g, &grads.b_g);
        step(&mut self.w_c.data, &grads.w_c.data);
        step(&mut self.b_c, &grads.b_c);

        if buckets.is_empty() {
            return;
        }
        let mut unique = buckets.to_vec();
        unique.sort_unstable();
        let n = T::from_usize(buckets.len()).expect("bucket count fits");
        let d = self.dim();
        let mut i = 0;
        while i < unique.len() {
            let b = unique[i];
            let mut count = 0usize;
            while i < unique.len() && unique[i] == b {
                count += 1;
                i += 1;
            }
            let weight = lr * T::from_usize(count).expect("count fits") / n;
            let row = self.embeddings.entry(b).or_insert_with(|| vec![T::zero(); d]);
            for (e, &g) in row.iter_mut().zip(&grads.dh) {
                *e = *e * shrink - weight * g;
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        let dense = self
            .fusion
            .w_t
            .data
            .iter()
            .chain(&self.fusion.w_g.data)
            .chain(&self.fusion.b_g)
            .chain(&self.w_c.data)
            .chain(&self.b_c);
        let sparse = self.embeddings.values().flatten();
        if dense.chain(sparse).all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Model("model contains non-finite weights".into()))
        }
    }
}

impl<T: Scalar> Scorer<T> for TrainedScorer<T> {
    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTriple<T> {
        self.predict(&ctx.utterance.text, TabularFeatures::new(ctx.utterance.start_time_s, ctx.is_initiator))
    }
}

/// SGD on multiclass cross-entropy with linear learning-rate decay.
pub fn train<T: Scalar>(examples: &[TrainingExample], config: &TrainConfig) -> Result<TrainedScorer<T>> {
    for class in ScoreClass::ALL {
        if !examples.iter().any(|e| e.label == class) {
            return Err(Error::MissingLabel(class.as_str()));
        }
    }
    let mut model = TrainedScorer::<T>::initialize(config)?;
    let featurized: Vec<(Vec<u32>, TabularFeatures<T>, ScoreClass)> = examples
        .iter()
        .map(|e| (config.featurizer.buckets(&e.text), TabularFeatures::new(e.start_time_s, e.initiator), e.label))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..featurized.len()).collect();
    let total = (config.epochs * featurized.len()) as f64;
    let decay = T::lit(config.weight_decay);
    let mut step = 0usize;
    let mut epoch_loss = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        epoch_loss = 0.0;
        for &i in &order {
            let (buckets, tab, label) = &featurized[i];
            let fw = model.forward(buckets, *tab);
            let (loss, grads) = model.backward(&fw, *label);
            if !loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            epoch_loss += loss.as_f64();
            let lr = T::lit(config.learning_rate * (1.0 - step as f64 / total).max(1e-4));
            model.apply(&grads, buckets, lr, decay);
            step += 1;
        }
        epoch_loss /= featurized.len() as f64;
    }
    model.meta.examples = examples.len();
    model.meta.final_epoch_loss = epoch_loss;
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct Header {
    scalar: String,
    dim: usize,
    featurizer: Featurizer,
    features: FeatureSet,
    meta: TrainingMeta,
    embedding_rows: usize,
}

impl<T: Scalar> TrainedScorer<T> {
    /// Binary container: magic, format version, JSON header, little-endian weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            scalar: T::NAME.to_string(),
            dim: self.dim(),
            featurizer: self.featurizer,
            features: self.features,
            meta: self.meta.clone(),
            embedding_rows: self.embeddings.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let blocks = [&self.fusion.w_t.data, &self.fusion.w_g.data, &self.fusion.b_g, &self.w_c.data, &self.b_c];
        for w in blocks.into_iter().flatten() {
            w.write_le(&mut out);
        }
        let sorted: BTreeMap<_, _> = self.embeddings.iter().collect();
        for (bucket, row) in sorted {
            out.extend_from_slice(&bucket.to_le_bytes());
            for w in row {
                w.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Model("not a scorer model file".into()));
        }
        let version = r.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "model format version {version} is not supported (expected {MODEL_FORMAT_VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Model(format!("bad model header: {e}")))?;
        if header.scalar != T::NAME {
            return Err(Error::Model(format!(
                "model stores {} weights but {} was requested",
                header.scalar,
                T::NAME
            )));
        }
        let d = header.dim;
        if d == 0 {
            return Err(Error::Model("model dimension is zero".into()));
        }
        let mut block = |rows, cols| -> Result<Matrix<T>> {
            let data = (0..rows * cols).map(|_| r.scalar()).collect::<Result<_>>()?;
            Ok(Matrix { rows, cols, data })
        };
        let w_t = block(d, TAB)?;
        let w_g = block(d, d + TAB)?;
        let b_g = block(1, d)?.data;
        let w_c = block(CLASSES, d)?;
        let b_c = block(1, CLASSES)?.data;
        let mut embeddings = FnvHashMap::default();
        for _ in 0..header.embedding_rows {
            let bucket = r.u32()?;
            let row = (0..d).map(|_| r.scalar()).collect::<Result<Vec<T>>>()?;
            embeddings.insert(bucket, row);
        }
        if r.pos != bytes.len() {
            return Err(Error::Model("trailing bytes after model weights".into()));
        }
        let model = TrainedScorer {
            featurizer: header.featurizer,
            features: header.features,
            fusion: GatedFusion { w_t, w_g, b_g },
            w_c,
            b_c,
            embeddings,
            meta: header.meta,
        };
        model.check_finite()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Model("model file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(self.take(4)?);
        Ok(u32::from_le_bytes(buf))
    }

    fn scalar<T: Scalar>(&mut self) -> Result<T> {
        Ok(T::read_le(self.take(T::BYTES)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(d: usize, seed: u64) -> TrainedScorer<f64> {
        let config = TrainConfig {
            dim: d,
            seed,
            featurizer: Featurizer { hash_dim: 1 << 10, ..Featurizer::default() },
            ..TrainConfig::default()
        };
        let mut m = TrainedScorer::<f64>::initialize(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for b in m.featurizer.buckets("my card was declined at the store twice") {
            m.embeddings.insert(b, (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        for w in m.fusion.w_t.data.iter_mut().chain(m.fusion.b_g.iter_mut()) {
            *w = rng.gen_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn fuse_hand_evaluated_dim4() {
        // W_t rows, W_g rows, b_g and inputs chosen so each gate is a simple number.
        let fusion = GatedFusion {
            w_t: Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0], &[1.0, 1.0], &[0.0, 0.0]]).unwrap(),
            w_g: Matrix::zeros(4, 6),
            b_g: vec![0.0, 0.0, 3.0_f64.ln(), 0.0],
        };
        let h = [1.0, -1.0, 0.5, 2.0];
        let t = [0.5, 1.0];
        // u = [0.5, 2, 1.5, 0], g = [0.5, 0.5, 0.75, 0.5]
        let expected = [1.25, 0.0, 1.625, 2.0];
        let fused = gated_fuse(&h, &t, &fusion).unwrap();
        for (a, b) in fused.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{fused:?}");
        }
    }

    #[test]
    fn zero_tabular_branch_or_closed_gate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut fusion = GatedFusion {
            w_t: Matrix::zeros(4, 2),
            w_g: Matrix::random(4, 6, 1.0, &mut rng),
            b_g: vec![0.1; 4],
        };
        assert_eq!(gated_fuse(&h, &[0.3, 1.0], &fusion).unwrap(), h);
        fusion.w_t = Matrix::random(4, 2, 1.0, &mut rng);
        fusion.b_g = vec![-1e4; 4];
        assert_eq!(gated_fuse(&h, &[0.3, 1.0], &fusion).unwrap(), h);
    }

    #[test]
    fn fuse_rejects_mismatched_dimensions() {
        let fusion = GatedFusion { w_t: Matrix::<f64>::zeros(4, 2), w_g: Matrix::zeros(4, 6), b_g: vec![0.0; 4] };
        assert!(matches!(gated_fuse(&[0.0; 3], &[0.0; 2], &fusion), Err(Error::Dimension { .. })));
        assert!(matches!(gated_fuse(&[0.0; 4], &[0.0; 3], &fusion), Err(Error::Dimension { .. })));
    }

    fn loss_of(m: &TrainedScorer<f64>, text: &str, tab: TabularFeatures<f64>, y: ScoreClass) -> f64 {
        m.loss_and_gradients(text, tab, y).0
    }

    /// Central difference with one Richardson step (error O(eps^4)).
    fn numeric_derivative(f: impl Fn(f64) -> f64) -> f64 {
        let eps = 1e-3;
        let d = |e: f64| (f(e) - f(-e)) / (2.0 * e);
        (4.0 * d(eps / 2.0) - d(eps)) / 3.0
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn gate_gradient_matches_central_differences() {
        let text = "my card was declined at the store twice";
        let tab = TabularFeatures::new(42.0, true);
        for seed in 0..3 {
            let m = small_model(8, seed);
            for y in ScoreClass::ALL {
                let (_, grads) = m.loss_and_gradients(text, tab, y);
                let analytic = grads.w_g.data.iter().chain(&grads.b_g).chain(&grads.w_t.data);
                let n_wg = m.fusion.w_g.data.len();
                let n_bg = m.fusion.b_g.len();
                for (k, &a) in analytic.enumerate() {
                    let perturbed = |delta: f64| {
                        let mut p = m.clone();
                        if k < n_wg {
                            p.fusion.w_g.data[k] += delta;
                        } else if k < n_wg + n_bg {
                            p.fusion.b_g[k - n_wg] += delta;
                        } else {
                            p.fusion.w_t.data[k - n_wg - n_bg] += delta;
                        }
                        loss_of(&p, text, tab, y)
                    };
                    let numeric = numeric_derivative(perturbed);
                    assert!(relative_error(a, numeric) < 1e-4, "param {k}: analytic {a} numeric {numeric}");
                }
            }
        }
    }

    #[test]
    fn embedding_and_output_gradients_match_central_differences() {
        let text = "my card was declined";
        let tab = TabularFeatures::new(10.0, false);
        let m = small_model(8, 11);
        let buckets = m.featurizer.buckets(text);
        let (_, grads) = m.loss_and_gradients(text, tab, ScoreClass::Purpose);
        let n = buckets.len() as f64;
        let count = buckets.iter().filter(|&&b| b == buckets[0]).count() as f64;
        for j in 0..8 {
            let at = |delta: f64| {
                let mut p = m.clone();
                p.embeddings.get_mut(&buckets[0]).unwrap()[j] += delta;
                loss_of(&p, text, tab, ScoreClass::Purpose)
            };
            let analytic = grads.dh[j] * count / n;
            assert!(relative_error(analytic, numeric_derivative(at)) < 1e-4);

            let at = |delta: f64| {
                let mut p = m.clone();
                p.w_c.data[j] += delta;
                loss_of(&p, text, tab, ScoreClass::Purpose)
            };
            assert!(relative_error(grads.w_c.data[j], numeric_derivative(at)) < 1e-4);
        }
    }

    fn toy_examples() -> Vec<TrainingExample> {
        let rows = [
            ("I need to cancel my subscription please", ScoreClass::Purpose, 20.0, true),
            ("the reason for my call is my bill went up", ScoreClass::Purpose, 15.0, true),
            ("how can I help you today", ScoreClass::Question, 3.0, false),
            ("what can I do for you", ScoreClass::Question, 4.0, false),
            ("okay let me check that for you", ScoreClass::Negative, 60.0, false),
            ("thank you so much have a great day", ScoreClass::Negative, 200.0, true),
        ];
        rows.iter()
            .cycle()
            .take(60)
            .map(|&(t, l, s, i)| TrainingExample { text: t.into(), label: l, start_time_s: s, initiator: i })
            .collect()
    }

    #[test]
    fn training_fits_a_toy_set_and_is_deterministic() {
        let config = TrainConfig { epochs: 30, learning_rate: 0.5, seed: 9, ..TrainConfig::default() };
        let a = train::<f64>(&toy_examples(), &config).unwrap();
        let b = train::<f64>(&toy_examples(), &config).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        for e in toy_examples().iter().take(6) {
            let p = a.predict(&e.text, TabularFeatures::new(e.start_time_s, e.initiator));
            assert_eq!(p.argmax(), e.label, "{}", e.text);
        }
    }

    #[test]
    fn single_class_data_is_rejected() {
        let only_negative: Vec<_> = toy_examples().into_iter().filter(|e| e.label == ScoreClass::Negative).collect();
        assert!(matches!(
            train::<f64>(&only_negative, &TrainConfig::default()),
            Err(Error::MissingLabel("positive"))
        ));
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let config = TrainConfig { learning_rate: 1e300, epochs: 3, ..TrainConfig::default() };
        assert!(matches!(train::<f64>(&toy_examples(), &config), Err(Error::Divergence { .. })));
    }

    #[test]
    fn model_file_round_trips_bit_exact() {
        let config = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let m = train::<f32>(&toy_examples(), &config).unwrap();
        let bytes = m.to_bytes();
        let back = TrainedScorer::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, m);
        assert!(matches!(TrainedScorer::<f64>::from_bytes(&bytes), Err(Error::Model(_))));

        let mut wrong_version = bytes.clone();
        wrong_version[8..12].copy_from_slice(&99u32.to_le_bytes());
        let err = TrainedScorer::<f32>::from_bytes(&wrong_version).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
        assert!(TrainedScorer::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn softmax_is_on_the_simplex() {
        let m = small_model(8, 5);
        for text in ["", "my card was declined", &"word ".repeat(300)] {
            let p = m.predict(text, TabularFeatures::new(5.0, true));
            assert!(ScoreTriple::new(p.purpose, p.question, p.negative).is_ok());
        }
    }
}
