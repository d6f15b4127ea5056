//! Weighted particle systems, resampling and ancestry-index algebra.
//!
//! Indices are stored zero-based in memory and written one-based wherever
//! they leave the process (CSV, ledgers, diagnostics).

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered collection of ancestor indices into a source system of
/// `source_len` particles. Duplicates are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMultiset {
    indices: Vec<usize>,
    source_len: usize,
}

impl IndexMultiset {
    pub fn identity(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            source_len: n,
        }
    }

    pub fn from_zero_based(indices: Vec<usize>, source_len: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= source_len) {
            return Err(Error::IndexOutOfRange {
                context: "index multiset",
                index: bad + 1,
                len: source_len,
            });
        }
        Ok(Self {
            indices,
            source_len,
        })
    }

    pub fn from_one_based(indices: &[usize], source_len: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            if i == 0 || i > source_len {
                return Err(Error::IndexOutOfRange {
                    context: "index multiset",
                    index: i,
                    len: source_len,
                });
            }
            out.push(i - 1);
        }
        Ok(Self {
            indices: out,
            source_len,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.source_len == self.indices.len() && self.indices.iter().enumerate().all(|(k, &i)| k == i)
    }

    /// `result[i] = self[outer[i]]`: follow `outer` first, then `self`.
    ///
    /// Lengths may differ; this is the unchecked form of [`forward_update`].
    pub fn compose_after(&self, outer: &IndexMultiset) -> Result<IndexMultiset> {
        if outer.source_len != self.indices.len() {
            return Err(Error::DimensionMismatch {
                context: "index composition",
                expected: self.indices.len(),
                actual: outer.source_len,
            });
        }
        Ok(IndexMultiset {
            indices: outer.indices.iter().map(|&a| self.indices[a]).collect(),
            source_len: self.source_len,
        })
    }
}

/// Updates `b` through `a`: `result[i] = b[a[i]]`.
pub fn forward_update(a: &IndexMultiset, b: &IndexMultiset) -> Result<IndexMultiset> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "forward_update",
            expected: b.len(),
            actual: a.len(),
        });
    }
    b.compose_after(a)
}

/// Backward propagation through a chain of index collections listed in
/// increasing submodel order; the last entry drives the update.
///
/// For `s = 0..T-2`, entry `T-s-2` (zero-based) is replaced by its
/// composition with entry `T-s-1`, and `systems[T-s-2]` is gathered by the
/// new indices. `systems` is aligned with the first `T-1` entries.
pub fn back_left_update(
    index_chain: &[IndexMultiset],
    systems: &[WeightedParticleSystem],
) -> Result<(Vec<WeightedParticleSystem>, Vec<IndexMultiset>)> {
    let t = index_chain.len();
    if t < 2 {
        return Err(Error::config("back_left_update needs at least two index collections"));
    }
    if systems.len() != t - 1 {
        return Err(Error::DimensionMismatch {
            context: "back_left_update systems",
            expected: t - 1,
            actual: systems.len(),
        });
    }
    let mut chain = index_chain.to_vec();
    let mut out = systems.to_vec();
    for s in 0..=(t - 2) {
        let driver = t - 1 - s;
        let target = driver - 1;
        chain[target] = forward_update(&chain[driver], &chain[target])?;
        out[target] = systems[target].gather(&chain[target])?;
    }
    Ok((out, chain))
}

/// Mirror image of [`back_left_update`]: the first entry drives the update
/// and composition proceeds towards the end of the list. `systems` is aligned
/// with entries `1..T`.
pub fn back_right_update(
    index_chain: &[IndexMultiset],
    systems: &[WeightedParticleSystem],
) -> Result<(Vec<WeightedParticleSystem>, Vec<IndexMultiset>)> {
    let t = index_chain.len();
    if t < 2 {
        return Err(Error::config("back_right_update needs at least two index collections"));
    }
    if systems.len() != t - 1 {
        return Err(Error::DimensionMismatch {
            context: "back_right_update systems",
            expected: t - 1,
            actual: systems.len(),
        });
    }
    let mut chain = index_chain.to_vec();
    let mut out = systems.to_vec();
    for s in 0..=(t - 2) {
        chain[s + 1] = forward_update(&chain[s], &chain[s + 1])?;
        out[s] = systems[s].gather(&chain[s + 1])?;
    }
    Ok((out, chain))
}

/// `N` particles of dimension `d` with log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedParticleSystem {
    labels: Vec<String>,
    values: Vec<f64>,
    log_weights: Vec<f64>,
}

impl WeightedParticleSystem {
    pub fn new(labels: Vec<String>, values: Vec<f64>, log_weights: Vec<f64>) -> Result<Self> {
        let n = log_weights.len();
        if n == 0 {
            return Err(Error::config("a particle system needs at least one particle"));
        }
        if values.len() != n * labels.len() {
            return Err(Error::DimensionMismatch {
                context: "particle values",
                expected: n * labels.len(),
                actual: values.len(),
            });
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::config(format!("duplicate particle label `{l}`")));
            }
        }
        if log_weights.iter().any(|w| w.is_nan()) {
            return Err(Error::NotANumber("log-weights"));
        }
        if !log_weights.iter().any(|w| w.is_finite()) {
            return Err(Error::DegenerateWeights);
        }
        Ok(Self {
            labels,
            values,
            log_weights,
        })
    }

    /// Equally weighted system (all log-weights zero).
    pub fn uniform(labels: Vec<String>, values: Vec<f64>, n: usize) -> Result<Self> {
        Self::new(labels, values, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let d = self.dim();
        (0..self.len()).map(|i| self.values[i * d + j]).collect()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn column_by_label(&self, label: &str) -> Option<Vec<f64>> {
        self.column_index(label).map(|j| self.column(j))
    }

    pub fn is_equally_weighted(&self) -> bool {
        let w0 = self.log_weights[0];
        self.log_weights.iter().all(|&w| w == w0)
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalize_log_weights(&self.log_weights)
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.log_weights)
    }

    pub fn with_log_weights(mut self, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "log-weights",
                expected: self.len(),
                actual: log_weights.len(),
            });
        }
        self.log_weights = log_weights;
        Self::new(self.labels, self.values, self.log_weights)
    }

    pub fn with_uniform_weights(mut self) -> Self {
        self.log_weights.iter_mut().for_each(|w| *w = 0.0);
        self
    }

    /// Rows picked by `idx`; each row keeps its log-weight.
    pub fn gather(&self, idx: &IndexMultiset) -> Result<Self> {
        if idx.source_len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "gather",
                expected: self.len(),
                actual: idx.source_len(),
            });
        }
        let d = self.dim();
        let mut values = Vec::with_capacity(idx.len() * d);
        let mut lw = Vec::with_capacity(idx.len());
        for &a in idx.as_slice() {
            values.extend_from_slice(self.row(a));
            lw.push(self.log_weights[a]);
        }
        Self::new(self.labels.clone(), values, lw)
    }

    /// Column-wise concatenation; weights are taken from `self`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                context: "hstack",
                expected: self.len(),
                actual: other.len(),
            });
        }
        let (d1, d2) = (self.dim(), other.dim());
        let mut values = Vec::with_capacity(self.len() * (d1 + d2));
        for i in 0..self.len() {
            values.extend_from_slice(self.row(i));
            values.extend_from_slice(other.row(i));
        }
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        Self::new(labels, values, self.log_weights.clone())
    }

    pub fn select_columns(&self, labels: &[String]) -> Result<Self> {
        let cols = labels
            .iter()
            .map(|l| {
                self.column_index(l)
                    .ok_or_else(|| Error::config(format!("unknown column `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.len() * cols.len());
        for i in 0..self.len() {
            let r = self.row(i);
            values.extend(cols.iter().map(|&c| r[c]));
        }
        Self::new(labels.to_vec(), values, self.log_weights.clone())
    }

    /// CSV with header `labels..., log_weight`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = self.labels.join(",");
        if !header.is_empty() {
            header.push(',');
        }
        header.push_str("log_weight");
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            for v in self.row(i) {
                line.push_str(&format_f64(*v));
                line.push(',');
            }
            line.push_str(&format_f64(self.log_weights[i]));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::malformed(path, "empty file"))??;
        let mut labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        if labels.last().map(String::as_str) != Some("log_weight") {
            return Err(Error::malformed(path, "last column must be `log_weight`"));
        }
        labels.pop();
        let d = labels.len();
        let mut values = Vec::new();
        let mut lw = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::malformed(
                    path,
                    format!("row {} has {} fields, expected {}", ln + 2, fields.len(), d + 1),
                ));
            }
            for (k, f) in fields.iter().enumerate() {
                let v = parse_f64(f.trim()).ok_or_else(|| {
                    Error::malformed(path, format!("row {}: cannot parse `{f}`", ln + 2))
                })?;
                if k < d {
                    values.push(v);
                } else {
                    lw.push(v);
                }
            }
        }
        Self::new(labels, values, lw).map_err(|e| Error::malformed(path, e.to_string()))
    }

    /// Binary columnar dump: little-endian `u64` label count, then each label
    /// as `u64` byte length plus UTF-8 bytes, then `u64` row count, then rows
    /// of `d` values followed by the log-weight, all as `f64`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&(self.labels.len() as u64).to_le_bytes())?;
        for l in &self.labels {
            w.write_all(&(l.len() as u64).to_le_bytes())?;
            w.write_all(l.as_bytes())?;
        }
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for i in 0..self.len() {
            for v in self.row(i) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&self.log_weights[i].to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut u = [0u8; 8];
        let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let d = read_u64(&mut r)? as usize;
        let mut labels = Vec::with_capacity(d);
        for _ in 0..d {
            let len = read_u64(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            labels.push(
                String::from_utf8(buf).map_err(|_| Error::malformed(path, "label is not UTF-8"))?,
            );
        }
        let n = read_u64(&mut r)? as usize;
        let mut values = Vec::with_capacity(n * d);
        let mut lw = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            for _ in 0..d {
                r.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            r.read_exact(&mut b)?;
            lw.push(f64::from_le_bytes(b));
        }
        Self::new(labels, values, lw).map_err(|e| Error::malformed(path, e.to_string()))
    }
}

/// Shortest round-trip decimal form; infinities as `inf`/`-inf`.
pub fn format_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" | "Inf" => Some(f64::INFINITY),
        "-inf" | "-Inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

/// Log-sum-exp in index order. Returns `-inf` when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(Error::NotANumber("log-weights"));
    }
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(log_weights.iter().map(|w| (w - lse).exp()).collect())
}

/// Effective sample size `1 / sum(w_i^2)` of normalised weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let w = normalize_log_weights(log_weights)?;
    Ok(1.0 / w.iter().map(|x| x * x).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKind {
    Multinomial,
    Systematic,
}

/// Resampling scheme plus the relative-ESS level below which it fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleScheme {
    pub kind: ResampleKind,
    pub threshold: f64,
}

impl Default for ResampleScheme {
    fn default() -> Self {
        Self {
            kind: ResampleKind::Systematic,
            threshold: 0.5,
        }
    }
}

impl ResampleScheme {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::config(format!(
                "resampling threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn should_resample(&self, relative_ess: f64) -> bool {
        relative_ess < self.threshold
    }
}

/// Draws `n_out` ancestor indices proportional to `weights` (already
/// normalised).
pub fn draw_ancestors<R: Rng + ?Sized>(
    weights: &[f64],
    kind: ResampleKind,
    n_out: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = weights.len();
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    let pick = |u: f64| -> usize {
        let target = u * total;
        let k = cdf.partition_point(|&c| c <= target);
        let mut k = k.min(n - 1);
        // skip zero-weight tail entries reached through rounding
        while weights[k] == 0.0 && k > 0 {
            k -= 1;
        }
        k
    };
    match kind {
        ResampleKind::Multinomial => (0..n_out).map(|_| pick(rng.random::<f64>())).collect(),
        ResampleKind::Systematic => {
            let u0: f64 = rng.random();
            (0..n_out)
                .map(|i| pick((i as f64 + u0) / n_out as f64))
                .collect()
        }
    }
}

/// Resamples to `N` equally weighted particles and returns the ancestry.
pub fn resample<R: Rng + ?Sized>(
    system: &WeightedParticleSystem,
    scheme: &ResampleScheme,
    rng: &mut R,
) -> Result<(WeightedParticleSystem, IndexMultiset)> {
    let w = system.normalized_weights()?;
    let idx = draw_ancestors(&w, scheme.kind, system.len(), rng);
    let idx = IndexMultiset::from_zero_based(idx, system.len())?;
    let out = system.gather(&idx)?.with_uniform_weights();
    Ok((out, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};
    use proptest::prelude::*;
    use rand::Rng;

    fn sys(values: Vec<f64>, lw: Vec<f64>) -> WeightedParticleSystem {
        WeightedParticleSystem::new(vec!["x".into()], values, lw).unwrap()
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.0; 4]).unwrap() - 4.0).abs() < 1e-12);
        let ninf = f64::NEG_INFINITY;
        assert!((ess(&[0.0, ninf, ninf, ninf]).unwrap() - 1.0).abs() < 1e-12);
        let h = 0.5f64.ln();
        assert!((ess(&[h, h, ninf, ninf]).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(ess(&[ninf, ninf]), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn system_rejects_bad_input() {
        let ninf = f64::NEG_INFINITY;
        assert!(WeightedParticleSystem::new(vec!["a".into()], vec![1.0], vec![ninf]).is_err());
        assert!(WeightedParticleSystem::new(
            vec!["a".into(), "a".into()],
            vec![1.0, 2.0],
            vec![0.0]
        )
        .is_err());
        assert!(WeightedParticleSystem::new(vec!["a".into()], vec![1.0, 2.0], vec![0.0]).is_err());
    }

    #[test]
    fn resample_point_mass() {
        let ninf = f64::NEG_INFINITY;
        let s = sys(vec![1.0, 2.0, 3.0], vec![0.0, ninf, ninf]);
        for kind in [ResampleKind::Multinomial, ResampleKind::Systematic] {
            let mut rng = Streams::new(1, 0).stream(Purpose::Resample, 0, 0);
            let scheme = ResampleScheme { kind, threshold: 0.5 };
            let (out, idx) = resample(&s, &scheme, &mut rng).unwrap();
            assert_eq!(idx.one_based(), vec![1, 1, 1]);
            assert_eq!(out.values(), &[1.0, 1.0, 1.0]);
            assert!(out.is_equally_weighted());
        }
    }

    #[test]
    fn systematic_uniform_is_permutation() {
        for n in [1usize, 2, 3, 7, 64, 1000] {
            let s = sys((0..n).map(|i| i as f64).collect(), vec![0.0; n]);
            for seed in 0..20 {
                let mut rng = Streams::new(seed, 0).stream(Purpose::Resample, 0, 0);
                let (_, idx) = resample(&s, &ResampleScheme::default(), &mut rng).unwrap();
                let mut seen = idx.as_slice().to_vec();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn multinomial_frequency_matches_weight() {
        let lw: Vec<f64> = [0.7f64, 0.1, 0.1, 0.1].iter().map(|w| w.ln()).collect();
        let s = sys(vec![0.0, 1.0, 2.0, 3.0], lw);
        let scheme = ResampleScheme {
            kind: ResampleKind::Multinomial,
            threshold: 0.5,
        };
        let streams = Streams::new(99, 0);
        let reps = 100_000u64;
        let mut hits = 0usize;
        for r in 0..reps {
            let mut rng = streams.stream(Purpose::Resample, r, 0);
            let (_, idx) = resample(&s, &scheme, &mut rng).unwrap();
            hits += idx.as_slice().iter().filter(|&&i| i == 0).count();
        }
        let freq = hits as f64 / (reps as f64 * 4.0);
        assert!((freq - 0.7).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn resampling_is_unbiased() {
        // E[(1/N) sum f(x_resampled)] = sum w_i f(x_i) within 4 standard errors
        let w = [0.05f64, 0.4, 0.15, 0.3, 0.1];
        let xs = [0.3f64, -1.0, 2.0, 0.5, 1.5];
        let f = |x: f64| x.sin();
        let truth: f64 = w.iter().zip(&xs).map(|(w, x)| w * f(*x)).sum();
        let s = sys(xs.to_vec(), w.iter().map(|w| w.ln()).collect());
        for kind in [ResampleKind::Multinomial, ResampleKind::Systematic] {
            let scheme = ResampleScheme { kind, threshold: 0.5 };
            let streams = Streams::new(5, kind as u64);
            let reps = 10_000u64;
            let est: Vec<f64> = (0..reps)
                .map(|r| {
                    let mut rng = streams.stream(Purpose::Resample, r, 0);
                    let (out, _) = resample(&s, &scheme, &mut rng).unwrap();
                    out.values().iter().map(|&x| f(x)).sum::<f64>() / 5.0
                })
                .collect();
            let mean = est.iter().sum::<f64>() / reps as f64;
            let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
            let se = (var / reps as f64).sqrt().max(1e-12);
            assert!((mean - truth).abs() < 4.0 * se, "{kind:?}: {mean} vs {truth} (se {se})");
        }
    }

    #[test]
    fn forward_update_examples() {
        let f = |a: &[usize], b: &[usize]| {
            forward_update(
                &IndexMultiset::from_one_based(a, 3).unwrap(),
                &IndexMultiset::from_one_based(b, 9).unwrap(),
            )
            .unwrap()
            .one_based()
        };
        assert_eq!(f(&[1, 2, 3], &[7, 8, 9]), vec![7, 8, 9]);
        assert_eq!(f(&[2, 2, 3], &[7, 8, 9]), vec![8, 8, 9]);
        assert_eq!(f(&[3, 1, 1], &[4, 5, 6]), vec![6, 4, 4]);
    }

    #[test]
    fn forward_update_errors() {
        let a = IndexMultiset::from_one_based(&[1, 2], 2).unwrap();
        let b = IndexMultiset::from_one_based(&[1, 2, 3], 3).unwrap();
        assert!(forward_update(&a, &b).is_err());
        assert!(IndexMultiset::from_one_based(&[0, 1], 2).is_err());
        assert!(IndexMultiset::from_one_based(&[3, 1], 2).is_err());
    }

    #[test]
    fn back_left_identity_chain_is_noop() {
        let s = sys(vec![1.0, 2.0, 3.0], vec![0.0; 3]);
        let chain = vec![IndexMultiset::identity(3), IndexMultiset::identity(3)];
        let (systems, out) = back_left_update(&chain, std::slice::from_ref(&s)).unwrap();
        assert_eq!(out, chain);
        assert_eq!(systems[0], s);
    }

    #[test]
    fn back_left_two_step_trace() {
        let s = sys(vec![10.0, 20.0], vec![0.0; 2]);
        let chain = vec![
            IndexMultiset::from_one_based(&[2, 1], 2).unwrap(),
            IndexMultiset::from_one_based(&[2, 2], 2).unwrap(),
        ];
        let (systems, out) = back_left_update(&chain, &[s]).unwrap();
        assert_eq!(out[0].one_based(), vec![1, 1]);
        assert_eq!(systems[0].values(), &[10.0, 10.0]);
    }

    #[test]
    fn back_right_hand_trace() {
        // N = 5, driver first.
        let chain = vec![
            IndexMultiset::from_one_based(&[3, 3, 1, 5, 2], 5).unwrap(),
            IndexMultiset::from_one_based(&[2, 4, 4, 1, 5], 5).unwrap(),
            IndexMultiset::from_one_based(&[5, 1, 2, 3, 3], 5).unwrap(),
        ];
        let s1 = sys(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.0; 5]);
        let s2 = sys(vec![10.0, 20.0, 30.0, 40.0, 50.0], vec![0.0; 5]);
        let (systems, out) = back_right_update(&chain, &[s1, s2]).unwrap();
        // entry 1: b[a[i]] with a = (3,3,1,5,2), b = (2,4,4,1,5) -> (4,4,2,5,4)
        assert_eq!(out[1].one_based(), vec![4, 4, 2, 5, 4]);
        // entry 2: c[(4,4,2,5,4)] with c = (5,1,2,3,3) -> (3,3,1,3,3)
        assert_eq!(out[2].one_based(), vec![3, 3, 1, 3, 3]);
        assert_eq!(systems[0].values(), &[4.0, 4.0, 2.0, 5.0, 4.0]);
        assert_eq!(systems[1].values(), &[30.0, 30.0, 10.0, 30.0, 30.0]);
    }

    #[test]
    fn back_left_matches_stored_trajectories() {
        // Three generations of N = 5 particles; every particle stores its full
        // trajectory inline, and the index route must reproduce it.
        let n = 5;
        let streams = Streams::new(3, 0);
        let mut rng = streams.stream(Purpose::Resample, 0, 0);
        let perms: Vec<IndexMultiset> = (0..3)
            .map(|_| {
                let mut p: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = rng.random_range(0..=i);
                    p.swap(i, j);
                }
                IndexMultiset::from_zero_based(p, n).unwrap()
            })
            .collect();
        let gens: Vec<Vec<f64>> = (0..3)
            .map(|g| (0..n).map(|i| (g * 10 + i) as f64).collect())
            .collect();
        // generation g+1 particle i descends from generation g particle perms[g][i]
        let mut traj: Vec<Vec<f64>> = (0..n).map(|i| vec![gens[0][i]]).collect();
        for g in 0..2 {
            traj = (0..n)
                .map(|i| {
                    let mut t = traj[perms[g].as_slice()[i]].clone();
                    t.push(gens[g + 1][i]);
                    t
                })
                .collect();
        }
        // final generation is drawn from gen 2 by perms[2]
        let final_traj: Vec<Vec<f64>> = (0..n).map(|i| traj[perms[2].as_slice()[i]].clone()).collect();
        let systems: Vec<WeightedParticleSystem> = (0..2)
            .map(|g| sys(gens[g].clone(), vec![0.0; n]))
            .collect();
        let (updated, _) = back_left_update(&perms, &systems).unwrap();
        let gen2 = sys(gens[2].clone(), vec![0.0; n]).gather(&perms[2]).unwrap();
        for i in 0..n {
            assert_eq!(updated[0].values()[i], final_traj[i][0]);
            assert_eq!(updated[1].values()[i], final_traj[i][1]);
            assert_eq!(gen2.values()[i], final_traj[i][2]);
        }
    }

    #[test]
    fn back_right_mirrors_back_left() {
        let mk = |v: &[usize]| IndexMultiset::from_one_based(v, 5).unwrap();
        let chain = vec![mk(&[1, 1, 2, 5, 4]), mk(&[3, 2, 2, 1, 5]), mk(&[4, 4, 5, 1, 2])];
        let s0 = sys(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.0; 5]);
        let s1 = sys(vec![6.0, 7.0, 8.0, 9.0, 10.0], vec![0.0; 5]);
        let (ls, lc) = back_left_update(&chain, &[s0.clone(), s1.clone()]).unwrap();
        let rev_chain: Vec<_> = chain.iter().rev().cloned().collect();
        let (rs, rc) = back_right_update(&rev_chain, &[s1, s0]).unwrap();
        let rc_rev: Vec<_> = rc.into_iter().rev().collect();
        let rs_rev: Vec<_> = rs.into_iter().rev().collect();
        assert_eq!(lc, rc_rev);
        assert_eq!(ls, rs_rev);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = WeightedParticleSystem::new(
            vec!["a".into(), "b".into()],
            vec![0.1, -2.5e-8, 3.0, f64::MAX],
            vec![-0.3, f64::NEG_INFINITY],
        )
        .unwrap();
        let p = dir.path().join("s.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(WeightedParticleSystem::read_csv(&p).unwrap(), s);
        let b = dir.path().join("s.bin");
        s.write_binary(&b).unwrap();
        assert_eq!(WeightedParticleSystem::read_binary(&b).unwrap(), s);
    }

    proptest! {
        #[test]
        fn ess_is_shift_invariant(lw in proptest::collection::vec(-30.0f64..30.0, 1..40), c in -500.0f64..500.0) {
            let shifted: Vec<f64> = lw.iter().map(|w| w + c).collect();
            let a = ess(&lw).unwrap();
            let b = ess(&shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a);
            prop_assert!(a >= 1.0 - 1e-12 && a <= lw.len() as f64 + 1e-9);
        }

        #[test]
        fn forward_update_identity_and_associativity(
            n in 1usize..12,
            seeds in proptest::collection::vec(0usize..1000, 36),
        ) {
            let mk = |off: usize| {
                IndexMultiset::from_zero_based((0..n).map(|i| seeds[(off + i) % 36] % n).collect(), n).unwrap()
            };
            let (a, b, c) = (mk(0), mk(12), mk(24));
            prop_assert_eq!(forward_update(&IndexMultiset::identity(n), &b).unwrap(), b.clone());
            let lhs = forward_update(&a, &forward_update(&b, &c).unwrap()).unwrap();
            let rhs = forward_update(&forward_update(&a, &b).unwrap(), &c).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn resample_output_is_gather_of_input(
            lw in proptest::collection::vec(-5.0f64..5.0, 1..30),
            seed in 0u64..1000,
            systematic in proptest::bool::ANY,
        ) {
            let n = lw.len();
            let s = WeightedParticleSystem::new(
                vec!["x".into(), "y".into()],
                (0..2 * n).map(|k| k as f64 * 0.5).collect(),
                lw,
            ).unwrap();
            let scheme = ResampleScheme {
                kind: if systematic { ResampleKind::Systematic } else { ResampleKind::Multinomial },
                threshold: 0.5,
            };
            let mut rng = Streams::new(seed, 0).stream(Purpose::Resample, 0, 0);
            let (out, idx) = resample(&s, &scheme, &mut rng).unwrap();
            let g = s.gather(&idx).unwrap().with_uniform_weights();
            prop_assert_eq!(out, g);
        }
    }
}
