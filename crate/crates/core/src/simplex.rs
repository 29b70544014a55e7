//! Sampling weights on the probability simplex and the floor-constrained
//! projection.
//!
//! The projection clips every weight below the floor `gamma` up to `gamma`
//! and takes the resulting excess mass proportionally from the unclipped
//! weights. A single clip/redistribute pass can push an unclipped weight
//! below the floor, so by default the pass is repeated until no weight is
//! below `gamma`. Each pass scales the unclipped set by a common factor,
//! so their pairwise ratios equal the input ratios, and the clipped set only
//! grows, which bounds the pass count by `k`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::corpus::SourceKey;
use crate::error::{Error, Result};
use crate::text::{expect_header, fmt_f64, parse_f64, read_text, records, write_text};

/// Simplex membership tolerance.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Additive smoothing applied to a KL reference that contains zeros.
pub const KL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    entries: BTreeMap<SourceKey, f64>,
    floor: Option<f64>,
}

impl WeightVector {
    pub fn new(entries: BTreeMap<SourceKey, f64>, floor: Option<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Input("weight vector has no entries".into()));
        }
        if let Some((key, w)) = entries.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::Input(format!("weight for {key} is {w}")));
        }
        let sum: f64 = entries.values().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Precondition(format!("weights sum to {sum}, not 1")));
        }
        if let Some(gamma) = floor {
            if let Some((key, w)) = entries.iter().find(|(_, w)| **w < gamma - SIMPLEX_TOL) {
                return Err(Error::Precondition(format!(
                    "weight {w} for {key} is below the floor {gamma}"
                )));
            }
        }
        Ok(WeightVector { entries, floor })
    }

    /// Divides non-negative entries by their sum. The floor is unset.
    pub fn normalize(raw: impl IntoIterator<Item = (SourceKey, f64)>) -> Result<Self> {
        let raw: BTreeMap<SourceKey, f64> = raw.into_iter().collect();
        if let Some((key, w)) = raw.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::Numeric(format!(
                "cannot normalize weight {w} for {key}"
            )));
        }
        let sum: f64 = raw.values().sum();
        if sum.is_nan() || sum <= 0.0 {
            return Err(Error::Numeric("cannot normalize an all-zero vector".into()));
        }
        let entries = raw.into_iter().map(|(k, w)| (k, w / sum)).collect();
        WeightVector::new(entries, None)
    }

    pub fn uniform(keys: impl IntoIterator<Item = SourceKey>) -> Result<Self> {
        WeightVector::normalize(keys.into_iter().map(|k| (k, 1.0)))
    }

    pub fn get(&self, key: &SourceKey) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn entries(&self) -> &BTreeMap<SourceKey, f64> {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &SourceKey> {
        self.entries.keys()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.values().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SourceKey, f64)> {
        self.entries.iter().map(|(k, w)| (k, *w))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn floor(&self) -> Option<f64> {
        self.floor
    }

    pub fn min(&self) -> f64 {
        self.entries.values().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn same_keys(&self, other: &WeightVector) -> bool {
        self.entries.keys().eq(other.entries.keys())
    }

    fn with_values(&self, values: &[f64], floor: Option<f64>) -> Result<Self> {
        let entries = self
            .entries
            .keys()
            .cloned()
            .zip(values.iter().copied())
            .collect();
        WeightVector::new(entries, floor)
    }

    /// Text form: a `# floor:` line, a header, and one
    /// `language<TAB>domain<TAB>weight` record per source.
    pub fn to_text(&self) -> String {
        let floor = self.floor.map_or_else(|| "none".to_string(), fmt_f64);
        let mut out = format!("# floor: {floor}\nlanguage\tdomain\tweight\n");
        for (key, w) in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                key.language,
                key.domain,
                fmt_f64(*w)
            ));
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let floor = text
            .lines()
            .find_map(|l| l.strip_prefix("# floor:"))
            .map(str::trim)
            .ok_or_else(|| Error::format(origin, 1, "missing '# floor:' line"))?;
        let floor = match floor {
            "none" => None,
            f => Some(parse_f64(f, origin, 1)?),
        };
        let mut recs = records(text);
        expect_header(recs.next(), &["language", "domain", "weight"], origin)?;
        let mut entries = BTreeMap::new();
        for (line, fields) in recs {
            let [lang, domain, w] = fields[..] else {
                return Err(Error::format(origin, line, "expected 3 fields"));
            };
            let key = SourceKey::new(lang, domain)?;
            if entries.insert(key, parse_f64(w, origin, line)?).is_some() {
                return Err(Error::format(origin, line, "duplicate source"));
            }
        }
        WeightVector::new(entries, floor)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_text())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        WeightVector::from_text(&read_text(path)?, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// Repeat clip/redistribute until no weight is below the floor.
    #[default]
    FixedPoint,
    /// One clip/redistribute pass; the result may still violate the floor.
    SinglePass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    /// Keys held at the floor (outside the final unclipped set).
    pub clipped_keys: BTreeSet<SourceKey>,
    /// Total excess mass taken from unclipped weights, summed over passes.
    pub excess: f64,
    pub iterations: usize,
}

/// Result of [`project_floor_values`] on a plain slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceProjection {
    pub values: Vec<f64>,
    pub clipped: Vec<bool>,
    pub excess: f64,
    pub iterations: usize,
}

/// Floor projection on a normalized slice.
pub fn project_floor_values(
    values: &[f64],
    gamma: f64,
    mode: ProjectionMode,
) -> Result<SliceProjection> {
    let k = values.len();
    if k == 0 {
        return Err(Error::Input("cannot project an empty vector".into()));
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Input(format!(
            "floor must be a non-negative number, got {gamma}"
        )));
    }
    if gamma * k as f64 > 1.0 + SIMPLEX_TOL {
        return Err(Error::Infeasible(format!(
            "floor {gamma} times {k} sources exceeds 1"
        )));
    }
    let sum: f64 = values.iter().sum();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Precondition(format!(
            "projection input must be a normalized non-negative vector (sum {sum})"
        )));
    }

    let mut clipped = vec![false; k];
    if values.iter().all(|&v| v >= gamma) {
        return Ok(SliceProjection {
            values: values.to_vec(),
            clipped,
            excess: 0.0,
            iterations: 1,
        });
    }

    let mut current = values.to_vec();
    let mut excess = 0.0;
    let mut iterations = 0;
    loop {
        iterations += 1;
        for (v, c) in current.iter_mut().zip(clipped.iter_mut()) {
            if *v <= gamma {
                *v = gamma;
                *c = true;
            }
        }
        let clipped_count = clipped.iter().filter(|&&c| c).count();
        let unclipped_mass: f64 = current
            .iter()
            .zip(&clipped)
            .filter(|(_, &c)| !c)
            .map(|(v, _)| v)
            .sum();
        let pass_excess = clipped_count as f64 * gamma + unclipped_mass - 1.0;
        excess += pass_excess.max(0.0);
        if clipped_count == k {
            break;
        }
        // unclipped_mass - E = 1 - |clipped| * gamma
        let scale = (1.0 - clipped_count as f64 * gamma) / unclipped_mass;
        for (v, _) in current.iter_mut().zip(&clipped).filter(|(_, &c)| !c) {
            *v *= scale;
        }
        let violated = current.iter().zip(&clipped).any(|(v, &c)| !c && *v < gamma);
        if mode == ProjectionMode::SinglePass || !violated || iterations > k {
            break;
        }
    }
    Ok(SliceProjection {
        values: current,
        clipped,
        excess,
        iterations,
    })
}

/// Projects `v` onto `{a in simplex : a_i >= gamma}` with the fixed-point
/// clip/redistribute rule.
pub fn project_floor(v: &WeightVector, gamma: f64) -> Result<(WeightVector, ProjectionReport)> {
    project_floor_with(v, gamma, ProjectionMode::FixedPoint)
}

pub fn project_floor_with(
    v: &WeightVector,
    gamma: f64,
    mode: ProjectionMode,
) -> Result<(WeightVector, ProjectionReport)> {
    let out = project_floor_values(&v.values(), gamma, mode)?;
    let satisfied = out.values.iter().all(|&x| x >= gamma - SIMPLEX_TOL);
    let projected = v.with_values(&out.values, satisfied.then_some(gamma))?;
    let clipped_keys = v
        .keys()
        .zip(&out.clipped)
        .filter(|(_, &c)| c)
        .map(|(k, _)| k.clone())
        .collect();
    Ok((
        projected,
        ProjectionReport {
            clipped_keys,
            excess: out.excess,
            iterations: out.iterations,
        },
    ))
}

/// `100 * sum p_i ln(p_i / q_i)` over aligned slices, `0 ln 0 = 0`. A `q`
/// containing zeros gets [`KL_EPSILON`] added to every entry and is
/// renormalized first.
pub fn kl_x100(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Input(format!(
            "KL needs equal non-empty supports, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let smoothed;
    let q = if q.iter().any(|&x| x <= 0.0) {
        let total: f64 = q.iter().map(|x| x + KL_EPSILON).sum();
        smoothed = q
            .iter()
            .map(|x| (x + KL_EPSILON) / total)
            .collect::<Vec<_>>();
        &smoothed[..]
    } else {
        q
    };
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    Ok(100.0 * kl.max(0.0))
}

pub fn kl_divergence_x100(p: &WeightVector, q: &WeightVector) -> Result<f64> {
    if !p.same_keys(q) {
        return Err(Error::Input("KL arguments cover different sources".into()));
    }
    kl_x100(&p.values(), &q.values())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn keys(k: usize) -> Vec<SourceKey> {
        (0..k)
            .map(|i| SourceKey::new(format!("l{i:02}"), "d").unwrap())
            .collect()
    }

    fn wv(values: &[f64]) -> WeightVector {
        WeightVector::new(
            keys(values.len())
                .into_iter()
                .zip(values.iter().copied())
                .collect(),
            None,
        )
        .unwrap()
    }

    /// Independent oracle: the projection is `max(gamma, c * v)` with the
    /// unique `c` making the sum one; found by bisection.
    fn bisection_oracle(v: &[f64], gamma: f64) -> Vec<f64> {
        let total = |c: f64| v.iter().map(|&x| (c * x).max(gamma)).sum::<f64>();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let c = 0.5 * (lo + hi);
        v.iter().map(|&x| (c * x).max(gamma)).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            WeightVector::normalize(keys(2).into_iter().zip([2.0, 2.0]))
                .unwrap()
                .values(),
            vec![0.5, 0.5]
        );
        assert_eq!(wv(&[1.0, 0.0, 0.0, 0.0]).values(), vec![1.0, 0.0, 0.0, 0.0]);
        let n = WeightVector::normalize(keys(3).into_iter().zip([0.2, 0.3, 0.5])).unwrap();
        assert_eq!(n.values(), vec![0.2, 0.3, 0.5]);
        assert!(n.floor().is_none());
        assert!(matches!(
            WeightVector::normalize(keys(2).into_iter().zip([0.0, 0.0])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn feasible_input_unchanged() {
        let v = wv(&[0.25; 4]);
        let (out, report) = project_floor(&v, 0.02).unwrap();
        assert_eq!(out.values(), v.values());
        assert!(report.clipped_keys.is_empty());
        assert_eq!(report.iterations, 1);
        assert_eq!(out.floor(), Some(0.02));
    }

    #[test]
    fn worked_example() {
        let (out, report) = project_floor(&wv(&[0.05, 0.45, 0.50]), 0.1).unwrap();
        let got = out.values();
        let expected = [0.1, 0.45 - 0.05 * 0.45 / 0.95, 0.50 - 0.05 * 0.50 / 0.95];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
        let rounded: Vec<f64> = got.iter().map(|x| (x * 1e6).round() / 1e6).collect();
        assert_eq!(rounded, vec![0.1, 0.426316, 0.473684]);
        assert!((report.excess - 0.05).abs() < 1e-15);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.clipped_keys.len(), 1);
    }

    #[test]
    fn second_pass_needed() {
        // one pass takes 0.09 + 0.09 from {0.11, 0.8} and leaves 0.11 * 0.82/0.91 < 0.1
        let v = [0.005, 0.005, 0.08, 0.11, 0.8];
        let single = project_floor_values(&v, 0.1, ProjectionMode::SinglePass).unwrap();
        assert!(single.values.iter().any(|&x| x < 0.1 - 1e-12));
        let fixed = project_floor_values(&v, 0.1, ProjectionMode::FixedPoint).unwrap();
        assert!(fixed.iterations >= 2);
        assert!(fixed.values.iter().all(|&x| x >= 0.1 - 1e-12));
        let oracle = bisection_oracle(&v, 0.1);
        for (a, b) in fixed.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let (report_vec, _) = project_floor_with(&wv(&v), 0.1, ProjectionMode::SinglePass).unwrap();
        assert!(report_vec.floor().is_none());
    }

    #[test]
    fn infeasible_and_unnormalized() {
        assert!(matches!(
            project_floor(&wv(&[0.5, 0.5]), 0.6),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            project_floor_values(&[0.5, 0.6], 0.1, ProjectionMode::FixedPoint),
            Err(Error::Precondition(_))
        ));
        let (all_floor, _) = project_floor(&wv(&[0.9, 0.05, 0.05]), 1.0 / 3.0).unwrap();
        for x in all_floor.values() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_examples() {
        let p = wv(&[0.5, 0.5]);
        assert_eq!(kl_divergence_x100(&p, &p).unwrap(), 0.0);
        let q = wv(&[0.25, 0.75]);
        let expected = 100.0 * (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln());
        assert!((kl_divergence_x100(&p, &q).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 14.384).abs() < 1e-3);
        assert!(kl_divergence_x100(&p, &wv(&[0.2, 0.3, 0.5])).is_err());
        // zeros in the reference stay finite
        assert!(kl_divergence_x100(&p, &wv(&[1.0, 0.0]))
            .unwrap()
            .is_finite());
        assert!(kl_divergence_x100(&wv(&[1.0, 0.0]), &wv(&[1.0, 0.0])).unwrap() < 1e-9);
    }

    #[test]
    fn text_round_trip_exact() {
        let v =
            WeightVector::normalize(keys(5).into_iter().zip([1.0, 2.0, 3.0, 0.1, 0.7])).unwrap();
        let (v, _) = project_floor(&v, 0.1).unwrap();
        let text = v.to_text();
        let back = WeightVector::from_text(&text, "mem").unwrap();
        assert_eq!(back, v);
        let bits = |w: &WeightVector| w.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&v));
        assert!(WeightVector::from_text("language\tdomain\tweight\n", "mem").is_err());
    }

    fn simplex_point() -> impl Strategy<Value = (Vec<f64>, f64)> {
        (2usize..=12).prop_flat_map(|k| {
            (
                proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0, 1e-6f64..1e-3], k),
                0.0f64..1.0,
            )
                .prop_filter_map("non-zero", move |(raw, g)| {
                    let s: f64 = raw.iter().sum();
                    (s > 0.0).then(|| (raw.iter().map(|x| x / s).collect(), g / k as f64))
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn projection_properties((v, gamma) in simplex_point()) {
            let s: f64 = v.iter().sum();
            prop_assume!((s - 1.0).abs() <= SIMPLEX_TOL);
            let out = project_floor_values(&v, gamma, ProjectionMode::FixedPoint).unwrap();
            let sum: f64 = out.values.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(out.values.iter().all(|&x| x >= gamma - 1e-12));
            prop_assert!(out.iterations <= v.len() + 1);

            let again = project_floor_values(&out.values, gamma, ProjectionMode::FixedPoint).unwrap();
            for (a, b) in again.values.iter().zip(&out.values) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let free: Vec<usize> = (0..v.len()).filter(|&i| !out.clipped[i]).collect();
            for &i in &free {
                for &j in &free {
                    let lhs = out.values[i] * v[j];
                    let rhs = out.values[j] * v[i];
                    prop_assert!((lhs - rhs).abs() <= 1e-9 * (out.values[i] * v[j]).max(1e-300));
                }
            }
            let oracle = bisection_oracle(&v, gamma);
            for (a, b) in out.values.iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn kl_nonnegative((v, gamma) in simplex_point(), shift in 1usize..12) {
            prop_assume!(gamma > 0.0);
            let mut w = v.clone();
            w.rotate_left(shift % v.len());
            let p = project_floor_values(&v, gamma, ProjectionMode::FixedPoint).unwrap().values;
            let q = project_floor_values(&w, gamma, ProjectionMode::FixedPoint).unwrap().values;
            prop_assert!(kl_x100(&p, &q).unwrap() >= 0.0);
            prop_assert_eq!(kl_x100(&p, &p).unwrap(), 0.0);
        }
    }
}
