//! Post-processing of weight trajectories: trailing-window smoothing,
//! domain-to-language aggregation, cross-run averaging and KL reports.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::corpus::SourceKey;
use crate::error::{Error, Result};
use crate::simplex::{kl_x100, WeightVector};
use crate::text::{expect_header, fmt_f64, parse_f64, read_text, records, write_text};

/// Tolerance for language-level sums.
pub const LANGUAGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub lr: f64,
    pub alpha: WeightVector,
    /// Mean batch loss per source sampled at this step.
    pub losses: BTreeMap<SourceKey, f64>,
    /// Alignment score per source sampled at this step.
    pub scores: BTreeMap<SourceKey, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    records: Vec<TrajectoryRecord>,
    config_fingerprint: String,
}

impl Trajectory {
    pub fn new(config_fingerprint: impl Into<String>) -> Self {
        Trajectory {
            records: Vec::new(),
            config_fingerprint: config_fingerprint.into(),
        }
    }

    pub fn push(&mut self, record: TrajectoryRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Input(format!(
                    "trajectory steps must increase: {} after {}",
                    record.step, last.step
                )));
            }
            if !record.alpha.same_keys(&last.alpha) {
                return Err(Error::Input(
                    "trajectory records cover different sources".into(),
                ));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn config_fingerprint(&self) -> &str {
        &self.config_fingerprint
    }

    pub fn keys(&self) -> Vec<SourceKey> {
        self.records
            .first()
            .map(|r| r.alpha.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Column header of the delimited form.
    pub fn header(keys: &[SourceKey]) -> String {
        let mut cols = vec![
            "step".to_string(),
            "lr".into(),
            "floor".into(),
            "config".into(),
        ];
        for prefix in ["alpha", "loss", "score"] {
            cols.extend(keys.iter().map(|k| format!("{prefix}:{k}")));
        }
        cols.join("\t")
    }

    /// One tab-separated line; sources without a loss or score at this step
    /// get `-`.
    pub fn format_record(&self, record: &TrajectoryRecord) -> String {
        let floor = record
            .alpha
            .floor()
            .map_or_else(|| "none".to_string(), fmt_f64);
        let mut cols = vec![
            record.step.to_string(),
            fmt_f64(record.lr),
            floor,
            self.config_fingerprint.clone(),
        ];
        cols.extend(record.alpha.iter().map(|(_, w)| fmt_f64(w)));
        for map in [&record.losses, &record.scores] {
            cols.extend(
                record
                    .alpha
                    .keys()
                    .map(|k| map.get(k).map_or_else(|| "-".to_string(), |x| fmt_f64(*x))),
            );
        }
        cols.join("\t")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = Trajectory::header(&self.keys());
        out.push('\n');
        for r in &self.records {
            out.push_str(&self.format_record(r));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut recs = records(text);
        let (line, header) = recs
            .next()
            .ok_or_else(|| Error::format(origin, 0, "file is empty"))?;
        if header.len() < 4 || header[..4] != ["step", "lr", "floor", "config"] {
            return Err(Error::format(origin, line, "not a trajectory header"));
        }
        let rest = &header[4..];
        if rest.len() % 3 != 0 || rest.is_empty() {
            return Err(Error::format(
                origin,
                line,
                "trajectory header has ragged source columns",
            ));
        }
        let k = rest.len() / 3;
        let keys = rest[..k]
            .iter()
            .map(|c| {
                c.strip_prefix("alpha:")
                    .ok_or_else(|| Error::format(origin, line, format!("unexpected column {c}")))?
                    .parse::<SourceKey>()
            })
            .collect::<Result<Vec<_>>>()?;
        if Trajectory::header(&keys) != header.join("\t") {
            return Err(Error::format(
                origin,
                line,
                "trajectory header columns out of order",
            ));
        }
        let mut traj: Option<Trajectory> = None;
        for (line, fields) in recs {
            if fields.len() != 4 + 3 * k {
                return Err(Error::format(origin, line, "wrong number of fields"));
            }
            let step = fields[0]
                .parse::<u64>()
                .map_err(|_| Error::format(origin, line, "bad step"))?;
            let lr = parse_f64(fields[1], origin, line)?;
            let floor = match fields[2] {
                "none" => None,
                f => Some(parse_f64(f, origin, line)?),
            };
            let fingerprint = fields[3];
            let alpha_vals = fields[4..4 + k]
                .iter()
                .map(|f| parse_f64(f, origin, line))
                .collect::<Result<Vec<_>>>()?;
            let alpha = WeightVector::new(keys.iter().cloned().zip(alpha_vals).collect(), floor)?;
            let optional = |cols: &[&str]| -> Result<BTreeMap<SourceKey, f64>> {
                let mut m = BTreeMap::new();
                for (key, f) in keys.iter().zip(cols) {
                    if *f != "-" {
                        m.insert(key.clone(), parse_f64(f, origin, line)?);
                    }
                }
                Ok(m)
            };
            let losses = optional(&fields[4 + k..4 + 2 * k])?;
            let scores = optional(&fields[4 + 2 * k..])?;
            let t = traj.get_or_insert_with(|| Trajectory::new(fingerprint));
            if t.config_fingerprint != fingerprint {
                return Err(Error::format(
                    origin,
                    line,
                    "config fingerprint changes mid-file",
                ));
            }
            t.push(TrajectoryRecord {
                step,
                lr,
                alpha,
                losses,
                scores,
            })
            .map_err(|e| Error::format(origin, line, e.to_string()))?;
        }
        traj.ok_or_else(|| Error::format(origin, line, "trajectory has no records"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_tsv())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Trajectory::from_tsv(&read_text(path)?, &path.display().to_string())
    }

    /// Comma-separated per-step weights for plotting: one column per source,
    /// then one per language.
    pub fn alpha_csv(&self) -> String {
        let keys = self.keys();
        let languages: Vec<String> = {
            let mut l: Vec<String> = keys.iter().map(|k| k.language.clone()).collect();
            l.dedup();
            l
        };
        let mut out = String::from("step");
        for k in &keys {
            out.push_str(&format!(",{k}"));
        }
        for l in &languages {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.step.to_string());
            for (_, w) in r.alpha.iter() {
                out.push(',');
                out.push_str(&fmt_f64(w));
            }
            let agg = language_sums(&r.alpha);
            for l in &languages {
                out.push(',');
                out.push_str(&fmt_f64(agg[l]));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean of alpha over the final `min(window, len)` records, renormalized.
/// The floor is kept when every averaged record carries the same one.
pub fn smooth(trajectory: &Trajectory, window: usize) -> Result<WeightVector> {
    if window == 0 {
        return Err(Error::Input("smoothing window must be positive".into()));
    }
    let records = trajectory.records();
    if records.is_empty() {
        return Err(Error::Input("cannot smooth an empty trajectory".into()));
    }
    let tail = &records[records.len().saturating_sub(window)..];
    let keys: Vec<SourceKey> = tail[0].alpha.keys().cloned().collect();
    let mut sums = vec![0.0; keys.len()];
    for r in tail {
        for (s, (_, w)) in sums.iter_mut().zip(r.alpha.iter()) {
            *s += w;
        }
    }
    let smoothed = WeightVector::normalize(keys.iter().cloned().zip(sums))?;
    let floor = tail[0].alpha.floor();
    match floor {
        Some(g) if tail.iter().all(|r| r.alpha.floor() == Some(g)) && smoothed.min() >= g => {
            WeightVector::new(smoothed.entries().clone(), Some(g))
        }
        _ => Ok(smoothed),
    }
}

/// Per-language weights with the runs they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageWeightSet {
    weights: BTreeMap<String, f64>,
    pub provenance: Vec<String>,
}

impl LanguageWeightSet {
    pub fn new(weights: BTreeMap<String, f64>, provenance: Vec<String>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Input("language weight set is empty".into()));
        }
        for (lang, w) in &weights {
            crate::corpus::validate_name("language", lang)?;
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Input(format!("weight for {lang} is {w}")));
            }
        }
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > LANGUAGE_TOL {
            return Err(Error::Precondition(format!(
                "language weights sum to {sum}"
            )));
        }
        Ok(LanguageWeightSet {
            weights,
            provenance,
        })
    }

    pub fn normalize(raw: BTreeMap<String, f64>, provenance: Vec<String>) -> Result<Self> {
        let sum: f64 = raw.values().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(Error::Numeric("cannot normalize language weights".into()));
        }
        LanguageWeightSet::new(
            raw.into_iter().map(|(l, w)| (l, w / sum)).collect(),
            provenance,
        )
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn get(&self, language: &str) -> Option<f64> {
        self.weights.get(language).copied()
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn values(&self) -> Vec<f64> {
        self.weights.values().copied().collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.provenance {
            out.push_str(&format!("# provenance: {p}\n"));
        }
        out.push_str("language\tweight\n");
        for (l, w) in &self.weights {
            out.push_str(&format!("{l}\t{}\n", fmt_f64(*w)));
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let provenance = text
            .lines()
            .filter_map(|l| l.strip_prefix("# provenance: "))
            .map(str::to_string)
            .collect();
        let mut recs = records(text);
        expect_header(recs.next(), &["language", "weight"], origin)?;
        let mut weights = BTreeMap::new();
        for (line, fields) in recs {
            let [lang, w] = fields[..] else {
                return Err(Error::format(origin, line, "expected 2 fields"));
            };
            if weights
                .insert(lang.to_string(), parse_f64(w, origin, line)?)
                .is_some()
            {
                return Err(Error::format(origin, line, "duplicate language"));
            }
        }
        LanguageWeightSet::new(weights, provenance)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_text())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        LanguageWeightSet::from_text(&read_text(path)?, &path.display().to_string())
    }
}

fn language_sums(v: &WeightVector) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (key, w) in v.iter() {
        *out.entry(key.language.clone()).or_default() += w;
    }
    out
}

/// A language's weight is the sum of its domain weights.
pub fn aggregate_languages(v: &WeightVector) -> Result<LanguageWeightSet> {
    LanguageWeightSet::new(language_sums(v), Vec::new())
}

/// Unweighted mean per language, renormalized; provenance is concatenated.
pub fn average_sets(sets: &[LanguageWeightSet]) -> Result<LanguageWeightSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Input("nothing to average".into()))?;
    let mut sums: BTreeMap<String, f64> = first.weights.keys().map(|l| (l.clone(), 0.0)).collect();
    let mut provenance = Vec::new();
    for set in sets {
        if !set.weights.keys().eq(first.weights.keys()) {
            return Err(Error::Input(
                "language sets cover different languages".into(),
            ));
        }
        for (l, w) in &set.weights {
            *sums.get_mut(l).expect("keys checked") += w;
        }
        provenance.extend(set.provenance.iter().cloned());
    }
    let n = sets.len() as f64;
    LanguageWeightSet::normalize(
        sums.into_iter().map(|(l, s)| (l, s / n)).collect(),
        provenance,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRow {
    pub run: String,
    /// KL x 100 over domain-language weights.
    pub domain_language: f64,
    /// KL x 100 over aggregated language weights.
    pub language: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub reference: String,
    pub rows: Vec<DivergenceRow>,
}

/// KL x 100 of every run against `reference` at both granularities.
pub fn divergence_report(
    runs: &[(String, WeightVector)],
    reference_name: &str,
    reference: &WeightVector,
) -> Result<DivergenceReport> {
    let ref_lang = aggregate_languages(reference)?;
    let rows = runs
        .iter()
        .map(|(name, v)| {
            if !v.same_keys(reference) {
                return Err(Error::Input(format!(
                    "run {name} covers different sources than the reference"
                )));
            }
            let lang = aggregate_languages(v)?;
            Ok(DivergenceRow {
                run: name.clone(),
                domain_language: kl_x100(&v.values(), &reference.values())?,
                language: kl_x100(&lang.values(), &ref_lang.values())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DivergenceReport {
        reference: reference_name.to_string(),
        rows,
    })
}

impl DivergenceReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("run\tkl_x100_domain_language\tkl_x100_language\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.2}\t{:.2}\n",
                r.run, r.domain_language, r.language
            ));
        }
        out
    }
}

/// Aligned table with one column per run and one row per granularity.
impl fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = [
            format!("D_KL (D-L, base {})", self.reference),
            format!("D_KL (L, base {})", self.reference),
        ];
        let label_w = labels.iter().map(String::len).max().unwrap_or(0);
        let widths: Vec<usize> = self.rows.iter().map(|r| r.run.len().max(6)).collect();
        write!(f, "{:label_w$}", "")?;
        for (r, w) in self.rows.iter().zip(&widths) {
            write!(f, "  {:>w$}", r.run)?;
        }
        writeln!(f)?;
        for (i, label) in labels.iter().enumerate() {
            write!(f, "{label:label_w$}")?;
            for (r, w) in self.rows.iter().zip(&widths) {
                let v = if i == 0 {
                    r.domain_language
                } else {
                    r.language
                };
                write!(f, "  {v:>w$.2}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
