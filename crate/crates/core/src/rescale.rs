//! From language weights to a full-size data plan, and the language-level
//! sampler that realizes it.
//!
//! A plan demands `w_l * B` tokens of each language. Optional caps bound the
//! demand per language from above (`max_repetition * available`) and below
//! (`min_utilization * available`); the demand of a bound language is fixed
//! at its bound and the rest of the budget is shared among the free languages
//! in proportion to their weights. Equivalently, demand is
//! `clamp(c * w_l, lo_l, hi_l)` for the unique scale `c` that spends `B`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, SourceKey};
use crate::error::{Error, Result};
use crate::seed::{categorical, derive_seed};
use crate::text::{expect_header, fmt_f64, read_text, records, write_text};
use crate::weights::LanguageWeightSet;

/// Unique tokens per language after deduplication.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageInventory {
    available: BTreeMap<String, u64>,
}

impl LanguageInventory {
    pub fn new(available: BTreeMap<String, u64>) -> Result<Self> {
        if available.is_empty() {
            return Err(Error::Input("inventory is empty".into()));
        }
        for (lang, n) in &available {
            crate::corpus::validate_name("language", lang)?;
            if *n == 0 {
                return Err(Error::Input(format!("inventory for {lang} is zero tokens")));
            }
        }
        Ok(LanguageInventory { available })
    }

    /// Token counts per language of a tokenized corpus.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let mut available: BTreeMap<String, u64> = BTreeMap::new();
        for s in corpus.sources() {
            *available.entry(s.language().to_string()).or_default() += s.token_count();
        }
        LanguageInventory::new(available)
    }

    pub fn available(&self) -> &BTreeMap<String, u64> {
        &self.available
    }

    pub fn get(&self, language: &str) -> Option<u64> {
        self.available.get(language).copied()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("language\tavailable_tokens\n");
        for (l, n) in &self.available {
            out.push_str(&format!("{l}\t{n}\n"));
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut recs = records(text);
        expect_header(recs.next(), &["language", "available_tokens"], origin)?;
        let mut available = BTreeMap::new();
        for (line, fields) in recs {
            let [lang, n] = fields[..] else {
                return Err(Error::format(origin, line, "expected 2 fields"));
            };
            let n: u64 = n.trim().parse().map_err(|_| {
                Error::format(origin, line, format!("expected a token count, got {n:?}"))
            })?;
            if available.insert(lang.to_string(), n).is_some() {
                return Err(Error::format(origin, line, "duplicate language"));
            }
        }
        LanguageInventory::new(available)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_text())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        LanguageInventory::from_text(&read_text(path)?, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanCaps {
    pub max_repetition: Option<f64>,
    pub min_utilization: Option<f64>,
}

impl PlanCaps {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.max_repetition {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Input(format!(
                    "max_repetition must be positive, got {r}"
                )));
            }
        }
        if let Some(u) = self.min_utilization {
            if !(u > 0.0 && u <= 1.0) {
                return Err(Error::Input(format!(
                    "min_utilization must lie in (0, 1], got {u}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_uncapped(&self) -> bool {
        self.max_repetition.is_none() && self.min_utilization.is_none()
    }
}

impl fmt::Display for PlanCaps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_uncapped() {
            return write!(f, "uncapped");
        }
        let mut parts = Vec::new();
        if let Some(r) = self.max_repetition {
            parts.push(format!("max_repetition={r}"));
        }
        if let Some(u) = self.min_utilization {
            parts.push(format!("min_utilization={u}"));
        }
        write!(f, "{}", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub language: String,
    pub weight: f64,
    pub available: u64,
    pub demanded: u64,
    /// `demanded / available`.
    pub repetition: f64,
    /// Fraction of the unique tokens that get seen at least once.
    pub utilization: f64,
}

impl PlanRow {
    fn new(language: String, weight: f64, available: u64, demanded: u64) -> Self {
        let repetition = demanded as f64 / available as f64;
        PlanRow {
            language,
            weight,
            available,
            demanded,
            repetition,
            utilization: repetition.min(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescalePlan {
    pub rows: Vec<PlanRow>,
    pub budget: u64,
    pub caps: PlanCaps,
}

impl RescalePlan {
    pub fn row(&self, language: &str) -> Option<&PlanRow> {
        self.rows.iter().find(|r| r.language == language)
    }

    pub fn total_demanded(&self) -> u64 {
        self.rows.iter().map(|r| r.demanded).sum()
    }

    const COLUMNS: [&'static str; 6] = [
        "language",
        "weight",
        "available_tokens",
        "demanded_tokens",
        "repetition",
        "utilization",
    ];

    pub fn to_tsv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or("none".to_string(), fmt_f64);
        let mut out = format!(
            "# budget: {}\n# max_repetition: {}\n# min_utilization: {}\n{}\n",
            self.budget,
            opt(self.caps.max_repetition),
            opt(self.caps.min_utilization),
            Self::COLUMNS.join("\t")
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.language,
                fmt_f64(r.weight),
                r.available,
                r.demanded,
                fmt_f64(r.repetition),
                fmt_f64(r.utilization)
            ));
        }
        out
    }

    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let meta = |name: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(&format!("# {name}: ")))
                .ok_or_else(|| Error::format(origin, 0, format!("missing {name} line")))
        };
        let budget: u64 = meta("budget")?
            .parse()
            .map_err(|_| Error::format(origin, 1, "bad budget"))?;
        let opt = |name: &str| -> Result<Option<f64>> {
            match meta(name)? {
                "none" => Ok(None),
                v => crate::text::parse_f64(v, origin, 0).map(Some),
            }
        };
        let caps = PlanCaps {
            max_repetition: opt("max_repetition")?,
            min_utilization: opt("min_utilization")?,
        };
        let mut recs = records(text);
        expect_header(recs.next(), &Self::COLUMNS, origin)?;
        let mut rows = Vec::new();
        for (line, f) in recs {
            if f.len() != 6 {
                return Err(Error::format(origin, line, "expected 6 fields"));
            }
            let int = |s: &str| {
                s.parse::<u64>().map_err(|_| {
                    Error::format(origin, line, format!("expected an integer, got {s:?}"))
                })
            };
            let num = |s: &str| crate::text::parse_f64(s, origin, line);
            rows.push(PlanRow {
                language: f[0].to_string(),
                weight: num(f[1])?,
                available: int(f[2])?,
                demanded: int(f[3])?,
                repetition: num(f[4])?,
                utilization: num(f[5])?,
            });
        }
        Ok(RescalePlan { rows, budget, caps })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_tsv())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        RescalePlan::from_tsv(&read_text(path)?, &path.display().to_string())
    }
}

/// Aligned plain-text table with a totals row.
pub fn plan_report(plan: &RescalePlan) -> String {
    let mut table: Vec<[String; 6]> = vec![RescalePlan::COLUMNS.map(str::to_string)];
    for r in &plan.rows {
        table.push([
            r.language.clone(),
            format!("{:.4}", r.weight),
            r.available.to_string(),
            r.demanded.to_string(),
            format!("{:.4}", r.repetition),
            format!("{:.4}", r.utilization),
        ]);
    }
    let available: u64 = plan.rows.iter().map(|r| r.available).sum();
    let demanded = plan.total_demanded();
    let weight: f64 = plan.rows.iter().map(|r| r.weight).sum();
    table.push([
        "total".into(),
        format!("{weight:.4}"),
        available.to_string(),
        demanded.to_string(),
        format!("{:.4}", demanded as f64 / available as f64),
        String::new(),
    ]);
    let widths: Vec<usize> = (0..6)
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 || i + 2 == table.len() {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out.push_str(&format!("budget: {}\ncaps: {}\n", plan.budget, plan.caps));
    out
}

/// Real-valued demand `clamp(c * w, lo, hi)` with `sum = budget`.
fn continuous_demand(w: &[f64], lo: &[f64], hi: &[f64], budget: f64) -> Vec<f64> {
    let f = |c: f64| -> f64 {
        w.iter()
            .zip(lo.iter().zip(hi))
            .map(|(&w, (&lo, &hi))| (c * w).clamp(lo, hi))
            .sum()
    };
    let mut breaks: Vec<f64> = w
        .iter()
        .zip(lo.iter().zip(hi))
        .filter(|(&w, _)| w > 0.0)
        .flat_map(|(&w, (&lo, &hi))| [lo / w, hi / w])
        .filter(|c| c.is_finite())
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut prev = 0.0;
    let mut f_prev = f(0.0);
    let mut c = None;
    for &b in &breaks {
        let f_b = f(b);
        if f_b >= budget {
            c = Some(if f_b == f_prev {
                b
            } else {
                prev + (budget - f_prev) * (b - prev) / (f_b - f_prev)
            });
            break;
        }
        prev = b;
        f_prev = f_b;
    }
    let c = c.unwrap_or_else(|| {
        // beyond the last breakpoint only uncapped languages still grow
        let slope: f64 = w
            .iter()
            .zip(hi)
            .filter(|(&w, &hi)| w > 0.0 && hi.is_infinite())
            .map(|(&w, _)| w)
            .sum();
        prev + (budget - f_prev) / slope
    });
    w.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&w, (&lo, &hi))| (c * w).clamp(lo, hi))
        .collect()
}

/// Largest-remainder rounding to integers summing to `budget`, staying
/// inside the integer bounds. Ties go to the earlier language.
fn round_to_budget(x: &[f64], lo: &[u64], hi: &[u64], budget: u64) -> Vec<u64> {
    let mut out: Vec<u64> = x.iter().map(|v| v.floor() as u64).collect();
    for i in 0..out.len() {
        out[i] = out[i].clamp(lo[i], hi[i]);
    }
    let frac: Vec<f64> = x.iter().zip(&out).map(|(v, o)| v - *o as f64).collect();
    let total: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..x.len()).collect();
    if total < budget {
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
        let mut need = budget - total;
        while need > 0 {
            let before = need;
            for &i in &order {
                if need == 0 {
                    break;
                }
                if out[i] < hi[i] {
                    out[i] += 1;
                    need -= 1;
                }
            }
            assert!(need < before, "bounds admit the budget");
        }
    } else if total > budget {
        order.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]).then(b.cmp(&a)));
        let mut extra = total - budget;
        while extra > 0 {
            let before = extra;
            for &i in &order {
                if extra == 0 {
                    break;
                }
                if out[i] > lo[i] {
                    out[i] -= 1;
                    extra -= 1;
                }
            }
            assert!(extra < before, "bounds admit the budget");
        }
    }
    out
}

pub fn plan(
    weights: &LanguageWeightSet,
    inventory: &LanguageInventory,
    budget: u64,
    caps: PlanCaps,
) -> Result<RescalePlan> {
    if budget == 0 {
        return Err(Error::Input("budget must be positive".into()));
    }
    caps.validate()?;
    let langs: Vec<&str> = weights.languages().collect();
    if !langs
        .iter()
        .copied()
        .eq(inventory.available.keys().map(String::as_str))
    {
        return Err(Error::Input(format!(
            "weights cover {:?} but the inventory covers {:?}",
            langs,
            inventory.available.keys().collect::<Vec<_>>()
        )));
    }
    let w = weights.values();
    let avail: Vec<u64> = inventory.available.values().copied().collect();

    let lo: Vec<u64> = avail
        .iter()
        .map(|&a| {
            caps.min_utilization
                .map_or(0, |u| (u * a as f64).ceil() as u64)
        })
        .collect();
    let hi: Vec<u64> = avail
        .iter()
        .map(|&a| {
            caps.max_repetition
                .map_or(u64::MAX, |r| (r * a as f64).floor() as u64)
        })
        .collect();
    if let (Some(r), Some(u)) = (caps.max_repetition, caps.min_utilization) {
        if let Some(i) = (0..langs.len()).find(|&i| lo[i] > hi[i]) {
            return Err(Error::Planning(format!(
                "min_utilization {u} exceeds max_repetition {r} for {}",
                langs[i]
            )));
        }
    }
    let floor_total: u128 = lo.iter().map(|&l| l as u128).sum();
    if floor_total > budget as u128 {
        return Err(Error::Planning(format!(
            "min_utilization {} requires {floor_total} tokens, above budget {budget}",
            caps.min_utilization.unwrap_or_default()
        )));
    }
    // zero-weight languages never grow past their floor
    let ceiling_total: u128 = (0..w.len())
        .map(|i| {
            if w[i] > 0.0 {
                hi[i] as u128
            } else {
                lo[i] as u128
            }
        })
        .sum();
    if ceiling_total < budget as u128 {
        return Err(Error::Planning(format!(
            "max_repetition {} allows at most {ceiling_total} tokens, below budget {budget}",
            caps.max_repetition.unwrap_or_default()
        )));
    }

    let hi_real: Vec<f64> = hi
        .iter()
        .map(|&h| {
            if h == u64::MAX {
                f64::INFINITY
            } else {
                h as f64
            }
        })
        .collect();
    let lo_real: Vec<f64> = lo.iter().map(|&l| l as f64).collect();
    let x = continuous_demand(&w, &lo_real, &hi_real, budget as f64);
    let demanded = round_to_budget(&x, &lo, &hi, budget);

    let rows = langs
        .iter()
        .enumerate()
        .map(|(i, l)| PlanRow::new(l.to_string(), w[i], avail[i], demanded[i]))
        .collect();
    Ok(RescalePlan { rows, budget, caps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub index: u64,
    pub language: String,
    pub source: SourceKey,
    pub document_id: String,
}

impl Draw {
    pub const HEADER: &'static str = "index\tlanguage\tsource\tdocument_id";

    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.index, self.language, self.source, self.document_id
        )
    }
}

struct Pool<'a> {
    docs: Vec<(&'a SourceKey, &'a Document)>,
    order: Vec<usize>,
    cursor: usize,
}

/// Picks a language by weight, then the next document of that language's
/// shuffled pool. Domains within a language are merged into one pool; a pool
/// is reshuffled each time it is exhausted.
pub struct LanguageSampler<'a> {
    languages: Vec<String>,
    weights: Vec<f64>,
    pools: Vec<Pool<'a>>,
    rng: ChaCha8Rng,
    drawn: u64,
}

impl<'a> LanguageSampler<'a> {
    pub fn new(weights: &LanguageWeightSet, corpus: &'a Corpus, seed: u64) -> Result<Self> {
        LanguageSampler::with_stream(weights, corpus, seed, 0)
    }

    /// Independent stream `stream` of the same seed, for parallel consumers.
    pub fn with_stream(
        weights: &LanguageWeightSet,
        corpus: &'a Corpus,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let mut languages = Vec::new();
        let mut pools = Vec::new();
        for lang in weights.languages() {
            let docs: Vec<_> = corpus
                .sources()
                .iter()
                .filter(|s| s.language() == lang)
                .flat_map(|s| s.documents().iter().map(move |d| (s.key(), d)))
                .collect();
            if docs.is_empty() {
                return Err(Error::Sampling(format!("language {lang} has no documents")));
            }
            languages.push(lang.to_string());
            pools.push(Pool {
                order: Vec::new(),
                cursor: 0,
                docs,
            });
        }
        let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, "language-sampler"));
        rng.set_stream(stream);
        Ok(LanguageSampler {
            languages,
            weights: weights.values(),
            pools,
            rng,
            drawn: 0,
        })
    }

    pub fn draw(&mut self) -> Draw {
        let li = categorical(&mut self.rng, &self.weights);
        let pool = &mut self.pools[li];
        if pool.cursor == pool.order.len() {
            pool.order = (0..pool.docs.len()).collect();
            pool.order.shuffle(&mut self.rng);
            pool.cursor = 0;
        }
        let (key, doc) = pool.docs[pool.order[pool.cursor]];
        pool.cursor += 1;
        let draw = Draw {
            index: self.drawn,
            language: self.languages[li].clone(),
            source: key.clone(),
            document_id: doc.id.clone(),
        };
        self.drawn += 1;
        draw
    }
}

impl Iterator for LanguageSampler<'_> {
    type Item = Draw;

    fn next(&mut self) -> Option<Draw> {
        Some(self.draw())
    }
}
