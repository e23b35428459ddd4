//! Long-format payment panels: synthetic generation, CSV I/O, windowing,
//! balanced splitting and missing-data corruption.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValueDoc;
use crate::error::{Error, Result};
use crate::network::{NetworkParams, WindowSample};
use crate::training::Split;

/// Insurance order used throughout: six social insurances and the housing fund.
pub const INSURANCES: [&str; 7] = [
    "endowment",
    "working_medical",
    "unemployment",
    "injury",
    "maternity",
    "non_working_medical",
    "hpf",
];

/// Names for `m` payment columns: the insurance names when `m = 7`, else `pay_j`.
pub fn insurance_names(m: usize) -> Vec<String> {
    if m == INSURANCES.len() {
        INSURANCES.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=m).map(|j| format!("pay_{j}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRecord {
    pub unit_id: u64,
    pub period: i64,
    pub payments: Vec<f64>,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub m: usize,
    pub insurance_names: Vec<String>,
    pub records: Vec<PanelRecord>,
    /// Teacher network that produced the labels, if any.
    pub teacher: Option<NetworkParams>,
}

impl PanelDataset {
    /// Validates and wraps records: nonnegative payments of width `m`, unique
    /// `(unit, period)` keys and contiguous periods within each unit.
    pub fn new(m: usize, records: Vec<PanelRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut periods: BTreeMap<u64, Vec<i64>> = BTreeMap::new();
        for r in &records {
            if r.payments.len() != m {
                return Err(Error::Integrity(format!(
                    "unit {} period {} has {} payments, expected {m}",
                    r.unit_id,
                    r.period,
                    r.payments.len()
                )));
            }
            if r.payments.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(Error::Integrity(format!(
                    "unit {} period {} has a negative or non-finite payment",
                    r.unit_id, r.period
                )));
            }
            if matches!(r.label, Some(l) if l > 1) {
                return Err(Error::Integrity(format!("unit {} has a non-binary label", r.unit_id)));
            }
            if !seen.insert((r.unit_id, r.period)) {
                return Err(Error::Integrity(format!(
                    "duplicate record for unit {} period {}",
                    r.unit_id, r.period
                )));
            }
            periods.entry(r.unit_id).or_default().push(r.period);
        }
        for (unit, mut ps) in periods {
            ps.sort_unstable();
            if ps.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(Error::Integrity(format!("unit {unit} has non-contiguous periods")));
            }
        }
        Ok(Self {
            m,
            insurance_names: insurance_names(m),
            records,
            teacher: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records grouped by unit, each group sorted by period.
    fn by_unit(&self) -> BTreeMap<u64, Vec<&PanelRecord>> {
        let mut units: BTreeMap<u64, Vec<&PanelRecord>> = BTreeMap::new();
        for r in &self.records {
            units.entry(r.unit_id).or_default().push(r);
        }
        for rs in units.values_mut() {
            rs.sort_by_key(|r| r.period);
        }
        units
    }
}

/// Two-state (employed / unemployed) Markov panel generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_units: usize,
    pub n_periods: usize,
    /// Monthly probability of paying each insurance while employed.
    pub employed_pay_prob: Vec<f64>,
    pub unemployed_pay_prob: Vec<f64>,
    /// P(employed -> unemployed) per period.
    pub transition_eu: f64,
    /// P(unemployed -> employed) per period.
    pub transition_ue: f64,
    pub initial_employed_prob: f64,
    pub amount_low: f64,
    pub amount_high: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_units: 1000,
            n_periods: 24,
            employed_pay_prob: vec![0.55, 0.69, 0.99, 0.68, 0.71, 0.0, 0.47],
            unemployed_pay_prob: vec![0.75, 0.0, 0.98, 0.0, 0.0, 0.002, 0.02],
            transition_eu: 0.05,
            transition_ue: 0.05,
            initial_employed_prob: 0.5,
            amount_low: 5.0,
            amount_high: 100.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub const KEYS: &'static [&'static str] = &[
        "n_units",
        "n_periods",
        "employed_pay_prob",
        "unemployed_pay_prob",
        "transition_eu",
        "transition_ue",
        "initial_employed_prob",
        "amount_low",
        "amount_high",
        "data_seed",
    ];

    pub fn from_doc(doc: &KeyValueDoc) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            n_units: doc.get("n_units")?.unwrap_or(d.n_units),
            n_periods: doc.get("n_periods")?.unwrap_or(d.n_periods),
            employed_pay_prob: doc.get_array("employed_pay_prob")?.unwrap_or(d.employed_pay_prob),
            unemployed_pay_prob: doc.get_array("unemployed_pay_prob")?.unwrap_or(d.unemployed_pay_prob),
            transition_eu: doc.get("transition_eu")?.unwrap_or(d.transition_eu),
            transition_ue: doc.get("transition_ue")?.unwrap_or(d.transition_ue),
            initial_employed_prob: doc.get("initial_employed_prob")?.unwrap_or(d.initial_employed_prob),
            amount_low: doc.get("amount_low")?.unwrap_or(d.amount_low),
            amount_high: doc.get("amount_high")?.unwrap_or(d.amount_high),
            seed: doc.get("data_seed")?.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn m(&self) -> usize {
        self.employed_pay_prob.len()
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_units == 0 || self.n_periods == 0 {
            return Err(Error::Config("n_units and n_periods must be positive".into()));
        }
        if self.employed_pay_prob.is_empty() || self.employed_pay_prob.len() != self.unemployed_pay_prob.len() {
            return Err(Error::Config("pay probability vectors must be nonempty and equally long".into()));
        }
        if !self.employed_pay_prob.iter().chain(&self.unemployed_pay_prob).all(|p| prob(*p)) {
            return Err(Error::Config("pay probabilities must lie in [0, 1]".into()));
        }
        if !prob(self.transition_eu) || !prob(self.transition_ue) || !prob(self.initial_employed_prob) {
            return Err(Error::Config("transition and initial probabilities must lie in [0, 1]".into()));
        }
        if !(self.amount_low > 0.0 && self.amount_low < self.amount_high && self.amount_high.is_finite()) {
            return Err(Error::Config("amount range needs 0 < amount_low < amount_high".into()));
        }
        Ok(())
    }

    pub fn to_doc(&self) -> KeyValueDoc {
        let mut doc = KeyValueDoc::new();
        doc.push("n_units", self.n_units);
        doc.push("n_periods", self.n_periods);
        doc.push_array("employed_pay_prob", &self.employed_pay_prob);
        doc.push_array("unemployed_pay_prob", &self.unemployed_pay_prob);
        doc.push("transition_eu", self.transition_eu);
        doc.push("transition_ue", self.transition_ue);
        doc.push("initial_employed_prob", self.initial_employed_prob);
        doc.push("amount_low", self.amount_low);
        doc.push("amount_high", self.amount_high);
        doc.push("data_seed", self.seed);
        doc
    }
}

/// Employment-state panel: labels are the hidden Markov state (1 = employed).
///
/// Each period, every insurance is paid independently with the current
/// state's probability, with a uniform amount in `[amount_low, amount_high)`.
/// A probability of 0 is never paid in that state.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<PanelDataset> {
    config.validate()?;
    let records = simulate(config);
    PanelDataset::new(config.m(), records)
}

fn simulate(config: &GeneratorConfig) -> Vec<PanelRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m = config.m();
    let mut records = Vec::with_capacity(config.n_units * config.n_periods);
    for unit in 0..config.n_units {
        let mut employed = rng.gen_bool(config.initial_employed_prob);
        for period in 0..config.n_periods {
            if period > 0 {
                let p_switch = if employed { config.transition_eu } else { config.transition_ue };
                if rng.gen_bool(p_switch) {
                    employed = !employed;
                }
            }
            let probs = if employed { &config.employed_pay_prob } else { &config.unemployed_pay_prob };
            let payments = (0..m)
                .map(|j| {
                    if rng.gen_bool(probs[j]) {
                        rng.gen_range(config.amount_low..config.amount_high)
                    } else {
                        0.0
                    }
                })
                .collect();
            records.push(PanelRecord {
                unit_id: unit as u64,
                period: period as i64 + 1,
                payments,
                label: Some(u8::from(employed)),
            });
        }
    }
    records
}

/// Same payments as [`generate_synthetic`], labels drawn from a teacher network.
///
/// Every unit-period with a full `s`-period history gets a label
/// `Bernoulli(teacher.forward(window))`; earlier periods are unlabeled.
pub fn generate_teacher_labeled(config: &GeneratorConfig, teacher: &NetworkParams) -> Result<PanelDataset> {
    config.validate()?;
    teacher.validate()?;
    if teacher.m != config.m() {
        return Err(Error::Config(format!(
            "teacher expects m = {}, generator produces m = {}",
            teacher.m,
            config.m()
        )));
    }
    if teacher.s > config.n_periods {
        return Err(Error::Config(format!(
            "teacher window s = {} exceeds n_periods = {}",
            teacher.s, config.n_periods
        )));
    }
    let mut records = simulate(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (m, s) = (teacher.m, teacher.s);
    for unit_records in records.chunks_mut(config.n_periods) {
        for t in 0..unit_records.len() {
            if t + 1 < s {
                unit_records[t].label = None;
                continue;
            }
            let window = window_from(&unit_records[t + 1 - s..=t], m, 0)?;
            let p = teacher.forward(&window)?;
            unit_records[t].label = Some(u8::from(rng.gen_bool(p)));
        }
    }
    let mut ds = PanelDataset::new(m, records)?;
    ds.teacher = Some(teacher.clone());
    Ok(ds)
}

fn window_from(records: &[impl std::borrow::Borrow<PanelRecord>], m: usize, label: u8) -> Result<WindowSample> {
    let s = records.len();
    let mut flat = vec![0.0; m * s];
    for (t, r) in records.iter().enumerate() {
        for (j, p) in r.borrow().payments.iter().enumerate() {
            flat[j * s + t] = *p;
        }
    }
    WindowSample::from_flat(m, s, flat, label)
}

/// Rolling `s`-period windows ending at every labeled unit-period with a full
/// history. Units are visited by id, periods in order; windows run oldest to
/// newest.
pub fn windowize(dataset: &PanelDataset, s: usize) -> Result<Vec<WindowSample>> {
    if s == 0 {
        return Err(Error::Config("window length s must be positive".into()));
    }
    let mut out = Vec::new();
    for recs in dataset.by_unit().values() {
        for t in s - 1..recs.len() {
            if let Some(label) = recs[t].label {
                out.push(window_from(&recs[t + 1 - s..=t], dataset.m, label)?);
            }
        }
    }
    Ok(out)
}

/// Draws `n_per_class` samples of each label without replacement; half of
/// each class goes to train, half to test.
pub fn balanced_split(samples: &[WindowSample], n_per_class: usize, seed: u64) -> Result<Split> {
    if n_per_class < 2 || n_per_class % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "n_per_class = {n_per_class} must be a positive even number"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::with_capacity(n_per_class);
    let mut test_idx = Vec::with_capacity(n_per_class);
    for class in [1u8, 0u8] {
        let members: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        if members.len() < n_per_class {
            let name = if class == 1 { "1 (employed)" } else { "0 (unemployed)" };
            return Err(Error::InvalidInput(format!(
                "class {name} has {} samples, {n_per_class} requested",
                members.len()
            )));
        }
        let picked = sample_indices(&mut rng, members.len(), n_per_class).into_vec();
        let (a, b) = picked.split_at(n_per_class / 2);
        train_idx.extend(a.iter().map(|&i| members[i]));
        test_idx.extend(b.iter().map(|&i| members[i]));
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Split {
        train: train_idx.iter().map(|&i| samples[i].clone()).collect(),
        test: test_idx.iter().map(|&i| samples[i].clone()).collect(),
    })
}

/// Sets each positive payment cell to zero independently with probability `rate`.
pub fn corrupt_missing(dataset: &PanelDataset, rate: f64, seed: u64) -> Result<PanelDataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!("corruption rate {rate} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for r in &mut out.records {
        for p in &mut r.payments {
            if *p > 0.0 && rng.gen_bool(rate) {
                *p = 0.0;
            }
        }
    }
    Ok(out)
}

/// Writes `unit_id,period,pay_1..pay_m,label` (label blank when absent).
pub fn save_csv(dataset: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    let mut header = vec!["unit_id".to_string(), "period".to_string()];
    header.extend((1..=dataset.m).map(|j| format!("pay_{j}")));
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in &dataset.records {
        let mut row = vec![r.unit_id.to_string(), r.period.to_string()];
        row.extend(r.payments.iter().map(|p| p.to_string()));
        row.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<PanelDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Parses the panel CSV schema; errors carry 1-based line numbers.
pub fn parse_csv(text: &str) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let n = cols.len();
    let header_ok = n >= 4
        && cols[0] == "unit_id"
        && cols[1] == "period"
        && cols[n - 1] == "label"
        && cols[2..n - 1]
            .iter()
            .enumerate()
            .all(|(j, c)| *c == format!("pay_{}", j + 1));
    if !header_ok {
        return Err(Error::Parse {
            line: 1,
            message: "header must be unit_id,period,pay_1..pay_m,label".into(),
        });
    }
    let m = n - 3;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        if row.len() != n {
            return Err(bad(format!("expected {n} fields, found {}", row.len())));
        }
        let field = |i: usize| row[i].trim();
        let unit_id = field(0).parse::<u64>().map_err(|_| bad(format!("bad unit_id `{}`", field(0))))?;
        let period = field(1).parse::<i64>().map_err(|_| bad(format!("bad period `{}`", field(1))))?;
        let payments = (2..2 + m)
            .map(|i| {
                let v = field(i)
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad payment `{}`", field(i))))?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad(format!("payment {v} must be finite and nonnegative")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        let label = match field(n - 1) {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(bad(format!("label `{other}` must be 0, 1 or blank"))),
        };
        records.push(PanelRecord { unit_id, period, payments, label });
    }
    PanelDataset::new(m, records)
}
