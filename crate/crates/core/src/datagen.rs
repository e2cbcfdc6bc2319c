//! Type-specified synthetic training data.
//!
//! A sample is built in three steps: link lengths are drawn through the `T`
//! parameterisation so the linkage type is fixed by construction, input angles
//! are drawn over the cycle domain of the configuration, and outputs are
//! labelled with the exact cycle map. Circuit, branch and order defects are
//! ruled out by construction: each of the sixteen configurations is its own
//! dataset, rocker return legs switch branch after the dead center, and inputs
//! are sorted along the cycle.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    self, classify, dims_from_t_unchecked, input_range, simulate_in_range, InputRange, Inversion,
    KinematicsError, LinkageDims, LinkageType, TParams, TypeConfig, DEFAULT_FOLD_TOL,
};
use crate::points::{PrecisionPoint, PrecisionPointSequence};

/// Largest sequence length the models are trained for.
pub const MAX_POINTS: usize = 20;
pub const DEFAULT_M: f64 = 12.0;
pub const DEFAULT_MAX_RETRIES: usize = 10_000;
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("no valid {cfg} linkage after {retries} draws with m = {m}")]
    GenerationTimeout { cfg: TypeConfig, m: f64, retries: usize },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Number of precision points per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointCount {
    Fixed(usize),
    /// Inclusive range; one count is drawn uniformly per sample (or per batch).
    Range(usize, usize),
}

impl PointCount {
    pub fn bounds(&self) -> (usize, usize) {
        match *self {
            PointCount::Fixed(n) => (n, n),
            PointCount::Range(lo, hi) => (lo, hi),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            PointCount::Fixed(n) => n,
            PointCount::Range(lo, hi) => rng.gen_range(lo..=hi),
        }
    }
}

impl Default for PointCount {
    fn default() -> Self {
        PointCount::Range(3, MAX_POINTS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub type_cfg: TypeConfig,
    /// Upper bound for `|T_j|` and `T4`.
    pub m: f64,
    pub n_points: PointCount,
    pub seed: u64,
    pub fold_tol: f64,
    pub max_retries: usize,
}

impl GenConfig {
    pub fn new(type_cfg: TypeConfig, seed: u64) -> Self {
        Self {
            type_cfg,
            m: DEFAULT_M,
            n_points: PointCount::default(),
            seed,
            fold_tol: DEFAULT_FOLD_TOL,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn with_points(mut self, n_points: PointCount) -> Self {
        self.n_points = n_points;
        self
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.m.is_finite() && self.m > 0.0) {
            return Err(DatagenError::Config(format!("m must be positive, got {}", self.m)));
        }
        if !(self.fold_tol >= 0.0 && self.fold_tol < self.m) {
            return Err(DatagenError::Config(format!("fold_tol {} must lie in [0, m)", self.fold_tol)));
        }
        let (lo, hi) = self.n_points.bounds();
        if lo < 1 || lo > hi || hi > MAX_POINTS {
            return Err(DatagenError::Config(format!(
                "point count range [{lo}, {hi}] must satisfy 1 <= lo <= hi <= {MAX_POINTS}"
            )));
        }
        if self.max_retries == 0 {
            return Err(DatagenError::Config("max_retries must be at least 1".into()));
        }
        Ok(())
    }
}

/// A ground-truth training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub cfg: TypeConfig,
    pub r: LinkageDims,
    /// Cycle-parameter inputs in ascending order with their exact outputs.
    pub points: PrecisionPointSequence,
}

/// Rejection-samples link lengths of the configured type.
pub fn generate_dims<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<LinkageDims, DatagenError> {
    cfg.validate()?;
    let ty = cfg.type_cfg.linkage_type;
    let signs = ty.signs();
    for _ in 0..cfg.max_retries {
        let mut t = [0.0; 4];
        for j in 0..3 {
            t[j] = signs[j] * rng.gen_range(cfg.fold_tol..cfg.m);
        }
        t[3] = rng.gen_range(0.0..cfg.m);
        let r = dims_from_t_unchecked(&TParams::from_array(t));
        if r.is_valid() && matches!(classify(&r, cfg.fold_tol), Ok(found) if found == ty) {
            return Ok(r);
        }
    }
    Err(DatagenError::GenerationTimeout { cfg: cfg.type_cfg, m: cfg.m, retries: cfg.max_retries })
}

/// Draws `n` ascending input cycle parameters over the configuration's domain.
pub fn sample_inputs<R: Rng + ?Sized>(
    r: &LinkageDims,
    cfg: TypeConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>, DatagenError> {
    let range = input_range(r, cfg)?;
    Ok(sample_in_range(&range, n, rng))
}

fn sample_in_range<R: Rng + ?Sized>(range: &InputRange, n: usize, rng: &mut R) -> Vec<f64> {
    let mut phis: Vec<f64> = match *range {
        InputRange::CrankFull => (0..n).map(|_| rng.gen_range(-PI..=PI)).collect(),
        InputRange::RockerRange { theta_min, theta_max } => (0..n)
            .map(|_| {
                // both legs have the same arc length
                let shift = if rng.gen_bool(0.5) { TAU } else { 0.0 };
                shift + rng.gen_range(theta_min..=theta_max)
            })
            .collect(),
    };
    phis.sort_by(f64::total_cmp);
    phis
}

/// One sample with exactly `n` points.
pub fn generate_sample_with_n<R: Rng + ?Sized>(
    cfg: &GenConfig,
    n: usize,
    rng: &mut R,
) -> Result<Sample, DatagenError> {
    let r = generate_dims(cfg, rng)?;
    let type_cfg = cfg.type_cfg;
    let range = input_range(&r, type_cfg)?;
    let phis = sample_in_range(&range, n, rng);
    let points = phis
        .into_iter()
        .map(|phi| Ok(PrecisionPoint::new(phi, simulate_in_range(&r, type_cfg, &range, phi)?)))
        .collect::<Result<Vec<_>, KinematicsError>>()?;
    Ok(Sample { cfg: type_cfg, r, points: PrecisionPointSequence::new(points) })
}

/// One sample, with the point count drawn from the config.
pub fn generate_sample<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<Sample, DatagenError> {
    let n = cfg.n_points.draw(rng);
    generate_sample_with_n(cfg, n, rng)
}

/// Unbounded, seeded source of fresh samples for online training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleStream {
    cfg: GenConfig,
    rng: ChaCha8Rng,
}

impl SampleStream {
    pub fn new(cfg: GenConfig) -> Result<Self, DatagenError> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { cfg, rng })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    pub fn next_sample(&mut self) -> Result<Sample, DatagenError> {
        generate_sample(&self.cfg, &mut self.rng)
    }

    /// `size` samples sharing one point count, for padding-free batching.
    pub fn next_batch(&mut self, size: usize) -> Result<Vec<Sample>, DatagenError> {
        let n = self.cfg.n_points.draw(&mut self.rng);
        (0..size).map(|_| generate_sample_with_n(&self.cfg, n, &mut self.rng)).collect()
    }
}

impl Iterator for SampleStream {
    type Item = Result<Sample, DatagenError>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_sample())
    }
}

/// JSON sidecar written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub gen_config: GenConfig,
    pub count: usize,
    pub columns: String,
}

impl DatasetHeader {
    pub fn new(gen_config: GenConfig, count: usize) -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            gen_config,
            count,
            columns: "type_id,inversion,r1,r2,r3,r4,n,phi_1,theta_out_1,...,phi_n,theta_out_n".into(),
        }
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<(), DatagenError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self, DatagenError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Sidecar path for a dataset: `data.csv` -> `data.csv.json`.
pub fn sidecar_path(dataset: &Path) -> std::path::PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

fn fmt_f64(v: f64) -> String {
    // 17 significant digits round-trip every f64
    format!("{v:.16e}")
}

/// Writes one sample per line:
/// `type_id,inversion,r1,r2,r3,r4,n,phi_1,theta_out_1,...` (angles in radians).
pub fn write_dataset<W: Write>(writer: W, samples: &[Sample]) -> Result<(), DatagenError> {
    let mut wtr = csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(writer);
    for s in samples {
        write_record(&mut wtr, s)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Streaming counterpart of [`write_dataset`].
pub struct DatasetWriter<W: Write> {
    wtr: csv::Writer<W>,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(writer: W) -> Self {
        Self { wtr: csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(writer) }
    }

    pub fn write(&mut self, sample: &Sample) -> Result<(), DatagenError> {
        write_record(&mut self.wtr, sample)
    }

    pub fn finish(mut self) -> Result<(), DatagenError> {
        self.wtr.flush()?;
        Ok(())
    }
}

fn write_record<W: Write>(wtr: &mut csv::Writer<W>, s: &Sample) -> Result<(), DatagenError> {
    let mut rec = Vec::with_capacity(7 + 2 * s.points.len());
    rec.push(s.cfg.type_id().to_string());
    rec.push(if s.cfg.inversion == Inversion::Plus { "1".into() } else { "-1".into() });
    rec.extend(s.r.to_array().into_iter().map(fmt_f64));
    rec.push(s.points.len().to_string());
    for p in &s.points.points {
        rec.push(fmt_f64(p.theta_in));
        rec.push(fmt_f64(p.theta_out));
    }
    wtr.write_record(&rec).map_err(|e| DatagenError::Io(e.into()))
}

/// Reads a file written by [`write_dataset`].
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<Sample>, DatagenError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line).map_err(|msg| DatagenError::Parse { line: idx + 1, msg })?);
    }
    Ok(out)
}

fn parse_line(line: &str) -> Result<Sample, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 7 {
        return Err(format!("expected at least 7 fields, got {}", fields.len()));
    }
    let type_id: u8 = fields[0].parse().map_err(|e| format!("type id: {e}"))?;
    let ty = LinkageType::from_id(type_id).ok_or_else(|| format!("type id {type_id} out of range"))?;
    let inversion = Inversion::parse(fields[1]).ok_or_else(|| format!("bad inversion {:?}", fields[1]))?;
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    let r = LinkageDims::new(num(fields[2])?, num(fields[3])?, num(fields[4])?, num(fields[5])?);
    let n: usize = fields[6].parse().map_err(|e| format!("n: {e}"))?;
    if fields.len() != 7 + 2 * n {
        return Err(format!("n = {n} needs {} fields, got {}", 7 + 2 * n, fields.len()));
    }
    let points = (0..n)
        .map(|i| Ok(PrecisionPoint::new(num(fields[7 + 2 * i])?, num(fields[8 + 2 * i])?)))
        .collect::<Result<Vec<_>, String>>()?;
    Ok(Sample {
        cfg: TypeConfig::new(ty, inversion),
        r,
        points: PrecisionPointSequence::new(points),
    })
}

/// Checks every invariant of a sample, returning the first violation.
pub fn check_sample(sample: &Sample, fold_tol: f64) -> Result<(), String> {
    let r = &sample.r;
    if !r.is_valid() {
        return Err(format!("invalid dims {:?}", r.to_array()));
    }
    match classify(r, fold_tol) {
        Ok(ty) if ty == sample.cfg.linkage_type => {}
        other => return Err(format!("classifies as {other:?}, expected {}", sample.cfg.linkage_type)),
    }
    let phis: Vec<f64> = sample.points.inputs().collect();
    if phis.windows(2).any(|w| w[0] > w[1]) {
        return Err("inputs are not ascending".into());
    }
    for p in &sample.points.points {
        let out = kinematics::simulate_cycle(r, sample.cfg, p.theta_in).map_err(|e| e.to_string())?;
        if out != p.theta_out {
            return Err(format!("label mismatch at {}: {} vs {}", p.theta_in, out, p.theta_out));
        }
    }
    Ok(())
}
