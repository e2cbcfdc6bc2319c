//! Mixture of experts: sixteen per-configuration regressors evaluated
//! exhaustively and ranked by the simulation metric.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{LinkageDims, TypeConfig};
use crate::metrics::{simulation_metric, EvalResult};
use crate::neural::{predict_batch_unchecked, Checkpoint, ExpertModel, NeuralError};
use crate::points::{PrecisionPointSequence, RelativePointSequence};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_VARIANTS: usize = 100;
const REGISTRY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MoeError {
    #[error("no expert loaded for {0}")]
    MissingExpert(TypeConfig),
    #[error("registry: {0}")]
    Registry(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    cfg: TypeConfig,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    experts: Vec<ManifestEntry>,
}

/// Sixteen slots, one per [`TypeConfig`], each loaded or missing.
#[derive(Debug, Clone, Default)]
pub struct ExpertRegistry {
    slots: Vec<Option<ExpertModel>>,
}

impl ExpertRegistry {
    pub fn new() -> Self {
        Self { slots: vec![None; 16] }
    }

    /// Puts `model` into the slot of its own configuration, returning the previous occupant.
    pub fn insert(&mut self, model: ExpertModel) -> Option<ExpertModel> {
        let idx = model.cfg.index();
        self.slots[idx].replace(model)
    }

    pub fn get(&self, cfg: TypeConfig) -> Option<&ExpertModel> {
        self.slots.get(cfg.index()).and_then(Option::as_ref)
    }

    pub fn expert(&self, cfg: TypeConfig) -> Result<&ExpertModel, MoeError> {
        self.get(cfg).ok_or(MoeError::MissingExpert(cfg))
    }

    pub fn missing(&self) -> Vec<TypeConfig> {
        TypeConfig::all().filter(|c| self.get(*c).is_none()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn loaded(&self) -> impl Iterator<Item = &ExpertModel> {
        self.slots.iter().flatten()
    }

    /// Checkpoint file name used for `cfg` inside a registry directory.
    pub fn checkpoint_name(cfg: TypeConfig) -> String {
        format!("expert_{}.ckpt", cfg.tag())
    }

    pub fn checkpoint_path(dir: impl AsRef<Path>, cfg: TypeConfig) -> PathBuf {
        dir.as_ref().join(Self::checkpoint_name(cfg))
    }

    /// Writes the manifest listing all sixteen expected checkpoint files.
    pub fn write_manifest(dir: impl AsRef<Path>) -> Result<(), MoeError> {
        let manifest = Manifest {
            format_version: REGISTRY_FORMAT_VERSION,
            experts: TypeConfig::all().map(|cfg| ManifestEntry { cfg, file: Self::checkpoint_name(cfg) }).collect(),
        };
        std::fs::create_dir_all(dir.as_ref())?;
        let file = std::fs::File::create(dir.as_ref().join(MANIFEST_FILE))?;
        serde_json::to_writer_pretty(file, &manifest)?;
        Ok(())
    }

    /// Saves every loaded expert (weights only) and the manifest.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), MoeError> {
        let dir = dir.as_ref();
        Self::write_manifest(dir)?;
        for model in self.loaded() {
            Checkpoint { model: model.clone(), train: None }.save(Self::checkpoint_path(dir, model.cfg))?;
        }
        Ok(())
    }

    /// Loads a registry directory. Entries whose file is absent stay missing;
    /// a file holding a different configuration than its entry is an error.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, MoeError> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| MoeError::Registry(format!("cannot read {}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != REGISTRY_FORMAT_VERSION {
            return Err(MoeError::Registry(format!("unsupported manifest version {}", manifest.format_version)));
        }
        let distinct: BTreeSet<TypeConfig> = manifest.experts.iter().map(|e| e.cfg).collect();
        if distinct.len() != manifest.experts.len() {
            return Err(MoeError::Registry("manifest lists a configuration twice".into()));
        }
        let mut registry = Self::new();
        for entry in &manifest.experts {
            let path = dir.join(&entry.file);
            if !path.exists() {
                continue;
            }
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.model.cfg != entry.cfg {
                return Err(MoeError::Registry(format!(
                    "{} holds a {} expert, manifest expects {}",
                    path.display(),
                    ckpt.model.cfg,
                    entry.cfg
                )));
            }
            registry.insert(ckpt.model);
        }
        Ok(registry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub cfg: TypeConfig,
    pub r_pred: LinkageDims,
    pub s_simul: f64,
    pub eval: EvalResult,
    /// Initial pose of the variant this result was synthesized for (relative mode).
    pub initial_angles: Option<(f64, f64)>,
}

/// Ascending score, ties broken by configuration order.
pub fn rank_cmp(a: &SynthesisResult, b: &SynthesisResult) -> Ordering {
    a.s_simul.total_cmp(&b.s_simul).then(a.cfg.cmp(&b.cfg))
}

/// Sorts with [`rank_cmp`]; optionally keeps the best result per linkage
/// type (inversion ignored); then truncates to `top_k`.
pub fn rank(mut results: Vec<SynthesisResult>, top_k: usize, distinct_types: bool) -> Vec<SynthesisResult> {
    results.sort_by(rank_cmp);
    if distinct_types {
        let mut seen = BTreeSet::new();
        results.retain(|r| seen.insert(r.cfg.linkage_type));
    }
    results.truncate(top_k);
    results
}

/// Score for a prediction that is not a closed linkage: the metric's maximum.
fn invalid_eval(points: &PrecisionPointSequence) -> EvalResult {
    EvalResult {
        s_simul: 2.0,
        per_point_pred: vec![f64::NAN; points.len()],
        per_point_abs_err_deg: vec![180.0; points.len()],
        reachable_flags: vec![false; points.len()],
    }
}

/// Predicts and scores one expert on several equal-length point sequences.
fn run_expert(
    model: &ExpertModel,
    tasks: &[&PrecisionPointSequence],
    initial: &[Option<(f64, f64)>],
) -> Result<Vec<SynthesisResult>, MoeError> {
    let preds = predict_batch_unchecked(model, tasks)?;
    Ok(preds
        .into_iter()
        .zip(tasks)
        .zip(initial)
        .map(|((r_pred, points), &initial_angles)| {
            let eval = simulation_metric(&r_pred, model.cfg, points).unwrap_or_else(|_| invalid_eval(points));
            SynthesisResult { cfg: model.cfg, r_pred, s_simul: eval.s_simul, eval, initial_angles }
        })
        .collect())
}

/// Synthesis with the single expert of `cfg`. Poor fits are reported through
/// the score, never as errors.
pub fn synthesize_single(
    registry: &ExpertRegistry,
    cfg: TypeConfig,
    points: &PrecisionPointSequence,
) -> Result<SynthesisResult, MoeError> {
    let model = registry.expert(cfg)?;
    let mut out = run_expert(model, &[points], &[None])?;
    Ok(out.remove(0))
}

/// Every expert predicts; results are ranked ascending by score.
pub fn synthesize_multi(
    registry: &ExpertRegistry,
    points: &PrecisionPointSequence,
    top_k: usize,
    distinct_types: bool,
) -> Result<Vec<SynthesisResult>, MoeError> {
    if let Some(cfg) = registry.missing().first() {
        return Err(MoeError::MissingExpert(*cfg));
    }
    let mut all = Vec::with_capacity(16);
    for model in registry.loaded() {
        all.extend(run_expert(model, &[points], &[None])?);
    }
    Ok(rank(all, top_k, distinct_types))
}

/// Absolute variants of a relative sequence, each anchored at initial angles
/// drawn uniformly on `[-pi, pi]^2`. The first point of each variant is its
/// initial pose.
pub fn expand_relative<R: Rng + ?Sized>(
    rel: &RelativePointSequence,
    variants: usize,
    rng: &mut R,
) -> Vec<PrecisionPointSequence> {
    (0..variants)
        .map(|_| {
            let theta_in0 = rng.gen_range(-PI..=PI);
            let theta_out0 = rng.gen_range(-PI..=PI);
            rel.anchor(theta_in0, theta_out0)
        })
        .collect()
}

/// Expands `rel` into `variants` absolute tasks, runs all sixteen experts on
/// each and ranks the `16 * variants` candidates together.
pub fn synthesize_relative<R: Rng + ?Sized>(
    registry: &ExpertRegistry,
    rel: &RelativePointSequence,
    variants: usize,
    top_k: usize,
    distinct_types: bool,
    rng: &mut R,
) -> Result<Vec<SynthesisResult>, MoeError> {
    if let Some(cfg) = registry.missing().first() {
        return Err(MoeError::MissingExpert(*cfg));
    }
    let tasks = expand_relative(rel, variants, rng);
    let refs: Vec<&PrecisionPointSequence> = tasks.iter().collect();
    let initial: Vec<Option<(f64, f64)>> =
        tasks.iter().map(|t| Some((t.points[0].theta_in, t.points[0].theta_out))).collect();
    let mut all = Vec::with_capacity(16 * variants);
    for model in registry.loaded() {
        all.extend(run_expert(model, &refs, &initial)?);
    }
    Ok(rank(all, top_k, distinct_types))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Inversion, LinkageType};
    use crate::neural::ExpertHyperParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_registry() -> ExpertRegistry {
        let mut reg = ExpertRegistry::new();
        let hyper = ExpertHyperParams { layers: 1, hidden: 3, ..Default::default() };
        for (i, cfg) in TypeConfig::all().enumerate() {
            reg.insert(ExpertModel::init(cfg, hyper.clone(), &mut ChaCha8Rng::seed_from_u64(i as u64)));
        }
        reg
    }

    fn points() -> PrecisionPointSequence {
        PrecisionPointSequence::from_pairs(&[(0.1, 1.0), (0.5, 1.2), (1.3, 1.9)])
    }

    #[test]
    fn missing_slot_is_reported() {
        let reg = ExpertRegistry::new();
        let cfg = TypeConfig::new(LinkageType::CrankRocker, Inversion::Plus);
        assert!(matches!(synthesize_single(&reg, cfg, &points()), Err(MoeError::MissingExpert(c)) if c == cfg));
        assert!(matches!(synthesize_multi(&reg, &points(), 3, true), Err(MoeError::MissingExpert(_))));
    }

    #[test]
    fn multi_returns_sorted_results_of_own_type() {
        let reg = tiny_registry();
        let all = synthesize_multi(&reg, &points(), 16, false).unwrap();
        assert_eq!(all.len(), 16);
        assert!(all.windows(2).all(|w| rank_cmp(&w[0], &w[1]) != Ordering::Greater));
        for r in &all {
            assert_eq!(crate::kinematics::classify(&r.r_pred, 1e-9).unwrap(), r.cfg.linkage_type);
        }
        let top = synthesize_multi(&reg, &points(), 3, true).unwrap();
        let types: BTreeSet<_> = top.iter().map(|r| r.cfg.linkage_type).collect();
        assert_eq!(types.len(), 3);
    }

    #[test]
    fn ties_break_by_configuration() {
        let reg = tiny_registry();
        let base = synthesize_single(&reg, TypeConfig::new(LinkageType::DoubleCrank, Inversion::Minus), &points()).unwrap();
        let mut a = base.clone();
        a.cfg = TypeConfig::new(LinkageType::CrankRocker, Inversion::Minus);
        let mut b = base.clone();
        b.cfg = TypeConfig::new(LinkageType::CrankRocker, Inversion::Plus);
        let ranked = rank(vec![base.clone(), a.clone(), b.clone()], 3, false);
        assert_eq!(ranked.iter().map(|r| r.cfg).collect::<Vec<_>>(), vec![b.cfg, a.cfg, base.cfg]);
    }

    #[test]
    fn expansion_preserves_offsets() {
        let rel = RelativePointSequence::from_offsets(&[(0.2, -0.1), (0.7, 0.4)]);
        let variants = expand_relative(&rel, 5, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(variants.len(), 5);
        for v in &variants {
            let first = v.points[0];
            assert!((-PI..=PI).contains(&first.theta_in) && (-PI..=PI).contains(&first.theta_out));
            for (p, d) in v.points.iter().zip(rel.deltas()) {
                assert!((p.theta_in - first.theta_in - d.theta_in).abs() < 1e-15);
                assert!((p.theta_out - first.theta_out - d.theta_out).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn registry_round_trips_through_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let reg = tiny_registry();
        reg.save(dir.path()).unwrap();
        let back = ExpertRegistry::load(dir.path()).unwrap();
        assert!(back.is_complete());
        for cfg in TypeConfig::all() {
            assert_eq!(back.get(cfg), reg.get(cfg));
        }
        std::fs::remove_file(ExpertRegistry::checkpoint_path(dir.path(), TypeConfig::all().nth(5).unwrap())).unwrap();
        let partial = ExpertRegistry::load(dir.path()).unwrap();
        assert_eq!(partial.missing(), vec![TypeConfig::all().nth(5).unwrap()]);
    }
}
