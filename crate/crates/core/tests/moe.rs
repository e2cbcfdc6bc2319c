use std::f64::consts::PI;

use fourbar::datagen::{GenConfig, SampleStream};
use fourbar::moe::{
    expand_relative, rank_cmp, SynthesisResult, synthesize_multi, synthesize_relative, synthesize_single, ExpertRegistry, MoeError,
};
use fourbar::neural::{ExpertHyperParams, ExpertModel};
use fourbar::points::RelativePointSequence;
use fourbar::{Inversion, LinkageType, PrecisionPointSequence, TypeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn registry() -> ExpertRegistry {
    let mut reg = ExpertRegistry::new();
    let hyper = ExpertHyperParams { layers: 1, hidden: 6, ..Default::default() };
    for cfg in TypeConfig::all() {
        let mut model = ExpertModel::init(cfg, hyper.clone(), &mut ChaCha8Rng::seed_from_u64(100 + cfg.index() as u64));
        // softplus(3) > 3 ln 2 keeps T4 above |T1| + |T2| + |T3| near h = 0
        model.weights.head_b[3] = 3.0;
        reg.insert(model);
    }
    reg
}

fn fingerprint(results: &[SynthesisResult]) -> Vec<(TypeConfig, u64, [u64; 4])> {
    results.iter().map(|r| (r.cfg, r.s_simul.to_bits(), r.r_pred.to_array().map(f64::to_bits))).collect()
}

fn task(seed: u64) -> PrecisionPointSequence {
    let cfg = TypeConfig::new(LinkageType::CrankRocker, Inversion::Plus);
    SampleStream::new(GenConfig::new(cfg, seed)).unwrap().next_sample().unwrap().points
}

#[test]
fn multi_expert_results_contain_every_single_expert_result() {
    let reg = registry();
    for seed in 0..10 {
        let points = task(seed);
        let all = synthesize_multi(&reg, &points, 16, false).unwrap();
        assert_eq!(all.len(), 16);
        assert!(all.iter().filter(|r| r.s_simul < 2.0).count() >= 8);
        assert!(all.windows(2).all(|w| rank_cmp(&w[0], &w[1]).is_le()));
        for cfg in TypeConfig::all() {
            let single = synthesize_single(&reg, cfg, &points).unwrap();
            let found = all.iter().find(|r| r.cfg == cfg).unwrap();
            assert_eq!(found.s_simul.to_bits(), single.s_simul.to_bits());
            assert_eq!(found.r_pred, single.r_pred);
        }
    }
}

#[test]
fn distinct_ranking_keeps_the_best_per_type() {
    let reg = registry();
    let points = task(3);
    let all = synthesize_multi(&reg, &points, 16, false).unwrap();
    let top = synthesize_multi(&reg, &points, 3, true).unwrap();
    assert_eq!(top.len(), 3);
    let types: std::collections::BTreeSet<_> = top.iter().map(|r| r.cfg.linkage_type).collect();
    assert_eq!(types.len(), 3);
    for r in &top {
        let best = all.iter().find(|a| a.cfg.linkage_type == r.cfg.linkage_type).unwrap();
        assert_eq!(best.cfg, r.cfg);
    }
    assert_eq!(fingerprint(&top[..1]), fingerprint(&all[..1]));
    assert!(synthesize_multi(&reg, &points, 16, true).unwrap().len() <= 8);
}

#[test]
fn missing_experts_are_reported() {
    let mut reg = ExpertRegistry::new();
    let cfg = TypeConfig::new(LinkageType::CrankRocker, Inversion::Plus);
    reg.insert(ExpertModel::init(cfg, ExpertHyperParams { layers: 1, hidden: 2, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)));
    let points = task(0);
    assert!(synthesize_single(&reg, cfg, &points).is_ok());
    let other = TypeConfig::new(LinkageType::DoubleCrank, Inversion::Minus);
    assert!(matches!(synthesize_single(&reg, other, &points), Err(MoeError::MissingExpert(c)) if c == other));
    assert!(matches!(synthesize_multi(&reg, &points, 3, true), Err(MoeError::MissingExpert(_))));
    let rel = RelativePointSequence::from_absolute(&points);
    assert!(matches!(
        synthesize_relative(&reg, &rel, 4, 3, true, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(MoeError::MissingExpert(_))
    ));
}

#[test]
fn relative_expansion_preserves_the_offsets() {
    let rel = RelativePointSequence::from_offsets(&[(0.3, -0.1), (0.9, 0.25), (1.4, 0.4)]);
    let variants = expand_relative(&rel, 100, &mut ChaCha8Rng::seed_from_u64(8));
    assert_eq!(variants.len(), 100);
    for v in &variants {
        let p0 = v.points[0];
        assert!((-PI..=PI).contains(&p0.theta_in) && (-PI..=PI).contains(&p0.theta_out));
        for (p, d) in v.points.iter().zip(rel.deltas()) {
            assert!((p.theta_in - p0.theta_in - d.theta_in).abs() < 1e-12);
            assert!((p.theta_out - p0.theta_out - d.theta_out).abs() < 1e-12);
        }
    }
    assert_ne!(variants[0], variants[1]);
}

#[test]
fn relative_synthesis_scores_every_candidate_reproducibly() {
    let reg = registry();
    let rel = RelativePointSequence::from_absolute(&task(5));
    let run = |seed| synthesize_relative(&reg, &rel, 100, usize::MAX, false, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let all = run(1);
    assert_eq!(all.len(), 1600);
    assert!(all.windows(2).all(|w| rank_cmp(&w[0], &w[1]).is_le()));
    for cfg in TypeConfig::all() {
        assert_eq!(all.iter().filter(|r| r.cfg == cfg).count(), 100);
    }
    let again = run(1);
    assert_eq!(
        all.iter().map(|r| r.s_simul.to_bits()).collect::<Vec<_>>(),
        again.iter().map(|r| r.s_simul.to_bits()).collect::<Vec<_>>()
    );
    assert_ne!(all[0].initial_angles, run(2)[0].initial_angles);

    let expected = expand_relative(&rel, 100, &mut ChaCha8Rng::seed_from_u64(1));
    let starts: Vec<(f64, f64)> = expected.iter().map(|v| (v.points[0].theta_in, v.points[0].theta_out)).collect();
    for r in &all {
        assert!(starts.contains(&r.initial_angles.unwrap()));
    }
}

#[test]
fn saved_registries_give_identical_rankings() {
    let reg = registry();
    let dir = tempfile::tempdir().unwrap();
    reg.save(dir.path()).unwrap();
    let back = ExpertRegistry::load(dir.path()).unwrap();
    assert!(back.is_complete());
    let points = task(11);
    assert_eq!(
        fingerprint(&synthesize_multi(&reg, &points, 16, false).unwrap()),
        fingerprint(&synthesize_multi(&back, &points, 16, false).unwrap())
    );

    std::fs::remove_file(ExpertRegistry::checkpoint_path(dir.path(), TypeConfig::all().nth(5).unwrap())).unwrap();
    let partial = ExpertRegistry::load(dir.path()).unwrap();
    assert_eq!(partial.missing(), vec![TypeConfig::all().nth(5).unwrap()]);
}
