use super::*;
use crate::encoder::CH_CLICKABLE;
use crate::engine::{LevelSpec, N_CELLS};
use rand::SeedableRng;

fn two_cell_level(moves: u32) -> LevelSpec {
    let mut text = format!("id 900\nmoves {moves}\npalette 0\ngoal 0 2\nshape\n");
    for r in 0..9 {
        text.push_str(if r == 4 { "......##.....\n" } else { ".............\n" });
    }
    text.push_str("pieces\n");
    for r in 0..9 {
        text.push_str(if r == 4 { "......00.....\n" } else { ".............\n" });
    }
    LevelSpec::parse(&text).unwrap()
}

fn pack_with(spec: LevelSpec) -> LevelPack {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.txt"), spec.serialize()).unwrap();
    LevelPack::with_dir(Some(dir.path())).unwrap()
}

/// Puts all its mass on clickable cells.
struct ClickableModel;

impl ActionModel for ClickableModel {
    fn name(&self) -> &str {
        "clickable"
    }
    fn observation_channels(&self) -> usize {
        15
    }
    fn logits(&self, obs: &[Observation]) -> Result<Vec<f32>, EvalError> {
        Ok(obs.iter().flat_map(|o| o.plane(CH_CLICKABLE).iter().map(|&v| if v > 0 { 40.0 } else { 0.0 })).collect())
    }
}

fn cfg(levels: Vec<u32>, episodes: u32) -> EvalConfig {
    EvalConfig { levels, episodes_per_level: episodes, ..EvalConfig::default() }
}

#[test]
fn competent_policy_scores_one() {
    let pack = pack_with(two_cell_level(5));
    let e = evaluate(&ClickableModel, &pack, &cfg(vec![900], 50)).unwrap();
    let l = &e.levels[0];
    assert_eq!(l.competence, Some(1.0));
    assert_eq!(l.completion_rate, 1.0);
    assert_eq!(l.histogram(Some(5)), vec![0, 50, 0, 0, 0, 0]);
}

#[test]
fn uniform_two_actions_one_valid() {
    // Exhaustive: rank 1 or 2 with probability 1/2 each.
    let expected_rank: f64 = 0.5 * 1.0 + 0.5 * 2.0;
    assert_eq!(1.0 / expected_rank, 2.0 / 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut env = RandomSubsetEnv::new(2, 1, &mut rng);
    let stats = competence_in_env(&mut env, &[0.0, 0.0], 40_000, &mut rng).unwrap();
    assert!((stats.competence().unwrap() - 2.0 / 3.0).abs() < 0.01);
}

#[test]
fn uniform_58_of_117_is_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut env = RandomSubsetEnv::new(117, 58, &mut rng);
    let stats = competence_in_env(&mut env, &[0.0; 117], 20_000, &mut rng).unwrap();
    assert!((stats.competence().unwrap() - 0.5).abs() < 0.01, "{:?}", stats.competence());
    assert_eq!(stats.dead_states, 0);
}

#[test]
fn competence_is_shift_invariant() {
    let logits: Vec<f64> = (0..117).map(|i| (i as f64 * 0.37).sin()).collect();
    let shifted: Vec<f64> = logits.iter().map(|l| l + 3.0).collect();
    let run = |l: &[f64]| {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut env = RandomSubsetEnv::new(117, 20, &mut rng);
        competence_in_env(&mut env, l, 2000, &mut rng).unwrap().competence().unwrap()
    };
    assert!((run(&logits) - run(&shifted)).abs() < 1e-3);
}

#[test]
fn competence_dead_states_are_counted() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut env = RandomSubsetEnv::new(5, 0, &mut rng);
    let stats = competence_in_env(&mut env, &[0.0; 5], 10, &mut rng).unwrap();
    assert_eq!(stats.dead_states, 10);
    assert_eq!(stats.competence(), None);
}

#[test]
fn random_agent_on_two_cell_level_matches_chain() {
    // Each step hits one of the 2 valid cells with probability 2/117; one
    // valid click completes, so P(done within n steps) = 1 - (115/117)^n.
    let pack = pack_with(two_cell_level(5));
    for cap in [20u64, 2000] {
        let c = EvalConfig { max_total_steps: cap, ..cfg(vec![900], 4000) };
        let e = random_baseline(&pack, &c).unwrap();
        let oracle = 1.0 - (115.0f64 / 117.0).powi(cap as i32);
        let rate = e.levels[0].completion_rate;
        assert!((rate - oracle).abs() < 0.02, "cap {cap}: {rate} vs {oracle}");
    }
}

#[test]
fn zero_move_limit_completes_nothing() {
    let pack = pack_with(two_cell_level(5));
    let c = EvalConfig { move_limit: Some(0), ..cfg(vec![900], 20) };
    let e = evaluate(&ClickableModel, &pack, &c).unwrap();
    assert_eq!(e.levels[0].completion_rate, 0.0);
}

#[test]
fn completion_is_monotone_in_move_limit() {
    let pack = LevelPack::bundled_with_desk();
    let e = random_baseline(&pack, &cfg(vec![crate::engine::MINI_LEVEL], 60)).unwrap();
    let l = &e.levels[0];
    let rates: Vec<f64> = (0..40).map(|m| l.completion_rate_at(m)).collect();
    assert!(rates.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(l.completion_rate, l.completion_rate_at(l.move_limit));
    let within: u32 = l.histogram(Some(l.move_limit)).iter().sum();
    assert_eq!(within, l.completed);
}

#[test]
fn baseline_is_reproducible_and_uniform_competence_is_in_range() {
    let pack = LevelPack::bundled_with_desk();
    let c = cfg(vec![1, crate::engine::MINI_LEVEL], 8);
    let a = random_baseline(&pack, &c).unwrap();
    let b = random_baseline(&pack, &c).unwrap();
    assert_eq!(a, b);
    for l in &a.levels {
        let comp = l.competence.unwrap();
        assert!(comp > 0.0 && comp <= 1.0);
    }
}

#[test]
fn baseline_competence_matches_per_state_closed_form() {
    // Uniform sampling without replacement: E[rank] = (A + 1) / (V + 1)
    // for V valid of A actions. Averaged over visited states.
    let pack = LevelPack::bundled_with_desk();
    let spec = pack.get(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dist = ActionDistribution::unmasked(&[0.0f64; N_CELLS]).unwrap();
    let (mut expected, mut observed, mut n) = (0.0, 0.0, 0.0);
    for ep in 0..40 {
        let mut board = Board::load(spec, ep).unwrap();
        while board.status() == Status::Running {
            let v = board.valid_actions().iter().filter(|&&m| m).count();
            if v == 0 {
                break;
            }
            expected += (N_CELLS as f64 + 1.0) / (v as f64 + 1.0);
            let (rank, action) = first_valid_rank(&dist, |a| board.is_valid_action(a), &mut rng).unwrap().unwrap();
            observed += rank as f64;
            n += 1.0;
            board.apply_move(action).unwrap();
        }
    }
    let (e, o) = (expected / n, observed / n);
    assert!((e - o).abs() / e < 0.05, "closed form {e} vs sampled {o}");
}

#[test]
fn report_shape_determinism_and_human_series() {
    let pack = LevelPack::bundled();
    let c = EvalConfig { max_total_steps: 30, ..cfg((1..=11).collect(), 2) };
    let base = random_baseline(&pack, &c).unwrap();
    let mut m1 = base.clone();
    m1.name = "model-a".into();
    let mut m2 = base.clone();
    m2.name = "model-b".into();
    let models = vec![m1, m2, base];
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&models, None, dir.path(), true).unwrap();
    let text = std::fs::read_to_string(&files.completion).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "level,seen,model-a,model-b,random");
    assert_eq!(lines.len(), 12);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));

    let again = tempfile::tempdir().unwrap();
    let files2 = emit_report(&models, None, again.path(), true).unwrap();
    for (a, b) in [
        (&files.completion, &files2.completion),
        (&files.competence, &files2.competence),
        (&files.histogram, &files2.histogram),
        (files.svg.as_ref().unwrap(), files2.svg.as_ref().unwrap()),
    ] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    let human = HumanData::parse("level,completion\n1,0.9\n2,0.5\n").unwrap();
    let files3 = emit_report(&models, Some(&human), again.path(), false).unwrap();
    let text = std::fs::read_to_string(files3.completion).unwrap();
    assert!(text.starts_with("level,seen,model-a,model-b,random,human\n"));
    assert!(text.lines().nth(1).unwrap().ends_with(",0.900000"));
}

#[test]
fn human_csv_schemas_and_errors() {
    let h = HumanData::parse("level,attempts,completions\n3,10,4\n").unwrap();
    assert_eq!(h.completion[&3], 0.4);
    let err = HumanData::parse("level,completion\n1,0.5\nx,0.2\n4,1.7\n").unwrap_err().to_string();
    assert!(err.contains("row 3") && err.contains("row 4"), "{err}");
    assert!(HumanData::parse("lvl,rate\n1,0.5\n").is_err());
    assert!(HumanData::parse("level,attempts,completions\n1,3,5\n").is_err());
}

#[test]
fn config_round_trip() {
    let c = EvalConfig::default();
    assert_eq!(EvalConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert_eq!(c.levels.len(), 11);
    assert!(EvalConfig::from_toml("episodes_per_level = 0").is_err());
}

#[test]
fn report_json_round_trip() {
    let pack = LevelPack::bundled_with_desk();
    let c = cfg(vec![crate::engine::MINI_LEVEL], 3);
    let r = EvalReport { config: c.clone(), models: vec![random_baseline(&pack, &c).unwrap()] };
    assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
}
