use mpsim::f64::{Checkpoint, SequenceSet, SurrogateModel};
use mpsim::lem::{
    lem_cell_step, macrospin_ringdown, physics_residuals, rollout_rmse, total_loss, train, CurriculumPosition,
    CurriculumStage, LemCellParams, LemHyper, LemState, PhysicsContext, RingdownToy, TrainOptions, WindowOutputs,
};
use mpsim::signal::MinMax;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PERIOD: usize = 16;

fn sinusoids(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let w = std::f64::consts::TAU / PERIOD as f64;
            (0..len).flat_map(|k| [(w * k as f64 + ph).sin(), (w * k as f64 + ph).cos()]).collect()
        })
        .collect()
}

#[test]
fn sinusoid_continuation() {
    let data = SequenceSet::from_physical(2, 1.0, &sinusoids(16, 96, 1), None).unwrap();
    let hyper = LemHyper { hidden: 16, channels: 2, dt_cell: 1.0 };
    let mut m = SurrogateModel::init(hyper, data.norm.clone(), 1.0, 7);
    let st = |lr, epochs| CurriculumStage { lr, pred_len: PERIOD, batch: 16, lambda: 0.0, input_len: 32, epochs };
    let opts = TrainOptions { seed: 3, window_stride: 4, ..TrainOptions::default() };
    train(&mut m, &data, &[st(3e-3, 60), st(1e-3, 40)], &opts).unwrap();
    let test: Vec<Vec<f64>> = sinusoids(8, 32 + PERIOD, 2);
    let mut s = 0.0;
    let mut n = 0;
    for t in &test {
        let p = m.predict_physical(&t[..64], PERIOD).unwrap();
        for (a, b) in p.iter().zip(&t[64..]) {
            s += (a - b) * (a - b);
            n += 1;
        }
    }
    let rmse = (s / n as f64).sqrt();
    // unit amplitude
    assert!(rmse < 0.05, "continuation RMSE {rmse}");
}

fn gate_probe_cell(d: usize, m: usize, dt: f64, g: &[f64]) -> LemCellParams<f64> {
    // candidate targets saturate at one, so the new state equals the step size
    let mut p = LemCellParams::zeros(d, m, dt);
    let mut it = g.iter().copied();
    for gate in ["1", "2"] {
        p.w_mut(gate).iter_mut().for_each(|v| *v = it.next().unwrap());
        p.v_mut(gate).iter_mut().for_each(|v| *v = it.next().unwrap());
        p.b_mut(gate).iter_mut().for_each(|v| *v = it.next().unwrap());
    }
    p.b_mut("z").iter_mut().for_each(|v| *v = 40.0);
    p.b_mut("y").iter_mut().for_each(|v| *v = 40.0);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gates_stay_inside_step(
        g in prop::collection::vec(-8.0f64..8.0, 2 * (3 * 3 + 3 * 2 + 3)),
        u in prop::collection::vec(-1.0f64..1.0, 2),
        dt in 0.01f64..1.0,
    ) {
        let p = gate_probe_cell(3, 2, dt, &g);
        let n = lem_cell_step(&p, &LemState::zeros(3), &u).unwrap();
        for v in n.z.iter().chain(&n.y) {
            prop_assert!(*v > 0.0 && *v < dt, "{v} outside (0, {dt})");
        }
    }

    #[test]
    fn states_stay_bounded(seed in 0u64..1000, scale in 0.1f64..20.0) {
        let (d, m) = (6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LemCellParams::zeros(d, m, 1.0);
        p.data.iter_mut().for_each(|v| *v = scale * rng.random_range(-1.0..1.0));
        let mut s: LemState<f64> = LemState { y: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect(), z: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect() };
        let bound = s.y.iter().chain(&s.z).fold(1.0f64, |a, v| a.max(v.abs()));
        for _ in 0..2000 {
            let u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            s = lem_cell_step(&p, &s, &u).unwrap();
            for v in s.y.iter().chain(&s.z) {
                prop_assert!(v.abs() <= bound + 1e-12);
            }
        }
    }
}

#[test]
fn long_run_does_not_overflow() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = LemCellParams::zeros(8, 2, 1.0);
    p.data.iter_mut().for_each(|v| *v = rng.random_range(-5.0..5.0));
    let mut s: LemState<f64> = LemState::zeros(8);
    for _ in 0..100_000 {
        let u = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        s = lem_cell_step(&p, &s, &u).unwrap();
    }
    assert!(s.y.iter().chain(&s.z).all(|v| v.is_finite() && v.abs() <= 1.0));
}

#[test]
fn physics_loss_ignores_normalization() {
    let toy = RingdownToy { n_traj: 1, len: 40, ..RingdownToy::default() };
    let data = macrospin_ringdown(&toy, 5).unwrap();
    let spec = toy.physics;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // physical predictions off the LLG manifold
    let phys: Vec<f64> = data.trajs[0]
        .iter()
        .enumerate()
        .map(|(i, v)| data.norm[i % 2].invert(*v) + rng.random_range(-1e3..1e3))
        .collect();
    let pairs: Vec<[f64; 2]> = phys.chunks(2).map(|c| [c[0], c[1]]).collect();
    let res = physics_residuals(&pairs, None, &spec, toy.dt_ml).unwrap();
    let direct: f64 = res.iter().map(|r| (r[0] / spec.scale).powi(2) + (r[1] / spec.scale).powi(2)).sum();
    assert!(direct > 0.0);
    for norm in [
        vec![MinMax { min: -2e4, max: 3e4 }, MinMax { min: -1e5, max: 1e5 }],
        vec![MinMax { min: 5.0, max: 7.0 }, MinMax { min: -1.0, max: 1e6 }],
    ] {
        let pred: Vec<f64> = phys.iter().enumerate().map(|(i, v)| norm[i % 2].apply(*v)).collect();
        let out = WindowOutputs { recon: vec![0.0; 2], pred: pred.clone() };
        let ctx = PhysicsContext { spec: &spec, norm: &norm, dt_ml: toy.dt_ml };
        let l = total_loss(&out, &[0.0; 2], &pred, 2, 1.0, Some(&ctx)).unwrap();
        assert!((l.phys / direct - 1.0).abs() < 1e-8, "{} vs {direct}", l.phys);
    }
    let _ = SequenceSet::from_physical(2, toy.dt_ml, &[phys], Some(spec)).unwrap();
}

#[test]
fn checkpoint_file_round_trip() {
    let toy = RingdownToy { n_traj: 4, len: 60, ..RingdownToy::default() };
    let data = macrospin_ringdown(&toy, 1).unwrap();
    let mut m = SurrogateModel::init(LemHyper { hidden: 8, channels: 2, dt_cell: 1.0 }, data.norm.clone(), toy.dt_ml, 2);
    let st = CurriculumStage { lr: 1e-3, pred_len: 8, batch: 4, lambda: 1.0, input_len: 16, epochs: 2 };
    let rep = train(&mut m, &data, &[st], &TrainOptions::default()).unwrap();
    assert_eq!(rep.position, CurriculumPosition { stage: 0, epoch: 2 });
    let dir = std::env::temp_dir().join(format!("mpsim-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    Checkpoint::from_model(&m, Some(toy.physics), rep.position).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.position, rep.position);
    let m2 = back.to_model().unwrap();
    assert_eq!(m2.theta, m.theta);
    assert_eq!(
        rollout_rmse(&m2, &data, 16, 16, 8).unwrap().to_bits(),
        rollout_rmse(&m, &data, 16, 16, 8).unwrap().to_bits()
    );
    std::fs::write(&path, "{\"format\": \"other\"}").unwrap();
    assert!(Checkpoint::load(&path).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
