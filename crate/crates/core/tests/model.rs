//! Behaviour of the blocks and the stacked forward pass.

mod common;

use common::random_tensor;
use lino::model::{
    fused_features, init_params, li_block, no_block, Ablation, Fusion, LiNoConfig, LiNoModel, LiNoParams, Variant,
};
use lino::rng::RunSeed;
use lino::tensor::{Mode, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(c: usize, n: usize) -> LiNoConfig {
    LiNoConfig::new(c, 16, 4).with_dim(8).with_blocks(n)
}

fn model(cfg: LiNoConfig, seed: u64) -> LiNoModel {
    LiNoModel::init(cfg, RunSeed(seed)).unwrap()
}

fn randomize_kernels(params: &mut LiNoParams, seed: u64) {
    for (i, level) in params.levels.iter_mut().enumerate() {
        let shape = level.li.phi.shape().to_vec();
        level.li.phi = random_tensor(&shape, seed + i as u64).map(|v| 0.3 * v);
        let shape = level.li.beta.shape().to_vec();
        level.li.beta = random_tensor(&shape, seed + 100 + i as u64).map(|v| 0.1 * v);
    }
}

/// Explicit loop over (b, c, d, k).
fn ar_oracle(h: &Tensor, phi: &Tensor, beta: &Tensor) -> Tensor {
    let (b, c, d) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    let mut out = Tensor::zeros([b, c, d]);
    for bi in 0..b {
        for ci in 0..c {
            for di in 0..d {
                let mut acc = beta.data()[ci];
                for k in 0..=di {
                    acc += phi.at(&[ci, k]) * h.at(&[bi, ci, di - k]);
                }
                out.set(&[bi, ci, di], acc);
            }
        }
    }
    out
}

#[test]
fn zero_kernel_gives_zero_pattern_and_bias_prediction() {
    let cfg = config(3, 1);
    let mut params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    params.levels[0].li_head.bias = Tensor::new([4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    let tape = Tape::new();
    let p = params.bind_constant(&tape);
    let h = tape.constant(random_tensor(&[2, 3, 8], 2));
    let (l, pred) = li_block(h, &p.levels[0].li, &p.levels[0].li_head, 0.0, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(l.value().data().iter().all(|v| *v == 0.0));
    for row in pred.value().data().chunks(4) {
        assert_eq!(row, &[0.5, -1.0, 2.0, 0.0]);
    }
}

#[test]
fn li_block_matches_ar_oracle_and_is_affine() {
    let cfg = config(3, 1);
    let mut params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    randomize_kernels(&mut params, 40);
    let tape = Tape::new();
    let p = params.bind_constant(&tape);
    let lv = &p.levels[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut li = |h: &Tensor| {
        let (l, _) = li_block(tape.constant(h.clone()), &lv.li, &lv.li_head, 0.5, Mode::Eval, &mut rng).unwrap();
        (*l.value()).clone()
    };
    let h1 = random_tensor(&[2, 3, 8], 5);
    let h2 = random_tensor(&[2, 3, 8], 6);
    let oracle = ar_oracle(&h1, &params.levels[0].li.phi, &params.levels[0].li.beta);
    assert!(li(&h1).max_abs_diff(&oracle) < 1e-12);

    let (a, b) = (1.7, -0.6);
    let zero = li(&Tensor::zeros([2, 3, 8]));
    let mixed = h1.zip_map(&h2, |x, y| a * x + b * y).unwrap();
    let lhs = li(&mixed).zip_map(&zero, |x, z| x - z).unwrap();
    let f1 = li(&h1);
    let f2 = li(&h2);
    let rhs = Tensor::from_fn([2, 3, 8], |i| a * (f1.data()[i] - zero.data()[i]) + b * (f2.data()[i] - zero.data()[i]));
    assert!(lhs.max_abs_diff(&rhs) < 1e-9);
}

#[test]
fn train_mode_dropout_only_touches_li_pattern() {
    let cfg = config(2, 1).with_dropout(0.5);
    let mut params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    randomize_kernels(&mut params, 7);
    let tape = Tape::new();
    let p = params.bind_constant(&tape);
    let h = tape.constant(random_tensor(&[1, 2, 8], 9));
    let lv = &p.levels[0];
    let (eval, _) = li_block(h, &lv.li, &lv.li_head, 0.5, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let (train, _) = li_block(h, &lv.li, &lv.li_head, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    for (e, t) in eval.value().data().iter().zip(train.value().data()) {
        assert!(*t == 0.0 || (t - 2.0 * e).abs() < 1e-12);
    }
}

#[test]
fn single_channel_mixing_sees_its_own_row() {
    // with C = 1 the weighted mean is the row itself, so the mixing MLP sees [ntf, ntf]
    let cfg = config(1, 1);
    let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let tape = Tape::new();
    let p = params.bind_constant(&tape);
    let no = &p.levels[0].no;
    let r = tape.constant(random_tensor(&[2, 1, 8], 4));
    let (n, _) = no_block(r, no, &p.levels[0].no_head, &cfg).unwrap();

    let ntf = fused_features(r, no, &cfg).unwrap();
    let joined = tape.concat(&[ntf, ntf], 2).unwrap();
    let nc = lino::model::mlp(joined, &no.mix).unwrap();
    let x = ntf.add(nc).unwrap().layer_norm(no.norm1.gamma, no.norm1.beta, cfg.norm_eps).unwrap();
    let manual = x
        .add(lino::model::mlp(x, &no.ff).unwrap())
        .unwrap()
        .layer_norm(no.norm2.gamma, no.norm2.beta, cfg.norm_eps)
        .unwrap();
    assert!(n.value().max_abs_diff(&manual.value()) < 1e-12);
}

#[test]
fn zero_residual_is_a_fixed_point() {
    let cfg = config(3, 1);
    let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let tape = Tape::new();
    let p = params.bind_constant(&tape);
    let r = tape.constant(Tensor::zeros([2, 3, 8]));
    let (n, _) = no_block(r, &p.levels[0].no, &p.levels[0].no_head, &cfg).unwrap();
    assert!(n.value().data().iter().all(|v| *v == 0.0));
}

#[test]
fn temporal_path_without_fusion_is_linear() {
    let mut cfg = config(3, 1).with_ablation(Ablation {
        no_fe: true,
        no_cd: true,
        ..Ablation::default()
    });
    cfg.fusion = Fusion::Identity;
    let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let tape = Tape::new();
    let p = params.bind_constant(&tape);
    let f = |x: &Tensor| (*fused_features(tape.constant(x.clone()), &p.levels[0].no, &cfg).unwrap().value()).clone();
    let x = random_tensor(&[2, 3, 8], 10);
    let y = random_tensor(&[2, 3, 8], 11);
    let (a, b) = (0.8, -2.3);
    let lhs = f(&x.zip_map(&y, |u, v| a * u + b * v).unwrap());
    let rhs = f(&x).zip_map(&f(&y), |u, v| a * u + b * v).unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-8);
}

#[test]
fn telescoping_holds_for_every_depth() {
    for n in 1..=4 {
        let mut m = model(config(3, n), n as u64);
        randomize_kernels(&mut m.params, 50);
        let x = random_tensor(&[4, 3, 16], 60 + n as u64);
        let trace = m.forward(&x).unwrap();
        let mut recon = trace.levels.last().unwrap().rn.clone();
        for lv in &trace.levels {
            recon = recon.zip_map(&lv.l, |a, b| a + b).unwrap().zip_map(&lv.n, |a, b| a + b).unwrap();
        }
        assert!(trace.h1.max_abs_diff(&recon) < 1e-9, "N={n}");
        for lv in &trace.levels {
            assert_eq!(lv.rl, lv.h.zip_map(&lv.l, |a, b| a - b).unwrap());
            assert_eq!(lv.rn, lv.rl.zip_map(&lv.n, |a, b| a - b).unwrap());
        }
    }
}

#[test]
fn moving_average_kernel_recovers_trend() {
    let k = 4;
    let mut m = model(config(2, 1), 3);
    m.params.levels[0].li.phi = Tensor::from_fn([2, 8], |i| if i % 8 < k { 1.0 / k as f64 } else { 0.0 });
    let x = random_tensor(&[2, 16], 8);
    let trace = m.forward(&x).unwrap();
    let h = &trace.h1;
    for c in 0..2 {
        for d in 0..8 {
            let window: f64 = (0..k.min(d + 1)).map(|j| h.at(&[c, d - j])).sum();
            assert!((trace.levels[0].l.at(&[c, d]) - window / k as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn prediction_is_sum_of_level_predictions() {
    let mut m = model(config(3, 3), 4);
    randomize_kernels(&mut m.params, 70);
    let x = random_tensor(&[2, 3, 16], 71);
    let trace = m.forward(&x).unwrap();
    let add = |a: &Tensor, b: &Tensor| a.zip_map(b, |x, y| x + y).unwrap();
    let li = trace.levels.iter().skip(1).fold(trace.levels[0].p_li.clone(), |acc, l| add(&acc, &l.p_li));
    let no = trace.levels.iter().skip(1).fold(trace.levels[0].p_no.clone(), |acc, l| add(&acc, &l.p_no));
    assert_eq!(trace.pred_norm, add(&li, &no));
    assert_eq!(trace.yhat.shape(), &[2, 3, 4]);
}

#[test]
fn forward_is_deterministic_and_accepts_unbatched_input() {
    let m = model(config(3, 2), 5);
    let x = random_tensor(&[3, 16], 12);
    let a = m.forward(&x).unwrap();
    let b = m.forward(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.yhat.shape(), &[3, 4]);
    let batched = m.predict(&x.reshape([1, 3, 16]).unwrap()).unwrap();
    assert_eq!(batched.data(), a.yhat.data());
    assert!(m.forward(&random_tensor(&[3, 15], 1)).is_err());
}

#[test]
fn removed_blocks_contribute_nothing() {
    let ab = Ablation { no_li: true, ..Ablation::default() };
    let m = model(config(3, 2).with_ablation(ab), 6);
    let trace = m.forward(&random_tensor(&[2, 3, 16], 13)).unwrap();
    for lv in &trace.levels {
        assert!(lv.l.data().iter().chain(lv.p_li.data()).all(|v| *v == 0.0));
        assert_eq!(lv.rl, lv.h);
    }
    let ab = Ablation { no_no: true, ..Ablation::default() };
    let m = model(config(3, 2).with_ablation(ab), 6);
    let trace = m.forward(&random_tensor(&[2, 3, 16], 13)).unwrap();
    for lv in &trace.levels {
        assert!(lv.n.data().iter().chain(lv.p_no.data()).all(|v| *v == 0.0));
    }
}

#[test]
fn mu_variant_telescopes_over_nonlinear_patterns() {
    let mut m = model(config(3, 3).with_variant(Variant::Mu), 7);
    randomize_kernels(&mut m.params, 80);
    let trace = m.forward(&random_tensor(&[2, 3, 16], 14)).unwrap();
    let mut recon = trace.levels.last().unwrap().rn.clone();
    for lv in &trace.levels {
        recon = recon.zip_map(&lv.n, |a, b| a + b).unwrap();
        assert!(lv.p_li.data().iter().all(|v| *v == 0.0));
    }
    assert!(trace.h1.max_abs_diff(&recon) < 1e-12);
}

#[test]
fn raw_variant_predicts_from_final_features_only() {
    let mut m = model(config(3, 3).with_variant(Variant::Raw), 8);
    randomize_kernels(&mut m.params, 90);
    let trace = m.forward(&random_tensor(&[2, 3, 16], 15)).unwrap();
    assert_eq!(trace.yhat.shape(), &[2, 3, 4]);
    for (i, lv) in trace.levels.iter().enumerate() {
        assert_eq!(lv.rn, lv.n);
        let silent = lv.p_no.data().iter().all(|v| *v == 0.0);
        assert_eq!(silent, i < 2);
    }
}

#[test]
fn ln_and_lino_agree_at_zero_linear_pattern() {
    // phi = 0 gives L = 0 in both designs. LN feeds L to the nonlinear block
    // while LiNo feeds H - L = H, so the predictions coincide when H = 0,
    // which a constant lookback produces after normalisation and zero-bias embedding.
    let cfg = config(3, 1);
    let lino = model(cfg.clone(), 9);
    let ln = LiNoModel {
        config: cfg.with_variant(Variant::Ln),
        params: lino.params.clone(),
    };
    let flat = Tensor::from_fn([2, 3, 16], |i| (i / 16) as f64 * 1.5 - 2.0);
    assert_eq!(lino.predict(&flat).unwrap(), ln.predict(&flat).unwrap());

    let x = random_tensor(&[2, 3, 16], 16);
    let (a, b) = (lino.forward(&x).unwrap(), ln.forward(&x).unwrap());
    assert_eq!(a.levels[0].p_li, b.levels[0].p_li);
    assert!(a.levels[0].l.data().iter().all(|v| *v == 0.0));
}

#[test]
fn no_cd_makes_channels_independent() {
    let ab = Ablation { no_cd: true, ..Ablation::default() };
    let m = model(config(3, 2).with_ablation(ab), 10);
    let x = random_tensor(&[1, 3, 16], 17);
    let perm = [2usize, 0, 1];
    let px = Tensor::from_fn([1, 3, 16], |i| x.data()[perm[i / 16] * 16 + i % 16]);
    let y = m.predict(&x).unwrap();
    let py = m.predict(&px).unwrap();
    for (c, &src) in perm.iter().enumerate() {
        for f in 0..4 {
            assert!((py.at(&[0, c, f]) - y.at(&[0, src, f])).abs() < 1e-12);
        }
    }
}
