use mambular::blocks::{
    bidirectional_forward, interaction_apply, AttentionBlock, AttentionConfig, MambaBlock,
    MambaConfig,
};
use mambular::numerics::kernels::{self, ScanInputs};
use mambular::numerics::{Graph, ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod oracles;
use oracles::{naive_scan, random};

struct ScanCase {
    u: Tensor,
    delta: Tensor,
    a: Tensor,
    b: Tensor,
    c: Tensor,
    alpha: Tensor,
}

impl ScanCase {
    fn random(rng: &mut ChaCha8Rng, n: usize, j: usize, e: usize, s: usize) -> Self {
        Self {
            u: random(rng, &[n, j, e], -2.0, 2.0),
            delta: random(rng, &[n, j, e], 1e-3, 1.5),
            a: random(rng, &[e, s], -3.0, -0.05),
            b: random(rng, &[n, j, s], -2.0, 2.0),
            c: random(rng, &[n, j, s], -2.0, 2.0),
            alpha: random(rng, &[e], -1.5, 1.5),
        }
    }

    fn inputs(&self) -> ScanInputs<'_> {
        ScanInputs {
            u: &self.u,
            delta: &self.delta,
            a: &self.a,
            b: &self.b,
            c: &self.c,
            alpha: &self.alpha,
        }
    }
}

#[test]
fn scan_matches_unrolled_recurrence_on_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..50 {
        let (n, j, e, s) = (
            rng.gen_range(1..=3),
            rng.gen_range(1..=8),
            rng.gen_range(1..=6),
            rng.gen_range(1..=5),
        );
        let case = ScanCase::random(&mut rng, n, j, e, s);
        let got = kernels::selective_scan(&case.inputs()).unwrap();
        let want = naive_scan(&case.inputs());
        assert!(got.max_abs_diff(&want) < 1e-12, "config {n}x{j}x{e}x{s}");
    }
}

#[test]
fn scan_with_zero_state_input_is_the_skip_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut case = ScanCase::random(&mut rng, 2, 4, 3, 2);
    case.b = Tensor::zeros(case.b.shape());
    let got = kernels::selective_scan(&case.inputs()).unwrap();
    for bi in 0..2 {
        for t in 0..4 {
            for ch in 0..3 {
                let want = case.alpha.get(&[ch]) * case.u.get(&[bi, t, ch]);
                assert_eq!(got.get(&[bi, t, ch]), want);
            }
        }
    }
}

fn perturb_position(x: &Tensor, pos: usize, by: f64) -> Tensor {
    let mut out = x.clone();
    let (n, _, e) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    for b in 0..n {
        for ch in 0..e {
            let v = out.get(&[b, pos, ch]);
            out.set(&[b, pos, ch], v + by);
        }
    }
    out
}

fn assert_prefix_equal(a: &Tensor, b: &Tensor, upto: usize) {
    let (n, _, e) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    for bi in 0..n {
        for t in 0..upto {
            for ch in 0..e {
                assert_eq!(a.get(&[bi, t, ch]), b.get(&[bi, t, ch]), "position {t}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scan_is_causal(seed in 0u64..10_000, j in 2usize..8, by in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = ScanCase::random(&mut rng, 2, j, 3, 2);
        let pos = rng.gen_range(0..j);
        let base = kernels::selective_scan(&case.inputs()).unwrap();
        let moved = ScanCase {
            u: perturb_position(&case.u, pos, by),
            delta: perturb_position(&case.delta, pos, by.abs()),
            b: perturb_position(&case.b, pos, by),
            c: perturb_position(&case.c, pos, by),
            ..case
        };
        let out = kernels::selective_scan(&moved.inputs()).unwrap();
        assert_prefix_equal(&base, &out, pos);
    }
}

fn block_config(d: usize, kernel: usize) -> MambaConfig {
    MambaConfig {
        d,
        expand: 2,
        kernel,
        state: 3,
        dt_rank: 2,
    }
}

fn run_block(params: &ParamSet, block: &MambaBlock, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, &p, xv).unwrap();
    g.value(y).clone()
}

#[test]
fn mamba_block_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut params = ParamSet::new();
    let block = MambaBlock::new(&mut params, "m", block_config(6, 3), 0.0, &mut rng).unwrap();
    let x = random(&mut rng, &[3, 7, 6], -1.0, 1.0);
    let base = run_block(&params, &block, &x);
    for pos in 0..7 {
        let out = run_block(&params, &block, &perturb_position(&x, pos, 0.7));
        assert_prefix_equal(&base, &out, pos);
        if pos + 1 < 7 {
            assert_ne!(base.get(&[0, 6, 0]), out.get(&[0, 6, 0]));
        }
    }
}

#[test]
fn kernel_one_mixes_only_through_the_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let mut params = ParamSet::new();
    let block = MambaBlock::new(&mut params, "m", block_config(4, 1), 0.0, &mut rng).unwrap();
    let x = random(&mut rng, &[2, 5, 4], -1.0, 1.0);
    let y = run_block(&params, &block, &x);
    assert_eq!(y.shape(), &[2, 5, 4]);
    assert!(y.all_finite());
}

#[test]
fn bidirectional_flip_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(120);
    let mut params = ParamSet::new();
    let fwd = MambaBlock::new(&mut params, "f", block_config(4, 3), 0.0, &mut rng).unwrap();
    let bwd = MambaBlock::new(&mut params, "b", block_config(4, 3), 0.0, &mut rng).unwrap();
    let x = random(&mut rng, &[2, 6, 4], -1.0, 1.0);

    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let xv = g.constant(x);
    let merged = bidirectional_forward(&mut g, &p, xv, &fwd, &bwd).unwrap();
    let flipped_in = g.flip(xv, 1).unwrap();
    let swapped = bidirectional_forward(&mut g, &p, flipped_in, &bwd, &fwd).unwrap();
    let swapped = g.flip(swapped, 1).unwrap();
    assert_eq!(g.value(merged).data(), g.value(swapped).data());

    // Both directions are summed: fwd(x) + flip(bwd(flip x)).
    let a = fwd.forward(&mut g, &p, xv).unwrap();
    let r = g.flip(xv, 1).unwrap();
    let b = bwd.forward(&mut g, &p, r).unwrap();
    let b = g.flip(b, 1).unwrap();
    let sum = g.add(a, b).unwrap();
    assert_eq!(g.value(merged).data(), g.value(sum).data());
}

#[test]
fn identity_interaction_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(130);
    let z = random(&mut rng, &[2, 5, 3], -1.0, 1.0);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let w = g.constant(Tensor::identity(5));
    let out = interaction_apply(&mut g, zv, w).unwrap();
    assert_eq!(g.value(out).data(), z.data());
}

#[test]
fn interaction_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(131);
    let z = random(&mut rng, &[2, 4, 3], -1.0, 1.0);
    let w = random(&mut rng, &[4, 4], -1.0, 1.0);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let wv = g.constant(w.clone());
    let out = interaction_apply(&mut g, zv, wv).unwrap();
    for n in 0..2 {
        for k in 0..4 {
            for c in 0..3 {
                let want: f64 = (0..4).map(|j| w.get(&[j, k]) * z.get(&[n, j, c])).sum();
                assert!((g.value(out).get(&[n, k, c]) - want).abs() < 1e-12);
            }
        }
    }
}

fn attention(rng: &mut ChaCha8Rng) -> (ParamSet, AttentionBlock) {
    let mut params = ParamSet::new();
    let cfg = AttentionConfig {
        d: 8,
        heads: 2,
        ff_dim: 6,
        attention_dropout: 0.2,
        ff_dropout: 0.1,
    };
    let block = AttentionBlock::new(&mut params, "att", cfg, rng).unwrap();
    (params, block)
}

#[test]
fn attention_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(140);
    let (params, block) = attention(&mut rng);
    let x = random(&mut rng, &[2, 5, 8], -1.0, 1.0);
    let perm = vec![3, 0, 4, 1, 2];
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let xv = g.constant(x);
    let y = block.forward(&mut g, &p, xv).unwrap();
    let xp = g.index_select(xv, 1, perm.clone()).unwrap();
    let yp = block.forward(&mut g, &p, xp).unwrap();
    let y_then_p = g.index_select(y, 1, perm).unwrap();
    assert!(g.value(yp).max_abs_diff(g.value(y_then_p)) < 1e-12);
}

#[test]
fn attention_dropout_is_inactive_at_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(141);
    let (params, block) = attention(&mut rng);
    let x = random(&mut rng, &[2, 4, 8], -1.0, 1.0);
    let run = |g: &mut Graph| {
        let p = params.bind(g);
        let xv = g.constant(x.clone());
        let y = block.forward(g, &p, xv).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(&mut Graph::new()).data(), run(&mut Graph::new()).data());
    let a = run(&mut Graph::training(1));
    let b = run(&mut Graph::training(2));
    assert_ne!(a.data(), b.data());
}
