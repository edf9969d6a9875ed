use litese_autograd::gradcheck::check;
use litese_autograd::{Tape, Tensor, Var};
use litese_core::nn::layers::BatchNorm;
use litese_core::nn::{aprelu, build_block, channel_shuffle, Block, BlockPlacement, BlockSpec, BlockType, Body, Ctfa, Ctx, Module, StreamState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn spec(kind: BlockType, stride: usize, groups: usize, channels: usize, kernel: (usize, usize)) -> BlockSpec {
    BlockSpec {
        kind,
        stride,
        groups,
        channels,
        kernel,
        transposed: false,
    }
}

fn block(s: &BlockSpec, cin: usize, f_in: usize, seed: u64) -> Block {
    build_block(
        s,
        BlockPlacement {
            name: "b",
            cin,
            f_in,
            gate: false,
        },
        &mut rng(seed),
    )
    .unwrap()
}

/// Randomizes every stored value, keeping variances positive.
fn scramble<M: Module>(m: &mut M, seed: u64) {
    let mut r = rng(seed);
    m.visit_mut(&mut |p| {
        let var = p.name.ends_with("running_var");
        for v in p.value.data_mut() {
            *v = if var { r.gen_range(0.5..1.5) } else { *v + r.gen_range(-0.3..0.3) };
        }
    });
}

fn run(b: &Block, x: &Tensor) -> Tensor {
    let tape = Tape::no_grad();
    let ctx = Ctx::eval(&tape);
    let y = b.forward(&ctx, tape.constant(x.clone()));
    (*tape.value(y)).clone()
}

#[test]
fn aprelu_examples() {
    let one = |x: f64, g: f64, b: f64, a: f64| {
        aprelu(
            &Tensor::new(&[1, 1, 1], vec![x]),
            &Tensor::new(&[1, 1], vec![g]),
            &Tensor::new(&[1, 1], vec![b]),
            &Tensor::new(&[1], vec![a]),
        )
        .unwrap()
        .data()[0]
    };
    assert_eq!(one(1.0, 1.0, 0.0, 0.25), 2.0);
    assert_eq!(one(-1.0, 1.0, 0.0, 0.25), -1.25);
    assert!((one(-2.0, 0.3, 0.5, 0.1) - -0.3).abs() < 1e-15);
    // zero affine part is a plain PReLU
    for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
        assert_eq!(one(x, 0.0, 0.0, 0.2), if x > 0.0 { x } else { 0.2 * x });
    }
    let bad = aprelu(&Tensor::zeros(&[2, 3, 4]), &Tensor::zeros(&[2, 5]), &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[2]));
    assert!(bad.is_err());
}

#[test]
fn aprelu_tape_matches_plain_and_gradients() {
    let mut r = rng(1);
    let x = Tensor::uniform(&[2, 3, 4, 5], -2.0, 2.0, &mut r);
    let g = Tensor::uniform(&[3, 5], 0.5, 1.5, &mut r);
    let b = Tensor::uniform(&[3, 5], -0.5, 0.5, &mut r);
    let a = Tensor::uniform(&[3], 0.05, 0.4, &mut r);
    let tape = Tape::no_grad();
    let y = tape.aprelu(tape.constant(x.clone()), tape.constant(g.clone()), tape.constant(b.clone()), tape.constant(a.clone()));
    assert!(tape.value(y).max_abs_diff(&aprelu(&x, &g, &b, &a).unwrap()) < 1e-15);

    let w = Tensor::randn(&[2, 3, 4, 5], 1.0, &mut r);
    let rep = check(
        &[x, g, b, a],
        1e-5,
        1e-8,
        |t, v| {
            let y = t.aprelu(v[0], v[1], v[2], v[3]);
            let p = t.mul(y, t.constant(w.clone()));
            t.sum_all(p)
        },
        |k, _, v| k == 0 && v.abs() < 1e-6,
    );
    assert!(rep.worst() <= 1e-4, "{:?}", rep);
}

/// Finite differences (fourth order) over both the input and every trainable parameter of
/// a module, through a weighted sum of `f`'s output.
fn module_gradcheck<M: Module + Clone>(m: &M, x: &Tensor, f: impl Fn(&M, &Ctx, Var) -> Var) -> f64 {
    let w = Tensor::randn(&run_shape(m, x, &f), 1.0, &mut rng(99));
    let loss = |m: &M, x: &Tensor, tape: &Tape, ctx: &Ctx| {
        let xv = tape.leaf(x.clone());
        let y = f(m, ctx, xv);
        let p = tape.mul(y, tape.constant(w.clone()));
        (xv, tape.sum_all(p))
    };
    let eval = |m: &M, x: &Tensor| {
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape);
        let (_, l) = loss(m, x, &tape, &ctx);
        tape.value(l).item()
    };
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape);
    let (xv, l) = loss(m, x, &tape, &ctx);
    let grads = tape.backward(l);
    let leaves = ctx.leaves();
    let h = 1e-4;
    // fourth-order central difference
    let diff = |f: &dyn Fn(f64) -> f64| (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
    let mut worst: f64 = 0.0;

    let gx = grads.get(xv).unwrap();
    for j in 0..x.numel() {
        let shift = |d: f64| {
            let mut p = x.clone();
            p.data_mut()[j] += d;
            eval(m, &p)
        };
        worst = worst.max(rel(gx.data()[j], diff(&shift)));
    }
    let names: Vec<String> = m.params().iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    for name in names {
        let g = leaves.get(&name).and_then(|v| grads.get(*v)).cloned();
        let n = m.params().iter().find(|p| p.name == name).unwrap().numel();
        for j in 0..n {
            let shift = |d: f64| {
                let mut c = m.clone();
                c.visit_mut(&mut |p| {
                    if p.name == name {
                        p.value.data_mut()[j] += d;
                    }
                });
                eval(&c, x)
            };
            let num = diff(&shift);
            let a = g.as_ref().map_or(0.0, |g| g.data()[j]);
            worst = worst.max(rel(a, num));
        }
    }
    worst
}

fn run_shape<M>(m: &M, x: &Tensor, f: &impl Fn(&M, &Ctx, Var) -> Var) -> Vec<usize> {
    let tape = Tape::no_grad();
    let ctx = Ctx::eval(&tape);
    let y = f(m, &ctx, tape.constant(x.clone()));
    tape.shape(y)
}

#[test]
fn ctfa_gradients_both_branches() {
    let mut a = Ctfa::new("a", 4, 16, &mut rng(2));
    scramble(&mut a, 3);
    let x = Tensor::uniform(&[2, 4, 8, 16], -1.0, 1.0, &mut rng(4));
    let t = module_gradcheck(&a, &x, |m, ctx, v| m.time_gate(ctx, v));
    let f = module_gradcheck(&a, &x, |m, ctx, v| m.freq_gate(ctx, v));
    let all = module_gradcheck(&a, &x, |m, ctx, v| m.forward(ctx, v));
    assert!(t <= 1e-4 && f <= 1e-4 && all <= 1e-4, "time {} freq {} full {}", t, f, all);
}

#[test]
fn ctfa_examples_and_causality() {
    let mut a = Ctfa::new("a", 3, 10, &mut rng(5));
    scramble(&mut a, 6);
    let tape = Tape::no_grad();
    let ctx = Ctx::eval(&tape);
    let zero = a.forward(&ctx, tape.constant(Tensor::zeros(&[1, 3, 6, 10])));
    assert!(tape.value(zero).data().iter().all(|&v| v == 0.0));

    let x = Tensor::uniform(&[1, 3, 6, 10], -2.0, 2.0, &mut rng(7));
    let y = a.forward(&ctx, tape.constant(x.clone()));
    for (o, i) in tape.value(y).data().iter().zip(x.data()) {
        assert!(o.abs() < i.abs() || *i == 0.0);
    }

    let mut r = rng(8);
    for _ in 0..20 {
        let t0 = r.gen_range(1..6);
        let mut z = x.clone();
        for c in 0..3 {
            for t in t0..6 {
                for f in 0..10 {
                    z.set(&[0, c, t, f], r.gen_range(-3.0..3.0));
                }
            }
        }
        for gate in 0..3 {
            let out = |v: &Tensor| {
                let v = tape.constant(v.clone());
                let o = match gate {
                    0 => a.time_gate(&ctx, v),
                    1 => a.freq_gate(&ctx, v),
                    _ => a.forward(&ctx, v),
                };
                (*tape.value(o)).clone()
            };
            let (p, q) = (out(&x), out(&z));
            assert!(p.narrow(2, 0, t0).max_abs_diff(&q.narrow(2, 0, t0)) <= 1e-12);
        }
    }
}

#[test]
fn channel_shuffle_examples() {
    let x = Tensor::new(&[1, 4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]);
    assert_eq!(channel_shuffle(&x, 1, 1).unwrap(), x);
    let y = channel_shuffle(&x, 1, 2).unwrap();
    assert_eq!(y.data(), &[0.0, 2.0, 1.0, 3.0]);
    assert_eq!(channel_shuffle(&y, 1, 2).unwrap(), x);
    assert!(channel_shuffle(&Tensor::zeros(&[1, 3, 1, 1]), 1, 2).is_err());
}

#[test]
fn stride_and_time_length() {
    let mut r = rng(9);
    for kind in BlockType::ALL {
        for (stride, kernel) in [(1, (3, 3)), (2, (2, 5)), (2, (1, 7))] {
            let b = block(&spec(kind, stride, 2, 8, kernel), 4, 33, r.gen());
            let x = Tensor::uniform(&[1, 4, 5, 33], -1.0, 1.0, &mut r);
            let y = run(&b, &x);
            let want = if stride == 2 { 17 } else { 33 };
            assert_eq!(y.shape(), &[1, 8, 5, want], "{} stride {}", kind, stride);
        }
    }
    let b = block(&spec(BlockType::Conv, 2, 1, 16, (3, 3)), 16, 129, 1);
    assert_eq!(b.f_out, 65);
}

#[test]
fn dws_parameter_hand_count() {
    let b = block(&spec(BlockType::Dws, 1, 1, 16, (3, 3)), 16, 33, 0);
    // pointwise + BN + scalar PReLU + depthwise + BN + scalar PReLU
    let hand = (16 * 16 + 16) + 32 + 1 + (16 * 9 + 16) + 32 + 1;
    let counted: u64 = b.cost_list().iter().map(|c| c.params).sum();
    assert_eq!(counted, hand as u64);
    assert_eq!(b.params().iter().filter(|p| p.trainable).map(|p| p.numel()).sum::<usize>(), hand);
}

#[test]
fn mb_residual_passes_input_through() {
    let mut b = block(&spec(BlockType::Mb, 1, 1, 8, (3, 3)), 8, 17, 0);
    b.visit_mut(&mut |p| {
        if p.name.ends_with(".weight") || p.name.ends_with(".bias") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    });
    let x = Tensor::uniform(&[1, 8, 4, 17], -1.0, 1.0, &mut rng(1));
    assert!(run(&b, &x).max_abs_diff(&x) < 1e-12);
}

#[test]
fn unknown_block_type_is_rejected() {
    assert!("Bogus".parse::<BlockType>().is_err());
    assert_eq!("xdws".parse::<BlockType>().unwrap(), BlockType::XDws);
    assert!(spec(BlockType::Dws, 3, 1, 8, (3, 3)).validate().is_err());
    assert!(spec(BlockType::Dws, 1, 2, 7, (3, 3)).validate().is_err());
}

#[test]
fn rep_merge_matches_branches() {
    let mut b = block(&spec(BlockType::Rep, 1, 1, 16, (2, 3)), 16, 33, 3);
    scramble(&mut b, 4);
    let merged = b.merged();
    assert!(matches!(merged.body, Body::Dws(_)));
    let mut r = rng(5);
    for _ in 0..5 {
        let x = Tensor::uniform(&[2, 16, 10, 33], -2.0, 2.0, &mut r);
        assert!(run(&b, &x).max_abs_diff(&run(&merged, &x)) < 1e-5);
    }
    let dws = block(&spec(BlockType::Dws, 1, 1, 16, (2, 3)), 16, 33, 3);
    let count = |b: &Block| b.cost_list().iter().map(|c| c.params).sum::<u64>();
    assert_eq!(count(&merged), count(&dws));
    assert_eq!(count(&b), count(&dws));
}

#[test]
fn rep_identity_branches_fold_to_identity_kernel() {
    let mut b = block(&spec(BlockType::Rep, 1, 1, 4, (1, 3)), 4, 9, 6);
    let Body::Rep(rep) = &mut b.body else { unreachable!() };
    // second branch silenced, all norms at identity
    for stage in [&mut rep.pw, &mut rep.dw] {
        stage[1].conv.w.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        stage[1].conv.b.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        for br in stage.iter_mut() {
            let (name, c, f) = (br.bn.name.clone(), br.bn.channels(), br.bn.f);
            br.bn = BatchNorm::identity(&name, c, f);
        }
    }
    for id in [&mut rep.pw_id, &mut rep.dw_id] {
        let bn = id.as_mut().unwrap();
        *bn = BatchNorm::identity(&bn.name.clone(), bn.channels(), bn.f);
    }
    let main_pw = rep.pw[0].conv.w.value.clone();
    let merged = rep.merge();
    for co in 0..4 {
        for ci in 0..4 {
            let want = main_pw.at(&[co, ci, 0, 0]) + if co == ci { 1.0 } else { 0.0 };
            assert!((merged.pw.w.value.at(&[co, ci, 0, 0]) - want).abs() < 1e-12);
        }
    }
}

/// Frame-by-frame forward with carried state against the batch forward.
fn stream_vs_batch(b: &Block, x: &Tensor) -> f64 {
    let full = run(b, x);
    let frames = x.shape()[2];
    let mut state = StreamState::new();
    let mut worst: f64 = 0.0;
    for t in 0..frames {
        let tape = Tape::no_grad();
        let ctx = Ctx::streaming(&tape, state);
        let y = b.forward(&ctx, tape.constant(x.narrow(2, t, 1)));
        worst = worst.max(tape.value(y).max_abs_diff(&full.narrow(2, t, 1)));
        state = ctx.into_state().unwrap();
    }
    worst
}

#[test]
fn every_block_streams_like_batch() {
    let mut r = rng(10);
    for kind in BlockType::ALL {
        for transposed in [false, true] {
            let mut s = spec(kind, 2, 2, 8, (3, 5));
            s.transposed = transposed;
            let f_in = if transposed { 9 } else { 17 };
            let mut b = block(&s, 8, f_in, r.gen());
            scramble(&mut b, r.gen());
            let x = Tensor::uniform(&[2, 8, 7, f_in], -1.0, 1.0, &mut r);
            let d = stream_vs_batch(&b, &x);
            assert!(d <= 1e-5, "{} transposed={} deviates by {}", kind, transposed, d);
        }
    }
}

#[test]
fn extended_block_gradients() {
    let mut b = block(&spec(BlockType::XMb, 1, 2, 4, (2, 3)), 4, 6, 11);
    scramble(&mut b, 12);
    let x = Tensor::uniform(&[1, 4, 3, 6], -1.0, 1.0, &mut rng(13));
    let worst = module_gradcheck(&b, &x, |m, ctx, v| m.forward(ctx, v));
    assert!(worst <= 1e-4, "{}", worst);
}
