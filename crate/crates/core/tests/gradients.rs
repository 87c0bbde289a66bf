//! Central-difference checks for the adjoint of every recorded operation,
//! then for whole blocks and the full model loss.
//!
//! Inputs are kept away from relu/leaky-relu kinks so the two-sided
//! difference never straddles a nondifferentiable point.

use kinecast_core::gat::{self, GatBlockParams};
use kinecast_core::rng::RngStream;
use kinecast_core::tape::{Tape, ValueId};
use kinecast_core::tcn::{self, TcnBlockParams};
use kinecast_core::tgn::{self, TgnConfig, TgnParams};
use kinecast_core::{Mode, Tensor};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn scalar_of<F: Fn(&mut Tape, &[ValueId]) -> ValueId>(build: &F, params: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = build(&mut tape, &ids);
    tape.value(out).data()[0]
}

fn assert_close(g: f64, fd: f64, what: &str) {
    let denom = g.abs().max(fd.abs()).max(1e-3);
    assert!(
        (g - fd).abs() / denom < TOL,
        "{what}: analytic {g} vs central difference {fd}"
    );
}

/// Checks d(build)/d(params) against central differences, element by element.
fn check<F: Fn(&mut Tape, &[ValueId]) -> ValueId>(build: F, params: &[Tensor]) {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = build(&mut tape, &ids);
    assert_eq!(tape.value(out).data().len(), 1, "objective must be scalar");
    let grads = tape.grad(out, &ids).unwrap();

    for (pi, p) in params.iter().enumerate() {
        for e in 0..p.data().len() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[e] += H;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[e] -= H;
            let fd = (scalar_of(&build, &plus) - scalar_of(&build, &minus)) / (2.0 * H);
            assert_close(grads[pi].data()[e], fd, &format!("param {pi} element {e}"));
        }
    }
}

/// Uniform values with magnitude in `[0.1, 1.5]`, either sign: safely away
/// from the relu kink even after a +-1e-5 nudge.
fn kink_free(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let mag = Tensor::uniform(shape, 0.1, 1.5, rng);
    let sig = Tensor::uniform(shape, -1.0, 1.0, rng);
    let mut out = mag;
    for (m, s) in out.data_mut().iter_mut().zip(sig.data().iter()) {
        if *s < 0.0 {
            *m = -*m;
        }
    }
    out
}

/// Reduces `out` to a scalar against a fixed weighting so every element gets
/// a distinct cotangent.
fn weigh(tape: &mut Tape, out: ValueId, w: &Tensor) -> ValueId {
    let wid = tape.leaf(w.clone());
    let prod = tape.mul(out, wid).unwrap();
    tape.sum(prod)
}

#[test]
fn elementwise_and_scalar_ops() {
    let mut rng = RngStream::new(7, 0);
    let a = Tensor::uniform(&[3, 4], -2.0, 2.0, &mut rng);
    let b = Tensor::uniform(&[3, 4], 0.5, 2.0, &mut rng);
    let w = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);

    check(
        |tape, ids| {
            let s = tape.add(ids[0], ids[1]).unwrap();
            weigh(tape, s, &w)
        },
        &[a.clone(), b.clone()],
    );
    check(
        |tape, ids| {
            let s = tape.sub(ids[0], ids[1]).unwrap();
            weigh(tape, s, &w)
        },
        &[a.clone(), b.clone()],
    );
    check(
        |tape, ids| {
            let s = tape.mul(ids[0], ids[1]).unwrap();
            weigh(tape, s, &w)
        },
        &[a.clone(), b.clone()],
    );
    check(
        |tape, ids| {
            let s = tape.scale(ids[0], -2.5);
            let s = tape.add_scalar(s, 0.7);
            weigh(tape, s, &w)
        },
        &[a],
    );
}

#[test]
fn matmul_transpose_reshape() {
    let mut rng = RngStream::new(8, 0);
    let a = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[3, 2], -1.0, 1.0, &mut rng);
    check(
        |tape, ids| {
            let m = tape.matmul(ids[0], ids[1]).unwrap();
            weigh(tape, m, &w)
        },
        &[a.clone(), b],
    );

    let wt = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);
    check(
        |tape, ids| {
            let t = tape.transpose(ids[0]).unwrap();
            weigh(tape, t, &wt)
        },
        &[a.clone()],
    );

    let wr = Tensor::uniform(&[2, 6], -1.0, 1.0, &mut rng);
    check(
        |tape, ids| {
            let r = tape.reshape(ids[0], &[2, 6]).unwrap();
            weigh(tape, r, &wr)
        },
        &[a],
    );
}

#[test]
fn activations_and_sqrt() {
    let mut rng = RngStream::new(9, 0);
    let a = kink_free(&[3, 4], &mut rng);
    let w = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
    check(
        |tape, ids| {
            let r = tape.relu(ids[0]);
            weigh(tape, r, &w)
        },
        &[a.clone()],
    );
    check(
        |tape, ids| {
            let r = tape.leaky_relu(ids[0], 0.2);
            weigh(tape, r, &w)
        },
        &[a],
    );

    let pos = Tensor::uniform(&[3, 4], 0.4, 3.0, &mut rng);
    check(
        |tape, ids| {
            let r = tape.sqrt(ids[0]).unwrap();
            weigh(tape, r, &w)
        },
        &[pos],
    );
}

#[test]
fn softmax_and_layer_norm() {
    let mut rng = RngStream::new(10, 0);
    let a = Tensor::uniform(&[3, 5], -2.0, 2.0, &mut rng);
    let w = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
    check(
        |tape, ids| {
            let s = tape.row_softmax(ids[0]).unwrap();
            weigh(tape, s, &w)
        },
        &[a],
    );

    let b = Tensor::uniform(&[4, 6], -2.0, 2.0, &mut rng);
    let wb = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
    check(
        |tape, ids| {
            let n = tape.layer_norm_rows(ids[0], kinecast_core::LN_EPS).unwrap();
            weigh(tape, n, &wb)
        },
        &[b],
    );
}

#[test]
fn broadcast_ops() {
    let mut rng = RngStream::new(11, 0);
    let a = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let row = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);
    let col = Tensor::uniform(&[3], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);

    check(
        |tape, ids| {
            let s = tape.add_bcast_row(ids[0], ids[1]).unwrap();
            weigh(tape, s, &w)
        },
        &[a.clone(), row.clone()],
    );
    check(
        |tape, ids| {
            let s = tape.mul_bcast_row(ids[0], ids[1]).unwrap();
            weigh(tape, s, &w)
        },
        &[a.clone(), row],
    );
    check(
        |tape, ids| {
            let s = tape.add_bcast_col(ids[0], ids[1]).unwrap();
            weigh(tape, s, &w)
        },
        &[a.clone(), col.clone()],
    );
    check(
        |tape, ids| {
            let s = tape.mul_bcast_col(ids[0], ids[1]).unwrap();
            weigh(tape, s, &w)
        },
        &[a, col],
    );
}

#[test]
fn causal_convolution() {
    let mut rng = RngStream::new(12, 0);
    let x = Tensor::uniform(&[3, 6], -1.0, 1.0, &mut rng);
    let k = Tensor::uniform(&[2, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(&[2], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[2, 6], -1.0, 1.0, &mut rng);
    for dilation in [1, 2] {
        check(
            |tape, ids| {
                let y = tape.causal_conv(ids[0], ids[1], ids[2], dilation).unwrap();
                weigh(tape, y, &w)
            },
            &[x.clone(), k.clone(), b.clone()],
        );
    }
}

fn flatten<T>(p: &T, visit: impl Fn(&T, &mut dyn FnMut(&Tensor))) -> Vec<Tensor> {
    let mut out = Vec::new();
    visit(p, &mut |t| out.push(t.clone()));
    out
}

#[test]
fn attention_block() {
    let mut rng = RngStream::new(13, 0);
    let params = GatBlockParams::init(5, 4, 2, 0.0, &mut rng);
    let h = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);

    let mut flat = flatten(&params, |p, f| p.visit(&mut |t| f(t)));
    flat.push(h);

    let eval_at = |flat: &[Tensor]| -> (Tape, Vec<ValueId>, ValueId) {
        let mut p = params.clone();
        let mut i = 0;
        p.visit_mut(&mut |t| {
            *t = flat[i].clone();
            i += 1;
        });
        let mut tape = Tape::new();
        let mut trainable = Vec::new();
        let ids = p.push(&mut tape, &mut trainable);
        let hid = tape.leaf(flat[i].clone());
        trainable.push(hid);
        let out = gat::gat_block_forward_on(&mut tape, hid, &ids, Mode::Eval, None).unwrap();
        let obj = weigh(&mut tape, out, &w);
        (tape, trainable, obj)
    };

    let (tape, trainable, obj) = eval_at(&flat);
    let grads = tape.grad(obj, &trainable).unwrap();
    assert_eq!(grads.len(), flat.len());

    for (pi, p) in flat.iter().enumerate() {
        for e in 0..p.data().len() {
            let mut plus = flat.clone();
            plus[pi].data_mut()[e] += H;
            let mut minus = flat.clone();
            minus[pi].data_mut()[e] -= H;
            let (tp, _, op) = eval_at(&plus);
            let (tm, _, om) = eval_at(&minus);
            let fd = (tp.value(op).data()[0] - tm.value(om).data()[0]) / (2.0 * H);
            assert_close(grads[pi].data()[e], fd, &format!("gat tensor {pi} element {e}"));
        }
    }
}

#[test]
fn convolution_block() {
    let mut rng = RngStream::new(14, 0);
    // Channel change forces the 1x1 skip projection into the graph.
    let params = TcnBlockParams::init(3, 4, 3, 2, 0.0, &mut rng);
    let x = Tensor::uniform(&[3, 8], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[4, 8], -1.0, 1.0, &mut rng);

    let mut flat = flatten(&params, |p, f| p.visit(&mut |t| f(t)));
    flat.push(x);

    let eval_at = |flat: &[Tensor]| -> (Tape, Vec<ValueId>, ValueId) {
        let mut p = params.clone();
        let mut i = 0;
        p.visit_mut(&mut |t| {
            *t = flat[i].clone();
            i += 1;
        });
        let mut tape = Tape::new();
        let mut trainable = Vec::new();
        let ids = p.push(&mut tape, &mut trainable);
        let xid = tape.leaf(flat[i].clone());
        trainable.push(xid);
        let out = tcn::tcn_block_forward_on(&mut tape, xid, &ids, Mode::Eval, None).unwrap();
        let obj = weigh(&mut tape, out, &w);
        (tape, trainable, obj)
    };

    let (tape, trainable, obj) = eval_at(&flat);
    let grads = tape.grad(obj, &trainable).unwrap();
    assert_eq!(grads.len(), flat.len());

    for (pi, p) in flat.iter().enumerate() {
        for e in 0..p.data().len() {
            let mut plus = flat.clone();
            plus[pi].data_mut()[e] += H;
            let mut minus = flat.clone();
            minus[pi].data_mut()[e] -= H;
            let (tp, _, op) = eval_at(&plus);
            let (tm, _, om) = eval_at(&minus);
            let fd = (tp.value(op).data()[0] - tm.value(om).data()[0]) / (2.0 * H);
            assert_close(grads[pi].data()[e], fd, &format!("tcn tensor {pi} element {e}"));
        }
    }
}

#[test]
fn full_model_loss() {
    let cfg = TgnConfig {
        history: 4,
        horizon: 3,
        joints: 2,
        robot_channels: 1,
        hidden: 6,
        heads: 2,
        dilations: vec![1, 2],
        kernel: 2,
        gat_dropout: 0.0,
        tcn_dropout: 0.0,
        seed: 11,
    };
    let mut params = TgnParams::init(&cfg).unwrap();
    let mut rng = RngStream::new(3, 0);
    // The time map initializes to zero, which would zero out every trunk
    // gradient; give it life so the whole graph is exercised.
    params.time_weight = Tensor::uniform(&[cfg.history, cfg.horizon], -0.5, 0.5, &mut rng);
    let input = Tensor::uniform(&[cfg.channels(), cfg.history], -1.0, 1.0, &mut rng);
    let target = Tensor::uniform(&[cfg.human_channels(), cfg.horizon], -1.0, 1.0, &mut rng);

    let eval_at = |flat: &[Tensor]| -> (Tape, Vec<ValueId>, ValueId) {
        let mut p = params.clone();
        p.assign(flat).unwrap();
        let mut tape = Tape::new();
        let mut trainable = Vec::new();
        let ids = p.push(&mut tape, &mut trainable).unwrap();
        let pred = tgn::forward_on(&mut tape, &ids, &cfg, &input, Mode::Eval, None).unwrap();
        let tgt = tape.leaf(target.clone());
        let obj = tgn::loss_on(&mut tape, pred, tgt, ids.joint_sum).unwrap();
        (tape, trainable, obj)
    };

    let flat = params.collect();
    let (tape, trainable, obj) = eval_at(&flat);
    let grads = tape.grad(obj, &trainable).unwrap();
    assert_eq!(grads.len(), flat.len());

    for (pi, p) in flat.iter().enumerate() {
        for e in 0..p.data().len() {
            let mut plus = flat.clone();
            plus[pi].data_mut()[e] += H;
            let mut minus = flat.clone();
            minus[pi].data_mut()[e] -= H;
            let (tp, _, op) = eval_at(&plus);
            let (tm, _, om) = eval_at(&minus);
            let fd = (tp.value(op).data()[0] - tm.value(om).data()[0]) / (2.0 * H);
            assert_close(grads[pi].data()[e], fd, &format!("model tensor {pi} element {e}"));
        }
    }
}
