//! Central finite-difference checks for every differentiable op.
//!
//! These are the trust anchor for the whole engine: each test builds a small
//! graph, computes analytic gradients with `backward`, and compares every
//! parameter entry against `(f(p+h) - f(p-h)) / 2h`.

use diffdet_core::seeded_rng;
use diffdet_nn::{init, Arr, ParamSet, Tape, Tx};
use ndarray::IxDyn;

const H: f64 = 1e-5;
const RTOL: f64 = 1e-6;
const ATOL: f64 = 1e-8;

fn fd_check<F>(params: &mut ParamSet, build: F)
where
    F: Fn(&mut Tape) -> Tx,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape);
        tape.backward(loss)
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).len();
        for i in 0..n {
            let orig = params.value(id).as_slice().unwrap()[i];
            params.value_mut(id).as_slice_mut().unwrap()[i] = orig + H;
            let fp = {
                let mut tape = Tape::new(params);
                let loss = build(&mut tape);
                tape.scalar(loss)
            };
            params.value_mut(id).as_slice_mut().unwrap()[i] = orig - H;
            let fm = {
                let mut tape = Tape::new(params);
                let loss = build(&mut tape);
                tape.scalar(loss)
            };
            params.value_mut(id).as_slice_mut().unwrap()[i] = orig;
            let fd = (fp - fm) / (2.0 * H);
            let an = analytic.get(id).map(|g| g.as_slice().unwrap()[i]).unwrap_or(0.0);
            let tol = ATOL + RTOL * an.abs().max(fd.abs());
            assert!(
                (an - fd).abs() <= tol,
                "param {} entry {i}: analytic {an} vs fd {fd}",
                params.name(id)
            );
        }
    }
}

fn rand_arr(shape: &[usize], label: &str) -> Arr {
    let mut rng = seeded_rng(99, label);
    Arr::from_shape_simple_fn(IxDyn(shape), || rng.normal() * 0.7 + 0.1)
}

#[test]
fn conv2d_with_bias_and_stride() {
    let mut ps = ParamSet::new();
    let w = ps.add("w", rand_arr(&[3, 2, 3, 3], "w"));
    let b = ps.add("b", rand_arr(&[3], "b"));
    let x = ps.add("x", rand_arr(&[2, 5, 5], "x"));
    fd_check(&mut ps, |tape| {
        let xt = tape.param(x);
        let wt = tape.param(w);
        let bt = tape.param(b);
        let y = tape.conv2d(xt, wt, Some(bt), 2, 1);
        let y2 = tape.square(y);
        tape.mean(y2)
    });
}

#[test]
fn group_norm_affine() {
    let mut ps = ParamSet::new();
    let x = ps.add("x", rand_arr(&[4, 3, 3], "gn-x"));
    let gamma = ps.add("gamma", rand_arr(&[4], "gn-g"));
    let beta = ps.add("beta", rand_arr(&[4], "gn-b"));
    fd_check(&mut ps, |tape| {
        let xt = tape.param(x);
        let gt = tape.param(gamma);
        let bt = tape.param(beta);
        let y = tape.group_norm(xt, gt, bt, 2);
        let y2 = tape.square(y);
        tape.mean(y2)
    });
}

#[test]
fn linear_and_log_softmax_nll() {
    let mut ps = ParamSet::new();
    let x = ps.add("x", rand_arr(&[4, 5], "lin-x"));
    let w = ps.add("w", rand_arr(&[5, 3], "lin-w"));
    let b = ps.add("b", rand_arr(&[3], "lin-b"));
    fd_check(&mut ps, |tape| {
        let xt = tape.param(x);
        let wt = tape.param(w);
        let bt = tape.param(b);
        let logits = tape.linear(xt, wt, bt);
        let ls = tape.log_softmax_rows(logits);
        let picked = tape.gather_row_cols(ls, vec![(0, 1), (1, 0), (2, 2), (3, 1)]);
        let m = tape.mean(picked);
        tape.scale(m, -1.0)
    });
}

#[test]
fn roi_align_and_upsample() {
    let mut ps = ParamSet::new();
    let x = ps.add("x", rand_arr(&[3, 6, 6], "roi-x"));
    let rois = vec![[1.0, 2.0, 17.0, 20.0], [0.0, 0.0, 24.0, 24.0]];
    fd_check(&mut ps, |tape| {
        let xt = tape.param(x);
        let up = tape.upsample2(xt);
        let pooled = tape.roi_align(up, rois.clone(), 0.5, 2);
        let sq = tape.square(pooled);
        tape.mean(sq)
    });
}

#[test]
fn concat_gather_and_elementwise() {
    let mut ps = ParamSet::new();
    let a = ps.add("a", rand_arr(&[2, 4, 4], "cc-a"));
    let b = ps.add("b", rand_arr(&[3, 4, 4], "cc-b"));
    fd_check(&mut ps, |tape| {
        let at = tape.param(a);
        let bt = tape.param(b);
        let cat = tape.concat_channels(&[at, bt]);
        let flat = tape.reshape(cat, &[5, 16]);
        let rows = tape.gather_rows(flat, vec![0, 2, 4]);
        let h = tape.huber(rows, 1.0);
        let s = tape.sum_axis1(h);
        tape.mean(s)
    });
}

#[test]
fn smooth_activations() {
    let mut ps = ParamSet::new();
    let x = ps.add("x", rand_arr(&[3, 7], "act-x"));
    fd_check(&mut ps, |tape| {
        let xt = tape.param(x);
        let s = tape.silu(xt);
        let g = tape.sigmoid(s);
        let e = tape.exp(g);
        let p = tape.softplus(e);
        tape.mean(p)
    });
}

#[test]
fn kink_activations_away_from_zero() {
    let mut ps = ParamSet::new();
    // keep entries away from the relu/abs kink at 0
    let mut rng = seeded_rng(5, "kink");
    let vals = Arr::from_shape_simple_fn(IxDyn(&[3, 5]), || {
        let v = rng.normal();
        v.signum() * (v.abs() + 0.3)
    });
    let x = ps.add("x", vals);
    fd_check(&mut ps, |tape| {
        let xt = tape.param(x);
        let r = tape.relu(xt);
        let a = tape.abs(r);
        tape.mean(a)
    });
}

#[test]
fn shared_parameter_two_branches() {
    // The same weight used by two different paths, like the shared detector
    // heads; gradients must sum over both uses.
    let mut ps = ParamSet::new();
    let w = ps.add("w", rand_arr(&[2, 1, 3, 3], "sh-w"));
    let xa = ps.add("xa", rand_arr(&[1, 4, 4], "sh-a"));
    let xb = ps.add("xb", rand_arr(&[1, 4, 4], "sh-b"));
    fd_check(&mut ps, |tape| {
        let wt = tape.param(w);
        let a = tape.param(xa);
        let b = tape.param(xb);
        let ya = tape.conv2d(a, wt, None, 1, 1);
        let yb = tape.conv2d(b, wt, None, 1, 1);
        let d = tape.sub(ya, yb);
        let d2 = tape.square(d);
        tape.mean(d2)
    });
}

#[test]
fn composite_detector_like_head() {
    // conv -> norm -> silu -> roi pool -> linear -> log-softmax NLL + huber box
    let mut ps = ParamSet::new();
    let mut rng = seeded_rng(17, "composite");
    let x = ps.add("x", rand_arr(&[2, 8, 8], "comp-x"));
    let w1 = ps.add("w1", init::he_normal(&[4, 2, 3, 3], 18, &mut rng));
    let b1 = ps.add("b1", init::zeros(&[4]));
    let g1 = ps.add("g1", init::full(&[4], 1.0));
    let be1 = ps.add("be1", init::zeros(&[4]));
    let wf = ps.add("wf", init::he_normal(&[4 * 2 * 2, 3], 16, &mut rng));
    let bf = ps.add("bf", init::zeros(&[3]));
    fd_check(&mut ps, |tape| {
        let xt = tape.param(x);
        let w1t = tape.param(w1);
        let b1t = tape.param(b1);
        let y = tape.conv2d(xt, w1t, Some(b1t), 1, 1);
        let g1t = tape.param(g1);
        let be1t = tape.param(be1);
        let y = tape.group_norm(y, g1t, be1t, 2);
        let y = tape.silu(y);
        let pooled = tape.roi_align(y, vec![[0.0, 0.0, 8.0, 8.0], [2.0, 2.0, 7.0, 7.0]], 1.0, 2);
        let wft = tape.param(wf);
        let bft = tape.param(bf);
        let logits = tape.linear(pooled, wft, bft);
        let ls = tape.log_softmax_rows(logits);
        let nll = tape.gather_row_cols(ls, vec![(0, 2), (1, 0)]);
        let nll_mean = tape.mean(nll);
        let cls = tape.scale(nll_mean, -1.0);
        let box_term = tape.huber(pooled, 1.0);
        let box_mean = tape.mean(box_term);
        tape.add(cls, box_mean)
    });
}
