use super::*;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

fn set_param(ps: &mut ParamSet, name: &str, data: Vec<f64>) {
    let p = ps
        .iter_mut()
        .find(|p| p.name == name)
        .unwrap_or_else(|| panic!("no param {name}"));
    assert_eq!(p.value.numel(), data.len(), "{name}");
    p.value.data_mut().copy_from_slice(&data);
}

fn identity_block(ps: &mut ParamSet, name: &str, d: usize) {
    let mut eye = vec![0.0; d * d];
    for i in 0..d {
        eye[i * d + i] = 1.0;
    }
    for suffix in ["wq", "wk", "wv"] {
        set_param(ps, &format!("{name}.{suffix}"), eye.clone());
    }
}

#[test]
fn cm_attention_single_key_copies_the_value_row() {
    let mut ps = ParamSet::new();
    let block = CmBlockParams::init(&mut ps, "cm", 3, &mut rng());
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let x_gamma = tape.input(Tensor::matrix(4, 3, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
    let x_eta = tape.input(Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
    let z = cm_attention(&mut tape, &bind, &block, x_gamma, x_eta).unwrap();

    // with one key every softmax row is [1], so each output row equals the
    // single value row V_η = x_η·W_v
    let mut manual = Tape::new();
    let mbind = ps.bind(&mut manual);
    let me = manual.input(Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
    let v = manual.matmul(me, mbind.id(block.wv)).unwrap();
    let vrow = manual.value(v).data().to_vec();

    assert_eq!(tape.value(z).shape(), &[4, 3]);
    for row in tape.value(z).data().chunks_exact(3) {
        for (a, b) in row.iter().zip(&vrow) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn cm_attention_rows_stay_in_value_envelope() {
    // with identity V projection the outputs are convex combinations of the
    // context rows
    let mut ps = ParamSet::new();
    let block = CmBlockParams::init(&mut ps, "cm", 2, &mut rng());
    identity_block(&mut ps, "cm", 2);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let x_gamma = tape.input(Tensor::matrix(3, 2, vec![0.1, 0.9, -2.0, 0.3, 5.0, -5.0]).unwrap());
    let eta_rows = vec![1.0, -2.0, 3.0, 0.5, -1.0, 0.25];
    let x_eta = tape.input(Tensor::matrix(3, 2, eta_rows.clone()).unwrap());
    let z = cm_attention(&mut tape, &bind, &block, x_gamma, x_eta).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = (0..3).map(|i| eta_rows[i * 2 + j]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for row in tape.value(z).data().chunks_exact(2) {
            assert!(row[j] >= lo - 1e-12 && row[j] <= hi + 1e-12);
        }
    }
}

#[test]
fn cm_attention_two_by_two_hand_example() {
    // identity projections, X_γ = I₂, X_η = [[1,2],[3,4]]:
    // scores = X_ηᵀ/√2 read row-wise; softmax and the weighted sum are
    // recomputed here with plain f64 arithmetic
    let mut ps = ParamSet::new();
    let block = CmBlockParams::init(&mut ps, "cm", 2, &mut rng());
    identity_block(&mut ps, "cm", 2);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let x_gamma = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let x_eta = tape.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let z = cm_attention(&mut tape, &bind, &block, x_gamma, x_eta).unwrap();

    let inv = 1.0 / 2.0f64.sqrt();
    let eta = [[1.0, 2.0], [3.0, 4.0]];
    let mut expect = [[0.0; 2]; 2];
    for (qi, qrow) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
        let s0 = inv * (qrow[0] * eta[0][0] + qrow[1] * eta[0][1]);
        let s1 = inv * (qrow[0] * eta[1][0] + qrow[1] * eta[1][1]);
        let m = s0.max(s1);
        let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
        let w0 = e0 / (e0 + e1);
        let w1 = e1 / (e0 + e1);
        for j in 0..2 {
            expect[qi][j] = w0 * eta[0][j] + w1 * eta[1][j];
        }
    }
    let got = tape.value(z).data();
    for i in 0..2 {
        for j in 0..2 {
            assert!((got[i * 2 + j] - expect[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn cm_stack_zero_layers_is_identity() {
    let mut ps = ParamSet::new();
    let stack = CmStackParams::init(&mut ps, "stack", 3, 0, &mut rng());
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let data: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
    let x_gamma = tape.input(Tensor::matrix(2, 3, data.clone()).unwrap());
    let x_eta = tape.input(Tensor::matrix(4, 3, vec![0.5; 12]).unwrap());
    let out = cm_stack(&mut tape, &bind, &stack, x_gamma, x_eta).unwrap();
    assert_eq!(out, x_gamma);
    assert_eq!(tape.value(out).data(), data.as_slice());
}

#[test]
fn cm_stack_one_layer_matches_manual_composition() {
    let mut ps = ParamSet::new();
    let stack = CmStackParams::init(&mut ps, "stack", 4, 1, &mut rng());
    let x_gamma_t = Tensor::matrix(2, 4, (0..8).map(|i| (i as f64 - 3.0) * 0.4).collect()).unwrap();
    let x_eta_t = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 - 6.0) * 0.25).collect()).unwrap();

    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let xg = tape.input(x_gamma_t.clone());
    let xe = tape.input(x_eta_t.clone());
    let out = cm_stack(&mut tape, &bind, &stack, xg, xe).unwrap();

    let block = &stack.blocks[0];
    let mut manual = Tape::new();
    let mbind = ps.bind(&mut manual);
    let xg2 = manual.input(x_gamma_t);
    let xe2 = manual.input(x_eta_t);
    let qn = manual
        .layer_norm(xg2, mbind.id(block.ln_q.0), mbind.id(block.ln_q.1), LN_EPS)
        .unwrap();
    let cn = manual
        .layer_norm(xe2, mbind.id(block.ln_ctx.0), mbind.id(block.ln_ctx.1), LN_EPS)
        .unwrap();
    let t = cm_attention(&mut manual, &mbind, block, qn, cn).unwrap();
    let u = manual.add(t, xg2).unwrap();
    let lin = manual.matmul(u, mbind.id(block.linear_w)).unwrap();
    let lin = manual.add_bias(lin, mbind.id(block.linear_b)).unwrap();
    let expect = manual.gelu(lin).unwrap();

    assert_eq!(tape.value(out).data(), manual.value(expect).data());
}

#[test]
fn cm_stack_preserves_shape_for_any_depth() {
    for depth in [0usize, 1, 3] {
        let mut ps = ParamSet::new();
        let stack = CmStackParams::init(&mut ps, "stack", 4, depth, &mut rng());
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let xg = tape.input(Tensor::matrix(5, 4, vec![0.2; 20]).unwrap());
        let xe = tape.input(Tensor::matrix(3, 4, vec![-0.1; 12]).unwrap());
        let out = cm_stack(&mut tape, &bind, &stack, xg, xe).unwrap();
        assert_eq!(tape.value(out).shape(), &[5, 4]);
    }
}

fn demo_inputs(tape: &mut Tape) -> (TensorId, TensorId, TensorId, TensorId) {
    let k_p = tape.input(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64) * 0.1 - 0.5).collect()).unwrap());
    let k_r = tape.input(Tensor::matrix(2, 4, (0..8).map(|i| 0.3 - (i as f64) * 0.07).collect()).unwrap());
    let a_p = tape.input(Tensor::matrix(2, 4, (0..8).map(|i| ((i * 3) % 5) as f64 * 0.2).collect()).unwrap());
    let a_r = tape.input(Tensor::matrix(2, 4, (0..8).map(|i| ((i * 7) % 4) as f64 * -0.15).collect()).unwrap());
    (k_p, k_r, a_p, a_r)
}

#[test]
fn interact_all_with_zero_depth_returns_raw_inputs() {
    let mut ps = ParamSet::new();
    let params = InteractionParams::init(&mut ps, "cm", 4, 0, &mut rng());
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let (k_p, k_r, a_p, a_r) = demo_inputs(&mut tape);
    let bundle = interact_all(&mut tape, &bind, &params, k_p, k_r, a_p, a_r).unwrap();
    assert_eq!(bundle.h_p, k_p);
    assert_eq!(bundle.h_r, k_r);
    assert_eq!(bundle.v_p, a_p);
    assert_eq!(bundle.v_r, a_r);
}

#[test]
fn interact_all_shapes_follow_inputs() {
    let mut ps = ParamSet::new();
    let params = InteractionParams::init(&mut ps, "cm", 4, 2, &mut rng());
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let (k_p, k_r, a_p, a_r) = demo_inputs(&mut tape);
    let bundle = interact_all(&mut tape, &bind, &params, k_p, k_r, a_p, a_r).unwrap();
    assert_eq!(tape.value(bundle.h_p).shape(), &[3, 4]);
    assert_eq!(tape.value(bundle.h_r).shape(), &[2, 4]);
    assert_eq!(tape.value(bundle.v_p).shape(), &[2, 4]);
    assert_eq!(tape.value(bundle.v_r).shape(), &[2, 4]);
}

#[test]
fn permuting_context_rows_leaves_queries_invariant() {
    // softmax(Q·Kᵀ)·V is invariant to a joint permutation of key/value rows,
    // so shuffling A^r's rows must not change H^p
    let mut ps = ParamSet::new();
    let params = InteractionParams::init(&mut ps, "cm", 4, 1, &mut rng());

    let run = |a_r_rows: [usize; 2]| {
        let base: Vec<Vec<f64>> = vec![
            vec![0.4, -0.3, 0.8, 0.1],
            vec![-0.6, 0.9, 0.05, -0.2],
        ];
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let (k_p, k_r, a_p, _) = demo_inputs(&mut tape);
        let mut data = Vec::new();
        for &i in &a_r_rows {
            data.extend_from_slice(&base[i]);
        }
        let a_r = tape.input(Tensor::matrix(2, 4, data).unwrap());
        let bundle = interact_all(&mut tape, &bind, &params, k_p, k_r, a_p, a_r).unwrap();
        tape.value(bundle.h_p).data().to_vec()
    };

    let forward = run([0, 1]);
    let swapped = run([1, 0]);
    for (a, b) in forward.iter().zip(&swapped) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn fusion_fixture(conv_width: usize) -> (ParamSet, FusionParams) {
    let mut ps = ParamSet::new();
    let params = FusionParams::init(&mut ps, "fusion", 4, 2, conv_width, true, &mut rng());
    (ps, params)
}

fn bundle_on(tape: &mut Tape, rows: [usize; 4], width: usize, fill: f64) -> BundleIds {
    let mk = |tape: &mut Tape, n: usize, salt: f64| {
        let data = (0..n * width)
            .map(|i| fill * ((i as f64 * 0.37 + salt).sin()))
            .collect();
        tape.input(Tensor::matrix(n, width, data).unwrap())
    };
    BundleIds {
        h_p: mk(tape, rows[0], 0.0),
        v_p: mk(tape, rows[1], 1.0),
        h_r: mk(tape, rows[2], 2.0),
        v_r: mk(tape, rows[3], 3.0),
    }
}

#[test]
fn intra_modal_output_width_is_d() {
    let (ps, params) = fusion_fixture(3);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let bundle = bundle_on(&mut tape, [3, 2, 4, 1], 4, 1.0);
    let z = intra_modal_fuse(&mut tape, &bind, &params, &bundle).unwrap();
    assert_eq!(tape.value(z).shape(), &[4]);
}

#[test]
fn intra_modal_zero_bundle_gives_zero_vector() {
    // zero rows stay zero through attention (zero-init biases and β), the
    // conv bias starts at zero, so the pooled vector is exactly zero
    let (ps, params) = fusion_fixture(3);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let bundle = bundle_on(&mut tape, [3, 2, 4, 1], 4, 0.0);
    let z = intra_modal_fuse(&mut tape, &bind, &params, &bundle).unwrap();
    assert_eq!(tape.value(z).data(), &[0.0; 4]);
}

#[test]
fn intra_modal_duplicated_rows_keep_max_pool_fixed_at_width_one() {
    let (ps, params) = fusion_fixture(1);

    let run = |dup: bool| {
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let mk = |tape: &mut Tape, rows: &[[f64; 4]]| {
            let mut data = Vec::new();
            for r in rows {
                data.extend_from_slice(r);
                if dup {
                    data.extend_from_slice(r);
                }
            }
            let n = if dup { rows.len() * 2 } else { rows.len() };
            tape.input(Tensor::matrix(n, 4, data).unwrap())
        };
        let bundle = BundleIds {
            h_p: mk(&mut tape, &[[0.4, -0.1, 0.2, 0.9]]),
            h_r: mk(&mut tape, &[[0.7, 0.3, -0.5, 0.0]]),
            v_p: mk(&mut tape, &[[-0.2, 0.8, 0.1, 0.6]]),
            v_r: mk(&mut tape, &[[0.05, -0.9, 0.45, 0.3]]),
        };
        let z = intra_modal_fuse(&mut tape, &bind, &params, &bundle).unwrap();
        tape.value(z).data().to_vec()
    };

    let plain = run(false);
    let doubled = run(true);
    for (a, b) in plain.iter().zip(&doubled) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn inter_modal_width_and_compositional_halves() {
    let (ps, params) = fusion_fixture(3);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let bundle = bundle_on(&mut tape, [1, 1, 1, 1], 4, 1.0);
    let z = inter_modal_fuse(&mut tape, &bind, &params, &bundle).unwrap();
    assert_eq!(tape.value(z).shape(), &[8]);

    // each half equals its own attended mean, composed separately
    let first = attended_mean(&mut tape, &bind, &params.attn_inter_pt_ri, bundle.h_p, bundle.v_r).unwrap();
    let second = attended_mean(&mut tape, &bind, &params.attn_inter_pi_rt, bundle.v_p, bundle.h_r).unwrap();
    let z_data = tape.value(z).data().to_vec();
    assert_eq!(&z_data[0..4], tape.value(first).data());
    assert_eq!(&z_data[4..8], tape.value(second).data());
}

#[test]
fn intra_review_width_and_compositional_halves() {
    let (ps, params) = fusion_fixture(3);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let bundle = bundle_on(&mut tape, [2, 1, 2, 1], 4, 0.8);
    let z = intra_review_fuse(&mut tape, &bind, &params, &bundle).unwrap();
    assert_eq!(tape.value(z).shape(), &[8]);

    let product = attended_mean(&mut tape, &bind, &params.attn_review_product, bundle.h_p, bundle.v_p).unwrap();
    let review = attended_mean(&mut tape, &bind, &params.attn_review_review, bundle.h_r, bundle.v_r).unwrap();
    let z_data = tape.value(z).data().to_vec();
    assert_eq!(&z_data[0..4], tape.value(product).data());
    assert_eq!(&z_data[4..8], tape.value(review).data());
}

#[test]
fn score_with_zero_final_weights_returns_bias() {
    let (mut ps, params) = fusion_fixture(3);
    set_param(&mut ps, "fusion.final_w", vec![0.0; 20]);
    set_param(&mut ps, "fusion.final_b", vec![1.5]);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let bundle = bundle_on(&mut tape, [3, 2, 3, 2], 4, 1.3);
    let s = score(&mut tape, &bind, &params, &bundle).unwrap();
    assert_eq!(tape.scalar(s), 1.5);
}

#[test]
fn score_matches_manual_concat_dot() {
    let (ps, params) = fusion_fixture(3);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let bundle = bundle_on(&mut tape, [3, 2, 3, 2], 4, 1.1);
    let s = score(&mut tape, &bind, &params, &bundle).unwrap();

    let intra_m = intra_modal_fuse(&mut tape, &bind, &params, &bundle).unwrap();
    let inter_m = inter_modal_fuse(&mut tape, &bind, &params, &bundle).unwrap();
    let intra_r = intra_review_fuse(&mut tape, &bind, &params, &bundle).unwrap();
    let mut z = Vec::new();
    z.extend_from_slice(tape.value(intra_m).data());
    z.extend_from_slice(tape.value(inter_m).data());
    z.extend_from_slice(tape.value(intra_r).data());
    assert_eq!(z.len(), 20);
    let w = ps.iter().find(|p| p.name == "fusion.final_w").unwrap();
    let b = ps.iter().find(|p| p.name == "fusion.final_b").unwrap();
    let manual: f64 = z.iter().zip(w.value.data()).map(|(a, b)| a * b).sum::<f64>() + b.value.data()[0];
    assert!((tape.scalar(s) - manual).abs() < 1e-12);
}

#[test]
fn every_attention_row_sums_to_one_through_full_scoring() {
    let mut ps = ParamSet::new();
    let inter = InteractionParams::init(&mut ps, "cm", 4, 2, &mut rng());
    let fusion = FusionParams::init(&mut ps, "fusion", 4, 2, 3, true, &mut rng());
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let (k_p, k_r, a_p, a_r) = demo_inputs(&mut tape);
    let bundle = interact_all(&mut tape, &bind, &inter, k_p, k_r, a_p, a_r).unwrap();
    score(&mut tape, &bind, &fusion, &bundle).unwrap();

    let nodes = tape.softmax_nodes();
    assert!(!nodes.is_empty());
    for (id, axis) in nodes {
        assert_eq!(axis, 1);
        let t = tape.value(id);
        for row in t.data().chunks_exact(t.cols()) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
