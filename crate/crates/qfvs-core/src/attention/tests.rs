//! Attention tests against an independent dense oracle plus the masking,
//! normalisation and permutation-equivariance properties.

use super::*;
use crate::gradcheck::{fd_gradient_named, norm_rel_err, DEFAULT_H};
use crate::layers::VisitParams;

/// Plain-loop reference attention: no tape, masked keys excluded from the
/// softmax entirely rather than biased.
fn oracle_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    valid: &[bool],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = q[0].len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = vec![vec![0.0; k.len()]; q.len()];
    let mut out = vec![vec![0.0; v[0].len()]; q.len()];
    for (i, qi) in q.iter().enumerate() {
        let logits: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let mx = logits
            .iter()
            .zip(valid)
            .filter(|(_, &ok)| ok)
            .map(|(&l, _)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (j, &l) in logits.iter().enumerate() {
            if valid[j] {
                denom += (l - mx).exp();
            }
        }
        for (j, &l) in logits.iter().enumerate() {
            if valid[j] {
                weights[i][j] = (l - mx).exp() / denom;
            }
        }
        for (j, vj) in v.iter().enumerate() {
            for (c, &vv) in vj.iter().enumerate() {
                out[i][c] += weights[i][j] * vv;
            }
        }
    }
    (out, weights)
}

fn rand_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect()
}

fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

#[test]
fn matches_dense_oracle_without_mask() {
    let mut rng = SplitMix64::new(100);
    let (lq, lk, d, dv) = (4, 6, 8, 5);
    let qm = rand_matrix(&mut rng, lq, d);
    let km = rand_matrix(&mut rng, lk, d);
    let vm = rand_matrix(&mut rng, lk, dv);
    let mut tape = Tape::new();
    let q = tape.leaf(flatten(&qm), &[lq, d]).unwrap();
    let k = tape.leaf(flatten(&km), &[lk, d]).unwrap();
    let v = tape.leaf(flatten(&vm), &[lk, dv]).unwrap();
    let att = scaled_dot_attention(&mut tape, q, k, v, None).unwrap();
    let (oracle_out, oracle_w) = oracle_attention(&qm, &km, &vm, &vec![true; lk]);
    for (got, want) in tape.value(att.output).iter().zip(flatten(&oracle_out)) {
        assert!((got - want).abs() < 1e-12);
    }
    for (got, want) in tape.value(att.weights).iter().zip(flatten(&oracle_w)) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn masked_keys_get_exactly_zero_and_rows_sum_to_one() {
    let mut rng = SplitMix64::new(101);
    let (lq, lk, d) = (3, 7, 6);
    let qm = rand_matrix(&mut rng, lq, d);
    let km = rand_matrix(&mut rng, lk, d);
    let vm = rand_matrix(&mut rng, lk, 4);
    let valid = vec![true, false, true, true, false, false, true];
    let mut tape = Tape::new();
    let q = tape.leaf(flatten(&qm), &[lq, d]).unwrap();
    let k = tape.leaf(flatten(&km), &[lk, d]).unwrap();
    let v = tape.leaf(flatten(&vm), &[lk, 4]).unwrap();
    let mask = KeyMask::flat(&mut tape, &valid, lq).unwrap();
    let att = scaled_dot_attention(&mut tape, q, k, v, Some(&mask)).unwrap();
    let w = tape.value(att.weights);
    for i in 0..lq {
        let mut sum = 0.0;
        for (j, &ok) in valid.iter().enumerate() {
            let wij = w[i * lk + j];
            if ok {
                sum += wij;
            } else {
                assert_eq!(wij, 0.0, "masked key {j} leaked weight {wij}");
            }
        }
        assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
    }
    let (oracle_out, oracle_w) = oracle_attention(&qm, &km, &vm, &valid);
    for (got, want) in tape.value(att.weights).iter().zip(flatten(&oracle_w)) {
        assert!((got - want).abs() < 1e-12);
    }
    for (got, want) in tape.value(att.output).iter().zip(flatten(&oracle_out)) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn equal_keys_give_exactly_uniform_weights() {
    let mut tape = Tape::new();
    let q = tape.leaf(vec![0.3, -0.7], &[1, 2]).unwrap();
    let k = tape.leaf(vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5], &[3, 2]).unwrap();
    let v = tape.leaf(vec![1.0, 2.0, 3.0], &[3, 1]).unwrap();
    let att = scaled_dot_attention(&mut tape, q, k, v, None).unwrap();
    for &w in tape.value(att.weights) {
        assert_eq!(w, 1.0 / 3.0);
    }
}

#[test]
fn fully_masked_group_is_rejected() {
    let mut tape = Tape::new();
    let err = KeyMask::per_group(&mut tape, &[vec![true, true], vec![false, false]], 2);
    assert!(matches!(err, Err(Error::Contract(_))));
    let err = KeyMask::flat(&mut tape, &[false, false, false], 1);
    assert!(err.is_err());
}

fn small_params(seed: u64, query_in: usize, key_in: usize, dim: usize) -> AttentionParams {
    let mut rng = SplitMix64::new(seed);
    AttentionParams::new("att", query_in, key_in, dim, &mut rng)
}

#[test]
fn local_attention_is_batched_per_segment() {
    let mut rng = SplitMix64::new(102);
    let (s, r, c, dim) = (3, 4, 5, 6);
    let params = small_params(7, c, c, dim);
    let data = rand_matrix(&mut rng, s * r, c);
    let mask = ReducedMask::all_valid(s, r);
    let mut tape = Tape::new();
    let c_v = tape.leaf(flatten(&data), &[s, r, c]).unwrap();
    let att = local_self_attention(&mut tape, &params, c_v, &mask).unwrap();
    assert_eq!(tape.shape(att.output), &[s, r, dim]);
    assert_eq!(tape.shape(att.weights), &[s, r, r]);

    // Each segment independently matches a single-segment run.
    for seg in 0..s {
        let seg_rows = data[seg * r..(seg + 1) * r].to_vec();
        let mut t2 = Tape::new();
        let cv2 = t2.leaf(flatten(&seg_rows), &[1, r, c]).unwrap();
        let att2 =
            local_self_attention(&mut t2, &params, cv2, &ReducedMask::all_valid(1, r)).unwrap();
        assert_eq!(
            &tape.value(att.output)[seg * r * dim..(seg + 1) * r * dim],
            t2.value(att2.output)
        );
    }
}

#[test]
fn local_attention_permutation_equivariance_is_bitwise() {
    let mut rng = SplitMix64::new(103);
    let (r, c, dim) = (7, 5, 4);
    let params = small_params(8, c, c, dim);
    let rows = rand_matrix(&mut rng, r, c);
    let perm = [3usize, 0, 6, 1, 5, 2, 4];

    let run = |rows: &[Vec<f64>], valid: &[bool]| -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let c_v = tape.leaf(flatten(rows), &[1, r, c]).unwrap();
        let mask = ReducedMask::from_slots(vec![valid.to_vec()]).unwrap();
        let att = local_self_attention(&mut tape, &params, c_v, &mask).unwrap();
        (
            tape.value(att.output).to_vec(),
            tape.value(att.weights).to_vec(),
        )
    };

    for valid in [
        vec![true; r],
        vec![true, true, false, true, false, true, true],
    ] {
        let (base_out, base_w) = run(&rows, &valid);
        let perm_rows: Vec<Vec<f64>> = perm.iter().map(|&p| rows[p].clone()).collect();
        let perm_valid: Vec<bool> = perm.iter().map(|&p| valid[p]).collect();
        let (perm_out, perm_w) = run(&perm_rows, &perm_valid);
        for (i, &p) in perm.iter().enumerate() {
            for ch in 0..dim {
                assert_eq!(
                    perm_out[i * dim + ch].to_bits(),
                    base_out[p * dim + ch].to_bits(),
                    "output row {i} (orig {p}) differs"
                );
            }
            for (j, &pj) in perm.iter().enumerate() {
                assert_eq!(
                    perm_w[i * r + j].to_bits(),
                    base_w[p * r + pj].to_bits(),
                    "weight ({i},{j}) differs"
                );
            }
        }
    }
}

#[test]
fn query_attention_aggregates_each_segment_to_its_attended_value() {
    let mut rng = SplitMix64::new(104);
    let (s, r, c, qdim, dim) = (3, 5, 4, 6, 4);
    let params = small_params(9, qdim, c, dim);
    let data = rand_matrix(&mut rng, s * r, c);
    let query = rand_matrix(&mut rng, 1, qdim);
    let mask = ReducedMask::from_slots(vec![
        vec![true; r],
        vec![true, true, true, false, false],
        vec![true, false, true, false, true],
    ])
    .unwrap();

    let mut tape = Tape::new();
    let c_v = tape.leaf(flatten(&data), &[s, r, c]).unwrap();
    let h_q = tape.leaf(flatten(&query), &[1, qdim]).unwrap();
    let out = query_guided_segment_attention(&mut tape, &params, c_v, h_q, &mask).unwrap();
    assert_eq!(tape.shape(out.c_q), &[s, r, dim]);
    assert_eq!(tape.shape(out.c_sq), &[s, dim]);
    assert_eq!(tape.shape(out.weights), &[s, 1, r]);

    // Independent oracle per segment: project with the layer weights, run
    // dense attention with the query as the only attention-query.
    let project = |rows: &[Vec<f64>], w: &crate::layers::ParamTensor| -> Vec<Vec<f64>> {
        let (ins, outs) = (w.shape[0], w.shape[1]);
        rows.iter()
            .map(|row| {
                (0..outs)
                    .map(|o| (0..ins).map(|i| row[i] * w.data[i * outs + o]).sum())
                    .collect()
            })
            .collect()
    };
    let q_proj = project(&query, &params.w_q.w);
    for seg in 0..s {
        let seg_rows = data[seg * r..(seg + 1) * r].to_vec();
        let k_proj = project(&seg_rows, &params.w_k.w);
        let v_proj = project(&seg_rows, &params.w_v.w);
        let (oracle_out, oracle_w) =
            oracle_attention(&q_proj, &k_proj, &v_proj, &mask.slot_valid[seg]);
        let got_sq = &tape.value(out.c_sq)[seg * dim..(seg + 1) * dim];
        for (got, want) in got_sq.iter().zip(&oracle_out[0]) {
            assert!((got - want).abs() < 1e-10, "c_sq mismatch: {got} vs {want}");
        }
        let got_w = &tape.value(out.weights)[seg * r..(seg + 1) * r];
        for (got, want) in got_w.iter().zip(&oracle_w[0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // Every slot of c_q carries the shared attended value.
        for slot in 0..r {
            let got_cq = &tape.value(out.c_q)[(seg * r + slot) * dim..(seg * r + slot + 1) * dim];
            let got_att: Vec<f64> = got_cq.to_vec();
            for (a, b) in got_att.iter().zip(&oracle_out[0]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn global_attention_shapes_and_oracle() {
    let mut rng = SplitMix64::new(105);
    let (s, r, c, d_sq, dim) = (4, 3, 5, 6, 4);
    let params = small_params(10, c, d_sq, dim);
    let data = rand_matrix(&mut rng, s * r, c);
    let seg_feats = rand_matrix(&mut rng, s, d_sq);
    let mask = ReducedMask::all_valid(s, r);

    let mut tape = Tape::new();
    let c_v = tape.leaf(flatten(&data), &[s, r, c]).unwrap();
    let c_sq = tape.leaf(flatten(&seg_feats), &[s, d_sq]).unwrap();
    let att = global_attention(&mut tape, &params, c_v, c_sq, &mask).unwrap();
    assert_eq!(tape.shape(att.output), &[s, r, dim]);
    assert_eq!(tape.shape(att.weights), &[s * r, s]);

    let project = |rows: &[Vec<f64>], w: &crate::layers::ParamTensor| -> Vec<Vec<f64>> {
        let (ins, outs) = (w.shape[0], w.shape[1]);
        rows.iter()
            .map(|row| {
                (0..outs)
                    .map(|o| (0..ins).map(|i| row[i] * w.data[i * outs + o]).sum())
                    .collect()
            })
            .collect()
    };
    let q_proj = project(&data, &params.w_q.w);
    let k_proj = project(&seg_feats, &params.w_k.w);
    let v_proj = project(&seg_feats, &params.w_v.w);
    let (oracle_out, oracle_w) = oracle_attention(&q_proj, &k_proj, &v_proj, &vec![true; s]);
    for (got, want) in tape.value(att.output).iter().zip(flatten(&oracle_out)) {
        assert!((got - want).abs() < 1e-10);
    }
    for (got, want) in tape.value(att.weights).iter().zip(flatten(&oracle_w)) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn global_attention_is_invariant_under_segment_permutation() {
    let mut rng = SplitMix64::new(106);
    let (s, r, c, d_sq, dim) = (4, 2, 3, 5, 4);
    let params = small_params(11, c, d_sq, dim);
    let data = rand_matrix(&mut rng, s * r, c);
    let seg_feats = rand_matrix(&mut rng, s, d_sq);
    let perm = [2usize, 0, 3, 1];

    let run = |rows: &[Vec<f64>], segs: &[Vec<f64>]| -> Vec<f64> {
        let mut tape = Tape::new();
        let c_v = tape.leaf(flatten(rows), &[s, r, c]).unwrap();
        let c_sq = tape.leaf(flatten(segs), &[s, d_sq]).unwrap();
        let att =
            global_attention(&mut tape, &params, c_v, c_sq, &ReducedMask::all_valid(s, r)).unwrap();
        tape.value(att.output).to_vec()
    };

    let base = run(&data, &seg_feats);
    let mut perm_rows = Vec::new();
    for &p in &perm {
        perm_rows.extend(data[p * r..(p + 1) * r].iter().cloned());
    }
    let perm_segs: Vec<Vec<f64>> = perm.iter().map(|&p| seg_feats[p].clone()).collect();
    let permuted = run(&perm_rows, &perm_segs);
    for (i, &p) in perm.iter().enumerate() {
        for slot in 0..r * dim {
            assert_eq!(
                permuted[i * r * dim + slot].to_bits(),
                base[p * r * dim + slot].to_bits()
            );
        }
    }
}

#[test]
fn concat_keeps_channel_order() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![1.0, 2.0], &[1, 1, 2]).unwrap();
    let b = tape.leaf(vec![3.0], &[1, 1, 1]).unwrap();
    let c = tape.leaf(vec![4.0, 5.0], &[1, 1, 2]).unwrap();
    let y = concat_features(&mut tape, a, b, c).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 5]);
    assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn gradients_flow_through_the_full_attention_stack() {
    let (s, r, c, qdim, dim) = (2, 3, 4, 5, 4);
    let mut rng = SplitMix64::new(107);
    let lsa = AttentionParams::new("lsa", c, c, dim, &mut rng);
    let qgsa = AttentionParams::new("qgsa", qdim, c, dim, &mut rng);
    let ga = AttentionParams::new("ga", c, dim, dim, &mut rng);
    let data: Vec<f64> = (0..s * r * c).map(|i| ((i * 37) as f64 * 0.02).sin()).collect();
    let query: Vec<f64> = (0..qdim).map(|i| ((i * 11) as f64 * 0.05).cos()).collect();
    let mask = ReducedMask::from_slots(vec![vec![true, true, false], vec![true; 3]]).unwrap();

    let mut collect = Vec::new();
    {
        let mut push = |name: &str, _: &[usize], data: &mut Vec<f64>, _: bool| {
            collect.push((name.to_string(), data.clone()));
        };
        let mut l = lsa.clone();
        let mut qg = qgsa.clone();
        let mut g = ga.clone();
        l.visit_params(&mut push);
        qg.visit_params(&mut push);
        g.visit_params(&mut push);
    }

    let run = |params: &[(String, Vec<f64>)]| -> (Tape, crate::tensor::TensorId) {
        let (mut lsa, mut qgsa, mut ga) = (lsa.clone(), qgsa.clone(), ga.clone());
        let mut i = 0;
        let mut set = |name: &str, _: &[usize], data: &mut Vec<f64>, _: bool| {
            assert_eq!(params[i].0, name);
            *data = params[i].1.clone();
            i += 1;
        };
        lsa.visit_params(&mut set);
        qgsa.visit_params(&mut set);
        ga.visit_params(&mut set);
        let mut tape = Tape::new();
        let c_v = tape.leaf(data.clone(), &[s, r, c]).unwrap();
        let h_q = tape.leaf(query.clone(), &[1, qdim]).unwrap();
        let local = local_self_attention(&mut tape, &lsa, c_v, &mask).unwrap();
        let seg = query_guided_segment_attention(&mut tape, &qgsa, c_v, h_q, &mask).unwrap();
        let glob = global_attention(&mut tape, &ga, c_v, seg.c_sq, &mask).unwrap();
        let cat = concat_features(&mut tape, c_v, local.output, glob.output).unwrap();
        let loss = tape.mean(cat, None).unwrap();
        (tape, loss)
    };

    let (mut tape, loss) = run(&collect);
    tape.backward(loss).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = tape
        .param_grads()
        .into_iter()
        .map(|(n, g)| (n, g.expect("missing grad").to_vec()))
        .collect();
    let loss_of = |p: &[(String, Vec<f64>)]| {
        let (tape, loss) = run(p);
        tape.value(loss)[0]
    };
    for (name, _) in &collect {
        let fd = fd_gradient_named(loss_of, &collect, name, DEFAULT_H);
        let a = &analytic.iter().find(|(n, _)| n == name).unwrap().1;
        let rel = norm_rel_err(a, &fd);
        assert!(rel < 1e-4, "attention stack gradient for {name}: rel {rel:.2e}");
    }
}
