mod common;

use common::{tiny_params, tiny_task};
use xfer_core::diagnostics::*;
use xfer_core::model::{encode, Batch, Labels, Parameters};
use xfer_core::numerics::{svd, Graph, RngState, Tensor};
use xfer_core::Error;

#[test]
fn representations_shape_and_determinism() {
    let (p, c) = tiny_params(0);
    let data = tiny_task(60, 1);
    let a = collect_representations(&p, &c, &data, 2, 40, 7).unwrap();
    assert_eq!(a.data.shape(), &[40, 16]);
    assert_eq!(a, collect_representations(&p, &c, &data, 2, 40, 7).unwrap());
    let (q, _) = tiny_params(1);
    let b = collect_representations(&q, &c, &data, 2, 40, 7).unwrap();
    assert_eq!(a.positions, b.positions);
    assert!(matches!(
        collect_representations(&p, &c, &data, 2, 16, 7),
        Err(Error::Sampling(_))
    ));
    assert!(matches!(
        collect_representations(&p, &c, &data, 3, 40, 7),
        Err(Error::Index(_))
    ));
    assert!(matches!(
        collect_representations(&p, &c, &data, 0, 40, 7),
        Err(Error::Index(_))
    ));
}

#[test]
fn representation_rows_match_a_direct_forward() {
    let (p, c) = tiny_params(2);
    let data = tiny_task(10, 3);
    let m = collect_representations(&p, &c, &data, 1, 20, 0).unwrap();
    for (row, &(i, pos)) in m.positions.iter().enumerate() {
        let b = Batch::from_sequences(&[&data.examples[i].ids], Labels::None).unwrap();
        let out =
            xfer_core::model::forward(&p, &c, &b, xfer_core::model::Mode::Mlm, false).unwrap();
        for j in 0..16 {
            assert!((out.hidden[1].get2(pos, j) - m.data.get2(row, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn pwcca_on_model_representations() {
    let (p, c) = tiny_params(0);
    let data = tiny_task(60, 1);
    let a = collect_representations(&p, &c, &data, 2, 100, 3).unwrap();
    let r = pwcca_both(&a.data, &a.data, DEFAULT_VARIANCE_KEPT).unwrap();
    assert!((r.ab - 1.0).abs() < 1e-6 && (r.ba - 1.0).abs() < 1e-6);
    let (q, _) = tiny_params(5);
    let b = collect_representations(&q, &c, &data, 2, 100, 3).unwrap();
    let r = pwcca_both(&a.data, &b.data, DEFAULT_VARIANCE_KEPT).unwrap();
    assert!((0.0..=1.0).contains(&r.ab) && (0.0..=1.0).contains(&r.ba));
    let mut buf = Vec::new();
    write_pwcca_csv(&mut buf, &[(2, r)]).unwrap();
    assert!(String::from_utf8(buf)
        .unwrap()
        .starts_with("dir,layer,value\nab,2,"));
}

#[test]
fn attention_self_match_is_zero_and_symmetric() {
    let (p, c) = tiny_params(0);
    let (q, _) = tiny_params(1);
    let data = tiny_task(40, 2);
    let same = attention_match((&p, &c), (&p, &c), &data, 40).unwrap();
    assert_eq!(same.n_inputs, 40);
    for l in &same.layers {
        assert_eq!(l.mean_l1, 0.0);
    }
    let ab = attention_match((&p, &c), (&q, &c), &data, 40).unwrap();
    let ba = attention_match((&q, &c), (&p, &c), &data, 40).unwrap();
    for (x, y) in ab.layers.iter().zip(&ba.layers) {
        assert!((x.mean_l1 - y.mean_l1).abs() < 1e-12);
        assert!(x.mean_l1 <= x.unmatched_l1 + 1e-15);
        assert!(x.mean_l1 > 0.0);
        assert_eq!(x.assignment_counts.iter().flatten().sum::<usize>(), 40 * 4);
    }
    let mut buf = Vec::new();
    write_attention_csv(&mut buf, &ab).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
}

#[test]
fn attention_shape_mismatch() {
    let (p, c) = tiny_params(0);
    let c3 = xfer_core::model::ModelConfig {
        num_layers: 3,
        ..c.clone()
    };
    let p3 = xfer_core::model::init_params(&c3, &RngState::new(0)).unwrap();
    let data = tiny_task(4, 2);
    assert!(matches!(
        attention_match((&p, &c), (&p3, &c3), &data, 4),
        Err(Error::Compatibility(_))
    ));
}

fn encoder_output(
    p: &Parameters,
    c: &xfer_core::model::ModelConfig,
    ids: &[usize],
    x: &Tensor,
) -> Vec<f64> {
    let b = Batch::from_sequences(&[ids], Labels::None).unwrap();
    let mut g = Graph::new();
    let w = p.map(|_, t| g.constant(t));
    let xv = g.constant(x);
    let enc = encode(&mut g, &w, c, &b, None, Some(xv)).unwrap();
    g.value(*enc.hidden.last().unwrap()).data().to_vec()
}

#[test]
fn jacobian_matches_finite_differences() {
    let c = xfer_core::model::ModelConfig {
        num_layers: 2,
        hidden_dim: 8,
        num_heads: 2,
        ffn_dim: 16,
        vocab_size: 12,
        max_len: 8,
        ..Default::default()
    };
    let p = xfer_core::model::init_params(&c, &RngState::new(4)).unwrap();
    let ids = [2, 7, 9, 3];
    let j = jacobian(&p, &c, &ids).unwrap();
    let x0: Vec<f64> = ids
        .iter()
        .flat_map(|&t| p.globals.token_emb.row(t).to_vec())
        .collect();
    let n = 32;
    let eps = 1e-5;
    for col in 0..n {
        let mut plus = x0.clone();
        plus[col] += eps;
        let mut minus = x0.clone();
        minus[col] -= eps;
        let fp = encoder_output(&p, &c, &ids, &Tensor::new(vec![4, 8], plus).unwrap());
        let fm = encoder_output(&p, &c, &ids, &Tensor::new(vec![4, 8], minus).unwrap());
        for row in 0..n {
            let fd = (fp[row] - fm[row]) / (2.0 * eps);
            assert!(
                (fd - j.get2(row, col)).abs() < 1e-6 * (1.0 + fd.abs()),
                "({row},{col})"
            );
        }
    }
    let s = jacobian_singular_values(&p, &c, &ids).unwrap();
    assert_eq!(s.values.len(), 32);
    assert!(s.values.windows(2).all(|w| w[0] >= w[1]) && s.values.iter().all(|&v| v >= 0.0));
    assert_eq!(s.values, svd(&j).unwrap().s);
    assert_eq!(s.histogram(4).iter().map(|b| b.2).sum::<usize>(), 32);
}

#[test]
fn jacobian_budget() {
    let (p, c) = tiny_params(0);
    let ids = vec![5; 257];
    assert!(matches!(jacobian(&p, &c, &ids), Err(Error::Size(_))));
}

#[test]
fn duplicate_examples_have_unit_cosine() {
    let (p, c) = tiny_params(0);
    let mut data = tiny_task(2, 3);
    data.examples[1] = data.examples[0].clone();
    let s = gradient_confusion(&p, &c, &data, 5, 0).unwrap();
    assert_eq!(s.pairs.len(), 5);
    for pc in &s.pairs {
        assert!((pc.cosine - 1.0).abs() < 1e-6);
    }
}

#[test]
fn confusion_matches_recompute() {
    let (p, c) = tiny_params(1);
    let data = tiny_task(30, 4);
    let s = gradient_confusion(&p, &c, &data, 40, 9).unwrap();
    assert_eq!(s.pairs.len() + s.n_excluded, 40);
    for pc in &s.pairs {
        assert_ne!(pc.a, pc.b);
        let ga = example_gradient(&p, &c, &data.examples[pc.a]).unwrap();
        let gb = example_gradient(&p, &c, &data.examples[pc.b]).unwrap();
        let dot: f64 = ga.iter().zip(&gb).map(|(x, y)| x * y).sum();
        let na: f64 = ga.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = gb.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (na * nb) - pc.cosine).abs() < 1e-10);
        assert!((-1.0..=1.0).contains(&pc.cosine));
    }
    assert!(
        s.min <= s.median && s.median <= s.pairs.iter().map(|p| p.cosine).fold(f64::MIN, f64::max)
    );
    let mut buf = Vec::new();
    write_confusion_csv(&mut buf, &s).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("pair_id,cosine\n0,"));
    assert!(text.contains("\nmean,"));
}

#[test]
fn confusion_needs_two_examples() {
    let (p, c) = tiny_params(0);
    let data = tiny_task(1, 3);
    assert!(matches!(
        gradient_confusion(&p, &c, &data, 1, 0),
        Err(Error::Input(_))
    ));
}

#[test]
fn perturbation_zero_sigma_and_determinism() {
    let (p, c) = tiny_params(0);
    let data = tiny_task(12, 5);
    let sig = [0.0, 1e-8, 1e-6, 1e-4, 1e-2];
    let r = perturbation_variance(&p, &c, &data, &sig, 5, 3, OutputSite::LastHiddenCls).unwrap();
    assert_eq!(r.rows[0].mean_dist, 0.0);
    assert_eq!(r.rows[0].std_dist, 0.0);
    for w in r.rows.windows(2) {
        assert!(w[1].mean_dist >= w[0].mean_dist);
    }
    assert_eq!(
        r,
        perturbation_variance(&p, &c, &data, &sig, 5, 3, OutputSite::LastHiddenCls).unwrap()
    );
    let other =
        perturbation_variance(&p, &c, &data, &sig, 5, 4, OutputSite::LastHiddenCls).unwrap();
    assert_ne!(r.rows[4].mean_dist, other.rows[4].mean_dist);
    let logits = perturbation_variance(&p, &c, &data, &[1e-3], 2, 3, OutputSite::Logits).unwrap();
    assert!(logits.rows[0].mean_dist > 0.0);
    assert!(perturbation_variance(&p, &c, &data, &[-1.0], 2, 3, OutputSite::Logits).is_err());
    let mut buf = Vec::new();
    write_perturb_csv(&mut buf, &r).unwrap();
    assert!(String::from_utf8(buf)
        .unwrap()
        .starts_with("sigma,mean_dist,std_dist,n_draws\n0,0,0,5\n"));
}
