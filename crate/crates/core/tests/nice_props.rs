//! Flow properties: exact invertibility, unit Jacobian determinant, and
//! partition purity, over random models and dimensions.

mod common;

use anicemc::nice::{NiceModel, Partition};
use anicemc::Tensor;
use common::{determinant, numeric_jacobian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng) -> NiceModel {
    let x_dim = rng.gen_range(1..=3);
    let v_dim = rng.gen_range(1..=3);
    let hidden = rng.gen_range(4..=24);
    NiceModel::energy_arch(x_dim, v_dim, hidden, rng)
}

fn joint_map(model: &NiceModel, joint: &[f64]) -> Vec<f64> {
    let x = Tensor::matrix(1, model.x_dim, joint[..model.x_dim].to_vec());
    let v = Tensor::matrix(1, model.v_dim, joint[model.x_dim..].to_vec());
    let (x2, v2) = model.forward(&x, &v).unwrap();
    let mut out = x2.data().to_vec();
    out.extend_from_slice(v2.data());
    out
}

#[test]
fn volume_preservation_50_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..50 {
        let model = random_model(&mut rng);
        let n = model.x_dim + model.v_dim;
        let joint: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let jac = numeric_jacobian(&joint, 1e-5, |p| joint_map(&model, p));
        let det = determinant(jac);
        assert!(
            (det - 1.0).abs() <= 1e-4,
            "trial {trial}: |det J - 1| = {} (dims {}+{})",
            (det - 1.0).abs(),
            model.x_dim,
            model.v_dim
        );
    }
}

#[test]
fn bijectivity_both_compositions_50_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let model = random_model(&mut rng);
        let batch = 20;
        let x = Tensor::matrix(
            batch,
            model.x_dim,
            (0..batch * model.x_dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        );
        let v = Tensor::matrix(
            batch,
            model.v_dim,
            (0..batch * model.v_dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        );
        let (xf, vf) = model.forward(&x, &v).unwrap();
        let (xr, vr) = model.inverse(&xf, &vf).unwrap();
        let (xi, vi) = model.inverse(&x, &v).unwrap();
        let (xfi, vfi) = model.forward(&xi, &vi).unwrap();
        for (got, want) in [(&xr, &x), (&vr, &v), (&xfi, &x), (&vfi, &v)] {
            let worst = got
                .data()
                .iter()
                .zip(want.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-9, "roundtrip error {worst}");
        }
    }
}

#[test]
fn partition_purity_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..20 {
        let model = random_model(&mut rng);
        let x = Tensor::matrix(
            5,
            model.x_dim,
            (0..5 * model.x_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        );
        let v = Tensor::matrix(
            5,
            model.v_dim,
            (0..5 * model.v_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        );
        let (mut cur_x, mut cur_v) = (x, v);
        for layer in &model.layers {
            let (nx, nv) = layer.forward(&cur_x, &cur_v).unwrap();
            match layer.update {
                Partition::X => assert_eq!(nv.data(), cur_v.data(), "x-layer touched v"),
                Partition::V => assert_eq!(nx.data(), cur_x.data(), "v-layer touched x"),
            }
            cur_x = nx;
            cur_v = nv;
        }
    }
}
