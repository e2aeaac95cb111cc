use std::sync::Arc;

use clothlayer::geometry::{PointCloud, Vec3};
use clothlayer::layering::{Strategy, StrategyLabels};
use clothlayer::nn::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use clothlayer::nn::{multilayer_loss, BackboneKind, Graph, Inputs, Matrix, Model, ModelConfig, ParamStore, Var};
use clothlayer::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalarizes `y` with a fixed random projection, so every output entry
/// carries a distinct weight.
fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random(r, c, &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

fn check_op<F>(name: &str, shapes: &[(usize, usize)], build: F)
where
    F: Fn(&mut Graph<'_, f64>, &[Var], u64) -> Result<Var>,
{
    let mut total = GradCheckReport::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Matrix<f64>> = shapes.iter().map(|&(r, c)| random(r, c, &mut rng)).collect();
        let params = ParamStore::new();
        let opts = GradCheckOptions { entries_per_tensor: 64, ..Default::default() };
        let report = check_gradients(&params, &inputs, |g, v| build(g, v, seed), &opts, &mut rng).unwrap();
        total.merge(&report);
    }
    println!("{name}: checked {} kinks {} max rel {:.2e}", total.checked, total.kinks, total.max_rel_error);
    assert!(total.passes(TOL), "{name}: {total:?}");
    assert!(total.kinks * 10 < total.checked, "{name}: too many kinks {total:?}");
}

#[test]
fn matmul_gradients() {
    check_op("matmul", &[(5, 4), (4, 3)], |g, v, s| {
        let y = g.matmul(v[0], v[1])?;
        project(g, y, s)
    });
}

#[test]
fn elementwise_gradients() {
    check_op("add_bias", &[(5, 3), (1, 3)], |g, v, s| {
        let y = g.add_bias(v[0], v[1])?;
        project(g, y, s)
    });
    check_op("add/sub/mul/scale", &[(4, 3), (4, 3), (4, 3)], |g, v, s| {
        let a = g.add(v[0], v[1])?;
        let b = g.sub(a, v[2])?;
        let c = g.mul(b, v[0])?;
        let d = g.scale(c, 1.7);
        project(g, d, s)
    });
    check_op("relu", &[(6, 5)], |g, v, s| {
        let y = g.relu(v[0]);
        project(g, y, s)
    });
}

#[test]
fn indexing_gradients() {
    check_op("gather", &[(5, 3)], |g, v, s| {
        let idx: Arc<[u32]> = vec![4, 0, 0, 2, 4, 1, 3].into();
        let y = g.gather(v[0], idx)?;
        project(g, y, s)
    });
    check_op("concat", &[(4, 2), (4, 3), (4, 1)], |g, v, s| {
        let y = g.concat(v)?;
        project(g, y, s)
    });
    check_op("interpolate", &[(4, 3)], |g, v, s| {
        let idx: Arc<[u32]> = vec![0, 1, 2, 3, 3, 1].into();
        let w: Arc<[f64]> = vec![0.2, 0.5, 0.3, 0.6, 0.3, 0.1].into();
        let y = g.interpolate(v[0], idx, w, 3)?;
        project(g, y, s)
    });
}

#[test]
fn group_reduction_gradients() {
    check_op("max_groups", &[(12, 4)], |g, v, s| {
        let y = g.max_groups(v[0], 3)?;
        project(g, y, s)
    });
    check_op("softmax_groups", &[(12, 4)], |g, v, s| {
        let y = g.softmax_groups(v[0], 4)?;
        project(g, y, s)
    });
    check_op("sum_groups", &[(12, 4)], |g, v, s| {
        let y = g.sum_groups(v[0], 6)?;
        project(g, y, s)
    });
}

#[test]
fn normalization_and_loss_gradients() {
    check_op("layer_norm", &[(5, 6)], |g, v, s| {
        let y = g.layer_norm(v[0]);
        project(g, y, s)
    });
    check_op("mean_all", &[(3, 4)], |g, v, _| {
        let y = g.mul(v[0], v[0])?;
        Ok(g.mean_all(y))
    });
    check_op("cross_entropy", &[(7, 4)], |g, v, s| {
        let labels: Arc<[u8]> = (0..7).map(|i| ((i * 3 + s as usize) % 4) as u8).collect();
        g.cross_entropy(v[0], labels, None)
    });
    check_op("weighted cross_entropy", &[(7, 3)], |g, v, s| {
        let labels: Arc<[u8]> = (0..7).map(|i| ((i + s as usize) % 3) as u8).collect();
        let w: Arc<[f64]> = vec![0.5, 2.0, 1.25].into();
        g.cross_entropy(v[0], labels, Some(w))
    });
}

/// Small noisy sphere-like cloud with outward normals.
fn blob(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Vec::new();
    let mut nrm = Vec::new();
    for _ in 0..n {
        let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            .normalize();
        pos.push(Vec3::new(0.3 * d.x, 0.2 * d.y, 0.8 * d.z));
        nrm.push(d);
    }
    PointCloud::new(pos, nrm, None).unwrap()
}

fn random_labels(strategy: Strategy, n: usize, rng: &mut impl Rng) -> StrategyLabels {
    let layers = strategy.class_counts().iter().map(|&c| (0..n).map(|_| rng.random_range(0..c) as u8).collect()).collect();
    StrategyLabels::new(strategy, layers).unwrap()
}

/// Zero biases put some ReLU inputs exactly on the kink (for example the
/// self-neighbor row of a relative-position MLP), where the loss has no
/// derivative. Probing at random biases checks a generic point instead.
fn randomize_biases(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let ids: Vec<_> = model.params.ids().filter(|&id| model.params.name(id).ends_with(".b")).collect();
    for id in ids {
        for v in &mut model.params.value_mut(id).data {
            *v = rng.random_range(-0.1..0.1);
        }
    }
}

fn check_backbone(kind: BackboneKind) {
    let mut total = GradCheckReport::default();
    for seed in 0..SEEDS {
        let mut cfg = ModelConfig::new(kind, Strategy::S5);
        cfg.feature_width = 6;
        cfg.depth = 2;
        cfg.k_neighbors = 4;
        let mut model = Model::<f64>::new(cfg, seed).unwrap();
        randomize_biases(&mut model, seed);
        let cloud = blob(40, seed);
        let input = Inputs::<f64>::from_cloud(&cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let labels = random_labels(Strategy::S5, cloud.len(), &mut rng);
        let opts = GradCheckOptions { entries_per_tensor: 3, ..Default::default() };
        let report = check_gradients(
            &model.params,
            &[],
            |g, _| {
                let fwd = model.forward(g, &input)?;
                multilayer_loss(g, &fwd.logits, &labels, None)
            },
            &opts,
            &mut rng,
        )
        .unwrap();
        total.merge(&report);
    }
    println!("{kind}: checked {} kinks {} max rel {:.2e} ({})", total.checked, total.kinks, total.max_rel_error, total.worst);
    assert!(total.passes(TOL), "{kind}: {total:?}");
    assert!(total.kinks * 10 < total.checked, "{kind}: too many kinks {total:?}");
}

#[test]
fn set_backbone_end_to_end_gradients() {
    check_backbone(BackboneKind::Set);
}

#[test]
fn edge_backbone_end_to_end_gradients() {
    check_backbone(BackboneKind::Edge);
}

#[test]
fn transformer_backbone_end_to_end_gradients() {
    check_backbone(BackboneKind::Pt);
}
