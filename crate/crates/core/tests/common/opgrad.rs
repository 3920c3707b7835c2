//! Finite-difference checks of every differentiable graph op on random
//! inputs.

use duet_core::ndgrad::{
    gradient_check, Axis, GradCheckOptions, Graph, NodeId, Padding, ParamSet, Tensor,
};
use duet_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 20;

pub type OpBuilder = dyn for<'p> Fn(&mut Graph<'p, f64>, &[NodeId]) -> Result<NodeId> + Sync;

pub struct OpCase {
    pub name: &'static str,
    pub seed: u64,
    pub shapes: Vec<Vec<usize>>,
    pub op: Box<OpBuilder>,
}

fn case(
    name: &'static str,
    seed: u64,
    shapes: &[&[usize]],
    op: impl for<'p> Fn(&mut Graph<'p, f64>, &[NodeId]) -> Result<NodeId> + Sync + 'static,
) -> OpCase {
    OpCase {
        name,
        seed,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        op: Box::new(op),
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

pub fn cases() -> Vec<OpCase> {
    vec![
        case("matmul", 10, &[&[3, 4], &[4, 2]], |g, x| {
            g.matmul(x[0], x[1])
        }),
        case("conv1d valid", 11, &[&[3, 10], &[2, 3, 3]], |g, x| {
            g.conv1d(x[0], x[1], Padding::Valid)
        }),
        case("conv1d same", 12, &[&[2, 6], &[3, 2, 3]], |g, x| {
            g.conv1d(x[0], x[1], Padding::Same)
        }),
        case("max_pool", 13, &[&[2, 8]], |g, x| g.max_pool(x[0], 3, 2)),
        case("max_pool_masked", 14, &[&[3, 9]], |g, x| {
            g.max_pool_masked(x[0], 4, 1, 6)
        }),
        case("relu", 15, &[&[4, 5]], |g, x| g.relu(x[0])),
        case("tanh", 16, &[&[4, 5]], |g, x| g.tanh(x[0])),
        case("dropout", 17, &[&[6, 6]], |g, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            g.dropout(x[0], 0.5, true, &mut rng)
        }),
        case("embedding_gather", 18, &[&[6, 3]], |g, x| {
            g.embedding_gather(x[0], &[0, 5, 2, 5, 1])
        }),
        case("embedding_gather_padded", 33, &[&[6, 3]], |g, x| {
            g.embedding_gather_padded(x[0], &[3, 0, 4, 0], Some(0))
        }),
        case("add", 19, &[&[3, 4], &[3, 4]], |g, x| g.add(x[0], x[1])),
        case("sub", 20, &[&[3, 4], &[3, 4]], |g, x| g.sub(x[0], x[1])),
        case("mul", 21, &[&[3, 4], &[3, 4]], |g, x| g.mul(x[0], x[1])),
        case("scale", 22, &[&[3, 4]], |g, x| g.scale(x[0], -1.7)),
        case("sum", 23, &[&[3, 4]], |g, x| g.sum(x[0])),
        case("mean", 24, &[&[3, 4]], |g, x| g.mean(x[0])),
        case("concat cols", 25, &[&[2, 3], &[2, 2]], |g, x| {
            g.concat(&[x[0], x[1]], 1)
        }),
        case("concat rows", 26, &[&[2, 3], &[1, 3]], |g, x| {
            g.concat(&[x[0], x[1]], 0)
        }),
        case("add_bias cols", 27, &[&[3, 4], &[4]], |g, x| {
            g.add_bias(x[0], x[1], Axis::Cols)
        }),
        case("add_bias rows", 28, &[&[3, 4], &[3]], |g, x| {
            g.add_bias(x[0], x[1], Axis::Rows)
        }),
        case("broadcast_rows", 29, &[&[1, 4]], |g, x| {
            g.broadcast_rows(x[0], 3)
        }),
        case("transpose", 30, &[&[3, 4]], |g, x| g.transpose(x[0])),
        case("reshape", 31, &[&[3, 4]], |g, x| g.reshape(x[0], &[2, 6])),
        case("map", 32, &[&[5]], |g, x| {
            g.map(x[0], |v| v.sin(), |v| v.cos())
        }),
        case("linear", 34, &[&[2, 3], &[3, 4], &[4]], |g, x| {
            g.linear(x[0], x[1], x[2])
        }),
    ]
}

/// Largest relative error over `INSTANCES` random instances, or a message
/// for the first instance that fails. Inputs become parameters and the loss
/// is a random weighted sum of the op's output.
pub fn check(case: &OpCase) -> std::result::Result<f64, String> {
    let mut worst: f64 = 0.0;
    for instance in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed * 1000 + instance);
        let mut params = ParamSet::new();
        for (i, s) in case.shapes.iter().enumerate() {
            params
                .add(format!("in{i}"), rand_tensor(&mut rng, s))
                .unwrap();
        }
        let ids: Vec<_> = params.ids().collect();
        let out_shape = {
            let mut g = Graph::with_params(&params);
            let nodes: Vec<_> = ids.iter().map(|&p| g.param(p).unwrap()).collect();
            let out = (case.op)(&mut g, &nodes).unwrap();
            g.value(out).shape().to_vec()
        };
        let weights = rand_tensor(&mut rng, &out_shape);
        let report = gradient_check(&mut params, GradCheckOptions::default(), |g| {
            let nodes = ids
                .iter()
                .map(|&p| g.param(p))
                .collect::<Result<Vec<_>>>()?;
            let out = (case.op)(g, &nodes)?;
            let w = g.input(weights.clone())?;
            let prod = g.mul(out, w)?;
            g.sum(prod)
        })
        .map_err(|e| format!("{} instance {instance}: {e}", case.name))?;
        if !report.passed || report.checked == 0 {
            return Err(format!("{} instance {instance}: {report:?}", case.name));
        }
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}
