use proptest::prelude::*;
use tbnn_core::autodiff::{eval, finite_diff_grad, value_and_grad, Graph, Var};
use tbnn_core::{ParamTree, Real, Result, Role, Tensor};

#[derive(Clone, Copy, Debug)]
enum Prim {
    Matmul,
    MatmulNt,
    Transpose,
    Conv2d,
    MaxPool2,
    Add,
    Sub,
    Mul,
    AddBias,
    Scale,
    AddScalar,
    Relu,
    Tanh,
    Sigmoid,
    Square,
    Abs,
    Log,
    LogSoftmax,
    Sum,
    Mean,
    Gather,
    Reshape,
}

const ALL: [Prim; 22] = [
    Prim::Matmul,
    Prim::MatmulNt,
    Prim::Transpose,
    Prim::Conv2d,
    Prim::MaxPool2,
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::AddBias,
    Prim::Scale,
    Prim::AddScalar,
    Prim::Relu,
    Prim::Tanh,
    Prim::Sigmoid,
    Prim::Square,
    Prim::Abs,
    Prim::Log,
    Prim::LogSoftmax,
    Prim::Sum,
    Prim::Mean,
    Prim::Gather,
    Prim::Reshape,
];

impl Prim {
    /// Input shapes for the primitive.
    fn shapes(self) -> Vec<Vec<usize>> {
        match self {
            Prim::Matmul => vec![vec![3, 4], vec![4, 2]],
            Prim::MatmulNt => vec![vec![3, 4], vec![2, 4]],
            Prim::Transpose | Prim::LogSoftmax | Prim::Gather => vec![vec![3, 4]],
            Prim::Conv2d => vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3]],
            Prim::MaxPool2 => vec![vec![2, 2, 4, 4]],
            Prim::Add | Prim::Sub | Prim::Mul => vec![vec![2, 3], vec![2, 3]],
            Prim::AddBias => vec![vec![2, 3, 2, 2], vec![3]],
            _ => vec![vec![2, 5]],
        }
    }

    fn apply<T: Real>(self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        match self {
            Prim::Matmul => g.matmul(v[0], v[1]),
            Prim::MatmulNt => g.matmul_nt(v[0], v[1]),
            Prim::Transpose => g.transpose(v[0]),
            Prim::Conv2d => g.conv2d(v[0], v[1], 1),
            Prim::MaxPool2 => g.max_pool2(v[0]),
            Prim::Add => g.add(v[0], v[1]),
            Prim::Sub => g.sub(v[0], v[1]),
            Prim::Mul => g.mul(v[0], v[1]),
            Prim::AddBias => g.add_bias(v[0], v[1]),
            Prim::Scale => g.scale(v[0], -1.7),
            Prim::AddScalar => g.add_scalar(v[0], 0.3),
            Prim::Relu => g.relu(v[0]),
            Prim::Tanh => g.tanh(v[0]),
            Prim::Sigmoid => g.sigmoid(v[0]),
            Prim::Square => g.square(v[0]),
            Prim::Abs => g.abs(v[0]),
            Prim::Log => {
                let a = g.abs(v[0])?;
                g.log(a)
            }
            Prim::LogSoftmax => g.log_softmax(v[0]),
            Prim::Sum => g.sum(v[0]),
            Prim::Mean => g.mean(v[0]),
            Prim::Gather => g.gather(v[0], &[3, 0, 2]),
            Prim::Reshape => g.reshape(v[0], &[5, 2]),
        }
    }
}

fn tree(shapes: &[Vec<usize>], values: &[f64]) -> ParamTree {
    let mut p = ParamTree::new();
    let mut k = 0;
    for (i, s) in shapes.iter().enumerate() {
        let n: usize = s.iter().product();
        let data: Vec<f64> = (0..n).map(|j| values[(k + j) % values.len()]).collect();
        k += n;
        p.push(format!("t{i}"), Role::Bias, Tensor::new(s.clone(), data).unwrap());
    }
    p
}

/// Scalar loss `Σ c ⊙ op(x)` with a fixed direction `c`.
fn project<T: Real>(g: &mut Graph<T>, x: Var, dir: &[f64]) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<T> = (0..n).map(|i| T::from_f64(dir[i % dir.len()])).collect();
    let c = g.constant(Tensor::new(shape, w)?)?;
    let m = g.mul(x, c)?;
    g.sum(m)
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0)).fold(0.0, f64::max)
}

/// Reverse-mode gradient in precision `T` against 64-bit central differences.
fn gradient_error<T: Real>(prim: Prim, p: &ParamTree, dir: &[f64]) -> f64 {
    let f = |g: &mut Graph<T>, v: &[Var]| {
        let y = prim.apply(g, v)?;
        project(g, y, dir)
    };
    let reference = |g: &mut Graph<f64>, v: &[Var]| {
        let y = prim.apply(g, v)?;
        project(g, y, dir)
    };
    let (_, ad) = value_and_grad::<T>(p, &f).unwrap();
    let fd = finite_diff_grad(p, 1e-6, |q| eval::<f64>(q, &reference)).unwrap();
    max_rel_err(&ad.flatten(), &fd.flatten())
}

/// Values bounded away from zero and from each other, so that kinks of
/// relu/abs and max-pool ties stay outside the difference stencil.
fn spread_values() -> impl Strategy<Value = Vec<f64>> {
    (-1.0f64..1.0, any::<u64>()).prop_map(|(jitter, seed)| {
        let mut v: Vec<f64> = (0..64).map(|i| 0.2 + 0.05 * i as f64 + 0.01 * jitter).collect();
        // deterministic shuffle and random signs
        let mut s = seed | 1;
        for i in (1..v.len()).rev() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            v.swap(i, (s % (i as u64 + 1)) as usize);
        }
        for (i, x) in v.iter_mut().enumerate() {
            if (seed >> (i % 64)) & 1 == 1 {
                *x = -*x;
            }
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_primitive_matches_central_differences_f64(values in spread_values(), dir in prop::collection::vec(-1.0f64..1.0, 7)) {
        for prim in ALL {
            let p = tree(&prim.shapes(), &values);
            let e = gradient_error::<f64>(prim, &p, &dir);
            prop_assert!(e < 1e-6, "{prim:?}: relative error {e}");
        }
    }

    #[test]
    fn every_primitive_matches_central_differences_f32(values in spread_values(), dir in prop::collection::vec(-1.0f64..1.0, 7)) {
        for prim in ALL {
            // the f32 tape rounds its inputs, so compare on f32-exact values
            let vals: Vec<f64> = values.iter().map(|&x| x as f32 as f64).collect();
            let d: Vec<f64> = dir.iter().map(|&x| x as f32 as f64).collect();
            let p = tree(&prim.shapes(), &vals);
            let e = gradient_error::<f32>(prim, &p, &d);
            prop_assert!(e < 1e-3, "{prim:?}: relative error {e}");
        }
    }

    #[test]
    fn log_softmax_rows_normalize(rows in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 5), 1..6)) {
        let n = rows.len();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![n, 5], rows.concat()).unwrap()).unwrap();
        let y = g.log_softmax(x).unwrap();
        for r in g.value(y).data().chunks(5) {
            let lse = r.iter().map(|v| v.exp()).sum::<f64>().ln();
            prop_assert!(lse.abs() < 1e-10);
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax(values in prop::collection::vec(-5.0f64..5.0, 32), upstream in prop::collection::vec(-2.0f64..2.0, 8)) {
        let p = tree(&[vec![1, 2, 4, 4]], &values);
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.max_pool2(v[0])?;
            project(g, y, &upstream)
        };
        let (_, gr) = value_and_grad::<f64>(&p, &f).unwrap();
        let gd = gr.entries()[0].tensor.data();
        let x = p.entries()[0].tensor.data();
        let routed: f64 = gd.iter().sum();
        prop_assert!((routed - upstream.iter().sum::<f64>()).abs() < 1e-12);
        for c in 0..2 {
            for oh in 0..2 {
                for ow in 0..2 {
                    let idx: Vec<usize> = (0..4).map(|k| c * 16 + (2 * oh + k / 2) * 4 + 2 * ow + k % 2).collect();
                    let mut best = idx[0];
                    for &i in &idx[1..] {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    for &i in &idx {
                        if i != best {
                            prop_assert_eq!(gd[i], 0.0);
                        }
                    }
                    prop_assert_eq!(gd[best], upstream[c * 4 + oh * 2 + ow]);
                }
            }
        }
    }
}
