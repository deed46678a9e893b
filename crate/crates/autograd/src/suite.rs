//! A catalogue of finite-difference checks covering every differentiable
//! operation and layer, runnable from tests or as a self-check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
use crate::layers::{
    BatchNorm, Conv1d, Conv2d, Dense, ForwardCtx, LayerNorm, Lstm, Mode, MultiHeadAttention,
    TransformerEncoderLayer,
};
use crate::ops::norm::NormAxis;
use crate::ops::PoolDims;
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

type Make = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>;
type Apply = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: String,
    make: Make,
    apply: Apply,
}

/// Worst result of one case over all its random points.
#[derive(Clone, Debug)]
pub struct CaseOutcome {
    pub name: String,
    pub points: usize,
    pub worst: GradCheckReport,
}

impl CaseOutcome {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst.passes(tolerance)
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).expect("shape")
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect()).expect("shape")
}

fn case(
    name: &str,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + 'static,
    apply: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> GradCase {
    GradCase {
        name: name.to_string(),
        make: Box::new(make),
        apply: Box::new(apply),
    }
}

/// Layer cases feed the input plus every parameter as checked inputs, with
/// parameters redrawn at each point.
fn layer_case(
    name: &str,
    store: ParamStore,
    input_shape: &'static [usize],
    apply: impl Fn(&mut Tape<f64>, &ParamStore, &Bound, Var) -> Result<Var> + 'static,
) -> GradCase {
    let shapes: Vec<Vec<usize>> = store.params().iter().map(|p| p.tensor.shape().to_vec()).collect();
    case(
        name,
        move |r| {
            let mut v = vec![random(input_shape, r)];
            v.extend(shapes.iter().map(|s| random(s, r)));
            v
        },
        move |t, v| apply(t, &store, &Bound::from_vars(v[1..].to_vec()), v[0]),
    )
}

pub fn catalogue() -> Vec<GradCase> {
    let mut c = vec![
        case("add", |r| vec![random(&[3, 4], r), random(&[3, 4], r)], |t, v| t.add(v[0], v[1])),
        case("sub", |r| vec![random(&[3, 4], r), random(&[3, 4], r)], |t, v| t.sub(v[0], v[1])),
        case("mul", |r| vec![random(&[3, 4], r), random(&[3, 4], r)], |t, v| t.mul(v[0], v[1])),
        case("scale", |r| vec![random(&[5], r)], |t, v| Ok(t.scale(v[0], -2.5))),
        case("add_scalar", |r| vec![random(&[5], r)], |t, v| Ok(t.add_scalar(v[0], 0.7))),
        case("add_const", |r| vec![random(&[2, 3], r)], |t, v| {
            t.add_const(v[0], &Tensor::new(&[2, 3], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6])?)
        }),
        case("mul_const", |r| vec![random(&[2, 3], r)], |t, v| {
            t.mul_const(v[0], &Tensor::new(&[2, 3], vec![1.5, -0.2, 0.3, 2.0, -0.5, 0.0])?)
        }),
        case("tanh", |r| vec![random(&[6], r)], |t, v| Ok(t.tanh(v[0]))),
        case("sigmoid", |r| vec![random(&[6], r)], |t, v| Ok(t.sigmoid(v[0]))),
        case("relu", |r| vec![random(&[6], r)], |t, v| Ok(t.relu(v[0]))),
        case("leaky_relu", |r| vec![random(&[6], r)], |t, v| Ok(t.leaky_relu(v[0], 0.2))),
        case("softmax", |r| vec![random(&[3, 5], r)], |t, v| Ok(t.softmax(v[0]))),
        case("sum", |r| vec![random(&[7], r)], |t, v| Ok(t.sum(v[0]))),
        case("mean", |r| vec![random(&[7], r)], |t, v| Ok(t.mean(v[0]))),
        case("dropout", |r| vec![random(&[4, 6], r)], |t, v| {
            // A fixed stream gives the same mask on every evaluation.
            t.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(11))
        }),
        case("bias_add", |r| vec![random(&[2, 3, 4], r), random(&[3], r)], |t, v| {
            t.bias_add(v[0], v[1], 1)
        }),
        case("bias_mul", |r| vec![random(&[2, 3, 4], r), random(&[4], r)], |t, v| {
            t.bias_mul(v[0], v[1], 2)
        }),
        case("bmm", |r| vec![random(&[2, 3, 4], r), random(&[2, 5, 4], r)], |t, v| {
            t.bmm(v[0], v[1], false, true)
        }),
        case("bmm_ta", |r| vec![random(&[2, 4, 3], r), random(&[2, 4, 5], r)], |t, v| {
            t.bmm(v[0], v[1], true, false)
        }),
        case("permute", |r| vec![random(&[2, 3, 4], r)], |t, v| t.permute(v[0], &[2, 0, 1])),
        case("narrow", |r| vec![random(&[2, 5, 3], r)], |t, v| t.narrow(v[0], 1, 1, 3)),
        case("concat", |r| vec![random(&[2, 2, 3], r), random(&[2, 4, 3], r)], |t, v| {
            t.concat(&[v[0], v[1]], 1)
        }),
        case("reshape", |r| vec![random(&[2, 6], r)], |t, v| t.reshape(v[0], &[3, 4])),
        case("conv1d", |r| vec![random(&[2, 3, 8], r), random(&[4, 3, 3], r), random(&[4], r)], |t, v| {
            t.conv1d(v[0], v[1], Some(v[2]))
        }),
        case("conv2d", |r| vec![random(&[2, 2, 4, 6], r), random(&[3, 2, 3, 3], r), random(&[3], r)], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]))
        }),
        case("maxpool1d", |r| vec![random(&[2, 3, 8], r)], |t, v| t.maxpool(v[0], PoolDims::OneD)),
        case("maxpool2d", |r| vec![random(&[1, 2, 4, 4], r)], |t, v| t.maxpool(v[0], PoolDims::TwoD)),
        case("upsample1d", |r| vec![random(&[2, 3, 4], r)], |t, v| t.upsample1d(v[0], 2)),
        case("standardize_last", |r| vec![random(&[3, 6], r)], |t, v| {
            Ok(t.standardize(v[0], NormAxis::Last, 1e-5)?.0)
        }),
        case("standardize_channel", |r| vec![random(&[4, 3, 5], r)], |t, v| {
            Ok(t.standardize(v[0], NormAxis::Channel, 1e-5)?.0)
        }),
        case("bce", |r| vec![positive(&[8], r)], |t, v| {
            t.bce(v[0], &Tensor::from_vec(vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]))
        }),
        case("cc_loss", |r| vec![random(&[2, 16], r)], |t, v| {
            let target = Tensor::new(&[2, 16], (0..32).map(|i| (i as f64 * 0.4).sin()).collect())?;
            t.cc_loss(v[0], &target)
        }),
        case("cross_entropy", |r| vec![random(&[3, 4], r)], |t, v| t.cross_entropy(v[0], &[0, 3, 1])),
    ];
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        c.push(case(
            &format!("matmul_t{}{}", ta as u8, tb as u8),
            move |r| {
                let a: &[usize] = if ta { &[4, 3] } else { &[3, 4] };
                let b: &[usize] = if tb { &[5, 4] } else { &[4, 5] };
                vec![random(a, r), random(b, r)]
            },
            move |t, v| t.matmul_t(v[0], v[1], ta, tb),
        ));
    }
    let init = || ChaCha8Rng::seed_from_u64(0);

    let mut s = ParamStore::new();
    let dense = Dense::new(&mut s, "d", 3, 2, true, &mut init()).expect("dense");
    c.push(layer_case("dense", s, &[4, 3], move |t, _, b, x| dense.forward(t, b, x)));

    let mut s = ParamStore::new();
    let conv = Conv2d::new(&mut s, "c", 2, 3, 3, &mut init()).expect("conv2d");
    c.push(layer_case("conv2d_layer", s, &[2, 2, 4, 5], move |t, _, b, x| conv.forward(t, b, x)));

    for mode in [Mode::Train, Mode::Infer] {
        let mut s = ParamStore::new();
        let conv = Conv1d::new(&mut s, "c", 2, 3, 3, &mut init()).expect("conv1d");
        let bn = BatchNorm::new(&mut s, "bn", 3).expect("batchnorm");
        let name = format!("conv1d_batchnorm_{mode:?}").to_lowercase();
        c.push(layer_case(&name, s, &[3, 2, 8], move |t, store, b, x| {
            let mut ctx = ForwardCtx::new(mode, ChaCha8Rng::seed_from_u64(1));
            let y = conv.forward(t, b, x)?;
            bn.forward(t, store, b, y, &mut ctx)
        }));
    }
    for seq in [true, false] {
        let mut s = ParamStore::new();
        let lstm = Lstm::new(&mut s, "l", 3, 4, &mut init()).expect("lstm");
        let name = if seq { "lstm_sequence" } else { "lstm_last" };
        c.push(layer_case(name, s, &[2, 5, 3], move |t, _, b, x| lstm.forward(t, b, x, seq)));
    }
    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, "a", 8, 4, &mut init()).expect("attention");
    c.push(layer_case("attention", s, &[1, 4, 8], move |t, _, b, x| mha.forward(t, b, x)));

    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 6).expect("layernorm");
    c.push(layer_case("layer_norm", s, &[2, 3, 6], move |t, _, b, x| ln.forward(t, b, x)));

    let mut s = ParamStore::new();
    let enc = TransformerEncoderLayer::new(&mut s, "e", 8, 4, 12, &mut init()).expect("encoder");
    c.push(layer_case("transformer_encoder", s, &[1, 3, 8], move |t, _, b, x| enc.forward(t, b, x)));
    c
}

/// Runs `case` at `points` random points and keeps the worst report.
pub fn run_case(case: &GradCase, points: u64) -> Result<CaseOutcome> {
    let mut worst: Option<GradCheckReport> = None;
    for point in 0..points {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + point);
        let inputs = (case.make)(&mut rng);
        let report = grad_check(&inputs, DEFAULT_STEP, point, |t, v| (case.apply)(t, v))?;
        worst = Some(match worst {
            Some(w) if w.max_rel_error >= report.max_rel_error => w,
            _ => report,
        });
    }
    Ok(CaseOutcome {
        name: case.name.clone(),
        points: points as usize,
        worst: worst.unwrap_or(GradCheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
        }),
    })
}

pub fn run_catalogue(points: u64) -> Result<Vec<CaseOutcome>> {
    catalogue().iter().map(|c| run_case(c, points)).collect()
}
