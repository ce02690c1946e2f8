//! Finite-difference gradient checks for every differentiable tape operation
//! and every loss, shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use slots_core::autodiff::{grad_check, Conv2dOptions, Tape, Tensor, Var};
use slots_core::losses::{self, LossWeights, NtXentDenominator};
use slots_core::nn::{BoundParams, EncoderConfig, SlotsModel};
use slots_core::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn random(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries bounded away from zero so that kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn positive(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    for v in t.data_mut() {
        *v = 0.5 + v.abs();
    }
    t
}

/// Contracts a tensor with fixed pseudo-random weights so every output
/// element reaches the scalar.
fn project(tape: &mut Tape, v: Var) -> Result<Var> {
    let n = tape.value(v).numel();
    let shape = tape.shape(v).to_vec();
    let w = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

type Check = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> (&'static str, Vec<Tensor>, Check) {
    (name, inputs, Box::new(f))
}

fn cases(rng: &mut ChaCha20Rng) -> Vec<(&'static str, Vec<Tensor>, Check)> {
    let m = |rng: &mut ChaCha20Rng, s: &[usize]| random(rng, s);
    let labels = [0usize, 0, 1, 1];
    vec![
        case("add", vec![m(rng, &[3, 4]), m(rng, &[3, 4])], |t, v| { let y = t.add(v[0], v[1])?; project(t, y) }),
        case("sub", vec![m(rng, &[3, 4]), m(rng, &[3, 4])], |t, v| { let y = t.sub(v[0], v[1])?; project(t, y) }),
        case("mul", vec![m(rng, &[3, 4]), m(rng, &[3, 4])], |t, v| { let y = t.mul(v[0], v[1])?; project(t, y) }),
        case("mul_scalar", vec![m(rng, &[5])], |t, v| { let y = t.mul_scalar(v[0], -2.5); project(t, y) }),
        case("add_scalar", vec![m(rng, &[5])], |t, v| { let y = t.add_scalar(v[0], 1.5); project(t, y) }),
        case("add_bias", vec![m(rng, &[2, 3, 4]), m(rng, &[3])], |t, v| { let y = t.add_bias(v[0], v[1], 1)?; project(t, y) }),
        case("matmul", vec![m(rng, &[3, 4]), m(rng, &[4, 2])], |t, v| { let y = t.matmul(v[0], v[1])?; project(t, y) }),
        case("conv2d", vec![m(rng, &[2, 4, 5, 7]), m(rng, &[6, 2, 3, 2]), m(rng, &[6])], |t, v| {
            let opts = Conv2dOptions { stride: (1, 2), dilation: (2, 1), padding: (1, 1), groups: 2 };
            let y = t.conv2d(v[0], v[1], Some(v[2]), opts)?;
            project(t, y)
        }),
        case("conv1d", vec![m(rng, &[2, 3, 9]), m(rng, &[4, 3, 3])], |t, v| { let y = t.conv1d(v[0], v[1], 2, 1)?; project(t, y) }),
        case("conv1d_padded", vec![m(rng, &[2, 3, 8]), m(rng, &[2, 3, 3])], |t, v| {
            let y = t.conv1d_padded(v[0], v[1], 1, 2, 1)?;
            project(t, y)
        }),
        case("depthwise_conv1d", vec![m(rng, &[2, 3, 6]), m(rng, &[6, 1, 3])], |t, v| {
            let y = t.depthwise_conv1d(v[0], v[1], 2)?;
            project(t, y)
        }),
        case("avg_pool", vec![m(rng, &[2, 3, 7])], |t, v| { let y = t.avg_pool(v[0], 2)?; project(t, y) }),
        case("relu", vec![away_from_zero(rng, &[4, 5])], |t, v| { let y = t.relu(v[0]); project(t, y) }),
        case("exp", vec![m(rng, &[4, 3])], |t, v| { let y = t.exp(v[0]); project(t, y) }),
        case("log", vec![positive(rng, &[4, 3])], |t, v| { let y = t.log(v[0])?; project(t, y) }),
        case("sum", vec![m(rng, &[3, 3])], |t, v| { let y = t.exp(v[0]); Ok(t.sum(y)) }),
        case("mean", vec![m(rng, &[3, 3])], |t, v| { let y = t.exp(v[0]); Ok(t.mean(y)) }),
        case("sum_axis", vec![m(rng, &[2, 3, 4])], |t, v| { let y = t.sum_axis(v[0], 1)?; project(t, y) }),
        case("mean_axis", vec![m(rng, &[2, 3, 4])], |t, v| { let y = t.mean_axis(v[0], 2)?; project(t, y) }),
        case("l2_normalize", vec![m(rng, &[4, 3])], |t, v| { let y = t.l2_normalize(v[0], 1)?; project(t, y) }),
        case("cosine_similarity_matrix", vec![m(rng, &[4, 3]), m(rng, &[5, 3])], |t, v| {
            let y = t.cosine_similarity_matrix(v[0], v[1])?;
            project(t, y)
        }),
        case("softmax", vec![m(rng, &[3, 4])], |t, v| { let y = t.softmax(v[0], 1)?; project(t, y) }),
        case("masked_logsumexp", vec![m(rng, &[3, 4])], |t, v| {
            let mask = (0..12).map(|i| i % 3 != 1).collect();
            let y = t.masked_logsumexp(v[0], mask)?;
            project(t, y)
        }),
        case("concat", vec![m(rng, &[2, 3]), m(rng, &[4, 3])], |t, v| { let y = t.concat(&[v[0], v[1]], 0)?; project(t, y) }),
        case("slice", vec![m(rng, &[3, 5])], |t, v| { let y = t.slice(v[0], 1, 1, 4)?; project(t, y) }),
        case("transpose", vec![m(rng, &[3, 5])], |t, v| { let y = t.transpose(v[0])?; project(t, y) }),
        case("reshape", vec![m(rng, &[3, 4])], |t, v| { let y = t.reshape(v[0], vec![2, 6])?; project(t, y) }),
        case("unsup_contrastive", vec![m(rng, &[4, 3]), m(rng, &[4, 3])], |t, v| {
            losses::unsup_contrastive_with(t, v[0], v[1], 0.5, NtXentDenominator::AllViews)
        }),
        case("unsup_contrastive_first_view", vec![m(rng, &[4, 3]), m(rng, &[4, 3])], |t, v| {
            losses::unsup_contrastive_with(t, v[0], v[1], 0.5, NtXentDenominator::FirstViewOnly)
        }),
        case("sup_contrastive", vec![m(rng, &[4, 3])], move |t, v| losses::sup_contrastive(t, v[0], &labels, 0.5)),
        case("cross_entropy", vec![m(rng, &[4, 3])], |t, v| losses::cross_entropy(t, v[0], &[0, 2, 1, 2])),
        case("hybrid", vec![m(rng, &[4, 3]), m(rng, &[4, 3]), m(rng, &[4, 2])], move |t, v| {
            let u = losses::unsup_contrastive(t, v[0], v[1], 0.5)?;
            let s = losses::sup_contrastive(t, v[0], &labels, 0.5)?;
            let c = losses::cross_entropy(t, v[2], &[0, 1, 1, 0])?;
            let w = LossWeights { lambda1: 0.7, lambda2: 1.3, lambda3: 0.4, tau: 0.5 };
            losses::hybrid(t, Some(u), Some(s), Some(c), &w)
        }),
    ]
}

/// Worst relative gradient error of every check, in a fixed order.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    cases(&mut rng)
        .into_iter()
        .map(|(name, inputs, f)| {
            let err = grad_check(|t, v| f(t, v), &inputs, STEP).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, err)
        })
        .collect()
}

/// Gradient check of the full encoder and classifier, cross-entropy on top,
/// with respect to the input batch and every parameter tensor.
pub fn model_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cfg = EncoderConfig { in_channels: 2, num_blocks: 2, dilations: vec![1, 2], feature_channels: vec![2, 3], embed_dim: 4 };
    let mut model = SlotsModel::new(cfg, 3, &mut rng).unwrap();
    for p in model.parameters_mut() {
        if p.name.ends_with(".bias") {
            p.value = random(&mut rng, p.value.shape());
        }
    }
    let mut inputs = vec![random(&mut rng, &[4, 2, 12])];
    inputs.extend(model.parameters().iter().map(|p| p.value.clone()));
    grad_check(
        |t, v| {
            let params = BoundParams::from_vars(&model, t, v[1..].to_vec())?;
            let z = model.encode(t, &params, v[0])?;
            let logits = model.classify(t, &params, z)?;
            losses::cross_entropy(t, logits, &[0, 1, 2, 1])
        },
        &inputs,
        STEP,
    )
    .unwrap()
}

#[path = "../oracles/mod.rs"]
mod oracles;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

fn loss_value(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    tape.value(v).item()
}

/// Largest absolute gap between the library losses and the enumeration
/// oracles over `draws` random batches with N, M <= 6.
pub fn loss_oracle_max_error(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(2..=4);
        let tau = rng.random_range(0.1..2.0);
        let (zi, zj) = (random(&mut rng, &[n, d]), random(&mut rng, &[n, d]));
        for (den, first) in [(NtXentDenominator::AllViews, false), (NtXentDenominator::FirstViewOnly, true)] {
            let got = loss_value(|t| {
                let (a, b) = (t.constant(zi.clone()), t.constant(zj.clone()));
                losses::unsup_contrastive_with(t, a, b, tau, den)
            })
            .unwrap();
            worst = worst.max((got - oracles::nt_xent(&rows(&zi), &rows(&zj), tau, first)).abs());
        }

        let m = rng.random_range(2..=6);
        let classes = rng.random_range(2..=3);
        let z = random(&mut rng, &[m, d]);
        let y: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let got = loss_value(|t| {
            let a = t.constant(z.clone());
            losses::sup_contrastive(t, a, &y, tau)
        });
        match (got, oracles::sup_con(&rows(&z), &y, tau)) {
            (Ok(g), Some(o)) => worst = worst.max((g - o).abs()),
            (Err(_), None) => {}
            (g, o) => panic!("library {g:?} vs oracle {o:?} for labels {y:?}"),
        }

        let c = rng.random_range(2..=5);
        let mut logits = random(&mut rng, &[m, c]);
        logits.data_mut().iter_mut().for_each(|v| *v *= 4.0);
        let y: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
        let got = loss_value(|t| {
            let a = t.constant(logits.clone());
            losses::cross_entropy(t, a, &y)
        })
        .unwrap();
        worst = worst.max((got - oracles::cross_entropy(&rows(&logits), &y)).abs());
    }
    worst
}

/// Largest gap between the supervised loss at all-equal embeddings and
/// `ln(#negatives / #positives)` over every label vector in `{0,1,2}^M`,
/// `2 <= M <= 6`.
pub fn sup_con_equal_embedding_max_error() -> f64 {
    let mut worst: f64 = 0.0;
    for m in 2..=6usize {
        for code in 0..3usize.pow(m as u32) {
            let y: Vec<usize> = (0..m).map(|i| code / 3usize.pow(i as u32) % 3).collect();
            let got = loss_value(|t| {
                let z = t.constant(Tensor::full(&[m, 3], 0.7));
                losses::sup_contrastive(t, z, &y, 0.5)
            });
            match (got, oracles::sup_con_equal_embeddings(&y)) {
                (Ok(g), Some(o)) => worst = worst.max((g - o).abs()),
                (Err(_), None) => {}
                (g, o) => panic!("library {g:?} vs oracle {o:?} for labels {y:?}"),
            }
        }
    }
    worst
}

/// Scores on a 1/1024 grid, so ties occur and `2x + 1` stays exact.
fn grid_scores(rng: &mut ChaCha20Rng, m: usize, c: usize) -> Tensor {
    let v = (0..m * c).map(|_| rng.random_range(0..64) as f64 / 1024.0).collect();
    Tensor::new(vec![m, c], v).unwrap()
}

/// Largest gap between library AUROC/AUPRC and the pairwise and
/// threshold-sweep oracles, plus whether every monotone transform left the
/// library values bit-identical.
pub fn metric_oracle_sweep(draws: usize, seed: u64) -> (f64, bool) {
    use slots_core::metrics::{auprc, auroc_ovr, binary_auprc, binary_auroc};
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut invariant = true;
    for draw in 0..draws {
        let m = rng.random_range(2..=8);
        let c = if draw % 2 == 0 { 2 } else { rng.random_range(3..=4) };
        let y: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
        let scores = grid_scores(&mut rng, m, c);
        let r = rows(&scores);

        let pos: Vec<bool> = y.iter().map(|v| *v == 1).collect();
        let col: Vec<f64> = r.iter().map(|row| row[1]).collect();
        let pairs = [
            (binary_auroc(&pos, &col), oracles::pairwise_auroc(&pos, &col)),
            (binary_auprc(&pos, &col), oracles::threshold_auprc(&pos, &col)),
        ];
        for (lib, oracle) in pairs {
            match (lib, oracle) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                (a, b) => panic!("binary metric {a:?} vs oracle {b:?}"),
            }
        }

        let macro_pairs = [
            (auroc_ovr(&y, &scores).ok(), oracles::macro_ovr(&y, &r, oracles::pairwise_auroc)),
            (auprc(&y, &scores).ok(), oracles::macro_ovr(&y, &r, oracles::threshold_auprc)),
        ];
        for (lib, oracle) in macro_pairs {
            match (lib, oracle) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                (a, b) => panic!("macro metric {a:?} vs oracle {b:?}"),
            }
        }

        let base = (auroc_ovr(&y, &scores).ok(), auprc(&y, &scores).ok());
        for f in [|x: f64| 2.0 * x + 1.0, f64::exp] {
            let mut t = scores.clone();
            t.data_mut().iter_mut().for_each(|v| *v = f(*v));
            invariant &= (auroc_ovr(&y, &t).ok(), auprc(&y, &t).ok()) == base;
        }
    }
    (worst, invariant)
}

use slots_core::data::{make_split, SemiLabeledDataset, Series, SplitParams, SplitPattern, SynthSpec, TimeSeriesSample};

/// One sample per trial, `trials` trials for each of `subjects` subjects.
pub fn trial_grid(subjects: usize, trials: usize) -> SemiLabeledDataset {
    let samples = (0..subjects)
        .flat_map(|s| {
            (0..trials).map(move |t| TimeSeriesSample {
                sample_id: format!("s{s}t{t}"),
                subject_id: format!("subj{s}"),
                trial_id: format!("trial{t}"),
                label: Some(t % 2),
                series: Series::new(1, 4, vec![0.0; 4]).unwrap(),
            })
        })
        .collect();
    SemiLabeledDataset::new(samples, 2).unwrap()
}

/// Number of violations over `plans` random split plans per pattern: a
/// sample in both sides, a sample in neither, or (for leave_subjects_out) a
/// subject on both sides.
pub fn split_violations(plans: usize, seed: u64) -> usize {
    use std::collections::HashSet;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut violations = 0;
    for pattern in SplitPattern::ALL {
        for _ in 0..plans {
            let spec = SynthSpec {
                num_samples: rng.random_range(20..120),
                num_classes: 2,
                channels: 1,
                length: 8,
                noise_sigma: 0.0,
                num_subjects: rng.random_range(2..6),
            };
            let data = spec.generate(rng.random()).unwrap();
            let params = SplitParams { test_fraction: rng.random_range(0.05..0.6), holdout_trials: 1, holdout_subjects: 1 };
            let plan = match make_split(&data, pattern, &params, rng.random()) {
                Ok(p) => p,
                Err(e) => panic!("{pattern:?} on {spec:?}: {e}"),
            };
            let train: HashSet<usize> = plan.train.iter().copied().collect();
            let test: HashSet<usize> = plan.test.iter().copied().collect();
            if !train.is_disjoint(&test) || train.len() + test.len() != data.len() || test.is_empty() {
                violations += 1;
            }
            if pattern == SplitPattern::LeaveSubjectsOut {
                let subj = |idx: &HashSet<usize>| -> HashSet<String> {
                    idx.iter().map(|&i| data.samples()[i].subject_id.clone()).collect()
                };
                if !subj(&train).is_disjoint(&subj(&test)) {
                    violations += 1;
                }
            }
            if pattern == SplitPattern::LeaveTrialsOut {
                let key = |i: &usize| (data.samples()[*i].subject_id.clone(), data.samples()[*i].trial_id.clone());
                let tr: HashSet<_> = train.iter().map(key).collect();
                if test.iter().map(key).any(|k| tr.contains(&k)) {
                    violations += 1;
                }
            }
        }
    }
    violations
}

/// `(train, test)` sizes of the two worked DEAP-shaped examples:
/// 4-of-40 trials held out per subject and 2-of-32 subjects held out.
pub fn worked_split_counts() -> [(usize, usize); 2] {
    let data = trial_grid(32, 40);
    let trials = SplitParams { holdout_trials: 4, ..SplitParams::default() };
    let subjects = SplitParams { holdout_subjects: 2, ..SplitParams::default() };
    let a = make_split(&data, SplitPattern::LeaveTrialsOut, &trials, 1).unwrap();
    let b = make_split(&data, SplitPattern::LeaveSubjectsOut, &subjects, 1).unwrap();
    [(a.train.len(), a.test.len()), (b.train.len(), b.test.len())]
}

/// Test accuracy of the spectral-energy oracle on a trial-dependent split of
/// `data`, fitted on the train side.
pub fn bandpower_accuracy(data: &SemiLabeledDataset, seed: u64) -> f64 {
    let plan = make_split(data, SplitPattern::TrialDependent, &SplitParams::default(), seed).unwrap();
    let side = |idx: &[usize]| -> (Vec<&[f64]>, Vec<usize>) {
        idx.iter().map(|&i| (data.samples()[i].series.values(), data.samples()[i].label.unwrap())).unzip()
    };
    let (xs, ys) = side(&plan.train);
    let clf = oracles::BandpowerClassifier::fit(&xs, &ys, data.channels(), data.num_classes());
    let (xt, yt) = side(&plan.test);
    clf.accuracy(&xt, &yt, data.channels())
}

/// `(factored, dense)` weight counts of the 1x3 + 3x1 pair against one 3x3
/// layer with the same width, for each block of the default encoder.
pub fn factored_weight_counts() -> Vec<(usize, usize)> {
    use slots_core::nn::{build_block, LayerKind};
    let cfg = EncoderConfig::new(4);
    (0..cfg.num_blocks)
        .map(|b| {
            let block = build_block(&cfg, b).unwrap();
            let factored: usize = block
                .layers
                .iter()
                .filter(|l| matches!(l.kind, LayerKind::Temporal | LayerKind::CrossChannel))
                .map(|l| l.weight_count())
                .sum();
            let l = &block.layers[1];
            (factored, oracles::dense_conv_weights(l.in_channels, l.out_channels, 3, 3))
        })
        .collect()
}
