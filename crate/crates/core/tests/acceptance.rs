//! Acceptance criteria, one line each:
//!
//! ```text
//! [PASS] 1 gradient correctness ... (details) 12.3s
//! ```
//!
//! Runs without the libtest harness so the verdict lines always print.
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.
//! The process exits nonzero if any selected criterion fails.

use std::f64::consts::{LN_2, PI};
use std::time::{Duration, Instant};

use busseg::checkpoint::Checkpoint;
use busseg::data::{split, synth_phantoms, Label, Mask, Raster, Sample, SplitSpec};
use busseg::eval::{postprocess_mask, seg_metrics, Element};
use busseg::gan::{
    discriminator_loss, generator_loss, segment_images, ssim, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, LossWeights,
    TrainConfig, Trainer,
};
use busseg::nn::{channel_attention, AtrousBlock, CawBlock, ChannelWeighting, Mode};
use busseg::shape::{
    classify_evaluate, efs_select, encode_labels, extract_features, lacunarity, moment_features, CvScheme, FeatureGroup, FeatureTable,
    ForestConfig,
};
use busseg::tensor::{Activation, ConvSpec, Graph, ParamStore, RngStream, Tensor, Var};

type Verdict = busseg::Result<(bool, String)>;

// ---------------------------------------------------------------------------
// Finite-difference harness

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
/// Denominator floor: below it the relative error degrades to an absolute
/// one, so rounding noise on near-zero gradients is not amplified.
const FD_FLOOR: f64 = 1e-5;
const FD_SEEDS: u64 = 20;

type Build<'a> = dyn Fn(&mut Graph<f64>, &mut ParamStore<f64>, &[Var]) -> busseg::Result<Var> + 'a;

fn randn(shape: &[usize], scale: f64, rng: &mut RngStream) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal() * scale).collect()).unwrap()
}

fn rand_in(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()).unwrap()
}

/// Replace every trainable tensor with N(0, scale²) draws so gradients are
/// not dominated by the small default initialization.
fn randomize(store: &mut ParamStore<f64>, scale: f64, rng: &mut RngStream) {
    let ids: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    for id in ids {
        let t = randn(store.get(id).shape(), scale, rng);
        store.set(id, t).unwrap();
    }
}

/// `L = sum(f(inputs) * R)` for a fixed random projection `R`.
fn projected_loss(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    build: &Build,
    proj: &Tensor<f64>,
    grads: bool,
) -> busseg::Result<(f64, Option<(Vec<Tensor<f64>>, Vec<(busseg::tensor::ParamId, Tensor<f64>)>)>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), grads)).collect();
    let out = build(&mut g, store, &vars)?;
    let r = g.constant(proj.clone());
    let prod = g.mul(out, r)?;
    let loss = g.sum(prod);
    let value = g.value(loss).item();
    if !grads {
        return Ok((value, None));
    }
    let gr = g.backward(loss)?;
    let gin = vars
        .iter()
        .map(|&v| gr.get(&g, v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();
    Ok((value, Some((gin, gr.params(&g)))))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Max relative error between analytic and central-difference gradients
/// over every input element and every trainable parameter element.
fn grad_check(mut store: ParamStore<f64>, inputs: Vec<Tensor<f64>>, build: &Build, seed: u64) -> busseg::Result<f64> {
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &mut store, &vars)?;
        g.shape(out).to_vec()
    };
    let proj = randn(&out_shape, 1.0, &mut RngStream::new(seed).substream(99));
    let (_, grads) = projected_loss(&mut store, &inputs, build, &proj, true)?;
    let (gin, gparams) = grads.expect("requested");
    let mut worst = 0.0f64;
    let mut inputs = inputs;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + FD_STEP;
            let (lp, _) = projected_loss(&mut store, &inputs, build, &proj, false)?;
            inputs[i].data_mut()[j] = orig - FD_STEP;
            let (lm, _) = projected_loss(&mut store, &inputs, build, &proj, false)?;
            inputs[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(gin[i].data()[j], (lp - lm) / (2.0 * FD_STEP)));
        }
    }
    let trainable: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    for id in trainable {
        let analytic = gparams
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for j in 0..analytic.numel() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let (lp, _) = projected_loss(&mut store, &inputs, build, &proj, false)?;
            store.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let (lm, _) = projected_loss(&mut store, &inputs, build, &proj, false)?;
            store.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic.data()[j], (lp - lm) / (2.0 * FD_STEP)));
        }
    }
    Ok(worst)
}

struct GradCase {
    name: &'static str,
    setup: fn(u64) -> (ParamStore<f64>, Vec<Tensor<f64>>, Box<Build<'static>>),
}

fn no_params() -> ParamStore<f64> {
    ParamStore::new()
}

fn grad_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "conv2d",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let spec = ConvSpec::new(1 + seed as usize % 2, seed as usize % 3, 1 + (seed as usize / 3) % 2);
                let inputs = vec![randn(&[2, 3, 7, 7], 1.0, &mut r), randn(&[4, 3, 3, 3], 0.5, &mut r), randn(&[4], 0.5, &mut r)];
                (no_params(), inputs, Box::new(move |g, _, v| g.conv2d(v[0], v[1], v[2], spec)))
            },
        },
        GradCase {
            name: "conv_transpose2d",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let (stride, pad) = (1 + seed as usize % 2, (seed as usize / 2) % 2);
                let inputs = vec![randn(&[2, 3, 4, 4], 1.0, &mut r), randn(&[3, 2, 4, 4], 0.5, &mut r), randn(&[2], 0.5, &mut r)];
                (no_params(), inputs, Box::new(move |g, _, v| g.conv_transpose2d(v[0], v[1], v[2], stride, pad)))
            },
        },
        GradCase {
            name: "batch_norm",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let inputs = vec![randn(&[3, 2, 3, 3], 1.5, &mut r), randn(&[2], 1.0, &mut r), randn(&[2], 1.0, &mut r)];
                let (rm, rv) = ([0.3, -0.2], [0.8, 1.7]);
                (
                    no_params(),
                    inputs,
                    Box::new(move |g, _, v| {
                        let (train, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
                        let infer = g.batch_norm_infer(v[0], v[1], v[2], &rm, &rv, 1e-5)?;
                        g.add(train, infer)
                    }),
                )
            },
        },
        GradCase {
            name: "activations",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let inputs = vec![randn(&[2, 3, 4, 4], 1.0, &mut r)];
                (
                    no_params(),
                    inputs,
                    Box::new(|g, _, v| {
                        let mut acc = g.activation(v[0], Activation::Relu);
                        for a in [Activation::LEAKY_0_2, Activation::Tanh, Activation::Sigmoid] {
                            let y = g.activation(v[0], a);
                            let y = g.mul_scalar(y, 1.7);
                            acc = g.add(acc, y)?;
                        }
                        Ok(acc)
                    }),
                )
            },
        },
        GradCase {
            name: "atrous_block",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let mut store = ParamStore::new();
                let block = AtrousBlock::new(&mut store, "a", 2, 2, 3, &mut r).unwrap();
                randomize(&mut store, 0.4, &mut r);
                let inputs = vec![randn(&[2, 2, 12, 12], 1.0, &mut r)];
                (store, inputs, Box::new(move |g, s, v| block.forward(g, s, v[0], Mode::TRAIN)))
            },
        },
        GradCase {
            name: "channel_attention",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let inputs = vec![randn(&[2, 3, 2, 3], 0.6, &mut r), randn(&[1], 1.0, &mut r)];
                (no_params(), inputs, Box::new(|g, _, v| channel_attention(g, v[0], v[1])))
            },
        },
        GradCase {
            name: "channel_weighting",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let mut store = ParamStore::new();
                let cw = ChannelWeighting::new(&mut store, "w", 4, 2, &mut r).unwrap();
                randomize(&mut store, 0.8, &mut r);
                let inputs = vec![randn(&[2, 4, 3, 3], 1.0, &mut r)];
                (store, inputs, Box::new(move |g, s, v| cw.forward(g, s, v[0], Mode::TRAIN)))
            },
        },
        GradCase {
            name: "caw_block",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let mut store = ParamStore::new();
                let caw = CawBlock::new(&mut store, "c", 4, 2, &mut r).unwrap();
                randomize(&mut store, 0.6, &mut r);
                let inputs = vec![randn(&[2, 4, 2, 2], 0.6, &mut r)];
                (store, inputs, Box::new(move |g, s, v| caw.forward(g, s, v[0], Mode::TRAIN)))
            },
        },
        GradCase {
            name: "ssim",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let inputs = vec![rand_in(&[2, 1, 13, 14], 0.0, 1.0, &mut r), rand_in(&[2, 1, 13, 14], 0.0, 1.0, &mut r)];
                (no_params(), inputs, Box::new(|g, _, v| ssim(g, v[0], v[1])))
            },
        },
        GradCase {
            name: "generator_loss",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let target = Tensor::from_vec(&[2, 1, 12, 12], (0..288).map(|_| f64::from(u8::from(r.uniform() < 0.4))).collect()).unwrap();
                let inputs = vec![rand_in(&[2, 1, 10, 10], 0.05, 0.95, &mut r), rand_in(&[2, 1, 12, 12], 0.05, 0.95, &mut r)];
                (
                    no_params(),
                    inputs,
                    Box::new(move |g, _, v| {
                        let y = g.constant(target.clone());
                        Ok(generator_loss(g, v[0], v[1], y, LossWeights::default())?.total)
                    }),
                )
            },
        },
        GradCase {
            name: "discriminator_loss",
            setup: |seed| {
                let mut r = RngStream::new(seed);
                let inputs = vec![rand_in(&[2, 1, 10, 10], 0.05, 0.95, &mut r), rand_in(&[2, 1, 10, 10], 0.05, 0.95, &mut r)];
                (no_params(), inputs, Box::new(|g, _, v| Ok(discriminator_loss(g, v[0], v[1]))))
            },
        },
    ]
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for case in grad_cases() {
        let mut worst = 0.0f64;
        for seed in 0..FD_SEEDS {
            let (store, inputs, build) = (case.setup)(seed);
            worst = worst.max(grad_check(store, inputs, build.as_ref(), seed)?);
        }
        pass &= worst < FD_TOL;
        parts.push(format!("{} {:.1e}", case.name, worst));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    Ok((pass, format!("max rel err over {FD_SEEDS} seeds: {}; {:.0}s", parts.join(", "), elapsed.as_secs_f64())))
}

// ---------------------------------------------------------------------------
// Shapes

fn criterion_2() -> Verdict {
    let mut rng = RngStream::new(0);
    let mut gen = Generator::<f32>::new(GeneratorConfig::default(), &mut rng)?;
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(&[1, 1, 96, 96], (0..96 * 96).map(|i| (i % 97) as f32 / 97.0).collect())?);
    let t = gen.forward_traced(&mut g, x, &mut rng, Mode::INFER, None)?;
    let mut checks: Vec<(String, Vec<usize>, Vec<usize>)> = Vec::new();
    let enc = [[64, 48], [128, 24], [256, 12], [512, 3], [512, 2], [512, 1], [512, 1]];
    for (i, (&v, [c, s])) in t.encoder.iter().zip(enc).enumerate() {
        checks.push((format!("En{}", i + 1), g.shape(v).to_vec(), vec![1, c, s, s]));
    }
    checks.push(("atrous".into(), g.shape(t.atrous).to_vec(), vec![1, 256, 6, 6]));
    checks.push(("padded En4".into(), g.shape(t.padded_en4).to_vec(), vec![1, 512, 4, 4]));
    checks.push(("CAW in".into(), g.shape(t.caw_in).to_vec(), vec![1, 512, 1, 1]));
    checks.push(("CAW out".into(), g.shape(t.caw_out).to_vec(), vec![1, 512, 1, 1]));
    let dec = [[512, 2], [512, 4], [256, 6], [256, 12], [128, 24], [64, 48]];
    for (i, (&v, [c, s])) in t.decoder.iter().zip(dec).enumerate() {
        checks.push((format!("Dn{}", i + 1), g.shape(v).to_vec(), vec![1, c, s, s]));
    }
    checks.push(("mask".into(), g.shape(t.mask).to_vec(), vec![1, 1, 96, 96]));

    let mut disc = Discriminator::<f32>::new(DiscriminatorConfig::default(), &mut rng)?;
    let m = g.constant(Tensor::full(&[1, 1, 96, 96], 0.5));
    let d = disc.forward_traced(&mut g, x, m, Mode::INFER)?;
    let dshape = [[64, 48], [128, 24], [256, 12], [512, 11], [1, 10]];
    for (i, (&v, [c, s])) in d.iter().zip(dshape).enumerate() {
        checks.push((format!("Cn{}", i + 1), g.shape(v).to_vec(), vec![1, c, s, s]));
    }
    let probs = g.value(*d.last().unwrap());
    let in_unit = probs.data().iter().all(|&p| p > 0.0 && p < 1.0);
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(n, got, want)| format!("{n} {got:?}!={want:?}"))
        .collect();
    let pass = bad.is_empty() && in_unit && t.encoder.len() == 7 && t.decoder.len() == 6 && d.len() == 5;
    Ok((
        pass,
        if pass {
            format!("{} waypoints match; D output 10x10 in (0,1)", checks.len())
        } else {
            format!("mismatches: {bad:?}; D in (0,1): {in_unit}")
        },
    ))
}

// ---------------------------------------------------------------------------
// Loss identities

fn criterion_3() -> Verdict {
    let mut rng = RngStream::new(5);
    let y = Tensor::from_vec(&[2, 1, 96, 96], (0..2 * 96 * 96).map(|_| f64::from(u8::from(rng.uniform() < 0.3))).collect())?;
    let mut g = Graph::<f64>::new();
    let yv = g.constant(y.clone());
    let m = g.constant(y);
    let ones = g.constant(Tensor::full(&[2, 1, 10, 10], 1.0));
    let gl = generator_loss(&mut g, ones, m, yv, LossWeights::default())?.total;
    let gl = g.value(gl).item();
    let zeros = g.constant(Tensor::zeros(&[2, 1, 10, 10]));
    let d10 = discriminator_loss(&mut g, ones, zeros);
    let d10 = g.value(d10).item();
    let halves = g.constant(Tensor::full(&[2, 1, 10, 10], 0.5));
    let dhalf = discriminator_loss(&mut g, halves, halves);
    let dhalf = g.value(dhalf).item();
    let s_bin = ssim(&mut g, yv, yv)?;
    let s_bin = g.value(s_bin).item();
    let r = g.constant(rand_in(&[1, 1, 40, 33], 0.0, 1.0, &mut rng));
    let s_rand = ssim(&mut g, r, r)?;
    let s_rand = g.value(s_rand).item();
    let pass = gl.abs() <= 1e-9 && d10.abs() <= 1e-9 && (dhalf - 2.0 * LN_2).abs() <= 1e-9 && s_bin == 1.0 && s_rand == 1.0;
    Ok((
        pass,
        format!(
            "G(m=y,D=1)={gl:.1e}, D(1,0)={d10:.1e}, D(.5,.5)-2ln2={:.1e}, ssim(y,y)={s_bin}/{s_rand}",
            dhalf - 2.0 * LN_2
        ),
    ))
}

// ---------------------------------------------------------------------------
// Training runs

fn mean_dice(pred: &[Mask], truth: &[&Sample]) -> busseg::Result<f64> {
    let mut sum = 0.0;
    for (p, s) in pred.iter().zip(truth) {
        sum += seg_metrics(p, &s.mask)?.dice;
    }
    Ok(sum / pred.len() as f64)
}

fn default_trainer(config: TrainConfig) -> busseg::Result<Trainer> {
    Trainer::new(config, LossWeights::default(), GeneratorConfig::default(), DiscriminatorConfig::default())
}

fn criterion_4() -> Verdict {
    let data = synth_phantoms(8, 1)?;
    let config = TrainConfig { seed: 0, ..TrainConfig::default() };
    let start = Instant::now();
    let mut t = default_trainer(config)?;
    t.fit_iterations(&data, 10)?;
    let early = Checkpoint::from_trainer(&t).to_bytes()?;
    t.fit_iterations(&data, 290)?;
    let images: Vec<Raster> = data.iter().map(|s| s.image.clone()).collect();
    let masks = segment_images(&mut t.generator, &images, 8, &mut RngStream::new(0))?;
    let dice = mean_dice(&masks, &data.iter().collect::<Vec<_>>())?;
    let elapsed = start.elapsed();

    let mut replay = default_trainer(config)?;
    replay.fit_iterations(&data, 10)?;
    let same = Checkpoint::from_trainer(&replay).to_bytes()? == early;

    let pass = dice >= 0.90 && elapsed <= Duration::from_secs(600) && same && t.iteration() == 300;
    Ok((
        pass,
        format!(
            "mean post-processed training Dice {dice:.4} after {} iterations in {:.0}s; replay identical: {same}",
            t.iteration(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let data = synth_phantoms(200, 11)?;
    let parts = split(&data, &SplitSpec::default())?;
    let config = TrainConfig {
        epochs: 10,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut t = default_trainer(config)?;
    t.fit(&parts.train)?;
    let train_time = start.elapsed();

    let images: Vec<Raster> = data.iter().map(|s| s.image.clone()).collect();
    let masks = segment_images(&mut t.generator, &images, 8, &mut RngStream::new(0))?;
    let by_id: std::collections::HashMap<&str, &Mask> = data.iter().map(|s| s.id.as_str()).zip(&masks).collect();

    let mut dice_sum = 0.0;
    let mut identity_gap = 0.0f64;
    for s in &parts.test {
        let m = seg_metrics(by_id[s.id.as_str()], &s.mask)?;
        dice_sum += m.dice;
        identity_gap = identity_gap.max((m.iou - m.dice / (2.0 - m.dice)).abs());
    }
    let test_dice = dice_sum / parts.test.len() as f64;

    let named: Vec<(String, Mask)> = data.iter().zip(&masks).map(|(s, m)| (s.id.clone(), m.clone())).collect();
    let table = FeatureTable::from_masks(&named)?;
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    let y = encode_labels(&labels)?;
    let forest = ForestConfig::default();
    let efs = efs_select(&table.rows, &y, &table.groups(), CvScheme::KFold(5), &forest)?;
    let groups = table.groups();
    let columns: Vec<usize> = efs.chosen.iter().flat_map(|&g| groups[g].columns.clone()).collect();
    let report = classify_evaluate(&table.rows, &labels, &columns, &forest)?;
    let elapsed = start.elapsed();

    let pass = test_dice >= 0.85 && identity_gap <= 1e-12 && report.accuracy >= 0.80 && elapsed <= Duration::from_secs(1800);
    Ok((
        pass,
        format!(
            "{}/{}/{} split; test Dice {test_dice:.4}; IoU identity gap {identity_gap:.1e}; EFS chose {:?}; LOOCV accuracy {:.3} (P {:.3} R {:.3} F1 {:.3}); train {:.0}s, total {:.0}s",
            parts.train.len(),
            parts.val.len(),
            parts.test.len(),
            efs.chosen_names(),
            report.accuracy,
            report.precision,
            report.recall,
            report.f1,
            train_time.as_secs_f64(),
            elapsed.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------------------
// Metric and morphology oracles

fn random_mask(w: usize, h: usize, rng: &mut RngStream) -> Mask {
    let density = rng.uniform();
    let mut m = Mask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            m.set(x, y, rng.uniform() < density);
        }
    }
    m
}

/// Confusion counting and ratio formulas written out independently.
fn brute_metrics(pred: &Mask, gt: &Mask) -> [f64; 5] {
    let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(x, y), gt.get(x, y)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
    }
    let r = |a: f64, b: f64| if b == 0.0 { 1.0 } else { a / b };
    [
        r(tp + tn, tp + tn + fp + fn_),
        r(2.0 * tp, 2.0 * tp + fp + fn_),
        r(tp, tp + fp + fn_),
        r(tp, tp + fn_),
        r(tn, tn + fp),
    ]
}

fn cells(se: Element) -> Vec<(isize, isize)> {
    let mut v = Vec::new();
    for j in 0..se.h {
        for i in 0..se.w {
            v.push((i as isize - se.ax as isize, j as isize - se.ay as isize));
        }
    }
    v
}

/// Minkowski sum by scattering each foreground pixel over the element.
fn scatter_dilate(m: &Mask, offsets: &[(isize, isize)]) -> Mask {
    let (w, h) = (m.width() as isize, m.height() as isize);
    let mut out = Mask::zeros(m.width(), m.height());
    for (x, y) in m.iter_foreground() {
        for &(dx, dy) in offsets {
            let (px, py) = (x as isize + dx, y as isize + dy);
            if px >= 0 && py >= 0 && px < w && py < h {
                out.set(px as usize, py as usize, true);
            }
        }
    }
    out
}

fn complement(m: &Mask) -> Mask {
    Mask::from_fn(m.width(), m.height(), |x, y| !m.get(x, y))
}

/// Erosion by duality: the complement of the dilated complement with the
/// reflected element. Background outside the raster on the dual side is
/// foreground outside on the eroded side.
fn dual_erode(m: &Mask, offsets: &[(isize, isize)]) -> Mask {
    let reflected: Vec<(isize, isize)> = offsets.iter().map(|&(dx, dy)| (-dx, -dy)).collect();
    complement(&scatter_dilate(&complement(m), &reflected))
}

fn oracle_postprocess(m: &Mask) -> Mask {
    let c3 = cells(Element::centered(3));
    let e2 = cells(Element::top_left(2));
    dual_erode(&dual_erode(&scatter_dilate(m, &c3), &c3), &e2)
}

fn criterion_6() -> Verdict {
    let mut rng = RngStream::new(6);
    let mut metric_mismatch = 0;
    for _ in 0..1000 {
        let (p, g) = (random_mask(16, 16, &mut rng), random_mask(16, 16, &mut rng));
        if seg_metrics(&p, &g)?.values() != brute_metrics(&p, &g) {
            metric_mismatch += 1;
        }
    }
    let mut morph_mismatch = 0;
    for i in 0..200 {
        let (w, h) = (8 + i % 17, 8 + (i * 7) % 19);
        let m = random_mask(w, h, &mut rng);
        if postprocess_mask(&m) != oracle_postprocess(&m) {
            morph_mismatch += 1;
        }
    }
    Ok((
        metric_mismatch == 0 && morph_mismatch == 0,
        format!("metric mismatches {metric_mismatch}/1000; morphology mismatches {morph_mismatch}/200"),
    ))
}

// ---------------------------------------------------------------------------
// Shape features

fn rot90(m: &Mask) -> Mask {
    Mask::from_fn(m.height(), m.width(), |x, y| m.get(y, m.height() - 1 - x))
}

fn criterion_7() -> Verdict {
    // Integer-centered raster at the canvas center. Box counting with the
    // fixed sizes is grid-phase sensitive at this radius, so the
    // half-pixel-centered FD is reported alongside for reference.
    let disk_at = |c: f64| Mask::from_fn(96, 96, move |x, y| (x as f64 - c).powi(2) + (y as f64 - c).powi(2) <= 400.0);
    let fd = extract_features(&disk_at(48.0))?;
    let fd_half = extract_features(&disk_at(47.5))?.fractal_dimension;
    let square = Mask::from_fn(96, 96, |x, y| (28..68).contains(&x) && (28..68).contains(&y));
    let sq = extract_features(&square)?;

    let mut rng = RngStream::new(7);
    let mut hu_gap = 0.0f64;
    for _ in 0..20 {
        let (w, h) = (20 + rng.below(20), 20 + rng.below(20));
        let blob = Mask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - w as f64 * 0.45, y as f64 - h as f64 * 0.55);
            dx * dx / 40.0 + dy * dy / 15.0 + 0.02 * dx * dy <= 1.0 || (x > w / 2 && y < h / 3 && x + y < w)
        });
        let mut noisy = blob.clone();
        for _ in 0..15 {
            noisy.set(rng.below(w), rng.below(h), true);
        }
        let base = moment_features(&noisy).hu;
        let mut variants = Vec::new();
        let mut r = noisy.clone();
        for _ in 0..3 {
            r = rot90(&r);
            variants.push(r.clone());
        }
        variants.push(Mask::from_fn(w, h, |x, y| noisy.get(w - 1 - x, y)));
        variants.push(Mask::from_fn(w, h, |x, y| noisy.get(x, h - 1 - y)));
        for v in &variants {
            let hu = moment_features(v).hu;
            for k in 0..6 {
                hu_gap = hu_gap.max((hu[k] - base[k]).abs());
            }
        }
    }
    let full = Mask::from_fn(96, 96, |_, _| true);
    let lac = lacunarity(&full)?;

    let pass = (0.9..=1.1).contains(&fd.circularity)
        && fd.solidity >= 0.95
        && (0.9..=1.15).contains(&fd.fractal_dimension)
        && (sq.circularity - PI / 4.0).abs() <= 0.05
        && hu_gap <= 1e-9
        && lac == 1.0;
    Ok((
        pass,
        format!(
            "disk r=20: circularity {:.4}, solidity {:.4}, FD {:.4} (half-pixel center {fd_half:.4}); square circularity {:.4} (pi/4 {:.4}); Hu gap {hu_gap:.1e}; full-mask lacunarity {lac}",
            fd.circularity,
            fd.solidity,
            fd.fractal_dimension,
            sq.circularity,
            PI / 4.0
        ),
    ))
}

// ---------------------------------------------------------------------------
// Feature selection

fn criterion_8() -> Verdict {
    // Positives sit in the (high, high) quadrant of features 2 and 5;
    // negatives fill the other three quadrants. Other features are noise.
    let n = 48;
    let mut rng = RngStream::new(8);
    let side = |high: bool, r: &mut RngStream| if high { 0.6 + 0.4 * r.uniform() } else { 0.4 * r.uniform() };
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let (a, b) = if label == 1 {
            (true, true)
        } else {
            [(false, false), (true, false), (false, true)][(i / 2) % 3]
        };
        let mut row: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
        row[2] = side(a, &mut rng);
        row[5] = side(b, &mut rng);
        x.push(row);
        y.push(label);
    }
    let groups: Vec<FeatureGroup> = (0..8)
        .map(|i| FeatureGroup {
            name: format!("f{i}"),
            columns: vec![i],
        })
        .collect();
    let r = efs_select(&x, &y, &groups, CvScheme::Loocv, &ForestConfig::default())?;
    let both = r.chosen.contains(&2) && r.chosen.contains(&5);
    let mut subsets: Vec<&Vec<usize>> = r.table.iter().map(|s| &s.subset).collect();
    subsets.sort();
    subsets.dedup();
    let pass = both && r.accuracy >= 0.95 && r.table.len() == 255 && subsets.len() == 255;
    Ok((
        pass,
        format!("chosen {:?} with LOOCV accuracy {:.3}; table has {} distinct subsets", r.chosen_names(), r.accuracy, subsets.len()),
    ))
}

// ---------------------------------------------------------------------------
// Determinism and persistence

fn criterion_9() -> Verdict {
    let data = synth_phantoms(8, 9)?;
    let config = TrainConfig {
        batch_size: 4,
        seed: 42,
        ..TrainConfig::default()
    };
    let run = || -> busseg::Result<(Trainer, Vec<u8>)> {
        let mut t = default_trainer(config)?;
        t.fit_iterations(&data, 4)?;
        let bytes = Checkpoint::from_trainer(&t).to_bytes()?;
        Ok((t, bytes))
    };
    let (mut t1, b1) = run()?;
    let (_, b2) = run()?;
    let identical_runs = b1 == b2;

    let (loaded, integrity) = Checkpoint::from_bytes(&b1)?;
    let resaved = loaded.to_bytes()? == b1;
    let mut gen = loaded.generator()?;
    let bitwise_params = t1
        .generator
        .store
        .iter()
        .all(|(id, e)| gen.store.get(id).data().iter().zip(e.tensor.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let img = [data[0].image.clone()];
    let same_prediction =
        segment_images(&mut t1.generator, &img, 1, &mut RngStream::new(1))? == segment_images(&mut gen, &img, 1, &mut RngStream::new(1))?;

    let meta_len = u32::from_le_bytes(b1[8..12].try_into().unwrap()) as usize;
    let mut tampered = b1.clone();
    let payload_byte = 12 + meta_len + (b1.len() - 12 - meta_len) / 2;
    tampered[payload_byte] ^= 0x10;
    let detected = matches!(Checkpoint::from_bytes(&tampered), Ok((_, i)) if !i.is_ok());

    let pass = identical_runs && integrity.is_ok() && resaved && bitwise_params && same_prediction && detected;
    Ok((
        pass,
        format!(
            "seeded runs identical: {identical_runs} ({} bytes); save-load-save identical: {resaved}; params bitwise: {bitwise_params}; predictions equal: {same_prediction}; tamper detected: {detected}",
            b1.len()
        ),
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 9] = [
        (1, "gradient correctness", criterion_1),
        (2, "architecture shape contract", criterion_2),
        (3, "loss identities", criterion_3),
        (6, "metric and morphology oracles", criterion_6),
        (7, "shape-feature sanity", criterion_7),
        (8, "exhaustive selection recovery", criterion_8),
        (9, "determinism and persistence", criterion_9),
        (4, "overfit smoke test", criterion_4),
        (5, "end-to-end phantom study", criterion_5),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "[{}] {id} {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
