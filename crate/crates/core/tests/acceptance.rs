//! End-to-end acceptance run. Each criterion prints one `PASS`/`FAIL` line
//! with its measurements and wall time; the process fails if any criterion
//! does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use plfm::cgan::{
    generator_forward, generator_l1, train_cgan, CganModels, CganSample, CganTrainConfig,
    DiscriminatorConfig, GeneratorConfig,
};
use plfm::convlstm::{
    convlstm_cell_step, convlstm_forward, evaluate_loss, huber_grad, huber_loss, train_convlstm,
    ConvLstm, ConvLstmCell, ConvLstmConfig, ConvLstmTrainConfig, Gate, HuberConfig, SequenceSample,
    Source,
};
use plfm::dataset::{
    dissimilarity, split_items, synth_scene, Histogram, RoiSeries, SceneConfig, SplitConfig,
    SplitItem,
};
use plfm::evaluation::{evaluate_pair, summarize, CoverageBucket, EvalRow};
use plfm::head::{
    pixel_accuracy, train_head, HeadConfig, HeadModel, HeadSample, HeadTrainConfig, LOG_EPS,
};
use plfm::image::{OpticalImage, Raster, TemporalSequence};
use plfm::metrics::{self, with_csc, EvalConfig, MetricId, MetricOptions, SearchMode};
use plfm::pipeline::{plfm_infer, PlfmModels};
use plfm_nn::gradcheck::{numeric_gradient, relative_error};
use plfm_nn::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn random_raster(rng: &mut impl Rng, w: usize, h: usize, c: usize) -> Raster {
    Raster::from_fn(w, h, c, |_, _, _| rng.random())
}

// ---------------------------------------------------------------------------
// Naive references, written from the metric definitions one loop at a time.

fn band(r: &Raster, k: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for y in 0..r.height() {
        for x in 0..r.width() {
            v.push(r.get(x, y, k));
        }
    }
    v
}

/// Sample statistics with an `n − 1` denominator.
fn stats(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let mut ma = 0.0;
    let mut mb = 0.0;
    for i in 0..a.len() {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cab = 0.0;
    for i in 0..a.len() {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
        cab += (a[i] - ma) * (b[i] - mb);
    }
    (ma, mb, va / (n - 1.0), vb / (n - 1.0), cab / (n - 1.0))
}

fn naive(id: MetricId, r: &Raster, p: &Raster) -> f64 {
    let bands = r.channels();
    let n = (r.width() * r.height()) as f64;
    let per_band = |f: &dyn Fn(&[f64], &[f64]) -> f64| {
        let mut total = 0.0;
        for k in 0..bands {
            total += f(&band(r, k), &band(p, k));
        }
        total / bands as f64
    };
    match id {
        MetricId::Psnr => per_band(&|a, b| {
            let mut peak = f64::MIN;
            let mut sse = 0.0;
            for i in 0..a.len() {
                peak = peak.max(a[i]);
                sse += (a[i] - b[i]) * (a[i] - b[i]);
            }
            if sse == 0.0 {
                100.0
            } else {
                (10.0 * (peak * peak * n / sse).log10()).min(100.0)
            }
        }),
        MetricId::Ssim => per_band(&|a, b| {
            let (ma, mb, va, vb, cab) = stats(a, b);
            let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
            (2.0 * ma * mb + c1) * (2.0 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        }),
        MetricId::Sam => {
            let mut total = 0.0;
            let mut count = 0.0;
            for y in 0..r.height() {
                for x in 0..r.width() {
                    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                    for k in 0..bands {
                        dot += r.get(x, y, k) * p.get(x, y, k);
                        na += r.get(x, y, k) * r.get(x, y, k);
                        nb += p.get(x, y, k) * p.get(x, y, k);
                    }
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let same = (0..bands).all(|k| r.get(x, y, k) == p.get(x, y, k));
                    if !same {
                        total += (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0).acos();
                    }
                    count += 1.0;
                }
            }
            total / count
        }
        MetricId::Mse | MetricId::Rmse | MetricId::Dd => {
            let mut sq = 0.0;
            let mut abs = 0.0;
            for y in 0..r.height() {
                for x in 0..r.width() {
                    for k in 0..bands {
                        let d = r.get(x, y, k) - p.get(x, y, k);
                        sq += d * d;
                        abs += d.abs();
                    }
                }
            }
            let count = n * bands as f64;
            match id {
                MetricId::Mse => sq / count,
                MetricId::Rmse => (sq / count).sqrt(),
                _ => abs / count,
            }
        }
        MetricId::Cc => per_band(&|a, b| {
            let (_, _, va, vb, cab) = stats(a, b);
            cab / (va.sqrt() * vb.sqrt())
        }),
        MetricId::Uqi => per_band(&|a, b| {
            let (ma, mb, va, vb, cab) = stats(a, b);
            4.0 * cab * ma * mb / ((va + vb) * (ma * ma + mb * mb))
        }),
    }
}

fn ideal(id: MetricId) -> f64 {
    match id {
        MetricId::Psnr => 100.0,
        MetricId::Ssim | MetricId::Cc | MetricId::Uqi => 1.0,
        MetricId::Sam | MetricId::Mse | MetricId::Rmse | MetricId::Dd => 0.0,
    }
}

fn improves(id: MetricId, better: f64, worse: f64) -> bool {
    match id.mode() {
        SearchMode::Max => better >= worse,
        SearchMode::Min => better <= worse,
    }
}

// ---------------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let opts = MetricOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let r = random_raster(&mut rng, 8, 8, 3);
        let p = random_raster(&mut rng, 8, 8, 3);
        for id in MetricId::ALL {
            let got = metrics::compute(id, &r, &p, &opts).map_err(|e| e.to_string())?;
            let want = naive(id, &r, &p);
            worst = worst.max((got - want).abs());
            check(
                (got - want).abs() < 1e-10,
                format!("{} {got} vs naive {want}", id.name()),
            )?;
        }
        for id in MetricId::ALL {
            let v = metrics::compute(id, &r, &r, &opts).map_err(|e| e.to_string())?;
            check(v == ideal(id), format!("{}(X, X) = {v}", id.name()))?;
        }
    }
    Ok(format!("max |impl − naive| = {worst:.1e} over 200 pairs"))
}

fn csc_recovery() -> Outcome {
    let opts = MetricOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (size, pad) = (24usize, 2usize);
    for _ in 0..50 {
        let base = random_raster(&mut rng, size + 2 * pad, size + 2 * pad, 3);
        let e1: i32 = rng.random_range(-2..=2);
        let e2: i32 = rng.random_range(-2..=2);
        let reference = base.crop(pad, pad, size, size);
        let pred = base.crop(
            (pad as i32 - e2) as usize,
            (pad as i32 - e1) as usize,
            size,
            size,
        );
        let s = with_csc(MetricId::Ssim, &reference, &pred, 2, &opts).map_err(|e| e.to_string())?;
        check(
            (s.value - 1.0).abs() < 1e-9,
            format!("SSIM {} for shift ({e1},{e2})", s.value),
        )?;
        check(
            s.shift == (e1, e2),
            format!("found {:?}, planted ({e1},{e2})", s.shift),
        )?;
        let p = with_csc(MetricId::Psnr, &reference, &pred, 2, &opts).map_err(|e| e.to_string())?;
        check(
            p.value == 100.0 && p.shift == (e1, e2),
            format!("PSNR {} at {:?}", p.value, p.shift),
        )?;
        for id in MetricId::ALL {
            let raw = metrics::compute(id, &reference, &pred, &opts).map_err(|e| e.to_string())?;
            let zero = with_csc(id, &reference, &pred, 0, &opts).map_err(|e| e.to_string())?;
            check(
                zero.value.to_bits() == raw.to_bits() && zero.shift == (0, 0),
                format!("{} E=0 {} vs raw {raw}", id.name(), zero.value),
            )?;
        }
    }
    Ok("50 planted shifts recovered; E=0 bit-identical to raw".into())
}

fn huber_gradients(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let shape = [
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(2..5),
            rng.random_range(2..5),
        ];
        let cfg = HuberConfig {
            delta: rng.random_range(0.3..1.5),
            ..Default::default()
        };
        let y = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let y_hat = Tensor::from_fn(shape, |_| rng.random_range(-3.0..3.0));
        let analytic = huber_grad(&y_hat, &y, &cfg).map_err(|e| e.to_string())?;
        let numeric = numeric_gradient(&y_hat, 1e-6, |t| huber_loss(t, &y, &cfg).unwrap());
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

fn cross_entropy_gradients(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, c, h, w) = (
            rng.random_range(1..3),
            rng.random_range(2..7),
            rng.random_range(2..4),
            rng.random_range(2..4),
        );
        let z = Tensor::from_fn([n, c, h, w], |_| rng.random_range(-3.0..3.0));
        let targets: Vec<usize> = (0..n * h * w).map(|_| rng.random_range(0..c)).collect();
        let mut g = Graph::new();
        let v = g.input_with_grad(z.clone());
        let loss = g.softmax_cross_entropy(v, &targets, LOG_EPS);
        let analytic = g.backward(loss).get(v).unwrap().clone();
        let numeric = numeric_gradient(&z, 1e-6, |t| {
            let mut g = Graph::new();
            let v = g.input(t.clone());
            let l = g.softmax_cross_entropy(v, &targets, LOG_EPS);
            g.scalar(l)
        });
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Scalar objective `mean(h ⊙ a) + mean(C ⊙ b)` of one cell step.
fn cell_objective(
    cell: &ConvLstmCell,
    store: &ParamStore,
    inputs: [&Tensor; 3],
    weights: [&Tensor; 2],
) -> (f64, Vec<Tensor>, Vec<(plfm_nn::ParamId, Tensor)>) {
    let mut g = Graph::new();
    let vars = inputs.map(|t| g.input_with_grad(t.clone()));
    let (h, c) = cell.step(&mut g, store, vars[0], Some((vars[1], vars[2])));
    let hw = g.mul_const(h, weights[0].clone());
    let cw = g.mul_const(c, weights[1].clone());
    let (mh, mc) = (g.mean(hw), g.mean(cw));
    let loss = g.add(mh, mc);
    let value = g.scalar(loss);
    let grads = g.backward(loss);
    let inputs = vars
        .iter()
        .map(|&v| grads.get(v).unwrap().clone())
        .collect();
    let params = grads.params().map(|(id, t)| (id, t.clone())).collect();
    (value, inputs, params)
}

fn convlstm_cell_gradients(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let (cin, hid, k) = (
            rng.random_range(1..3),
            rng.random_range(1..3),
            if trial % 2 == 0 { 3 } else { 1 },
        );
        let (w, h) = (rng.random_range(2..5), rng.random_range(2..5));
        let mut store = ParamStore::new(trial);
        let cell = ConvLstmCell::new(&mut store, "cell", cin, hid, k, (w, h), true, false);
        for id in cell.peep.unwrap() {
            for v in store.get_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let x = Tensor::from_fn([1, cin, h, w], |_| rng.random_range(-1.0..1.0));
        let hp = Tensor::from_fn([1, hid, h, w], |_| rng.random_range(-1.0..1.0));
        let cp = Tensor::from_fn([1, hid, h, w], |_| rng.random_range(-1.0..1.0));
        let a = Tensor::from_fn([1, hid, h, w], |_| rng.random_range(-1.0..1.0));
        let b = Tensor::from_fn([1, hid, h, w], |_| rng.random_range(-1.0..1.0));
        let (_, input_grads, param_grads) = cell_objective(&cell, &store, [&x, &hp, &cp], [&a, &b]);
        let originals = [&x, &hp, &cp];
        for (slot, analytic) in input_grads.iter().enumerate() {
            let numeric = numeric_gradient(originals[slot], 1e-6, |t| {
                let mut ins = originals;
                ins[slot] = t;
                cell_objective(&cell, &store, ins, [&a, &b]).0
            });
            worst = worst.max(relative_error(analytic, &numeric));
        }
        for (id, analytic) in &param_grads {
            let numeric = numeric_gradient(store.get(*id), 1e-6, |t| {
                let mut s = store.clone();
                *s.get_mut(*id) = t.clone();
                cell_objective(&cell, &s, [&x, &hp, &cp], [&a, &b]).0
            });
            worst = worst.max(relative_error(analytic, &numeric));
        }
        assert_eq!(param_grads.len(), 6, "w_x, w_h, bias and three peepholes");
    }
    worst
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let huber = huber_gradients(&mut rng)?;
    let ce = cross_entropy_gradients(&mut rng);
    let cell = convlstm_cell_gradients(&mut rng);
    let summary =
        format!("max relative error: huber {huber:.1e}, cross-entropy {ce:.1e}, cell {cell:.1e}");
    check(huber < 1e-4 && ce < 1e-4 && cell < 1e-4, summary.clone())?;
    Ok(summary)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn lstm_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (cin, hid) = (2, 3);
    let mut store = ParamStore::new(4);
    let cell = ConvLstmCell::new(&mut store, "cell", cin, hid, 1, (1, 1), true, false);
    for id in [cell.w_x, cell.w_h, cell.bias] {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
    }
    let wx = |g: Gate| cell.gate_kernel(&store, g, Source::Input);
    let wh = |g: Gate| cell.gate_kernel(&store, g, Source::Hidden);
    let pre = |g: Gate, x: &[f64], h: &[f64], j: usize| {
        let (kx, kh) = (wx(g), wh(g));
        let mut s = cell.gate_bias(&store, g)[j];
        for (m, xm) in x.iter().enumerate() {
            s += kx.data()[j * cin + m] * xm;
        }
        for (m, hm) in h.iter().enumerate() {
            s += kh.data()[j * hid + m] * hm;
        }
        s
    };
    let mut h: Vec<f64> = (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut c: Vec<f64> = (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ht = Tensor::from_vec([1, hid, 1, 1], h.clone());
    let mut ct = Tensor::from_vec([1, hid, 1, 1], c.clone());
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..cin).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (mut h_next, mut c_next) = (vec![0.0; hid], vec![0.0; hid]);
        for j in 0..hid {
            let f = sigmoid(pre(Gate::Forget, &x, &h, j));
            let i = sigmoid(pre(Gate::Input, &x, &h, j));
            let cand = pre(Gate::Candidate, &x, &h, j).tanh();
            let o = sigmoid(pre(Gate::Output, &x, &h, j));
            c_next[j] = f * c[j] + i * cand;
            h_next[j] = o * c_next[j].tanh();
        }
        let xt = Tensor::from_vec([1, cin, 1, 1], x);
        (ht, ct) = convlstm_cell_step(&xt, &ht, &ct, &cell, &store).map_err(|e| e.to_string())?;
        (h, c) = (h_next, c_next);
        for j in 0..hid {
            worst = worst
                .max((ht.data()[j] - h[j]).abs())
                .max((ct.data()[j] - c[j]).abs());
        }
    }
    check(worst < 1e-12, format!("max deviation {worst:.1e}"))?;
    Ok(format!("100 steps, max deviation {worst:.1e}"))
}

fn planted_split() -> Outcome {
    let bins = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut items = Vec::new();
    for r in 0..40 {
        let centre = if r % 2 == 0 { 4.0 } else { 15.0 };
        for _ in 0..4 {
            let mut counts = vec![0.0; bins];
            for _ in 0..256 {
                let v: f64 = centre + rng.random_range(-3.0..3.0);
                counts[(v.round() as usize).min(bins - 1)] += 1.0;
            }
            items.push(SplitItem {
                roi_id: format!("roi{r:02}"),
                counts,
            });
        }
    }
    let cfg = SplitConfig {
        iterations: 200,
        sample_size: 16,
        bins,
        ..Default::default()
    };
    let res = split_items(&items, &cfg).map_err(|e| e.to_string())?;
    let min = res.trace.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sorted = res.trace.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    check(res.trace.len() == 200, "trace length")?;
    check(
        res.dissimilarity == min,
        format!("d {} vs trace min {min}", res.dissimilarity),
    )?;
    check(
        res.dissimilarity < median,
        format!("d {} not below median {median}", res.dissimilarity),
    )?;
    let h = Histogram {
        counts: items[0].counts.clone(),
        cumulative: false,
    }
    .cumulate();
    let same = dissimilarity(&h, &h, 16).map_err(|e| e.to_string())?;
    check(same == 0.0, format!("d(identical) = {same}"))?;
    let twins: Vec<SplitItem> = (0..10)
        .map(|r| SplitItem {
            roi_id: format!("twin{r}"),
            counts: items[0].counts.clone(),
        })
        .collect();
    let flat = split_items(
        &twins,
        &SplitConfig {
            iterations: 20,
            ..cfg
        },
    )
    .map_err(|e| e.to_string())?;
    check(
        flat.trace.iter().all(|&d| d == 0.0),
        "identical regions give nonzero d",
    )?;
    Ok(format!(
        "d = {:.4} = min(trace), median {median:.4}",
        res.dissimilarity
    ))
}

fn scene(size: usize, coverage: (f64, f64)) -> SceneConfig {
    SceneConfig {
        size,
        coverage_min: coverage.0,
        coverage_max: coverage.1,
        ..Default::default()
    }
}

fn rois(count: u64, cfg: &SceneConfig, seed: u64) -> Vec<RoiSeries> {
    (0..count)
        .map(|i| synth_scene(format!("r{i}"), seed + i, cfg).unwrap())
        .collect()
}

fn overfit_contracts() -> Outcome {
    // ConvLSTM on one clean 32×32 sequence.
    let one = &rois(1, &scene(32, (0.0, 0.0)), 60)[0];
    let sample = [SequenceSample::new(&one.optical[..3], &one.optical[3])];
    let mut lstm = ConvLstm::new(ConvLstmConfig {
        width: 32,
        height: 32,
        hidden: vec![8, 8],
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = ConvLstmTrainConfig {
        max_epochs: 500,
        early_stopping_patience: 500,
        ..Default::default()
    };
    let history =
        train_convlstm(&mut lstm, &sample, &[], &cfg, |_| {}).map_err(|e| e.to_string())?;
    let huber = evaluate_loss(&lstm, &sample, &cfg.huber).map_err(|e| e.to_string())?;
    check(
        huber < 1e-3,
        format!(
            "ConvLSTM Huber {huber:.2e} after {} epochs",
            history.epochs.len()
        ),
    )?;

    // Generator on 8 pairs.
    let pairs: Vec<CganSample> = rois(8, &scene(32, (0.0, 0.0)), 70)
        .iter()
        .map(|r| CganSample {
            sar: r.sar[0].clone(),
            optical: r.optical[0].clone(),
        })
        .collect();
    let mut cgan = CganModels::new(
        GeneratorConfig {
            width: 32,
            height: 32,
            base_filters: 16,
            ..Default::default()
        },
        DiscriminatorConfig {
            width: 32,
            height: 32,
            base_filters: 16,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let gcfg = CganTrainConfig {
        steps: 2000,
        batch_size: 8,
        ..Default::default()
    };
    let mut steps = 0;
    train_cgan(&mut cgan, &pairs, &gcfg, |r| steps = r.step + 1).map_err(|e| e.to_string())?;
    let l1 = generator_l1(&cgan.generator, &pairs).map_err(|e| e.to_string())?;
    check(
        l1 < 0.05,
        format!("generator L1 {l1:.4} after {steps} steps"),
    )?;

    // Head on clean embeddings, |C| = 16.
    let truth: Vec<OpticalImage> = rois(4, &scene(32, (0.0, 0.0)), 80)
        .into_iter()
        .map(|r| r.optical[3].clone())
        .collect();
    let data: Vec<HeadSample> = truth
        .iter()
        .map(|t| HeadSample::new(t, t, t, 16).unwrap())
        .collect();
    let mut head = HeadModel::new(HeadConfig {
        width: 32,
        height: 32,
        classes: 16,
        base_filters: 8,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    train_head(
        &mut head,
        &data,
        &HeadTrainConfig {
            epochs: 30,
            ..Default::default()
        },
        |_| {},
    )
    .map_err(|e| e.to_string())?;
    let acc = pixel_accuracy(&head, &data).map_err(|e| e.to_string())?;
    check(acc > 0.95, format!("head accuracy {acc:.3}"))?;
    Ok(format!(
        "ConvLSTM Huber {huber:.1e} ({} epochs), generator L1 {l1:.4} ({steps} steps), head accuracy {acc:.3}",
        history.epochs.len()
    ))
}

fn end_to_end() -> Outcome {
    let size = 64;
    let classes = 16;
    let corpus = rois(16, &scene(size, (0.5, 0.8)), 100);
    let (train, test) = corpus.split_at(12);
    let window = |r: &RoiSeries| TemporalSequence::monthly(r.cloudy[..3].to_vec()).unwrap();

    let seqs: Vec<SequenceSample> = train
        .iter()
        .map(|r| SequenceSample::new(&r.cloudy[..3], &r.optical[3]))
        .collect();
    let mut lstm = ConvLstm::new(ConvLstmConfig {
        width: size,
        height: size,
        hidden: vec![12, 12],
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let lcfg = ConvLstmTrainConfig {
        max_epochs: 20,
        ..Default::default()
    };
    train_convlstm(&mut lstm, &seqs, &[], &lcfg, |_| {}).map_err(|e| e.to_string())?;

    let pairs: Vec<CganSample> = train
        .iter()
        .flat_map(|r| {
            r.sar
                .iter()
                .zip(&r.optical)
                .map(|(sar, optical)| CganSample {
                    sar: sar.clone(),
                    optical: optical.clone(),
                })
        })
        .collect();
    let mut cgan = CganModels::new(
        GeneratorConfig {
            width: size,
            height: size,
            base_filters: 16,
            ..Default::default()
        },
        DiscriminatorConfig {
            width: size,
            height: size,
            base_filters: 16,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let gcfg = CganTrainConfig {
        steps: 300,
        batch_size: 16,
        ..Default::default()
    };
    train_cgan(&mut cgan, &pairs, &gcfg, |_| {}).map_err(|e| e.to_string())?;

    let head_data: Vec<HeadSample> = train
        .iter()
        .map(|r| {
            let y_hat = convlstm_forward(&window(r), &lstm).unwrap();
            let z_hat = generator_forward(&r.sar[3], &cgan.generator, false).unwrap();
            HeadSample::new(&z_hat, &y_hat, &r.optical[3], classes).unwrap()
        })
        .collect();
    let mut head = HeadModel::new(HeadConfig {
        width: size,
        height: size,
        classes,
        base_filters: 8,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let hcfg = HeadTrainConfig {
        epochs: 40,
        lr: 2e-3,
        ..Default::default()
    };
    train_head(&mut head, &head_data, &hcfg, |_| {}).map_err(|e| e.to_string())?;

    let models = PlfmModels::new(lstm, cgan.generator, head).map_err(|e| e.to_string())?;
    let (mut fused_psnr, mut fused_ssim, mut cloudy_psnr, mut cloudy_ssim) = (0.0, 0.0, 0.0, 0.0);
    let raw_cfg = EvalConfig {
        csc_radius: None,
        ..Default::default()
    };
    for r in test {
        let fused = plfm_infer(&window(r), &r.sar[3], &models).map_err(|e| e.to_string())?;
        let gt = &r.optical[3].raster;
        let n = test.len() as f64;
        fused_psnr += metrics::psnr(gt, &fused.raster).map_err(|e| e.to_string())? / n;
        fused_ssim += metrics::ssim(gt, &fused.raster, 1.0).map_err(|e| e.to_string())? / n;
        cloudy_psnr += metrics::psnr(gt, &r.cloudy[3].raster).map_err(|e| e.to_string())? / n;
        cloudy_ssim += metrics::ssim(gt, &r.cloudy[3].raster, 1.0).map_err(|e| e.to_string())? / n;
        let raw = metrics::evaluate(&fused.raster, gt, &raw_cfg).map_err(|e| e.to_string())?;
        let csc = metrics::evaluate(&fused.raster, gt, &EvalConfig::default())
            .map_err(|e| e.to_string())?;
        for id in MetricId::ALL {
            check(
                improves(id, csc.get(id), raw.get(id)),
                format!(
                    "{}: CSC {} worse than raw {}",
                    id.name(),
                    csc.get(id),
                    raw.get(id)
                ),
            )?;
        }
    }
    let summary = format!(
        "PSNR {fused_psnr:.2} vs cloudy {cloudy_psnr:.2} dB, SSIM {fused_ssim:.3} vs cloudy {cloudy_ssim:.3}"
    );
    check(
        fused_psnr >= cloudy_psnr + 6.0,
        format!("PSNR margin too small: {summary}"),
    )?;
    check(
        fused_ssim >= cloudy_ssim + 0.1,
        format!("SSIM margin too small: {summary}"),
    )?;
    Ok(summary)
}

fn bucketing() -> Outcome {
    let labels: Vec<&str> = CoverageBucket::ALL.iter().map(|b| b.label()).collect();
    check(
        labels == ["<=20%", "20-50%", "50-80%", "80-100%"],
        format!("labels {labels:?}"),
    )?;
    for (cov, want) in [
        (0.0, CoverageBucket::UpTo20),
        (0.2, CoverageBucket::UpTo20),
        (0.2001, CoverageBucket::UpTo50),
        (0.5, CoverageBucket::UpTo50),
        (0.5001, CoverageBucket::UpTo80),
        (0.8, CoverageBucket::UpTo80),
        (0.8001, CoverageBucket::UpTo100),
        (1.0, CoverageBucket::UpTo100),
    ] {
        check(
            CoverageBucket::of(cov) == want,
            format!("coverage {cov} in {:?}", CoverageBucket::of(cov)),
        )?;
    }
    let corpus = rois(12, &scene(32, (0.0, 1.0)), 200);
    let cfg = EvalConfig::default();
    let mut rows: Vec<EvalRow> = Vec::new();
    for r in &corpus {
        for t in 0..r.optical.len() {
            let row = evaluate_pair(
                &format!("{}_t{t}", r.roi_id),
                &r.cloudy[t],
                &r.optical[t],
                r.coverage(t),
                &cfg,
            )
            .map_err(|e| e.to_string())?;
            rows.push(row);
        }
    }
    let summary = summarize(&rows);
    check(
        summary.len() == 4,
        format!("{} bucket rows from {} images", summary.len(), rows.len()),
    )?;
    for s in &summary {
        let members: Vec<&EvalRow> = rows
            .iter()
            .filter(|r| CoverageBucket::of(r.coverage) == s.bucket)
            .collect();
        check(s.count == members.len(), "bucket count")?;
        let mean =
            members.iter().map(|r| r.get(MetricId::Psnr)).sum::<f64>() / members.len() as f64;
        check(
            (s.get(MetricId::Psnr) - mean).abs() < 1e-9,
            format!("{} mean PSNR", s.bucket),
        )?;
    }
    let counts: Vec<String> = summary
        .iter()
        .map(|s| format!("{} {}", s.bucket, s.count))
        .collect();
    Ok(counts.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("metric oracles", metric_oracles, Duration::from_secs(10)),
        ("shift compensation", csc_recovery, Duration::from_secs(30)),
        ("gradient checks", gradient_checks, Duration::from_secs(120)),
        ("scalar LSTM degeneracy", lstm_degeneracy, Duration::MAX),
        (
            "histogram-matched split",
            planted_split,
            Duration::from_secs(60),
        ),
        (
            "branch overfit",
            overfit_contracts,
            Duration::from_secs(20 * 60),
        ),
        (
            "end-to-end desk run",
            end_to_end,
            Duration::from_secs(45 * 60),
        ),
        ("coverage buckets", bucketing, Duration::MAX),
    ];
    let mut failed = 0;
    for (n, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over the {budget:?} budget")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {}: {tag} {name}: {detail} [{:.1}s]",
            n + 1,
            elapsed.as_secs_f64()
        );
        failed += usize::from(outcome.is_err());
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
