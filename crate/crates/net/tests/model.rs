use candle_core::{DType, Device, Tensor};
use depthbins::data::{synth_scene, RdChoice};
use depthbins::domains::fuse_bins;
use depthbins::maps::RgbImage;
use depthbins_net::config::{BinMode, HeadVariant, RunConfig};
use depthbins_net::model::Model;
use depthbins_net::objectives::{batch_loss, LossConfig};
use depthbins_net::params::save_checkpoint;
use depthbins_net::pipeline::{make_batch, prepare, synth_template, PreparedSample};

fn tiny() -> RunConfig {
    RunConfig {
        n_bins: 8,
        base_channels: 4,
        decoder_channels: 8,
        pst_dim: 16,
        pst_heads: 2,
        pst_patch_sizes: vec![1, 2],
        ..RunConfig::toy()
    }
}

fn samples(cfg: &RunConfig, n: usize) -> Vec<PreparedSample> {
    let t = synth_template(cfg).unwrap();
    let (fov, rds) = (cfg.fov().unwrap(), cfg.range_set().unwrap());
    (0..n)
        .map(|i| {
            let s = synth_scene(&t.with_seed(100 + i as u64, RdChoice::Index(1 + i % cfg.k_domains))).unwrap();
            prepare(&s, &fov, &rds, cfg.label_percentile).unwrap()
        })
        .collect()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

#[test]
fn stage_resolutions_follow_the_floor_schedule() {
    for (h, w) in [(64, 64), (72, 100)] {
        let cfg = RunConfig {
            input_h: h,
            input_w: w,
            ..tiny()
        };
        let model = Model::new(&cfg.model(), 0, DType::F32).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 3, h, w), &Device::Cpu).unwrap();
        let out = model.forward(&x).unwrap();
        assert_eq!(out.stage_depths.len(), 5);
        for (s, d) in out.stage_depths.iter().enumerate() {
            let f = 1 << (5 - s);
            assert_eq!(d.dims(), &[2, h / f, w / f]);
        }
        let pyr = model.backbone_forward(&x).unwrap();
        for s in 1..=5 {
            let f = 1 << (6 - s);
            assert_eq!(&pyr.stage(s).dims()[2..], &[h / f, w / f]);
        }
        assert_eq!(out.full_depth.dims(), &[2, h, w]);
    }
}

#[test]
fn wrong_input_size_is_rejected() {
    let model = Model::new(&tiny().model(), 0, DType::F32).unwrap();
    let x = Tensor::zeros((1, 3, 32, 64), DType::F32, &Device::Cpu).unwrap();
    assert!(model.forward(&x).is_err());
}

#[test]
fn every_stage_stays_inside_the_center_hull() {
    let cfg = tiny();
    let model = Model::new(&cfg.model(), 3, DType::F64).unwrap();
    let x = Tensor::randn(0f64, 2.0, (3, 3, 64, 64), &Device::Cpu).unwrap();
    let out = model.forward(&x).unwrap();
    let centers = out.fused.to_vec2::<f64>().unwrap();
    for d in &out.stage_depths {
        for (b, c) in centers.iter().enumerate() {
            let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in flat(&d.get(b).unwrap()) {
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{v} outside [{lo}, {hi}]");
            }
        }
    }
}

#[test]
fn head_variants_share_every_shape() {
    let x = Tensor::randn(0f32, 1.0, (2, 3, 64, 64), &Device::Cpu).unwrap();
    let shapes = |v: HeadVariant| {
        let cfg = RunConfig {
            head_variant: v,
            ..tiny()
        };
        let out = Model::new(&cfg.model(), 0, DType::F32).unwrap().forward(&x).unwrap();
        let mut s: Vec<Vec<usize>> = out.stage_depths.iter().map(|t| t.dims().to_vec()).collect();
        s.extend(out.stage_probs.iter().map(|t| t.dims().to_vec()));
        s.push(out.bank.dims().to_vec());
        s.push(out.fused.dims().to_vec());
        s.push(out.domain_probs.dims().to_vec());
        s.push(out.full_depth.dims().to_vec());
        s
    };
    let base = shapes(HeadVariant::SharedFfn);
    assert_eq!(base[10], vec![2, 4, 8]);
    for v in HeadVariant::ALL {
        assert_eq!(shapes(v), base, "{}", v.label());
    }
}

#[test]
fn forward_is_deterministic_and_consistent_with_fusion() {
    for mode in [BinMode::Variation, BinMode::Width] {
        let cfg = RunConfig { bin_mode: mode, ..tiny() };
        let model = Model::new(&cfg.model(), 1, DType::F32).unwrap();
        let s = &samples(&cfg, 1)[0];
        let a = model.forward_sample(&s.aligned).unwrap();
        let b = model.forward_sample(&s.aligned).unwrap();
        assert_eq!(a.full_depth, b.full_depth);
        assert_eq!(a.fused_centers, b.fused_centers);
        assert!(a.domain_probs.is_simplex(1e-5));
        let again = fuse_bins(&a.bin_bank, &a.domain_probs).unwrap();
        for (x, y) in again.centers.iter().zip(&a.fused_centers.centers) {
            assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()), "{x} vs {y}");
        }
        assert_eq!(a.bin_bank.k_count(), cfg.k_domains);
        assert_eq!(a.stage_depths.len(), 5);
        assert_eq!(a.final_probs.n_bins, cfg.n_bins);
        assert!(a.final_probs.is_normalized(1e-4));
    }
}

#[test]
fn zero_image_gives_finite_outputs() {
    let model = Model::new(&tiny().model(), 0, DType::F32).unwrap();
    let x = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
    for f in &model.backbone_forward(&x).unwrap().features {
        assert!(flat(f).iter().all(|v| v.is_finite()));
    }
    let out = model.forward(&x).unwrap();
    assert!(flat(&out.full_depth).iter().all(|v| v.is_finite()));
}

#[test]
fn mirror_prediction_is_the_flip_average() {
    let cfg = tiny();
    let model = Model::new(&cfg.model(), 2, DType::F32).unwrap();
    let s = &samples(&cfg, 1)[0];
    let a = model.forward_sample(&s.aligned).unwrap().full_depth;
    let b = model.forward_sample(&s.aligned.hflip()).unwrap().full_depth.hflip();
    let m = model.predict_with_mirror(&s.aligned).unwrap();
    for i in 0..m.depth.len() {
        let want = (0.5 * (a.depth[i] + b.depth[i])).max(1e-3);
        assert!((m.depth[i] - want).abs() <= 1e-4 * (1.0 + want.abs()));
        assert_eq!(m.valid[i], a.valid[i] && b.valid[i]);
    }
}

#[test]
fn mirror_prediction_of_a_symmetric_image_is_symmetric() {
    let cfg = tiny();
    let model = Model::new(&cfg.model(), 2, DType::F32).unwrap();
    let mut s = samples(&cfg, 1).remove(0);
    let mut img = s.aligned.image.clone();
    let w = img.width;
    for y in 0..img.height {
        for x in w / 2..w {
            let p = img.pixel(w - 1 - x, y);
            img.set_pixel(x, y, p);
        }
    }
    s.aligned.image = RgbImage::new(w, img.height, img.data).unwrap();
    let m = model.predict_with_mirror(&s.aligned).unwrap();
    let f = m.hflip();
    for (x, y) in m.depth.iter().zip(&f.depth) {
        assert!((x - y).abs() <= 1e-4 * (1.0 + x.abs()));
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = tiny();
    let model = Model::new(&cfg.model(), 9, DType::F32).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &serde_json::to_value(&cfg).unwrap(), 3, model.params()).unwrap();
    let (loaded, run) = Model::load(&path, Some(&cfg.model())).unwrap();
    assert_eq!(run, cfg);
    let s = &samples(&cfg, 1)[0];
    assert_eq!(
        model.forward_sample(&s.aligned).unwrap().full_depth,
        loaded.forward_sample(&s.aligned).unwrap().full_depth
    );
    let other = RunConfig { n_bins: 16, ..cfg };
    let err = Model::load(&path, Some(&other.model())).err().expect("mismatch must fail");
    assert!(err.to_string().contains("architecture mismatch"), "{err}");
}

/// Central differences of the training loss against backprop, float64,
/// on a 2-sample batch, for a probe subset of parameters in every block.
#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let cfg = tiny();
    let model = Model::new(&cfg.model(), 5, DType::F64).unwrap();
    let data = samples(&cfg, 2);
    let refs: Vec<&PreparedSample> = data.iter().collect();
    let (images, targets) = make_batch(&model, &refs, cfg.chamfer_cap, 0).unwrap();
    let loss_cfg = LossConfig::from_run(&cfg);
    let loss = || {
        let out = model.forward(&images).unwrap();
        batch_loss(&out, &targets, &loss_cfg).unwrap()
    };
    let (total, _) = loss();
    let grads = total.backward().unwrap();

    let probes = [
        "backbone.0.merge.weight",
        "backbone.4.conv.weight",
        "pst.p1.layer0.attn.q.weight",
        "pst.p2.embed.weight",
        "pst.queries",
        "bin_head.ffn0.fc2.bias",
        "domain_head.weight",
        "decoder.s1.compress.weight",
        "decoder.s3.res1.weight",
        "decoder.s5.compress.bias",
    ];
    let h = 1e-4;
    let mut checked = 0;
    for name in probes {
        let var = model.params().var(name).unwrap_or_else(|| panic!("no parameter {name}"));
        let base = var.as_tensor().copy().unwrap();
        let shape = base.dims().to_vec();
        let values = flat(&base);
        let g = flat(&grads.get(var.as_tensor()).unwrap_or_else(|| panic!("no gradient for {name}")));
        // the entries with the largest gradient are least affected by noise
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|a, b| g[*b].abs().total_cmp(&g[*a].abs()));
        for &i in order.iter().take(2) {
            let eval_at = |delta: f64| {
                let mut v = values.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, shape.as_slice(), &Device::Cpu).unwrap()).unwrap();
                loss().1.total
            };
            let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            var.set(&base).unwrap();
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-2, "{name}[{i}]: backprop {} vs fd {fd} (rel {rel})", g[i]);
            checked += 1;
        }
    }
    assert_eq!(checked, 2 * probes.len());
}
