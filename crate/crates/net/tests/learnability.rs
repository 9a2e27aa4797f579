//! The synthetic generator must be learnable from appearance alone: a
//! three-layer per-pixel regressor from color to log-depth, trained on 500
//! scenes, reaches REL < 0.15 on held-out scenes.

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use depthbins::data::{make_split, DepthSample, SynthConfig};
use depthbins::domains::partition_range;
use depthbins_net::ops::Linear;
use depthbins_net::params::ParamStore;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pixels(samples: &[DepthSample], per_image: Option<usize>, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<f32>) {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for s in samples {
        let mut idx: Vec<usize> = (0..s.depth.depth.len()).filter(|i| s.depth.valid[*i]).collect();
        if let Some(n) = per_image {
            idx.shuffle(rng);
            idx.truncate(n);
        }
        for i in idx {
            x.extend(s.rgb.data[3 * i..3 * i + 3].iter().map(|v| v / 255.0));
            y.push(s.depth.depth[i].ln());
        }
    }
    (x, y)
}

#[test]
fn per_pixel_regressor_learns_the_generator() {
    let template = SynthConfig::new(partition_range(0.0, 80.0, 4).unwrap());
    let split = make_split(&template, 500, 50, &[0.25; 4]).unwrap();
    let gen = |e: &[depthbins::data::SynthEntry]| -> Vec<DepthSample> {
        e.iter().map(|e| split.generate(e).unwrap()).collect()
    };
    let (train, test) = (gen(&split.train), gen(&split.test));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (tx, ty) = pixels(&train, Some(64), &mut rng);
    let n = ty.len();
    let dev = Device::Cpu;
    let x = Tensor::from_vec(tx, (n, 3), &dev).unwrap();
    let y = Tensor::from_vec(ty, (n, 1), &dev).unwrap();

    let mut ps = ParamStore::new(0, DType::F32, dev.clone());
    let layers = [
        Linear::with_init(&mut ps, "l1", 3, 64, depthbins_net::params::Init::He(3), depthbins_net::params::Init::Zeros).unwrap(),
        Linear::with_init(&mut ps, "l2", 64, 64, depthbins_net::params::Init::He(64), depthbins_net::params::Init::Zeros).unwrap(),
        Linear::new(&mut ps, "l3", 64, 1).unwrap(),
    ];
    let forward = |x: &Tensor| {
        let h = layers[0].forward(x).unwrap().relu().unwrap();
        let h = layers[1].forward(&h).unwrap().relu().unwrap();
        layers[2].forward(&h).unwrap()
    };
    let mut opt = AdamW::new(
        ps.vars(),
        ParamsAdamW {
            lr: 3e-3,
            weight_decay: 0.0,
            ..Default::default()
        },
    )
    .unwrap();
    let batch = 1024;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..30 {
        order.shuffle(&mut rng);
        if epoch == 20 {
            opt.set_learning_rate(5e-4);
        }
        for chunk in order.chunks(batch) {
            let idx = Tensor::from_vec(chunk.iter().map(|i| *i as u32).collect::<Vec<_>>(), chunk.len(), &dev).unwrap();
            let pred = forward(&x.index_select(&idx, 0).unwrap());
            let loss = (pred - y.index_select(&idx, 0).unwrap()).unwrap().sqr().unwrap().mean_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
    }

    let (vx, vy) = pixels(&test, None, &mut rng);
    let m = vy.len();
    let pred = forward(&Tensor::from_vec(vx, (m, 3), &dev).unwrap()).flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let rel = pred
        .iter()
        .zip(&vy)
        .map(|(p, g)| ((p.exp() - g.exp()) / g.exp()).abs() as f64)
        .sum::<f64>()
        / m as f64;
    assert!(rel < 0.15, "held-out REL {rel}");
}
