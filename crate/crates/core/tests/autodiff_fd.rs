//! Reverse-mode gradients against central differences.

use redip_core::engine::DenoisingEngine;
use redip_core::nets::{BiasFreeDenoiser, DipNetwork, DipTopology, DrunetConfig};
use redip_core::{Eager, Graph, Rng, Tape, Tensor64};

const H: f64 = 1e-6;

fn dip_loss(net: &DipNetwork<f64>, params: &[Tensor64], y: &Tensor64) -> f64 {
    let out = net.forward_graph(&Eager, params, net.z().clone()).unwrap();
    out.sub(y).unwrap().norm_sq()
}

fn perturbed(params: &[Tensor64], layer: usize, idx: usize, delta: f64) -> Vec<Tensor64> {
    let mut p = params.to_vec();
    let mut data = p[layer].data().to_vec();
    data[idx] += delta;
    p[layer] = Tensor64::from_vec(p[layer].shape(), data).unwrap();
    p
}

#[test]
fn dip_parameter_gradient_matches_central_differences() {
    let mut rng = Rng::new(21);
    let topology = DipTopology::UNet { widths: vec![4, 6] };
    let net = DipNetwork::<f64>::init(&mut rng, &[1, 8, 8], 3, topology).unwrap();
    let y: Tensor64 = rng.uniform(&[1, 8, 8], 0.0, 1.0).unwrap();

    let tape = Tape::new();
    let vars: Vec<_> = net.params().iter().map(|p| tape.param(p.clone())).collect();
    let z = tape.constant(net.z().clone());
    let out = net.forward_graph(&tape, &vars, z).unwrap();
    let loss = tape
        .sum_sq(&tape.sub(&out, &tape.constant(y.clone())).unwrap())
        .unwrap();
    let grads = tape.backward(&loss).unwrap();

    let params = net.params().to_vec();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..120 {
        let layer = (rng.next_u64() as usize) % params.len();
        let idx = (rng.next_u64() as usize) % params[layer].len();
        let fd = (dip_loss(&net, &perturbed(&params, layer, idx, H), &y)
            - dip_loss(&net, &perturbed(&params, layer, idx, -H), &y))
            / (2.0 * H);
        let g = grads.wrt(&vars[layer]).unwrap().data()[idx];
        let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
        // a kink of some ReLU inside the stencil gives one-sided slopes
        if err > 1e-4 {
            eprintln!("trial {trial}: layer {layer} idx {idx} tape {g} fd {fd}");
        }
        worst = worst.max(err);
        checked += 1;
    }
    assert_eq!(checked, 120);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn single_conv_gradient_is_closed_form() {
    // loss = |K * z - y|^2, dL/dK = 2 (K*z - y) correlated with z
    let mut rng = Rng::new(22);
    let net = DipNetwork::<f64>::init(&mut rng, &[1, 5, 5], 2, DipTopology::SingleConv { kernel: 1 }).unwrap();
    let y: Tensor64 = rng.uniform(&[1, 5, 5], 0.0, 1.0).unwrap();
    let tape = Tape::new();
    let k = tape.param(net.params()[0].clone());
    let out = net
        .forward_graph(&tape, std::slice::from_ref(&k), tape.constant(net.z().clone()))
        .unwrap();
    let loss = tape
        .sum_sq(&tape.sub(&out, &tape.constant(y.clone())).unwrap())
        .unwrap();
    let r = tape.value(&out).unwrap().sub(&y).unwrap();
    let g = tape.backward(&loss).unwrap();
    let g = g.wrt(&k).unwrap();
    for c in 0..2 {
        let want = 2.0 * r.inner(&net.z().channel(c).unwrap()).unwrap();
        assert!((g.data()[c] - want).abs() < 1e-12);
    }
}

#[test]
fn denoiser_vjp_matches_central_differences() {
    let cfg = DrunetConfig {
        in_channels: 1,
        out_channels: 1,
        widths: vec![3, 4],
        blocks_per_scale: 1,
        noise_map: false,
    };
    let mut rng = Rng::new(23);
    let net = BiasFreeDenoiser::<f64>::random(cfg, &mut rng).unwrap();
    let x: Tensor64 = rng.uniform(&[1, 6, 6], 0.0, 1.0).unwrap();
    let c: Tensor64 = rng.normal(&[1, 6, 6], 1.0).unwrap();
    let vjp = net.vjp(&x, &c).expect("denoiser provides a VJP").unwrap();
    let f = |x: &Tensor64| net.denoise(x).unwrap().inner(&c).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut d = vec![0.0; x.len()];
        d[i] = H;
        let d = Tensor64::from_vec(x.shape(), d).unwrap();
        let fd = (f(&x.add(&d).unwrap()) - f(&x.sub(&d).unwrap())) / (2.0 * H);
        worst = worst.max((fd - vjp.data()[i]).abs() / fd.abs().max(1e-2));
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}
