use patchforge::nn::{conv2d, ConvSpec};
use patchforge::tensor::{tape, Fill, Tensor};
use std::time::Instant;

#[test]
fn bench_refinenet_shapes() {
    // RefineNet conv stack on a batch of 16 at 128x128.
    let shapes: Vec<(usize, usize, usize)> = vec![
        (3, 16, 128),
        (16, 32, 64),
        (32, 64, 32),
        (64, 64, 16),
        (64, 128, 8),
        (128, 128, 4),
    ];
    let n = 16;
    let mut total_macs = 0f64;
    let t0 = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        tape::begin::<f32>();
        let mut loss_parts = Vec::new();
        for &(ci, co, s) in &shapes {
            let x = Tensor::<f32>::filled(vec![n, ci, s, s], Fill::Uniform { lo: -1.0, hi: 1.0, seed: 1 }).unwrap();
            let w = Tensor::<f32>::filled(vec![co, ci, 3, 3], Fill::Normal { mean: 0.0, std: 0.1, seed: 2 }).unwrap().requires_grad(true);
            let spec = ConvSpec::same(ci, co, 3, 1).with_bias(false);
            let y = conv2d(&x, &w, None, &spec).unwrap();
            total_macs += (n * co * s * s * ci * 9) as f64;
            loss_parts.push(y.sum());
        }
        let mut acc = loss_parts.pop().unwrap();
        for p in loss_parts { acc = acc.add(&p).unwrap(); }
        tape::backward(&acc).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    // fwd + weight-grad (no input grad since x isn't a leaf): ~2x fwd MACs
    let flops = total_macs * 2.0 * 2.0;
    println!("elapsed {dt:.3}s  fwd-macs {total_macs:.3e}  approx GFLOP/s {:.2}", flops / dt / 1e9);
}
