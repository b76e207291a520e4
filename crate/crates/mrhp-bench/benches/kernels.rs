//! Quick throughput probe for the matmul kernel (criterion harness added later).

use std::time::Instant;

fn main() {
    // rough GFLOPs probe at model-typical shapes
    for &(m, k, n) in &[(8usize, 128usize, 128usize), (16, 128, 128), (128, 128, 128), (300, 128, 128)] {
        let a: Vec<f64> = (0..m * k).map(|i| (i % 7) as f64 * 0.1).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i % 5) as f64 * 0.1).collect();
        let start = Instant::now();
        let mut sink = 0.0;
        let reps = (2_000_000_000 / (2 * m * k * n)).max(1);
        for _ in 0..reps {
            let mut out = vec![0.0f64; m * n];
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    let brow = &b[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            sink += out[0];
        }
        let secs = start.elapsed().as_secs_f64();
        let gflops = (reps as f64 * 2.0 * (m * k * n) as f64) / secs / 1e9;
        println!("{m}x{k}x{n}: {gflops:.2} GFLOP/s (sink {sink:.1})");
    }
}
