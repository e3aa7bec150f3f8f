use hetsense::sensing::batch_chunk_rng;
use std::time::Instant;

fn main() {
    let mut buf = vec![0.0f64; 10_000];
    let t0 = Instant::now();
    let mut sink = 0.0;
    for c in 0..8000u64 {
        let mut rng = batch_chunk_rng(1, c);
        hetsense::linalg::fill_standard_normal(&mut rng, &mut buf);
        sink += buf[0];
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("8e7 normal draws: {:.3}s ({:.2} ns/draw) [{sink:.3}]", dt, dt / 8e7 * 1e9);
}
