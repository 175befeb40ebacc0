use uipq_core::map_core::{extract_ball, schaeffer_forward, validate_ball};
use uipq_core::samplers::{RandomSource, UipqSampler};

#[test]
fn hidden_parts_do_not_change_the_ball() {
    for radius in 1..=2 {
        let sampler = UipqSampler::new(radius, 1e-2).unwrap();
        let mut checked = 0;
        for seed in 0..150u64 {
            let mut rng = RandomSource::child(11, seed);
            let reduced = sampler.sample(&mut rng.clone()).unwrap();
            // materializing everything costs about S^2 vertices
            if reduced.s > 600 {
                continue;
            }
            checked += 1;
            let full = sampler.sample_full(&mut rng, 3).unwrap();
            assert_eq!(reduced.code(), full.ball.code());
            assert_eq!(reduced.s, full.ball.s);
            validate_ball(&reduced.ball).unwrap();
            for t in &full.truncations[1..] {
                let b = extract_ball(&schaeffer_forward(t).unwrap().quad, radius);
                assert_eq!(b.code(), reduced.code(), "seed {seed}, radius {radius}");
            }
        }
        assert!(checked >= 100, "only {checked} draws small enough");
    }
}

#[test]
fn certificate_fields() {
    let sampler = UipqSampler::new(1, 1e-3).unwrap();
    assert!(sampler.eps_actual() <= 1e-3);
    let mut rng = RandomSource::new(3);
    let t0 = std::time::Instant::now();
    let mut aborted = 0;
    let mut horizon = 0;
    for _ in 0..2000 {
        let b = sampler.sample(&mut rng).unwrap();
        assert!(b.eps_actual <= 1e-3);
        aborted += b.aborted as usize;
        horizon += b.horizon;
    }
    eprintln!("y_cert {} cap {} eps {} aborted {aborted} mean horizon {} in {:?}", sampler.y_cert(), sampler.cap(), sampler.eps_actual(), horizon / 2000, t0.elapsed());
}
