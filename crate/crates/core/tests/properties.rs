//! Randomized invariant checks over the public API.

use num_complex::Complex64;
use proptest::prelude::*;

use s2p2_core::events::{load_jsonl, save_jsonl, Dataset, EventSequence};
use s2p2_core::llh::{discretize, effective_lambda, evolve_state, LlhLayerParams, ZohMode};
use s2p2_core::model::{S2P2Config, S2P2Model};
use s2p2_core::rng::CounterRng;
use s2p2_core::scan::{scan_parallel, scan_sequential};
use s2p2_core::train::{clip_global_norm, learning_rate, TrainConfig};
use s2p2_core::autodiff::Tape;

fn complex_inputs(
    max_n: usize,
    max_p: usize,
) -> impl Strategy<Value = (usize, Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> {
    (1..=max_n, 1..=max_p, any::<u64>()).prop_map(|(n, p, seed)| {
        let mut rng = CounterRng::new(seed);
        let mut a = Vec::with_capacity(n * p);
        let mut b = Vec::with_capacity(n * p);
        for _ in 0..n * p {
            let modulus = rng.uniform_in(0.05, 0.98);
            let phase = rng.uniform_in(-3.1, 3.1);
            a.push(Complex64::from_polar(modulus, phase));
            b.push(Complex64::new(rng.normal(0.0, 0.5), rng.normal(0.0, 0.5)));
        }
        let x0 = (0..p)
            .map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)))
            .collect();
        (p, a, b, x0)
    })
}

fn random_sequence(k: u32, max_events: usize) -> impl Strategy<Value = EventSequence> {
    (0..=max_events, any::<u64>()).prop_map(move |(n, seed)| {
        let mut rng = CounterRng::new(seed);
        let mut t = 0.0;
        let mut times = Vec::with_capacity(n);
        let mut marks = Vec::with_capacity(n);
        for _ in 0..n {
            t += rng.uniform_in(0.01, 1.5);
            times.push(t);
            marks.push(rng.below(k as u64) as u32);
        }
        let t_end = t + rng.uniform_in(0.1, 2.0);
        EventSequence::new(times, marks, 0.0, t_end).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scan_kernels_agree_on_stable_inputs((_p, a, b, x0) in complex_inputs(600, 4)) {
        let seq = scan_sequential(&a, &b, &x0);
        let par = scan_parallel(&a, &b, &x0);
        for (s, q) in seq.iter().zip(&par) {
            prop_assert!((s - q).norm() < 1e-10, "{s} vs {q}");
        }
    }

    #[test]
    fn sequential_scan_is_the_direct_recurrence((p, a, b, x0) in complex_inputs(200, 3)) {
        let out = scan_sequential(&a, &b, &x0);
        let n = a.len() / p;
        let mut state = x0.clone();
        for i in 0..n {
            for j in 0..p {
                state[j] = a[i * p + j] * state[j] + b[i * p + j];
                prop_assert!((state[j] - out[i * p + j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rng_substreams_are_stable_and_shuffles_permute(seed in any::<u64>(), s in 0u64..1000) {
        let a = CounterRng::new(seed).substream(s).uniform();
        let mut burned = CounterRng::new(seed);
        for _ in 0..5 {
            burned.uniform();
        }
        // Substream derivation depends only on the seed path, not on how
        // much the parent has already produced.
        prop_assert_eq!(a, burned.substream(s).uniform());
        prop_assert!((0.0..1.0).contains(&a));

        let mut xs: Vec<u32> = (0..50).collect();
        CounterRng::new(seed).shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
    }

    #[test]
    fn schedule_stays_within_bounds_and_anneals_out(
        lr in 1e-5f64..1.0,
        warmup in 1e-3f64..0.999,
        total in 1u64..5000,
        probe in 1u64..5000,
    ) {
        let cfg = TrainConfig { lr, warmup_fraction: warmup, ..TrainConfig::default() };
        let iter = probe.min(total);
        let v = learning_rate(&cfg, iter, total);
        prop_assert!(v >= 0.0 && v <= lr * (1.0 + 1e-12));
        prop_assert!(learning_rate(&cfg, total, total) <= 1e-3 * lr);
    }

    #[test]
    fn clipping_caps_the_norm_and_keeps_direction(
        seed in any::<u64>(),
        n in 1usize..200,
        max_norm in 0.01f64..10.0,
    ) {
        let mut rng = CounterRng::new(seed);
        let g: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 3.0)).collect();
        let mut clipped = g.clone();
        let before = clip_global_norm(&mut clipped, max_norm);
        let after = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(after <= max_norm * (1.0 + 1e-12) + 1e-15);
        prop_assert!(after <= before * (1.0 + 1e-12));
        // Direction is preserved: each pair scales identically.
        if before > max_norm {
            let scale = max_norm / before;
            for (orig, new) in g.iter().zip(&clipped) {
                prop_assert!((new - orig * scale).abs() < 1e-12 * (1.0 + orig.abs()));
            }
        } else {
            prop_assert_eq!(&g, &clipped);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jsonl_roundtrip_is_bit_exact(
        seqs in proptest::collection::vec(random_sequence(3, 40), 0..6),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let data = Dataset::new(seqs, 3, "data").unwrap();
        save_jsonl(&data, &path).unwrap();
        let back = load_jsonl(&path).unwrap();
        prop_assert_eq!(back.num_marks(), 3);
        prop_assert_eq!(back.len(), data.len());
        for (x, y) in data.sequences().iter().zip(back.sequences()) {
            prop_assert_eq!(x.times(), y.times());
            prop_assert_eq!(x.marks(), y.marks());
            prop_assert!(x.t_end().to_bits() == y.t_end().to_bits());
            prop_assert!(x.t_start().to_bits() == y.t_start().to_bits());
        }
    }

    #[test]
    fn zero_gap_discretization_is_exactly_identity(
        seed in any::<u64>(),
        p in 1usize..6,
        rows in 1usize..8,
    ) {
        let layer = LlhLayerParams::init(p, 4, true, ZohMode::Backward, &mut CounterRng::new(seed));
        let tape = Tape::new_no_grad();
        let vars = layer.leaves(&tape);
        let mut rng = CounterRng::new(seed ^ 1);
        let u: Vec<f64> = (0..rows * 4).map(|_| rng.normal(0.0, 1.0)).collect();
        let u_mod = tape.constant_real(rows, 4, u);
        let lam = effective_lambda(&tape, &vars, &u_mod);
        let (bar, factor) = discretize(&tape, &lam, &vec![0.0; rows]);
        for z in bar.value().complex_data() {
            prop_assert!(z.re == 1.0 && z.im == 0.0);
        }
        for z in factor.value().complex_data() {
            prop_assert!(z.re == 0.0 && z.im == 0.0);
        }
    }

    #[test]
    fn evolution_composes_over_split_gaps(
        seed in any::<u64>(),
        d1 in 0.0f64..2.0,
        d2 in 0.0f64..2.0,
    ) {
        let (p, h, rows) = (5usize, 3usize, 4usize);
        let layer = LlhLayerParams::init(p, h, true, ZohMode::Backward, &mut CounterRng::new(seed));
        let tape = Tape::new_no_grad();
        let vars = layer.leaves(&tape);
        let mut rng = CounterRng::new(seed ^ 2);
        let held: Vec<f64> = (0..rows * h).map(|_| rng.normal(0.0, 1.0)).collect();
        let modu: Vec<f64> = (0..rows * h).map(|_| rng.normal(0.0, 1.0)).collect();
        let x: Vec<Complex64> = (0..rows * p)
            .map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)))
            .collect();
        let held = tape.constant_real(rows, h, held);
        let modu = tape.constant_real(rows, h, modu);
        let x = tape.constant(s2p2_core::autodiff::Value::complex(rows, p, x));
        let two_step = {
            let mid = evolve_state(&tape, &vars, &x, &vec![d1; rows], &held, &modu);
            evolve_state(&tape, &vars, &mid, &vec![d2; rows], &held, &modu)
        };
        let one_step = evolve_state(&tape, &vars, &x, &vec![d1 + d2; rows], &held, &modu);
        for (a, b) in two_step
            .value()
            .complex_data()
            .iter()
            .zip(one_step.value().complex_data())
        {
            prop_assert!((a - b).norm() < 1e-12 * (1.0 + b.norm()), "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn decomposition_identity_on_random_models(
        seed in any::<u64>(),
        k in 1usize..4,
        seq in random_sequence(1, 25),
    ) {
        // Remap single-mark draws onto k marks so the data always matches.
        let mut rng = CounterRng::new(seed ^ 3);
        let marks: Vec<u32> = seq.marks().iter().map(|_| rng.below(k as u64) as u32).collect();
        let seq = EventSequence::new(seq.times().to_vec(), marks, seq.t_start(), seq.t_end()).unwrap();
        let config = S2P2Config {
            num_marks: k,
            num_layers: 1 + (seed % 2) as usize,
            state_dim: 3,
            stream_dim: 3,
            input_dependent: seed % 3 == 0,
            zoh_mode: if seed % 2 == 0 { ZohMode::Backward } else { ZohMode::Forward },
        };
        let model = S2P2Model::init(config, seed);
        let ll = model.log_likelihood(&seq, 8, seed).unwrap();
        prop_assert!((ll.total - (ll.time + ll.mark)).abs() < 1e-9,
            "total {} vs time {} + mark {}", ll.total, ll.time, ll.mark);
        prop_assert_eq!(ll.num_events, seq.len());
    }

    #[test]
    fn padded_loss_is_bitwise_equal(
        seed in any::<u64>(),
        seq in random_sequence(2, 18),
        extra in 1usize..6,
    ) {
        let config = S2P2Config {
            num_marks: 2,
            num_layers: 2,
            state_dim: 3,
            stream_dim: 3,
            input_dependent: true,
            zoh_mode: ZohMode::Backward,
        };
        let model = S2P2Model::init(config, seed);
        let nll_with = |pad_to: usize| -> f64 {
            let tape = Tape::new_no_grad();
            let vars = model.leaves(&tape);
            let mut rng = CounterRng::new(41);
            let parts = model.nll_parts(&tape, &vars, &seq, 6, &mut rng, pad_to).unwrap();
            parts.integral.value().scalar_value()
                - parts.sum_log_mark.value().scalar_value()
        };
        let plain = nll_with(0);
        let padded = nll_with(seq.len() + extra);
        prop_assert!(plain.to_bits() == padded.to_bits(), "{plain} vs {padded}");
    }

    #[test]
    fn checkpoints_roundtrip_bitwise(
        seed in any::<u64>(),
        k in 1usize..4,
        l in 1usize..3,
        p in 1usize..5,
        h in 1usize..5,
    ) {
        let config = S2P2Config {
            num_marks: k,
            num_layers: l,
            state_dim: p,
            stream_dim: h,
            input_dependent: seed % 2 == 0,
            zoh_mode: ZohMode::Backward,
        };
        let model = S2P2Model::init(config, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save_checkpoint(&path).unwrap();
        let back = S2P2Model::load_checkpoint(&path).unwrap();
        prop_assert_eq!(&model.config, &back.config);
        for ((name, shape, data), (bname, bshape, bdata)) in
            model.tensors().iter().zip(back.tensors().iter())
        {
            prop_assert_eq!(name, bname);
            prop_assert_eq!(shape, bshape);
            for (x, y) in data.iter().zip(bdata.iter()) {
                prop_assert!(x.to_bits() == y.to_bits());
            }
        }
    }
}
