use proptest::prelude::*;

use cqed_projection::cli::output::fmt_f64;
use cqed_projection::cli::{Mode, RunConfig};
use cqed_projection::mbe::{f_factor, mbe_rhs, DimensionlessParams, FMode, MBEState};
use cqed_projection::montecarlo::{dwell_statistics, histogram2d, GridSpec, Level, TrajectoryRecord};
use cqed_projection::sde::{
    heterodyne_diffusion, heterodyne_sim_step, homodyne_diffusion, homodyne_sim_step, purity, simulate_trajectory,
    NoiseStream, SDEConfig, SdeModel,
};
use cqed_projection::C64;

fn params() -> impl Strategy<Value = DimensionlessParams> {
    (0.1..20.0f64, 0.01..2.0f64, -2.0..2.0f64, -2.0..2.0f64, -15.0..15.0f64, -15.0..15.0f64)
        .prop_map(|(c, k, d, t, yr, yi)| DimensionlessParams::new(c, k, d, t, C64::new(yr, yi)).unwrap())
}

fn state() -> impl Strategy<Value = MBEState> {
    (-0.7..0.7f64, -0.7..0.7f64, -1.0..1.0f64, -10.0..10.0f64, -10.0..10.0f64)
        .prop_map(|(p_r, p_i, d, x_r, x_i)| MBEState { p_r, p_i, d, x_r, x_i })
}

/// A point on the purity shell `2 p_r^2 + 2 p_i^2 + D^2 = 1` with a field.
fn pure_state() -> impl Strategy<Value = MBEState> {
    (0.0..std::f64::consts::PI, 0.0..std::f64::consts::TAU, -10.0..10.0f64, -10.0..10.0f64).prop_map(
        |(theta, phi, x_r, x_i)| {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            MBEState {
                p_r: h * theta.sin() * phi.cos(),
                p_i: h * theta.sin() * phi.sin(),
                d: theta.cos(),
                x_r,
                x_i,
            }
        },
    )
}

fn record(xs: &[f64]) -> TrajectoryRecord {
    let mut r = TrajectoryRecord::new(FMode::Projected);
    for (i, &x) in xs.iter().enumerate() {
        r.push(i as f64 * 0.5, MBEState { x_r: x, x_i: -x / 2.0, ..MBEState::ground() });
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn f_factor_bounds_on_bloch_ball(s in state()) {
        prop_assume!(s.bloch_norm_sq() <= 1.0);
        let f = f_factor(&s);
        prop_assert!((1.0..=2.0).contains(&f));
    }

    #[test]
    fn f_is_one_on_pure_states(s in pure_state()) {
        prop_assert!((f_factor(&s) - 1.0).abs() < 1e-12);
        let p = DimensionlessParams::absorptive_bistability();
        let a = mbe_rhs(&s, &p, FMode::Projected);
        let b = mbe_rhs(&s, &p, FMode::Classical);
        prop_assert!(a.add_scaled(-1.0, &b).max_abs() < 1e-9);
    }

    /// The gradient of the purity along the homodyne noise is
    /// `4 p_r (Q - 1)`, so pure states stay on the shell to first order.
    #[test]
    fn homodyne_noise_is_tangent_to_purity_shell(s in state()) {
        let b = homodyne_diffusion(&s);
        let grad = [4.0 * s.p_r, 4.0 * s.p_i, 2.0 * s.d];
        let dq: f64 = grad.iter().zip(&b).map(|(g, v)| g * v).sum();
        prop_assert!((dq - 4.0 * s.p_r * (purity(&s) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn heterodyne_noise_is_tangent_to_purity_shell(s in pure_state()) {
        let (br, bi) = heterodyne_diffusion(&s);
        let grad = [4.0 * s.p_r, 4.0 * s.p_i, 2.0 * s.d];
        for b in [br, bi] {
            let dq: f64 = grad.iter().zip(&b).map(|(g, v)| g * v).sum();
            prop_assert!(dq.abs() < 1e-12);
        }
    }

    #[test]
    fn noise_degenerates_at_ground_state(x_r in -10.0..10.0f64, x_i in -10.0..10.0f64, p in params(),
                                         dw in -1.0..1.0f64, dw2 in -1.0..1.0f64) {
        let g = MBEState { x_r, x_i, ..MBEState::ground() };
        let a = homodyne_sim_step(&g, &p, dw, 1e-3);
        let b = homodyne_sim_step(&g, &p, 0.0, 1e-3);
        prop_assert_eq!(a, b);
        let c = heterodyne_sim_step(&g, &p, dw, dw2, 1e-3);
        prop_assert_eq!(c, b);
    }

    /// With zero noise both simulation models take the projected drift step.
    #[test]
    fn zero_noise_steps_follow_drift(s in state(), p in params(), dt in 1e-5..1e-2f64) {
        let want = s.add_scaled(dt, &mbe_rhs(&s, &p, FMode::Projected));
        let hom = homodyne_sim_step(&s, &p, 0.0, dt);
        let het = heterodyne_sim_step(&s, &p, 0.0, 0.0, dt);
        prop_assert!(hom.add_scaled(-1.0, &want).max_abs() < 1e-12);
        prop_assert!(het.add_scaled(-1.0, &want).max_abs() < 1e-12);
    }

    #[test]
    fn histogram_conserves_samples(xs in prop::collection::vec(-20.0..20.0f64, 0..200), burn in 0.0..30.0f64) {
        let r = record(&xs);
        let h = histogram2d(std::slice::from_ref(&r), &GridSpec::default(), burn).unwrap();
        let post = r.times.iter().filter(|t| **t >= burn).count() as u64;
        prop_assert_eq!(h.total_samples, post);
        prop_assert_eq!(h.counts.iter().sum::<u64>() + h.overflow, h.total_samples);
    }

    #[test]
    fn dwells_tile_the_record(xs in prop::collection::vec(0.0..10.0f64, 1..300)) {
        let r = record(&xs);
        let d = dwell_statistics(&r, 3.0, 6.0).unwrap();
        prop_assert_eq!(d.dwells.first().unwrap().start, r.times[0]);
        prop_assert_eq!(d.dwells.last().unwrap().end, *r.times.last().unwrap());
        for w in d.dwells.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(w[0].level != w[1].level);
        }
        for j in &d.jumps {
            prop_assert!(j.from != j.to && j.from != Level::Undetermined);
        }
        let total: f64 = d.dwells.iter().map(|w| w.end - w.start).sum();
        prop_assert!((total - (r.times.last().unwrap() - r.times[0])).abs() < 1e-9);
    }

    #[test]
    fn records_have_increasing_times_and_equal_lengths(seed in any::<u64>(), het in any::<bool>(),
                                                       stride in 1usize..20) {
        let model = if het { SdeModel::Heterodyne } else { SdeModel::Homodyne };
        let cfg = SDEConfig { sample_stride: stride, ..SDEConfig::new(1e-3, seed) };
        let p = DimensionlessParams::absorptive_bistability();
        let r = simulate_trajectory(model, &MBEState::ground(), &p, &cfg, 0.3, None).unwrap();
        prop_assert!(r.times.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(r.times.len(), r.states.len());
        prop_assert_eq!(r.times.len(), r.purity.len());
        let again = simulate_trajectory(model, &MBEState::ground(), &p, &cfg, 0.3, None).unwrap();
        prop_assert_eq!(r, again);
    }

    #[test]
    fn noise_is_a_function_of_seed_and_stream(seed in any::<u64>(), stream in 0u64..1000) {
        let mut a = NoiseStream::new(seed, stream, 1e-3);
        let mut b = NoiseStream::new(seed, stream, 1e-3);
        let mut c = NoiseStream::new(seed, stream + 1, 1e-3);
        let xa: Vec<f64> = (0..16).map(|_| a.next_increment()).collect();
        let xb: Vec<f64> = (0..16).map(|_| b.next_increment()).collect();
        let xc: Vec<f64> = (0..16).map(|_| c.next_increment()).collect();
        prop_assert_eq!(&xa, &xb);
        prop_assert_ne!(&xa, &xc);
    }

    #[test]
    fn floats_round_trip_through_output_format(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn run_config_round_trips(seed in any::<u64>(), dt in 1e-6..1.0f64, n_traj in 1usize..100) {
        let mut cfg = RunConfig::new(Mode::SdeRun);
        cfg.seed = seed;
        cfg.numerics.dt = dt;
        cfg.ensemble.n_traj = n_traj;
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
