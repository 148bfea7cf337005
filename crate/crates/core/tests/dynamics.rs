mod common;

use std::sync::Arc;

use common::{random_mlp, ou_init, ou_pot};
use fpesc_core::fields::{AffineField, VelocityField};
use fpesc_core::linalg;
use fpesc_core::oracle::{evolve_gaussian, OracleField};
use fpesc_core::selfcons::{
    estimate_r, init_state, state_velocity, state_velocity_full, trajectory_loss, Dynamics,
    GaussianInitial, IntegratorSpec,
};

fn ou_oracle(dt: f64) -> OracleField {
    let path = evolve_gaussian(
        &[-4.0, -4.0],
        &linalg::diag(&[0.7, 1.3]),
        &[4.0, 4.0],
        &linalg::diag(&[1.1, 0.9]),
        3.0,
        dt,
    )
    .unwrap();
    OracleField::new(Arc::new(path), ou_pot()).unwrap()
}

#[test]
fn leibniz_form_matches_index_explicit_form() {
    let dynamics = Dynamics::new(2);
    let f = random_mlp(&[8, 8], 3, 1.0);
    let pot = ou_pot();
    let mut s = init_state(&[0.4, -0.3], &ou_init()).unwrap();
    s.zeta1 = vec![0.3, -1.2];
    let z3 = [0.1, -0.2, 0.3, 0.05];
    let d = 2;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                s.zeta3[(i * d + j) * d + k] = z3[i + j + k];
            }
        }
    }
    let flat = dynamics.to_flat(&s);
    let mut explicit = vec![0.0; flat.len()];
    dynamics.velocity_flat(&f, &pot, 0.7, &flat, &mut explicit).unwrap();
    let jet = f.eval_jet(dynamics.forward_layout(), 0.7, &s.x).unwrap();
    let mut leibniz = vec![0.0; flat.len()];
    dynamics.velocity_leibniz(&jet, &flat, &mut leibniz);
    for (a, b) in explicit.iter().zip(&leibniz) {
        assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()), "{explicit:?} vs {leibniz:?}");
    }
    let full = state_velocity_full(&f, 0.7, &s).unwrap();
    let compact = state_velocity(&f, &pot, 0.7, &s).unwrap();
    for (a, b) in full.zeta3.iter().zip(&compact.zeta3) {
        assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()));
    }
}

#[test]
fn contracting_field_scales_zeta1_exponentially() {
    let f = AffineField::new(linalg::diag(&[-1.0, -1.0]), vec![0.0, 0.0]).unwrap();
    let dynamics = Dynamics::new(2);
    let pot = ou_pot();
    let init = GaussianInitial::new(vec![0.0, 0.0], linalg::diag(&[1.0, 1.0])).unwrap();
    let mut s = init_state(&[0.0, 0.0], &init).unwrap();
    s.zeta1 = vec![0.5, -0.25];
    let spec = IntegratorSpec::new(1e-2, 1.0).unwrap();
    let flat = dynamics.to_flat(&s);
    let (_, end) = dynamics_integrate(&dynamics, &f, &pot, &flat, &spec);
    let e = 1f64.exp();
    assert!((end[2] - 0.5 * e).abs() < 1e-9);
    assert!((end[3] + 0.25 * e).abs() < 1e-9);
}

fn dynamics_integrate(
    dynamics: &Dynamics,
    f: &dyn VelocityField,
    pot: &dyn fpesc_core::fields::DriftPotential,
    s0: &[f64],
    spec: &IntegratorSpec,
) -> (f64, Vec<f64>) {
    let n = dynamics.state_len();
    let mut s = s0.to_vec();
    let dt = spec.dt();
    let mut loss = 0.0;
    let mut ks = vec![vec![0.0; n]; 4];
    for step in 0..spec.n_steps() {
        let t = spec.time(step);
        let mut gs = [0.0; 4];
        let mut tmp = s.clone();
        for (stage, (c, tc)) in [(0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0)].iter().enumerate() {
            if stage > 0 {
                for q in 0..n {
                    tmp[q] = s[q] + c * dt * ks[stage - 1][q];
                }
            }
            gs[stage] = dynamics.velocity_flat(f, pot, t + tc * dt, &tmp, &mut ks[stage]).unwrap();
        }
        for q in 0..n {
            s[q] += dt / 6.0 * (ks[0][q] + 2.0 * ks[1][q] + 2.0 * ks[2][q] + ks[3][q]);
        }
        loss += dt / 6.0 * (gs[0] + 2.0 * gs[1] + 2.0 * gs[2] + gs[3]);
    }
    (loss, s)
}

#[test]
fn oracle_trajectory_tracks_gaussian_derivatives() {
    let f = ou_oracle(1e-2);
    let path = f.path().clone();
    let init = ou_init();
    let pot = ou_pot();
    let dynamics = Dynamics::new(2);
    let mut s = dynamics.to_flat(&init_state(&[-3.1, -5.0], &init).unwrap());
    let n = dynamics.state_len();
    let dt = 1e-2;
    let mut worst = [0.0f64; 3];
    for step in 0..300 {
        let t = step as f64 * dt;
        let st = dynamics.from_flat(&s, 0.0);
        let k = path.stamp(t).unwrap();
        let p = path.precision_at(k);
        let mu = path.mu_at(k);
        for i in 0..2 {
            let want = -(0..2).map(|j| p[i * 2 + j] * (st.x[j] - mu[j])).sum::<f64>();
            worst[0] = worst[0].max((st.zeta1[i] - want).abs());
            for j in 0..2 {
                worst[1] = worst[1].max((st.zeta2_at(i, j) + p[i * 2 + j]).abs());
            }
        }
        worst[2] = worst[2].max(st.zeta3.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut ks = vec![vec![0.0; n]; 4];
        let mut tmp = s.clone();
        for (stage, c) in [0.0, 0.5, 0.5, 1.0].iter().enumerate() {
            if stage > 0 {
                for q in 0..n {
                    tmp[q] = s[q] + c * dt * ks[stage - 1][q];
                }
            }
            dynamics.velocity_flat(&f, &pot, t + c * dt, &tmp, &mut ks[stage]).unwrap();
        }
        for q in 0..n {
            s[q] += dt / 6.0 * (ks[0][q] + 2.0 * ks[1][q] + 2.0 * ks[2][q] + ks[3][q]);
        }
    }
    assert!(worst[0] < 1e-6 && worst[1] < 1e-6 && worst[2] < 1e-8, "{worst:?}");
}

#[test]
fn oracle_loss_vanishes_and_is_reproducible() {
    let f = ou_oracle(1e-2);
    let spec = IntegratorSpec::new(1e-2, 3.0).unwrap();
    let init = ou_init();
    let pot = ou_pot();
    let (loss, _) = trajectory_loss(&f, &pot, &init, &[-4.5, -3.0], &spec).unwrap();
    assert!(loss < 1e-6, "{loss}");
    let (m1, _) = estimate_r(&f, &pot, &init, 4, 11, &spec).unwrap();
    let (m2, _) = estimate_r(&f, &pot, &init, 4, 11, &spec).unwrap();
    assert_eq!(m1.to_bits(), m2.to_bits());
}

#[test]
fn running_loss_is_monotone_and_symmetry_holds() {
    let f = random_mlp(&[8], 5, 1.0);
    let init = ou_init();
    let pot = ou_pot();
    let mut previous = 0.0;
    for t_end in [0.1, 0.2, 0.4] {
        let spec = IntegratorSpec::new(1e-2, t_end).unwrap();
        let (loss, end) = trajectory_loss(&f, &pot, &init, &[-4.0, -3.5], &spec).unwrap();
        assert!(loss >= previous);
        assert!(end.zeta2_asymmetry() == 0.0 && end.zeta3_asymmetry() == 0.0);
        previous = loss;
    }
}

#[test]
fn shifted_oracle_pays_offset_at_start() {
    // stationary problem: the oracle field is zero, so f = c is the shifted oracle
    let s = linalg::diag(&[1.1, 0.9]);
    let init = GaussianInitial::new(vec![4.0, 4.0], s.clone()).unwrap();
    let pot = ou_pot();
    let f = fpesc_core::fields::ConstantField::new(vec![0.6, 0.8]);
    let st = init_state(&[3.0, 5.0], &init).unwrap();
    let r = fpesc_core::selfcons::residual(&f, &pot, 0.0, &st).unwrap();
    assert!((r.delta0[0] - 0.6).abs() < 1e-14 && (r.delta0[1] - 0.8).abs() < 1e-14);
    assert!(r.delta1.iter().chain(&r.delta2).all(|v| v.abs() < 1e-14));
    let spec = IntegratorSpec::new(1e-2, 1.0).unwrap();
    let (l1, _) = trajectory_loss(&f, &pot, &init, &[3.0, 5.0], &spec).unwrap();
    let (l2, _) = trajectory_loss(&f, &pot, &init, &[3.0, 5.0], &spec).unwrap();
    assert!(l1 > 0.0);
    assert_eq!(l1.to_bits(), l2.to_bits());
}
