mod common;

use fpesc_core::domain::DomainMode;
use fpesc_core::eval::*;
use fpesc_core::exec::Sequential;
use fpesc_core::fields::{ConstantField, DriftPotential, VelocityField};
use rand::Rng;

#[test]
fn oracle_recovery_matches_analytic_density() {
    let oracle = common::ou_oracle(1e-3);
    let path = oracle.path().clone();
    let init = common::ou_init();
    let dom = DomainMode::free(2).unwrap();
    let grid = EvalGrid::new(0.1).unwrap();
    let pts = grid.subgrid(21).unwrap();
    let mut worst: f64 = 0.0;
    for &t in grid.stamps() {
        for x in &pts {
            let got = recover_log_density(&oracle, &init, &dom, t, x, 1e-2).unwrap();
            worst = worst.max((got - path.log_density(t, x).unwrap()).abs());
        }
    }
    assert!(worst < 1e-4, "max log-density error {worst:e}");
}

#[test]
fn score_error_of_oracle_vanishes() {
    let oracle = common::ou_oracle(1e-3);
    let path = oracle.path().clone();
    let pot = common::ou_pot();
    let grid = EvalGrid::new(0.4).unwrap();
    let (ls, per) = score_error_ls(&Sequential, &oracle, &path, &pot, &grid).unwrap();
    assert!(ls < 1e-10, "{ls:e}");
    assert_eq!(per.len(), 11);
}

/// `f* + c` for a constant `c`.
struct Shifted<'a, F>(&'a F, [f64; 2]);

impl<F: VelocityField> VelocityField for Shifted<'_, F> {
    fn dim(&self) -> usize {
        2
    }
    fn eval_jet(
        &self,
        layout: &std::sync::Arc<fpesc_core::jets::JetLayout>,
        t: f64,
        x: &[f64],
    ) -> fpesc_core::Result<fpesc_core::fields::FieldJet> {
        let jet = self.0.eval_jet(layout, t, x)?;
        let mut d = jet.derivs().to_vec();
        let len = layout.len();
        d[0] += self.1[0];
        d[len] += self.1[1];
        Ok(fpesc_core::fields::FieldJet::from_derivs(layout, d))
    }
}

#[test]
fn score_error_of_shifted_oracle_is_shift_norm() {
    let oracle = common::ou_oracle(1e-3);
    let path = oracle.path().clone();
    let pot = common::ou_pot();
    let grid = EvalGrid::new(0.4).unwrap();
    let c = [0.3, -1.2];
    let (ls, _) = score_error_ls(&Sequential, &Shifted(&oracle, c), &path, &pot, &grid).unwrap();
    assert!((ls - (c[0] * c[0] + c[1] * c[1])).abs() < 1e-12, "{ls}");
}

#[test]
fn zero_field_score_error_matches_monte_carlo() {
    let path = common::ou_path(1e-3);
    let pot = common::ou_pot();
    let grid = EvalGrid::new(0.1).unwrap();
    let zero = ConstantField::new(vec![0.0, 0.0]);
    let (ls, _) = score_error_ls(&Sequential, &zero, &path, &pot, &grid).unwrap();
    let coarse = EvalGrid::new(0.2).unwrap();
    let (ls_coarse, _) = score_error_ls(&Sequential, &zero, &path, &pot, &coarse).unwrap();
    assert!((ls - ls_coarse).abs() < 0.02 * ls);

    let mut rng = common::rng(11);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    let (mut sc, mut g) = ([0.0; 2], [0.0; 2]);
    for _ in 0..n {
        let k = rng.random_range(0..11usize);
        let x = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let stamp = path.stamp(grid.stamps()[k]).unwrap();
        path.score_at(stamp, &x, &mut sc);
        pot.grad(&x, &mut g);
        let v = (sc[0] + g[0]).powi(2) + (sc[1] + g[1]).powi(2);
        s += v;
        s2 += v * v;
    }
    let m = s / n as f64;
    let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
    assert!((ls - m).abs() < 3.0 * se, "grid {ls} mc {m} se {se}");
}

/// Gaussian mass of `[-w, w]²`.
fn box_mass(mu: &[f64], var: [f64; 2], w: f64) -> f64 {
    (0..2)
        .map(|i| {
            let s = (2.0 * var[i]).sqrt();
            0.5 * (libm::erf((w - mu[i]) / s) - libm::erf((-w - mu[i]) / s))
        })
        .product()
}

#[test]
fn density_error_of_trivial_estimates() {
    let path = common::ou_path(1e-3);
    let grid = EvalGrid::new(0.4).unwrap();
    let (zero, per) = density_error_ld(&Sequential, &|_, _: &[f64]| Ok(0.0), &path, &grid).unwrap();
    for (s, &t) in grid.stamps().iter().enumerate() {
        let sig = path.sigma(t).unwrap();
        // a grid sum integrates over cells centered on the nodes
        let w = 10.0 + 0.5 * grid.h();
        let mass = box_mass(path.mu(t).unwrap(), [sig[(0, 0)], sig[(1, 1)]], w);
        let want = mass / (grid.cell_volume() * grid.n_points() as f64);
        assert!((per[s] - want).abs() < 1e-8 * want, "stamp {t}: {} vs {want}", per[s]);
    }
    let stamps: Vec<usize> = grid.stamps().iter().map(|&t| path.stamp(t).unwrap()).collect();
    let double = |s: usize, x: &[f64]| Ok(2.0 * path.log_density_at(stamps[s], x).exp());
    let (twice, _) = density_error_ld(&Sequential, &double, &path, &grid).unwrap();
    assert!((twice - zero).abs() < 1e-15);
}

#[test]
fn oracle_evaluation_report() {
    let oracle = common::ou_oracle(1e-3);
    let path = oracle.path().clone();
    let pot = common::ou_pot();
    let init = common::ou_init();
    let grid = EvalGrid::new(0.4).unwrap();
    let rep = evaluate(&Sequential, &oracle, &path, &pot, &init, &grid, 1e-2).unwrap();
    assert!(rep.ls < 1e-10);
    assert!(rep.ld < 1e-4, "{}", rep.ld);
    for s in &rep.stamps {
        assert!((0.98..=1.01).contains(&s.mass), "{s:?}");
    }
    let avg = rep.stamps.iter().map(|s| s.ld).sum::<f64>() / 11.0;
    assert_eq!(avg, rep.ld);
}
