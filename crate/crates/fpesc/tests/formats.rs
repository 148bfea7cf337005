use fpesc::config::Config;
use fpesc::exec::Parallel;
use fpesc::formats::*;
use fpesc::plot;
use fpesc_core::exec::Sequential;
use fpesc_core::fields::{Embedding, MlpField, TimeMode};
use fpesc_core::jets::Series;
use fpesc_core::sampling::{self, step_seed};
use fpesc_core::selfcons::estimate_r;
use fpesc_core::training::{train, LogRow, Silent, TrainObserver};

fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.field.layer_sizes = vec![3, 8, 2];
    cfg.train.steps = 4;
    cfg.train.batch = 5;
    cfg.train.dt = 0.05;
    cfg.train.t_end = 0.5;
    cfg
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = sampling::stream(3, 0);
    for emb in [Embedding::None, Embedding::Periodic { side: 8.0 }] {
        let width = if emb == Embedding::None { 3 } else { 5 };
        let f = MlpField::random(vec![width, 16, 16, 2], Series::Tanh, TimeMode::Append, emb, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        save_checkpoint(&f, &p).unwrap();
        let g = load_checkpoint(&p).unwrap();
        assert_eq!(f, g);
        for (a, b) in f.params().iter().zip(g.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn checkpoint_json_layout() {
    let f = MlpField::zeros(vec![3, 2, 2], Series::Tanh, TimeMode::Append, Embedding::None).unwrap();
    let v = serde_json::to_value(Checkpoint::from_field(&f).unwrap()).unwrap();
    assert_eq!(v["layer_sizes"], serde_json::json!([3, 2, 2]));
    assert_eq!(v["activation"], "tanh");
    assert_eq!(v["time_mode"], "append");
    assert_eq!(v["embedding"], serde_json::json!({"kind": "none"}));
    assert_eq!(v["weights"][0].as_array().unwrap().len(), 6);
    assert_eq!(v["biases"][1].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_checkpoints_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    let bad = r#"{"layer_sizes":[3,2],"activation":"tanh","time_mode":"append","embedding":{"kind":"none"},"weights":[[1,2,3]],"biases":[[0,0]]}"#;
    std::fs::write(&p, bad).unwrap();
    assert!(load_checkpoint(&p).is_err());
    std::fs::write(&p, "{").unwrap();
    assert!(load_checkpoint(&p).is_err());
}

#[test]
fn config_defaults_and_validation() {
    let shipped = Config::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/ou2d.toml"))).unwrap();
    let mut want = Config::default();
    want.train.checkpoint_every = 100;
    assert_eq!(shipped, want);
    assert_eq!(Config::parse("").unwrap(), Config::default());
    assert!(Config::parse("[train]\nstepz = 3\n").is_err());
    let zero = Config::parse("[train]\nsteps = 0\n").unwrap();
    assert!(zero.train_config().is_err());
    let torus = Config::parse("[domain]\nmode = \"torus\"\n").unwrap();
    assert!(torus.domain().is_err());
    let periodic = Config::parse("[field]\nperiodic = true\n").unwrap();
    assert!(periodic.init_field().is_err());
    let flat = Config::parse("[field]\ninput_scale = 0.0\n").unwrap();
    assert!(flat.init_field().is_err());
    let unit = Config::parse("[field]\ninput_scale = 1.0\n").unwrap().init_field().unwrap();
    let scaled = Config::default().init_field().unwrap();
    let n = 3 * 64;
    for (a, b) in scaled.params()[..n].iter().zip(&unit.params()[..n]) {
        assert_eq!(*a, b * Config::default().field.input_scale);
    }
    assert_eq!(scaled.params()[n..], unit.params()[n..]);
}

#[test]
fn log_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.csv");
    let rows = [
        LogRow { step: 0, loss_mean: 1.0 / 3.0, loss_se: f64::NAN, grad_norm: 2.5, ms: 10.0 },
        LogRow { step: 5, loss_mean: 1e-7, loss_se: 1e-9, grad_norm: 0.1, ms: 20.5 },
    ];
    let mut w = LogWriter::create(&p).unwrap();
    for r in &rows {
        w.push(r).unwrap();
    }
    let back = read_log(&p).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].loss_mean, rows[0].loss_mean);
    assert!(back[0].loss_se.is_nan());
    assert_eq!(back[1], rows[1]);
}

struct Capture {
    checkpoints: Vec<(usize, MlpField)>,
}

impl TrainObserver for Capture {
    fn on_checkpoint(&mut self, step: usize, field: &MlpField, _: bool) -> Result<(), String> {
        self.checkpoints.push((step, field.clone()));
        Ok(())
    }
}

#[test]
fn reloaded_checkpoint_reproduces_logged_loss() {
    let mut cfg = small_config();
    cfg.train.checkpoint_every = 2;
    let tc = cfg.train_config().unwrap();
    let init = cfg.initial().unwrap();
    let pot = cfg.potential().unwrap();
    let mut cap = Capture { checkpoints: Vec::new() };
    let (_, log) = train(&Sequential, cfg.init_field().unwrap(), &pot, &init, &tc, &mut cap).unwrap();
    assert_eq!(cap.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![2, 4]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ck.json");
    save_checkpoint(&cap.checkpoints[0].1, &p).unwrap();
    let f = load_checkpoint(&p).unwrap();
    let (loss, _) = estimate_r(&f, &pot, &init, tc.batch, step_seed(tc.seed, 2), &tc.spec).unwrap();
    assert_eq!(loss.to_bits(), log.rows[2].loss_mean.to_bits());
}

#[test]
fn training_is_independent_of_worker_count() {
    let cfg = small_config();
    let tc = cfg.train_config().unwrap();
    let init = cfg.initial().unwrap();
    let pot = cfg.potential().unwrap();
    let run = |threads: usize| {
        let exec = Parallel::new(threads).unwrap();
        train(&exec, cfg.init_field().unwrap(), &pot, &init, &tc, &mut Silent).unwrap()
    };
    let (f1, l1) = run(1);
    let (f3, l3) = run(3);
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(l1.losses()), bits(l3.losses()));
    assert_eq!(f1, f3);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut cfg = small_config();
    cfg.train.lr = 0.0;
    let tc = cfg.train_config().unwrap();
    let f0 = cfg.init_field().unwrap();
    let (f, log) = train(&Sequential, f0.clone(), &cfg.potential().unwrap(), &cfg.initial().unwrap(), &tc, &mut Silent).unwrap();
    assert_eq!(f.params(), f0.params());
    assert_eq!(log.rows.len(), 4);
}

#[test]
fn svg_has_three_panels() {
    let s = plot::render(&[
        plot::Series { title: "Objective Value", x_label: "step", points: vec![(0.0, 100.0), (1.0, 1.0)], log_y: true },
        plot::Series { title: "Score Estimation Error", x_label: "t", points: vec![], log_y: true },
        plot::Series { title: "Density Estimation Error", x_label: "t", points: vec![(0.0, 0.5)], log_y: false },
    ]);
    assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    assert_eq!(s.matches("<polyline").count(), 2);
    assert!(s.contains("no data"));
}
