//! Temporary diagnostics; not part of the suite.

use usbf::greedy::gusbf;
use usbf::jeepon::{build_graph, pac_project, ForwardMode, JeeponModel, LagrangeState, PolicyNet};
use usbf::rates::RateParams;
use usbf::system::{generate_dataset, SystemConfig};
use usbf::trainer::{jusbf_infer, train, TrainHyper};

#[test]
#[ignore]
fn training_dynamics() {
    let cfg = SystemConfig {
        n_users: 10,
        n_antennas: 8,
        d_l: 50.0,
        d_r: 100.0,
        rng_seed: 1009,
        ..SystemConfig::default()
    };
    let rp = RateParams::from_config(&cfg).unwrap();
    let p_budget = cfg.power_budget();
    let samples = generate_dataset(&cfg, 200);
    let (train_split, test) = samples.split_at(150);

    let hyper = TrainHyper { epochs: 12, ..TrainHyper::default() };
    let outcome = train(
        JeeponModel::new(1).unwrap(),
        train_split,
        &rp,
        p_budget,
        &hyper,
        LagrangeState::default(),
    )
    .unwrap();
    for e in &outcome.history {
        println!(
            "epoch {:2}  train {:+.4}  val {:+.4}  bv {:8.2}  sv {:9.2}  mu {:.4}  nu {:.4}",
            e.epoch,
            e.train_loss,
            e.val_loss.unwrap_or(f64::NAN),
            e.binary_violation,
            e.sinr_violation,
            e.mu,
            e.nu
        );
    }

    // Head statistics on a few test samples.
    for sample in test.iter().take(3) {
        let g = build_graph(sample);
        let (kr, qr, _) = outcome.model.forward(&g, ForwardMode::Infer).unwrap();
        let (kappa, q) = pac_project(&kr, &qr, p_budget);
        println!(
            "kr {:?}\nkappa {:?}\nq {:?} (sum {:.3} of {p_budget:.3})",
            kr.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
            kappa.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
            q.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
            q.iter().sum::<f64>(),
        );
        let _ = qr;
    }

    let mut j_cards = 0usize;
    let mut g_cards = 0usize;
    for sample in test {
        let alloc = jusbf_infer(&outcome.model, sample, &rp, p_budget, 0.0).unwrap();
        j_cards += alloc.kappa.iter().filter(|&&x| x > 0.5).count();
        let (set, _) = gusbf(sample, &cfg).unwrap();
        g_cards += set.len();
    }
    println!(
        "jeepon {j_cards} vs greedy {g_cards} on {} test samples -> R2 {:.4}",
        test.len(),
        j_cards as f64 / g_cards as f64
    );
}
