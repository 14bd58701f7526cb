// Scratch calibration driver: trains selected modes and prints the epoch
// log, so learning-rate and schedule choices can be judged directly.

use std::time::Instant;
use synergy3d::synergy::{MafaConfig, NetConfig};
use synergy3d::synthdata::{make_synthetic_basis, sample_dataset, SynthConfig};
use synergy3d::trainer::{train, AblationMode, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_samples: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5000);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(128);
    let modes_arg = args.get(5).cloned().unwrap_or_else(|| "baseline,full".into());

    let t0 = Instant::now();
    let basis = make_synthetic_basis(1, 900).unwrap();
    let synth = SynthConfig::default_for_basis(&basis, 100, n_samples);
    let dataset = sample_dataset(&basis, &synth).unwrap();
    println!("dataset built in {:.1?}", t0.elapsed());

    let net = NetConfig {
        n_landmarks: 68,
        encoder_hidden: vec![16, 32],
        latent_dim: 32,
        mafa: MafaConfig {
            low_level_channels: 8,
            global_point_channels: 32,
            decoder_hidden: vec![16],
        },
        lmk3dmm_hidden: vec![8, 8, 32],
        ..NetConfig::default()
    };

    for mode_name in modes_arg.split(',') {
        let mode = AblationMode::parse(mode_name).unwrap();
        let cfg = TrainConfig {
            epochs,
            batch_size: batch,
            base_lr: lr,
            seed: 0,
            mode: Some(mode),
            ..TrainConfig::default()
        };
        let t1 = Instant::now();
        match train(&dataset, &basis, &net, &cfg) {
            Ok(result) => {
                println!("== {mode_name} lr={lr} ({:.1?})", t1.elapsed());
                for r in &result.log {
                    if r.epoch % 2 == 0 || r.epoch + 1 == epochs {
                        println!(
                            "  e{:02} lr={:.4} l3dmm={:.4} llmk={:.4} lgeo={:.4} lcons={:.4} total={:.4} val_nme={:.4} val_mae={:.2}",
                            r.epoch, r.lr, r.loss_3dmm, r.loss_landmark, r.loss_lmk_3dmm,
                            r.loss_consistency, r.loss_total, r.val_nme, r.val_mae
                        );
                    }
                }
            }
            Err(e) => println!("== {mode_name} lr={lr} FAILED: {e}"),
        }
    }
}
