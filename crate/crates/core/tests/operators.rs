mod common;

use common::CopyOrConstant;
use declip_core::autodiff::{Graph, ParamStore, Tensor, Var};
use declip_core::clip::{blend, clip, BlendConfig, BlendMode, ClipConfig};
use declip_core::eval::saturated_sdr;
use declip_core::losses::{mc_loss, nmc_loss};
use declip_core::models::SignalMap;
use proptest::prelude::*;

/// `f(y) = w · y` with a single trainable gain.
struct Gain<'a>(&'a ParamStore);

impl SignalMap for Gain<'_> {
    fn apply(&self, graph: &mut Graph, input: Var) -> declip_core::Result<Var> {
        let w = graph.param(self.0, "w")?;
        graph.mul(input, w)
    }

    fn in_channels(&self) -> usize {
        1
    }
}

fn gain_grad(w: f64, y: f64, naive: bool) -> f64 {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(vec![1, 1, 1], vec![w]).unwrap()).unwrap();
    let cfg = ClipConfig::new(1.0).unwrap();
    let mut g = Graph::new();
    let f = Gain(&store);
    let loss = if naive {
        nmc_loss(&mut g, &f, &cfg, &[&[y]])
    } else {
        mc_loss(&mut g, &f, &cfg, &[&[y]])
    }
    .unwrap();
    g.backward(loss, &mut store).unwrap();
    store.get("w").unwrap().grad().unwrap()[0]
}

#[test]
fn overshoot_on_unsaturated_sample_has_no_naive_gradient() {
    // y = 0.5 unsaturated, w = 3 gives 1.5 > mu
    assert_eq!(gain_grad(3.0, 0.5, true), 0.0);
    assert!(gain_grad(3.0, 0.5, false) > 0.0);
    // undershoot on a saturated sample: both push w upward
    assert!(gain_grad(0.5, 1.0, true) < 0.0);
    assert!(gain_grad(0.5, 1.0, false) < 0.0);
    // above the threshold on a saturated sample: consistent, no gradient
    assert_eq!(gain_grad(2.0, 1.0, false), 0.0);
}

fn clipped_batch(xs: &[Vec<f64>], cfg: &ClipConfig) -> Vec<Vec<f64>> {
    xs.iter().map(|x| clip(x, cfg)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn naive_consistency_is_blind_above_the_threshold(
        xs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 16), 1..6),
        mu in 0.2f64..2.0,
        level in 1.0f64..1e6,
    ) {
        let cfg = ClipConfig::new(mu).unwrap();
        let ys = clipped_batch(&xs, &cfg);
        let refs: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let f = CopyOrConstant { cfg, level: level * mu };
        let mut g = Graph::new();
        let loss = nmc_loss(&mut g, &f, &cfg, &refs).unwrap();
        prop_assert_eq!(g.value(loss).data()[0], 0.0);

        // reconstructions on saturated samples degrade without bound as level grows
        for (x, y) in xs.iter().zip(&ys) {
            let xhat: Vec<f64> = y.iter().map(|&v| if cfg.is_saturated(v) { (level * mu).copysign(v) } else { v }).collect();
            if let Some(s) = saturated_sdr(x, &xhat, y, &cfg) {
                let bound = 20.0 * (3.0 / ((level - 1.0) * mu - 3.0).max(1e-300)).log10();
                if (level - 1.0) * mu > 6.0 {
                    prop_assert!(s <= bound + 1e-9, "sdr {} bound {}", s, bound);
                }
            }
        }
    }

    #[test]
    fn clip_commutes_with_gain(
        x in prop::collection::vec(-10.0f64..10.0, 1..64),
        g in 0.01f64..100.0,
        mu in 0.01f64..10.0,
    ) {
        let lhs = clip(&x.iter().map(|v| g * v).collect::<Vec<_>>(), &ClipConfig::new(mu).unwrap());
        let rhs: Vec<f64> = clip(&x, &ClipConfig::new(mu / g).unwrap()).iter().map(|v| g * v).collect();
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn blending_passes_small_samples_through(
        x in prop::collection::vec(-2.0f64..2.0, 1..64),
        net in prop::collection::vec(-1e6f64..1e6, 64),
        mu in 0.05f64..1.5,
        unnormalized in any::<bool>(),
    ) {
        let cfg = ClipConfig::new(mu).unwrap();
        let bc = BlendConfig {
            mode: if unnormalized { BlendMode::Unnormalized } else { BlendMode::LevelNormalized },
            ..BlendConfig::default()
        };
        let y = clip(&x, &cfg);
        let out = blend(&y, &net[..y.len()], &cfg, &bc).unwrap();
        for (o, v) in out.iter().zip(&y) {
            if v.abs() <= bc.tau * mu {
                prop_assert_eq!(o.to_bits(), v.to_bits());
            }
        }
    }
}
