//! Verify the reverse-mode gradients of the full dual-path flow-matching
//! loss against central finite differences, at f64, on a micro model.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use vidflow::adapter::{adapted_velocity_graph, Adapter};
use vidflow::backbone::{Backbone, Binder, Geometry, ModelConfig};
use vidflow::flow::noisy_interpolate;
use vidflow::gradcheck::finite_diff_check;
use vidflow::graph::Graph;
use vidflow::rng::Rng;
use vidflow::tensor::Tensor;

fn main() -> vidflow::Result<()> {
    let cfg = ModelConfig::micro(2, 16);
    let backbone = Backbone::<f64>::init(cfg, &mut Rng::seed(1))?;
    let geom = Geometry { f: 1, gh: 2, gw: 2 };
    let pd = backbone.cfg.patch_dim();

    let mut rng = Rng::seed(2);
    let z0 = Tensor::randn(&[1, geom.n(), pd], 0.6, &mut rng);
    let eps = Tensor::randn(&[1, geom.n(), pd], 1.0, &mut rng);
    let c = Tensor::randn(&[1, geom.n(), pd], 0.6, &mut rng);
    let state = noisy_interpolate(&z0, &eps, 0.6)?;

    let proto = Adapter::init(&backbone, 4, &mut Rng::seed(3))?;
    let names: Vec<String> = proto.params().iter().map(|p| p.name.clone()).collect();
    let init: Vec<Tensor<f64>> = proto.params().iter().map(|p| p.value.clone()).collect();
    println!(
        "checking d(loss)/d(theta) for {} delta tensors ({} elements)",
        init.len(),
        proto.trainable_elements()
    );

    let mut eval = |params: &[Tensor<f64>]| {
        let mut adapter = Adapter::init(&backbone, 4, &mut Rng::seed(3))?;
        for (p, v) in adapter.params_mut().into_iter().zip(params) {
            p.value = v.clone();
        }
        let g = Graph::new();
        let mut binder = Binder::default();
        let fwd = adapted_velocity_graph(
            &g,
            &mut binder,
            &backbone,
            &adapter,
            g.constant(state.zt.clone()),
            g.constant(c.clone()),
            geom,
            &[(state.t, 1)],
        )?;
        let diff = g.sub(fwd.velocity, g.constant(state.vt.clone()))?;
        let sq = g.mul(diff, diff)?;
        let loss = g.mean_all(sq)?;
        let grads = g.backward(loss)?;
        let by_name: std::collections::BTreeMap<&str, Tensor<f64>> = binder
            .pairs
            .iter()
            .filter_map(|(n, v)| grads.get(*v).map(|t| (n.as_str(), t.clone())))
            .collect();
        let out = names
            .iter()
            .zip(params)
            .map(|(n, p)| {
                by_name
                    .get(n.as_str())
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect();
        Ok((g.value(loss).item(), out))
    };

    let err = finite_diff_check(&mut eval, &init, 64, 1e-4, &mut Rng::seed(4))?;
    println!("max relative error over 64 probes: {err:.3e}");
    assert!(err <= 1e-4, "gradient check failed");
    println!("gradients verified against finite differences");
    Ok(())
}
