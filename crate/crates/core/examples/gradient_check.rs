//! Central-difference check of every learnable tensor of a small network.
//! The optional argument sets the step (default 2e-2).

use unik::layers::Pass;
use unik::tensor::gradcheck::grad_check_params;
use unik::tensor::{NormMode, ParamKind};
use unik::{NetworkConfig, Tensor, Unik};

fn main() -> unik::Result<()> {
    let cfg = NetworkConfig {
        channels: vec![8, 8, 16],
        dilations: vec![1, 2, 1],
        kernel: 3,
        ..NetworkConfig::new(5, 2, 3)
    };
    let model = Unik::<f64>::new(cfg, 1)?;
    let data: Vec<f64> = (0..2 * 2 * 12 * 5).map(|i| (0.37 * i as f64).sin()).collect();
    let x = Tensor::from_f64([2, 1, 2, 12, 5], &data)?;
    let labels = [0, 2];
    let ids: Vec<_> = model
        .store
        .ids()
        .filter(|&id| model.store.kind(id) == ParamKind::Learnable)
        .collect();
    for mode in [NormMode::Train, NormMode::Eval] {
        let loss = |g: &mut unik::Graph<f64>, store: &unik::tensor::ParamStore<f64>| {
            let mut pass = Pass::with_graph(store, mode, std::mem::take(g));
            let xv = pass.input(x.clone());
            let logits = model.forward(&mut pass, xv)?;
            let l = pass.graph.cross_entropy(logits, &labels)?;
            *g = pass.finish().0;
            Ok(l)
        };
        let eps: f64 = std::env::args().nth(1).map_or(Ok(2e-2), |a| a.parse()).expect("eps");
        let checks = grad_check_params(loss, &model.store, &ids, eps)?;
        println!("{mode:?} batch norm");
        for c in &checks {
            println!(
                "  {:<32} {:>5} entries  max rel error {:.2e}",
                c.name, c.checked, c.max_rel_error
            );
        }
    }
    Ok(())
}
