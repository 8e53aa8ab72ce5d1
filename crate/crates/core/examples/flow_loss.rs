//! Flow-Loss and its gradient for a misestimated sub-plan, then the
//! sensitivity sweep of the bundled instance: underestimating the expensive
//! intermediate is penalised, overestimating it barely matters.
//!
//! cargo run --example flow_loss

use std::path::Path;

use flowloss::cost_model::CostParams;
use flowloss::flow_loss::{flow_loss, flow_loss_with_grad, sensitivity_sweep};
use flowloss::pipeline::{node_by_names, SweepInstance};

fn main() -> flowloss::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sensitivity_instance.json");
    let inst = SweepInstance::load(&path)?;
    let (pg, y_true) = inst.build()?;
    let p = CostParams::default();
    let node = node_by_names(&pg, "b,c")?;

    let mut y_est = y_true.clone();
    y_est.set(node, y_true.get(node) / 8.0);
    let min = flow_loss(&y_true, &y_true, &pg, &p)?.value;
    let l = flow_loss_with_grad(&y_est, &y_true, &pg, &p)?;
    println!("loss at truth {min:.1}, with b,c underestimated 8x {:.1}", l.value);
    println!("d loss / d log y:");
    let grad = l.grad.unwrap();
    for id in 1..pg.num_nodes() {
        println!("  {:<10} {:>10.3}", pg.node_label(id), grad[id] * y_est.get(id));
    }

    println!("\n{:>7} {:>8} {:>10} {:>8}", "factor", "q-error", "flow-loss", "p-cost");
    for r in sensitivity_sweep(node, &[0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0], &y_true, &pg, &p)? {
        println!("{:>7} {:>8} {:>10.1} {:>8.1}", r.factor, r.q_error, r.flow_loss, r.p_cost);
    }
    Ok(())
}
