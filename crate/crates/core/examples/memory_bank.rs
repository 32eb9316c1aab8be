//! A FIFO memory bank and the nearest-neighbour loss against it.

use pixstrat::contrastive::{bank_push, nn_loss_with_grad, BankEntry, MemoryBank};

fn main() -> pixstrat::Result<()> {
    let mut bank = MemoryBank::new(4);
    let entry = |x: f64, y: f64, class_id| BankEntry {
        embedding: vec![x, y],
        class_id,
    };
    bank_push(
        &mut bank,
        [entry(1.0, 0.0, 0), entry(0.0, 1.0, 1), entry(-1.0, 0.0, 2), entry(0.7, 0.7, 0), entry(0.0, -1.0, 3)],
    );
    // capacity 4: the first entry was evicted
    for e in bank.entries() {
        println!("bank: {:?} class {}", e.embedding, e.class_id);
    }
    let queries = vec![(vec![1.0, 0.2], 0)];
    for k_nn in 1..=3 {
        let (loss, grads) = nn_loss_with_grad(&queries, &bank, k_nn)?;
        println!("k_nn = {k_nn}: loss {loss:.4}, gradient {:.4?}", grads[0]);
    }
    Ok(())
}
