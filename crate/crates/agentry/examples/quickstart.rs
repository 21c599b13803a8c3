//! A counter agent with one action and one control loop, on the in-memory
//! exchange.

use std::sync::Arc;
use std::time::Duration;

use agentry::{Behavior, BehaviorRegistry, LocalExchange, LoopKind, Manager};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let counter = Behavior::new("Counter", 0u64)
        .action_bytes("add", |ctx, args| {
            let n = u64::from_be_bytes(args.try_into()?);
            Ok(ctx.with_state(|total| {
                *total += n;
                total.to_be_bytes().to_vec()
            }))
        })
        .control_loop("report", LoopKind::Timer(Duration::from_millis(100)), |ctx| {
            ctx.with_state(|total| println!("total so far: {total}"));
            Ok(())
        })
        .build()?;

    let manager = Manager::new(Arc::new(LocalExchange::new()), BehaviorRegistry::new())?;
    let handle = manager.launch(counter)?;
    for n in 1..=3u64 {
        let total = handle.call_bytes("add", n.to_be_bytes().to_vec())?;
        println!("add({n}) -> {}", u64::from_be_bytes(total.try_into().unwrap()));
    }
    std::thread::sleep(Duration::from_millis(250));
    manager.shutdown(handle.target(), true)?;
    Ok(())
}
