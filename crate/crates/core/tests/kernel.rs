use lora_pcsma::sim::{RngStream, Scheduler, SimTime};

#[test]
fn million_events_execute_in_time_then_fifo_order() {
    let mut rng = RngStream::new(42, "kernel-test");
    let mut sched: Scheduler<bool> = Scheduler::with_log();
    let mut scheduled = Vec::with_capacity(1_000_000);

    // coarse times force many same-instant ties
    for _ in 0..500_000 {
        let at = SimTime::from_micros((rng.next_uniform() * 1000.0) as u64 * 1000);
        let id = sched.schedule(at, true).unwrap();
        scheduled.push((at, id.seq()));
    }
    let mut spawned = Vec::new();
    let executed = sched.run_to_completion(|s, now, respawn| {
        if respawn {
            let delay = (rng.next_uniform() * 50.0) as u64 * 1000;
            let at = now + SimTime::from_micros(delay);
            let id = s.schedule(at, false).unwrap();
            spawned.push((at, id.seq()));
        }
    });
    assert_eq!(executed, 1_000_000);

    scheduled.extend(spawned);
    scheduled.sort();
    assert_eq!(sched.executed_log().unwrap(), scheduled.as_slice());
}

#[test]
fn cancelled_events_never_run() {
    let mut sched: Scheduler<u32> = Scheduler::new();
    let ids: Vec<_> = (0..100)
        .map(|i| {
            sched
                .schedule(SimTime::from_micros(u64::from(i % 7)), i)
                .unwrap()
        })
        .collect();
    for id in ids.iter().step_by(3) {
        assert!(sched.cancel(*id));
    }
    let mut seen = Vec::new();
    sched.run_to_completion(|_, _, e| seen.push(e));
    assert_eq!(seen.len(), 66);
    assert!(seen.iter().all(|e| e % 3 != 0));
}
