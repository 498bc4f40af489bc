//! Generous performance floor for the two-fold counter.

use std::time::Instant;

use qtb_core::coincidence::count_coincidences;
use qtb_core::tags::{channel, ChannelMap, TagStream, Tags};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn coincidence_counting_exceeds_ten_million_tags_per_second() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 5_000_000usize;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut t = 0u64;
    for _ in 0..n {
        t += rng.random_range(1..400_000);
        a.push(t);
        b.push(t + rng.random_range(0..2000));
    }
    b.sort_unstable();
    let mut s = TagStream::new(ChannelMap::standard(), t + 1);
    s.set_channel(channel::SIG, Tags::Events(a)).unwrap();
    s.set_channel(channel::IDL, Tags::Events(b)).unwrap();

    let start = Instant::now();
    let r = count_coincidences(&s, channel::SIG, channel::IDL, 2000, 1000).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let rate = (2 * n) as f64 / elapsed;
    println!("{:.3e} tags/s", rate);
    assert_eq!(r.count, n as u64);
    assert!(rate >= 1e7, "{rate:.3e} tags/s");
}
