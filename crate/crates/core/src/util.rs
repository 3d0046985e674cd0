//! Small shared helpers: deterministic substream seeding and a portable
//! standard-normal sampler.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a base seed and a list of tags. FNV-1a over the
/// tag bytes, finished with a splitmix64 avalanche, so nearby inputs give
/// unrelated streams. Stable across platforms and releases.
pub fn stream_seed(base: u64, tags: &[&str]) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ base;
    for tag in tags {
        for &b in tag.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(h)
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Standard normal via Box–Muller. Consumes two uniforms per call.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Run `f` over `0..n` on up to `workers` threads, returning results in
/// index order. Work is claimed by atomic index draw, so scheduling never
/// affects which output lands where.
pub fn parallel_map_indexed<T: Send, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(&f).collect();
    }
    let results: Vec<std::sync::Mutex<Option<T>>> =
        (0..n).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                *results[i].lock().unwrap() = Some(value);
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every index filled"))
        .collect()
}
