use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use canvas_forge::catalog::CatalogRecord;
use canvas_forge::telephoning::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn records(n: usize) -> Vec<CatalogRecord> {
    (0..n).map(|i| CatalogRecord::new(format!("img-{i:04}"), "CC-BY").with_size(640, 480)).collect()
}

fn fast_options(clock: &FixedClock, concurrency: usize) -> BatchOptions<'_> {
    BatchOptions { concurrency, retry: RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) }, clock }
}

#[test]
fn preprocess_examples() {
    let p = preprocess_plan(1024, 768);
    assert_eq!((p.crop_side, p.crop_x, p.crop_y, p.target_side), (768, 128, 0, 512));
    let p = preprocess_plan(512, 512);
    assert_eq!((p.crop_side, p.crop_x, p.crop_y, p.target_side), (512, 0, 0, 512));
    let p = preprocess_plan(300, 400);
    assert_eq!((p.crop_side, p.crop_x, p.crop_y, p.target_side), (300, 0, 50, 300));
}

proptest! {
    #[test]
    fn preprocess_square_capped_and_transposable(w in 1u32..5000, h in 1u32..5000) {
        let p = preprocess_plan(w, h);
        prop_assert_eq!(p.crop_side, w.min(h));
        prop_assert!(p.target_side <= MAX_SIDE && p.target_side <= p.crop_side);
        prop_assert!(p.crop_x + p.crop_side <= w && p.crop_y + p.crop_side <= h);
        let t = preprocess_plan(h, w);
        prop_assert_eq!((t.crop_x, t.crop_y), (p.crop_y, p.crop_x));
        prop_assert_eq!((t.crop_side, t.target_side), (p.crop_side, p.target_side));
    }

    #[test]
    fn stats_ratio_never_rises_with_duplicates(
        base in prop::collection::vec("[a-c]( [a-c]){2,6}", 1..10),
        dup in 0usize..10,
    ) {
        let mut captions = base.clone();
        let mut prev = caption_stats(&captions).trigram_ratio;
        for i in 0..dup {
            captions.push(base[i % base.len()].clone());
            let next = caption_stats(&captions).trigram_ratio;
            prop_assert!(next <= prev + 1e-15);
            prev = next;
        }
    }
}

#[test]
fn usable_alt_text_examples() {
    assert!(!usable_alt_text(Some("SONY+DSC"), None));
    assert!(usable_alt_text(None, Some("A living room with a white couch")));
    assert!(!usable_alt_text(None, None));
    assert!(!usable_alt_text(Some("   "), Some("http://example.com/x.jpg")));
    assert!(!usable_alt_text(Some("olympus digital camera"), None));
    assert!(!usable_alt_text(Some("."), None));
    assert!(!usable_alt_text(Some("IMG 1234"), None));
    assert!(usable_alt_text(Some("IMG_1234"), Some("kids at the beach")));
}

#[test]
fn custom_blacklist() {
    let f = AltTextFilter::from_patterns(["my holiday snaps"]);
    assert!(!f.usable(Some("My-Holiday_Snaps"), None));
    assert!(f.usable(Some("SONY DSC camera default"), None));
}

#[test]
fn caption_stats_examples() {
    let s = caption_stats(["a black and white cartoon dog"]);
    assert_eq!((s.total_trigrams, s.unique_trigrams, s.trigram_ratio), (4, 4, 1.0));
    let s = caption_stats(["a black and white cartoon dog"; 2]);
    assert_eq!((s.total_trigrams, s.unique_trigrams, s.trigram_ratio), (8, 4, 0.5));
    let s = caption_stats(Vec::<String>::new());
    assert_eq!((s.n_captions, s.trigram_ratio), (0, 0.0));
}

#[test]
fn caption_stats_matches_hash_set_oracle() {
    const VOCAB: [&str; 10] = ["a", "dog", "cat", "red", "sky", "on", "the", "big", "car", "tree"];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let captions: Vec<String> = (0..1000)
        .map(|_| {
            let len = rng.random_range(1..9);
            (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect();
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for c in &captions {
        let words: Vec<&str> = c.split(' ').collect();
        for i in 0..words.len().saturating_sub(2) {
            total += 1;
            seen.insert(format!("{} {} {}", words[i], words[i + 1], words[i + 2]));
        }
    }
    let s = caption_stats(&captions);
    assert_eq!(s.total_trigrams, total);
    assert_eq!(s.unique_trigrams, seen.len());
    assert_eq!(s.trigram_ratio, seen.len() as f64 / total as f64);
}

#[test]
fn living_room_fixture() {
    let caption = "A living room with a white couch and curtains";
    let mock = MockCaptioner::default().with_fixture("living-room", caption);
    let recs = vec![CatalogRecord::new("living-room", "CC-BY").with_size(1024, 768)];
    let mut cache = CaptionCache::in_memory();
    let clock = FixedClock(1_700_000_000);
    let report = caption_batch(&recs, &mock, &FixtureImages, &mut cache, &fast_options(&clock, 1)).unwrap();
    assert_eq!(report.captions.len(), 1);
    let rec = &report.captions[0];
    assert_eq!(rec.caption, caption);
    assert_eq!(rec.captioner_id, "mock-captioner-v1");
    assert_eq!(rec.preprocess, preprocess_plan(1024, 768));
    assert_eq!(rec.created_at, 1_700_000_000);
}

#[test]
fn empty_batch_makes_no_calls() {
    let mock = MockCaptioner::default();
    let mut cache = CaptionCache::in_memory();
    let clock = FixedClock(0);
    let report = caption_batch(&[], &mock, &FixtureImages, &mut cache, &fast_options(&clock, 4)).unwrap();
    assert!(report.captions.is_empty() && report.dead_letters.is_empty());
    assert_eq!(mock.call_count(), 0);
}

#[test]
fn transient_failures_are_retried() {
    let recs = records(100);
    let mock = MockCaptioner::default().failing_every(3);
    let mut cache = CaptionCache::in_memory();
    let clock = FixedClock(0);
    let report = caption_batch(&recs, &mock, &FixtureImages, &mut cache, &fast_options(&clock, 1)).unwrap();
    assert_eq!(report.captions.len(), 100);
    assert!(report.dead_letters.is_empty());
    // Counted from the mock's own log: every repeated id is a retry.
    let log = mock.call_log();
    let retried = log.len() - log.iter().collect::<HashSet<_>>().len();
    assert!(retried >= 34, "{retried}");
    assert_eq!(report.retried_calls, retried);
    assert_eq!(report.service_calls, log.len());
    let ids: Vec<_> = report.captions.iter().map(|c| c.image_id.clone()).collect();
    assert_eq!(ids, recs.iter().map(|r| r.id.clone()).collect::<Vec<_>>());
}

#[test]
fn warm_cache_is_idempotent() {
    let recs = records(50);
    let mock = MockCaptioner::default().failing_every(4);
    let mut cache = CaptionCache::in_memory();
    let clock = FixedClock(42);
    let first = caption_batch(&recs, &mock, &FixtureImages, &mut cache, &fast_options(&clock, 8)).unwrap();
    let calls = mock.call_count();
    let second = caption_batch(&recs, &mock, &FixtureImages, &mut cache, &fast_options(&clock, 8)).unwrap();
    assert_eq!(mock.call_count(), calls);
    assert_eq!(second.service_calls, 0);
    assert_eq!(second.cache_hits, 50);
    assert_eq!(first.captions, second.captions);
}

#[test]
fn new_captioner_does_not_collide_in_cache() {
    let recs = records(3);
    let mut cache = CaptionCache::in_memory();
    let clock = FixedClock(0);
    let a = MockCaptioner::new("model-a");
    let b = MockCaptioner::new("model-b");
    caption_batch(&recs, &a, &FixtureImages, &mut cache, &fast_options(&clock, 1)).unwrap();
    caption_batch(&recs, &b, &FixtureImages, &mut cache, &fast_options(&clock, 1)).unwrap();
    assert_eq!(b.call_count(), 3);
    assert_eq!(cache.len(), 6);
}

struct AlwaysDown;

impl CaptionerClient for AlwaysDown {
    fn captioner_id(&self) -> &str {
        "down"
    }
    fn caption(&self, _: &CaptionRequest) -> Result<CaptionResponse, CaptionError> {
        Err(CaptionError::Unavailable("offline".into()))
    }
}

#[test]
fn exhausted_retries_go_to_dead_letters() {
    let recs = records(5);
    let mut cache = CaptionCache::in_memory();
    let clock = FixedClock(0);
    let report = caption_batch(&recs, &AlwaysDown, &FixtureImages, &mut cache, &fast_options(&clock, 2)).unwrap();
    assert!(report.captions.is_empty());
    assert_eq!(report.dead_letters.len(), 5);
    assert!(report.dead_letters.iter().all(|d| d.attempts == 3 && d.unavailable));
    assert_eq!(report.service_calls, 15);
}

#[test]
fn missing_images_are_dead_lettered() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("img-0000.jpg"), b"jpeg bytes").unwrap();
    let recs = records(2);
    let mock = MockCaptioner::default();
    let mut cache = CaptionCache::in_memory();
    let clock = FixedClock(0);
    let images = DirectoryImages { dir: dir.path().to_path_buf() };
    let report = caption_batch(&recs, &mock, &images, &mut cache, &fast_options(&clock, 1)).unwrap();
    assert_eq!(report.captions.len(), 1);
    assert_eq!(report.dead_letters.len(), 1);
    assert_eq!(report.captions.len() + report.dead_letters.len(), recs.len());
    assert_eq!(mock.call_count(), 1);
}

#[test]
fn persistent_cache_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("captions.jsonl");
    let recs = records(10);
    let clock = FixedClock(7);
    let mock = MockCaptioner::default();
    {
        let mut cache = CaptionCache::open(&path).unwrap();
        caption_batch(&recs, &mock, &FixtureImages, &mut cache, &fast_options(&clock, 3)).unwrap();
    }
    // Simulate an interrupted append.
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.extend_from_slice(b"{\"image_id\":\"torn");
    std::fs::write(&path, bytes).unwrap();

    let mut cache = CaptionCache::open(&path).unwrap();
    assert_eq!(cache.len(), 10);
    let report = caption_batch(&recs, &mock, &FixtureImages, &mut cache, &fast_options(&clock, 3)).unwrap();
    assert_eq!(report.cache_hits, 10);
    assert_eq!(mock.call_count(), 10);
    let lines = read_captions(&path).unwrap();
    assert_eq!(lines.len(), 10);
}

#[test]
fn corrupt_cache_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    std::fs::write(&path, "garbage\n{}\n").unwrap();
    assert!(matches!(CaptionCache::open(&path), Err(CacheError::Corrupt { line: 1, .. })));
}

/// In-process captioner service that answers 503 to every id's first request.
fn spawn_server() -> (String, Arc<AtomicUsize>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        let mut seen = HashSet::new();
        for mut req in server.incoming_requests() {
            counter.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let parsed: CaptionRequest = serde_json::from_str(&body).unwrap();
            let resp = if req.url() != "/caption" {
                tiny_http::Response::from_string("nope").with_status_code(404)
            } else if seen.insert(parsed.id.clone()) {
                tiny_http::Response::from_string("busy").with_status_code(503)
            } else {
                let out = CaptionResponse {
                    id: parsed.id.clone(),
                    caption: format!("photo {} at {}px", parsed.id, parsed.max_side),
                    model: "blip-test".into(),
                };
                tiny_http::Response::from_string(serde_json::to_string(&out).unwrap())
            };
            req.respond(resp).unwrap();
        }
    });
    (url, hits)
}

#[test]
fn http_client_retries_503() {
    let (url, hits) = spawn_server();
    let client = HttpCaptioner::new(&url, "blip-test", Duration::from_secs(5));
    let recs = vec![
        CatalogRecord::new("a", "CC-BY").with_size(1024, 768),
        CatalogRecord::new("b", "CC-BY").with_size(200, 300),
    ];
    let mut cache = CaptionCache::in_memory();
    let clock = FixedClock(0);
    let report = caption_batch(&recs, &client, &FixtureImages, &mut cache, &fast_options(&clock, 2)).unwrap();
    assert!(report.dead_letters.is_empty());
    assert_eq!(report.captions[0].caption, "photo a at 512px");
    assert_eq!(report.captions[1].caption, "photo b at 200px");
    assert_eq!(report.retried_calls, 2);
    assert_eq!(hits.load(Ordering::SeqCst), 4);
}

#[test]
fn mismatched_response_is_malformed() {
    let req = CaptionRequest { id: "a".into(), image_b64: String::new(), max_side: 512 };
    let resp = CaptionResponse { id: "b".into(), caption: "x".into(), model: "m".into() };
    assert!(matches!(check_response(&req, &resp), Err(CaptionError::Malformed(_))));
    let empty = CaptionResponse { id: "a".into(), caption: "  ".into(), model: "m".into() };
    assert!(check_response(&req, &empty).is_err());
}

#[test]
fn hashed_captions_are_stable() {
    assert_eq!(hashed_caption("x", 6), hashed_caption("x", 6));
    assert_eq!(hashed_caption("x", 6).split(' ').count(), 6);
    assert_ne!(hashed_caption("x", 6), hashed_caption("y", 6));
}
