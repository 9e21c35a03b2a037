use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::time::Duration;

use onionscope::topics::{
    assign_topic, cosine_distance, fit_topics, hdbscan, topic_hierarchy, CtfIdf, EmbeddingProvider,
    HashingEmbedder, HdbscanParams, LabelMap, Pca, Reducer, SidecarProvider, TopicsConfig, TopicsError, NOISE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[path = "support/topics_oracle.rs"]
mod oracle;
use oracle::{ari, brute_ctfidf, with_singletons};

#[test]
fn ari_oracle_sanity() {
    assert_eq!(ari(&[0, 0, 1, 1], &[5, 5, 7, 7]), 1.0);
    assert!(ari(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
}

#[test]
fn planted_blobs_with_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers = [[0.0; 5], [10.0, 0.0, 0.0, 0.0, 0.0], [0.0, 10.0, 0.0, 0.0, 0.0]];
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..200 {
            pts.push(center.iter().map(|m| m + normal.sample(&mut rng)).collect::<Vec<f64>>());
            truth.push(c as i64);
        }
    }
    for i in 0..20 {
        pts.push((0..5).map(|_| rng.gen_range(-5.0..15.0)).collect());
        truth.push(-100 - i);
    }
    let labels = hdbscan(&pts, HdbscanParams::default());
    let n_clusters = labels.iter().filter(|&&l| l >= 0).collect::<std::collections::HashSet<_>>().len();
    assert_eq!(n_clusters, 3);
    let score = ari(&truth[..600], &with_singletons(&labels[..600]));
    assert!(score >= 0.95, "ARI {score}");
    let outliers_noise = labels[600..].iter().filter(|&&l| l == NOISE).count();
    assert!(outliers_noise >= 16, "{outliers_noise} of 20 outliers labeled noise");
    for c in 0..3 {
        assert!(labels.iter().filter(|&&l| l == c).count() >= 15);
    }
}

#[test]
fn blob_centroid_order_survives_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 0.3).unwrap();
    let d = 384;
    let mut centers = vec![vec![0.0; d]; 3];
    centers[1][0] = 10.0;
    centers[2][1] = 25.0;
    let mut pts = Vec::new();
    for c in &centers {
        for _ in 0..60 {
            pts.push(c.iter().map(|m| m + normal.sample(&mut rng)).collect::<Vec<f64>>());
        }
    }
    let red = Pca.reduce(&pts, 5).unwrap();
    let centroid = |vs: &[Vec<f64>]| -> Vec<f64> {
        let mut m = vec![0.0; vs[0].len()];
        for v in vs {
            m.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= vs.len() as f64);
        m
    };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let rc: Vec<Vec<f64>> = (0..3).map(|k| centroid(&red.vectors[k * 60..(k + 1) * 60])).collect();
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut orig: Vec<(f64, usize)> =
        pairs.iter().enumerate().map(|(i, &(a, b))| (dist(&centers[a], &centers[b]), i)).collect();
    let mut reduced: Vec<(f64, usize)> =
        pairs.iter().enumerate().map(|(i, &(a, b))| (dist(&rc[a], &rc[b]), i)).collect();
    orig.sort_by(|a, b| a.0.total_cmp(&b.0));
    reduced.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_eq!(orig.iter().map(|p| p.1).collect::<Vec<_>>(), reduced.iter().map(|p| p.1).collect::<Vec<_>>());
}

fn planted_corpus(rng: &mut ChaCha8Rng, vocabs: &[Vec<String>], per: usize, len: usize) -> (Vec<String>, Vec<i64>) {
    let mut docs = Vec::new();
    let mut truth = Vec::new();
    for (c, vocab) in vocabs.iter().enumerate() {
        for _ in 0..per {
            let words: Vec<&str> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].as_str()).collect();
            docs.push(words.join(" "));
            truth.push(c as i64);
        }
    }
    (docs, truth)
}

fn vocab(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

#[test]
fn planted_vocabularies_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let vocabs: Vec<Vec<String>> = ["alpha", "bravo", "charlie", "delta"].iter().map(|p| vocab(p, 40)).collect();
    let (docs, truth) = planted_corpus(&mut rng, &vocabs, 50, 80);
    let fit = fit_topics(&docs, &HashingEmbedder::default(), &Pca, &TopicsConfig::default(), &LabelMap::shipped())
        .unwrap();
    let score = ari(&truth, &with_singletons(&fit.assignments));
    assert!(score >= 0.9, "ARI {score}");
    assert_eq!(fit.model.clusters.len(), 4);
    let sizes: usize = fit.model.clusters.iter().map(|c| c.size).sum();
    assert_eq!(sizes + fit.model.noise_docs, docs.len());
    for c in &fit.model.clusters {
        assert!(c.size >= 15);
        assert_eq!(c.top_words.len(), 5);
    }
    let heights: Vec<f64> = fit.model.hierarchy.merges.iter().map(|m| m.height).collect();
    assert!(heights.windows(2).all(|w| w[0] <= w[1]));
    // a fresh document from a planted vocabulary lands in that vocabulary's cluster
    let probe = vocabs[2][..20].join(" ");
    let cluster = assign_topic(&fit.model, &probe, 0.1);
    let members: Vec<i64> =
        fit.assignments.iter().zip(&truth).filter(|(&a, _)| a == cluster).map(|(_, &t)| t).collect();
    assert!(!members.is_empty() && members.iter().all(|&t| t == 2));
}

#[test]
fn paper_cluster_zero_keywords_rise_to_top() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let planted = ["porn", "video", "sex", "teen", "girl"];
    let filler = vocab("filler", 60);
    let mut docs = Vec::new();
    for _ in 0..40 {
        let mut words: Vec<String> = Vec::new();
        for _ in 0..40 {
            words.push(planted[rng.gen_range(0..planted.len())].to_string());
        }
        for _ in 0..20 {
            words.push(filler[rng.gen_range(0..filler.len())].clone());
        }
        docs.push(words.join(" "));
    }
    let others: Vec<Vec<String>> = ["market", "wallet"].iter().map(|p| vocab(p, 40)).collect();
    let (rest, _) = planted_corpus(&mut rng, &others, 40, 60);
    docs.extend(rest);
    let fit = fit_topics(&docs, &HashingEmbedder::default(), &Pca, &TopicsConfig::default(), &LabelMap::shipped())
        .unwrap();
    let c = fit.assignments[0];
    assert!(c >= 0);
    let top: Vec<String> = fit.model.top_words(c, 5).into_iter().map(|w| w.0).collect();
    for p in planted {
        assert!(top.iter().any(|t| t == p), "{p} missing from {top:?}");
    }
}

#[test]
fn ctfidf_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n_classes = rng.gen_range(1..=5);
        let n_terms = rng.gen_range(1..=50);
        let classes: Vec<Vec<String>> = (0..n_classes)
            .map(|_| {
                (0..rng.gen_range(1..4))
                    .map(|_| {
                        (0..rng.gen_range(1..30)).map(|_| format!("t{}", rng.gen_range(0..n_terms))).collect::<Vec<_>>().join(" ")
                    })
                    .collect()
            })
            .collect();
        let min_df = rng.gen_range(1..=3);
        let refs: Vec<Vec<&str>> = classes.iter().map(|c| c.iter().map(String::as_str).collect()).collect();
        let (vocab, weights) = brute_ctfidf(&classes, min_df);
        match CtfIdf::fit(&refs, min_df) {
            Ok(m) => {
                assert_eq!(m.vocabulary, vocab);
                for (x, y) in m.weights.iter().flatten().zip(weights.iter().flatten()) {
                    assert!((x - y).abs() <= 1e-9);
                }
            }
            Err(TopicsError::EmptyVocabulary) => assert!(vocab.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn hierarchy_joins_tight_pairs_first() {
    let at = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin(), 0.0];
    let v = vec![at(0.0), at(80.0), at(5.0), at(85.0)];
    let d = topic_hierarchy(&[0, 1, 2, 3], &v);
    let first: Vec<(usize, usize)> = d.merges[..2].iter().map(|m| (m.left, m.right)).collect();
    assert!(first.contains(&(0, 2)) && first.contains(&(1, 3)));
    assert!(d.merges[0].height < d.merges[2].height && d.merges[1].height < d.merges[2].height);
    let expect = 1.0 - 5.0f64.to_radians().cos();
    assert!((d.merges[0].height - expect).abs() < 1e-12);
}

#[test]
fn hierarchy_heights_monotone_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let k = rng.gen_range(2..12);
        let v: Vec<Vec<f64>> = (0..k).map(|_| (0..6).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let d = topic_hierarchy(&(0..k as i32).collect::<Vec<_>>(), &v);
        assert_eq!(d.merges.len(), k - 1);
        assert!(d.merges.windows(2).all(|w| w[0].height <= w[1].height));
        assert_eq!(d.merges.last().unwrap().size, k);
    }
}

#[test]
fn fallback_embedder_disjoint_docs_nearly_orthogonal() {
    let e = HashingEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut total = 0.0f64;
    let pairs = 500;
    for p in 0..pairs {
        let a: Vec<String> = (0..100).map(|_| format!("a{p}x{}", rng.gen::<u32>())).collect();
        let b: Vec<String> = (0..100).map(|_| format!("b{p}y{}", rng.gen::<u32>())).collect();
        let (va, vb) = (e.embed_one(&a.join(" ")), e.embed_one(&b.join(" ")));
        total += (1.0 - cosine_distance(&va, &vb)).abs();
    }
    let mean = total / pairs as f64;
    assert!(mean < 0.05, "mean |cos| {mean}");
}

#[test]
fn fallback_embedder_bit_identical_across_runs() {
    let text = vec!["some page text about markets".to_string(); 3];
    let a = HashingEmbedder::new(384, 7).embed(&text).unwrap();
    let b = HashingEmbedder::new(384, 7).embed(&text).unwrap();
    assert_eq!(a, b);
}

fn fake_sidecar(dim: usize, fail_on: Option<usize>) -> (std::net::SocketAddr, std::thread::JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut out = stream;
        let mut requests = 0;
        let mut line = String::new();
        while reader.read_line(&mut line).unwrap() > 0 {
            let req: serde_json::Value = serde_json::from_str(&line).unwrap();
            let reply = match req["op"].as_str().unwrap() {
                "hello" => serde_json::json!({"model": "fake", "dim": dim}),
                _ => {
                    requests += 1;
                    let texts = req["texts"].as_array().unwrap();
                    if Some(requests) == fail_on {
                        serde_json::json!({"id": req["id"], "error": "boom"})
                    } else {
                        let vectors: Vec<Vec<f64>> = texts
                            .iter()
                            .map(|t| (0..dim).map(|k| (t.as_str().unwrap().len() + k) as f64).collect())
                            .collect();
                        serde_json::json!({"id": req["id"], "vectors": vectors, "dim": dim})
                    }
                }
            };
            writeln!(out, "{reply}").unwrap();
            line.clear();
        }
        requests
    });
    (addr, handle)
}

#[test]
fn sidecar_over_tcp_batches_and_preserves_order() {
    let (addr, handle) = fake_sidecar(3, None);
    let texts: Vec<String> = (0..7).map(|i| "x".repeat(i)).collect();
    {
        let p = SidecarProvider::connect(addr, Duration::from_secs(5), 3).unwrap();
        assert_eq!((p.model(), p.dim()), ("fake", 3));
        let v = p.embed(&texts).unwrap();
        assert_eq!(v.len(), 7);
        for (i, row) in v.iter().enumerate() {
            assert_eq!(row, &vec![i as f64, i as f64 + 1.0, i as f64 + 2.0]);
        }
    }
    assert_eq!(handle.join().unwrap(), 3);
}

#[test]
fn sidecar_errors_surface() {
    let (addr, _h) = fake_sidecar(2, Some(1));
    let p = SidecarProvider::connect(addr, Duration::from_secs(5), 8).unwrap();
    assert!(matches!(p.embed(&["a".into()]), Err(TopicsError::Provider(m)) if m == "boom"));
    drop(p);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = listener.local_addr().unwrap();
    drop(listener);
    assert!(matches!(
        SidecarProvider::connect(dead, Duration::from_millis(500), 8),
        Err(TopicsError::ProviderUnavailable(_))
    ));
}
