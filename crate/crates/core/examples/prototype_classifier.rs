//! Trains a nearest-prototype classifier on the first variant of every mini-corpus
//! phrasing and scores the rest.

use canoncache::classifier::fit_centroids;
use canoncache::fingerprint::Fingerprinter;
use canoncache::harness::corpus::mini_corpus;
use canoncache::harness::embed::HashingEmbedder;
use canoncache::CacheKey;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = mini_corpus();
    let f = Fingerprinter::default();
    let table = HashingEmbedder::default().embed_all(&f, &corpus)?;

    let train: Vec<(String, CacheKey)> = corpus
        .iter()
        .filter(|q| q.id.ends_with("-v1"))
        .map(|q| (q.id.clone(), q.true_intent.as_ref().and_then(|i| i.as_key()).expect("labeled")))
        .collect();
    let model = fit_centroids(&train, &table)?.with_temperature(0.05)?;

    let mut correct = 0;
    let held_out: Vec<_> = corpus.iter().filter(|q| !q.id.ends_with("-v1")).collect();
    for q in &held_out {
        let p = model.classify(&q.id, table.get(&q.id).expect("embedded"))?;
        let ok = q.true_intent.as_ref().is_some_and(|t| t.matches(&p.predicted_key));
        correct += usize::from(ok);
        println!(
            "{:<14} {:<26} {:.3} {}",
            q.id,
            p.predicted_key.to_string(),
            p.confidence,
            if ok { "" } else { "WRONG" }
        );
    }
    println!("\nheld-out accuracy {correct}/{}", held_out.len());
    Ok(())
}
