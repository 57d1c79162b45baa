//! Masks entities, hashes the template and shows which queries collide.
//!
//! `cargo run --example fingerprint_queries -- "Check email from Alice" "check email from bob"`

use std::collections::BTreeMap;

use canoncache::fingerprint::Fingerprinter;
use canoncache::harness::corpus::mini_corpus;
use canoncache::Query;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = Fingerprinter::default();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let queries = if args.is_empty() {
        mini_corpus()
    } else {
        args.iter()
            .enumerate()
            .map(|(i, t)| Query::new(format!("arg{i}"), t.as_str(), "en", None))
            .collect::<Result<_, _>>()?
    };

    let mut groups: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for q in &queries {
        let rec = f.record(q)?;
        let params: Vec<String> = rec.params.iter().map(|(s, v)| format!("{}={v}", s.name())).collect();
        println!("{:016x}  {:<45} {}", rec.hash, rec.template, params.join(" "));
        groups.entry(rec.hash).or_default().push(q.id.clone());
    }
    let shared = groups.values().filter(|ids| ids.len() > 1).count();
    println!("\n{} queries, {} templates, {} shared by two or more queries", queries.len(), groups.len(), shared);
    Ok(())
}
