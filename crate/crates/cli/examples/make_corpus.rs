//! Regenerate the bundled synthetic corpus: `cargo run -p endorse-cli --example make_corpus`.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use endorse_core::corpus::write_clusters;
use endorse_core::rng::{stream, Stream};
use endorse_core::synthetic::{salience_cluster, SalienceSpec};

fn main() {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic.jsonl");
    let mut rng = stream(2019, Stream::Synthetic);
    let repeats = [vec![6], vec![6, 3], vec![8, 2], vec![5, 4], vec![7]];
    let clusters: Vec<_> = repeats
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let spec = SalienceSpec {
                repeats: r.clone(),
                ..Default::default()
            };
            salience_cluster(&mut rng, &spec, &format!("synthetic-{i}")).cluster
        })
        .collect();
    let w = BufWriter::new(File::create(&out).expect("create corpus file"));
    write_clusters(w, &clusters).expect("write corpus");
    println!("wrote {} clusters to {}", clusters.len(), out.display());
}
