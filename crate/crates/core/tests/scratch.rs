use attnmem::tokenizer::Vocab;
use std::path::Path;

#[test]
#[ignore]
fn probe_tokenization() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for (label, dir) in [
        ("384+pool", "runs/af0c254bb18796cb-seed2"),
    ] {
        let run = root.join(dir);
        let vocab = Vocab::load(&run.join("vocab.txt")).unwrap();
        let facts: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run.join("facts.json")).unwrap())
                .unwrap();
        println!("== vocab {label} ==");
        for s in facts["subjects"].as_array().unwrap() {
            let text = format!(" {}", s.as_str().unwrap());
            let ids = vocab.encode(&text);
            let pieces: Vec<String> = ids.iter().map(|&i| vocab.decode_lossy(&[i]).unwrap()).collect();
            println!("  subject {:>10}: {:?}", s.as_str().unwrap(), pieces);
        }
        for w in [" led", " thanked", " warned", " summoned", " taught", " carried", " forgave", " studied", " challenged", " sheltered", " the", " capital"] {
            let ids = vocab.encode(w);
            let pieces: Vec<String> = ids.iter().map(|&i| vocab.decode_lossy(&[i]).unwrap()).collect();
            println!("  word {:>10}: {:?}", w, pieces);
        }
        let kws: Vec<String> = std::fs::read_to_string(run.join("book0.keywords.txt"))
            .unwrap()
            .lines()
            .take(6)
            .map(|s| s.to_string())
            .collect();
        for k in &kws {
            let ids = vocab.encode(&format!(" {k}"));
            let pieces: Vec<String> = ids.iter().map(|&i| vocab.decode_lossy(&[i]).unwrap()).collect();
            println!("  keyword {:>8}: {:?}", k, pieces);
        }
    }
}
