use std::fs::File;

fn main() {
    let g = lsgt::toy::graph();
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy");
    lsgt::graph::write_session_log(&g, File::create(format!("{dir}/sessions.jsonl")).unwrap()).unwrap();
    lsgt::graph::write_triples(&g, File::create(format!("{dir}/triples.tsv")).unwrap()).unwrap();
}
