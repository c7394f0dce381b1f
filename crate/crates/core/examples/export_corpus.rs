//! Writes the bundled callgraph corpora to `<dir>` (default `corpus/`).
//!
//! ```text
//! cargo run -p pagespray --example export_corpus -- corpus
//! ```

use std::path::PathBuf;

use pagespray::analyzer::corpus::{distractor_corpus, full_corpus};
use pagespray::analyzer::RootConfig;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "corpus".into()));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("callsite_corpus.json"), full_corpus().to_json() + "\n")?;
    std::fs::write(dir.join("distractors.json"), distractor_corpus().to_json() + "\n")?;
    let roots = serde_json::to_string_pretty(&RootConfig::default()).expect("config serializes");
    std::fs::write(dir.join("roots.json"), roots + "\n")?;
    Ok(())
}
