//! The pluggable-backend seam: base embeddings can come from a file of
//! {clip_id, vector} records instead of the built-in encoder, so real
//! pretrained voiceprints (or a precomputed cache) slot in without
//! touching enrollment, scoring or evaluation.
//!
//! Run with: cargo run --release --example external_embeddings

use voiceprint::embedding::{BaseEncoder, BaseEncoderConfig, BaseSource, ExternalEmbeddings};
use voiceprint::eval::base_embeddings_for;

fn main() -> Result<(), voiceprint::Error> {
    let seed = 2;
    let params = voiceprint::corpus::GeneratorParams {
        num_identities: 4,
        clips_per_pair: 1,
        reals_per_identity: 2,
        clip_duration_s: 2.0,
        ..Default::default()
    };
    let identities = voiceprint::corpus::sample_identities(params.num_identities, seed)?;
    let dir = tempfile::tempdir().map_err(|e| voiceprint::Error::io(".", e))?;
    let manifest = voiceprint::corpus::generate_corpus(&identities, &params, seed, dir.path())?;

    // Compute the table once with the built-in encoder and persist it.
    let encoder = BaseEncoder::new(BaseEncoderConfig::default());
    let table = base_embeddings_for(&manifest, dir.path(), &BaseSource::Encoder(&encoder))?;
    let table_path = dir.path().join("embeddings.ndjson");
    table.save(&table_path)?;
    println!(
        "saved {} base embeddings (dim {}) to {}",
        table.len(),
        table.dim(),
        table_path.display()
    );

    // Reload and use it in place of the encoder.
    let loaded = ExternalEmbeddings::load(&table_path)?;
    let source = BaseSource::Table(&loaded);
    let entry = &manifest.entries[0];
    let clip = voiceprint::audio::read_wav(dir.path().join(&entry.path))?
        .with_source_id(entry.clip_id.clone());
    let from_table = source.base_embedding(&clip)?;
    let from_encoder = BaseSource::Encoder(&encoder).base_embedding(&clip)?;
    let cos = voiceprint::embedding::cosine_similarity(&from_table, &from_encoder)?;
    println!(
        "clip {}: table and encoder embeddings agree (cosine {:.12})",
        entry.clip_id, cos
    );

    // Unknown clips are a hard error, not a silent fallback.
    let stranger = voiceprint::audio::read_wav(dir.path().join(&entry.path))?
        .with_source_id("not-in-the-table");
    match source.base_embedding(&stranger) {
        Err(voiceprint::Error::MissingEmbedding { clip_id }) => {
            println!("lookup of '{clip_id}' correctly failed");
        }
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
