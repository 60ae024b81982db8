//! Self-describing binary checkpoints: a versioned JSON header (config
//! echo, vocabularies, label space, shape table, RNG state, epoch) followed
//! by raw little-endian f64 sections for parameters, optimizer
//! accumulators, and normalization statistics. Round trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelBundle, ModelParams};
use crate::tensor::optim::RmsProp;
use crate::tensor::BatchNormState;
use crate::train::TrainState;

const MAGIC: &[u8; 8] = b"RELMTCK\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    word_pos_hi: u64,
    word_pos_lo: u64,
    stream: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: crate::train::TrainConfig,
    vocab_words: Vec<String>,
    vocab_chars: Vec<char>,
    dep_tags: Vec<String>,
    entity_types: Vec<String>,
    relation_types: Vec<String>,
    n_max: usize,
    epoch: usize,
    rng: RngState,
    shapes: Vec<ShapeEntry>,
    norm_channels: usize,
    norm_banks: usize,
}

fn expected_shapes(params: &ModelParams) -> Vec<ShapeEntry> {
    params
        .tensors()
        .iter()
        .map(|t| ShapeEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect()
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let bundle = &state.bundle;
    let word_pos = state.rng.get_word_pos();
    let header = Header {
        config: bundle.config.clone(),
        vocab_words: bundle.vocab.words().to_vec(),
        vocab_chars: bundle.vocab.chars().to_vec(),
        dep_tags: bundle.dep_vocab.tags().to_vec(),
        entity_types: bundle.labels.entity_types().to_vec(),
        relation_types: bundle.labels.relation_types().to_vec(),
        n_max: bundle.n_max,
        epoch: state.epoch,
        rng: RngState {
            seed: state.rng.get_seed(),
            word_pos_hi: (word_pos >> 64) as u64,
            word_pos_lo: word_pos as u64,
            stream: state.rng.get_stream(),
        },
        shapes: expected_shapes(&bundle.params),
        norm_channels: bundle.config.channels,
        norm_banks: bundle.norm_states.len(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::checkpoint(format!("header serialization: {}", e)))?;

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for t in bundle.params.tensors() {
        write_f64s(&mut buf, &t.data);
    }
    for acc in state.optimizer.accumulators() {
        write_f64s(&mut buf, acc);
    }
    for bank in &bundle.norm_states {
        write_f64s(&mut buf, &bank.running_mean);
        write_f64s(&mut buf, &bank.running_var);
        buf.push(bank.initialized as u8);
    }

    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::checkpoint(format!("cannot open {}: {}", path.display(), e)))?
        .read_to_end(&mut bytes)?;
    let mut cursor = 0usize;

    let magic = take(&bytes, &mut cursor, 8, "magic")?;
    if magic != MAGIC {
        return Err(Error::checkpoint("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut cursor, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::checkpoint(format!(
            "format version mismatch: file has {}, this build reads {}",
            version, VERSION
        )));
    }
    let header_len =
        u64::from_le_bytes(take(&bytes, &mut cursor, 8, "header length")?.try_into().unwrap())
            as usize;
    let header_bytes = take(&bytes, &mut cursor, header_len, "header")?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::checkpoint(format!("header: {}", e)))?;

    // Rebuild the skeleton and validate the shape table against it.
    let mut vocab =
        crate::encoder::Vocabulary::from_lists(header.vocab_words.clone(), header.vocab_chars.clone());
    vocab.rebuild_index();
    let dep_vocab = crate::net::DepVocab::from_list(header.dep_tags.clone());
    let labels = crate::codec::LabelSpace::new(
        header.entity_types.clone(),
        header.relation_types.clone(),
    )
    .map_err(|e| Error::checkpoint(format!("label space: {}", e)))?;
    let mut seed_rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::init(
        &header.config,
        &vocab,
        &dep_vocab,
        &labels,
        header.n_max,
        None,
        &mut seed_rng,
    )
    .map_err(|e| Error::checkpoint(format!("parameter skeleton: {}", e)))?;

    let derived = expected_shapes(&params);
    if derived.len() != header.shapes.len() {
        return Err(Error::checkpoint(format!(
            "shape table has {} tensors, configuration implies {}",
            header.shapes.len(),
            derived.len()
        )));
    }
    for (d, h) in derived.iter().zip(&header.shapes) {
        if d.name != h.name || d.shape != h.shape {
            return Err(Error::checkpoint(format!(
                "shape-table mismatch for field {}: file has {:?} ({}), configuration implies {:?}",
                d.name, h.shape, h.name, d.shape
            )));
        }
    }

    for t in params.tensors_mut() {
        let len = t.data.len();
        t.data = read_f64s(&bytes, &mut cursor, len, &t.name)?;
    }
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    let mut optimizer = RmsProp::new(
        &sizes,
        header.config.rmsprop_decay,
        header.config.rmsprop_eps,
    );
    for (i, len) in sizes.iter().enumerate() {
        optimizer.accumulators_mut()[i] = read_f64s(&bytes, &mut cursor, *len, "optimizer")?;
    }
    let mut norm_states = Vec::with_capacity(header.norm_banks);
    for _ in 0..header.norm_banks {
        let mean = read_f64s(&bytes, &mut cursor, header.norm_channels, "norm mean")?;
        let var = read_f64s(&bytes, &mut cursor, header.norm_channels, "norm var")?;
        let flag = take(&bytes, &mut cursor, 1, "norm flag")?[0];
        let mut bank = BatchNormState::new(header.norm_channels, header.config.bn_momentum);
        bank.running_mean = mean;
        bank.running_var = var;
        bank.initialized = flag != 0;
        norm_states.push(bank);
    }
    if cursor != bytes.len() {
        return Err(Error::checkpoint(format!(
            "{} trailing bytes after the last section",
            bytes.len() - cursor
        )));
    }

    let word_pos = ((header.rng.word_pos_hi as u128) << 64) | header.rng.word_pos_lo as u128;
    let mut rng = ChaCha8Rng::from_seed(header.rng.seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);

    Ok(TrainState {
        bundle: ModelBundle {
            config: header.config,
            vocab,
            dep_vocab,
            labels,
            n_max: header.n_max,
            params,
            norm_states,
        },
        optimizer,
        rng,
        epoch: header.epoch,
    })
}

fn write_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn take<'a>(bytes: &'a [u8], cursor: &mut usize, len: usize, what: &str) -> Result<&'a [u8]> {
    if *cursor + len > bytes.len() {
        return Err(Error::checkpoint(format!(
            "truncated file while reading {} ({} bytes needed at offset {}, {} available)",
            what,
            len,
            cursor,
            bytes.len() - *cursor
        )));
    }
    let out = &bytes[*cursor..*cursor + len];
    *cursor += len;
    Ok(out)
}

fn read_f64s(bytes: &[u8], cursor: &mut usize, count: usize, what: &str) -> Result<Vec<f64>> {
    let raw = take(bytes, cursor, count * 8, what)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
