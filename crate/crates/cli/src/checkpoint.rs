//! Checkpoint files for resumable induction runs: versioned key-value text,
//! scalars in their lossless encodings. Loading refuses anything but an
//! exact version match.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use iem_core::combinatorics::PermutationPair;
use iem_core::induction::StandardIem;
use iem_core::scalar::Scalar;
use iem_core::{Error, Result};

pub const VERSION: &str = "iem-checkpoint v1";

pub struct Checkpoint<S: Scalar> {
    pub iem: StandardIem<S>,
    pub step: usize,
    pub zorich: u32,
    pub log_scale: f64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

pub fn save<S: Scalar>(path: &Path, ck: &Checkpoint<S>) -> Result<()> {
    let mut body = String::new();
    body.push_str(VERSION);
    body.push('\n');
    body.push_str(&format!("backend = {}\n", S::BACKEND.name()));
    body.push_str(&format!("pair = {}\n", ck.iem.pi()));
    body.push_str(&format!("step = {}\n", ck.step));
    body.push_str(&format!("zorich = {}\n", ck.zorich));
    body.push_str(&format!("log_scale = {:016x}\n", ck.log_scale.to_bits()));
    body.push_str(&format!("rng_seed = {}\n", ck.rng_seed));
    body.push_str(&format!("rng_word_pos = {}\n", ck.rng_word_pos));
    for (i, l) in ck.iem.lambda().iter().enumerate() {
        body.push_str(&format!("lambda_{i} = {}\n", l.encode()));
    }
    fs::write(path, body).map_err(|e| Error::Malformed(format!("cannot save checkpoint: {e}")))
}

pub fn load<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Malformed(format!("cannot read checkpoint: {e}")))?;
    let mut lines = text.lines();
    let version = lines.next().unwrap_or_default();
    if version != VERSION {
        return Err(Error::Malformed(format!(
            "checkpoint version mismatch: expected {VERSION:?}, found {version:?}"
        )));
    }
    let mut kv = BTreeMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once(" = ") {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| Error::Malformed(format!("checkpoint missing key {k:?}")))
    };
    if get("backend")? != S::BACKEND.name() {
        return Err(Error::Malformed(format!(
            "checkpoint backend {} does not match requested {}",
            get("backend")?,
            S::BACKEND.name()
        )));
    }
    let pi = PermutationPair::parse(get("pair")?)?;
    let d = pi.len();
    let lambda: Vec<S> = (0..d)
        .map(|i| S::decode(get(&format!("lambda_{i}"))?))
        .collect::<Result<_>>()?;
    let parse_u = |k: &str| -> Result<u128> {
        get(k)?
            .parse()
            .map_err(|_| Error::Malformed(format!("bad checkpoint field {k:?}")))
    };
    let log_scale = f64::from_bits(
        u64::from_str_radix(get("log_scale")?, 16)
            .map_err(|_| Error::Malformed("bad checkpoint log_scale".into()))?,
    );
    Ok(Checkpoint {
        iem: StandardIem::new(pi, lambda)?,
        step: parse_u("step")? as usize,
        zorich: parse_u("zorich")? as u32,
        log_scale,
        rng_seed: parse_u("rng_seed")? as u64,
        rng_word_pos: parse_u("rng_word_pos")?,
    })
}
