//! Checkpoint bundle: a JSON header plus one RMT tensor per network.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::expert::ExpertParams;
use crate::generation::router::RouterParams;
use crate::generation::schedule::make_schedule;
use crate::generation::{MoEParams, TrainingMeta};
use crate::rmt::Tensor;

pub const HEADER_NAME: &str = "moe.json";

#[derive(Serialize, Deserialize)]
struct ScheduleSpec {
    t_max: usize,
    beta_1: f64,
    beta_t: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    arch_hash: String,
    schedule: ScheduleSpec,
    guidance: f64,
    domain_labels: Vec<String>,
    meta: TrainingMeta,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Hash of the compiled reference architecture, parameterized by the number
/// of domain experts.
pub fn arch_hash(n_experts: usize) -> String {
    let descriptor = format!(
        "denoiser:conv6->32+temb32,res32x2,conv32->1;router:conv2->8,gap,dense8->{n_experts}"
    );
    format!("{:016x}", fnv1a64(descriptor.as_bytes()))
}

pub fn save_checkpoint(moe: &MoEParams, dir: &Path) -> Result<()> {
    moe.validate()?;
    fs::create_dir_all(dir)?;
    let header = Header {
        format: "radiolam-moe/1".into(),
        arch_hash: arch_hash(moe.domain_experts.len()),
        schedule: ScheduleSpec {
            t_max: moe.schedule.t_max,
            beta_1: moe.schedule.betas[0],
            beta_t: *moe.schedule.betas.last().unwrap(),
        },
        guidance: moe.guidance,
        domain_labels: moe.domain_experts.iter().map(|e| e.expert_id.clone()).collect(),
        meta: moe.meta.clone(),
    };
    fs::write(dir.join(HEADER_NAME), serde_json::to_vec_pretty(&header)?)?;
    Tensor::new(vec![moe.shared.params().len()], moe.shared.params().to_vec())?
        .save(&dir.join("shared.rmt"))?;
    for expert in &moe.domain_experts {
        Tensor::new(vec![expert.params().len()], expert.params().to_vec())?
            .save(&dir.join(format!("expert_{}.rmt", expert.expert_id)))?;
    }
    Tensor::new(vec![moe.router.params().len()], moe.router.params().to_vec())?
        .save(&dir.join("router.rmt"))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<MoEParams> {
    let header_path = dir.join(HEADER_NAME);
    if !header_path.exists() {
        return Err(Error::MissingFile(header_path));
    }
    let header: Header = serde_json::from_slice(&fs::read(&header_path)?)?;
    let expected = arch_hash(header.domain_labels.len());
    if header.arch_hash != expected {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint hash {} but compiled architecture is {}",
            header.arch_hash, expected
        )));
    }
    let schedule = make_schedule(header.schedule.t_max, header.schedule.beta_1, header.schedule.beta_t)?;
    let shared = ExpertParams::from_params(
        "shared",
        Tensor::load(&dir.join("shared.rmt"))?.into_data(),
    )?;
    let domain_experts = header
        .domain_labels
        .iter()
        .map(|label| {
            ExpertParams::from_params(
                label.clone(),
                Tensor::load(&dir.join(format!("expert_{label}.rmt")))?.into_data(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let router = RouterParams::from_params(
        header.domain_labels.clone(),
        Tensor::load(&dir.join("router.rmt"))?.into_data(),
    )?;
    let moe = MoEParams {
        shared,
        domain_experts,
        router,
        schedule,
        guidance: header.guidance,
        meta: header.meta,
    };
    moe.validate()?;
    Ok(moe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::schedule::make_schedule;

    fn toy_moe() -> MoEParams {
        MoEParams {
            shared: ExpertParams::init("shared", 1),
            domain_experts: vec![
                ExpertParams::init("rural", 2),
                ExpertParams::init("dense_urban", 3),
            ],
            router: RouterParams::init(vec!["rural".into(), "dense_urban".into()], 4),
            schedule: make_schedule(200, 1e-4, 0.02).unwrap(),
            guidance: 0.8,
            meta: TrainingMeta { seed: 9, ..TrainingMeta::default() },
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let moe = toy_moe();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&moe, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(moe, loaded);
        // Header bytes are stable across a save/load/save cycle.
        let first = fs::read(dir.path().join(HEADER_NAME)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(&loaded, dir2.path()).unwrap();
        let second = fs::read(dir2.path().join(HEADER_NAME)).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn tampered_hash_is_rejected() {
        let moe = toy_moe();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&moe, dir.path()).unwrap();
        let p = dir.path().join(HEADER_NAME);
        let text = fs::read_to_string(&p).unwrap().replace(&arch_hash(2), "deadbeefdeadbeef");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::ArchitectureMismatch(_))));
    }

    #[test]
    fn missing_expert_tensor_is_reported() {
        let moe = toy_moe();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&moe, dir.path()).unwrap();
        fs::remove_file(dir.path().join("expert_rural.rmt")).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::MissingFile(_))));
    }
}
