//! PWG1 grid files: magic, version, C/H/W, channel ids, then channel-major f32 data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthworld::CompleteWorld;

pub const VERSION: u32 = 1;

pub mod channel {
    pub const ROAD_ALPHA: u8 = 0;
    pub const ROAD_BETA: u8 = 1;
    pub const INTENSITY_MEAN: u8 = 2;
    pub const INTENSITY_M2: u8 = 3;
    pub const OBS_COUNT: u8 = 4;
    pub const OBSERVED_MASK: u8 = 5;
    /// Road probability of a dense state (posterior mean, prediction, or truth).
    pub const ROAD_MEAN: u8 = 6;
    pub const OBSTACLE_HEIGHT: u8 = 7;
}

/// Decoded PWG contents.
#[derive(Debug, Clone, PartialEq)]
pub struct PwgData {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<(u8, Vec<f32>)>,
}

impl PwgData {
    pub fn channel(&self, id: u8) -> Result<&[f32]> {
        self.channels
            .iter()
            .find(|(c, _)| *c == id)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::format(format!("PWG file lacks channel {id}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(20 + self.channels.len() * (1 + 4 * plane));
        out.extend_from_slice(b"PWG1");
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.channels.len(), self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend(self.channels.iter().map(|(id, _)| *id));
        for (_, values) in &self.channels {
            assert_eq!(values.len(), plane, "PWG channel length");
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<PwgData> {
        if bytes.len() < 20 || &bytes[..4] != b"PWG1" {
            return Err(Error::format("missing PWG1 magic"));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
        if word(1) != VERSION {
            return Err(Error::format(format!("unsupported PWG version {}", word(1))));
        }
        let (c, h, w) = (word(2) as usize, word(3) as usize, word(4) as usize);
        let plane = h * w;
        let expected = 20 + c + 4 * c * plane;
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "PWG file is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let ids = &bytes[20..20 + c];
        let mut pos = 20 + c;
        let mut channels = Vec::with_capacity(c);
        for &id in ids {
            let values = bytes[pos..pos + 4 * plane]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            pos += 4 * plane;
            channels.push((id, values));
        }
        Ok(PwgData {
            height: h,
            width: w,
            channels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PwgData> {
        Self::decode(&fs::read(path)?)
    }
}

/// Stores a ground-truth world as road (channel 6), intensity and obstacle height.
pub fn world_to_pwg(world: &CompleteWorld) -> PwgData {
    let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let road: Vec<f32> = world.semantic.iter().map(|&s| s as f32).collect();
    PwgData {
        height: world.size,
        width: world.size,
        channels: vec![
            (channel::ROAD_MEAN, road),
            (channel::INTENSITY_MEAN, f(&world.intensity)),
            (channel::OBSTACLE_HEIGHT, f(&world.obstacle_height)),
        ],
    }
}

pub fn write_world(world: &CompleteWorld, path: &Path) -> Result<()> {
    world_to_pwg(world).save(path)
}
