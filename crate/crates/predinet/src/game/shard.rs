//! Dataset shard files.
//!
//! Layout (all integers little-endian):
//!   magic   b"RGV1"
//!   task    u8
//!   set     u8
//!   count   u32
//! then per record:
//!   image   3888 x f32 (36x36x3, row-major)
//!   label   u8
//!   objects u8 count, then per object: shape u16, colour u16, row u8, col u8

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GameError, LabeledExample, ObjectSetId, ObjectSpec, Task};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RGV1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShardHeader {
    pub task: Task,
    pub set: ObjectSetId,
    pub count: u32,
}

pub fn write_shard(
    path: &Path,
    header: ShardHeader,
    examples: &[LabeledExample],
) -> Result<(), GameError> {
    assert_eq!(header.count as usize, examples.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[header.task.id(), header.set.code()])?;
    w.write_all(&header.count.to_le_bytes())?;
    for ex in examples {
        for v in ex.image.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[ex.label as u8, ex.objects.len() as u8])?;
        for o in &ex.objects {
            w.write_all(&(o.shape as u16).to_le_bytes())?;
            w.write_all(&(o.colour as u16).to_le_bytes())?;
            w.write_all(&[o.cell.0 as u8, o.cell.1 as u8])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_shard(path: &Path) -> Result<(ShardHeader, Vec<LabeledExample>), GameError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GameError::Format(format!("bad magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let task = Task::from_id(head[0])
        .ok_or_else(|| GameError::Format(format!("unknown task id {}", head[0])))?;
    let set = match head[1] {
        0 => ObjectSetId::TrainPentominoes,
        1 => ObjectSetId::HoldoutHexominoes,
        2 => ObjectSetId::HoldoutStripes,
        other => return Err(GameError::Format(format!("unknown set id {other}"))),
    };
    let mut cnt = [0u8; 4];
    r.read_exact(&mut cnt)?;
    let count = u32::from_le_bytes(cnt);
    let mut examples = Vec::with_capacity(count as usize);
    let mut imgbuf = vec![0u8; 3888 * 4];
    for _ in 0..count {
        r.read_exact(&mut imgbuf)?;
        let data: Vec<f32> = imgbuf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut lab = [0u8; 2];
        r.read_exact(&mut lab)?;
        let mut objects = Vec::with_capacity(lab[1] as usize);
        for _ in 0..lab[1] {
            let mut ob = [0u8; 6];
            r.read_exact(&mut ob)?;
            objects.push(ObjectSpec {
                shape: u16::from_le_bytes([ob[0], ob[1]]) as usize,
                colour: u16::from_le_bytes([ob[2], ob[3]]) as usize,
                cell: (ob[4] as usize, ob[5] as usize),
            });
        }
        examples.push(LabeledExample {
            image: Tensor::new(vec![36, 36, 3], data),
            label: lab[0] as usize,
            objects,
            task,
        });
    }
    Ok((ShardHeader { task, set, count }, examples))
}

/// Writes one example's image as an 8-bit PNG for inspection.
pub fn dump_png(path: &Path, image: &Tensor) -> Result<(), GameError> {
    let mut buf = image::RgbImage::new(36, 36);
    for y in 0..36 {
        for x in 0..36 {
            let base = (y * 36 + x) * 3;
            let px = [
                (image.data()[base] * 255.0).round().clamp(0.0, 255.0) as u8,
                (image.data()[base + 1] * 255.0).round().clamp(0.0, 255.0) as u8,
                (image.data()[base + 2] * 255.0).round().clamp(0.0, 255.0) as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| GameError::Format(format!("png write: {e}")))?;
    Ok(())
}
