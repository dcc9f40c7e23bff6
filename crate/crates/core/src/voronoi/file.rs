//! Index file: a header followed by one record per image.
//!
//! ```text
//! "VIDX" u16 version
//! u8 kind, u16 L, u16 V (0 for grids), u32 payload width, u32 image count
//! per image: id, absent bitmap, empty bitmap, u32 counts[S],
//!            payload for each stored slot (f32[D] or u8[M])
//! ```
//!
//! `S` is the slot count of the tree or grid. Full indices store every
//! present slot, leaf indices only terminal slots.

use std::fs;
use std::path::Path;

use crate::binio::{bitmap_bits, bitmap_bytes, Reader, Writer};
use crate::clustering::{grid_block_count, TreeShape};
use crate::encoder::ProjectedDescriptor;
use crate::error::{Error, Result};
use crate::pq::PQCode;

use super::{Absent, Cell, LeafIndex, MultiIndex, VoronoiIndex};

const MAGIC: &[u8; 4] = b"VIDX";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum IndexSet {
    Voronoi(Vec<VoronoiIndex>),
    VoronoiQuantized(Vec<VoronoiIndex<PQCode>>),
    Leaves(Vec<LeafIndex>),
    LeavesQuantized(Vec<LeafIndex<PQCode>>),
    Multi(Vec<MultiIndex>),
    MultiQuantized(Vec<MultiIndex<PQCode>>),
}

impl IndexSet {
    pub fn len(&self) -> usize {
        match self {
            IndexSet::Voronoi(v) => v.len(),
            IndexSet::VoronoiQuantized(v) => v.len(),
            IndexSet::Leaves(v) => v.len(),
            IndexSet::LeavesQuantized(v) => v.len(),
            IndexSet::Multi(v) => v.len(),
            IndexSet::MultiQuantized(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_quantized(&self) -> bool {
        matches!(
            self,
            IndexSet::VoronoiQuantized(_) | IndexSet::LeavesQuantized(_) | IndexSet::MultiQuantized(_)
        )
    }

    fn kind(&self) -> u8 {
        match self {
            IndexSet::Voronoi(_) => 0,
            IndexSet::VoronoiQuantized(_) => 1,
            IndexSet::Leaves(_) => 2,
            IndexSet::LeavesQuantized(_) => 3,
            IndexSet::Multi(_) => 4,
            IndexSet::MultiQuantized(_) => 5,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let records: Vec<Record<Stored>> = match self {
            IndexSet::Voronoi(v) => v.iter().map(|i| Record::from_tree(i, Stored::F)).collect(),
            IndexSet::VoronoiQuantized(v) => v.iter().map(|i| Record::from_tree(i, Stored::Q)).collect(),
            IndexSet::Leaves(v) => v.iter().map(|i| Record::from_leaves(i, Stored::V)).collect(),
            IndexSet::LeavesQuantized(v) => v.iter().map(|i| Record::from_leaves(i, Stored::Q)).collect(),
            IndexSet::Multi(v) => v.iter().map(|i| Record::from_grid(i, Stored::F)).collect(),
            IndexSet::MultiQuantized(v) => v.iter().map(|i| Record::from_grid(i, Stored::Q)).collect(),
        };
        let (levels, branching) = match self {
            IndexSet::Voronoi(v) => tree_header(v.iter().map(|i| i.shape))?,
            IndexSet::VoronoiQuantized(v) => tree_header(v.iter().map(|i| i.shape))?,
            IndexSet::Leaves(v) => tree_header(v.iter().map(|i| i.shape))?,
            IndexSet::LeavesQuantized(v) => tree_header(v.iter().map(|i| i.shape))?,
            IndexSet::Multi(v) => (grid_header(v.iter().map(|i| i.levels))?, 0),
            IndexSet::MultiQuantized(v) => (grid_header(v.iter().map(|i| i.levels))?, 0),
        };
        let width = records
            .iter()
            .flat_map(|r| r.payloads.iter().flatten())
            .map(Stored::width)
            .next()
            .unwrap_or(0);
        let slots = if branching == 0 {
            grid_block_count(levels)
        } else {
            TreeShape::new(levels, branching)?.slot_count()
        };

        let mut w = Writer::new(MAGIC, VERSION);
        w.u8(self.kind());
        w.u16(u16::try_from(levels).map_err(|_| Error::OutOfRange("levels".into()))?);
        w.u16(u16::try_from(branching).map_err(|_| Error::OutOfRange("branching".into()))?);
        w.u32(width as u32);
        w.u32(records.len() as u32);
        for r in &records {
            if r.absent.len() != slots {
                return Err(Error::ShapeMismatch(format!("{}: {} slots, expected {slots}", r.id, r.absent.len())));
            }
            w.short_str(&r.id)?;
            w.bytes(&bitmap_bytes(&r.absent));
            let empty: Vec<bool> = r.payloads.iter().map(|p| p.as_ref().is_some_and(Stored::is_empty)).collect();
            w.bytes(&bitmap_bytes(&empty));
            r.counts.iter().for_each(|&c| w.u32(c));
            for p in r.payloads.iter().flatten() {
                if p.width() != width {
                    return Err(Error::DimMismatch { expected: width, found: p.width() });
                }
                p.write(&mut w);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, _) = Reader::open(bytes, MAGIC, "index", VERSION)?;
        let kind = r.u8("kind")?;
        let levels = r.u16("levels")? as usize;
        let branching = r.u16("branching")? as usize;
        let width = r.u32("payload width")? as usize;
        let count = r.u32("image count")? as usize;
        if kind > 5 {
            return Err(Error::Corrupt(format!("index kind {kind}")));
        }
        let grid = kind >= 4;
        let (shape, slots) = if grid {
            if levels == 0 {
                return Err(Error::Corrupt("grid with zero levels".into()));
            }
            (None, grid_block_count(levels))
        } else {
            let s = TreeShape::new(levels, branching).map_err(|e| Error::Corrupt(e.to_string()))?;
            (Some(s), s.slot_count())
        };
        let leaves_only = kind == 2 || kind == 3;
        let payload: PayloadReader = match kind {
            0 | 4 => read_f,
            2 => read_v,
            _ => read_q,
        };
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.short_str("image id")?;
            let map_len = slots.div_ceil(8);
            let absent = bitmap_bits(r.take(map_len, "absent bitmap")?, slots);
            let empty = bitmap_bits(r.take(map_len, "empty bitmap")?, slots);
            let counts = (0..slots).map(|_| r.u32("counts")).collect::<Result<Vec<_>>>()?;
            let stored: Vec<bool> = (0..slots)
                .map(|s| match shape {
                    None => true,
                    Some(sh) if leaves_only => {
                        !absent[s] && !sh.children(s).any(|c| !absent[c])
                    }
                    Some(_) => !absent[s],
                })
                .collect();
            let payloads = (0..slots)
                .map(|s| stored[s].then(|| payload(&mut r, width, empty[s])).transpose())
                .collect::<Result<Vec<_>>>()?;
            records.push(Record { id, absent, counts, payloads });
        }
        r.finish()?;

        let shape = shape.unwrap_or(TreeShape { levels, branching: 0 });
        Ok(match kind {
            0 => IndexSet::Voronoi(records.into_iter().map(|rec| rec.into_tree(shape, width, Stored::into_f)).collect::<Result<_>>()?),
            1 => IndexSet::VoronoiQuantized(records.into_iter().map(|rec| rec.into_tree(shape, width, Stored::into_q)).collect::<Result<_>>()?),
            2 => IndexSet::Leaves(records.into_iter().map(|rec| rec.into_leaves(shape, Stored::into_v)).collect::<Result<_>>()?),
            3 => IndexSet::LeavesQuantized(records.into_iter().map(|rec| rec.into_leaves(shape, Stored::into_q)).collect::<Result<_>>()?),
            4 => IndexSet::Multi(records.into_iter().map(|rec| rec.into_grid(levels, Stored::into_f)).collect::<Result<_>>()?),
            _ => IndexSet::MultiQuantized(records.into_iter().map(|rec| rec.into_grid(levels, Stored::into_q)).collect::<Result<_>>()?),
        })
    }
}

fn tree_header(mut shapes: impl Iterator<Item = TreeShape>) -> Result<(usize, usize)> {
    let Some(first) = shapes.next() else { return Ok((1, 2)) };
    if let Some(other) = shapes.find(|s| *s != first) {
        return Err(Error::ShapeMismatch(format!("mixed tree shapes {first:?} and {other:?}")));
    }
    Ok((first.levels, first.branching))
}

fn grid_header(mut levels: impl Iterator<Item = usize>) -> Result<usize> {
    let Some(first) = levels.next() else { return Ok(1) };
    if let Some(other) = levels.find(|l| *l != first) {
        return Err(Error::ShapeMismatch(format!("mixed grid levels {first} and {other}")));
    }
    Ok(first)
}

/// A payload as it travels through the file.
#[derive(Debug, Clone)]
enum Stored {
    /// Normalized projected descriptor.
    F(ProjectedDescriptor),
    /// Un-normalized terminal vector.
    V(Vec<f64>),
    Q(PQCode),
}

impl Stored {
    fn width(&self) -> usize {
        match self {
            Stored::F(p) => p.values.len(),
            Stored::V(v) => v.len(),
            Stored::Q(c) => c.codes.len(),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Stored::F(p) => p.empty,
            Stored::V(_) => false,
            Stored::Q(c) => c.empty,
        }
    }

    fn write(&self, w: &mut Writer) {
        match self {
            Stored::F(p) => w.f32s(p.values.iter().copied()),
            Stored::V(v) => w.f32s(v.iter().copied()),
            Stored::Q(c) => w.bytes(&c.codes),
        }
    }

    fn into_f(self) -> Result<ProjectedDescriptor> {
        match self {
            Stored::F(p) => Ok(p),
            _ => Err(Error::Corrupt("payload kind".into())),
        }
    }

    fn into_v(self) -> Result<Vec<f64>> {
        match self {
            Stored::V(v) => Ok(v),
            _ => Err(Error::Corrupt("payload kind".into())),
        }
    }

    fn into_q(self) -> Result<PQCode> {
        match self {
            Stored::Q(c) => Ok(c),
            _ => Err(Error::Corrupt("payload kind".into())),
        }
    }
}

type PayloadReader = fn(&mut Reader, usize, bool) -> Result<Stored>;

fn read_f(r: &mut Reader, width: usize, empty: bool) -> Result<Stored> {
    Ok(Stored::F(ProjectedDescriptor { values: r.f64s(width, "descriptor")?, empty }))
}

fn read_v(r: &mut Reader, width: usize, _: bool) -> Result<Stored> {
    Ok(Stored::V(r.f64s(width, "terminal vector")?))
}

fn read_q(r: &mut Reader, width: usize, empty: bool) -> Result<Stored> {
    Ok(Stored::Q(PQCode { codes: r.take(width, "code")?.to_vec(), empty }))
}

struct Record<P> {
    id: String,
    absent: Vec<bool>,
    counts: Vec<u32>,
    payloads: Vec<Option<P>>,
}

impl Record<Stored> {
    fn from_tree<P: Clone>(i: &VoronoiIndex<P>, wrap: fn(P) -> Stored) -> Self {
        Record {
            id: i.image_id.clone(),
            absent: i.absent.clone(),
            counts: i.cells.iter().map(|c| c.point_count).collect(),
            payloads: i
                .cells
                .iter()
                .enumerate()
                .map(|(s, c)| i.is_present(s).then(|| wrap(c.descriptor.clone())))
                .collect(),
        }
    }

    fn from_leaves<P: Clone>(i: &LeafIndex<P>, wrap: fn(P) -> Stored) -> Self {
        Record {
            id: i.image_id.clone(),
            absent: i.absent.clone(),
            counts: i.counts.clone(),
            payloads: i.leaves.iter().map(|l| l.clone().map(wrap)).collect(),
        }
    }

    fn from_grid<P: Clone>(i: &MultiIndex<P>, wrap: fn(P) -> Stored) -> Self {
        Record {
            id: i.image_id.clone(),
            absent: vec![false; i.blocks.len()],
            counts: i.blocks.iter().map(|c| c.point_count).collect(),
            payloads: i.blocks.iter().map(|c| Some(wrap(c.descriptor.clone()))).collect(),
        }
    }

    fn into_tree<P>(self, shape: TreeShape, width: usize, f: impl Fn(Stored) -> Result<P>) -> Result<VoronoiIndex<P>>
    where
        P: Absent,
    {
        let cells = self
            .payloads
            .into_iter()
            .zip(&self.counts)
            .map(|(p, &point_count)| {
                Ok(Cell {
                    descriptor: match p {
                        Some(p) => f(p)?,
                        None => P::absent(width),
                    },
                    point_count,
                })
            })
            .collect::<Result<_>>()?;
        Ok(VoronoiIndex { image_id: self.id, shape, absent: self.absent, cells })
    }

    fn into_leaves<P>(self, shape: TreeShape, f: impl Fn(Stored) -> Result<P>) -> Result<LeafIndex<P>> {
        let leaves = self.payloads.into_iter().map(|p| p.map(&f).transpose()).collect::<Result<_>>()?;
        let idx = LeafIndex { image_id: self.id, shape, absent: self.absent, counts: self.counts, leaves };
        idx.check_shape().map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(idx)
    }

    fn into_grid<P>(self, levels: usize, f: impl Fn(Stored) -> Result<P>) -> Result<MultiIndex<P>> {
        let blocks = self
            .payloads
            .into_iter()
            .zip(&self.counts)
            .map(|(p, &point_count)| {
                let p = p.ok_or_else(|| Error::Corrupt("grid block without payload".into()))?;
                Ok(Cell { descriptor: f(p)?, point_count })
            })
            .collect::<Result<_>>()?;
        Ok(MultiIndex { image_id: self.id, levels, blocks })
    }
}


pub fn save_index(set: &IndexSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, set.to_bytes()?)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<IndexSet> {
    IndexSet::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::fixture;
    use super::super::{quantize_index, quantize_multi, CellEncoder};
    use super::*;
    use crate::clustering::spatial_hkmeans;
    use crate::encoder::Whitener;
    use crate::linalg::round_f32;
    use crate::pq::{pq_train, PqTrainParams};

    fn rounded(mut idx: VoronoiIndex) -> VoronoiIndex {
        idx.cells.iter_mut().for_each(|c| round_f32(&mut c.descriptor.values));
        idx
    }

    #[test]
    fn round_trips_every_kind() {
        let fx = fixture(4, 16, true);
        let enc = CellEncoder::new(&fx.vocab, &fx.pca).unwrap();
        let trees: Vec<_> = fx.images[..6].iter().map(|f| spatial_hkmeans(f, 3, 3, 0).unwrap()).collect();
        let full: Vec<VoronoiIndex> = fx.images[..6]
            .iter()
            .zip(&trees)
            .map(|(f, t)| rounded(enc.encode_tree(f, t).unwrap()))
            .collect();
        let mut leaves: Vec<LeafIndex> = fx.images[..6]
            .iter()
            .zip(&trees)
            .map(|(f, t)| enc.encode_leaves(f, t).unwrap())
            .collect();
        leaves.iter_mut().flat_map(|l| l.leaves.iter_mut().flatten()).for_each(|v| round_f32(v));
        let mut multi: Vec<_> = fx.images[..6].iter().map(|f| enc.encode_grid(f, 3).unwrap()).collect();
        multi.iter_mut().flat_map(|m| m.blocks.iter_mut()).for_each(|c| round_f32(&mut c.descriptor.values));

        let whitener = Whitener::new(&fx.pca, 4).unwrap();
        let training: Vec<_> = full
            .iter()
            .flat_map(|i| i.cells.iter().map(|c| whitener.apply(&c.descriptor).unwrap()))
            .collect();
        let pq = pq_train(&training, &PqTrainParams::new(4, 8, 0)).unwrap();
        let fq: Vec<_> = full.iter().map(|i| quantize_index(i, &whitener, &pq).unwrap()).collect();
        let lq: Vec<_> = fq.iter().map(|i| i.terminal_only()).collect();
        let mq: Vec<_> = multi.iter().map(|i| quantize_multi(i, &whitener, &pq).unwrap()).collect();

        for set in [
            IndexSet::Voronoi(full),
            IndexSet::VoronoiQuantized(fq),
            IndexSet::Leaves(leaves),
            IndexSet::LeavesQuantized(lq),
            IndexSet::Multi(multi),
            IndexSet::MultiQuantized(mq),
            IndexSet::Voronoi(Vec::new()),
        ] {
            let back = IndexSet::from_bytes(&set.to_bytes().unwrap()).unwrap();
            assert_eq!(back, set);
        }
    }

    #[test]
    fn rejects_damage() {
        let fx = fixture(4, 16, true);
        let enc = CellEncoder::new(&fx.vocab, &fx.pca).unwrap();
        let idx = enc.encode_grid(&fx.images[0], 2).unwrap();
        let bytes = IndexSet::Multi(vec![idx]).to_bytes().unwrap();
        assert!(matches!(IndexSet::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(IndexSet::from_bytes(&extra), Err(Error::TrailingBytes(1))));
        let mut bad_kind = bytes.clone();
        bad_kind[6] = 9;
        assert!(matches!(IndexSet::from_bytes(&bad_kind), Err(Error::Corrupt(_))));
    }

    #[test]
    fn mixed_shapes_rejected() {
        let fx = fixture(4, 16, true);
        let enc = CellEncoder::new(&fx.vocab, &fx.pca).unwrap();
        let a = enc.encode_grid(&fx.images[0], 2).unwrap();
        let b = enc.encode_grid(&fx.images[1], 3).unwrap();
        assert!(matches!(IndexSet::Multi(vec![a, b]).to_bytes(), Err(Error::ShapeMismatch(_))));
    }
}
