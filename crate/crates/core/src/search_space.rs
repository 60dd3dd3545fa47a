//! Architecture encoding: genotypes, topology repair, and decoding into cell graphs.
//!
//! A genotype holds 12 topology genes (0 = normal, 1 = downsampling,
//! 2 = upsampling) followed by 12 block genes (0 = identity, 1 = VGG,
//! 2 = ResNet, 3 = Xception, 4 = EfficientNet). Cell levels start at the
//! stem (level 0) and may range over `0..=MAX_LEVEL`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseGenotypeError;

/// Number of cells in every architecture.
pub const N_CELLS: usize = 12;
/// Total number of genes (topology + block).
pub const N_GENES: usize = 2 * N_CELLS;
/// Highest reachable cell level (five levels, `0..=4`).
pub const MAX_LEVEL: u8 = 4;
/// Cardinality of a topology gene.
pub const TOPOLOGY_CARDINALITY: u8 = 3;
/// Cardinality of a block gene.
pub const BLOCK_CARDINALITY: u8 = 5;
/// Channel count after the stem convolution.
pub const DEFAULT_STEM_CHANNELS: u32 = 32;

const NORMAL: u8 = 0;
const DOWN: u8 = 1;
const UP: u8 = 2;

/// One architecture as 24 discrete genes, topology genes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    topology: [u8; N_CELLS],
    blocks: [u8; N_CELLS],
}

impl Genotype {
    /// Builds a genotype, checking every gene against its cardinality.
    pub fn new(topology: [u8; N_CELLS], blocks: [u8; N_CELLS]) -> Result<Self, ParseGenotypeError> {
        if let Some(pos) = topology.iter().position(|&g| g >= TOPOLOGY_CARDINALITY) {
            return Err(ParseGenotypeError::OutOfRange { index: pos, value: topology[pos] as i64 });
        }
        if let Some(pos) = blocks.iter().position(|&g| g >= BLOCK_CARDINALITY) {
            return Err(ParseGenotypeError::OutOfRange { index: N_CELLS + pos, value: blocks[pos] as i64 });
        }
        Ok(Self { topology, blocks })
    }

    pub fn from_genes(genes: &[u8]) -> Result<Self, ParseGenotypeError> {
        if genes.len() != N_GENES {
            return Err(ParseGenotypeError::WrongLength(genes.len()));
        }
        let mut topology = [0; N_CELLS];
        let mut blocks = [0; N_CELLS];
        topology.copy_from_slice(&genes[..N_CELLS]);
        blocks.copy_from_slice(&genes[N_CELLS..]);
        Self::new(topology, blocks)
    }

    /// The all-normal, all-identity genotype.
    pub fn zeros() -> Self {
        Self { topology: [0; N_CELLS], blocks: [0; N_CELLS] }
    }

    pub fn topology(&self) -> &[u8; N_CELLS] {
        &self.topology
    }

    pub fn blocks(&self) -> &[u8; N_CELLS] {
        &self.blocks
    }

    /// Gene at flat index `0..24`.
    pub fn gene(&self, index: usize) -> u8 {
        if index < N_CELLS {
            self.topology[index]
        } else {
            self.blocks[index - N_CELLS]
        }
    }

    /// Sets the gene at flat index `index`.
    ///
    /// Panics if the value is out of range for that gene.
    pub fn set_gene(&mut self, index: usize, value: u8) {
        assert!(value < cardinality(index), "gene {index} value {value} out of range");
        if index < N_CELLS {
            self.topology[index] = value;
        } else {
            self.blocks[index - N_CELLS] = value;
        }
    }

    pub fn genes(&self) -> [u8; N_GENES] {
        let mut out = [0; N_GENES];
        out[..N_CELLS].copy_from_slice(&self.topology);
        out[N_CELLS..].copy_from_slice(&self.blocks);
        out
    }

    pub fn hamming(&self, other: &Genotype) -> usize {
        (0..N_GENES).filter(|&i| self.gene(i) != other.gene(i)).count()
    }
}

/// Cardinality of the gene at flat index `index`.
pub fn cardinality(index: usize) -> u8 {
    if index < N_CELLS {
        TOPOLOGY_CARDINALITY
    } else {
        BLOCK_CARDINALITY
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.genes().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

impl FromStr for Genotype {
    type Err = ParseGenotypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let values = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<i64>().map_err(|_| ParseGenotypeError::NotAnInteger(t.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != N_GENES {
            return Err(ParseGenotypeError::WrongLength(values.len()));
        }
        let mut genes = [0u8; N_GENES];
        for (i, &v) in values.iter().enumerate() {
            if v < 0 || v >= cardinality(i) as i64 {
                return Err(ParseGenotypeError::OutOfRange { index: i, value: v });
            }
            genes[i] = v as u8;
        }
        Self::from_genes(&genes)
    }
}

impl Serialize for Genotype {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.genes().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Genotype {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let genes = Vec::<u8>::deserialize(deserializer)?;
        Genotype::from_genes(&genes).map_err(serde::de::Error::custom)
    }
}

/// Samples a genotype uniformly from the raw (possibly infeasible) space.
pub fn random_genotype<R: Rng + ?Sized>(rng: &mut R) -> Genotype {
    let mut g = Genotype::zeros();
    for i in 0..N_GENES {
        g.set_gene(i, rng.gen_range(0..cardinality(i)));
    }
    g
}

/// Output level of each cell plus the cells whose level move was illegal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelTrace {
    pub levels: Vec<u8>,
    pub infeasible_positions: Vec<usize>,
}

impl LevelTrace {
    pub fn is_feasible(&self) -> bool {
        self.infeasible_positions.is_empty()
    }

    /// Input level of cell `i`, i.e. the output level of cell `i - 1` (stem for `i == 0`).
    pub fn input_level(&self, i: usize) -> u8 {
        if i == 0 {
            0
        } else {
            self.levels[i - 1]
        }
    }
}

/// Traces levels left to right from the stem. An illegal move is recorded and
/// treated as normal so the trace can continue.
pub fn decode_levels(topology: &[u8]) -> LevelTrace {
    let mut level = 0u8;
    let mut levels = Vec::with_capacity(topology.len());
    let mut infeasible_positions = Vec::new();
    for (i, &gene) in topology.iter().enumerate() {
        match gene {
            DOWN if level < MAX_LEVEL => level += 1,
            UP if level > 0 => level -= 1,
            NORMAL => {}
            _ => infeasible_positions.push(i),
        }
        levels.push(level);
    }
    LevelTrace { levels, infeasible_positions }
}

/// Replaces every illegal downsampling/upsampling gene with normal in a single
/// left-to-right pass. Block genes are untouched.
pub fn repair(genotype: &Genotype) -> Genotype {
    let mut topology = genotype.topology;
    repair_topology(&mut topology);
    Genotype { topology, blocks: genotype.blocks }
}

/// In-place topology repair over a slice of any length.
pub fn repair_topology(topology: &mut [u8]) {
    let trace = decode_levels(topology);
    for pos in trace.infeasible_positions {
        topology[pos] = NORMAL;
    }
}

/// Skip edges `(source, target)`: cell `i` takes a skip from the latest cell
/// `j <= i - 2` whose output level equals the input level of `i`.
pub fn derive_skips(trace: &LevelTrace) -> Vec<(usize, usize)> {
    let mut skips = Vec::new();
    for i in 2..trace.levels.len() {
        let wanted = trace.input_level(i);
        if let Some(j) = (0..=i - 2).rev().find(|&j| trace.levels[j] == wanted) {
            skips.push((j, i));
        }
    }
    skips
}

/// Number of feasible topology vectors of length `n`, by dynamic programming
/// over (position, level).
pub fn count_feasible_topologies_of_len(n: usize) -> u64 {
    let levels = MAX_LEVEL as usize + 1;
    let mut ways = vec![0u64; levels];
    ways[0] = 1;
    for _ in 0..n {
        let mut next = vec![0u64; levels];
        for (l, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            next[l] += w;
            if l < levels - 1 {
                next[l + 1] += w;
            }
            if l > 0 {
                next[l - 1] += w;
            }
        }
        ways = next;
    }
    ways.iter().sum()
}

pub fn count_feasible_topologies() -> u64 {
    count_feasible_topologies_of_len(N_CELLS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Normal,
    Down,
    Up,
}

impl CellKind {
    fn from_gene(gene: u8) -> Self {
        match gene {
            DOWN => CellKind::Down,
            UP => CellKind::Up,
            _ => CellKind::Normal,
        }
    }

    fn level_delta(self) -> i8 {
        match self {
            CellKind::Normal => 0,
            CellKind::Down => 1,
            CellKind::Up => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockTag {
    Identity,
    Vgg,
    Resnet,
    Xception,
    Efficientnet,
}

impl BlockTag {
    pub fn from_gene(gene: u8) -> Self {
        match gene {
            0 => BlockTag::Identity,
            1 => BlockTag::Vgg,
            2 => BlockTag::Resnet,
            3 => BlockTag::Xception,
            _ => BlockTag::Efficientnet,
        }
    }
}

/// Resampling operation applied after the main block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Resampling {
    StridedConv { kernel: u8, stride: u8 },
    TransposeConv { kernel: u8, stride: u8 },
}

/// Feature-map shape (channels, width, height).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: u32,
    pub width: u32,
    pub height: u32,
}

impl Shape {
    /// Shape of feature maps at `level`: channels double and spatial dims halve per level.
    pub fn at_level(level: u8, stem_channels: u32, width: u32, height: u32) -> Self {
        Shape {
            channels: stem_channels << level,
            width: width >> level,
            height: height >> level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub index: usize,
    pub kind: CellKind,
    pub block: BlockTag,
    pub in_level: u8,
    pub out_level: u8,
    pub skip_from: Option<usize>,
    pub resampling: Option<Resampling>,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureGraph {
    pub n_cells: usize,
    pub stem_channels: u32,
    pub input_size: [u32; 2],
    pub cells: Vec<CellSpec>,
    pub skips: Vec<(usize, usize)>,
}

/// Repairs `genotype` and decodes it into a cell graph with skip edges and
/// per-cell output shapes.
pub fn build_graph(genotype: &Genotype, stem_channels: u32, width: u32, height: u32) -> ArchitectureGraph {
    let repaired = repair(genotype);
    let trace = decode_levels(repaired.topology());
    let skips = derive_skips(&trace);
    let cells = (0..N_CELLS)
        .map(|i| {
            let kind = CellKind::from_gene(repaired.topology[i]);
            let resampling = match kind {
                CellKind::Normal => None,
                CellKind::Down => Some(Resampling::StridedConv { kernel: 3, stride: 2 }),
                CellKind::Up => Some(Resampling::TransposeConv { kernel: 3, stride: 2 }),
            };
            let out_level = trace.levels[i];
            CellSpec {
                index: i,
                kind,
                block: BlockTag::from_gene(repaired.blocks[i]),
                in_level: trace.input_level(i),
                out_level,
                skip_from: skips.iter().find(|&&(_, t)| t == i).map(|&(s, _)| s),
                resampling,
                shape: Shape::at_level(out_level, stem_channels, width, height),
            }
        })
        .collect();
    ArchitectureGraph {
        n_cells: N_CELLS,
        stem_channels,
        input_size: [width, height],
        cells,
        skips,
    }
}

impl ArchitectureGraph {
    /// Checks the structural invariants: level steps match cell kinds, skips
    /// reach back at least two cells to a same-level source.
    pub fn is_consistent(&self) -> bool {
        let mut prev = 0u8;
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.index != i || cell.in_level != prev || cell.out_level > MAX_LEVEL {
                return false;
            }
            if cell.in_level as i8 + cell.kind.level_delta() != cell.out_level as i8 {
                return false;
            }
            prev = cell.out_level;
        }
        self.skips.iter().all(|&(src, dst)| {
            src + 2 <= dst
                && dst < self.cells.len()
                && self.cells[src].out_level == self.cells[dst].in_level
                && self.cells[dst].skip_from == Some(src)
        })
    }
}

/// Canonical JSON text for a graph. Field order is fixed, so equal graphs
/// always produce identical bytes.
pub fn serialize_graph(graph: &ArchitectureGraph) -> String {
    serde_json::to_string(graph).expect("graph serialization is infallible")
}

pub fn parse_graph(text: &str) -> Result<ArchitectureGraph, serde_json::Error> {
    serde_json::from_str(text)
}
